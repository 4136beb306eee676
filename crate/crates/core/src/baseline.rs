//! Breslow cumulative baseline hazards and their kernel-smoothed derivatives.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::dot;
use crate::scalar::Real;
use crate::solver::CurveEstimate;

/// Fitted relative risk `exp{β̂(V)ᵀZ + ĝ(V)}` for every slot of a data set.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedRisk<T> {
    log_risk: Vec<T>,
}

impl<T: Real> FittedRisk<T> {
    /// Evaluates `f(record) = β̂(V)ᵀZ + ĝ(V)` on every present record.
    pub fn from_fn<F>(ds: &Dataset<T>, mut f: F) -> Result<Self>
    where
        F: FnMut(&SubjectRecord<T>) -> Result<T>,
    {
        let mut log_risk = vec![T::zero(); ds.records().len()];
        for (s, r) in ds.records().iter().enumerate() {
            if ds.is_present(s) {
                log_risk[s] = f(r)?;
            }
        }
        Ok(Self { log_risk })
    }

    /// Constant coefficients `β` and `g`.
    pub fn constant(ds: &Dataset<T>, beta: &[T], g: T) -> Result<Self> {
        if beta.len() != ds.p() {
            return Err(Error::InvalidArgument(format!(
                "coefficient vector has length {}, data has p = {}",
                beta.len(),
                ds.p()
            )));
        }
        Self::from_fn(ds, |r| Ok(dot(beta, &r.z) + g))
    }

    /// Linear interpolation of a fitted curve at each record's `V`. With
    /// `bridge` false, a record whose `V` falls next to a gap is an error.
    pub fn from_curve(ds: &Dataset<T>, curve: &CurveEstimate<T>, bridge: bool) -> Result<Self> {
        let lookup = curve.lookup(bridge);
        Self::from_fn(ds, |r| match lookup.at(r.v) {
            Ok((beta, g)) => Ok(dot(&beta, &r.z) + g),
            Err(Error::CurveUnavailable { v, record }) => Err(Error::CurveUnavailable {
                v,
                record: format!("cluster {} member {}, {record}", r.cluster_id, r.member),
            }),
            Err(e) => Err(e),
        })
    }

    pub fn log_risk(&self, slot: usize) -> T {
        self.log_risk[slot]
    }

    pub fn risk(&self, slot: usize) -> T {
        self.log_risk[slot].exp()
    }
}

/// Right-continuous step function `Λ̂_0j` with one jump per distinct event time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepHazard<T> {
    pub member: usize,
    pub times: Vec<T>,
    pub increments: Vec<T>,
    pub cumulative: Vec<T>,
}

impl<T: Real> StepHazard<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `Λ̂(t)`.
    pub fn at(&self, t: T) -> T {
        match self.times.partition_point(|&w| w <= t) {
            0 => T::zero(),
            k => self.cumulative[k - 1],
        }
    }

    /// `Λ̂(τ)`, the total mass.
    pub fn total(&self) -> T {
        self.cumulative.last().copied().unwrap_or(T::zero())
    }
}

/// Breslow estimator for member `j` under the fitted coefficients in `curve`.
pub fn breslow<T: Real>(ds: &Dataset<T>, j: usize, curve: &CurveEstimate<T>) -> Result<StepHazard<T>> {
    ds.member_slots(j)?;
    let risk = FittedRisk::from_curve(ds, curve, false)?;
    breslow_with_risk(ds, j, &risk)
}

/// Breslow estimator for member `j`:
/// `dΛ̂(w) = d(w) / Σ_l Y_lj(w) exp{β̂(V_lj)ᵀZ_lj + ĝ(V_lj)}`.
pub fn breslow_with_risk<T: Real>(ds: &Dataset<T>, j: usize, risk: &FittedRisk<T>) -> Result<StepHazard<T>> {
    let slots = ds.member_slots(j)?;
    let mut times = Vec::new();
    let mut increments = Vec::new();
    let mut denom = T::zero();
    let mut k = slots.len();
    while k > 0 {
        let t = ds.records()[slots[k - 1]].time;
        let mut events = 0usize;
        while k > 0 && ds.records()[slots[k - 1]].time == t {
            let s = slots[k - 1];
            denom += risk.risk(s);
            if ds.counts_as_event(s) {
                events += 1;
            }
            k -= 1;
        }
        if events > 0 {
            if !(denom > T::zero()) || !denom.is_finite() {
                return Err(Error::InvalidData(format!(
                    "degenerate risk set at event time {t} for member {j}"
                )));
            }
            times.push(t);
            increments.push(T::from_usize(events).unwrap() / denom);
        }
    }
    times.reverse();
    increments.reverse();
    let mut acc = T::zero();
    let cumulative = increments
        .iter()
        .map(|&d| {
            acc += d;
            acc
        })
        .collect();
    Ok(StepHazard {
        member: j,
        times,
        increments,
        cumulative,
    })
}

/// Breslow estimators for every member index.
pub fn breslow_all<T: Real>(ds: &Dataset<T>, risk: &FittedRisk<T>) -> Result<Vec<StepHazard<T>>> {
    (1..=ds.members()).map(|j| breslow_with_risk(ds, j, risk)).collect()
}

/// `λ̂_0j(t) = Σ_k W_b(t − x_k) ΔΛ̂_0j(x_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothHazard<T> {
    pub step: StepHazard<T>,
    pub kernel: KernelSpec,
    pub b: T,
}

impl<T: Real> SmoothHazard<T> {
    pub fn new(step: StepHazard<T>, kernel: KernelSpec, b: T) -> Result<Self> {
        if !(b > T::zero()) || !b.is_finite() {
            return Err(Error::InvalidArgument(format!("smoothing bandwidth must be positive, got {b}")));
        }
        Ok(Self { step, kernel, b })
    }

    /// Bandwidth `b = (last − first event time)/20`.
    pub fn default_bandwidth(step: &StepHazard<T>) -> Result<T> {
        match (step.times.first(), step.times.last()) {
            (Some(&a), Some(&z)) if z > a => Ok((z - a) / T::lit(20.0)),
            _ => Err(Error::InvalidArgument(
                "need at least two distinct event times for the default smoothing bandwidth".into(),
            )),
        }
    }

    pub fn with_default_bandwidth(step: StepHazard<T>, kernel: KernelSpec) -> Result<Self> {
        let b = Self::default_bandwidth(&step)?;
        Self::new(step, kernel, b)
    }

    pub fn eval(&self, t: T) -> T {
        self.step
            .times
            .iter()
            .zip(&self.step.increments)
            .map(|(&x, &d)| self.kernel.weight(self.b, t - x) * d)
            .sum()
    }

    /// True within `b` of the origin, where the estimate lacks a boundary
    /// correction.
    pub fn near_origin(&self, t: T) -> bool {
        t < self.b
    }
}
