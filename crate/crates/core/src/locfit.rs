//! The kernel-weighted local pseudo-partial likelihood at a point `v`.
//!
//! A local fit works in the rescaled coordinates `ζ = Hξ`, where
//! `H = diag(1..1 [p], h..h [p+1])`, against covariates `U* = H⁻¹X*` with
//! `X* = (Z, Z(V−v), V−v)`. Since `ζᵀU* = ξᵀX*`, likelihood values agree in
//! both parameterizations; the score and Hessian returned here are with
//! respect to `ζ`.
//!
//! Risk-set sums are accumulated in one pass over each member's records in
//! decreasing time order. Tied times enter the risk set together before any
//! of their events is scored (Breslow convention).

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::{dot, Matrix};
use crate::scalar::Real;

/// Effective-event floor below which a local fit is refused.
pub const DEFAULT_MIN_EFFECTIVE_EVENTS: f64 = 5.0;

/// Local parameters `ξ = (δ, η, γ)`: the value and slope of `β` at `v` and
/// the slope of `g`. The level `g(v)` cancels from the partial likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalParams<T> {
    pub delta: Vec<T>,
    pub eta: Vec<T>,
    pub gamma: T,
}

impl<T: Real> LocalParams<T> {
    pub fn zeros(p: usize) -> Self {
        Self {
            delta: vec![T::zero(); p],
            eta: vec![T::zero(); p],
            gamma: T::zero(),
        }
    }

    pub fn p(&self) -> usize {
        self.delta.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.p() + 1
    }

    /// Unpacks `ξ = (δᵀ, ηᵀ, γ)ᵀ`.
    pub fn from_slice(p: usize, xi: &[T]) -> Result<Self> {
        if xi.len() != 2 * p + 1 {
            return Err(Error::InvalidArgument(format!(
                "local parameter vector has length {}, expected {}",
                xi.len(),
                2 * p + 1
            )));
        }
        Ok(Self {
            delta: xi[..p].to_vec(),
            eta: xi[p..2 * p].to_vec(),
            gamma: xi[2 * p],
        })
    }

    pub fn to_vec(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.delta);
        v.extend_from_slice(&self.eta);
        v.push(self.gamma);
        v
    }

    /// `ζ = Hξ`.
    pub fn to_rescaled(&self, h: T) -> Vec<T> {
        let p = self.p();
        let mut z = self.to_vec();
        for x in &mut z[p..] {
            *x *= h;
        }
        z
    }

    /// Inverse of [`LocalParams::to_rescaled`].
    pub fn from_rescaled(p: usize, h: T, zeta: &[T]) -> Result<Self> {
        let mut xi = zeta.to_vec();
        for x in xi.iter_mut().skip(p) {
            *x /= h;
        }
        Self::from_slice(p, &xi)
    }
}

/// Bandwidth, kernel and effective-event floor shared by every point of a curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothing<T> {
    pub h: T,
    pub kernel: KernelSpec,
    pub min_effective_events: T,
}

impl<T: Real> Smoothing<T> {
    pub fn new(h: T, kernel: KernelSpec) -> Result<Self> {
        if !(h > T::zero()) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
        }
        Ok(Self {
            h,
            kernel,
            min_effective_events: T::lit(DEFAULT_MIN_EFFECTIVE_EVENTS),
        })
    }

    pub fn gaussian(h: T) -> Result<Self> {
        Self::new(h, KernelSpec::Gaussian)
    }

    pub fn with_min_effective_events(mut self, floor: T) -> Self {
        self.min_effective_events = floor;
        self
    }

    pub fn at(&self, v: T) -> LocalDesign<T> {
        LocalDesign { v, smoothing: *self }
    }
}

/// Evaluation point plus smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalDesign<T> {
    pub v: T,
    pub smoothing: Smoothing<T>,
}

impl<T: Real> LocalDesign<T> {
    pub fn new(v: T, h: T, kernel: KernelSpec) -> Result<Self> {
        Ok(Smoothing::new(h, kernel)?.at(v))
    }

    pub fn h(&self) -> T {
        self.smoothing.h
    }

    pub fn kernel_weight(&self, vv: T) -> T {
        self.smoothing.kernel.weight(self.smoothing.h, vv - self.v)
    }

    /// `X* = (Z, Z(V−v), V−v)`.
    pub fn augmented(&self, z: &[T], vv: T) -> Vec<T> {
        let dv = vv - self.v;
        let mut x = Vec::with_capacity(2 * z.len() + 1);
        x.extend_from_slice(z);
        x.extend(z.iter().map(|&zk| zk * dv));
        x.push(dv);
        x
    }

    /// `U* = H⁻¹X*`.
    pub fn rescaled(&self, z: &[T], vv: T) -> Vec<T> {
        let r = (vv - self.v) / self.smoothing.h;
        let mut u = Vec::with_capacity(2 * z.len() + 1);
        u.extend_from_slice(z);
        u.extend(z.iter().map(|&zk| zk * r));
        u.push(r);
        u
    }
}

/// How much of the likelihood's derivative structure to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
}

/// Likelihood pieces summed over clusters, i.e. `n` times the normalized
/// quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T> {
    pub loglik: T,
    pub score: Vec<T>,
    pub hessian: Option<Matrix<T>>,
}

#[derive(Debug, Clone)]
struct Stratum<T> {
    /// Member index (1-based) in the source data.
    member: usize,
    /// Active records (positive kernel weight), decreasing time.
    time: Vec<T>,
    weight: Vec<T>,
    log_weight: Vec<T>,
    event: Vec<bool>,
    slot: Vec<usize>,
    /// Flattened `U*`, `d` entries per record.
    u: Vec<T>,
    /// `[start, end)` runs of equal times.
    groups: Vec<(usize, usize)>,
}

/// The local likelihood at one `v`, prepared for repeated evaluation.
#[derive(Debug, Clone)]
pub struct LocalProblem<T> {
    design: LocalDesign<T>,
    p: usize,
    n: usize,
    strata: Vec<Stratum<T>>,
    effective_events: T,
}

impl<T: Real> LocalProblem<T> {
    /// Prepares the local likelihood over all member indices.
    pub fn new(ds: &Dataset<T>, design: &LocalDesign<T>) -> Result<Self> {
        let members: Vec<usize> = (1..=ds.members()).collect();
        Self::for_members(ds, design, &members)
    }

    /// Prepares the local likelihood restricted to the given member indices.
    pub fn for_members(ds: &Dataset<T>, design: &LocalDesign<T>, members: &[usize]) -> Result<Self> {
        let p = ds.p();
        let d = 2 * p + 1;
        let h = design.h();
        let mut effective = T::zero();
        let mut strata = Vec::with_capacity(members.len());
        for &j in members {
            let slots = ds.member_slots(j)?;
            let mut st = Stratum {
                member: j,
                time: Vec::new(),
                weight: Vec::new(),
                log_weight: Vec::new(),
                event: Vec::new(),
                slot: Vec::new(),
                u: Vec::new(),
                groups: Vec::new(),
            };
            for &s in slots.iter().rev() {
                let r = &ds.records()[s];
                let k = design.kernel_weight(r.v);
                if !(k > T::zero()) {
                    continue;
                }
                let ev = ds.counts_as_event(s);
                if ev {
                    effective += k * h;
                }
                st.time.push(r.time);
                st.weight.push(k);
                st.log_weight.push(k.ln());
                st.event.push(ev);
                st.slot.push(s);
                st.u.extend(design.rescaled(&r.z, r.v));
            }
            debug_assert_eq!(st.u.len(), st.time.len() * d);
            let mut start = 0;
            while start < st.time.len() {
                let mut end = start + 1;
                while end < st.time.len() && st.time[end] == st.time[start] {
                    end += 1;
                }
                st.groups.push((start, end));
                start = end;
            }
            strata.push(st);
        }
        let floor = design.smoothing.min_effective_events;
        if effective <= T::zero() || effective < floor {
            return Err(Error::NoLocalData {
                v: design.v.as_f64(),
                effective_events: effective.as_f64(),
                required: floor.as_f64(),
            });
        }
        Ok(Self {
            design: *design,
            p,
            n: ds.n(),
            strata,
            effective_events: effective,
        })
    }

    pub fn design(&self) -> &LocalDesign<T> {
        &self.design
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn dim(&self) -> usize {
        2 * self.p + 1
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `Σ_events K((V−v)/h)`, the kernel-weighted event count.
    pub fn effective_events(&self) -> T {
        self.effective_events
    }

    /// Number of active (positive-weight) records.
    pub fn active_records(&self) -> usize {
        self.strata.iter().map(|s| s.time.len()).sum()
    }

    /// Raw (cluster-summed) log-likelihood and derivatives at `ζ`.
    pub fn evaluate(&self, zeta: &[T], order: Order) -> Evaluation<T> {
        let d = self.dim();
        assert_eq!(zeta.len(), d, "parameter dimension");
        let mut loglik = T::zero();
        let mut score = vec![T::zero(); d];
        let mut hess = Matrix::zeros(d, d);
        let mut s1 = vec![T::zero(); d];
        let mut s2 = Matrix::zeros(d, d);
        let mut e = vec![T::zero(); d];
        for st in &self.strata {
            let mut m = T::neg_infinity();
            let mut s0 = T::zero();
            s1.iter_mut().for_each(|x| *x = T::zero());
            s2.as_mut_slice().iter_mut().for_each(|x| *x = T::zero());
            for &(start, end) in &st.groups {
                for r in start..end {
                    let u = &st.u[r * d..(r + 1) * d];
                    let a = dot(zeta, u) + st.log_weight[r];
                    if a > m {
                        if s0 > T::zero() {
                            let f = (m - a).exp();
                            s0 *= f;
                            if order >= Order::Gradient {
                                s1.iter_mut().for_each(|x| *x *= f);
                            }
                            if order >= Order::Hessian {
                                s2.as_mut_slice().iter_mut().for_each(|x| *x *= f);
                            }
                        }
                        m = a;
                    }
                    let w = (a - m).exp();
                    s0 += w;
                    if order >= Order::Gradient {
                        for (acc, &uk) in s1.iter_mut().zip(u) {
                            *acc += w * uk;
                        }
                    }
                    if order >= Order::Hessian {
                        for i in 0..d {
                            let wu = w * u[i];
                            for j in i..d {
                                s2[(i, j)] += wu * u[j];
                            }
                        }
                    }
                }
                for r in start..end {
                    if !st.event[r] {
                        continue;
                    }
                    let k = st.weight[r];
                    let u = &st.u[r * d..(r + 1) * d];
                    loglik += k * (dot(zeta, u) - (m + s0.ln()));
                    if order >= Order::Gradient {
                        for i in 0..d {
                            e[i] = s1[i] / s0;
                            score[i] += k * (u[i] - e[i]);
                        }
                    }
                    if order >= Order::Hessian {
                        for i in 0..d {
                            for j in i..d {
                                hess[(i, j)] -= k * (s2[(i, j)] / s0 - e[i] * e[j]);
                            }
                        }
                    }
                }
            }
        }
        let hessian = (order >= Order::Hessian).then(|| {
            for i in 0..d {
                for j in 0..i {
                    hess[(i, j)] = hess[(j, i)];
                }
            }
            hess
        });
        Evaluation {
            loglik,
            score,
            hessian,
        }
    }

    /// Normalized `ℓ_n` at `ξ`.
    pub fn loglik(&self, xi: &LocalParams<T>) -> T {
        self.evaluate(&xi.to_rescaled(self.design.h()), Order::Value).loglik / self.norm()
    }

    /// Normalized score with respect to `ζ`, at `ξ`.
    pub fn score(&self, xi: &LocalParams<T>) -> Vec<T> {
        let n = self.norm();
        self.evaluate(&xi.to_rescaled(self.design.h()), Order::Gradient)
            .score
            .into_iter()
            .map(|g| g / n)
            .collect()
    }

    /// Normalized Hessian with respect to `ζ`, at `ξ`.
    pub fn hessian(&self, xi: &LocalParams<T>) -> Matrix<T> {
        let n = self.norm();
        self.evaluate(&xi.to_rescaled(self.design.h()), Order::Hessian)
            .hessian
            .unwrap()
            .scale(T::one() / n)
    }

    pub(crate) fn norm(&self) -> T {
        T::from_usize(self.n).unwrap()
    }

    /// Kernel-weighted risk-set means `Ê_j(w) = Ŝ₁/Ŝ₀` of `U*` for the given
    /// stratum at each of `times` (ascending). `None` where no active record
    /// is at risk.
    pub fn risk_means(&self, stratum: usize, zeta: &[T], times: &[T]) -> Vec<Option<Vec<T>>> {
        let d = self.dim();
        let st = &self.strata[stratum];
        let mut out = vec![None; times.len()];
        let mut m = T::neg_infinity();
        let mut s0 = T::zero();
        let mut s1 = vec![T::zero(); d];
        let mut next = 0;
        for (ti, &t) in times.iter().enumerate().rev() {
            while next < st.time.len() && st.time[next] >= t {
                let u = &st.u[next * d..(next + 1) * d];
                let a = dot(zeta, u) + st.log_weight[next];
                if a > m {
                    if s0 > T::zero() {
                        let f = (m - a).exp();
                        s0 *= f;
                        s1.iter_mut().for_each(|x| *x *= f);
                    }
                    m = a;
                }
                let w = (a - m).exp();
                s0 += w;
                for (acc, &uk) in s1.iter_mut().zip(u) {
                    *acc += w * uk;
                }
                next += 1;
            }
            if s0 > T::zero() {
                out[ti] = Some(s1.iter().map(|&x| x / s0).collect());
            }
        }
        out
    }

    pub(crate) fn strata_members(&self) -> impl Iterator<Item = usize> + '_ {
        self.strata.iter().map(|s| s.member)
    }

    /// Active records of a stratum as `(slot, kernel weight, U*)`.
    pub(crate) fn active(&self, stratum: usize) -> impl Iterator<Item = (usize, T, &[T])> + '_ {
        let d = self.dim();
        let st = &self.strata[stratum];
        (0..st.time.len()).map(move |r| (st.slot[r], st.weight[r], &st.u[r * d..(r + 1) * d]))
    }
}

/// `Ŝ_njk(w, v)` for `k = 0, 1, 2` at one member index and time.
#[derive(Debug, Clone, PartialEq)]
pub struct SHat<T> {
    pub s0: T,
    pub s1: Vec<T>,
    pub s2: Matrix<T>,
}

/// `Ŝ_njk(w,v) = n⁻¹ Σ_i K_h(V_ij − v) Y_ij(w) exp(ξᵀX*_ij) (U*_ij)^⊗k`.
pub fn s_hat<T: Real>(
    ds: &Dataset<T>,
    design: &LocalDesign<T>,
    j: usize,
    w: T,
    xi: &LocalParams<T>,
) -> Result<SHat<T>> {
    let d = 2 * ds.p() + 1;
    let xiv = xi.to_vec();
    let mut out = SHat {
        s0: T::zero(),
        s1: vec![T::zero(); d],
        s2: Matrix::zeros(d, d),
    };
    for &s in ds.member_slots(j)? {
        let r = &ds.records()[s];
        if !r.at_risk(w) {
            continue;
        }
        let k = design.kernel_weight(r.v);
        if k == T::zero() {
            continue;
        }
        let c = k * dot(&xiv, &design.augmented(&r.z, r.v)).exp();
        let u = design.rescaled(&r.z, r.v);
        out.s0 += c;
        for i in 0..d {
            out.s1[i] += c * u[i];
            for l in 0..d {
                out.s2[(i, l)] += c * u[i] * u[l];
            }
        }
    }
    let n = T::from_usize(ds.n()).unwrap();
    out.s0 /= n;
    out.s1.iter_mut().for_each(|x| *x /= n);
    out.s2 = out.s2.scale(T::one() / n);
    Ok(out)
}

/// `ℓ_n(ξ, τ)`.
pub fn local_loglik<T: Real>(ds: &Dataset<T>, design: &LocalDesign<T>, xi: &LocalParams<T>) -> Result<T> {
    Ok(LocalProblem::new(ds, design)?.loglik(xi))
}

/// Gradient of `ℓ_n` with respect to `ζ = Hξ`.
pub fn local_score<T: Real>(
    ds: &Dataset<T>,
    design: &LocalDesign<T>,
    xi: &LocalParams<T>,
) -> Result<Vec<T>> {
    Ok(LocalProblem::new(ds, design)?.score(xi))
}

/// Hessian of `ℓ_n` with respect to `ζ = Hξ`; negative semidefinite.
pub fn local_hessian<T: Real>(
    ds: &Dataset<T>,
    design: &LocalDesign<T>,
    xi: &LocalParams<T>,
) -> Result<Matrix<T>> {
    Ok(LocalProblem::new(ds, design)?.hessian(xi))
}
