//! Weighted averages of per-failure-type local estimates.
//!
//! Each member index `k` is fitted on its own (`λ_0k`, `β_k`, `g_k`), the
//! joint covariance of the stacked estimates is estimated from per-cluster
//! score residuals `W_jk`, and the per-type estimates of one coefficient are
//! combined with the variance-minimizing weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{breslow_with_risk, FittedRisk};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{cluster_scores, outer_sum};
use crate::linalg::Matrix;
use crate::locfit::{LocalParams, LocalProblem, Smoothing};
use crate::scalar::Real;
use crate::solver::{fit_curve, maximize_local, CurveEstimate, FitMode, FitOptions, LocalFit, SINGULAR_EIGEN_RATIO};

/// Condition number above which the weight covariance is regularized.
pub const MAX_CONDITION: f64 = 1e10;

/// Default ratio of per-type to pooled bandwidth.
pub const TYPE_BANDWIDTH_RATIO: f64 = 1.5;

/// Per-type fits at a common `v` and bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeStack<T> {
    pub v: T,
    pub smoothing: Smoothing<T>,
    pub p: usize,
    pub n: usize,
    /// Fit (or failure) for member index `k + 1`.
    pub fits: Vec<std::result::Result<LocalFit<T>, Error>>,
    /// `Â_k = −ℓ″_k(ζ̂_k)` for fitted types.
    pub a_hat: Vec<Option<Matrix<T>>>,
    /// `W_jk` for every cluster `j`, once [`TypeStack::attach_scores`] has run.
    pub w: Vec<Option<Vec<Vec<T>>>>,
}

/// Fits every member index separately at `v` (full Newton from zero).
pub fn fit_per_type<T: Real>(
    ds: &Dataset<T>,
    v: T,
    smoothing: &Smoothing<T>,
    opts: &FitOptions<T>,
) -> Result<TypeStack<T>> {
    let opts = opts.with_mode(FitMode::FullNewton);
    let design = smoothing.at(v);
    let fits: Vec<std::result::Result<LocalFit<T>, Error>> = (1..=ds.members())
        .into_par_iter()
        .map(|k| {
            let sub = ds.member_subset(k)?;
            let fit = maximize_local(&sub, &design, &LocalParams::zeros(ds.p()), &opts)?;
            if fit.converged {
                Ok(fit)
            } else {
                Err(Error::NonConvergence { v: v.as_f64() })
            }
        })
        .collect();
    let a_hat = fits
        .iter()
        .map(|f| f.as_ref().ok().map(|f| f.hessian.scale(-T::one())))
        .collect();
    Ok(TypeStack {
        v,
        smoothing: *smoothing,
        p: ds.p(),
        n: ds.n(),
        w: vec![None; fits.len()],
        fits,
        a_hat,
    })
}

/// `W_jk(ξ̂_k)` for every cluster `j`: the type-`k` event term minus its
/// Breslow compensator, with the at-risk subject's own fitted relative risk
/// and the type-`k` risk-set means.
///
/// `sub` is the member-`k` subset (a single-member data set) and `risk` its
/// fitted relative risks.
pub fn w_vectors<T: Real>(
    sub: &Dataset<T>,
    smoothing: &Smoothing<T>,
    fit: &LocalFit<T>,
    risk: &FittedRisk<T>,
) -> Result<Vec<Vec<T>>> {
    if sub.members() != 1 {
        return Err(Error::InvalidArgument("W vectors need a single-type data set".into()));
    }
    let problem = LocalProblem::new(sub, &smoothing.at(fit.v))?;
    let base = breslow_with_risk(sub, 1, risk)?;
    Ok(cluster_scores(sub, &problem, &fit.zeta(), risk, &[&base]))
}

impl<T: Real> TypeStack<T> {
    pub fn types(&self) -> usize {
        self.fits.len()
    }

    /// 0-based indices of types with a fit.
    pub fn fitted_types(&self) -> Vec<usize> {
        (0..self.types()).filter(|&k| self.fits[k].is_ok()).collect()
    }

    pub fn dim(&self) -> usize {
        2 * self.p + 1
    }

    /// Computes `W_jk` for every fitted type. `risks[k]` holds the fitted
    /// relative risks of the member-`(k + 1)` subset.
    pub fn attach_scores(&mut self, ds: &Dataset<T>, risks: &[Option<FittedRisk<T>>]) -> Result<()> {
        if risks.len() != self.types() {
            return Err(Error::InvalidArgument(format!(
                "expected {} per-type risks, got {}",
                self.types(),
                risks.len()
            )));
        }
        let w: Vec<Option<Vec<Vec<T>>>> = (0..self.types())
            .into_par_iter()
            .map(|k| -> Result<Option<Vec<Vec<T>>>> {
                let (Ok(fit), Some(risk)) = (&self.fits[k], &risks[k]) else {
                    return Ok(None);
                };
                let sub = ds.member_subset(k + 1)?;
                Ok(Some(w_vectors(&sub, &self.smoothing, fit, risk)?))
            })
            .collect::<Result<_>>()?;
        self.w = w;
        Ok(())
    }

    fn a_inverse(&self, k: usize) -> Result<Matrix<T>> {
        let a = self.a_hat[k].as_ref().ok_or(Error::SingularAHat)?;
        let eig = a.symmetric_eigenvalues();
        let max = eig.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        let min = eig.iter().fold(T::infinity(), |m, &x| m.min(x.abs()));
        if !(max > T::zero()) || min < T::lit(SINGULAR_EIGEN_RATIO) * max {
            return Err(Error::SingularAHat);
        }
        a.inverse().ok_or(Error::SingularAHat)
    }

    /// `D̂_kl = (h/n) Σ_j W_jk W_jlᵀ` and `Ĝ_kl = Â_k⁻¹ D̂_kl Â_l⁻¹` (0-based types).
    pub fn cross_cov(&self, k: usize, l: usize) -> Result<(Matrix<T>, Matrix<T>)> {
        let missing = || Error::InvalidArgument("scores not attached for a requested type".into());
        let wk = self.w.get(k).and_then(Option::as_ref).ok_or_else(missing)?;
        let wl = self.w.get(l).and_then(Option::as_ref).ok_or_else(missing)?;
        let d = outer_sum(wk, wl, self.smoothing.h, self.n);
        let g = self.a_inverse(k)?.matmul(&d).matmul(&self.a_inverse(l)?);
        Ok((d, g))
    }

    /// `Σ̂* = (nh)⁻¹ (Ĝ_kl)` over the given types, in that order.
    pub fn sigma_star(&self, types: &[usize]) -> Result<Matrix<T>> {
        let d = self.dim();
        let m = types.len();
        let scale = T::one() / (T::from_usize(self.n).unwrap() * self.smoothing.h);
        let mut out = Matrix::zeros(m * d, m * d);
        for (a, &k) in types.iter().enumerate() {
            for (b, &l) in types.iter().enumerate().skip(a) {
                let (_, g) = self.cross_cov(k, l)?;
                for i in 0..d {
                    for j in 0..d {
                        let x = g[(i, j)] * scale;
                        out[(a * d + i, b * d + j)] = x;
                        out[(b * d + j, a * d + i)] = x;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Combines component `component` (0-based entry of `β`) across the
    /// fitted types. Needs at least two fitted types with scores.
    pub fn combine(&self, component: usize) -> Result<WeightedEstimate<T>> {
        if component >= self.p {
            return Err(Error::InvalidArgument(format!(
                "component {component} out of range for p = {}",
                self.p
            )));
        }
        let types: Vec<usize> = self
            .fitted_types()
            .into_iter()
            .filter(|&k| self.w[k].is_some())
            .collect();
        if types.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "weighted estimate needs two fitted types, have {}",
                types.len()
            )));
        }
        let sigma_star = self.sigma_star(&types)?;
        let d = self.dim();
        let m = types.len();
        let sigma_w = Matrix::from_row_major(
            m,
            m,
            (0..m)
                .flat_map(|a| (0..m).map(move |b| (a, b)))
                .map(|(a, b)| sigma_star[(a * d + component, b * d + component)])
                .collect(),
        );
        let estimates: Vec<T> = types
            .iter()
            .map(|&k| self.fits[k].as_ref().unwrap().beta()[component])
            .collect();
        let (weights, equal_fallback) = match optimal_weights(&sigma_w) {
            Ok(c) => (c, false),
            Err(Error::SingularSigma) => (vec![T::one() / T::from_usize(m).unwrap(); m], true),
            Err(e) => return Err(e),
        };
        let value = weights.iter().zip(&estimates).map(|(&c, &b)| c * b).sum();
        let se = sigma_w.quad_form(&weights).max(T::zero()).sqrt();
        Ok(WeightedEstimate {
            component,
            types: types.iter().map(|k| k + 1).collect(),
            weights,
            estimates,
            value,
            se,
            sigma_w,
            equal_fallback,
        })
    }
}

/// Combined estimate of one coefficient component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedEstimate<T> {
    pub component: usize,
    /// Member indices (1-based) that entered the combination.
    pub types: Vec<usize>,
    pub weights: Vec<T>,
    pub estimates: Vec<T>,
    pub value: T,
    pub se: T,
    pub sigma_w: Matrix<T>,
    /// Equal weights were used because the covariance stayed ill-conditioned.
    pub equal_fallback: bool,
}

fn condition<T: Real>(m: &Matrix<T>) -> T {
    let eig = m.symmetric_eigenvalues();
    let (min, max) = (eig[0], eig[eig.len() - 1]);
    if min > T::zero() {
        max / min
    } else {
        T::infinity()
    }
}

/// `c = Σ_w⁻¹e / (eᵀΣ_w⁻¹e)`, renormalized to sum to one. A ridge of
/// `1e-8·trace/J` is added once if the condition number exceeds `1e10`.
pub fn optimal_weights<T: Real>(sigma_w: &Matrix<T>) -> Result<Vec<T>> {
    let m = sigma_w.rows();
    if m == 0 || !sigma_w.is_square() {
        return Err(Error::InvalidArgument("weight covariance must be square and nonempty".into()));
    }
    if !sigma_w.is_finite() {
        return Err(Error::SingularSigma);
    }
    let mut s = sigma_w.clone();
    s.symmetrize();
    if condition(&s) > T::lit(MAX_CONDITION) {
        let ridge = T::lit(1e-8) * s.trace() / T::from_usize(m).unwrap();
        for i in 0..m {
            s[(i, i)] += ridge;
        }
        if condition(&s) > T::lit(MAX_CONDITION) {
            return Err(Error::SingularSigma);
        }
    }
    let x = s.solve_spd(&vec![T::one(); m]).ok_or(Error::SingularSigma)?;
    let total: T = x.iter().copied().sum();
    if !(total.abs() > T::zero()) || !total.is_finite() {
        return Err(Error::SingularSigma);
    }
    Ok(x.into_iter().map(|c| c / total).collect())
}

/// Per-type fitted relative risks from per-type curves on each subset;
/// `None` for types whose curve could not be fitted.
pub fn type_risks<T: Real>(
    ds: &Dataset<T>,
    grid: &[T],
    smoothing: &Smoothing<T>,
    opts: &FitOptions<T>,
) -> Result<Vec<Option<FittedRisk<T>>>> {
    (1..=ds.members())
        .map(|k| {
            let sub = ds.member_subset(k)?;
            Ok(fit_curve(&sub, grid, smoothing, opts, None)
                .ok()
                .and_then(|c: CurveEstimate<T>| FittedRisk::from_curve(&sub, &c, true).ok()))
        })
        .collect()
}

/// Weighted estimates of every `β` component at each grid point; `None`
/// where fewer than two types could be fitted.
pub fn weighted_curve<T: Real>(
    ds: &Dataset<T>,
    grid: &[T],
    smoothing: &Smoothing<T>,
    opts: &FitOptions<T>,
    risks: &[Option<FittedRisk<T>>],
) -> Vec<Option<Vec<WeightedEstimate<T>>>> {
    grid.par_iter()
        .map(|&v| {
            let mut stack = fit_per_type(ds, v, smoothing, opts).ok()?;
            stack.attach_scores(ds, risks).ok()?;
            (0..stack.p).map(|c| stack.combine(c)).collect::<Result<Vec<_>>>().ok()
        })
        .collect()
}
