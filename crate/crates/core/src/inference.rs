//! Plug-in curvature, bias and variability estimates for a local fit, the
//! sandwich covariance, and pointwise confidence intervals.
//!
//! Everything is expressed in the rescaled coordinates `ζ = Hξ`, so the first
//! `p` entries of each covariance are those of `β̂(v)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::baseline::{breslow_all, FittedRisk, StepHazard};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::locfit::{LocalDesign, LocalParams, LocalProblem, Order};
use crate::scalar::Real;
use crate::solver::{CurveEstimate, LocalFit, SINGULAR_EIGEN_RATIO};

/// `Â_n = (1/n) Σ ∫ K_h (Ŝ₂/Ŝ₀ − Ê^⊗2) dN`, which equals `−ℓ″_n`.
pub fn a_hat<T: Real>(ds: &Dataset<T>, design: &LocalDesign<T>, xi: &LocalParams<T>) -> Result<Matrix<T>> {
    Ok(LocalProblem::new(ds, design)?.hessian(xi).scale(-T::one()))
}

/// `B̂_n = (1/nh) Σ ∫ K_h (U* − Ê) dN`, the rescaled score divided by `h`.
/// It vanishes at the maximizer.
pub fn b_hat<T: Real>(ds: &Dataset<T>, design: &LocalDesign<T>, xi: &LocalParams<T>) -> Result<Vec<T>> {
    let h = design.h();
    Ok(LocalProblem::new(ds, design)?.score(xi).into_iter().map(|g| g / h).collect())
}

/// Martingale residual increments `dM̂_ij(w)` at the event times of one member.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberResiduals<T> {
    pub member: usize,
    /// Distinct event times (the Breslow jump times).
    pub times: Vec<T>,
    /// `increments[c][k]`: cluster position `c`, event time `k`.
    pub increments: Vec<Vec<T>>,
}

/// `dM̂_ij(w) = dN_ij(w) − Y_ij(w) exp{β̂(V_ij)ᵀZ_ij + ĝ(V_ij)} dΛ̂_0j(w)` at
/// every Breslow jump time, for every member and cluster.
pub fn residual_increments<T: Real>(
    ds: &Dataset<T>,
    curve: &CurveEstimate<T>,
    baselines: &[StepHazard<T>],
) -> Result<Vec<MemberResiduals<T>>> {
    let risk = FittedRisk::from_curve(ds, curve, false)?;
    residual_increments_with_risk(ds, &risk, baselines)
}

/// [`residual_increments`] for precomputed relative risks.
pub fn residual_increments_with_risk<T: Real>(
    ds: &Dataset<T>,
    risk: &FittedRisk<T>,
    baselines: &[StepHazard<T>],
) -> Result<Vec<MemberResiduals<T>>> {
    check_baselines(ds, baselines)?;
    let mut out = Vec::with_capacity(ds.members());
    for base in baselines {
        let j = base.member;
        let mut increments = vec![vec![T::zero(); base.len()]; ds.n()];
        for &s in ds.member_slots(j)? {
            let c = ds.cluster_of(s);
            let r = &ds.records()[s];
            let rr = risk.risk(s);
            for (k, (&w, &d)) in base.times.iter().zip(&base.increments).enumerate() {
                if w > r.time {
                    break;
                }
                increments[c][k] -= rr * d;
                if w == r.time && ds.counts_as_event(s) {
                    increments[c][k] += T::one();
                }
            }
        }
        out.push(MemberResiduals {
            member: j,
            times: base.times.clone(),
            increments,
        });
    }
    Ok(out)
}

fn check_baselines<T: Real>(ds: &Dataset<T>, baselines: &[StepHazard<T>]) -> Result<()> {
    if baselines.len() != ds.members() || baselines.iter().enumerate().any(|(i, b)| b.member != i + 1) {
        return Err(Error::InvalidArgument(format!(
            "expected one baseline per member index 1..={}",
            ds.members()
        )));
    }
    Ok(())
}

/// `Π̂_n` from explicit residual increments:
/// `(h/n) Σ_i s_i s_iᵀ` with `s_i = Σ_j ∫ K_h(V_ij − v)(U*_ij − Ê_j(w)) dM̂_ij(w)`.
pub fn pi_hat<T: Real>(
    ds: &Dataset<T>,
    design: &LocalDesign<T>,
    xi: &LocalParams<T>,
    residuals: &[MemberResiduals<T>],
) -> Result<Matrix<T>> {
    let problem = LocalProblem::new(ds, design)?;
    let zeta = xi.to_rescaled(design.h());
    let d = problem.dim();
    let mut scores = vec![vec![T::zero(); d]; ds.n()];
    for (stratum, res) in residuals.iter().enumerate() {
        let means = problem.risk_means(stratum, &zeta, &res.times);
        for (slot, k, u) in problem.active(stratum) {
            let c = ds.cluster_of(slot);
            for (t, e) in means.iter().enumerate() {
                let dm = res.increments[c][t];
                if dm == T::zero() {
                    continue;
                }
                let e = e.as_ref().expect("an active record at risk keeps the risk set nonempty");
                for a in 0..d {
                    scores[c][a] += k * (u[a] - e[a]) * dm;
                }
            }
        }
    }
    Ok(outer_sum(&scores, &scores, design.h(), ds.n()))
}

/// `(h/n) Σ_i a_i b_iᵀ`.
pub(crate) fn outer_sum<T: Real>(a: &[Vec<T>], b: &[Vec<T>], h: T, n: usize) -> Matrix<T> {
    let (da, db) = (a.first().map_or(0, Vec::len), b.first().map_or(0, Vec::len));
    let mut m = Matrix::zeros(da, db);
    for (x, y) in a.iter().zip(b) {
        for i in 0..da {
            for j in 0..db {
                m[(i, j)] += x[i] * y[j];
            }
        }
    }
    m.scale(h / T::from_usize(n).unwrap())
}

/// Per-cluster residual scores `s_i = Σ_j ∫ K_h (U*_ij − Ê_j) dM̂_ij` for a
/// prepared local problem, without materializing the increments.
///
/// For each record this is
/// `K_h[Δ(U* − Ê(X)) − r (U* Λ̂(X) − Σ_{w ≤ X} Ê(w) dΛ̂(w))]`.
/// `baselines[s]` is the hazard for the problem's `s`-th stratum.
pub fn cluster_scores<T: Real>(
    ds: &Dataset<T>,
    problem: &LocalProblem<T>,
    zeta: &[T],
    risk: &FittedRisk<T>,
    baselines: &[&StepHazard<T>],
) -> Vec<Vec<T>> {
    let d = problem.dim();
    let mut scores = vec![vec![T::zero(); d]; ds.n()];
    for (stratum, base) in baselines.iter().enumerate() {
        let means: Vec<Vec<T>> = problem
            .risk_means(stratum, zeta, &base.times)
            .into_iter()
            .map(|e| e.unwrap_or_else(|| vec![T::zero(); d]))
            .collect();
        let mut c1 = Vec::with_capacity(base.len());
        let mut acc = vec![T::zero(); d];
        for (e, &dl) in means.iter().zip(&base.increments) {
            for a in 0..d {
                acc[a] += e[a] * dl;
            }
            c1.push(acc.clone());
        }
        for (slot, k, u) in problem.active(stratum) {
            let r = &ds.records()[slot];
            let idx = base.times.partition_point(|&w| w <= r.time);
            if idx == 0 {
                continue;
            }
            let last = idx - 1;
            let lam = base.cumulative[last];
            let rr = risk.risk(slot);
            let s = &mut scores[ds.cluster_of(slot)];
            let event = ds.counts_as_event(slot);
            for a in 0..d {
                let mut v = -rr * (u[a] * lam - c1[last][a]);
                if event {
                    v += u[a] - means[last][a];
                }
                s[a] += k * v;
            }
        }
    }
    scores
}

/// Sandwich pieces at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichParts<T> {
    pub a_hat: Matrix<T>,
    pub pi_hat: Matrix<T>,
    pub b_hat: Vec<T>,
    /// `(nh)⁻¹ Â⁻¹ Π̂ Â⁻¹`, the covariance of `Hξ̂`.
    pub sigma_hat: Matrix<T>,
    /// Square roots of the diagonal of `sigma_hat`: `β̂`, then `hβ̂′`, then `hĝ′`.
    pub se: Vec<T>,
}

impl<T: Real> SandwichParts<T> {
    pub fn se_beta(&self, p: usize) -> &[T] {
        &self.se[..p]
    }
}

/// `Σ̂ = (nh)⁻¹ Â⁻¹ Π̂ Â⁻¹` and its diagonal square roots.
pub fn sandwich<T: Real>(a_hat: &Matrix<T>, pi_hat: &Matrix<T>, n: usize, h: T) -> Result<(Matrix<T>, Vec<T>)> {
    let eig = a_hat.symmetric_eigenvalues();
    let max = eig.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    let min = eig.iter().fold(T::infinity(), |m, &x| m.min(x.abs()));
    if !(max > T::zero()) || min < T::lit(SINGULAR_EIGEN_RATIO) * max {
        return Err(Error::SingularAHat);
    }
    let inv = a_hat.inverse().ok_or(Error::SingularAHat)?;
    let mut sigma = inv
        .matmul(pi_hat)
        .matmul(&inv)
        .scale(T::one() / (T::from_usize(n).unwrap() * h));
    sigma.symmetrize();
    let se = sigma.diagonal().into_iter().map(|x| x.max(T::zero()).sqrt()).collect();
    Ok((sigma, se))
}

/// Sandwich inference for a fit, with residuals from fitted relative risks
/// and per-member baselines (`baselines[j − 1]` for member `j`).
pub fn infer_fit<T: Real>(
    ds: &Dataset<T>,
    fit: &LocalFit<T>,
    design: &LocalDesign<T>,
    risk: &FittedRisk<T>,
    baselines: &[StepHazard<T>],
) -> Result<SandwichParts<T>> {
    check_baselines(ds, baselines)?;
    let problem = LocalProblem::new(ds, design)?;
    let zeta = fit.xi_hat.to_rescaled(design.h());
    let e = problem.evaluate(&zeta, Order::Hessian);
    let n = problem.norm();
    let h = design.h();
    let a_hat = e.hessian.unwrap().scale(-T::one() / n);
    let b_hat = e.score.iter().map(|&g| g / (n * h)).collect();
    let bases: Vec<&StepHazard<T>> = problem.strata_members().map(|j| &baselines[j - 1]).collect();
    let scores = cluster_scores(ds, &problem, &zeta, risk, &bases);
    let pi_hat = outer_sum(&scores, &scores, h, ds.n());
    let (sigma_hat, se) = sandwich(&a_hat, &pi_hat, ds.n(), h)?;
    Ok(SandwichParts {
        a_hat,
        pi_hat,
        b_hat,
        sigma_hat,
        se,
    })
}

/// Fills `curve.se_beta` at every fitted grid point, using relative risks
/// interpolated from `risk_curve` (bridged across gaps) and the matching
/// Breslow baselines. Returns the per-point sandwich pieces.
pub fn infer_curve<T: Real>(
    ds: &Dataset<T>,
    curve: &mut CurveEstimate<T>,
    risk_curve: &CurveEstimate<T>,
) -> Result<Vec<Option<SandwichParts<T>>>> {
    let risk = FittedRisk::from_curve(ds, risk_curve, true)?;
    let baselines = breslow_all(ds, &risk)?;
    let p = curve.p;
    let smoothing = curve.smoothing;
    let parts: Vec<Option<SandwichParts<T>>> = curve
        .points
        .par_iter()
        .map(|pt| {
            pt.fit()
                .and_then(|f| infer_fit(ds, f, &smoothing.at(pt.v), &risk, &baselines).ok())
        })
        .collect();
    curve.se_beta = parts.iter().map(|s| s.as_ref().map(|s| s.se_beta(p).to_vec())).collect();
    Ok(parts)
}

/// Two-sided normal quantile `z_{1−α/2}`.
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {alpha}")));
    }
    Ok(Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - alpha / 2.0))
}

/// `est ± z_{1−α/2}·se`, without bias correction.
pub fn confidence_interval<T: Real>(est: T, se: T, alpha: f64) -> Result<(T, T)> {
    let z = T::lit(normal_quantile(alpha)?);
    Ok((est - z * se, est + z * se))
}

/// Pointwise intervals for each component of `β̂` on a curve with standard
/// errors filled in; `None` at gaps.
pub fn confidence_band<T: Real>(curve: &CurveEstimate<T>, alpha: f64) -> Result<Vec<Option<Vec<(T, T)>>>> {
    let z = T::lit(normal_quantile(alpha)?);
    Ok((0..curve.len())
        .map(|i| match (curve.beta(i), &curve.se_beta[i]) {
            (Some(b), Some(se)) => Some(b.iter().zip(se).map(|(&e, &s)| (e - z * s, e + z * s)).collect()),
            _ => None,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_sandwich() {
        let i3 = Matrix::<f64>::identity(3);
        let (s, se) = sandwich(&i3, &i3, 100, 1.0).unwrap();
        assert!(s.sub(&i3.scale(0.01)).max_abs() < 1e-15);
        assert!(se.iter().all(|&x| (x - 0.1).abs() < 1e-15));
        let sing = Matrix::from_diagonal(&[1.0, 1e-12, 1.0]);
        assert_eq!(sandwich(&sing, &i3, 10, 1.0), Err(Error::SingularAHat));
    }

    #[test]
    fn intervals() {
        let (lo, hi) = confidence_interval(1.0f64, 0.1, 0.05).unwrap();
        assert!((lo - 0.804).abs() < 5e-4 && (hi - 1.196).abs() < 5e-4);
        assert_eq!(confidence_interval(2.0f64, 0.0, 0.05).unwrap(), (2.0, 2.0));
        let (lo, hi) = confidence_interval(0.0f64, 0.2, 0.05).unwrap();
        assert!(lo.exp() < 1.0 && 1.0 < hi.exp());
        assert!((lo.exp() * hi.exp() - 1.0).abs() < 1e-12);
        assert!(normal_quantile(0.0).is_err());
    }
}
