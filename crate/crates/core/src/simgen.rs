//! Clustered failure times from the Clayton–Cuzick model with marginal hazards
//! `λ_0j(t) exp{β(V)ᵀZ + g(V)}`, `λ_0j(t) = 4t³λ*_j`.
//!
//! Each cluster draws from three independent ChaCha8 streams of the scenario
//! seed (covariates, failure uniforms, censoring), selected by
//! `stream = 4·cluster + kind`. Output is therefore independent of worker
//! count, and changing the censoring bound leaves failure times untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SubjectRecord};
use crate::error::{Error, Result};

/// Uniform draws are clamped to `[ε, 1 − ε]` before logs and powers.
pub const UNIFORM_EPS: f64 = 1e-12;

/// Closed-form coefficient and log-risk functions of `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionSpec {
    /// `0.5 v (1.5 − v)`
    Set1Beta1,
    /// `sin 2v`
    Set1Beta2,
    /// `0.5 (e^{v − 1.5} − e^{−1.5})`
    Set1G,
    /// `exp(2v − 1)`
    Set2Beta,
    /// `8 v (1 − v)`
    Set2G,
    Constant(f64),
    Zero,
}

impl FunctionSpec {
    pub fn eval(self, v: f64) -> f64 {
        match self {
            FunctionSpec::Set1Beta1 => 0.5 * v * (1.5 - v),
            FunctionSpec::Set1Beta2 => (2.0 * v).sin(),
            FunctionSpec::Set1G => 0.5 * ((v - 1.5).exp() - (-1.5f64).exp()),
            FunctionSpec::Set2Beta => (2.0 * v - 1.0).exp(),
            FunctionSpec::Set2G => 8.0 * v * (1.0 - v),
            FunctionSpec::Constant(c) => c,
            FunctionSpec::Zero => 0.0,
        }
    }

    pub fn derivative(self, v: f64) -> f64 {
        match self {
            FunctionSpec::Set1Beta1 => 0.75 - v,
            FunctionSpec::Set1Beta2 => 2.0 * (2.0 * v).cos(),
            FunctionSpec::Set1G => 0.5 * (v - 1.5).exp(),
            FunctionSpec::Set2Beta => 2.0 * (2.0 * v - 1.0).exp(),
            FunctionSpec::Set2G => 8.0 - 16.0 * v,
            FunctionSpec::Constant(_) | FunctionSpec::Zero => 0.0,
        }
    }
}

/// Covariate law for `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZDist {
    /// Mean zero, common SD, `corr(Z_l, Z_k) = ρ^{|l−k|}`.
    MvNormal { sd: f64, rho: f64 },
    StdNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    /// Clusters.
    pub n: usize,
    /// Clayton dependence `θ > 0`; Kendall's τ = θ/(2 + θ).
    pub theta: f64,
    /// `λ*_j` per member; its length is the cluster size `J`.
    pub lambda_star: Vec<f64>,
    /// One coefficient function per covariate.
    pub beta_fns: Vec<FunctionSpec>,
    pub g_fn: FunctionSpec,
    /// `V ~ Uniform[lo, hi]`.
    pub v_range: (f64, f64),
    pub z_dist: ZDist,
    /// Censoring `C ~ Uniform(0, c)`.
    pub censor_c: f64,
    pub seed: u64,
}

impl SimScenario {
    /// Varying coefficients `0.5V(1.5 − V)` and `sin 2V`, `V ~ U[0, 3]`,
    /// bivariate normal `Z` with SD 5 and correlation `1/√5`, `J = 3`.
    pub fn set1(n: usize, theta: f64, censor_c: f64, seed: u64) -> Self {
        Self {
            n,
            theta,
            lambda_star: vec![0.2, 1.0, 1.5],
            beta_fns: vec![FunctionSpec::Set1Beta1, FunctionSpec::Set1Beta2],
            g_fn: FunctionSpec::Set1G,
            v_range: (0.0, 3.0),
            z_dist: ZDist::MvNormal {
                sd: 5.0,
                rho: 1.0 / 5f64.sqrt(),
            },
            censor_c,
            seed,
        }
    }

    /// `β(u) = exp(2u − 1)`, `g(u) = 8u(1 − u)`, `V ~ U[0, 1]`, standard
    /// normal `Z`, `J = 3`.
    pub fn set2(n: usize, theta: f64, censor_c: f64, seed: u64) -> Self {
        Self {
            n,
            theta,
            lambda_star: vec![0.2, 1.0, 1.5],
            beta_fns: vec![FunctionSpec::Set2Beta],
            g_fn: FunctionSpec::Set2G,
            v_range: (0.0, 1.0),
            z_dist: ZDist::StdNormal,
            censor_c,
            seed,
        }
    }

    pub fn members(&self) -> usize {
        self.lambda_star.len()
    }

    pub fn p(&self) -> usize {
        self.beta_fns.len()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n == 0 {
            return bad("need at least one cluster".into());
        }
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return bad(format!("theta must be positive, got {}", self.theta));
        }
        if !(self.censor_c > 0.0) {
            return bad(format!("censoring bound c must be positive, got {}", self.censor_c));
        }
        if self.lambda_star.is_empty() || self.lambda_star.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return bad("every lambda_star must be positive".into());
        }
        if self.beta_fns.is_empty() {
            return bad("need at least one coefficient function".into());
        }
        let (lo, hi) = self.v_range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return bad(format!("invalid V range [{lo}, {hi}]"));
        }
        match self.z_dist {
            ZDist::MvNormal { sd, rho } if !(sd > 0.0) || !(rho.abs() < 1.0) => {
                bad(format!("invalid normal covariate law (sd {sd}, rho {rho})"))
            }
            _ => Ok(()),
        }
    }

    /// `β(v)ᵀz + g(v)`.
    pub fn log_risk(&self, v: f64, z: &[f64]) -> f64 {
        self.beta_fns.iter().zip(z).map(|(f, &zk)| f.eval(v) * zk).sum::<f64>() + self.g_fn.eval(v)
    }

    /// `Υ = exp{−β(V)ᵀZ − g(V)}/λ*_j` for member `j` (1-based), so that
    /// `Λ_j(t) = λ*_j t⁴ exp{β(V)ᵀZ + g(V)} = t⁴/Υ`.
    pub fn upsilon(&self, j: usize, v: f64, z: &[f64]) -> f64 {
        (-self.log_risk(v, z)).exp() / self.lambda_star[j - 1]
    }
}

const STREAM_COVARIATES: u64 = 0;
const STREAM_FAILURES: u64 = 1;
const STREAM_CENSORING: u64 = 2;

/// Generator for stream `kind` of cluster `cluster`.
pub fn cluster_rng(seed: u64, cluster: usize, kind: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cluster as u64 * 4 + kind);
    rng
}

fn uniform<R: Rng>(rng: &mut R) -> f64 {
    rng.random::<f64>().clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS)
}

/// `(V, Z)` for the members of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub v: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

pub fn gen_covariates<R: Rng>(scn: &SimScenario, rng: &mut R) -> Covariates {
    let (lo, hi) = scn.v_range;
    let p = scn.p();
    let mut v = Vec::with_capacity(scn.members());
    let mut z = Vec::with_capacity(scn.members());
    for _ in 0..scn.members() {
        v.push(lo + (hi - lo) * rng.random::<f64>());
        let e: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        z.push(match scn.z_dist {
            ZDist::StdNormal => e,
            ZDist::MvNormal { sd, rho } => {
                let s = (1.0 - rho * rho).sqrt();
                let mut out = Vec::with_capacity(p);
                let mut prev = 0.0;
                for (k, &ek) in e.iter().enumerate() {
                    prev = if k == 0 { ek } else { rho * prev + s * ek };
                    out.push(sd * prev);
                }
                out
            }
        });
    }
    Covariates { v, z }
}

/// Sequential conditional inversion of the Clayton survival copula.
///
/// Member `k` gets `S_k^{−θ} = 1 − B + B(1 − w_k)^{−θ/(1 + (k−1)θ)}` with
/// `B = Σ_{i<k} S_i^{−θ} − (k − 2)`, and then `t_k = (Λ_k·Υ_k)^{1/4}` with
/// `Λ_k = −log S_k`.
pub fn failure_from_uniforms(theta: f64, w: &[f64], upsilon: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(w.len());
    for (k, (&wk, &ups)) in w.iter().zip(upsilon).enumerate() {
        let q = 1.0 - wk;
        let cum = if k == 0 {
            -q.ln()
        } else {
            let b = acc - (k as f64 - 1.0);
            let s_neg = 1.0 - b + b * q.powf(-theta / (1.0 + k as f64 * theta));
            s_neg.ln() / theta
        };
        acc += (theta * cum).exp();
        out.push((cum * ups).powf(0.25));
    }
    out
}

pub fn gen_failure_times<R: Rng>(scn: &SimScenario, cov: &Covariates, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..scn.members()).map(|_| uniform(rng)).collect();
    let ups: Vec<f64> = (0..scn.members())
        .map(|j| scn.upsilon(j + 1, cov.v[j], &cov.z[j]))
        .collect();
    failure_from_uniforms(scn.theta, &w, &ups)
}

pub fn gen_censoring<R: Rng>(scn: &SimScenario, rng: &mut R) -> Vec<f64> {
    (0..scn.members()).map(|_| scn.censor_c * uniform(rng)).collect()
}

/// One simulated cluster, including the latent failure and censoring times.
#[derive(Debug, Clone, PartialEq)]
pub struct SimCluster {
    pub covariates: Covariates,
    pub failure: Vec<f64>,
    pub censoring: Vec<f64>,
}

pub fn simulate_cluster(scn: &SimScenario, cluster: usize) -> SimCluster {
    let covariates = gen_covariates(scn, &mut cluster_rng(scn.seed, cluster, STREAM_COVARIATES));
    let failure = gen_failure_times(scn, &covariates, &mut cluster_rng(scn.seed, cluster, STREAM_FAILURES));
    let censoring = gen_censoring(scn, &mut cluster_rng(scn.seed, cluster, STREAM_CENSORING));
    SimCluster {
        covariates,
        failure,
        censoring,
    }
}

pub fn simulate_clusters(scn: &SimScenario) -> Result<Vec<SimCluster>> {
    scn.validate()?;
    Ok((0..scn.n).into_par_iter().map(|i| simulate_cluster(scn, i)).collect())
}

/// Observed data `X = min(T, C)`, `Δ = I(T ≤ C)`, cluster ids `0..n`.
pub fn simulate_dataset(scn: &SimScenario) -> Result<Dataset<f64>> {
    let clusters = simulate_clusters(scn)?;
    let mut records = Vec::with_capacity(scn.n * scn.members());
    for (i, c) in clusters.into_iter().enumerate() {
        for j in 0..scn.members() {
            let (t, cens) = (c.failure[j], c.censoring[j]);
            records.push(SubjectRecord::new(
                i as u64,
                j + 1,
                t.min(cens),
                t <= cens,
                c.covariates.v[j],
                c.covariates.z[j].clone(),
            ));
        }
    }
    Dataset::from_records(records, None)
}

/// Clayton joint survival `{Σ_j S_j^{−θ} − (J − 1)}^{−1/θ}`.
pub fn joint_survival(theta: f64, marginal: &[f64]) -> f64 {
    let s: f64 = marginal.iter().map(|&x| x.powf(-theta)).sum();
    (s - (marginal.len() as f64 - 1.0)).powf(-1.0 / theta)
}

/// Kendall's τ_b by Knight's merge-sort algorithm, `O(n log n)`.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let pairs = |counts: &mut dyn Iterator<Item = u64>| counts.map(|t| t * (t - 1) / 2).sum::<u64>();
    let runs = |v: &[f64]| {
        let mut out = Vec::new();
        let mut k = 0;
        while k < v.len() {
            let mut e = k + 1;
            while e < v.len() && v[e] == v[k] {
                e += 1;
            }
            out.push((e - k) as u64);
            k = e;
        }
        out
    };
    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let tx = pairs(&mut runs(&xs).into_iter());
    let mut txy = 0u64;
    let mut k = 0;
    while k < n {
        let mut e = k + 1;
        while e < n && xs[e] == xs[k] && ys[e] == ys[k] {
            e += 1;
        }
        let t = (e - k) as u64;
        txy += t * (t - 1) / 2;
        k = e;
    }
    let swaps = merge_count(&mut ys);
    let ty = pairs(&mut runs(&ys).into_iter());
    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let num = n0 as f64 - tx as f64 - ty as f64 + txy as f64 - 2.0 * swaps as f64;
    num / (((n0 - tx) as f64) * ((n0 - ty) as f64)).sqrt()
}

fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

/// One-sample Kolmogorov–Smirnov test against the unit exponential:
/// `(D, p)` with the asymptotic Kolmogorov p-value.
pub fn ks_exp1(samples: &[f64]) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-x.max(0.0)).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Probability-integral transforms `Λ_j(T_j) = T_j⁴/Υ_j`, unit exponential
/// under a correct generator.
pub fn marginal_pit(scn: &SimScenario, clusters: &[SimCluster], j: usize) -> Vec<f64> {
    clusters
        .iter()
        .map(|c| c.failure[j - 1].powi(4) / scn.upsilon(j, c.covariates.v[j - 1], &c.covariates.z[j - 1]))
        .collect()
}

/// Empirical against closed-form joint survival at one probe point, with the
/// binomial Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointProbe {
    pub empirical: f64,
    pub expected: f64,
    pub mc_se: f64,
}

/// Compares the empirical frequency of `{Λ_1(T_1) > a_1, Λ_2(T_2) > a_2}`
/// with the copula's `{e^{θa_1} + e^{θa_2} − 1}^{−1/θ}`.
pub fn joint_survival_probe(scn: &SimScenario, clusters: &[SimCluster], a: (f64, f64)) -> JointProbe {
    let l1 = marginal_pit(scn, clusters, 1);
    let l2 = marginal_pit(scn, clusters, 2);
    let hits = l1.iter().zip(&l2).filter(|(&x, &y)| x > a.0 && y > a.1).count();
    let n = clusters.len() as f64;
    let empirical = hits as f64 / n;
    let expected = joint_survival(scn.theta, &[(-a.0).exp(), (-a.1).exp()]);
    JointProbe {
        empirical,
        expected,
        mc_se: (expected * (1.0 - expected) / n).sqrt(),
    }
}
