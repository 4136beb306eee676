//! Independent oracles: direct double- and triple-loop sums in `X*`
//! coordinates, finite differences, brute-force maximization and a classical
//! Cox fit. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use varcoef_hazard::{Dataset, SubjectRecord};

/// Options for [`random_dataset`].
#[derive(Debug, Clone, Copy)]
pub struct Gen {
    pub n: usize,
    pub members: usize,
    pub p: usize,
    pub censor_prob: f64,
    /// Probability that a (cluster, member) record is absent.
    pub absent_prob: f64,
    /// Round times to this grid to create ties; zero keeps them continuous.
    pub tie_grid: f64,
    pub beta: f64,
}

impl Default for Gen {
    fn default() -> Self {
        Self {
            n: 8,
            members: 2,
            p: 1,
            censor_prob: 0.3,
            absent_prob: 0.0,
            tie_grid: 0.0,
            beta: 0.5,
        }
    }
}

/// Exponential failure times with hazard `exp(βz₁ + sin 2V)`, `V ~ U[0, 1]`.
pub fn random_dataset(seed: u64, g: Gen) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for c in 0..g.n {
        for j in 1..=g.members {
            if j > 1 && rng.random::<f64>() < g.absent_prob {
                continue;
            }
            let v: f64 = rng.random();
            let z: Vec<f64> = (0..g.p).map(|_| rng.sample(StandardNormal)).collect();
            let eta = g.beta * z[0] + (2.0 * v).sin();
            let u: f64 = rng.random::<f64>().max(1e-12);
            let mut t = -u.ln() / eta.exp();
            if g.tie_grid > 0.0 {
                t = ((t / g.tie_grid).ceil() * g.tie_grid).max(g.tie_grid);
            }
            let event = rng.random::<f64>() >= g.censor_prob;
            records.push(SubjectRecord::new(100 + c as u64, j, t, event, v, z));
        }
    }
    Dataset::from_records(records, None).unwrap()
}

pub fn gauss_kh(h: f64, u: f64) -> f64 {
    (-(u / h).powi(2) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt() / h
}

/// Present records as `(slot, record)`.
pub fn present(ds: &Dataset<f64>) -> Vec<(usize, &SubjectRecord<f64>)> {
    ds.records().iter().enumerate().filter(|(s, _)| ds.is_present(*s)).collect()
}

pub fn is_event(ds: &Dataset<f64>, r: &SubjectRecord<f64>) -> bool {
    r.event && r.time <= ds.tau()
}

pub fn xstar(z: &[f64], vv: f64, v: f64) -> Vec<f64> {
    let d = vv - v;
    let mut x = z.to_vec();
    x.extend(z.iter().map(|&zk| zk * d));
    x.push(d);
    x
}

/// `H` diagonal.
pub fn h_diag(p: usize, h: f64) -> Vec<f64> {
    let mut d = vec![1.0; p];
    d.extend(std::iter::repeat_n(h, p + 1));
    d
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Kernel-weighted risk-set sums in `X*` coordinates at time `w`.
fn risk_sums(ds: &Dataset<f64>, j: usize, w: f64, v: f64, h: f64, xi: &[f64]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let d = xi.len();
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![vec![0.0; d]; d];
    for (_, r) in present(ds) {
        if r.member != j || r.time < w {
            continue;
        }
        let x = xstar(&r.z, r.v, v);
        let c = gauss_kh(h, r.v - v) * dotp(xi, &x).exp();
        s0 += c;
        for a in 0..d {
            s1[a] += c * x[a];
            for b in 0..d {
                s2[a][b] += c * x[a] * x[b];
            }
        }
    }
    (s0, s1, s2)
}

/// `ℓ_n(ξ)` by direct summation over events and their risk sets.
pub fn loglik(ds: &Dataset<f64>, v: f64, h: f64, xi: &[f64]) -> f64 {
    let mut total = 0.0;
    for (_, r) in present(ds) {
        if !is_event(ds, r) {
            continue;
        }
        let (s0, _, _) = risk_sums(ds, r.member, r.time, v, h, xi);
        let x = xstar(&r.z, r.v, v);
        total += gauss_kh(h, r.v - v) * (dotp(xi, &x) - s0.ln());
    }
    total / ds.n() as f64
}

/// Gradient with respect to `ξ`.
pub fn score_xi(ds: &Dataset<f64>, v: f64, h: f64, xi: &[f64]) -> Vec<f64> {
    let d = xi.len();
    let mut g = vec![0.0; d];
    for (_, r) in present(ds) {
        if !is_event(ds, r) {
            continue;
        }
        let (s0, s1, _) = risk_sums(ds, r.member, r.time, v, h, xi);
        let x = xstar(&r.z, r.v, v);
        let k = gauss_kh(h, r.v - v);
        for a in 0..d {
            g[a] += k * (x[a] - s1[a] / s0);
        }
    }
    g.iter().map(|x| x / ds.n() as f64).collect()
}

/// Hessian with respect to `ξ`.
pub fn hessian_xi(ds: &Dataset<f64>, v: f64, h: f64, xi: &[f64]) -> Vec<Vec<f64>> {
    let d = xi.len();
    let mut m = vec![vec![0.0; d]; d];
    for (_, r) in present(ds) {
        if !is_event(ds, r) {
            continue;
        }
        let (s0, s1, s2) = risk_sums(ds, r.member, r.time, v, h, xi);
        let k = gauss_kh(h, r.v - v);
        for a in 0..d {
            for b in 0..d {
                m[a][b] -= k * (s2[a][b] / s0 - s1[a] * s1[b] / (s0 * s0));
            }
        }
    }
    m.iter().map(|row| row.iter().map(|x| x / ds.n() as f64).collect()).collect()
}

/// Gradient with respect to `ζ = Hξ`: `H⁻¹ ∇_ξ`.
pub fn score_zeta(ds: &Dataset<f64>, v: f64, h: f64, xi: &[f64]) -> Vec<f64> {
    let hd = h_diag(ds.p(), h);
    score_xi(ds, v, h, xi).iter().zip(&hd).map(|(g, s)| g / s).collect()
}

/// Hessian with respect to `ζ`: `H⁻¹ ∇²_ξ H⁻¹`.
pub fn hessian_zeta(ds: &Dataset<f64>, v: f64, h: f64, xi: &[f64]) -> Vec<Vec<f64>> {
    let hd = h_diag(ds.p(), h);
    hessian_xi(ds, v, h, xi)
        .iter()
        .enumerate()
        .map(|(a, row)| row.iter().enumerate().map(|(b, x)| x / (hd[a] * hd[b])).collect())
        .collect()
}

/// `Ŝ_njk(w)` for `k = 0, 1, 2` in `U*` coordinates.
pub fn s_hat(ds: &Dataset<f64>, j: usize, w: f64, v: f64, h: f64, xi: &[f64]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let hd = h_diag(ds.p(), h);
    let (s0, s1, s2) = risk_sums(ds, j, w, v, h, xi);
    let n = ds.n() as f64;
    let d = xi.len();
    (
        s0 / n,
        (0..d).map(|a| s1[a] / hd[a] / n).collect(),
        (0..d).map(|a| (0..d).map(|b| s2[a][b] / (hd[a] * hd[b]) / n).collect()).collect(),
    )
}

/// Central differences of `f` at `x` with step `eps`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += eps;
            b[i] -= eps;
            (f(&a) - f(&b)) / (2.0 * eps)
        })
        .collect()
}

/// Breslow increments of member `j` at its distinct event times, with
/// relative risks `exp(log_risk(record))`.
pub fn breslow(ds: &Dataset<f64>, j: usize, log_risk: &dyn Fn(&SubjectRecord<f64>) -> f64) -> Vec<(f64, f64)> {
    let mut times: Vec<f64> = present(ds)
        .into_iter()
        .filter(|(_, r)| r.member == j && is_event(ds, r))
        .map(|(_, r)| r.time)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
        .into_iter()
        .map(|w| {
            let mut d = 0.0;
            let mut denom = 0.0;
            for (_, r) in present(ds) {
                if r.member != j || r.time < w {
                    continue;
                }
                denom += log_risk(r).exp();
                if r.time == w && is_event(ds, r) {
                    d += 1.0;
                }
            }
            (w, d / denom)
        })
        .collect()
}

/// Per-cluster `Σ_j ∫ K_h (U* − Ê_j) dM̂_ij` over the given members, with
/// `dM̂ = dN − Y r dΛ̂` and Breslow `dΛ̂` from the same relative risks.
pub fn cluster_scores(
    ds: &Dataset<f64>,
    members: &[usize],
    v: f64,
    h: f64,
    xi: &[f64],
    log_risk: &dyn Fn(&SubjectRecord<f64>) -> f64,
) -> Vec<Vec<f64>> {
    let d = xi.len();
    let hd = h_diag(ds.p(), h);
    let ids = ds.cluster_ids().to_vec();
    let mut out = vec![vec![0.0; d]; ids.len()];
    for &j in members {
        let jumps = breslow(ds, j, log_risk);
        for (_, r) in present(ds) {
            if r.member != j {
                continue;
            }
            let c = ids.iter().position(|&id| id == r.cluster_id).unwrap();
            let k = gauss_kh(h, r.v - v);
            let u: Vec<f64> = xstar(&r.z, r.v, v).iter().zip(&hd).map(|(x, s)| x / s).collect();
            let rr = log_risk(r).exp();
            for &(w, dl) in &jumps {
                if r.time < w {
                    continue;
                }
                let dm = if r.time == w && is_event(ds, r) { 1.0 } else { 0.0 } - rr * dl;
                let (s0, s1, _) = risk_sums(ds, j, w, v, h, xi);
                for a in 0..d {
                    out[c][a] += k * (u[a] - s1[a] / hd[a] / s0) * dm;
                }
            }
        }
    }
    out
}

/// `(h/n) Σ_i a_i b_iᵀ`.
pub fn outer_mean(a: &[Vec<f64>], b: &[Vec<f64>], h: f64, n: usize) -> Vec<Vec<f64>> {
    let (da, db) = (a[0].len(), b[0].len());
    let mut m = vec![vec![0.0; db]; da];
    for (x, y) in a.iter().zip(b) {
        for i in 0..da {
            for j in 0..db {
                m[i][j] += x[i] * y[j];
            }
        }
    }
    m.iter().map(|r| r.iter().map(|v| v * h / n as f64).collect()).collect()
}

/// Maximizes a concave `f` over `R^d` by a lattice scan over
/// `[−radius, radius]^d` followed by a shrinking compass search.
pub fn brute_force_max(f: impl Fn(&[f64]) -> f64, d: usize, radius: f64, steps: usize, tol: f64) -> Vec<f64> {
    let axis: Vec<f64> = (0..=steps).map(|i| -radius + 2.0 * radius * i as f64 / steps as f64).collect();
    let mut best = vec![0.0; d];
    let mut best_val = f64::NEG_INFINITY;
    let mut idx = vec![0usize; d];
    loop {
        let x: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
        let val = f(&x);
        if val > best_val {
            best_val = val;
            best = x;
        }
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] <= steps {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == d {
            break;
        }
    }
    let mut step = 2.0 * radius / steps as f64;
    while step > tol {
        let mut improved = false;
        for k in 0..d {
            for sign in [1.0, -1.0] {
                let mut x = best.clone();
                x[k] += sign * step;
                let val = f(&x);
                if val > best_val {
                    best_val = val;
                    best = x;
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    best
}

/// Classical Cox partial log-likelihood for a single covariate with Breslow
/// ties, over all present records of member 1.
pub fn cox_loglik(ds: &Dataset<f64>, beta: f64) -> f64 {
    let recs = present(ds);
    recs.iter()
        .filter(|(_, r)| is_event(ds, r))
        .map(|(_, r)| {
            let denom: f64 = recs.iter().filter(|(_, l)| l.time >= r.time).map(|(_, l)| (beta * l.z[0]).exp()).sum();
            beta * r.z[0] - denom.ln()
        })
        .sum()
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        }
    }
    0.5 * (lo + hi)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Gaussian elimination with partial pivoting.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &y)| r.iter().copied().chain([y]).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (m[row][n] - s) / m[row][row];
    }
    x
}
