//! Newton maximization of the local likelihood, the one-step estimator, and
//! curve assembly over a grid with anchor propagation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};
use crate::locfit::{LocalDesign, LocalParams, LocalProblem, Order, Smoothing};
use crate::scalar::Real;

/// Relative eigenvalue gap below which a Hessian counts as singular.
pub const SINGULAR_EIGEN_RATIO: f64 = 1e-10;

/// Default number of grid points for a curve.
pub const DEFAULT_GRID_SIZE: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    FullNewton,
    OneStep,
    KStep(usize),
}

impl FitMode {
    fn steps(self) -> Option<usize> {
        match self {
            FitMode::FullNewton => None,
            FitMode::OneStep => Some(1),
            FitMode::KStep(k) => Some(k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions<T> {
    pub max_iterations: usize,
    /// Bound on the Euclidean norm of the normalized score in `ζ`.
    pub gradient_tolerance: T,
    pub step_halving_max: usize,
    pub mode: FitMode,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            gradient_tolerance: T::lit(1e-8),
            step_halving_max: 20,
            mode: FitMode::FullNewton,
        }
    }
}

impl<T: Real> FitOptions<T> {
    pub fn with_mode(mut self, mode: FitMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !(self.gradient_tolerance > T::zero()) {
            return Err(Error::InvalidArgument("gradient_tolerance must be positive".into()));
        }
        if self.mode == FitMode::KStep(0) {
            return Err(Error::InvalidArgument("k-step mode needs k >= 1".into()));
        }
        Ok(())
    }
}

/// Result of a local fit at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFit<T> {
    pub v: T,
    pub h: T,
    pub xi_hat: LocalParams<T>,
    /// Normalized Hessian of `ℓ_n` in `ζ` coordinates at `xi_hat`.
    pub hessian: Matrix<T>,
    /// Normalized score in `ζ` coordinates at `xi_hat`.
    pub score: Vec<T>,
    pub loglik: T,
    pub converged: bool,
    pub iterations: usize,
    pub effective_events: T,
}

impl<T: Real> LocalFit<T> {
    pub fn beta(&self) -> &[T] {
        &self.xi_hat.delta
    }

    pub fn gprime(&self) -> T {
        self.xi_hat.gamma
    }

    pub fn score_norm(&self) -> T {
        norm(&self.score)
    }

    /// `ζ̂ = Hξ̂`.
    pub fn zeta(&self) -> Vec<T> {
        self.xi_hat.to_rescaled(self.h)
    }

    fn from_state(problem: &LocalProblem<T>, state: &State<T>, converged: bool, iterations: usize) -> Result<Self> {
        let n = problem.norm();
        let design = problem.design();
        Ok(Self {
            v: design.v,
            h: design.h(),
            xi_hat: LocalParams::from_rescaled(problem.p(), design.h(), &state.zeta)?,
            hessian: state.hessian.scale(T::one() / n),
            score: state.score.iter().map(|&g| g / n).collect(),
            loglik: state.loglik / n,
            converged,
            iterations,
            effective_events: problem.effective_events(),
        })
    }
}

struct State<T> {
    zeta: Vec<T>,
    loglik: T,
    score: Vec<T>,
    hessian: Matrix<T>,
}

impl<T: Real> State<T> {
    fn at(problem: &LocalProblem<T>, zeta: Vec<T>) -> Self {
        let e = problem.evaluate(&zeta, Order::Hessian);
        Self {
            zeta,
            loglik: e.loglik,
            score: e.score,
            hessian: e.hessian.expect("hessian requested"),
        }
    }

    fn normalized_score_norm(&self, n: T) -> T {
        norm(&self.score) / n
    }
}

/// Newton direction `(−H)⁻¹g`, with a growing ridge when `−H` is not
/// numerically positive definite.
fn newton_direction<T: Real>(hessian: &Matrix<T>, score: &[T]) -> Vec<T> {
    let neg = hessian.scale(-T::one());
    if let Some(step) = neg.solve_spd(score) {
        if step.iter().all(|x| x.is_finite()) {
            return step;
        }
    }
    let d = score.len();
    let scale = neg.diagonal().iter().fold(T::zero(), |m, &x| m.max(x.abs())).max(T::lit(1e-300));
    let mut ridge = scale * T::lit(1e-10);
    for _ in 0..30 {
        let mut m = neg.clone();
        for i in 0..d {
            m[(i, i)] += ridge;
        }
        if let Some(step) = m.solve_spd(score) {
            if step.iter().all(|x| x.is_finite()) {
                return step;
            }
        }
        ridge *= T::lit(10.0);
    }
    score.iter().map(|&g| g / scale).collect()
}

fn newton<T: Real>(problem: &LocalProblem<T>, zeta0: Vec<T>, opts: &FitOptions<T>) -> Result<LocalFit<T>> {
    let n = problem.norm();
    let slack = T::lit(8.0) * T::epsilon();
    let mut state = State::at(problem, zeta0);
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        if state.normalized_score_norm(n) <= opts.gradient_tolerance {
            return LocalFit::from_state(problem, &state, true, iterations);
        }
        let step = newton_direction(&state.hessian, &state.score);
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..=opts.step_halving_max {
            let trial: Vec<T> = state.zeta.iter().zip(&step).map(|(&z, &s)| z + t * s).collect();
            let next = State::at(problem, trial);
            if next.loglik.is_finite() && next.loglik >= state.loglik - slack * (state.loglik.abs() + n) {
                accepted = Some(next);
                break;
            }
            t *= T::lit(0.5);
        }
        iterations += 1;
        match accepted {
            Some(next) => state = next,
            None => break,
        }
    }
    let converged = state.normalized_score_norm(n) <= opts.gradient_tolerance;
    LocalFit::from_state(problem, &state, converged, iterations)
}

/// Maximizes `ℓ_n` at `design.v` by Newton–Raphson with step halving.
///
/// Returns the last iterate with `converged == false` when the iteration
/// budget runs out.
pub fn maximize_local<T: Real>(
    ds: &Dataset<T>,
    design: &LocalDesign<T>,
    init: &LocalParams<T>,
    opts: &FitOptions<T>,
) -> Result<LocalFit<T>> {
    opts.validate()?;
    let problem = LocalProblem::new(ds, design)?;
    maximize_problem(&problem, init, opts)
}

/// [`maximize_local`] on a prepared problem.
pub fn maximize_problem<T: Real>(
    problem: &LocalProblem<T>,
    init: &LocalParams<T>,
    opts: &FitOptions<T>,
) -> Result<LocalFit<T>> {
    check_dim(problem, init)?;
    newton(problem, init.to_rescaled(problem.design().h()), opts)
}

fn check_dim<T: Real>(problem: &LocalProblem<T>, init: &LocalParams<T>) -> Result<()> {
    if init.p() != problem.p() || init.eta.len() != problem.p() {
        return Err(Error::InvalidArgument(format!(
            "initial value has p = {}, data has p = {}",
            init.p(),
            problem.p()
        )));
    }
    Ok(())
}

/// `ζ₁ = ζ₀ − {ℓ″_n(ζ₀)}⁻¹ ℓ′_n(ζ₀)`, `k` times.
fn newton_steps<T: Real>(problem: &LocalProblem<T>, zeta0: Vec<T>, k: usize, opts: &FitOptions<T>) -> Result<LocalFit<T>> {
    let n = problem.norm();
    let mut state = State::at(problem, zeta0);
    for _ in 0..k {
        let eig = state.hessian.symmetric_eigenvalues();
        let max = eig.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        let min = eig.iter().fold(T::infinity(), |m, &x| m.min(x.abs()));
        if !(max > T::zero()) || min < T::lit(SINGULAR_EIGEN_RATIO) * max {
            return Err(Error::SingularHessian {
                v: problem.design().v.as_f64(),
            });
        }
        let delta = state
            .hessian
            .solve(&state.score)
            .ok_or(Error::SingularHessian {
                v: problem.design().v.as_f64(),
            })?;
        let next: Vec<T> = state.zeta.iter().zip(&delta).map(|(&z, &d)| z - d).collect();
        state = State::at(problem, next);
    }
    let converged = state.normalized_score_norm(n) <= opts.gradient_tolerance;
    LocalFit::from_state(problem, &state, converged, k)
}

/// One Newton update from `init`.
pub fn one_step<T: Real>(ds: &Dataset<T>, design: &LocalDesign<T>, init: &LocalParams<T>) -> Result<LocalFit<T>> {
    k_step(ds, design, init, 1)
}

/// `k` successive Newton updates from `init`, without step control.
pub fn k_step<T: Real>(
    ds: &Dataset<T>,
    design: &LocalDesign<T>,
    init: &LocalParams<T>,
    k: usize,
) -> Result<LocalFit<T>> {
    let problem = LocalProblem::new(ds, design)?;
    check_dim(&problem, init)?;
    newton_steps(&problem, init.to_rescaled(design.h()), k, &FitOptions::default())
}

/// Fits at `design.v` according to `opts.mode`, starting from `init`.
pub fn fit_point<T: Real>(
    ds: &Dataset<T>,
    design: &LocalDesign<T>,
    init: &LocalParams<T>,
    opts: &FitOptions<T>,
) -> Result<LocalFit<T>> {
    match opts.mode.steps() {
        None => maximize_local(ds, design, init, opts),
        Some(k) => k_step(ds, design, init, k),
    }
}

/// Where a grid point's starting value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSource {
    Zero,
    Neighbor(usize),
}

/// How a grid point was fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    FullNewton,
    Update(usize),
    /// Full Newton used because the update was unavailable (singular Hessian
    /// or no earlier success to start from).
    FallbackNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GridFit<T> {
    Fitted(LocalFit<T>),
    /// Newton ran out of iterations; kept for diagnostics but not used.
    Unconverged(LocalFit<T>),
    Skipped(Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint<T> {
    pub v: T,
    pub outcome: GridFit<T>,
    pub init: InitSource,
    pub method: FitMethod,
}

impl<T: Real> GridPoint<T> {
    pub fn fit(&self) -> Option<&LocalFit<T>> {
        match &self.outcome {
            GridFit::Fitted(f) => Some(f),
            _ => None,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.fit().is_some()
    }
}

/// Coefficient curves on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEstimate<T> {
    pub smoothing: Smoothing<T>,
    pub mode: FitMode,
    pub p: usize,
    pub grid: Vec<T>,
    pub points: Vec<GridPoint<T>>,
    /// `ĝ`, zero at `g_anchor`; `None` beyond an unbridged gap.
    pub g_hat: Vec<Option<T>>,
    pub g_anchor: usize,
    /// Grid indices in the order they were fitted.
    pub fitting_order: Vec<usize>,
    pub anchors: Vec<usize>,
    /// Pointwise standard errors of `β̂`, filled by inference.
    pub se_beta: Vec<Option<Vec<T>>>,
}

impl<T: Real> CurveEstimate<T> {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn h(&self) -> T {
        self.smoothing.h
    }

    pub fn beta(&self, i: usize) -> Option<&[T]> {
        self.points[i].fit().map(|f| f.beta())
    }

    pub fn gprime(&self, i: usize) -> Option<T> {
        self.points[i].fit().map(|f| f.gprime())
    }

    pub fn gprime_hat(&self) -> Vec<Option<T>> {
        (0..self.len()).map(|i| self.gprime(i)).collect()
    }

    pub fn fitted_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_fitted()).count()
    }

    pub fn gaps(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.points[i].is_fitted()).collect()
    }

    /// Recomputes `ĝ` with or without bridging across gaps.
    pub fn reintegrate(&mut self, bridge: bool) -> Result<()> {
        self.g_hat = integrate_gprime(&self.grid, &self.gprime_hat(), self.g_anchor, bridge)?;
        Ok(())
    }

    /// Linear interpolation of `β̂` and `ĝ` at arbitrary `v`.
    pub fn lookup(&self, bridge: bool) -> CoefficientLookup<'_, T> {
        CoefficientLookup { curve: self, bridge }
    }
}

/// Interpolates fitted coefficients between grid points.
///
/// Strict lookups need both bracketing grid points fitted. Bridged lookups
/// interpolate across gaps and hold the outermost fitted values constant
/// between them and the grid ends.
#[derive(Debug, Clone, Copy)]
pub struct CoefficientLookup<'a, T> {
    curve: &'a CurveEstimate<T>,
    bridge: bool,
}

impl<T: Real> CoefficientLookup<'_, T> {
    /// `(β̂(v), ĝ(v))`.
    pub fn at(&self, v: T) -> Result<(Vec<T>, T)> {
        let grid = &self.curve.grid;
        let (lo, hi) = (grid[0], grid[grid.len() - 1]);
        if !(v >= lo && v <= hi) {
            return Err(Error::CurveUnavailable {
                v: v.as_f64(),
                record: format!("outside the curve grid [{lo}, {hi}]"),
            });
        }
        let k = grid.partition_point(|&w| w <= v).clamp(1, grid.len().max(2) - 1);
        let (a, b) = if grid.len() == 1 { (0, 0) } else { (k - 1, k) };
        let available = |i: usize| self.curve.beta(i).is_some() && self.curve.g_hat[i].is_some();
        let (a, b) = if available(a) && available(b) {
            (a, b)
        } else if self.bridge {
            let left = (0..=a).rev().find(|&i| available(i));
            let right = (b..grid.len()).find(|&i| available(i));
            match (left, right) {
                (Some(l), Some(r)) => (l, r),
                (Some(l), None) => (l, l),
                (None, Some(r)) => (r, r),
                (None, None) => return Err(Error::NoAvailablePoints),
            }
        } else {
            return Err(Error::CurveUnavailable {
                v: v.as_f64(),
                record: format!("grid gap between {} and {}", grid[a], grid[b]),
            });
        };
        let (ba, bb) = (self.curve.beta(a).unwrap(), self.curve.beta(b).unwrap());
        let (ga, gb) = (self.curve.g_hat[a].unwrap(), self.curve.g_hat[b].unwrap());
        if a == b {
            return Ok((ba.to_vec(), ga));
        }
        let t = ((v - grid[a]) / (grid[b] - grid[a])).max(T::zero()).min(T::one());
        let beta = ba.iter().zip(bb).map(|(&x, &y)| x + t * (y - x)).collect();
        Ok((beta, ga + t * (gb - ga)))
    }
}

/// Cumulative trapezoid of `ĝ′` over `grid`, zero at `anchor`.
///
/// Without `bridge` a missing derivative leaves `ĝ` missing from that point
/// outward; with it, `ĝ′` is linearly interpolated across gaps. Points beyond
/// the outermost available derivative stay missing either way.
pub fn integrate_gprime<T: Real>(
    grid: &[T],
    gprime: &[Option<T>],
    anchor: usize,
    bridge: bool,
) -> Result<Vec<Option<T>>> {
    if grid.len() != gprime.len() {
        return Err(Error::InvalidArgument(format!(
            "grid has {} points but g' has {}",
            grid.len(),
            gprime.len()
        )));
    }
    if anchor >= grid.len() {
        return Err(Error::InvalidArgument(format!("anchor index {anchor} outside grid")));
    }
    if gprime[anchor].is_none() {
        return Err(Error::InvalidArgument(format!("g' missing at anchor index {anchor}")));
    }
    let half = T::lit(0.5);
    let mut g = vec![None; grid.len()];
    g[anchor] = Some(T::zero());
    for dir in [1isize, -1] {
        let mut last = anchor;
        let mut i = anchor as isize + dir;
        while i >= 0 && (i as usize) < grid.len() {
            let iu = i as usize;
            if let Some(d) = gprime[iu] {
                let gl = g[last].unwrap();
                let dl = gprime[last].unwrap();
                if (iu as isize - last as isize).abs() > 1 {
                    if !bridge {
                        break;
                    }
                    let mut k = last as isize + dir;
                    while k != i {
                        let ku = k as usize;
                        let t = (grid[ku] - grid[last]) / (grid[iu] - grid[last]);
                        let dk = dl + t * (d - dl);
                        g[ku] = Some(gl + (grid[ku] - grid[last]) * (dl + dk) * half);
                        k += dir;
                    }
                }
                g[iu] = Some(gl + (grid[iu] - grid[last]) * (dl + d) * half);
                last = iu;
            } else if !bridge {
                break;
            }
            i += dir;
        }
    }
    Ok(g)
}

/// `n_grid` equally spaced points spanning `[lo, hi]`.
pub fn linspace<T: Real>(lo: T, hi: T, n_grid: usize) -> Vec<T> {
    match n_grid {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / T::from_usize(n_grid - 1).unwrap();
            (0..n_grid)
                .map(|i| if i + 1 == n_grid { hi } else { lo + step * T::from_usize(i).unwrap() })
                .collect()
        }
    }
}

/// Interior grid on `[min V + h, max V − h]`.
pub fn default_grid<T: Real>(ds: &Dataset<T>, h: T, n_grid: usize) -> Result<Vec<T>> {
    let (lo, hi) = ds.v_range();
    if !(lo + h < hi - h) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth {h} leaves no interior grid within the exposure range [{lo}, {hi}]"
        )));
    }
    Ok(linspace(lo + h, hi - h, n_grid))
}

/// Grid spanning the full exposure range `[min V, max V]`.
pub fn support_grid<T: Real>(ds: &Dataset<T>, n_grid: usize) -> Result<Vec<T>> {
    let (lo, hi) = ds.v_range();
    if !(lo < hi) {
        return Err(Error::InvalidArgument("exposure V is constant".into()));
    }
    Ok(linspace(lo, hi, n_grid))
}

/// Anchors at the 10th, 30th, 50th, 70th and 90th percentiles of grid
/// position; indices `19, 59, 99, 139, 179` for 200 points.
pub fn default_anchors(n_grid: usize) -> Vec<usize> {
    if n_grid == 0 {
        return Vec::new();
    }
    let mut a: Vec<usize> = [1, 3, 5, 7, 9]
        .iter()
        .map(|&m| ((m * n_grid) / 10).saturating_sub(1).min(n_grid - 1))
        .collect();
    a.dedup();
    a
}

/// Segment boundaries between consecutive anchors: point `i` belongs to
/// anchor `k + 1` when `i >= bounds[k]`.
fn segment_bounds(anchors: &[usize]) -> Vec<usize> {
    anchors.windows(2).map(|w| (w[0] + w[1]).div_ceil(2)).collect()
}

fn classify<T: Real>(result: Result<LocalFit<T>>) -> GridFit<T> {
    match result {
        Ok(f) if f.converged => GridFit::Fitted(f),
        Ok(f) => GridFit::Unconverged(f),
        Err(e) => GridFit::Skipped(e),
    }
}

fn fit_newton_point<T: Real>(
    ds: &Dataset<T>,
    design: &LocalDesign<T>,
    init: &LocalParams<T>,
    opts: &FitOptions<T>,
) -> GridFit<T> {
    classify(maximize_local(ds, design, init, opts))
}

struct Segment<T> {
    indices: Vec<usize>,
    points: Vec<GridPoint<T>>,
}

fn propagate_segment<T: Real>(
    ds: &Dataset<T>,
    grid: &[T],
    smoothing: &Smoothing<T>,
    opts: &FitOptions<T>,
    anchor: usize,
    lo: usize,
    hi: usize,
) -> Segment<T> {
    let p = ds.p();
    let zero = LocalParams::zeros(p);
    let mut indices = Vec::with_capacity(hi - lo);
    let mut points = Vec::with_capacity(hi - lo);
    let walks: [Vec<usize>; 2] = [(anchor..hi).collect(), (lo..anchor).rev().collect()];
    for walk in walks {
        let mut seed: Option<(usize, LocalParams<T>)> = points
            .iter()
            .zip(&indices)
            .filter_map(|(pt, &i): (&GridPoint<T>, &usize)| pt.fit().map(|f| (i, f.xi_hat.clone())))
            .min_by_key(|(i, _)| i.abs_diff(anchor.saturating_sub(1)));
        for i in walk {
            let design = smoothing.at(grid[i]);
            let point = match &seed {
                None => GridPoint {
                    v: grid[i],
                    outcome: fit_newton_point(ds, &design, &zero, opts),
                    init: InitSource::Zero,
                    method: if i == anchor { FitMethod::FullNewton } else { FitMethod::FallbackNewton },
                },
                Some((from, xi)) => match fit_point(ds, &design, xi, opts) {
                    Err(Error::SingularHessian { .. }) => GridPoint {
                        v: grid[i],
                        outcome: fit_newton_point(ds, &design, xi, opts),
                        init: InitSource::Neighbor(*from),
                        method: FitMethod::FallbackNewton,
                    },
                    r => GridPoint {
                        v: grid[i],
                        outcome: match r {
                            Ok(f) => GridFit::Fitted(f),
                            Err(e) => GridFit::Skipped(e),
                        },
                        init: InitSource::Neighbor(*from),
                        method: FitMethod::Update(opts.mode.steps().unwrap_or(1)),
                    },
                },
            };
            if let Some(f) = point.fit() {
                seed = Some((i, f.xi_hat.clone()));
            }
            indices.push(i);
            points.push(point);
        }
    }
    Segment { indices, points }
}

/// Estimates the coefficient curves on `grid`.
///
/// In full-Newton mode every point is maximized independently from zero and
/// `anchors` is ignored. In update modes the anchors are maximized fully and
/// each remaining point takes one (or `k`) Newton updates from the nearest
/// previously fitted point in its anchor's segment, walking outward. Points
/// without local data are recorded as gaps. `anchors` defaults to
/// [`default_anchors`].
pub fn fit_curve<T: Real>(
    ds: &Dataset<T>,
    grid: &[T],
    smoothing: &Smoothing<T>,
    opts: &FitOptions<T>,
    anchors: Option<&[usize]>,
) -> Result<CurveEstimate<T>> {
    opts.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
    }
    let p = ds.p();
    let zero = LocalParams::zeros(p);
    let (points, order, anchors) = match opts.mode {
        FitMode::FullNewton => {
            let points: Vec<GridPoint<T>> = grid
                .par_iter()
                .map(|&v| GridPoint {
                    v,
                    outcome: fit_newton_point(ds, &smoothing.at(v), &zero, opts),
                    init: InitSource::Zero,
                    method: FitMethod::FullNewton,
                })
                .collect();
            (points, (0..grid.len()).collect::<Vec<_>>(), Vec::new())
        }
        _ => {
            let anchors: Vec<usize> = match anchors {
                Some(a) => a.to_vec(),
                None => default_anchors(grid.len()),
            };
            if anchors.is_empty() {
                return Err(Error::InvalidArgument("update modes need at least one anchor".into()));
            }
            if anchors.windows(2).any(|w| w[0] >= w[1]) || *anchors.last().unwrap() >= grid.len() {
                return Err(Error::InvalidArgument(
                    "anchors must be strictly increasing grid indices".into(),
                ));
            }
            let bounds = segment_bounds(&anchors);
            let segments: Vec<Segment<T>> = anchors
                .par_iter()
                .enumerate()
                .map(|(k, &a)| {
                    let lo = if k == 0 { 0 } else { bounds[k - 1] };
                    let hi = if k + 1 == anchors.len() { grid.len() } else { bounds[k] };
                    propagate_segment(ds, grid, smoothing, opts, a, lo, hi)
                })
                .collect();
            let mut slots: Vec<Option<GridPoint<T>>> = vec![None; grid.len()];
            let mut order = Vec::with_capacity(grid.len());
            for seg in segments {
                for (i, pt) in seg.indices.into_iter().zip(seg.points) {
                    order.push(i);
                    slots[i] = Some(pt);
                }
            }
            let points = slots.into_iter().map(|p| p.expect("every grid point assigned")).collect();
            (points, order, anchors)
        }
    };
    let first = points.iter().position(|p| p.is_fitted()).ok_or(Error::EmptyCurve)?;
    let mut curve = CurveEstimate {
        smoothing: *smoothing,
        mode: opts.mode,
        p,
        grid: grid.to_vec(),
        points,
        g_hat: Vec::new(),
        g_anchor: first,
        fitting_order: order,
        anchors,
        se_beta: vec![None; grid.len()],
    };
    curve.reintegrate(true)?;
    Ok(curve)
}
