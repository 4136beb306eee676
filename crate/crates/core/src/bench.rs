//! Monte Carlo harness: replicated simulations, bias/SD/mean-SE summaries at
//! probe points, RASE/ASE over a grid, and table-shaped reports.
//!
//! Replication `r` simulates from a seed drawn from substream `r` of the
//! master seed, so results depend only on `(config, r)` and aggregation runs
//! in replication order regardless of scheduling.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{breslow_all, FittedRisk};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{infer_fit, normal_quantile};
use crate::locfit::{LocalParams, Smoothing};
use crate::multi::{fit_per_type, type_risks, weighted_curve};
use crate::solver::{default_grid, fit_curve, linspace, maximize_local, one_step, support_grid, CurveEstimate, FitMode, FitOptions};
use crate::simgen::{simulate_dataset, SimScenario};

/// Grid size used for curves, residual risks and RASE.
pub const GRID_SIZE: usize = 200;

/// Probe points of the set-1 tables.
pub const TABLE1_PROBES: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 2.5];

/// Bandwidths of the set-1 table.
pub const TABLE1_BANDWIDTHS: [f64; 5] = [0.075, 0.1, 0.15, 0.2, 0.4];

/// Bandwidths of the set-2 table.
pub const TABLE3_BANDWIDTHS: [f64; 3] = [0.1, 0.2, 0.4];

/// Desk-scale replication count.
pub const DEFAULT_REPS: usize = 200;

/// `sqrt(mean over available points of (estimate − truth)²)`.
pub fn rase(grid: &[f64], estimate: &[Option<f64>], truth: impl Fn(f64) -> f64) -> Result<f64> {
    if grid.len() != estimate.len() {
        return Err(Error::InvalidArgument(format!(
            "grid has {} points, estimate has {}",
            grid.len(),
            estimate.len()
        )));
    }
    let (sum, count) = grid
        .iter()
        .zip(estimate)
        .filter_map(|(&w, e)| e.map(|e| (e - truth(w)).powi(2)))
        .fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if count == 0 {
        return Err(Error::NoAvailablePoints);
    }
    Ok((sum / count as f64).sqrt())
}

/// Square of [`rase`].
pub fn ase(grid: &[f64], estimate: &[Option<f64>], truth: impl Fn(f64) -> f64) -> Result<f64> {
    rase(grid, estimate, truth).map(|r| r * r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Full Newton maximizer at every point.
    PseudoPartial,
    /// Anchor propagation with one Newton update per point.
    OneStep,
    /// Optimal combination of per-type fits.
    Weighted,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::PseudoPartial => "pseudo_partial",
            Estimator::OneStep => "one_step",
            Estimator::Weighted => "weighted",
        }
    }
}

/// Quantity estimated at a probe point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Zero-based coefficient component.
    Beta(usize),
    GPrime,
}

impl Target {
    pub fn name(self) -> String {
        match self {
            Target::Beta(k) => format!("beta{}", k + 1),
            Target::GPrime => "gprime".into(),
        }
    }

    pub fn truth(self, scn: &SimScenario, v: f64) -> f64 {
        match self {
            Target::Beta(k) => scn.beta_fns[k].eval(v),
            Target::GPrime => scn.g_fn.derivative(v),
        }
    }
}

/// Where RASE is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    /// `[min V + h, max V − h]` of each replication.
    Trimmed,
    /// A fixed interval shared by every replication and bandwidth.
    Range { lo: f64, hi: f64 },
}

impl GridSpec {
    fn grid(self, ds: &Dataset<f64>, h: f64, n_grid: usize) -> Result<Vec<f64>> {
        match self {
            GridSpec::Trimmed => default_grid(ds, h, n_grid),
            GridSpec::Range { lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::InvalidArgument(format!("empty grid range [{lo}, {hi}]")));
                }
                Ok(linspace(lo, hi, n_grid))
            }
        }
    }
}

/// One Monte Carlo study: a scenario, an estimator and the bandwidths to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub scenario_id: String,
    pub scenario: SimScenario,
    pub estimator: Estimator,
    pub reps: usize,
    pub probes: Vec<f64>,
    pub targets: Vec<Target>,
    pub bandwidths: Vec<f64>,
    /// Coefficient component for RASE; `None` skips the grid curve.
    pub ase_component: Option<usize>,
    pub ase_grid: GridSpec,
    pub grid_size: usize,
    pub master_seed: u64,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be at least 1".into()));
        }
        if self.bandwidths.is_empty() || self.bandwidths.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidArgument("bandwidths must be positive and finite".into()));
        }
        if self.grid_size < 2 {
            return Err(Error::InvalidArgument("grid size must be at least 2".into()));
        }
        let p = self.scenario.p();
        for t in &self.targets {
            match *t {
                Target::Beta(k) if k >= p => {
                    return Err(Error::InvalidArgument(format!("target beta{} but p = {p}", k + 1)))
                }
                Target::GPrime if self.estimator == Estimator::Weighted => {
                    return Err(Error::InvalidArgument("the weighted estimator combines β only".into()))
                }
                _ => {}
            }
        }
        if let Some(k) = self.ase_component {
            if k >= p {
                return Err(Error::InvalidArgument(format!("RASE component {} but p = {p}", k + 1)));
            }
        }
        Ok(())
    }

    /// Simulation seed of replication `r`.
    pub fn rep_seed(&self, r: usize) -> u64 {
        rep_seed(self.master_seed, r)
    }
}

/// First word of substream `r` of the master seed.
pub fn rep_seed(master: u64, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(r as u64);
    rng.next_u64()
}

/// Estimate and standard error at one probe, `None` when skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeDraw {
    pub target: Target,
    pub v: f64,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
}

/// Results of one replication at one bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthDraw {
    pub h: f64,
    pub probes: Vec<ProbeDraw>,
    pub rase: Option<f64>,
}

/// Everything retained from replication `rep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub draws: Vec<BandwidthDraw>,
}

/// Aggregates at one `(h, target, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStat {
    pub h: f64,
    pub target: Target,
    pub v: f64,
    pub truth: f64,
    /// Replications with an estimate.
    pub count: usize,
    pub skips: usize,
    /// Mean estimate minus truth.
    pub bias: Option<f64>,
    /// Sample SD of the estimates, missing below two estimates.
    pub sd: Option<f64>,
    /// Mean estimated standard error.
    pub se: Option<f64>,
    /// Mean squared error.
    pub mse: Option<f64>,
    /// Share of replications whose nominal 95% interval covers the truth.
    pub coverage: Option<f64>,
}

/// ASE/RASE aggregates at one bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AseStat {
    pub h: f64,
    pub estimator: Estimator,
    pub count: usize,
    pub skips: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub std: Option<f64>,
    pub mean_rase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub scenario_id: String,
    pub estimator: Estimator,
    pub reps: usize,
    pub probes: Vec<ProbeStat>,
    pub ase: Vec<AseStat>,
    /// Per-replication RASE by bandwidth, in replication order.
    pub rase: Vec<(f64, Vec<Option<f64>>)>,
}

impl McSummary {
    pub fn probe(&self, h: f64, target: Target, v: f64) -> Option<&ProbeStat> {
        self.probes.iter().find(|s| s.h == h && s.target == target && s.v == v)
    }

    pub fn ase_at(&self, h: f64) -> Option<&AseStat> {
        self.ase.iter().find(|s| s.h == h)
    }
}

/// Runs one replication.
pub fn run_rep(cfg: &McConfig, r: usize) -> Result<RepRecord> {
    let seed = cfg.rep_seed(r);
    let ds = simulate_dataset(&cfg.scenario.with_seed(seed))?;
    let draws = cfg
        .bandwidths
        .iter()
        .map(|&h| run_bandwidth(cfg, &ds, h))
        .collect::<Result<Vec<_>>>()?;
    Ok(RepRecord { rep: r, seed, draws })
}

fn skipped(target: Target, v: f64) -> ProbeDraw {
    ProbeDraw {
        target,
        v,
        estimate: None,
        se: None,
    }
}

fn run_bandwidth(cfg: &McConfig, ds: &Dataset<f64>, h: f64) -> Result<BandwidthDraw> {
    let smoothing = Smoothing::gaussian(h)?;
    let opts = FitOptions::default();
    match cfg.estimator {
        Estimator::PseudoPartial | Estimator::OneStep => {
            let mode = if cfg.estimator == Estimator::OneStep {
                FitMode::OneStep
            } else {
                FitMode::FullNewton
            };
            let opts = opts.with_mode(mode);
            let probes = if cfg.probes.is_empty() || cfg.targets.is_empty() {
                Vec::new()
            } else {
                single_type_probes(cfg, ds, &smoothing, &opts)?
            };
            let rase = match cfg.ase_component {
                None => None,
                Some(k) => {
                    let grid = cfg.ase_grid.grid(ds, h, cfg.grid_size)?;
                    fit_curve(ds, &grid, &smoothing, &opts, None).ok().and_then(|c| {
                        let est: Vec<Option<f64>> = (0..c.len()).map(|i| c.beta(i).map(|b| b[k])).collect();
                        rase(&grid, &est, |w| cfg.scenario.beta_fns[k].eval(w)).ok()
                    })
                }
            };
            Ok(BandwidthDraw { h, probes, rase })
        }
        Estimator::Weighted => {
            let support = support_grid(ds, cfg.grid_size)?;
            let risks = type_risks(ds, &support, &smoothing, &opts)?;
            let probes = cfg
                .probes
                .iter()
                .flat_map(|&v| {
                    let combined = fit_per_type(ds, v, &smoothing, &opts)
                        .and_then(|mut s| s.attach_scores(ds, &risks).map(|_| s))
                        .ok();
                    cfg.targets.iter().map(move |&t| {
                        let Target::Beta(k) = t else { return skipped(t, v) };
                        match combined.as_ref().and_then(|s| s.combine(k).ok()) {
                            Some(w) => ProbeDraw {
                                target: t,
                                v,
                                estimate: Some(w.value),
                                se: Some(w.se).filter(|s| s.is_finite()),
                            },
                            None => skipped(t, v),
                        }
                    })
                })
                .collect();
            let rase = match cfg.ase_component {
                None => None,
                Some(k) => {
                    let grid = cfg.ase_grid.grid(ds, h, cfg.grid_size)?;
                    let est: Vec<Option<f64>> = weighted_curve(ds, &grid, &smoothing, &opts, &risks)
                        .into_iter()
                        .map(|e| e.map(|e| e[k].value))
                        .collect();
                    rase(&grid, &est, |w| cfg.scenario.beta_fns[k].eval(w)).ok()
                }
            };
            Ok(BandwidthDraw { h, probes, rase })
        }
    }
}

/// Probe estimates with sandwich standard errors. Residuals use a curve of the
/// same estimator over the support of `V`.
fn single_type_probes(
    cfg: &McConfig,
    ds: &Dataset<f64>,
    smoothing: &Smoothing<f64>,
    opts: &FitOptions<f64>,
) -> Result<Vec<ProbeDraw>> {
    let support = support_grid(ds, cfg.grid_size)?;
    let curve = fit_curve(ds, &support, smoothing, opts, None).ok();
    let risk = curve.as_ref().and_then(|c| FittedRisk::from_curve(ds, c, true).ok());
    let baselines = risk.as_ref().and_then(|r| breslow_all(ds, r).ok());
    let mut out = Vec::with_capacity(cfg.probes.len() * cfg.targets.len());
    for &v in &cfg.probes {
        let design = smoothing.at(v);
        let fit = match opts.mode {
            FitMode::FullNewton => maximize_local(ds, &design, &LocalParams::zeros(ds.p()), opts)
                .ok()
                .filter(|f| f.converged),
            _ => curve
                .as_ref()
                .and_then(|c| nearest_fit(c, v))
                .and_then(|init| one_step(ds, &design, &init).ok()),
        };
        let Some(fit) = fit else {
            out.extend(cfg.targets.iter().map(|&t| skipped(t, v)));
            continue;
        };
        let parts = match (&risk, &baselines) {
            (Some(r), Some(b)) => infer_fit(ds, &fit, &design, r, b).ok(),
            _ => None,
        };
        let p = ds.p();
        for &t in &cfg.targets {
            let (estimate, idx) = match t {
                Target::Beta(k) => (fit.beta()[k], k),
                Target::GPrime => (fit.gprime(), 2 * p),
            };
            // Slope components of the sandwich are on the `h·` scale.
            let scale = if idx < p { 1.0 } else { 1.0 / smoothing.h };
            out.push(ProbeDraw {
                target: t,
                v,
                estimate: Some(estimate),
                se: parts.as_ref().map(|s| s.se[idx] * scale).filter(|s| s.is_finite()),
            });
        }
    }
    Ok(out)
}

fn nearest_fit(curve: &CurveEstimate<f64>, v: f64) -> Option<LocalParams<f64>> {
    curve
        .points
        .iter()
        .filter_map(|pt| pt.fit().map(|f| (pt.v, f)))
        .min_by(|a, b| (a.0 - v).abs().total_cmp(&(b.0 - v).abs()))
        .map(|(_, f)| f.xi_hat.clone())
}

/// Checkpoint file of JSON lines: a header with the configuration, then one
/// [`RepRecord`] per completed replication in completion order.
pub struct Checkpoint {
    file: Mutex<File>,
    done: BTreeMap<usize, RepRecord>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: McConfig,
}

impl Checkpoint {
    /// Opens `path`, reading completed replications. A new file is started
    /// when none exists; a header for a different configuration is an error.
    pub fn open(path: &Path, cfg: &McConfig) -> Result<Self> {
        let mut done = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            let mut lines = reader.lines();
            match lines.next() {
                Some(line) => {
                    let header: CheckpointHeader =
                        serde_json::from_str(&line?).map_err(|e| Error::InvalidData(format!("checkpoint header: {e}")))?;
                    if header.config != *cfg {
                        return Err(Error::InvalidArgument(format!(
                            "checkpoint {} belongs to a different configuration",
                            path.display()
                        )));
                    }
                }
                None => {
                    let mut f = File::create(path)?;
                    write_header(&mut f, cfg)?;
                }
            }
            for line in lines {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                // A torn final line from an interrupted write is discarded.
                if let Ok(rec) = serde_json::from_str::<RepRecord>(&line) {
                    if rec.rep < cfg.reps {
                        done.insert(rec.rep, rec);
                    }
                }
            }
        } else {
            let mut f = File::create(path)?;
            write_header(&mut f, cfg)?;
        }
        let mut file = OpenOptions::new().append(true).open(path)?;
        // Terminate any torn line so later records start cleanly.
        file.write_all(b"\n")?;
        Ok(Self {
            file: Mutex::new(file),
            done,
        })
    }

    pub fn completed(&self) -> usize {
        self.done.len()
    }

    fn record(&self, rec: &RepRecord) -> Result<()> {
        let line = serde_json::to_string(rec).map_err(|e| Error::Io(e.to_string()))?;
        let mut f = self.file.lock().expect("checkpoint lock");
        writeln!(f, "{line}")?;
        f.flush()?;
        Ok(())
    }
}

fn write_header(f: &mut File, cfg: &McConfig) -> Result<()> {
    let header = serde_json::to_string(&CheckpointHeader { config: cfg.clone() }).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(f, "{header}")?;
    Ok(())
}

/// Runs every replication in parallel and aggregates in replication order.
pub fn run_mc(cfg: &McConfig) -> Result<McSummary> {
    run_mc_with(cfg, None, |_| {})
}

/// [`run_mc`] resuming from and appending to `checkpoint`, calling
/// `progress` with the replication index after each one completes.
pub fn run_mc_with(cfg: &McConfig, checkpoint: Option<&Checkpoint>, progress: impl Fn(usize) + Sync) -> Result<McSummary> {
    cfg.validate()?;
    let records: Vec<RepRecord> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            if let Some(rec) = checkpoint.and_then(|c| c.done.get(&r)) {
                return Ok(rec.clone());
            }
            let rec = run_rep(cfg, r)?;
            if let Some(c) = checkpoint {
                c.record(&rec)?;
            }
            progress(r);
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(cfg, &records))
}

fn mean(x: &[f64]) -> Option<f64> {
    (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64)
}

fn sample_sd(x: &[f64]) -> Option<f64> {
    let m = mean(x)?;
    (x.len() >= 2).then(|| (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt())
}

fn median(x: &[f64]) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) })
}

/// Aggregates replication records (already in replication order).
pub fn summarize(cfg: &McConfig, records: &[RepRecord]) -> McSummary {
    let mut probes = Vec::new();
    let mut ase_stats = Vec::new();
    let mut rase_by_h = Vec::new();
    let z95 = normal_quantile(0.05).expect("valid level");
    for (hi, &h) in cfg.bandwidths.iter().enumerate() {
        for &t in &cfg.targets {
            for &v in &cfg.probes {
                let draws: Vec<&ProbeDraw> = records
                    .iter()
                    .filter_map(|r| r.draws.get(hi))
                    .filter_map(|d| d.probes.iter().find(|p| p.target == t && p.v == v))
                    .collect();
                let est: Vec<f64> = draws.iter().filter_map(|d| d.estimate).collect();
                let ses: Vec<f64> = draws.iter().filter_map(|d| d.se).collect();
                let truth = t.truth(&cfg.scenario, v);
                let covered: Vec<f64> = draws
                    .iter()
                    .filter_map(|d| Some(((d.estimate? - truth).abs() <= z95 * d.se?) as u8 as f64))
                    .collect();
                probes.push(ProbeStat {
                    h,
                    target: t,
                    v,
                    truth,
                    count: est.len(),
                    skips: records.len() - est.len(),
                    bias: mean(&est).map(|m| m - truth),
                    sd: sample_sd(&est),
                    se: mean(&ses),
                    mse: mean(&est.iter().map(|e| (e - truth).powi(2)).collect::<Vec<_>>()),
                    coverage: mean(&covered),
                });
            }
        }
        if cfg.ase_component.is_some() {
            let per_rep: Vec<Option<f64>> = records.iter().map(|r| r.draws.get(hi).and_then(|d| d.rase)).collect();
            let rases: Vec<f64> = per_rep.iter().flatten().copied().collect();
            let ases: Vec<f64> = rases.iter().map(|r| r * r).collect();
            ase_stats.push(AseStat {
                h,
                estimator: cfg.estimator,
                count: ases.len(),
                skips: records.len() - ases.len(),
                mean: mean(&ases),
                median: median(&ases),
                std: sample_sd(&ases),
                mean_rase: mean(&rases),
            });
            rase_by_h.push((h, per_rep));
        }
    }
    McSummary {
        scenario_id: cfg.scenario_id.clone(),
        estimator: cfg.estimator,
        reps: records.len(),
        probes,
        ase: ase_stats,
        rase: rase_by_h,
    }
}

/// Identifier such as `set1_theta0.25_c2`.
pub fn scenario_id(set: &str, theta: f64, c: f64) -> String {
    format!("{set}_theta{theta}_c{c}")
}

/// Set 1, all five probes and bandwidths, `β₁`, `β₂` and `g′` with SEs.
pub fn table1_config(theta: f64, c: f64, reps: usize, master_seed: u64) -> McConfig {
    McConfig {
        scenario_id: scenario_id("set1", theta, c),
        scenario: SimScenario::set1(200, theta, c, 0),
        estimator: Estimator::PseudoPartial,
        reps,
        probes: TABLE1_PROBES.to_vec(),
        targets: vec![Target::Beta(0), Target::Beta(1), Target::GPrime],
        bandwidths: TABLE1_BANDWIDTHS.to_vec(),
        ase_component: None,
        ase_grid: GridSpec::Trimmed,
        grid_size: GRID_SIZE,
        master_seed,
    }
}

/// Set 2, ASE of `β` on the trimmed grid for one estimator.
pub fn table3_config(theta: f64, c: f64, estimator: Estimator, reps: usize, master_seed: u64) -> McConfig {
    McConfig {
        scenario_id: scenario_id("set2", theta, c),
        scenario: SimScenario::set2(200, theta, c, 0),
        estimator,
        reps,
        probes: Vec::new(),
        targets: Vec::new(),
        bandwidths: TABLE3_BANDWIDTHS.to_vec(),
        ase_component: Some(0),
        ase_grid: GridSpec::Trimmed,
        grid_size: GRID_SIZE,
        master_seed,
    }
}

/// Set 1, RASE of `β₁` on a grid shared by both estimators: the pooled fit
/// at `h` and the weighted estimator at `h_weighted`.
pub fn table2_configs(theta: f64, c: f64, h: f64, h_weighted: f64, reps: usize, master_seed: u64) -> [McConfig; 2] {
    let scenario = SimScenario::set1(200, theta, c, 0);
    let trim = h.max(h_weighted);
    let grid = GridSpec::Range {
        lo: scenario.v_range.0 + trim,
        hi: scenario.v_range.1 - trim,
    };
    let base = McConfig {
        scenario_id: scenario_id("set1", theta, c),
        scenario,
        estimator: Estimator::PseudoPartial,
        reps,
        probes: TABLE1_PROBES.to_vec(),
        targets: vec![Target::Beta(0), Target::Beta(1)],
        bandwidths: vec![h],
        ase_component: Some(0),
        ase_grid: grid,
        grid_size: GRID_SIZE,
        master_seed,
    };
    let weighted = McConfig {
        estimator: Estimator::Weighted,
        bandwidths: vec![h_weighted],
        ..base.clone()
    };
    [base, weighted]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Text,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "text" | "txt" => Ok(Format::Text),
            other => Err(Error::UnknownFormat(other.into())),
        }
    }
}

/// Row of a probe table: columns `v, h, bias, SE, SD`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub v: f64,
    pub h: f64,
    pub bias: Option<f64>,
    #[serde(rename = "SE")]
    pub se: Option<f64>,
    #[serde(rename = "SD")]
    pub sd: Option<f64>,
}

/// Row of an ASE table: columns `h, estimator, mean, median, std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AseRow {
    pub h: f64,
    pub estimator: Estimator,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub std: Option<f64>,
}

/// Probe rows for one target, ordered by probe point then bandwidth.
pub fn probe_rows(summary: &McSummary, target: Target) -> Vec<ProbeRow> {
    let mut rows: Vec<ProbeRow> = summary
        .probes
        .iter()
        .filter(|s| s.target == target)
        .map(|s| ProbeRow {
            v: s.v,
            h: s.h,
            bias: s.bias,
            se: s.se,
            sd: s.sd,
        })
        .collect();
    rows.sort_by(|a, b| a.v.total_cmp(&b.v).then(a.h.total_cmp(&b.h)));
    rows
}

/// ASE rows of several summaries, ordered by bandwidth then estimator.
pub fn ase_rows(summaries: &[&McSummary]) -> Vec<AseRow> {
    let mut rows: Vec<AseRow> = summaries
        .iter()
        .flat_map(|s| s.ase.iter())
        .map(|a| AseRow {
            h: a.h,
            estimator: a.estimator,
            mean: a.mean,
            median: a.median,
            std: a.std,
        })
        .collect();
    rows.sort_by(|a, b| a.h.total_cmp(&b.h).then(a.estimator.cmp(&b.estimator)));
    rows
}

fn to_csv<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn from_csv<R: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<R>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::InvalidData(e.to_string())))
        .collect()
}

pub fn parse_probe_csv(text: &str) -> Result<Vec<ProbeRow>> {
    from_csv(text)
}

pub fn parse_ase_csv(text: &str) -> Result<Vec<AseRow>> {
    from_csv(text)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), |x| format!("{x:.4}"))
}

fn aligned(header: &[&str], cells: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |row: Vec<String>| {
        let s: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        s.join("  ")
    };
    let mut out = line(header.iter().map(|h| h.to_string()).collect());
    out.push('\n');
    for row in cells {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

pub fn render_probe_table(rows: &[ProbeRow], format: Format) -> Result<String> {
    match format {
        Format::Csv => to_csv(rows),
        Format::Text => Ok(aligned(
            &["v", "h", "bias", "SE", "SD"],
            rows.iter()
                .map(|r| vec![format!("{}", r.v), format!("{}", r.h), fmt_opt(r.bias), fmt_opt(r.se), fmt_opt(r.sd)])
                .collect(),
        )),
    }
}

pub fn render_ase_table(rows: &[AseRow], format: Format) -> Result<String> {
    match format {
        Format::Csv => to_csv(rows),
        Format::Text => Ok(aligned(
            &["h", "estimator", "mean", "median", "std"],
            rows.iter()
                .map(|r| {
                    vec![
                        format!("{}", r.h),
                        r.estimator.name().to_string(),
                        fmt_opt(r.mean),
                        fmt_opt(r.median),
                        fmt_opt(r.std),
                    ]
                })
                .collect(),
        )),
    }
}

/// Format from a name, for callers holding strings.
pub fn parse_format(name: &str) -> Result<Format> {
    name.parse()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rase_examples() {
        let grid = [0.0, 1.0];
        assert_eq!(rase(&grid, &[Some(0.0), Some(1.0)], |w| w).unwrap(), 0.0);
        let r = rase(&grid, &[Some(0.1), Some(1.1)], |w| w).unwrap();
        assert!((r - 0.1).abs() < 1e-12);
        let r = rase(&grid, &[Some(0.0), Some(2.0)], |w| w).unwrap();
        assert!((r - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(rase(&grid, &[None, None], |w| w), Err(Error::NoAvailablePoints));
        let r = rase(&grid, &[None, Some(1.5)], |w| w).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unknown_format() {
        assert_eq!(parse_format("xlsx"), Err(Error::UnknownFormat("xlsx".into())));
        assert_eq!(parse_format("csv"), Ok(Format::Csv));
    }

    #[test]
    fn rep_seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..50).map(|r| rep_seed(7, r)).collect();
        let b: Vec<u64> = (0..50).map(|r| rep_seed(7, r)).collect();
        assert_eq!(a, b);
        let mut s = a.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), a.len());
        assert_ne!(rep_seed(8, 0), a[0]);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
