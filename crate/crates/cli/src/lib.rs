//! Command-line front end: `fit`, `simulate`, `bench` and `baseline`.
//!
//! Every option can also come from a TOML file given by `--config`, using
//! the flag's long name with underscores; flags win over the file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use varcoef_hazard::baseline::FittedRisk;
use varcoef_hazard::bench::{self, Estimator, Format, McConfig, McSummary, Target};
use varcoef_hazard::inference::{infer_curve, normal_quantile};
use varcoef_hazard::simgen::{self, SimScenario};
use varcoef_hazard::solver::linspace;
use varcoef_hazard::{
    breslow, default_grid, fit_curve, load_dataset, support_grid, write_dataset, CurveEstimate, Dataset, FitMode,
    FitOptions, KernelSpec, Schema, SmoothHazard, Smoothing,
};

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Numerical = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Data,
            message: message.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<varcoef_hazard::Error> for CliError {
    fn from(e: varcoef_hazard::Error) -> Self {
        use varcoef_hazard::Error as E;
        let kind = match &e {
            E::InvalidArgument(_) | E::UnknownFormat(_) => ExitKind::Usage,
            e if e.is_numerical() => ExitKind::Numerical,
            _ => ExitKind::Data,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "varcoef", version, about = "Varying-coefficient marginal hazard models for clustered failure times")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate coefficient curves with pointwise inference from a data CSV.
    Fit(FitArgs),
    /// Simulate a clustered data set from the Clayton copula design.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo study and write summary tables.
    Bench(BenchArgs),
    /// Estimate cumulative and smoothed baseline hazards per member.
    Baseline(BaselineArgs),
}

/// Fills every `None` field of `self` from `file`.
macro_rules! merge_from {
    ($self:ident, $file:ident; $($f:ident),* $(,)?) => {
        $( if $self.$f.is_none() { $self.$f = $file.$f.take(); } )*
    };
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// Column mapping and bandwidth options shared by `fit` and `baseline`.
#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataArgs {
    /// Input data CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Absolute bandwidth.
    #[arg(long)]
    pub h: Option<f64>,
    /// Bandwidth as a fraction of the observed V range.
    #[arg(long)]
    pub h_frac: Option<f64>,
    /// Kernel: gaussian or epanechnikov.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Study end time; defaults to the largest observed time.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub cluster_col: Option<String>,
    #[arg(long)]
    pub member_col: Option<String>,
    #[arg(long)]
    pub time_col: Option<String>,
    #[arg(long)]
    pub status_col: Option<String>,
    #[arg(long)]
    pub v_col: Option<String>,
    /// Covariate columns, comma separated; defaults to every `z<k>` column.
    #[arg(long, value_delimiter = ',')]
    pub z_cols: Option<Vec<String>>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
}

impl DataArgs {
    fn merge(&mut self, mut file: Self) {
        merge_from!(self, file; data, h, h_frac, kernel, tau, cluster_col, member_col, time_col, status_col, v_col, z_cols, workers);
    }

    fn schema(&self) -> Schema {
        let d = Schema::default();
        Schema {
            cluster: self.cluster_col.clone().unwrap_or(d.cluster),
            member: self.member_col.clone().unwrap_or(d.member),
            time: self.time_col.clone().unwrap_or(d.time),
            status: self.status_col.clone().unwrap_or(d.status),
            v: self.v_col.clone().unwrap_or(d.v),
            z: self.z_cols.clone().unwrap_or_default(),
        }
    }

    fn load(&self) -> Result<Dataset<f64>> {
        let path = self.data.as_ref().ok_or_else(|| CliError::usage("--data is required"))?;
        let ds = load_dataset(path, &self.schema()).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        match self.tau {
            Some(t) => ds.with_tau(t).map_err(CliError::from),
            None => Ok(ds),
        }
    }

    fn kernel(&self) -> Result<KernelSpec> {
        match &self.kernel {
            None => Ok(KernelSpec::Gaussian),
            Some(k) => k.parse().map_err(|_| CliError::usage(format!("unknown kernel `{k}`"))),
        }
    }
}

/// Absolute bandwidth from `--h` or `--h-frac` times the V range.
pub fn resolve_bandwidth(h: Option<f64>, h_frac: Option<f64>, v_range: (f64, f64)) -> Result<f64> {
    let h = match (h, h_frac) {
        (Some(_), Some(_)) => return Err(CliError::usage("give either --h or --h-frac, not both")),
        (Some(h), None) => h,
        (None, Some(f)) => f * (v_range.1 - v_range.0),
        (None, None) => return Err(CliError::usage("a bandwidth is required: --h or --h-frac")),
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(CliError::usage(format!("bandwidth must be positive, got {h}")));
    }
    Ok(h)
}

/// Parses `full`, `one-step` or `k-step:<k>`.
pub fn parse_mode(s: &str) -> Result<FitMode> {
    match s {
        "full" | "full-newton" => Ok(FitMode::FullNewton),
        "one-step" => Ok(FitMode::OneStep),
        _ => s
            .strip_prefix("k-step:")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 1)
            .map(FitMode::KStep)
            .ok_or_else(|| CliError::usage(format!("unknown mode `{s}`; use full, one-step or k-step:<k>"))),
    }
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(CliError::usage("--workers must be at least 1"));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| CliError::usage(e.to_string()))?;
    pool.install(f)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::data(e.to_string()))
}

struct CsvOut(csv::Writer<Vec<u8>>);

impl CsvOut {
    fn new() -> Self {
        Self(csv::Writer::from_writer(Vec::new()))
    }

    fn row<I: IntoIterator<Item = S>, S: AsRef<[u8]>>(&mut self, cells: I) -> Result<()> {
        self.0.write_record(cells).map_err(|e| CliError::data(e.to_string()))
    }

    fn finish(self) -> Result<Vec<u8>> {
        self.0.into_inner().map_err(|e| CliError::data(e.to_string()))
    }
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), num)
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitArgs {
    /// TOML file with any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Output directory for curve.csv, inference.csv and summary.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Grid points; default 200.
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Grid start; default min V + h.
    #[arg(long)]
    pub grid_lo: Option<f64>,
    /// Grid end; default max V − h.
    #[arg(long)]
    pub grid_hi: Option<f64>,
    /// Anchor grid indices for update modes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub anchors: Option<Vec<usize>>,
    /// full, one-step or k-step:<k>; default full.
    #[arg(long)]
    pub mode: Option<String>,
    /// Confidence level of the pointwise intervals; default 0.95.
    #[arg(long)]
    pub level: Option<f64>,
}

impl FitArgs {
    fn resolved(mut self) -> Result<Self> {
        if let Some(path) = self.config.clone() {
            let mut file: FitArgs = read_config(&path)?;
            self.data.merge(std::mem::take(&mut file.data));
            merge_from!(self, file; out, grid_size, grid_lo, grid_hi, anchors, mode, level);
        }
        Ok(self)
    }
}

#[derive(Serialize)]
struct FitSummary {
    data: String,
    n_clusters: usize,
    members: usize,
    p: usize,
    records: usize,
    tau: f64,
    v_range: (f64, f64),
    h: f64,
    h_frac: Option<f64>,
    kernel: KernelSpec,
    mode: FitMode,
    level: f64,
    grid_size: usize,
    grid_range: (f64, f64),
    anchors: Vec<usize>,
    fitted: usize,
    gaps: Vec<f64>,
    g_anchor_v: f64,
}

/// Curve fit with sandwich standard errors and a residual curve spanning
/// the data.
fn fit_with_inference(
    ds: &Dataset<f64>,
    grid: &[f64],
    smoothing: &Smoothing<f64>,
    opts: &FitOptions<f64>,
    anchors: Option<&[usize]>,
) -> Result<(CurveEstimate<f64>, Vec<Option<varcoef_hazard::SandwichParts64>>)> {
    let mut curve = fit_curve(ds, grid, smoothing, opts, anchors)?;
    let (lo, hi) = ds.v_range();
    let covers = grid[0] <= lo && grid[grid.len() - 1] >= hi;
    let parts = if covers {
        let risk = curve.clone();
        infer_curve(ds, &mut curve, &risk)?
    } else {
        let risk = fit_curve(ds, &support_grid(ds, grid.len().max(2))?, smoothing, opts, None)?;
        infer_curve(ds, &mut curve, &risk)?
    };
    Ok((curve, parts))
}

pub fn cmd_fit(args: FitArgs) -> Result<()> {
    let args = args.resolved()?;
    let out = args.out.clone().ok_or_else(|| CliError::usage("--out is required"))?;
    let ds = args.data.load()?;
    let h = resolve_bandwidth(args.data.h, args.data.h_frac, ds.v_range())?;
    let kernel = args.data.kernel()?;
    let mode = parse_mode(args.mode.as_deref().unwrap_or("full"))?;
    let level = args.level.unwrap_or(0.95);
    let alpha = 1.0 - level;
    let z = normal_quantile(alpha)?;
    let n_grid = args.grid_size.unwrap_or(200);
    if n_grid < 2 {
        return Err(CliError::usage("--grid-size must be at least 2"));
    }
    let grid = match (args.grid_lo, args.grid_hi) {
        (None, None) => default_grid(&ds, h, n_grid)?,
        (lo, hi) => {
            let (vlo, vhi) = ds.v_range();
            let (lo, hi) = (lo.unwrap_or(vlo + h), hi.unwrap_or(vhi - h));
            if !(lo < hi) {
                return Err(CliError::usage(format!("empty grid range [{lo}, {hi}]")));
            }
            linspace(lo, hi, n_grid)
        }
    };
    let smoothing = Smoothing::new(h, kernel)?;
    let opts = FitOptions::default().with_mode(mode);
    let (curve, parts) = with_workers(args.data.workers, || {
        fit_with_inference(&ds, &grid, &smoothing, &opts, args.anchors.as_deref())
    })?;
    let p = ds.p();

    let mut header = vec!["v".to_string()];
    header.extend((1..=p).map(|k| format!("beta{k}")));
    header.extend((1..=p).map(|k| format!("se_beta{k}")));
    for k in 1..=p {
        header.extend([format!("beta{k}_lo"), format!("beta{k}_hi")]);
    }
    for k in 1..=p {
        header.extend([format!("hr{k}"), format!("hr{k}_lo"), format!("hr{k}_hi")]);
    }
    header.extend(["gprime", "se_gprime", "g"].map(String::from));
    let mut curve_csv = CsvOut::new();
    curve_csv.row(&header)?;

    let mut inf_csv = CsvOut::new();
    inf_csv.row(["v", "parameter", "estimate", "se", "lo", "hi"])?;

    for i in 0..curve.len() {
        let Some(fit) = curve.points[i].fit() else {
            continue;
        };
        let v = curve.grid[i];
        let beta = fit.beta();
        let se = parts[i].as_ref().map(|s| s.se.clone());
        let se_at = |j: usize, scale: f64| se.as_ref().map(|s| s[j] / scale);
        let mut row = vec![num(v)];
        row.extend(beta.iter().map(|&b| num(b)));
        row.extend((0..p).map(|k| opt(se_at(k, 1.0))));
        let ci: Vec<Option<(f64, f64)>> = (0..p)
            .map(|k| se_at(k, 1.0).map(|s| (beta[k] - z * s, beta[k] + z * s)))
            .collect();
        for c in &ci {
            row.extend([opt(c.map(|c| c.0)), opt(c.map(|c| c.1))]);
        }
        for k in 0..p {
            row.extend([
                num(beta[k].exp()),
                opt(ci[k].map(|c| c.0.exp())),
                opt(ci[k].map(|c| c.1.exp())),
            ]);
        }
        row.extend([num(fit.gprime()), opt(se_at(2 * p, h)), opt(curve.g_hat[i])]);
        curve_csv.row(&row)?;

        let xi = &fit.xi_hat;
        let mut params: Vec<(String, f64, Option<f64>)> = Vec::new();
        for k in 0..p {
            params.push((format!("beta{}", k + 1), xi.delta[k], se_at(k, 1.0)));
        }
        for k in 0..p {
            params.push((format!("beta{}_deriv", k + 1), xi.eta[k], se_at(p + k, h)));
        }
        params.push(("gprime".into(), xi.gamma, se_at(2 * p, h)));
        for (name, est, s) in params {
            inf_csv.row([
                num(v),
                name,
                num(est),
                opt(s),
                opt(s.map(|s| est - z * s)),
                opt(s.map(|s| est + z * s)),
            ])?;
        }
    }

    let summary = FitSummary {
        data: args.data.data.as_ref().unwrap().display().to_string(),
        n_clusters: ds.n(),
        members: ds.members(),
        p,
        records: ds.present_count(),
        tau: ds.tau(),
        v_range: ds.v_range(),
        h,
        h_frac: args.data.h_frac,
        kernel,
        mode,
        level,
        grid_size: n_grid,
        grid_range: (grid[0], grid[grid.len() - 1]),
        anchors: curve.anchors.clone(),
        fitted: curve.fitted_count(),
        gaps: curve.gaps().into_iter().map(|i| curve.grid[i]).collect(),
        g_anchor_v: curve.grid[curve.g_anchor],
    };
    create_dir(&out)?;
    write_file(&out.join("curve.csv"), curve_csv.finish()?)?;
    write_file(&out.join("inference.csv"), inf_csv.finish()?)?;
    write_file(&out.join("summary.json"), to_json(&summary)?)?;
    Ok(())
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// TOML file with any of these options, or a full `[scenario]` table.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// set1 or set2; default set1.
    #[arg(long)]
    pub preset: Option<String>,
    /// Clusters; default 200.
    #[arg(long)]
    pub n: Option<usize>,
    /// Clayton dependence; default 0.25.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Censoring bound c of Uniform(0, c); default 2.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output data CSV; metadata goes next to it with a `.json` extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(skip)]
    pub scenario: Option<SimScenario>,
}

impl SimulateArgs {
    fn resolved(mut self) -> Result<Self> {
        if let Some(path) = self.config.clone() {
            let mut file: SimulateArgs = read_config(&path)?;
            merge_from!(self, file; preset, n, theta, c, seed, out, workers, scenario);
        }
        Ok(self)
    }

    /// Scenario from the config table or the preset, with flag overrides.
    pub fn scenario(&self) -> Result<SimScenario> {
        let mut scn = match (&self.scenario, self.preset.as_deref()) {
            (Some(s), None) => s.clone(),
            (Some(_), Some(_)) => return Err(CliError::usage("give either a preset or a [scenario] table")),
            (None, preset) => {
                let make = match preset.unwrap_or("set1") {
                    "set1" => SimScenario::set1,
                    "set2" => SimScenario::set2,
                    other => return Err(CliError::usage(format!("unknown preset `{other}`"))),
                };
                make(200, 0.25, 2.0, 0)
            }
        };
        if let Some(n) = self.n {
            scn.n = n;
        }
        if let Some(t) = self.theta {
            scn.theta = t;
        }
        if let Some(c) = self.c {
            scn.censor_c = c;
        }
        if let Some(s) = self.seed {
            scn.seed = s;
        }
        scn.validate()?;
        Ok(scn)
    }
}

#[derive(Serialize)]
struct SimMetadata<'a> {
    scenario: &'a SimScenario,
    records: usize,
    censored: usize,
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let args = args.resolved()?;
    let out = args.out.clone().ok_or_else(|| CliError::usage("--out is required"))?;
    let scn = args.scenario()?;
    let ds = with_workers(args.workers, || Ok(simgen::simulate_dataset(&scn)?))?;
    let mut buf = Vec::new();
    write_dataset(&ds, &mut buf)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(&out, buf)?;
    let meta = SimMetadata {
        scenario: &scn,
        records: ds.present_count(),
        censored: ds.present_records().filter(|r| !r.event).count(),
    };
    write_file(&out.with_extension("json"), to_json(&meta)?)?;
    Ok(())
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchArgs {
    /// TOML file with any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// table1, table2 or table3.
    #[arg(long)]
    pub preset: Option<String>,
    /// Default 0.25.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Default 2 for table1 and table3, 5 for table2.
    #[arg(long)]
    pub c: Option<f64>,
    /// Replications; default 200.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Master seed; default 1.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Clusters per replication; default 200.
    #[arg(long)]
    pub n: Option<usize>,
    /// Bandwidths, comma separated, replacing the preset's.
    #[arg(long, value_delimiter = ',')]
    pub bandwidths: Option<Vec<f64>>,
    /// table3 estimators, comma separated; default pseudo_partial,one_step.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    /// table2 pooled bandwidth; default 0.15.
    #[arg(long)]
    pub h: Option<f64>,
    /// table2 weighted bandwidth; default 0.225.
    #[arg(long)]
    pub h_weighted: Option<f64>,
    /// csv or text; default csv.
    #[arg(long)]
    pub format: Option<String>,
    /// Directory of per-study checkpoint files for resuming.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

impl BenchArgs {
    fn resolved(mut self) -> Result<Self> {
        if let Some(path) = self.config.clone() {
            let mut file: BenchArgs = read_config(&path)?;
            merge_from!(self, file; preset, theta, c, reps, seed, n, bandwidths, estimators, h, h_weighted, format, checkpoint_dir, out, workers);
        }
        Ok(self)
    }

    fn adjust(&self, mut cfg: McConfig) -> McConfig {
        if let Some(n) = self.n {
            cfg.scenario.n = n;
        }
        if let Some(b) = &self.bandwidths {
            cfg.bandwidths = b.clone();
        }
        cfg
    }
}

fn parse_estimator(s: &str) -> Result<Estimator> {
    match s {
        "pseudo_partial" | "P" => Ok(Estimator::PseudoPartial),
        "one_step" | "OS" => Ok(Estimator::OneStep),
        "weighted" | "W" => Ok(Estimator::Weighted),
        other => Err(CliError::usage(format!("unknown estimator `{other}`"))),
    }
}

fn ext(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Text => "txt",
    }
}

fn run_study(cfg: &McConfig, checkpoint_dir: Option<&Path>) -> Result<McSummary> {
    let label = format!("{} {}", cfg.scenario_id, cfg.estimator.name());
    let done = std::sync::atomic::AtomicUsize::new(0);
    let progress = |_r: usize| {
        let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        eprintln!("[{label}] replication {k}/{}", cfg.reps);
    };
    match checkpoint_dir {
        None => Ok(bench::run_mc_with(cfg, None, progress)?),
        Some(dir) => {
            create_dir(dir)?;
            let path = dir.join(format!("{}_{}.jsonl", cfg.scenario_id, cfg.estimator.name()));
            let ck = bench::Checkpoint::open(&path, cfg)?;
            if ck.completed() > 0 {
                eprintln!("[{label}] resuming with {} of {} replications done", ck.completed(), cfg.reps);
            }
            Ok(bench::run_mc_with(cfg, Some(&ck), progress)?)
        }
    }
}

#[derive(Serialize)]
struct Table2Row {
    estimator: Estimator,
    target: String,
    abias: Option<f64>,
    #[serde(rename = "SD")]
    sd: Option<f64>,
    #[serde(rename = "SE")]
    se: Option<f64>,
    #[serde(rename = "RASE")]
    rase: Option<f64>,
}

fn mean_of(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn table2_rows(summaries: &[&McSummary]) -> Vec<Table2Row> {
    let mut rows = Vec::new();
    for s in summaries {
        let targets: Vec<Target> = {
            let mut t: Vec<Target> = s.probes.iter().map(|p| p.target).collect();
            t.dedup();
            t
        };
        for target in targets {
            let probes = || s.probes.iter().filter(move |p| p.target == target);
            rows.push(Table2Row {
                estimator: s.estimator,
                target: target.name(),
                abias: mean_of(probes().map(|p| p.bias.map(f64::abs))),
                sd: mean_of(probes().map(|p| p.sd)),
                se: mean_of(probes().map(|p| p.se)),
                rase: if target == Target::Beta(0) {
                    s.ase.first().and_then(|a| a.mean_rase)
                } else {
                    None
                },
            });
        }
    }
    rows
}

fn render_table2(rows: &[Table2Row], format: Format) -> Result<String> {
    let mut out = CsvOut::new();
    out.row(["estimator", "target", "abias", "SD", "SE", "RASE"])?;
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let f = |x: Option<f64>| match format {
                Format::Csv => opt(x),
                Format::Text => x.map_or_else(|| "NA".into(), |x| format!("{x:.4}")),
            };
            vec![r.estimator.name().to_string(), r.target.clone(), f(r.abias), f(r.sd), f(r.se), f(r.rase)]
        })
        .collect();
    match format {
        Format::Csv => {
            for c in cells {
                out.row(c)?;
            }
            String::from_utf8(out.finish()?).map_err(|e| CliError::data(e.to_string()))
        }
        Format::Text => {
            let header = ["estimator", "target", "abias", "SD", "SE", "RASE"];
            let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
            for row in &cells {
                for (w, c) in widths.iter_mut().zip(row) {
                    *w = (*w).max(c.len());
                }
            }
            let line = |row: Vec<String>| {
                row.iter()
                    .zip(&widths)
                    .map(|(c, w)| format!("{c:>w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
                    + "\n"
            };
            let mut s = line(header.iter().map(|h| h.to_string()).collect());
            for row in cells {
                s.push_str(&line(row));
            }
            Ok(s)
        }
    }
}

pub fn cmd_bench(args: BenchArgs) -> Result<()> {
    let args = args.resolved()?;
    let out = args.out.clone().ok_or_else(|| CliError::usage("--out is required"))?;
    let preset = args.preset.clone().ok_or_else(|| CliError::usage("--preset is required"))?;
    let format: Format = args.format.as_deref().unwrap_or("csv").parse()?;
    let theta = args.theta.unwrap_or(0.25);
    let reps = args.reps.unwrap_or(bench::DEFAULT_REPS);
    let seed = args.seed.unwrap_or(1);
    let ck = args.checkpoint_dir.as_deref();
    create_dir(&out)?;
    with_workers(args.workers, || {
        let mut summaries = Vec::new();
        match preset.as_str() {
            "table1" => {
                let cfg = args.adjust(bench::table1_config(theta, args.c.unwrap_or(2.0), reps, seed));
                let s = run_study(&cfg, ck)?;
                for target in &cfg.targets {
                    let table = bench::render_probe_table(&bench::probe_rows(&s, *target), format)?;
                    write_file(&out.join(format!("{}.{}", target.name(), ext(format))), table)?;
                }
                summaries.push(s);
            }
            "table2" => {
                let cfgs = bench::table2_configs(
                    theta,
                    args.c.unwrap_or(5.0),
                    args.h.unwrap_or(0.15),
                    args.h_weighted.unwrap_or(0.225),
                    reps,
                    seed,
                );
                for cfg in cfgs {
                    let cfg = McConfig {
                        scenario: SimScenario {
                            n: args.n.unwrap_or(cfg.scenario.n),
                            ..cfg.scenario.clone()
                        },
                        ..cfg
                    };
                    summaries.push(run_study(&cfg, ck)?);
                }
                let refs: Vec<&McSummary> = summaries.iter().collect();
                write_file(&out.join(format!("table2.{}", ext(format))), render_table2(&table2_rows(&refs), format)?)?;
            }
            "table3" => {
                let names = args
                    .estimators
                    .clone()
                    .unwrap_or_else(|| vec!["pseudo_partial".into(), "one_step".into()]);
                for name in names {
                    let est = parse_estimator(&name)?;
                    let cfg = args.adjust(bench::table3_config(theta, args.c.unwrap_or(2.0), est, reps, seed));
                    summaries.push(run_study(&cfg, ck)?);
                }
                let refs: Vec<&McSummary> = summaries.iter().collect();
                let table = bench::render_ase_table(&bench::ase_rows(&refs), format)?;
                write_file(&out.join(format!("ase.{}", ext(format))), table)?;
            }
            other => return Err(CliError::usage(format!("unknown preset `{other}`; use table1, table2 or table3"))),
        }
        write_file(&out.join("summary.json"), to_json(&summaries)?)
    })
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineArgs {
    /// TOML file with any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Output directory for baseline.csv and smooth.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Grid points of the coefficient curve used for relative risks; default 200.
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Hazard smoothing bandwidth; default (last − first event time)/20 per member.
    #[arg(long)]
    pub smooth_b: Option<f64>,
    /// Time points per member in smooth.csv; default 100.
    #[arg(long)]
    pub smooth_points: Option<usize>,
}

impl BaselineArgs {
    fn resolved(mut self) -> Result<Self> {
        if let Some(path) = self.config.clone() {
            let mut file: BaselineArgs = read_config(&path)?;
            self.data.merge(std::mem::take(&mut file.data));
            merge_from!(self, file; out, grid_size, smooth_b, smooth_points);
        }
        Ok(self)
    }
}

pub fn cmd_baseline(args: BaselineArgs) -> Result<()> {
    let args = args.resolved()?;
    let out = args.out.clone().ok_or_else(|| CliError::usage("--out is required"))?;
    let ds = args.data.load()?;
    let h = resolve_bandwidth(args.data.h, args.data.h_frac, ds.v_range())?;
    let smoothing = Smoothing::new(h, args.data.kernel()?)?;
    let n_grid = args.grid_size.unwrap_or(200);
    let points = args.smooth_points.unwrap_or(100);
    if n_grid < 2 || points < 2 {
        return Err(CliError::usage("grid sizes must be at least 2"));
    }
    let steps = with_workers(args.data.workers, || {
        let curve = fit_curve(&ds, &support_grid(&ds, n_grid)?, &smoothing, &FitOptions::default(), None)?;
        // Validates that the curve can supply a relative risk for every record.
        FittedRisk::from_curve(&ds, &curve, true)?;
        (1..=ds.members())
            .map(|j| breslow(&ds, j, &curve).map_err(CliError::from))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut step_csv = CsvOut::new();
    step_csv.row(["member", "time", "increment", "cumulative"])?;
    let mut smooth_csv = CsvOut::new();
    smooth_csv.row(["member", "time", "hazard", "near_origin"])?;
    for step in steps {
        for k in 0..step.len() {
            step_csv.row([
                step.member.to_string(),
                num(step.times[k]),
                num(step.increments[k]),
                num(step.cumulative[k]),
            ])?;
        }
        let sm = match args.smooth_b {
            Some(b) => SmoothHazard::new(step, KernelSpec::Gaussian, b),
            None => SmoothHazard::with_default_bandwidth(step, KernelSpec::Gaussian),
        };
        let Ok(sm) = sm else {
            continue;
        };
        let (first, last) = (sm.step.times[0], *sm.step.times.last().unwrap());
        for t in linspace(first, last, points) {
            smooth_csv.row([
                sm.step.member.to_string(),
                num(t),
                num(sm.eval(t)),
                u8::from(sm.near_origin(t)).to_string(),
            ])?;
        }
    }
    create_dir(&out)?;
    write_file(&out.join("baseline.csv"), step_csv.finish()?)?;
    write_file(&out.join("smooth.csv"), smooth_csv.finish()?)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Baseline(a) => cmd_baseline(a),
    }
}
