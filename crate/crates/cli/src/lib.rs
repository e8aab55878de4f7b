//! Commands behind the `care` binary: single runs, strategy comparisons and
//! parameter sweeps over a scenario file.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;

use care_core::engine::EngineError;
use care_core::report::{self, ReportError};
use care_core::scenario::ScenarioError;
use care_core::{run_with, Metrics, RunOptions, RunOutput, ScenarioConfig, Strategy};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_LIVENESS: i32 = 2;

pub const COMPARE_HEADER: [&str; 6] = ["strategy", "metric", "mean", "min", "max", "n"];
pub const SWEEP_HEADER: [&str; 8] = ["param", "value", "strategy", "metric", "mean", "min", "max", "n"];

/// Scalar metrics summarised by `compare` and `sweep`.
pub const SUMMARY_METRICS: [&str; 9] =
    ["cr", "ct", "rr_min", "rr_mean", "notf", "games_resilience", "games_noidling", "ticks", "totd_50"];

fn metric_value(m: &Metrics, name: &str) -> Option<f64> {
    match name {
        "cr" => Some(m.cr),
        "ct" => Some(m.ct),
        "rr_min" => m.rr_min,
        "rr_mean" => m.rr_mean,
        "notf" => Some(m.notf as f64),
        "games_resilience" => Some(m.games_resilience as f64),
        "games_noidling" => Some(m.games_noidling as f64),
        "ticks" => Some(m.ticks as f64),
        "totd_50" => m.totd_at(50),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Stat {
    /// Summary over the values that are present; `None` if there are none.
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Option<Stat> {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return None;
        }
        Some(Stat {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n: v.len(),
        })
    }
}

/// Parses `1,2,3`, `1-5` or a mix such as `1-3,7`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("invalid seed list `{text}`"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

pub fn parse_strategies(text: &str) -> Result<Vec<Strategy>, CliError> {
    let list = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Strategy::from_str)
        .collect::<Result<Vec<_>, _>>()?;
    if list.is_empty() {
        return Err(CliError::Usage("at least one strategy is required".into()));
    }
    Ok(list)
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub seed: Option<u64>,
    pub strategy: Option<Strategy>,
    pub out_dir: Option<PathBuf>,
    pub snapshot_every: Option<u64>,
}

/// Loads the scenario, runs it once and writes the artifacts when an output
/// directory is given.
pub fn cmd_run(path: &Path, args: &RunArgs) -> Result<RunOutput, CliError> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(s) = args.strategy {
        cfg.strategy = s;
    }
    let out = run_with(&cfg, &RunOptions { snapshot_every: args.snapshot_every })?;
    if let Some(dir) = &args.out_dir {
        report::write_run(dir, &out)?;
    }
    Ok(out)
}

/// Two-line CSV summary (header and values) of a run's metrics.
pub fn metrics_summary(m: &Metrics) -> String {
    format!("{}\n{}\n", report::METRICS_HEADER.join(","), report::metrics_fields(m).join(","))
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub strategy: Strategy,
    pub seed: u64,
    pub metrics: Metrics,
}

/// Runs `(strategy, seed)` pairs on `cfg` in parallel; results come back in
/// input order.
pub fn run_batch(cfg: &ScenarioConfig, jobs: &[(Strategy, u64)]) -> Result<Vec<RunResult>, CliError> {
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let chunk = jobs.len().div_ceil(workers).max(1);
    let results: Vec<Result<Vec<RunResult>, CliError>> = thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&(strategy, seed)| {
                            let mut c = cfg.clone();
                            c.strategy = strategy;
                            c.seed = seed;
                            let out = run_with(&c, &RunOptions::default())?;
                            log::info!("{strategy} seed {seed}: CT {:.1} CR {:.4}", out.metrics.ct, out.metrics.cr);
                            Ok(RunResult { strategy, seed, metrics: out.metrics })
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
    });
    let mut all = Vec::with_capacity(jobs.len());
    for r in results {
        all.extend(r?);
    }
    Ok(all)
}

/// Paired runs of several strategies over the same seeds.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunResult>,
}

impl Comparison {
    pub fn runs_of(&self, s: Strategy) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.strategy == s)
    }

    pub fn stat(&self, s: Strategy, metric: &str) -> Option<Stat> {
        Stat::of(self.runs_of(s).map(|r| metric_value(&r.metrics, metric)))
    }

    /// Mean ToTD curve; a step is `None` if any run never reached it.
    pub fn mean_totd(&self, s: Strategy) -> Vec<Option<f64>> {
        let runs: Vec<&RunResult> = self.runs_of(s).collect();
        (0..care_core::engine::TOTD_STEPS)
            .map(|k| {
                let vals: Option<Vec<f64>> = runs.iter().map(|r| r.metrics.totd[k]).collect();
                vals.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    }

    pub fn write_table<W: io::Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(COMPARE_HEADER)?;
        for &s in &self.strategies {
            for metric in SUMMARY_METRICS {
                w.write_record(stat_fields(s, metric, self.stat(s, metric)))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Per-run ToTD rows followed by one `mean` row per strategy.
    pub fn write_totd<W: io::Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["strategy".to_string(), "seed".to_string()];
        header.extend(report::totd_header());
        w.write_record(&header)?;
        let fmt_opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for &s in &self.strategies {
            for r in self.runs_of(s) {
                let mut row = vec![s.to_string(), r.seed.to_string()];
                row.extend(r.metrics.totd.iter().map(|t| fmt_opt(*t)));
                w.write_record(&row)?;
            }
            let mut row = vec![s.to_string(), "mean".to_string()];
            row.extend(self.mean_totd(s).into_iter().map(fmt_opt));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn stat_fields(s: Strategy, metric: &str, st: Option<Stat>) -> Vec<String> {
    let mut row = vec![s.to_string(), metric.to_string()];
    match st {
        Some(st) => row.extend([st.mean.to_string(), st.min.to_string(), st.max.to_string(), st.n.to_string()]),
        None => row.extend([String::new(), String::new(), String::new(), "0".to_string()]),
    }
    row
}

pub fn compare_config(cfg: &ScenarioConfig, strategies: &[Strategy], seeds: &[u64]) -> Result<Comparison, CliError> {
    if strategies.is_empty() || seeds.is_empty() {
        return Err(CliError::Usage("compare needs at least one strategy and one seed".into()));
    }
    let jobs: Vec<(Strategy, u64)> = strategies.iter().flat_map(|&s| seeds.iter().map(move |&k| (s, k))).collect();
    Ok(Comparison { strategies: strategies.to_vec(), seeds: seeds.to_vec(), runs: run_batch(cfg, &jobs)? })
}

/// Runs every strategy on every seed. Writes `compare.csv` and `totd.csv`
/// when an output directory is given.
pub fn cmd_compare(
    path: &Path,
    strategies: &[Strategy],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<Comparison, CliError> {
    let cfg = ScenarioConfig::load(path)?;
    let cmp = compare_config(&cfg, strategies, seeds)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        cmp.write_table(fs::File::create(dir.join("compare.csv"))?)?;
        cmp.write_totd(fs::File::create(dir.join("totd.csv"))?)?;
    }
    Ok(cmp)
}

/// Parameter varied by `sweep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Team size: keeps the first `n` robots of the scenario.
    N,
    /// Uniform expected target count per task.
    Lambda,
    Kappa1,
    Kappa2,
    /// Localization noise in metres.
    Sigma,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::N => "n",
            SweepParam::Lambda => "lambda",
            SweepParam::Kappa1 => "kappa1",
            SweepParam::Kappa2 => "kappa2",
            SweepParam::Sigma => "sigma",
        }
    }

    /// `cfg` with this parameter set to `value`.
    pub fn apply(self, cfg: &ScenarioConfig, value: f64) -> Result<ScenarioConfig, CliError> {
        let whole = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(CliError::Usage(format!("{} needs a whole number, got {value}", self.name())))
            }
        };
        let mut c = cfg.clone();
        match self {
            SweepParam::N => {
                let n = whole()?;
                if n == 0 || n > cfg.robots.len() {
                    return Err(CliError::Usage(format!("team size {n} outside 1..={}", cfg.robots.len())));
                }
                c.truncate_team(n);
            }
            SweepParam::Lambda => c.set_uniform_lambda(value),
            SweepParam::Kappa1 => c.params.kappa1 = whole()?,
            SweepParam::Kappa2 => c.params.kappa2 = whole()?,
            SweepParam::Sigma => c.params.noise_sigma_m = value,
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "n" => Ok(SweepParam::N),
            "lambda" => Ok(SweepParam::Lambda),
            "kappa1" => Ok(SweepParam::Kappa1),
            "kappa2" => Ok(SweepParam::Kappa2),
            "sigma" => Ok(SweepParam::Sigma),
            other => Err(CliError::Usage(format!(
                "unknown sweep parameter `{other}` (expected n, lambda, kappa1, kappa2 or sigma)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub param: SweepParam,
    pub points: Vec<(f64, Comparison)>,
}

impl Sweep {
    pub fn write_table<W: io::Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SWEEP_HEADER)?;
        for (value, cmp) in &self.points {
            for &s in &cmp.strategies {
                for metric in SUMMARY_METRICS {
                    let mut row = vec![self.param.to_string(), value.to_string()];
                    row.extend(stat_fields(s, metric, cmp.stat(s, metric)));
                    w.write_record(&row)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn sweep_config(
    cfg: &ScenarioConfig,
    param: SweepParam,
    values: &[f64],
    strategies: &[Strategy],
    seeds: &[u64],
) -> Result<Sweep, CliError> {
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    for &v in values {
        points.push((v, compare_config(&param.apply(cfg, v)?, strategies, seeds)?));
    }
    Ok(Sweep { param, points })
}

/// Compares the strategies at each value of `param`; writes `sweep.csv`
/// when an output directory is given.
pub fn cmd_sweep(
    path: &Path,
    param: SweepParam,
    values: &[f64],
    strategies: &[Strategy],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<Sweep, CliError> {
    let cfg = ScenarioConfig::load(path)?;
    let sweep = sweep_config(&cfg, param, values, strategies, seeds)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        sweep.write_table(fs::File::create(dir.join("sweep.csv"))?)?;
    }
    Ok(sweep)
}
