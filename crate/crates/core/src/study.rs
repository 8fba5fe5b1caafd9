//! Simulation and timing protocols: ISE replication studies, objective-function
//! benchmarks and `Q_r` benchmarks, with a versioned JSON report.

use std::time::{Duration, Instant};

use rand_chacha::rand_core::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::q_r;
use crate::grid::{make_grid, Sample};
use crate::mixture::{exact_ise, mixture_catalog, MixtureFile, NormalMixture, StudyRng};
use crate::selector::{ms, normal_scale_bandwidth, select_bandwidth, LscvProblem, SelectorConfig};
use crate::strategy::{strategy, StrategyRegistry, DEFAULT_TAU, DIRECT_EXACT, FFT_TRUNCATED};

pub const REPORT_VERSION: u32 = 1;

/// Default ISE above which a replication counts as a failed selection.
pub const DEFAULT_FAILURE_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportTimings {
    pub binning_ms: f64,
    pub objective_evals: usize,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEnvironment {
    pub seed: Option<u64>,
    pub version: String,
    pub threads: usize,
}

/// Machine-readable outcome of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub report_version: u32,
    pub command: String,
    pub config: serde_json::Value,
    pub results: serde_json::Value,
    pub timings: ReportTimings,
    pub environment: ReportEnvironment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunReport {
    pub fn new<C: Serialize, R: Serialize>(
        command: &str,
        config: &C,
        results: &R,
        timings: ReportTimings,
        seed: Option<u64>,
        threads: usize,
    ) -> Result<Self> {
        Ok(Self {
            report_version: REPORT_VERSION,
            command: command.to_string(),
            config: to_value(config)?,
            results: to_value(results)?,
            timings,
            environment: ReportEnvironment {
                seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
                threads,
            },
            error: None,
        })
    }

    pub fn failure(command: &str, error: &Error, seed: Option<u64>) -> Self {
        Self {
            report_version: REPORT_VERSION,
            command: command.to_string(),
            config: serde_json::Value::Null,
            results: serde_json::Value::Null,
            timings: ReportTimings::default(),
            environment: ReportEnvironment {
                seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
                threads: 1,
            },
            error: Some(error.to_string()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("report: {e}")))
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Runs `f` once to warm up, then `reps` times; returns every timed duration.
pub fn time_reps<T, F>(reps: usize, mut f: F) -> Result<(Vec<Duration>, T)>
where
    F: FnMut() -> Result<T>,
{
    let mut last = f()?;
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        last = f()?;
        times.push(t.elapsed());
    }
    Ok((times, last))
}

pub fn mean_ms(times: &[Duration]) -> f64 {
    if times.is_empty() {
        return 0.0;
    }
    times.iter().map(|t| ms(*t)).sum::<f64>() / times.len() as f64
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Independent stream per `(n, replication)`, shared across grid sizes so that
/// grids are compared on identical samples.
pub fn replication_rng(seed: u64, n: usize, rep: usize) -> StudyRng {
    let mut rng = StudyRng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) ^ rep as u64);
    rng
}

fn with_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

/// Target density: a catalog name or an explicit mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Named(String),
    Mixture(MixtureFile),
}

impl Target {
    pub fn resolve(&self) -> Result<NormalMixture> {
        match self {
            Target::Named(name) => mixture_catalog(name),
            Target::Mixture(file) => NormalMixture::from_file(file),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IseStudyConfig {
    pub target: Target,
    pub ns: Vec<usize>,
    pub grids: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub threshold: f64,
    pub threads: usize,
    pub selector: SelectorConfig,
}

impl Default for IseStudyConfig {
    fn default() -> Self {
        Self {
            target: Target::Named("standard".into()),
            ns: vec![256],
            grids: vec![20, 150],
            reps: 30,
            seed: 1,
            threshold: DEFAULT_FAILURE_THRESHOLD,
            threads: 1,
            selector: SelectorConfig::default(),
        }
    }
}

/// Outcome of all replications for one `(n, grid)` pair. `ise[i]` is `None`
/// when replication `i` failed to produce a bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IseCell {
    pub n: usize,
    pub grid: usize,
    pub ise: Vec<Option<f64>>,
    pub median: Option<f64>,
    pub failures: usize,
    pub errors: usize,
    pub not_converged: usize,
    pub evaluations: usize,
    pub binning_ms: f64,
    pub total_ms: f64,
}

struct RepOutcome {
    ise: Option<f64>,
    converged: bool,
    evaluations: usize,
    binning_ms: f64,
    total_ms: f64,
}

pub fn ise_study(cfg: &IseStudyConfig) -> Result<Vec<IseCell>> {
    if cfg.reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    if cfg.ns.is_empty() || cfg.grids.is_empty() {
        return Err(Error::InvalidConfig("need at least one sample size and one grid".into()));
    }
    cfg.selector.validate()?;
    let mix = cfg.target.resolve()?;

    let jobs: Vec<(usize, usize, usize)> = cfg
        .ns
        .iter()
        .flat_map(|&n| {
            cfg.grids.iter().flat_map(move |&g| (0..cfg.reps).map(move |rep| (n, g, rep)))
        })
        .collect();

    let run = |&(n, grid, rep): &(usize, usize, usize)| -> Result<RepOutcome> {
        let mut rng = replication_rng(cfg.seed, n, rep);
        let sample = crate::mixture::sample_mixture_with(&mix, n, &mut rng)?;
        let sel = SelectorConfig { grid_sizes: vec![grid], ..cfg.selector.clone() };
        Ok(match select_bandwidth(&sample, &sel) {
            Ok(res) => RepOutcome {
                ise: Some(exact_ise(&sample, &res.h, &mix)?),
                converged: res.converged,
                evaluations: res.evaluations,
                binning_ms: res.timings.binning_ms,
                total_ms: res.timings.total_ms,
            },
            Err(Error::SingularBandwidth { .. }) => RepOutcome {
                ise: None,
                converged: false,
                evaluations: 0,
                binning_ms: 0.0,
                total_ms: 0.0,
            },
            Err(e) => return Err(e),
        })
    };
    let outcomes: Vec<RepOutcome> =
        with_pool(cfg.threads, || jobs.par_iter().map(run).collect::<Result<Vec<_>>>())??;

    let mut cells = Vec::new();
    for (chunk, &(n, grid, _)) in outcomes.chunks(cfg.reps).zip(jobs.iter().step_by(cfg.reps)) {
        let ise: Vec<Option<f64>> = chunk.iter().map(|o| o.ise).collect();
        let finite: Vec<f64> = ise.iter().flatten().copied().collect();
        let errors = ise.iter().filter(|v| v.is_none()).count();
        cells.push(IseCell {
            n,
            grid,
            median: median(&finite),
            failures: errors + finite.iter().filter(|&&v| !(v <= cfg.threshold)).count(),
            errors,
            not_converged: chunk.iter().filter(|o| !o.converged).count(),
            evaluations: chunk.iter().map(|o| o.evaluations).sum(),
            binning_ms: chunk.iter().map(|o| o.binning_ms).sum(),
            total_ms: chunk.iter().map(|o| o.total_ms).sum(),
            ise,
        });
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub target: Target,
    pub ns: Vec<usize>,
    pub grids: Vec<usize>,
    pub modes: Vec<String>,
    pub reps: usize,
    pub seed: u64,
    pub tau: f64,
    pub r: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            target: Target::Named("standard".into()),
            ns: vec![400, 4000],
            grids: vec![180],
            modes: vec![FFT_TRUNCATED.into()],
            reps: 5,
            seed: 1,
            tau: DEFAULT_TAU,
            r: 0,
        }
    }
}

/// Mean time of one objective evaluation, binning included, for one cell.
/// `grid` is `None` for strategies that work on raw observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub mode: String,
    pub n: usize,
    pub grid: Option<usize>,
    pub reps: usize,
    pub mean_ms: f64,
    pub binning_ms: f64,
    pub value: f64,
}

/// Times `reps` evaluations of the LSCV objective at the normal-scale
/// bandwidth, each starting from the raw sample, after one warmup run.
pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchCell>> {
    let mix = cfg.target.resolve()?;
    let registry = StrategyRegistry::default();
    let mut cells = Vec::new();
    for mode in &cfg.modes {
        let uses_grid = strategy(mode, cfg.tau)?.uses_grid();
        let grids: Vec<Option<usize>> =
            if uses_grid { cfg.grids.iter().map(|&g| Some(g)).collect() } else { vec![None] };
        for &n in &cfg.ns {
            let sample = crate::mixture::sample_mixture_with(&mix, n, &mut replication_rng(cfg.seed, n, 0))?;
            let h = normal_scale_bandwidth(&sample)?;
            for grid in &grids {
                let sel = SelectorConfig {
                    mode: mode.clone(),
                    grid_sizes: vec![grid.unwrap_or(2)],
                    tau: cfg.tau,
                    r: cfg.r,
                    ..SelectorConfig::default()
                };
                let mut binning = Vec::with_capacity(cfg.reps);
                let (times, value) = time_reps(cfg.reps, || {
                    let problem = LscvProblem::new(sample.clone(), &sel, &registry)?;
                    binning.push(problem.binning_time());
                    problem.objective(&h)
                })?;
                cells.push(BenchCell {
                    mode: mode.clone(),
                    n,
                    grid: *grid,
                    reps: cfg.reps,
                    mean_ms: mean_ms(&times),
                    binning_ms: mean_ms(&binning[1..]),
                    value,
                });
            }
        }
    }
    Ok(cells)
}

/// Mean time of linear binning alone on a fixed grid.
pub fn bench_binning(sample: &Sample, grid: usize, reps: usize) -> Result<f64> {
    let spec = make_grid(sample, &vec![grid; sample.dim()], crate::grid::DEFAULT_MARGIN)?;
    let (times, _) = time_reps(reps, || crate::grid::linear_binning(sample, &spec))?;
    Ok(mean_ms(&times))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrBenchConfig {
    pub target: Target,
    pub ns: Vec<usize>,
    pub rs: Vec<usize>,
    pub grid: usize,
    pub mode: String,
    pub reps: usize,
    pub seed: u64,
    pub tau: f64,
    /// Skip the quadratic baseline above this sample size.
    pub direct_max_n: usize,
}

impl Default for QrBenchConfig {
    fn default() -> Self {
        Self {
            target: Target::Named("standard".into()),
            ns: vec![1000, 10000],
            rs: vec![0, 2, 4],
            grid: 100,
            mode: FFT_TRUNCATED.into(),
            reps: 3,
            seed: 1,
            tau: DEFAULT_TAU,
            direct_max_n: 20000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrCell {
    pub n: usize,
    pub r: usize,
    pub direct_ms: Option<f64>,
    pub fft_ms: f64,
    pub direct_value: Option<f64>,
    pub fft_value: f64,
    pub rel_diff: Option<f64>,
}

/// `Q_r(Σ)` at the normal-scale bandwidth `Σ`, raw double sum against a grid strategy.
/// The grid strategy's time includes binning.
pub fn qr_bench(cfg: &QrBenchConfig) -> Result<Vec<QrCell>> {
    let mix = cfg.target.resolve()?;
    let mut cells = Vec::new();
    for &n in &cfg.ns {
        let sample = crate::mixture::sample_mixture_with(&mix, n, &mut replication_rng(cfg.seed, n, 0))?;
        let sigma = normal_scale_bandwidth(&sample)?;
        let spec = make_grid(&sample, &vec![cfg.grid; sample.dim()], crate::grid::DEFAULT_MARGIN)?;
        for &r in &cfg.rs {
            let (fft_times, fft_value) =
                time_reps(cfg.reps, || q_r(&sample, &sigma, r, &cfg.mode, &spec, cfg.tau))?;
            let direct = if n <= cfg.direct_max_n {
                Some(time_reps(cfg.reps, || q_r(&sample, &sigma, r, DIRECT_EXACT, &spec, cfg.tau))?)
            } else {
                None
            };
            let direct_value = direct.as_ref().map(|d| d.1);
            cells.push(QrCell {
                n,
                r,
                direct_ms: direct.as_ref().map(|d| mean_ms(&d.0)),
                fft_ms: mean_ms(&fft_times),
                direct_value,
                fft_value,
                rel_diff: direct_value.map(|v| ((fft_value - v) / v).abs()),
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_round_trip() {
        let cfg = IseStudyConfig::default();
        let report = RunReport::new(
            "ise-study",
            &cfg,
            &vec![0.1_f64, 1.0 / 3.0, 2.5e-17],
            ReportTimings { binning_ms: 0.25, objective_evals: 12, total_ms: 1.0 / 7.0 },
            Some(9),
            2,
        )
        .unwrap();
        let back = RunReport::from_json(&report.to_json()).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.report_version, 1);
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn single_replication_is_finite_and_deterministic() {
        let cfg = IseStudyConfig {
            ns: vec![128],
            grids: vec![50],
            reps: 1,
            ..IseStudyConfig::default()
        };
        let a = ise_study(&cfg).unwrap();
        let b = ise_study(&cfg).unwrap();
        assert_eq!(a.len(), 1);
        let ise = a[0].ise[0].unwrap();
        assert!(ise.is_finite() && ise >= 0.0);
        assert_eq!(a[0].ise, b[0].ise);
    }

    #[test]
    fn unknown_model() {
        let cfg = IseStudyConfig { target: Target::Named("nope".into()), ..IseStudyConfig::default() };
        assert_eq!(ise_study(&cfg).unwrap_err(), Error::UnknownModel("nope".into()));
    }
}
