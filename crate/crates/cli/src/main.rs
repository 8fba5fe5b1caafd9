mod input;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use fastband::grid::{make_grid, GridSpec, Sample};
use fastband::linalg::BandwidthMatrix;
use fastband::mixture::NormalMixture;
use fastband::selector::{
    bandwidth_rows, kde_on_grid, ms, select_bandwidth, Constraint, SelectorConfig,
};
use fastband::study::{
    bench, ise_study, qr_bench, BenchConfig, IseStudyConfig, QrBenchConfig, ReportTimings,
    RunReport, Target,
};
use fastband::{Error, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "fastband", version, about = "FFT-accelerated LSCV bandwidth matrix selection")]
struct Cli {
    /// Worker threads for study commands
    #[arg(long, global = true, env = "FASTBAND_THREADS", default_value_t = 1)]
    threads: usize,

    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Write the report here instead of stdout
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select a bandwidth matrix for the data in a CSV file
    Select {
        input: PathBuf,
        #[arg(long)]
        header: bool,
        #[command(flatten)]
        selector: SelectorArgs,
    },
    /// Repeated selection on simulated samples, scored by exact ISE
    IseStudy {
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long = "n", value_delimiter = ',', default_values_t = [256])]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        /// ISE above which a replication counts as failed
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        /// Also write one `n,grid,rep,ise` line per replication
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        selector: SelectorArgs,
    },
    /// Time single objective evaluations per strategy, sample size and grid
    Bench {
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long = "n", value_delimiter = ',', default_values_t = [400, 4000])]
        ns: Vec<usize>,
        #[arg(long = "grid", value_delimiter = ',', default_values_t = [180])]
        grids: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = ["direct-exact".to_string(), "fft-M".to_string(), "fft-L".to_string()])]
        modes: Vec<String>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = fastband::strategy::DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        r: usize,
    },
    /// Compare the raw double sum with a grid strategy for Q_r
    QrBench {
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long = "n", value_delimiter = ',', default_values_t = [1000, 10000])]
        ns: Vec<usize>,
        #[arg(long = "r", value_delimiter = ',', default_values_t = [0, 2, 4])]
        rs: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long, default_value = "fft-L")]
        mode: String,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = fastband::strategy::DEFAULT_TAU)]
        tau: f64,
        /// Skip the quadratic baseline above this sample size
        #[arg(long, default_value_t = 20000)]
        direct_max_n: usize,
    },
    /// Evaluate the density estimate on a grid and print it as CSV
    Density {
        input: PathBuf,
        #[arg(long)]
        header: bool,
        /// Bandwidth matrix as rows, e.g. "0.2,0.05;0.05,0.3"
        #[arg(long, conflicts_with = "select")]
        h: Option<String>,
        /// Select the bandwidth by LSCV first
        #[arg(long)]
        select: bool,
        /// Evaluation grid points per axis
        #[arg(long = "points", value_delimiter = ',', default_values_t = [100])]
        points: Vec<usize>,
        #[command(flatten)]
        selector: SelectorArgs,
    },
}

#[derive(Args)]
struct TargetArgs {
    /// Built-in mixture name
    #[arg(long, default_value = "standard")]
    model: String,
    /// JSON mixture file with `weights`, `means`, `covs`
    #[arg(long)]
    mixture: Option<PathBuf>,
}

impl TargetArgs {
    fn target(&self) -> Result<Target> {
        match &self.mixture {
            Some(path) => Ok(Target::Mixture(NormalMixture::load(path)?.to_file())),
            None => Ok(Target::Named(self.model.clone())),
        }
    }
}

#[derive(Args)]
struct SelectorArgs {
    /// JSON selector configuration; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    /// Grid points per axis (one value, or one per axis). For ise-study, the
    /// list of square grid sizes to compare [default: 20,150]
    #[arg(long = "grid", value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    #[arg(long)]
    tau: Option<f64>,
    /// unconstrained | diagonal
    #[arg(long)]
    constraint: Option<Constraint>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    min_points: Option<usize>,
    /// Keep duplicate observations
    #[arg(long)]
    no_dedup: bool,
    /// Exact leave-one-out weights instead of n ≈ n - 1
    #[arg(long)]
    exact_loo: bool,
    /// Starting bandwidth matrix as rows, e.g. "1,0;0,1"
    #[arg(long)]
    start: Option<String>,
}

impl SelectorArgs {
    fn config(&self) -> Result<SelectorConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?
            }
            None => SelectorConfig::default(),
        };
        if let Some(m) = &self.mode {
            cfg.mode = m.clone();
        }
        if let Some(g) = &self.grid {
            cfg.grid_sizes = g.clone();
        }
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        if let Some(c) = self.constraint {
            cfg.constraint = c;
        }
        if let Some(r) = self.r {
            cfg.r = r;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.rel_tol {
            cfg.rel_tol = v;
        }
        if let Some(v) = self.margin {
            cfg.margin = v;
        }
        if let Some(v) = self.min_points {
            cfg.min_points = v;
        }
        if self.no_dedup {
            cfg.dedup = false;
        }
        if self.exact_loo {
            cfg.exact_leave_one_out = true;
        }
        if let Some(s) = &self.start {
            cfg.start = Some(input::parse_matrix(s)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct GridSummary {
    lo: Vec<f64>,
    hi: Vec<f64>,
    sizes: Vec<usize>,
}

impl From<&GridSpec> for GridSummary {
    fn from(g: &GridSpec) -> Self {
        Self { lo: g.lo().to_vec(), hi: g.hi().to_vec(), sizes: g.sizes().to_vec() }
    }
}

#[derive(Serialize)]
struct SelectOutput {
    h: Vec<Vec<f64>>,
    objective: f64,
    iterations: usize,
    evaluations: usize,
    converged: bool,
    n_input: usize,
    n_used: usize,
    grid: Option<GridSummary>,
    optimization_ms: f64,
}

fn cmd_select(cli: &Cli, sample: &Sample, cfg: &SelectorConfig) -> Result<RunReport> {
    let res = select_bandwidth(sample, cfg)?;
    let out = SelectOutput {
        h: bandwidth_rows(&res.h),
        objective: res.objective,
        iterations: res.iterations,
        evaluations: res.evaluations,
        converged: res.converged,
        n_input: res.n_input,
        n_used: res.n_used,
        grid: res.grid.as_ref().map(GridSummary::from),
        optimization_ms: res.timings.optimization_ms,
    };
    let timings = ReportTimings {
        binning_ms: res.timings.binning_ms,
        objective_evals: res.evaluations,
        total_ms: res.timings.total_ms,
    };
    RunReport::new("select", cfg, &out, timings, Some(cli.seed), 1)
}

/// Grid for plotting: the selection margin around the deduplicated data, or a
/// wider one when the bandwidth is large.
fn density_grid(sample: &Sample, h: &BandwidthMatrix, points: &[usize]) -> Result<GridSpec> {
    let d = sample.dim();
    let sizes = match points.len() {
        1 => vec![points[0]; d],
        len if len == d => points.to_vec(),
        len => return Err(Error::DimensionMismatch { expected: d, got: len }),
    };
    let base = make_grid(sample, &sizes, 0.0)?;
    let lo = (0..d).map(|k| base.lo()[k] - 4.0 * h.get(k, k).sqrt()).collect();
    let hi = (0..d).map(|k| base.hi()[k] + 4.0 * h.get(k, k).sqrt()).collect();
    GridSpec::new(lo, hi, sizes)
}

fn write_density(spec: &GridSpec, f: &[f64], out: &mut dyn Write) -> std::io::Result<()> {
    let names: Vec<String> = (1..=spec.dim()).map(|k| format!("x{k}")).collect();
    writeln!(out, "{},density", names.join(","))?;
    for ((_, coords), v) in spec.points().zip(f) {
        let row: Vec<String> = coords.iter().map(|c| c.to_string()).collect();
        writeln!(out, "{},{v:e}", row.join(","))?;
    }
    out.flush()
}

fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.output {
        Some(path) => fs::write(path, text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(Error::InvalidInput(format!("stdout: {e}")))
                }
                _ => Ok(()),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    match &cli.command {
        Command::Select { input, header, selector } => {
            let cfg = selector.config()?;
            let sample = input::read_csv(input, *header)?;
            emit(cli, &cmd_select(cli, &sample, &cfg)?.to_json())
        }
        Command::IseStudy { target, ns, reps, threshold, csv, selector } => {
            let grids = selector.grid.clone().unwrap_or_else(|| vec![20, 150]);
            let cfg = IseStudyConfig {
                target: target.target()?,
                ns: ns.clone(),
                grids,
                reps: *reps,
                seed: cli.seed,
                threshold: *threshold,
                threads: cli.threads,
                selector: selector.config()?,
            };
            let cells = ise_study(&cfg)?;
            if let Some(path) = csv {
                let mut text = String::from("n,grid,rep,ise\n");
                for c in &cells {
                    for (rep, v) in c.ise.iter().enumerate() {
                        let v = v.map_or(String::new(), |v| v.to_string());
                        text.push_str(&format!("{},{},{rep},{v}\n", c.n, c.grid));
                    }
                }
                fs::write(path, text)
                    .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
            }
            let timings = ReportTimings {
                binning_ms: cells.iter().map(|c| c.binning_ms).sum(),
                objective_evals: cells.iter().map(|c| c.evaluations).sum(),
                total_ms: ms(started.elapsed()),
            };
            let report = RunReport::new("ise-study", &cfg, &cells, timings, Some(cli.seed), cli.threads)?;
            emit(cli, &report.to_json())
        }
        Command::Bench { target, ns, grids, modes, reps, tau, r } => {
            let cfg = BenchConfig {
                target: target.target()?,
                ns: ns.clone(),
                grids: grids.clone(),
                modes: modes.clone(),
                reps: *reps,
                seed: cli.seed,
                tau: *tau,
                r: *r,
            };
            let cells = bench(&cfg)?;
            let timings = ReportTimings {
                binning_ms: cells.iter().map(|c| c.binning_ms * c.reps as f64).sum(),
                objective_evals: cells.iter().map(|c| c.reps + 1).sum(),
                total_ms: ms(started.elapsed()),
            };
            emit(cli, &RunReport::new("bench", &cfg, &cells, timings, Some(cli.seed), 1)?.to_json())
        }
        Command::QrBench { target, ns, rs, grid, mode, reps, tau, direct_max_n } => {
            let cfg = QrBenchConfig {
                target: target.target()?,
                ns: ns.clone(),
                rs: rs.clone(),
                grid: *grid,
                mode: mode.clone(),
                reps: *reps,
                seed: cli.seed,
                tau: *tau,
                direct_max_n: *direct_max_n,
            };
            let cells = qr_bench(&cfg)?;
            let timings = ReportTimings { total_ms: ms(started.elapsed()), ..Default::default() };
            emit(cli, &RunReport::new("qr-bench", &cfg, &cells, timings, Some(cli.seed), 1)?.to_json())
        }
        Command::Density { input, header, h, select, points, selector } => {
            let sample = input::read_csv(input, *header)?;
            let h = match (h, select) {
                (Some(text), _) => BandwidthMatrix::from_rows(&input::parse_matrix(text)?)?,
                (None, true) => select_bandwidth(&sample, &selector.config()?)?.h,
                (None, false) => {
                    return Err(Error::InvalidConfig("pass --h or --select".into()));
                }
            };
            if h.dim() != sample.dim() {
                return Err(Error::DimensionMismatch { expected: sample.dim(), got: h.dim() });
            }
            let spec = density_grid(&sample, &h, points)?;
            let f = kde_on_grid(&sample, &h, &spec)?;
            let written = match &cli.output {
                Some(path) => fs::File::create(path).and_then(|file| {
                    write_density(&spec, &f, &mut std::io::BufWriter::new(file))
                }),
                None => write_density(&spec, &f, &mut std::io::BufWriter::new(std::io::stdout().lock())),
            };
            match written {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    return Err(Error::InvalidInput(format!("density output: {e}")));
                }
                _ => {}
            }
            let mass = f.iter().sum::<f64>() * spec.deltas().iter().product::<f64>();
            eprintln!("grid mass {mass:.6}");
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NotPositiveDefinite { .. } | Error::SingularBandwidth { .. } => 3,
        _ => 2,
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Select { .. } => "select",
        Command::IseStudy { .. } => "ise-study",
        Command::Bench { .. } => "bench",
        Command::QrBench { .. } => "qr-bench",
        Command::Density { .. } => "density",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = RunReport::failure(command_name(&cli.command), &e, Some(cli.seed));
            let _ = writeln!(std::io::stdout(), "{}", report.to_json());
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
