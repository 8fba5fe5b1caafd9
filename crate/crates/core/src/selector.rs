//! Least-squares cross-validation bandwidth selection.
//!
//! The objective for derivative order `r` is
//!
//! ```text
//! LSCV_r(H) = (-1)^r { n⁻² Σ_i Σ_j [η_r(X_i-X_j; 2H) - 2η_r(X_i-X_j; H)] + 2n⁻¹ K_H(0) }
//! ```
//!
//! minimized with Nelder–Mead over the log-Cholesky parameters of `H`.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{convolve_counts_kernel, KernelGrid};
use crate::functionals::{check_even, kh_zero, EtaKernel, LscvKernel};
use crate::gauss::{eta_r, normal_pdf, DEFAULT_MAX_ORDER};
use crate::grid::{linear_binning, make_grid, GridCounts, GridSpec, Sample, DEFAULT_MARGIN};
use crate::linalg::{BandwidthMatrix, Matrix, SpdParam};
use crate::strategy::{
    PairData, PairSumStrategy, StrategyOptions, StrategyRegistry, DEFAULT_TAU, FFT_TRUNCATED,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    /// Any symmetric positive definite matrix.
    #[default]
    Unconstrained,
    /// Positive definite diagonal matrices.
    Diagonal,
}

impl std::str::FromStr for Constraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unconstrained" | "full" => Ok(Self::Unconstrained),
            "diagonal" | "diag" => Ok(Self::Diagonal),
            other => Err(Error::InvalidConfig(format!("unknown constraint `{other}`"))),
        }
    }
}

/// Reflection, contraction and expansion factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for SimplexParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.5, gamma: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub mode: String,
    pub constraint: Constraint,
    pub r: usize,
    /// Grid points per axis; a single entry is used for every axis.
    pub grid_sizes: Vec<usize>,
    /// Fraction of each axis range added on both sides of the grid.
    pub margin: f64,
    pub tau: f64,
    pub simplex: SimplexParams,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub dedup: bool,
    pub min_points: usize,
    pub max_order: usize,
    /// Use the leave-one-out weights `1/(n(n-1))` instead of `n ≈ n-1`.
    pub exact_leave_one_out: bool,
    /// Starting bandwidth matrix (rows); defaults to the normal-scale diagonal.
    pub start: Option<Vec<Vec<f64>>>,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            mode: FFT_TRUNCATED.to_string(),
            constraint: Constraint::Unconstrained,
            r: 0,
            grid_sizes: vec![150],
            margin: DEFAULT_MARGIN,
            tau: DEFAULT_TAU,
            simplex: SimplexParams::default(),
            max_iter: 2000,
            rel_tol: 1e-8,
            dedup: true,
            min_points: 10,
            max_order: DEFAULT_MAX_ORDER,
            exact_leave_one_out: false,
            start: None,
        }
    }
}

impl SelectorConfig {
    pub fn with_mode(mode: &str) -> Self {
        Self { mode: mode.to_string(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.simplex;
        if !(s.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be > 0, got {}", s.alpha)));
        }
        if !(s.beta > 0.0 && s.beta < 1.0) {
            return Err(Error::InvalidConfig(format!("beta must lie in (0, 1), got {}", s.beta)));
        }
        if !(s.gamma > 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must be > 1, got {}", s.gamma)));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig(format!("rel_tol must be > 0, got {}", self.rel_tol)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::InvalidConfig("margin must be non-negative".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if self.grid_sizes.is_empty() || self.grid_sizes.iter().any(|&m| m < 2) {
            return Err(Error::InvalidConfig("every grid size must be at least 2".into()));
        }
        check_even(self.r)?;
        if self.r > self.max_order {
            return Err(Error::InvalidConfig(format!(
                "derivative order {} exceeds the maximum {}",
                self.r, self.max_order
            )));
        }
        Ok(())
    }

    /// Grid sizes expanded to `d` axes.
    pub fn sizes_for(&self, d: usize) -> Result<Vec<usize>> {
        match self.grid_sizes.len() {
            1 => Ok(vec![self.grid_sizes[0]; d]),
            len if len == d => Ok(self.grid_sizes.clone()),
            len => Err(Error::DimensionMismatch { expected: d, got: len }),
        }
    }

    fn options(&self) -> StrategyOptions {
        StrategyOptions { tau: self.tau }
    }
}

/// Removes exact duplicate rows, keeping first occurrences in order.
/// Returns the reduced sample and the number of rows dropped.
pub fn dedup(sample: &Sample) -> Result<(Sample, usize)> {
    let mut seen = HashSet::with_capacity(sample.len());
    let mut data = Vec::with_capacity(sample.as_slice().len());
    for row in sample.rows() {
        // +0.0 and -0.0 are the same observation
        let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
        if seen.insert(key) {
            data.extend_from_slice(row);
        }
    }
    let kept = data.len() / sample.dim();
    if kept < 2 {
        return Err(Error::AllDuplicates);
    }
    Ok((Sample::new(sample.dim(), data)?, sample.len() - kept))
}

/// Rows in lexicographic order, so that sums over the sample do not depend on input order.
fn canonical_order(sample: &Sample) -> Sample {
    let mut rows: Vec<&[f64]> = sample.rows().collect();
    rows.sort_by(|a, b| {
        a.iter().zip(*b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let data = rows.concat();
    Sample::new(sample.dim(), data).expect("rows of a valid sample")
}

fn preprocess(sample: &Sample, cfg: &SelectorConfig) -> Result<(Sample, usize)> {
    let (s, removed) = if cfg.dedup { dedup(sample)? } else { (sample.clone(), 0) };
    if s.len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: s.len() });
    }
    Ok((canonical_order(&s), removed))
}

/// Normal-scale bandwidth restricted to the diagonal:
/// `(4/(d+2))^{2/(d+4)} n^{-2/(d+4)} diag(s_1², …, s_d²)`.
pub fn normal_scale_bandwidth(sample: &Sample) -> Result<BandwidthMatrix> {
    let d = sample.dim();
    let n = sample.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let cov = sample.covariance();
    let df = d as f64;
    let factor = (4.0 / (df + 2.0)).powf(2.0 / (df + 4.0)) * (n as f64).powf(-2.0 / (df + 4.0));
    let diag: Vec<f64> = (0..d).map(|k| cov[k * d + k] * factor).collect();
    if let Some(axis) = diag.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::DegenerateAxis { axis });
    }
    BandwidthMatrix::diagonal(&diag)
}

/// Prepared LSCV objective: the sample (binned once if the strategy needs a grid)
/// and the chosen pair-sum strategy.
#[derive(Debug)]
pub struct LscvProblem {
    data: PairData,
    strategy: Box<dyn PairSumStrategy>,
    n: usize,
    dim: usize,
    r: usize,
    exact_loo: bool,
    binning: Duration,
}

impl LscvProblem {
    /// Uses `sample` as given (no deduplication).
    pub fn new(sample: Sample, cfg: &SelectorConfig, registry: &StrategyRegistry) -> Result<Self> {
        cfg.validate()?;
        let strategy = registry.create(&cfg.mode, &cfg.options())?;
        let n = sample.len();
        let dim = sample.dim();
        let started = Instant::now();
        let data = if strategy.uses_grid() {
            let spec = make_grid(&sample, &cfg.sizes_for(dim)?, cfg.margin)?;
            let counts = linear_binning(&sample, &spec)?;
            PairData::with_counts(sample, counts)
        } else {
            PairData::raw(sample)
        };
        let binning = started.elapsed();
        Ok(Self { data, strategy, n, dim, r: cfg.r, exact_loo: cfg.exact_leave_one_out, binning })
    }

    /// Objective on pre-binned counts; only grid strategies apply.
    pub fn from_counts(counts: GridCounts, cfg: &SelectorConfig, registry: &StrategyRegistry) -> Result<Self> {
        cfg.validate()?;
        let strategy = registry.create(&cfg.mode, &cfg.options())?;
        if !strategy.uses_grid() {
            return Err(Error::InvalidConfig(format!("`{}` needs the raw sample", cfg.mode)));
        }
        let n = counts.n();
        let dim = counts.spec().dim();
        Ok(Self {
            data: PairData::counts_only(counts),
            strategy,
            n,
            dim,
            r: cfg.r,
            exact_loo: cfg.exact_leave_one_out,
            binning: Duration::ZERO,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn strategy_name(&self) -> &'static str {
        self.strategy.name()
    }

    pub fn binning_time(&self) -> Duration {
        self.binning
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        self.data.binned.as_ref().map(|b| b.counts().spec())
    }

    pub fn objective(&self, h: &BandwidthMatrix) -> Result<f64> {
        if h.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: h.dim() });
        }
        let sign = if self.r % 2 == 0 { 1.0 } else { -1.0 };
        let n = self.n as f64;
        let value = if self.exact_loo {
            let wide = self.strategy.pair_sum(&self.data, &EtaKernel::new(&h.scaled(2.0)?, self.r))?;
            let narrow = self.strategy.pair_sum(&self.data, &EtaKernel::new(h, self.r))?;
            let at_zero = eta_r(&vec![0.0; self.dim], h, self.r);
            wide - 2.0 * (n * narrow - at_zero) / (n - 1.0)
        } else {
            let psi = self.strategy.pair_sum(&self.data, &LscvKernel::new(h, self.r)?)?;
            psi + 2.0 * kh_zero(h) / n
        };
        Ok(sign * value)
    }
}

/// LSCV objective at `h` after the same preprocessing `select_bandwidth` applies.
pub fn lscv_objective(sample: &Sample, h: &BandwidthMatrix, cfg: &SelectorConfig) -> Result<f64> {
    let (s, _) = preprocess(sample, cfg)?;
    LscvProblem::new(s, cfg, &StrategyRegistry::default())?.objective(h)
}

/// LSCV objective from grid counts.
pub fn lscv_objective_binned(counts: &GridCounts, h: &BandwidthMatrix, cfg: &SelectorConfig) -> Result<f64> {
    LscvProblem::from_counts(counts.clone(), cfg, &StrategyRegistry::default())?.objective(h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub simplex: SimplexParams,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub shrink: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { simplex: SimplexParams::default(), max_iter: 2000, rel_tol: 1e-8, shrink: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder–Mead simplex minimization starting from `start` with initial edge
/// lengths `steps`. NaN values are treated as `+∞`.
///
/// Stops when both the spread of function values is at most
/// `rel_tol·(1 + |f_best|)` and the simplex diameter (∞-norm) is at most
/// `rel_tol·(1 + ‖x_best‖∞)`, or after `max_iter` iterations.
pub fn nelder_mead<F>(mut f: F, start: &[f64], steps: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = start.len();
    let SimplexParams { alpha, beta, gamma } = opts.simplex;
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    pts.push(start.to_vec());
    for i in 0..dim {
        let mut p = start.to_vec();
        p[i] += if steps[i] != 0.0 { steps[i] } else { 0.05 };
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = vec![0.0; dim];
    loop {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let best = vals[0];
        let spread = vals[dim] - best;
        let diameter = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let scale = pts[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if best.is_finite()
            && spread <= opts.rel_tol * (1.0 + best.abs())
            && diameter <= opts.rel_tol * (1.0 + scale)
        {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for p in &pts[..dim] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / dim as f64;
            }
        }
        let along = |t: f64, p: &[f64]| -> Vec<f64> {
            centroid.iter().zip(p).map(|(c, v)| c + t * (v - c)).collect()
        };

        let worst = pts[dim].clone();
        let xr = along(-alpha, &worst);
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = along(-alpha * gamma, &worst);
            let fe = eval(&xe);
            if fe < fr {
                pts[dim] = xe;
                vals[dim] = fe;
            } else {
                pts[dim] = xr;
                vals[dim] = fr;
            }
            continue;
        }
        if fr < vals[dim - 1] {
            pts[dim] = xr;
            vals[dim] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < vals[dim] {
            let xc = along(-alpha * beta, &worst);
            let fc = eval(&xc);
            let ok = fc <= fr;
            (xc, fc, ok)
        } else {
            let xc = along(beta, &worst);
            let fc = eval(&xc);
            let ok = fc < vals[dim];
            (xc, fc, ok)
        };
        if accept {
            pts[dim] = xc;
            vals[dim] = fc;
            continue;
        }
        let best_pt = pts[0].clone();
        for i in 1..=dim {
            for (v, b) in pts[i].iter_mut().zip(&best_pt) {
                *v = b + opts.shrink * (*v - b);
            }
            vals[i] = eval(&pts[i]);
        }
    }

    NelderMeadResult {
        x: pts.swap_remove(0),
        value: vals[0],
        iterations,
        evaluations,
        converged,
    }
}

/// Wall-clock split of a selection, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub binning_ms: f64,
    pub optimization_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub h: BandwidthMatrix,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub n_input: usize,
    pub n_used: usize,
    pub grid: Option<GridSpec>,
    pub timings: Timings,
}

/// Maps optimizer coordinates to full log-Cholesky parameters.
fn expand_theta(constraint: Constraint, dim: usize, x: &[f64]) -> Vec<f64> {
    match constraint {
        Constraint::Unconstrained => x.to_vec(),
        Constraint::Diagonal => {
            let mut theta = vec![0.0; SpdParam::len_for(dim)];
            for (k, v) in x.iter().enumerate() {
                theta[k * (k + 1) / 2 + k] = *v;
            }
            theta
        }
    }
}

fn decode(constraint: Constraint, dim: usize, x: &[f64]) -> Result<BandwidthMatrix> {
    SpdParam::new(dim, expand_theta(constraint, dim, x))?.decode()
}

fn start_point(constraint: Constraint, h0: &BandwidthMatrix) -> (Vec<f64>, Vec<f64>) {
    let d = h0.dim();
    let theta = SpdParam::encode(h0).into_theta();
    let l = h0.cholesky();
    match constraint {
        Constraint::Unconstrained => {
            let mut steps = Vec::with_capacity(theta.len());
            for i in 0..d {
                for j in 0..=i {
                    steps.push(if i == j { 0.1 } else { 0.1 * (l[(i, i)] * l[(j, j)]).sqrt() });
                }
            }
            (theta, steps)
        }
        Constraint::Diagonal => {
            let x: Vec<f64> = (0..d).map(|k| theta[k * (k + 1) / 2 + k]).collect();
            (x, vec![0.1; d])
        }
    }
}

/// Largest distance, in log units, that a log-Cholesky diagonal entry may move
/// from its starting value. Outside this box the objective is `+∞`, which stops
/// runs whose binned objective diverges as `H` collapses.
pub const LOG_SCALE_RADIUS: f64 = 20.0;

/// Deduplicate, grid, bin once, then minimize the LSCV objective.
pub fn select_bandwidth(sample: &Sample, cfg: &SelectorConfig) -> Result<SelectionResult> {
    select_bandwidth_with(sample, cfg, &StrategyRegistry::default())
}

pub fn select_bandwidth_with(
    sample: &Sample,
    cfg: &SelectorConfig,
    registry: &StrategyRegistry,
) -> Result<SelectionResult> {
    let started = Instant::now();
    cfg.validate()?;
    let min = cfg.min_points.max(2);
    if sample.len() < min {
        return Err(Error::TooFewPoints { needed: min, got: sample.len() });
    }
    let (s, _) = preprocess(sample, cfg)?;
    if s.len() < min {
        return Err(Error::TooFewPoints { needed: min, got: s.len() });
    }
    let d = s.dim();

    let h0 = match &cfg.start {
        Some(rows) => {
            let h = BandwidthMatrix::from_rows(rows)?;
            if h.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: h.dim() });
            }
            if cfg.constraint == Constraint::Diagonal {
                let diag: Vec<f64> = (0..d).map(|k| h.get(k, k)).collect();
                BandwidthMatrix::diagonal(&diag)?
            } else {
                h
            }
        }
        None => normal_scale_bandwidth(&s)?,
    };
    let n_used = s.len();
    let problem = LscvProblem::new(s, cfg, registry)?;

    let opt_started = Instant::now();
    let (x0, steps) = start_point(cfg.constraint, &h0);
    let opts = NelderMeadOptions {
        simplex: cfg.simplex,
        max_iter: cfg.max_iter,
        rel_tol: cfg.rel_tol,
        ..NelderMeadOptions::default()
    };
    let constraint = cfg.constraint;
    let diag_pos: Vec<usize> = match constraint {
        Constraint::Unconstrained => (0..d).map(|k| k * (k + 1) / 2 + k).collect(),
        Constraint::Diagonal => (0..d).collect(),
    };
    let nm = nelder_mead(
        |x| {
            if diag_pos.iter().any(|&p| (x[p] - x0[p]).abs() > LOG_SCALE_RADIUS) {
                return f64::INFINITY;
            }
            match decode(constraint, d, x).and_then(|h| problem.objective(&h)) {
                Ok(v) => v,
                Err(_) => f64::INFINITY,
            }
        },
        &x0,
        &steps,
        &opts,
    );
    let optimization = opt_started.elapsed();
    if !nm.value.is_finite() {
        return Err(Error::SingularBandwidth { det: 0.0 });
    }
    let h = decode(constraint, d, &nm.x)?;

    Ok(SelectionResult {
        h,
        objective: nm.value,
        iterations: nm.iterations,
        evaluations: nm.evaluations,
        converged: nm.converged,
        n_input: sample.len(),
        n_used,
        grid: problem.grid().cloned(),
        timings: Timings {
            binning_ms: ms(problem.binning_time()),
            optimization_ms: ms(optimization),
            total_ms: ms(started.elapsed()),
        },
    })
}

pub fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Kernel density estimate at every node of `spec`, computed as the
/// convolution of the grid counts with `K_H(δ⊙j)/n`.
pub fn kde_on_grid(sample: &Sample, h: &BandwidthMatrix, spec: &GridSpec) -> Result<Vec<f64>> {
    if h.dim() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: h.dim() });
    }
    let counts = linear_binning(sample, spec)?;
    let n = sample.len() as f64;
    let halfwidths: Vec<usize> = spec.sizes().iter().map(|m| m - 1).collect();
    let k = KernelGrid::from_fn(spec.deltas(), &halfwidths, |u| normal_pdf(u, h) / n);
    let mut f = convolve_counts_kernel(&counts, &k)?;
    // FFT round-off leaves values of order -1e-19 far from the data
    f.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(f)
}

/// Direct evaluation of `f̂(x) = n⁻¹ Σ_i K_H(x - X_i)`.
pub fn kde_at(sample: &Sample, h: &BandwidthMatrix, x: &[f64]) -> f64 {
    let mut diff = vec![0.0; x.len()];
    let total: f64 = sample
        .rows()
        .map(|xi| {
            for k in 0..x.len() {
                diff[k] = x[k] - xi[k];
            }
            normal_pdf(&diff, h)
        })
        .sum();
    total / sample.len() as f64
}

/// `H` as a plain matrix with its off-diagonal entries exactly as decoded.
pub fn bandwidth_rows(h: &BandwidthMatrix) -> Vec<Vec<f64>> {
    Matrix::to_rows(h.matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::t_h;
    use crate::strategy::{DIRECT_EXACT, FFT_FULL};

    fn std_normal_1d(u: f64, var: f64) -> f64 {
        (-0.5 * u * u / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn objective_two_points_by_hand() {
        let s = Sample::from_rows(&[[0.0], [1.0]]).unwrap();
        let h = BandwidthMatrix::diagonal(&[1.0]).unwrap();
        let cfg = SelectorConfig::with_mode(DIRECT_EXACT);
        let t = |u: f64| std_normal_1d(u, 2.0) - 2.0 * std_normal_1d(u, 1.0);
        let expected = (2.0 * t(0.0) + 2.0 * t(1.0)) / 4.0 + (2.0 * std::f64::consts::PI).powf(-0.5);
        let v = lscv_objective(&s, &h, &cfg).unwrap();
        assert!((v - expected).abs() < 1e-14, "{v} vs {expected}");
        assert!((t(1.0) - t_h(&[1.0], &h).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn leave_one_out_form() {
        let s = Sample::from_rows(&[[0.0], [1.0], [2.5]]).unwrap();
        let h = BandwidthMatrix::diagonal(&[0.7]).unwrap();
        let cfg = SelectorConfig { exact_leave_one_out: true, ..SelectorConfig::with_mode(DIRECT_EXACT) };
        let v = lscv_objective(&s, &h, &cfg).unwrap();
        let x = [0.0, 1.0, 2.5];
        let mut fhat_sq = 0.0;
        let mut loo = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                fhat_sq += std_normal_1d(x[i] - x[j], 1.4);
                if i != j {
                    loo += std_normal_1d(x[i] - x[j], 0.7);
                }
            }
        }
        let expected = fhat_sq / 9.0 - 2.0 * loo / 6.0;
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn nelder_mead_quadratic() {
        let r = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2),
            &[0.0, 0.0],
            &[0.5, 0.5],
            &NelderMeadOptions { rel_tol: 1e-12, ..Default::default() },
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let rosen = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let opts = NelderMeadOptions { rel_tol: 1e-12, max_iter: 5000, ..Default::default() };
        let r = nelder_mead(rosen, &[-1.2, 1.0], &[0.1, 0.1], &opts);
        assert!(r.iterations <= 5000);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
        let again = nelder_mead(rosen, &r.x, &[0.1, 0.1], &opts);
        assert!((again.value - r.value).abs() < opts.rel_tol);
    }

    #[test]
    fn nelder_mead_treats_nan_as_infinite() {
        let r = nelder_mead(
            |x| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.5).powi(2) },
            &[1.0],
            &[0.3],
            &NelderMeadOptions::default(),
        );
        assert!((r.x[0] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn dedup_examples() {
        let s = Sample::from_rows(&[[1.0, 2.0], [3.0, 4.0], [1.0, 2.0], [5.0, 6.0]]).unwrap();
        let (d, removed) = dedup(&s).unwrap();
        assert_eq!(removed, 1);
        assert_eq!(d, Sample::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap());
        let same = Sample::from_rows(&[[1.0, 1.0]; 5]).unwrap();
        assert_eq!(dedup(&same), Err(Error::AllDuplicates));
        let (d, removed) = dedup(&d).unwrap();
        assert_eq!((d.len(), removed), (3, 0));
    }

    #[test]
    fn config_validation() {
        assert!(SelectorConfig::default().validate().is_ok());
        let bad = |f: fn(&mut SelectorConfig)| {
            let mut c = SelectorConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.simplex.alpha = 0.0));
        assert!(bad(|c| c.simplex.beta = 1.0));
        assert!(bad(|c| c.simplex.gamma = 1.0));
        assert!(bad(|c| c.rel_tol = 0.0));
        assert!(bad(|c| c.r = 3));
        assert!(bad(|c| c.r = 10));
        assert!(bad(|c| c.grid_sizes = vec![1]));
    }

    #[test]
    fn too_few_points() {
        let s = Sample::from_rows(&[[0.0, 0.0], [1.0, 0.5], [0.2, 2.0]]).unwrap();
        let err = select_bandwidth(&s, &SelectorConfig::default()).unwrap_err();
        assert_eq!(err, Error::TooFewPoints { needed: 10, got: 3 });
    }

    #[test]
    fn diagonal_selection_has_zero_off_diagonals() {
        let mix = crate::mixture::mixture_catalog("correlated").unwrap();
        let s = crate::mixture::sample_mixture(&mix, 150, 7).unwrap();
        let cfg = SelectorConfig {
            constraint: Constraint::Diagonal,
            grid_sizes: vec![40],
            ..SelectorConfig::with_mode(FFT_FULL)
        };
        let r = select_bandwidth(&s, &cfg).unwrap();
        assert_eq!(r.h.get(0, 1), 0.0);
        assert_eq!(r.h.get(1, 0), 0.0);
        let again = lscv_objective(&s, &r.h, &cfg).unwrap();
        assert!((again - r.objective).abs() <= 1e-12 * r.objective.abs().max(1.0));
    }

    #[test]
    fn kde_peak_at_single_observation() {
        let s = Sample::from_rows(&[[0.31, -0.42]]).unwrap();
        let spec = GridSpec::new(vec![-2.0, -2.0], vec![2.0, 2.0], vec![41, 41]).unwrap();
        let h = BandwidthMatrix::diagonal(&[0.2, 0.2]).unwrap();
        let f = kde_on_grid(&s, &h, &spec).unwrap();
        let argmax = (0..f.len()).max_by(|&a, &b| f[a].total_cmp(&f[b])).unwrap();
        // nearest node to (0.31, -0.42) is (0.3, -0.4) -> indices (23, 16)
        assert_eq!(argmax, 23 * 41 + 16);
    }
}
