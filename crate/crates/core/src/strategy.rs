//! Interchangeable evaluators of the pairwise double sum
//! `n⁻² Σ_i Σ_j g(X_i - X_j)`, selected by name at runtime.
//!
//! | name            | method                                             | cost            |
//! |-----------------|----------------------------------------------------|-----------------|
//! | `direct-exact`  | raw observations, all pairs                        | `O(n²)`         |
//! | `direct-binned` | grid counts, nested-loop convolution (oracle only) | `O(∏M_k²)`      |
//! | `fft-M`         | grid counts, full-range zero-padded FFT            | `O(∏P log P)`   |
//! | `fft-L`         | grid counts, FFT truncated to the kernel support   | `O(∏P log P)`   |

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::fft::{
    convolve_direct, effective_halfwidths_for_lambda, padded_size_full, padded_size_truncated,
    CountsSpectrum, KernelGrid,
};
use crate::grid::{GridCounts, Sample};

pub const DIRECT_EXACT: &str = "direct-exact";
pub const DIRECT_BINNED: &str = "direct-binned";
pub const FFT_FULL: &str = "fft-M";
pub const FFT_TRUNCATED: &str = "fft-L";

/// Default support multiplier for truncated kernels.
pub const DEFAULT_TAU: f64 = 3.7;

/// An even scalar function of pairwise differences.
pub trait PairKernel: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, u: &[f64]) -> f64;

    /// Largest eigenvalue of the bandwidth that sets the kernel's effective support.
    fn support_lambda(&self) -> f64;

    fn grid(&self, deltas: &[f64], halfwidths: &[usize]) -> KernelGrid {
        KernelGrid::from_fn(deltas, halfwidths, |u| self.eval(u))
    }
}

/// Grid counts plus lazily computed count spectra, one per padded shape.
pub struct BinnedData {
    counts: GridCounts,
    spectra: Mutex<HashMap<Vec<usize>, Arc<CountsSpectrum>>>,
}

impl BinnedData {
    pub fn new(counts: GridCounts) -> Self {
        Self { counts, spectra: Mutex::new(HashMap::new()) }
    }

    pub fn counts(&self) -> &GridCounts {
        &self.counts
    }

    fn spectrum(&self, padded: &[usize]) -> Result<Arc<CountsSpectrum>> {
        let key = padded.to_vec();
        if let Some(s) = self.spectra.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(s.clone());
        }
        let s = Arc::new(CountsSpectrum::new(&self.counts, padded)?);
        let mut map = self.spectra.lock().unwrap_or_else(|e| e.into_inner());
        if map.len() >= 16 {
            map.clear();
        }
        map.insert(key, s.clone());
        Ok(s)
    }

    /// `n⁻² Σ_i c_i (c ⋆ k)_i`
    fn contract(&self, conv: &[f64]) -> f64 {
        let n = self.counts.n() as f64;
        let s: f64 = self.counts.counts().iter().zip(conv).map(|(c, v)| c * v).sum();
        s / (n * n)
    }
}

impl fmt::Debug for BinnedData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinnedData").field("counts", &self.counts).finish_non_exhaustive()
    }
}

/// Everything a strategy may read: the raw sample and, for grid strategies, its binning.
#[derive(Debug)]
pub struct PairData {
    pub sample: Option<Sample>,
    pub binned: Option<BinnedData>,
}

impl PairData {
    pub fn raw(sample: Sample) -> Self {
        Self { sample: Some(sample), binned: None }
    }

    pub fn counts_only(counts: GridCounts) -> Self {
        Self { sample: None, binned: Some(BinnedData::new(counts)) }
    }

    pub fn with_counts(sample: Sample, counts: GridCounts) -> Self {
        Self { sample: Some(sample), binned: Some(BinnedData::new(counts)) }
    }

    fn sample(&self, strategy: &str) -> Result<&Sample> {
        self.sample.as_ref().ok_or_else(|| {
            Error::InvalidConfig(format!("strategy `{strategy}` needs the raw sample"))
        })
    }

    fn binned(&self, strategy: &str) -> Result<&BinnedData> {
        self.binned.as_ref().ok_or_else(|| {
            Error::InvalidConfig(format!("strategy `{strategy}` needs grid counts"))
        })
    }
}

pub trait PairSumStrategy: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Whether the strategy works on grid counts rather than raw observations.
    fn uses_grid(&self) -> bool;

    fn pair_sum(&self, data: &PairData, kernel: &dyn PairKernel) -> Result<f64>;
}

/// Raw double sum over all observation pairs.
#[derive(Debug, Default)]
pub struct DirectExact;

impl PairSumStrategy for DirectExact {
    fn name(&self) -> &'static str {
        DIRECT_EXACT
    }

    fn uses_grid(&self) -> bool {
        false
    }

    fn pair_sum(&self, data: &PairData, kernel: &dyn PairKernel) -> Result<f64> {
        Ok(exact_pair_sum(data.sample(self.name())?, kernel))
    }
}

/// `n⁻² Σ_i Σ_j g(X_i - X_j)` using `g` even: diagonal once, off-diagonal pairs twice.
pub fn exact_pair_sum(sample: &Sample, kernel: &dyn PairKernel) -> f64 {
    let n = sample.len();
    let d = sample.dim();
    let zero = vec![0.0; d];
    let mut diff = vec![0.0; d];
    let mut off = 0.0;
    for i in 0..n {
        let xi = sample.row(i);
        let mut row = 0.0;
        for j in (i + 1)..n {
            let xj = sample.row(j);
            for k in 0..d {
                diff[k] = xi[k] - xj[k];
            }
            row += kernel.eval(&diff);
        }
        off += row;
    }
    let nf = n as f64;
    (nf * kernel.eval(&zero) + 2.0 * off) / (nf * nf)
}

/// Binned double sum by direct nested-loop convolution over the full range.
#[derive(Debug, Default)]
pub struct DirectBinned;

impl PairSumStrategy for DirectBinned {
    fn name(&self) -> &'static str {
        DIRECT_BINNED
    }

    fn uses_grid(&self) -> bool {
        true
    }

    fn pair_sum(&self, data: &PairData, kernel: &dyn PairKernel) -> Result<f64> {
        let binned = data.binned(self.name())?;
        let spec = binned.counts().spec();
        let l: Vec<usize> = spec.sizes().iter().map(|m| m - 1).collect();
        let k = kernel.grid(spec.deltas(), &l);
        let conv = convolve_direct(binned.counts(), &k)?;
        Ok(binned.contract(&conv))
    }
}

/// Binned double sum by FFT with `L_k = M_k - 1` and `P_k = 2^⌈log2(3M_k-1)⌉`.
#[derive(Debug, Default)]
pub struct FftFull;

impl PairSumStrategy for FftFull {
    fn name(&self) -> &'static str {
        FFT_FULL
    }

    fn uses_grid(&self) -> bool {
        true
    }

    fn pair_sum(&self, data: &PairData, kernel: &dyn PairKernel) -> Result<f64> {
        let binned = data.binned(self.name())?;
        let spec = binned.counts().spec();
        let l: Vec<usize> = spec.sizes().iter().map(|m| m - 1).collect();
        let padded: Vec<usize> = spec.sizes().iter().map(|&m| padded_size_full(m)).collect();
        fft_pair_sum(binned, kernel, &l, &padded)
    }
}

/// Binned double sum by FFT truncated to `L_k = min(M_k-1, ⌈τ√λ/δ_k⌉)`.
#[derive(Debug)]
pub struct FftTruncated {
    pub tau: f64,
}

impl Default for FftTruncated {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU }
    }
}

impl FftTruncated {
    pub fn halfwidths(&self, binned: &BinnedData, kernel: &dyn PairKernel) -> Vec<usize> {
        effective_halfwidths_for_lambda(kernel.support_lambda(), binned.counts().spec(), self.tau)
    }
}

impl PairSumStrategy for FftTruncated {
    fn name(&self) -> &'static str {
        FFT_TRUNCATED
    }

    fn uses_grid(&self) -> bool {
        true
    }

    fn pair_sum(&self, data: &PairData, kernel: &dyn PairKernel) -> Result<f64> {
        let binned = data.binned(self.name())?;
        let spec = binned.counts().spec();
        let l = self.halfwidths(binned, kernel);
        let padded: Vec<usize> =
            spec.sizes().iter().zip(&l).map(|(&m, &l)| padded_size_truncated(m, l)).collect();
        fft_pair_sum(binned, kernel, &l, &padded)
    }
}

fn fft_pair_sum(
    binned: &BinnedData,
    kernel: &dyn PairKernel,
    halfwidths: &[usize],
    padded: &[usize],
) -> Result<f64> {
    let spec = binned.counts().spec();
    let k = kernel.grid(spec.deltas(), halfwidths);
    let spectrum = binned.spectrum(padded)?;
    let conv = spectrum.convolve(spec.sizes(), &k)?;
    Ok(binned.contract(&conv))
}

/// Construction options shared by all registered strategies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyOptions {
    pub tau: f64,
}

impl Default for StrategyOptions {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU }
    }
}

type Factory = Box<dyn Fn(&StrategyOptions) -> Result<Box<dyn PairSumStrategy>> + Send + Sync>;

/// Name → constructor map of pair-sum strategies.
pub struct StrategyRegistry {
    factories: BTreeMap<String, Factory>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&StrategyOptions) -> Result<Box<dyn PairSumStrategy>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn create(&self, name: &str, options: &StrategyOptions) -> Result<Box<dyn PairSumStrategy>> {
        let factory =
            self.factories.get(name).ok_or_else(|| Error::UnknownStrategy(name.to_string()))?;
        factory(options)
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(DIRECT_EXACT, |_| Ok(Box::new(DirectExact)));
        reg.register(DIRECT_BINNED, |_| Ok(Box::new(DirectBinned)));
        reg.register(FFT_FULL, |_| Ok(Box::new(FftFull)));
        reg.register(FFT_TRUNCATED, |opts| {
            if !(opts.tau > 0.0) {
                return Err(Error::InvalidConfig(format!("tau must be positive, got {}", opts.tau)));
            }
            Ok(Box::new(FftTruncated { tau: opts.tau }))
        });
        reg
    }
}

impl fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

/// Builds one of the default strategies by name.
pub fn strategy(name: &str, tau: f64) -> Result<Box<dyn PairSumStrategy>> {
    StrategyRegistry::default().create(name, &StrategyOptions { tau })
}
