//! Zero-padded d-dimensional FFT convolution of grid counts with kernel grids.
//!
//! Layout (0-based, per axis `k`, with halfwidth `L` and grid size `M`):
//! the kernel block `k_{-L..=L}` occupies indices `0..=2L` of its padded
//! array, the counts occupy `L..L+M`, and after the circular convolution the
//! linear convolution value for node `i` sits at index `(i + 2L) mod P`.
//! For the full-range case (`L = M - 1`) this is the window
//! `[2M-2, 3M-3]`. Any `P >= M + 2L - 1` (and `P >= M`) avoids aliasing
//! inside that window.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{next_index, strides, GridCounts, GridSpec};
use crate::linalg::BandwidthMatrix;

/// `L_k = min(M_k - 1, ceil(τ √λ / δ_k))`.
pub fn effective_halfwidths_for_lambda(lambda: f64, spec: &GridSpec, tau: f64) -> Vec<usize> {
    let reach = tau * lambda.abs().sqrt();
    spec.sizes()
        .iter()
        .zip(spec.deltas())
        .map(|(&m, &delta)| {
            let l = (reach / delta).ceil();
            if l.is_finite() && l < (m - 1) as f64 {
                l.max(0.0) as usize
            } else {
                m - 1
            }
        })
        .collect()
}

/// Truncation halfwidths from the largest eigenvalue of `h`.
pub fn effective_halfwidths(h: &BandwidthMatrix, spec: &GridSpec, tau: f64) -> Vec<usize> {
    effective_halfwidths_for_lambda(h.lambda_max(), spec, tau)
}

/// `2^ceil(log2(3M - 1))`
pub fn padded_size_full(m: usize) -> usize {
    (3 * m - 1).next_power_of_two()
}

/// `2^ceil(log2(M + 2L - 1))`, never smaller than `M`.
pub fn padded_size_truncated(m: usize, l: usize) -> usize {
    (m + 2 * l).saturating_sub(1).max(m).next_power_of_two()
}

/// Kernel values `k_j` on the lattice of offsets `j_k ∈ [-L_k, L_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrid {
    halfwidths: Vec<usize>,
    values: Vec<f64>,
}

impl KernelGrid {
    pub fn new(halfwidths: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = halfwidths.iter().map(|l| 2 * l + 1).product();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "kernel grid needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self { halfwidths, values })
    }

    /// Evaluates `f(δ ⊙ j)` at every offset.
    pub fn from_fn<F>(deltas: &[f64], halfwidths: &[usize], f: F) -> Self
    where
        F: Fn(&[f64]) -> f64,
    {
        let shape: Vec<usize> = halfwidths.iter().map(|l| 2 * l + 1).collect();
        let total: usize = shape.iter().product();
        let mut values = Vec::with_capacity(total);
        let mut idx = vec![0usize; shape.len()];
        let mut u = vec![0.0; shape.len()];
        loop {
            for k in 0..shape.len() {
                u[k] = deltas[k] * (idx[k] as f64 - halfwidths[k] as f64);
            }
            values.push(f(&u));
            if !next_index(&mut idx, &shape) {
                break;
            }
        }
        Self { halfwidths: halfwidths.to_vec(), values }
    }

    pub fn halfwidths(&self) -> &[usize] {
        &self.halfwidths
    }

    pub fn shape(&self) -> Vec<usize> {
        self.halfwidths.iter().map(|l| 2 * l + 1).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at signed offset `j`.
    pub fn get(&self, offset: &[isize]) -> f64 {
        let shape = self.shape();
        let st = strides(&shape);
        let flat: usize = offset
            .iter()
            .zip(&self.halfwidths)
            .zip(&st)
            .map(|((&j, &l), &s)| (j + l as isize) as usize * s)
            .sum();
        self.values[flat]
    }

    pub fn center(&self) -> f64 {
        self.values[self.values.len() / 2]
    }
}

/// Complex array embedded in a power-of-two box.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedArray {
    pub shape: Vec<usize>,
    pub data: Vec<Complex64>,
    /// Position of the embedded array's first element.
    pub origin: Vec<usize>,
}

impl PaddedArray {
    pub fn real_sum(&self) -> f64 {
        self.data.iter().map(|c| c.re).sum()
    }
}

fn check_power_of_two(shape: &[usize]) -> Result<()> {
    if let Some(p) = shape.iter().find(|p| !p.is_power_of_two()) {
        return Err(Error::ShapeMismatch(format!("padded size {p} is not a power of two")));
    }
    Ok(())
}

fn embed(values: &[f64], block: &[usize], origin: &[usize], padded: &[usize]) -> Vec<Complex64> {
    let mut data = vec![Complex64::new(0.0, 0.0); padded.iter().product()];
    let pst = strides(padded);
    let last = block.len() - 1;
    let row_len = block[last];
    let outer: Vec<usize> = block[..last].to_vec();
    let mut idx = vec![0usize; last];
    let mut src = 0;
    loop {
        let mut dst = origin[last] * pst[last];
        for k in 0..last {
            dst += (idx[k] + origin[k]) * pst[k];
        }
        for (slot, &v) in data[dst..dst + row_len].iter_mut().zip(&values[src..src + row_len]) {
            *slot = Complex64::new(v, 0.0);
        }
        src += row_len;
        if last == 0 || !next_index(&mut idx, &outer) {
            break;
        }
    }
    data
}

/// Kernel block at the low corner: `k_{-L}` at index 0, `k_0` at index `L`.
pub fn zero_pad_kernel(k: &KernelGrid, padded: &[usize]) -> Result<PaddedArray> {
    let block = k.shape();
    if padded.len() != block.len() {
        return Err(Error::ShapeMismatch(format!(
            "kernel has {} axes, padding has {}",
            block.len(),
            padded.len()
        )));
    }
    check_power_of_two(padded)?;
    if let Some(axis) = (0..block.len()).find(|&a| padded[a] < block[a]) {
        return Err(Error::ShapeMismatch(format!(
            "padded size {} on axis {axis} is smaller than kernel extent {}",
            padded[axis], block[axis]
        )));
    }
    let origin = vec![0; block.len()];
    Ok(PaddedArray {
        data: embed(k.values(), &block, &origin, padded),
        shape: padded.to_vec(),
        origin,
    })
}

/// Counts embedded with their first node at index `L_k` on each axis.
pub fn zero_pad_counts(c: &GridCounts, padded: &[usize], halfwidths: &[usize]) -> Result<PaddedArray> {
    let sizes = c.spec().sizes();
    if padded.len() != sizes.len() || halfwidths.len() != sizes.len() {
        return Err(Error::ShapeMismatch(format!(
            "counts have {} axes, padding {} and halfwidths {}",
            sizes.len(),
            padded.len(),
            halfwidths.len()
        )));
    }
    check_power_of_two(padded)?;
    for axis in 0..sizes.len() {
        let need = (sizes[axis] + 2 * halfwidths[axis]).saturating_sub(1).max(sizes[axis]);
        if padded[axis] < need {
            return Err(Error::ShapeMismatch(format!(
                "padded size {} on axis {axis} is below the required {need}",
                padded[axis]
            )));
        }
    }
    Ok(embed_counts(c.counts(), sizes, padded, halfwidths))
}

fn embed_counts(counts: &[f64], sizes: &[usize], padded: &[usize], origin: &[usize]) -> PaddedArray {
    PaddedArray {
        data: embed(counts, sizes, origin, padded),
        shape: padded.to_vec(),
        origin: origin.to_vec(),
    }
}

/// Forward/inverse 1-D plans for every axis of one padded shape.
pub struct NdFft {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

fn plan_cache() -> &'static Mutex<HashMap<Vec<usize>, Arc<NdFft>>> {
    static CACHE: OnceLock<Mutex<HashMap<Vec<usize>, Arc<NdFft>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl NdFft {
    /// Shared plan for `shape`, created on first use.
    pub fn for_shape(shape: &[usize]) -> Arc<NdFft> {
        let mut cache = plan_cache().lock().unwrap_or_else(|e| e.into_inner());
        cache
            .entry(shape.to_vec())
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Arc::new(NdFft {
                    shape: shape.to_vec(),
                    forward: shape.iter().map(|&p| planner.plan_fft_forward(p)).collect(),
                    inverse: shape.iter().map(|&p| planner.plan_fft_inverse(p)).collect(),
                })
            })
            .clone()
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// Unnormalized inverse; divide by [`NdFft::len`] to invert [`NdFft::forward`].
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(data.len(), self.len(), "buffer does not match plan shape");
        let d = self.shape.len();
        let st = strides(&self.shape);
        let scratch_len = plans.iter().map(|p| p.get_inplace_scratch_len()).max().unwrap_or(0);
        let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
        for axis in 0..d {
            let p = self.shape[axis];
            let plan = &plans[axis];
            if axis == d - 1 {
                plan.process_with_scratch(data, &mut scratch);
                continue;
            }
            let stride = st[axis];
            let block = p * stride;
            let mut line = vec![Complex64::new(0.0, 0.0); p];
            for start in (0..data.len()).step_by(block) {
                for inner in 0..stride {
                    let base = start + inner;
                    for (t, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + t * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (t, v) in line.iter().enumerate() {
                        data[base + t * stride] = *v;
                    }
                }
            }
        }
    }
}

/// Normalized inverse of a forward transform.
pub fn inverse_normalized(plan: &NdFft, data: &mut [Complex64]) {
    plan.inverse(data);
    let scale = 1.0 / plan.len() as f64;
    data.iter_mut().for_each(|v| *v *= scale);
}

/// Linear convolution `out[i] = Σ_j c[i-j] k[j]` over `|j_k| <= L_k` via FFT,
/// padded to `padded` (each a power of two, `P_k >= M_k + 2L_k - 1`).
pub fn convolve_with_padding(c: &GridCounts, k: &KernelGrid, padded: &[usize]) -> Result<Vec<f64>> {
    let sizes = c.spec().sizes();
    let l = k.halfwidths();
    if l.len() != sizes.len() {
        return Err(Error::ShapeMismatch(format!(
            "kernel has {} axes, counts have {}",
            l.len(),
            sizes.len()
        )));
    }
    if let Some(axis) = (0..sizes.len()).find(|&a| l[a] > 0 && l[a] >= sizes[a]) {
        return Err(Error::ShapeMismatch(format!(
            "halfwidth {} on axis {axis} exceeds grid size {} - 1",
            l[axis], sizes[axis]
        )));
    }
    let mut cz = zero_pad_counts(c, padded, l)?.data;
    let mut kz = zero_pad_kernel(k, padded)?.data;
    let plan = NdFft::for_shape(padded);
    plan.forward(&mut cz);
    plan.forward(&mut kz);
    for (a, b) in cz.iter_mut().zip(&kz) {
        *a *= b;
    }
    inverse_normalized(&plan, &mut cz);
    Ok(extract_window(&cz, sizes, padded, l))
}

/// Reads node `i` of the convolution from index `(i + 2L) mod P`.
fn extract_window(s: &[Complex64], sizes: &[usize], padded: &[usize], l: &[usize]) -> Vec<f64> {
    let shift: Vec<usize> = l.iter().map(|v| 2 * v).collect();
    read_window(s, sizes, padded, &shift)
}

fn read_window(s: &[Complex64], sizes: &[usize], padded: &[usize], shift: &[usize]) -> Vec<f64> {
    let pst = strides(padded);
    let total: usize = sizes.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; sizes.len()];
    loop {
        let flat: usize = (0..sizes.len())
            .map(|k| ((idx[k] + shift[k]) % padded[k]) * pst[k])
            .sum();
        out.push(s[flat].re);
        if !next_index(&mut idx, sizes) {
            break;
        }
    }
    out
}

/// FFT convolution with the truncated padding rule `P_k = 2^ceil(log2(M_k + 2L_k - 1))`.
pub fn convolve_counts_kernel(c: &GridCounts, k: &KernelGrid) -> Result<Vec<f64>> {
    let padded: Vec<usize> = c
        .spec()
        .sizes()
        .iter()
        .zip(k.halfwidths())
        .map(|(&m, &l)| padded_size_truncated(m, l))
        .collect();
    convolve_with_padding(c, k, &padded)
}

/// Direct nested-loop convolution, `O(∏M_k · ∏(2L_k+1))`.
pub fn convolve_direct(c: &GridCounts, k: &KernelGrid) -> Result<Vec<f64>> {
    let sizes = c.spec().sizes();
    let l = k.halfwidths();
    if l.len() != sizes.len() {
        return Err(Error::ShapeMismatch(format!(
            "kernel has {} axes, counts have {}",
            l.len(),
            sizes.len()
        )));
    }
    let d = sizes.len();
    let kshape = k.shape();
    let cst = strides(sizes);
    let counts = c.counts();
    let kv = k.values();
    let mut out = vec![0.0; counts.len()];
    let mut i = vec![0usize; d];
    let mut oi = 0;
    loop {
        let mut acc = 0.0;
        let mut jdx = vec![0usize; d];
        let mut ki = 0;
        loop {
            // c index = i - (jdx - L)
            let mut flat = 0usize;
            let mut inside = true;
            for a in 0..d {
                let pos = i[a] as isize - (jdx[a] as isize - l[a] as isize);
                if pos < 0 || pos >= sizes[a] as isize {
                    inside = false;
                    break;
                }
                flat += pos as usize * cst[a];
            }
            if inside {
                acc += counts[flat] * kv[ki];
            }
            ki += 1;
            if !next_index(&mut jdx, &kshape) {
                break;
            }
        }
        out[oi] = acc;
        oi += 1;
        if !next_index(&mut i, sizes) {
            break;
        }
    }
    Ok(out)
}

/// Transforms the counts once for a fixed padded shape so repeated
/// convolutions only transform the kernel. The counts sit at the origin, so
/// node `i` of a convolution with halfwidths `L` is read at `i + L`.
#[derive(Debug, Clone)]
pub struct CountsSpectrum {
    pub padded: Vec<usize>,
    pub spectrum: Vec<Complex64>,
}

impl CountsSpectrum {
    pub fn new(c: &GridCounts, padded: &[usize]) -> Result<Self> {
        let zeros = vec![0; padded.len()];
        let mut data = zero_pad_counts(c, padded, &zeros)?.data;
        NdFft::for_shape(padded).forward(&mut data);
        Ok(Self { padded: padded.to_vec(), spectrum: data })
    }

    /// Same result as [`convolve_with_padding`].
    pub fn convolve(&self, sizes: &[usize], k: &KernelGrid) -> Result<Vec<f64>> {
        let l = k.halfwidths();
        if l.len() != sizes.len() || sizes.len() != self.padded.len() {
            return Err(Error::ShapeMismatch("kernel, grid and padding axes differ".into()));
        }
        if let Some(axis) = (0..sizes.len()).find(|&a| self.padded[a] < sizes[a] + 2 * l[a] - 1) {
            return Err(Error::ShapeMismatch(format!(
                "padded size {} on axis {axis} is below M + 2L - 1 = {}",
                self.padded[axis],
                sizes[axis] + 2 * l[axis] - 1
            )));
        }
        let plan = NdFft::for_shape(&self.padded);
        let mut kz = zero_pad_kernel(k, &self.padded)?.data;
        plan.forward(&mut kz);
        for (a, b) in kz.iter_mut().zip(&self.spectrum) {
            *a *= b;
        }
        inverse_normalized(&plan, &mut kz);
        Ok(read_window(&kz, sizes, &self.padded, l))
    }
}
