//! Integrated density derivative functionals: the LSCV double sum `ψ_r(H)`
//! and the V-statistic `Q_r(Σ)`, exact or binned.

use crate::error::{Error, Result};
use crate::fft::KernelGrid;
use crate::gauss::{normal_pdf, normal_peak, EtaOperator};
use crate::grid::{linear_binning, GridCounts, GridSpec, Sample};
use crate::linalg::BandwidthMatrix;
use crate::strategy::{strategy, PairData, PairKernel, DIRECT_EXACT};

/// `T_H(u) = Φ_{2H}(u) - 2Φ_H(u)`, i.e. `(K_H * K_H)(u) - 2K_H(u)` for Gaussian `K`.
pub fn t_h(u: &[f64], h: &BandwidthMatrix) -> Result<f64> {
    let two_h = h.scaled(2.0)?;
    Ok(normal_pdf(u, &two_h) - 2.0 * normal_pdf(u, h))
}

/// `K_H(0) = (2π)^{-d/2} |H|^{-1/2}`
pub fn kh_zero(h: &BandwidthMatrix) -> f64 {
    normal_peak(h)
}

/// `u ↦ η_r(u; 2H) - 2η_r(u; H)`; for `r = 0` this is `T_H`.
#[derive(Debug, Clone)]
pub struct LscvKernel {
    h: BandwidthMatrix,
    wide: EtaOperator,
    narrow: EtaOperator,
}

impl LscvKernel {
    pub fn new(h: &BandwidthMatrix, r: usize) -> Result<Self> {
        let two_h = h.scaled(2.0)?;
        Ok(Self {
            h: h.clone(),
            wide: EtaOperator::eta_r(r, &two_h),
            narrow: EtaOperator::eta_r(r, h),
        })
    }
}

impl PairKernel for LscvKernel {
    fn dim(&self) -> usize {
        self.h.dim()
    }

    fn eval(&self, u: &[f64]) -> f64 {
        self.wide.eval(u) - 2.0 * self.narrow.eval(u)
    }

    fn support_lambda(&self) -> f64 {
        self.h.lambda_max()
    }
}

/// `u ↦ η_r(u; Σ)`.
#[derive(Debug, Clone)]
pub struct EtaKernel {
    op: EtaOperator,
}

impl EtaKernel {
    pub fn new(sigma: &BandwidthMatrix, r: usize) -> Self {
        Self { op: EtaOperator::eta_r(r, sigma) }
    }
}

impl PairKernel for EtaKernel {
    fn dim(&self) -> usize {
        self.op.sigma().dim()
    }

    fn eval(&self, u: &[f64]) -> f64 {
        self.op.eval(u)
    }

    fn support_lambda(&self) -> f64 {
        self.op.sigma().lambda_max()
    }
}

pub(crate) fn check_even(r: usize) -> Result<()> {
    if r % 2 != 0 {
        return Err(Error::InvalidConfig(format!("derivative order must be even, got {r}")));
    }
    Ok(())
}

/// Kernel grid `k_j = η_r(δ⊙j; 2H) - 2η_r(δ⊙j; H)` for `|j_k| <= L_k`.
pub fn build_kernel_grid(
    h: &BandwidthMatrix,
    spec: &GridSpec,
    halfwidths: &[usize],
    r: usize,
) -> Result<KernelGrid> {
    if halfwidths.len() != spec.dim() || h.dim() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: halfwidths.len() });
    }
    if let Some(axis) = (0..spec.dim()).find(|&k| halfwidths[k] + 1 > spec.sizes()[k]) {
        return Err(Error::ShapeMismatch(format!(
            "halfwidth {} on axis {axis} exceeds M - 1 = {}",
            halfwidths[axis],
            spec.sizes()[axis] - 1
        )));
    }
    Ok(LscvKernel::new(h, r)?.grid(spec.deltas(), halfwidths))
}

/// `n⁻² Σ_i Σ_j [η_r(X_i-X_j; 2H) - 2η_r(X_i-X_j; H)]` over raw observations.
pub fn psi_direct_exact(sample: &Sample, h: &BandwidthMatrix, r: usize) -> Result<f64> {
    check_even(r)?;
    check_dim(sample.dim(), h.dim())?;
    let kernel = LscvKernel::new(h, r)?;
    strategy(DIRECT_EXACT, 1.0)?.pair_sum(&PairData::raw(sample.clone()), &kernel)
}

/// Binned `ψ̃_r(H)` with one of the grid strategies (`direct-binned`, `fft-M`, `fft-L`).
pub fn psi_binned(
    counts: &GridCounts,
    h: &BandwidthMatrix,
    r: usize,
    mode: &str,
    tau: f64,
) -> Result<f64> {
    check_even(r)?;
    check_dim(counts.spec().dim(), h.dim())?;
    let strat = strategy(mode, tau)?;
    if !strat.uses_grid() {
        return Err(Error::InvalidConfig(format!("`{mode}` is not a binned strategy")));
    }
    let kernel = LscvKernel::new(h, r)?;
    strat.pair_sum(&PairData::counts_only(counts.clone()), &kernel)
}

/// `Q_r(Σ) = n⁻² Σ_i Σ_j η_r(X_i - X_j; Σ)`; grid strategies bin the sample on `spec`.
pub fn q_r(
    sample: &Sample,
    sigma: &BandwidthMatrix,
    r: usize,
    mode: &str,
    spec: &GridSpec,
    tau: f64,
) -> Result<f64> {
    check_even(r)?;
    check_dim(sample.dim(), sigma.dim())?;
    let strat = strategy(mode, tau)?;
    let data = if strat.uses_grid() {
        PairData::with_counts(sample.clone(), linear_binning(sample, spec)?)
    } else {
        PairData::raw(sample.clone())
    };
    strat.pair_sum(&data, &EtaKernel::new(sigma, r))
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::{DIRECT_BINNED, FFT_FULL, FFT_TRUNCATED};

    const INV_2PI: f64 = 0.159_154_943_091_895_35;

    #[test]
    fn t_h_examples() {
        let i2 = BandwidthMatrix::identity(2);
        let v = t_h(&[0.0, 0.0], &i2).unwrap();
        assert!((v - (INV_2PI / 2.0 - 2.0 * INV_2PI)).abs() < 1e-15);
        assert!((v + 0.238_732_414_637_843).abs() < 1e-12);
        // uᵀH⁻¹u = 200
        assert!(t_h(&[10.0, 10.0], &i2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kh_zero_examples() {
        assert!((kh_zero(&BandwidthMatrix::identity(2)) - INV_2PI).abs() < 1e-15);
        let four = BandwidthMatrix::diagonal(&[4.0, 4.0]).unwrap();
        assert!((kh_zero(&four) - INV_2PI / 4.0).abs() < 1e-15);
        let h = BandwidthMatrix::diagonal(&[2.25]).unwrap();
        assert!((kh_zero(&h) - 0.265_961_520_267_621_8).abs() < 1e-12);
    }

    #[test]
    fn kernel_grid_center_and_symmetry() {
        let spec = GridSpec::new(vec![0.0, 0.0], vec![3.0, 2.0], vec![13, 9]).unwrap();
        let h = BandwidthMatrix::from_rows(&[[0.5, 0.2], [0.2, 0.3]]).unwrap();
        let k = build_kernel_grid(&h, &spec, &[4, 3], 0).unwrap();
        assert!((k.center() - t_h(&[0.0, 0.0], &h).unwrap()).abs() < 1e-15);
        for a in -4..=4isize {
            for b in -3..=3isize {
                assert!((k.get(&[a, b]) - k.get(&[-a, -b])).abs() < 1e-12);
            }
        }
        assert!(build_kernel_grid(&h, &spec, &[13, 3], 0).is_err());
    }

    #[test]
    fn psi_single_point_and_duplicates() {
        let h = BandwidthMatrix::identity(2);
        let one = Sample::from_rows(&[[0.3, 0.4]]).unwrap();
        let two = Sample::from_rows(&[[0.3, 0.4], [0.3, 0.4]]).unwrap();
        let t0 = t_h(&[0.0, 0.0], &h).unwrap();
        assert!((psi_direct_exact(&one, &h, 0).unwrap() - t0).abs() < 1e-15);
        assert!((psi_direct_exact(&two, &h, 0).unwrap() - t0).abs() < 1e-15);
        assert!(psi_direct_exact(&one, &h, 1).is_err());
    }

    #[test]
    fn concentrated_counts_match_exact() {
        let spec = GridSpec::new(vec![0.0, 0.0], vec![4.0, 4.0], vec![5, 5]).unwrap();
        let sample = Sample::from_rows(&[[2.0, 1.0]; 7]).unwrap();
        let counts = linear_binning(&sample, &spec).unwrap();
        let h = BandwidthMatrix::from_rows(&[[0.8, -0.1], [-0.1, 0.4]]).unwrap();
        let exact = psi_direct_exact(&sample, &h, 0).unwrap();
        for mode in [DIRECT_BINNED, FFT_FULL, FFT_TRUNCATED] {
            let v = psi_binned(&counts, &h, 0, mode, 3.7).unwrap();
            assert!((v - exact).abs() < 1e-12 * exact.abs(), "{mode}: {v} vs {exact}");
        }
    }

    #[test]
    fn q_r_small_cases() {
        let sigma = BandwidthMatrix::identity(2);
        let spec = GridSpec::new(vec![-2.0, -2.0], vec![2.0, 2.0], vec![9, 9]).unwrap();
        let one = Sample::from_rows(&[[0.5, 0.5]]).unwrap();
        let v = q_r(&one, &sigma, 2, DIRECT_EXACT, &spec, 3.7).unwrap();
        let eta0 = crate::gauss::eta_r(&[0.0, 0.0], &sigma, 2);
        assert!((v - eta0).abs() < 1e-15);

        let two = Sample::from_rows(&[[0.0, 0.0], [1.0, -0.5]]).unwrap();
        let v = q_r(&two, &sigma, 0, DIRECT_EXACT, &spec, 3.7).unwrap();
        let expected =
            (2.0 * normal_pdf(&[0.0, 0.0], &sigma) + 2.0 * normal_pdf(&[-1.0, 0.5], &sigma)) / 4.0;
        assert!((v - expected).abs() < 1e-15);
    }
}
