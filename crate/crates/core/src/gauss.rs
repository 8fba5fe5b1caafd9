//! Multivariate normal density, its Kronecker-stacked derivatives and the
//! scalar contractions `η_{r,s}` built on top of them.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{kron, kron_power, vec, BandwidthMatrix, Matrix};

/// Highest functional order accepted by default (η_r needs derivatives of order 2r).
pub const DEFAULT_MAX_ORDER: usize = 8;

/// `(2π)^{-d/2} |Σ|^{-1/2}`
pub fn normal_peak(sigma: &BandwidthMatrix) -> f64 {
    (2.0 * PI).powf(-(sigma.dim() as f64) / 2.0) / sigma.det().sqrt()
}

pub fn normal_pdf(x: &[f64], sigma: &BandwidthMatrix) -> f64 {
    debug_assert_eq!(x.len(), sigma.dim());
    normal_peak(sigma) * (-0.5 * sigma.inv_quad_form(x)).exp()
}

/// `D^{⊗r} Φ_Σ(x)`, a vector of length `d^r`.
///
/// Entry `(i_1, …, i_r)` (first index slowest) is `∂_{i_1}⋯∂_{i_r} Φ_Σ(x)`.
/// Built with the multivariate Hermite recurrence on `z = Σ⁻¹x`:
/// `h_r(i_1, rest) = -z_{i_1} h_{r-1}(rest) - Σ_k (Σ⁻¹)_{i_1 i_k} h_{r-2}(rest \ i_k)`.
pub fn gaussian_derivative_vector(x: &[f64], sigma: &BandwidthMatrix, r: usize) -> Vec<f64> {
    let d = sigma.dim();
    let sinv = sigma.inverse();
    let z = sinv.matvec(x);
    let phi = normal_pdf(x, sigma);

    let mut prev2: Vec<f64> = Vec::new();
    let mut prev: Vec<f64> = vec![1.0];
    for order in 1..=r {
        let len = d.pow(order as u32);
        let tail = d.pow(order as u32 - 1);
        let mut cur = vec![0.0; len];
        let mut digits = vec![0usize; order];
        for (idx, slot) in cur.iter_mut().enumerate() {
            let mut rem = idx;
            for pos in (0..order).rev() {
                digits[pos] = rem % d;
                rem /= d;
            }
            let first = digits[0];
            let mut v = -z[first] * prev[idx % tail];
            if order >= 2 {
                for k in 1..order {
                    let coef = sinv[(first, digits[k])];
                    if coef == 0.0 {
                        continue;
                    }
                    let mut reduced = 0;
                    for (pos, &dg) in digits.iter().enumerate().skip(1) {
                        if pos != k {
                            reduced = reduced * d + dg;
                        }
                    }
                    v -= coef * prev2[reduced];
                }
            }
            *slot = v;
        }
        prev2 = std::mem::replace(&mut prev, cur);
    }
    prev.into_iter().map(|h| h * phi).collect()
}

/// Parameters of `η_{r,s}(·; A, B, Σ)`.
#[derive(Debug, Clone)]
pub struct EtaSpec {
    pub r: usize,
    pub s: usize,
    pub a: Matrix,
    pub b: Matrix,
    pub sigma: BandwidthMatrix,
}

impl EtaSpec {
    pub fn new(r: usize, s: usize, a: Matrix, b: Matrix, sigma: BandwidthMatrix) -> Result<Self> {
        let d = sigma.dim();
        for m in [&a, &b] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::DimensionMismatch { expected: d, got: m.rows() });
            }
            m.check_symmetric(1e-12)?;
        }
        Ok(Self { r, s, a, b, sigma })
    }

    /// `η_r(·; Σ)`: `A = I`, `s = 0`.
    pub fn eta_r(r: usize, sigma: BandwidthMatrix) -> Self {
        let d = sigma.dim();
        Self { r, s: 0, a: Matrix::identity(d), b: Matrix::identity(d), sigma }
    }
}

/// Sparse polynomial in `d` variables keyed by exponent vectors.
#[derive(Debug, Clone, Default)]
struct Poly {
    terms: BTreeMap<Vec<u16>, f64>,
}

impl Poly {
    fn one(dim: usize) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(vec![0; dim], 1.0);
        Self { terms }
    }

    fn add_term(&mut self, exps: Vec<u16>, coef: f64) {
        if coef == 0.0 {
            return;
        }
        *self.terms.entry(exps).or_insert(0.0) += coef;
    }

    /// Applies `p ↦ tr(M ∇²p) - 2 zᵀN∇p - t·p + (zᵀAz)·p`, the action of
    /// `Σ A_ab ∂_a ∂_b` on `p(Σ⁻¹x)·Φ_Σ(x)` written in `z = Σ⁻¹x`,
    /// with `M = Σ⁻¹AΣ⁻¹`, `N = AΣ⁻¹`, `t = tr(AΣ⁻¹)`.
    fn apply_second_order(&self, a: &Matrix, m: &Matrix, n: &Matrix, t: f64) -> Self {
        let d = a.rows();
        let mut out = Poly::default();
        for (exps, &coef) in &self.terms {
            // tr(M ∇²p)
            for i in 0..d {
                for j in 0..d {
                    let mij = m[(i, j)];
                    if mij == 0.0 {
                        continue;
                    }
                    let mut e = exps.clone();
                    let mut c = coef * mij;
                    if e[i] == 0 {
                        continue;
                    }
                    c *= e[i] as f64;
                    e[i] -= 1;
                    if e[j] == 0 {
                        continue;
                    }
                    c *= e[j] as f64;
                    e[j] -= 1;
                    out.add_term(e, c);
                }
            }
            // -2 Σ_{a,c} z_a N_ac ∂_c p
            for c in 0..d {
                if exps[c] == 0 {
                    continue;
                }
                for row in 0..d {
                    let nac = n[(row, c)];
                    if nac == 0.0 {
                        continue;
                    }
                    let mut e = exps.clone();
                    let k = e[c] as f64;
                    e[c] -= 1;
                    e[row] += 1;
                    out.add_term(e, -2.0 * coef * nac * k);
                }
            }
            out.add_term(exps.clone(), -t * coef);
            for i in 0..d {
                for j in 0..d {
                    let aij = a[(i, j)];
                    if aij == 0.0 {
                        continue;
                    }
                    let mut e = exps.clone();
                    e[i] += 1;
                    e[j] += 1;
                    out.add_term(e, coef * aij);
                }
            }
        }
        out.terms.retain(|_, c| *c != 0.0);
        out
    }
}

/// Precomputed `η_{r,s}(·; A, B, Σ)` for repeated evaluation.
///
/// `(vecᵀA)^{⊗r} ⊗ (vecᵀB)^{⊗s} · D^{⊗2r+2s}` is the differential operator
/// `(Σ A_ab ∂_a∂_b)^r (Σ B_ab ∂_a∂_b)^s`, so the result is `Φ_Σ(x)·p(Σ⁻¹x)` for a
/// polynomial `p` of degree `2r+2s` computed once here.
#[derive(Debug, Clone)]
pub struct EtaOperator {
    sigma: BandwidthMatrix,
    peak: f64,
    degree: usize,
    exps: Vec<Vec<u16>>,
    coefs: Vec<f64>,
}

impl EtaOperator {
    pub fn new(spec: &EtaSpec) -> Result<Self> {
        let d = spec.sigma.dim();
        let sinv = spec.sigma.inverse();
        let mut p = Poly::one(d);
        for (mat, times) in [(&spec.b, spec.s), (&spec.a, spec.r)] {
            if times == 0 {
                continue;
            }
            let n = mat.matmul(sinv)?;
            let m = sinv.matmul(&n)?;
            let t = n.trace();
            for _ in 0..times {
                p = p.apply_second_order(mat, &m, &n, t);
            }
        }
        let (exps, coefs) = p.terms.into_iter().unzip();
        Ok(Self {
            peak: normal_peak(&spec.sigma),
            sigma: spec.sigma.clone(),
            degree: 2 * (spec.r + spec.s),
            exps,
            coefs,
        })
    }

    pub fn eta_r(r: usize, sigma: &BandwidthMatrix) -> Self {
        Self::new(&EtaSpec::eta_r(r, sigma.clone())).expect("identity contraction is well formed")
    }

    pub fn sigma(&self) -> &BandwidthMatrix {
        &self.sigma
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let sinv = self.sigma.inverse();
        let d = x.len();
        let mut z = [0.0; 8];
        let mut zv;
        let z: &mut [f64] = if d <= 8 {
            &mut z[..d]
        } else {
            zv = vec![0.0; d];
            &mut zv
        };
        let mut q = 0.0;
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += sinv[(i, j)] * x[j];
            }
            z[i] = acc;
            q += acc * x[i];
        }
        let phi = self.peak * (-0.5 * q).exp();
        if self.degree == 0 {
            return phi;
        }
        let deg = self.degree;
        let mut powers = vec![1.0; d * (deg + 1)];
        for i in 0..d {
            for e in 1..=deg {
                powers[i * (deg + 1) + e] = powers[i * (deg + 1) + e - 1] * z[i];
            }
        }
        let mut poly = 0.0;
        for (exps, &c) in self.exps.iter().zip(&self.coefs) {
            let mut term = c;
            for (i, &e) in exps.iter().enumerate() {
                term *= powers[i * (deg + 1) + e as usize];
            }
            poly += term;
        }
        phi * poly
    }
}

/// `η_{r,s}(x; A, B, Σ)`.
pub fn eta_rs(x: &[f64], spec: &EtaSpec) -> Result<f64> {
    Ok(EtaOperator::new(spec)?.eval(x))
}

/// `η_r(x; Σ) = η_{r,0}(x; I, Σ)`.
pub fn eta_r(x: &[f64], sigma: &BandwidthMatrix, r: usize) -> f64 {
    EtaOperator::eta_r(r, sigma).eval(x)
}

/// `η_{r,s}` by explicit Kronecker contraction of the full derivative vector.
/// Costs `O(d^{2r+2s})`; used to cross-check [`EtaOperator`].
pub fn eta_rs_contracted(x: &[f64], spec: &EtaSpec) -> f64 {
    let weights = kron(&kron_power(&vec(&spec.a), spec.r), &kron_power(&vec(&spec.b), spec.s));
    let deriv = gaussian_derivative_vector(x, &spec.sigma, 2 * (spec.r + spec.s));
    weights.iter().zip(&deriv).map(|(w, g)| w * g).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    const INV_2PI: f64 = 0.159_154_943_091_895_35;

    #[test]
    fn pdf_examples() {
        let i2 = BandwidthMatrix::identity(2);
        assert!((normal_pdf(&[0.0, 0.0], &i2) - INV_2PI).abs() < 1e-15);
        let i1 = BandwidthMatrix::identity(1);
        assert!((normal_pdf(&[1.0], &i1) - 0.241_970_724_519_143_37).abs() < 1e-15);
        let two = BandwidthMatrix::diagonal(&[2.0, 2.0]).unwrap();
        assert!((normal_pdf(&[0.0, 0.0], &two) - INV_2PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn derivative_vector_low_orders() {
        let i2 = BandwidthMatrix::identity(2);
        assert_eq!(gaussian_derivative_vector(&[0.0, 0.0], &i2, 0), vec![INV_2PI]);
        let h = BandwidthMatrix::from_rows(&[[2.0, 0.4], [0.4, 1.0]]).unwrap();
        let g = gaussian_derivative_vector(&[0.0, 0.0], &h, 1);
        assert!(g.iter().all(|v| *v == 0.0));
        assert_eq!(gaussian_derivative_vector(&[0.1, 0.2], &h, 3).len(), 8);
    }

    #[test]
    fn eta_examples() {
        let i1 = BandwidthMatrix::identity(1);
        let spec = EtaSpec::eta_r(1, i1);
        assert!((eta_rs(&[0.0], &spec).unwrap() + 0.398_942_280_401_432_7).abs() < 1e-15);
        let i2 = BandwidthMatrix::identity(2);
        assert!((eta_r(&[0.0, 0.0], &i2, 1) + 2.0 * INV_2PI).abs() < 1e-15);
        assert!((eta_r(&[0.3, -0.2], &i2, 0) - normal_pdf(&[0.3, -0.2], &i2)).abs() < 1e-18);
    }

    #[test]
    fn eta_operator_matches_contraction() {
        let sigma = BandwidthMatrix::from_rows(&[[1.3, -0.4], [-0.4, 0.7]]).unwrap();
        let a = Matrix::from_rows(&[[0.9, 0.2], [0.2, 1.4]]).unwrap();
        let b = Matrix::from_rows(&[[0.5, -0.3], [-0.3, 0.8]]).unwrap();
        let x = [0.4, -0.9];
        for (r, s) in [(0, 0), (1, 0), (0, 1), (1, 1), (2, 1), (2, 2)] {
            let spec = EtaSpec::new(r, s, a.clone(), b.clone(), sigma.clone()).unwrap();
            let fast = eta_rs(&x, &spec).unwrap();
            let slow = eta_rs_contracted(&x, &spec);
            assert!((fast - slow).abs() <= 1e-11 * slow.abs().max(1e-3), "{r},{s}: {fast} {slow}");
        }
    }
}
