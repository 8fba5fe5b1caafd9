//! Normal-mixture target densities with closed-form integrated squared error.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::normal_pdf;
use crate::grid::Sample;
use crate::linalg::{BandwidthMatrix, Matrix};

/// Seedable generator used for every random draw in the crate.
pub type StudyRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> StudyRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: BandwidthMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalMixture {
    dim: usize,
    components: Vec<Component>,
}

/// On-disk mixture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFile {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covs: Vec<Vec<Vec<f64>>>,
}

impl NormalMixture {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let dim = components
            .first()
            .map(|c| c.mean.len())
            .ok_or_else(|| Error::InvalidMixture("mixture has no components".into()))?;
        let mut total = 0.0;
        for (q, c) in components.iter().enumerate() {
            if !(c.weight > 0.0) {
                return Err(Error::InvalidMixture(format!("weight {q} is not positive")));
            }
            if c.mean.len() != dim || c.cov.dim() != dim {
                return Err(Error::InvalidMixture(format!("component {q} has the wrong dimension")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { dim, components })
    }

    /// Builds from parallel arrays of weights, means and row-major covariances.
    pub fn from_parts(weights: &[f64], means: &[Vec<f64>], covs: &[Vec<Vec<f64>>]) -> Result<Self> {
        if weights.len() != means.len() || weights.len() != covs.len() {
            return Err(Error::InvalidMixture(format!(
                "{} weights, {} means, {} covariances",
                weights.len(),
                means.len(),
                covs.len()
            )));
        }
        let components = weights
            .iter()
            .zip(means)
            .zip(covs)
            .map(|((&weight, mean), cov)| {
                let cov = BandwidthMatrix::new(Matrix::from_rows(cov)?)
                    .map_err(|e| Error::InvalidMixture(format!("covariance: {e}")))?;
                Ok(Component { weight, mean: mean.clone(), cov })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }

    pub fn from_file(file: &MixtureFile) -> Result<Self> {
        Self::from_parts(&file.weights, &file.means, &file.covs)
    }

    pub fn to_file(&self) -> MixtureFile {
        MixtureFile {
            weights: self.components.iter().map(|c| c.weight).collect(),
            means: self.components.iter().map(|c| c.mean.clone()).collect(),
            covs: self.components.iter().map(|c| c.cov.matrix().to_rows()).collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MixtureFile = serde_json::from_str(text)
            .map_err(|e| Error::InvalidMixture(format!("malformed JSON: {e}")))?;
        Self::from_file(&file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }
}

pub fn mixture_pdf(mix: &NormalMixture, x: &[f64]) -> f64 {
    let mut diff = vec![0.0; mix.dim];
    mix.components
        .iter()
        .map(|c| {
            for k in 0..mix.dim {
                diff[k] = x[k] - c.mean[k];
            }
            c.weight * normal_pdf(&diff, &c.cov)
        })
        .sum()
}

/// Draws `n` observations: component by weight, then `μ + L z` with `L` the Cholesky factor.
pub fn sample_mixture(mix: &NormalMixture, n: usize, seed: u64) -> Result<Sample> {
    let mut rng = rng_from_seed(seed);
    sample_mixture_with(mix, n, &mut rng)
}

pub fn sample_mixture_with(mix: &NormalMixture, n: usize, rng: &mut StudyRng) -> Result<Sample> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    let weights: Vec<f64> = mix.components.iter().map(|c| c.weight).collect();
    let chooser = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidMixture(format!("weights: {e}")))?;
    let d = mix.dim;
    let mut data = Vec::with_capacity(n * d);
    let mut z = vec![0.0; d];
    for _ in 0..n {
        let c = &mix.components[chooser.sample(rng)];
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let l = c.cov.cholesky();
        for i in 0..d {
            let mut v = c.mean[i];
            for j in 0..=i {
                v += l[(i, j)] * z[j];
            }
            data.push(v);
        }
    }
    Sample::new(d, data)
}

/// Closed-form `∫ (f̂_H - f)²` for a Gaussian-kernel estimate and a normal mixture `f`.
pub fn exact_ise(sample: &Sample, h: &BandwidthMatrix, mix: &NormalMixture) -> Result<f64> {
    let d = mix.dim;
    if sample.dim() != d || h.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: sample.dim() });
    }
    let n = sample.len() as f64;
    let two_h = h.scaled(2.0)?;
    let mut diff = vec![0.0; d];

    // ∫ f̂²
    let mut kde_sq = 0.0;
    for i in 0..sample.len() {
        let xi = sample.row(i);
        let mut row = 0.0;
        for j in (i + 1)..sample.len() {
            let xj = sample.row(j);
            for k in 0..d {
                diff[k] = xi[k] - xj[k];
            }
            row += normal_pdf(&diff, &two_h);
        }
        kde_sq += 2.0 * row;
    }
    kde_sq += n * normal_pdf(&vec![0.0; d], &two_h);
    kde_sq /= n * n;

    // ∫ f̂ f
    let widened: Vec<BandwidthMatrix> =
        mix.components.iter().map(|c| h.add(&c.cov)).collect::<Result<_>>()?;
    let mut cross = 0.0;
    for x in sample.rows() {
        for (c, cov) in mix.components.iter().zip(&widened) {
            for k in 0..d {
                diff[k] = x[k] - c.mean[k];
            }
            cross += c.weight * normal_pdf(&diff, cov);
        }
    }
    cross /= n;

    Ok(kde_sq - 2.0 * cross + mixture_self_product(mix)?)
}

/// `∫ f² = Σ_q Σ_q' w_q w_q' Φ_{Σ_q+Σ_q'}(μ_q - μ_q')`.
pub fn mixture_self_product(mix: &NormalMixture) -> Result<f64> {
    let d = mix.dim;
    let mut diff = vec![0.0; d];
    let mut total = 0.0;
    for a in &mix.components {
        for b in &mix.components {
            let cov = a.cov.add(&b.cov)?;
            for k in 0..d {
                diff[k] = a.mean[k] - b.mean[k];
            }
            total += a.weight * b.weight * normal_pdf(&diff, &cov);
        }
    }
    Ok(total)
}

/// Names accepted by [`mixture_catalog`].
pub const CATALOG: &[&str] =
    &["standard", "correlated", "bimodal", "asymmetric-bimodal", "trimodal", "fragile"];

fn comp(weight: f64, mean: [f64; 2], cov: [[f64; 2]; 2]) -> Component {
    Component {
        weight,
        mean: mean.to_vec(),
        cov: BandwidthMatrix::from_rows(&cov).expect("catalog covariances are SPD"),
    }
}

/// Built-in bivariate test densities.
///
/// * `standard` – N(0, I)
/// * `correlated` – N(0, [[1, 0.7], [0.7, 1]])
/// * `bimodal` – two well separated modes at (±1.5, 0), variances 0.25 and 1
/// * `asymmetric-bimodal` – 3/4 N((0,0), I) + 1/4 N((1.5,1.5), I/9)
/// * `trimodal` – three modes on a triangle
/// * `fragile` – half of the mass in a broad mode and half in a spike with
///   covariance `1e-2 · I`, so that coarse grids put most of the spike's mass
///   on a handful of nodes
pub fn mixture_catalog(name: &str) -> Result<NormalMixture> {
    let third = 1.0 / 3.0;
    let components = match name {
        "standard" => vec![comp(1.0, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])],
        "correlated" => vec![comp(1.0, [0.0, 0.0], [[1.0, 0.7], [0.7, 1.0]])],
        "bimodal" => vec![
            comp(0.5, [-1.5, 0.0], [[0.25, 0.0], [0.0, 1.0]]),
            comp(0.5, [1.5, 0.0], [[0.25, 0.0], [0.0, 1.0]]),
        ],
        "asymmetric-bimodal" => vec![
            comp(0.75, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]),
            comp(0.25, [1.5, 1.5], [[1.0 / 9.0, 0.0], [0.0, 1.0 / 9.0]]),
        ],
        "trimodal" => vec![
            comp(third, [-1.2, -0.7], [[0.36, 0.12], [0.12, 0.36]]),
            comp(third, [1.2, -0.7], [[0.36, -0.12], [-0.12, 0.36]]),
            comp(1.0 - 2.0 * third, [0.0, 1.3], [[0.36, 0.0], [0.0, 0.36]]),
        ],
        "fragile" => vec![
            comp(0.5, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]),
            comp(0.5, [0.0, 0.0], [[1e-2, 0.0], [0.0, 1e-2]]),
        ],
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    NormalMixture::new(components)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pdf_examples() {
        let std = mixture_catalog("standard").unwrap();
        assert!((mixture_pdf(&std, &[0.0, 0.0]) - 0.159_154_943_091_895_35).abs() < 1e-15);
        let doubled = NormalMixture::new(vec![
            comp(0.5, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]),
            comp(0.5, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]),
        ])
        .unwrap();
        let x = [0.3, -1.1];
        assert!((mixture_pdf(&doubled, &x) - mixture_pdf(&std, &x)).abs() < 1e-16);
    }

    #[test]
    fn catalog_contents() {
        for name in CATALOG {
            assert_eq!(mixture_catalog(name).unwrap().dim(), 2);
        }
        assert!(matches!(mixture_catalog("nope"), Err(Error::UnknownModel(_))));
        let fragile = mixture_catalog("fragile").unwrap();
        assert!(fragile.components().iter().any(|c| (c.cov.get(0, 0) - 1e-2).abs() < 1e-18));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let bad = NormalMixture::new(vec![comp(0.6, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])]);
        assert!(matches!(bad, Err(Error::InvalidMixture(_))));
    }

    #[test]
    fn sampling_is_deterministic() {
        let mix = mixture_catalog("trimodal").unwrap();
        let a = sample_mixture(&mix, 50, 7).unwrap();
        let b = sample_mixture(&mix, 50, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_mixture(&mix, 50, 8).unwrap());
    }

    #[test]
    fn single_component_draws() {
        let mix = NormalMixture::new(vec![comp(1.0, [100.0, -100.0], [[0.01, 0.0], [0.0, 0.01]])])
            .unwrap();
        let s = sample_mixture(&mix, 200, 1).unwrap();
        assert!(s.rows().all(|r| (r[0] - 100.0).abs() < 1.0 && (r[1] + 100.0).abs() < 1.0));
    }

    #[test]
    fn json_roundtrip() {
        let mix = mixture_catalog("asymmetric-bimodal").unwrap();
        let text = serde_json::to_string(&mix.to_file()).unwrap();
        assert_eq!(NormalMixture::from_json(&text).unwrap(), mix);
        assert!(NormalMixture::from_json(r#"{"weights":[1.0],"means":[[0,0]],"covs":[[[1,2],[2,1]]]}"#)
            .is_err());
    }
}
