//! Equally spaced grids and multivariate linear binning.
//!
//! Arrays over a grid are stored flat in row-major order with axis 0 varying
//! slowest. The same layout is used by the FFT convolution code.

use crate::error::{Error, Result};

/// Default fraction of the per-axis data range added on each side of the grid.
pub const DEFAULT_MARGIN: f64 = 0.05;

/// `n x d` matrix of observations, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    dim: usize,
    data: Vec<f64>,
}

impl Sample {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("sample dimension must be at least 1".into()));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "sample of {} values does not split into rows of {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value in row {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column_min_max(&self, axis: usize) -> (f64, f64) {
        self.rows().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r[axis]), hi.max(r[axis]))
        })
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (acc, v) in m.iter_mut().zip(r) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Unbiased sample covariance (row-major `d x d`); zero matrix when `n == 1`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let n = self.len();
        let mean = self.mean();
        let mut cov = vec![0.0; d * d];
        for r in self.rows() {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
                }
            }
        }
        if n > 1 {
            cov.iter_mut().for_each(|v| *v /= (n - 1) as f64);
        }
        cov
    }

    /// Concatenates two samples of the same dimension.
    pub fn concat(&self, other: &Sample) -> Result<Sample> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Sample::new(self.dim, data)
    }

    /// Scales each column `k` by `factors[k]`.
    pub fn scale_axes(&self, factors: &[f64]) -> Sample {
        let data = self
            .rows()
            .flat_map(|r| r.iter().zip(factors).map(|(v, f)| v * f))
            .collect();
        Sample { dim: self.dim, data }
    }
}

/// Row-major strides for a shape, axis 0 slowest.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

/// Advances a multi-index in row-major order; returns false after the last index.
pub(crate) fn next_index(index: &mut [usize], shape: &[usize]) -> bool {
    for k in (0..shape.len()).rev() {
        index[k] += 1;
        if index[k] < shape[k] {
            return true;
        }
        index[k] = 0;
    }
    false
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    lo: Vec<f64>,
    hi: Vec<f64>,
    sizes: Vec<usize>,
    deltas: Vec<f64>,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, sizes: Vec<usize>) -> Result<Self> {
        let d = lo.len();
        if hi.len() != d || sizes.len() != d || d == 0 {
            return Err(Error::ShapeMismatch(format!(
                "grid bounds/sizes disagree: lo {}, hi {}, sizes {}",
                d,
                hi.len(),
                sizes.len()
            )));
        }
        for k in 0..d {
            if !(lo[k] < hi[k]) {
                return Err(Error::DegenerateAxis { axis: k });
            }
            if sizes[k] < 2 {
                return Err(Error::InvalidInput(format!("grid size on axis {k} must be >= 2")));
            }
        }
        let deltas = (0..d).map(|k| (hi[k] - lo[k]) / (sizes[k] - 1) as f64).collect();
        Ok(Self { lo, hi, sizes, deltas })
    }

    pub fn dim(&self) -> usize {
        self.sizes.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn total_points(&self) -> usize {
        self.sizes.iter().product()
    }

    /// Coordinate of node `j` (0-based) on `axis`.
    pub fn coordinate(&self, axis: usize, j: usize) -> f64 {
        if j + 1 == self.sizes[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + j as f64 * self.deltas[axis]
        }
    }

    /// Iterates over all grid nodes in row-major order as `(index, coordinates)`.
    pub fn points(&self) -> GridPoints<'_> {
        GridPoints { spec: self, index: vec![0; self.dim()], done: false }
    }
}

/// Iterator returned by [`GridSpec::points`].
pub struct GridPoints<'a> {
    spec: &'a GridSpec,
    index: Vec<usize>,
    done: bool,
}

impl Iterator for GridPoints<'_> {
    type Item = (Vec<usize>, Vec<f64>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let idx = self.index.clone();
        let coords = idx.iter().enumerate().map(|(k, &j)| self.spec.coordinate(k, j)).collect();
        self.done = !next_index(&mut self.index, &self.spec.sizes);
        Some((idx, coords))
    }
}

/// Grid enclosing the sample, each axis widened by `margin_fraction` of its range.
pub fn make_grid(sample: &Sample, sizes: &[usize], margin_fraction: f64) -> Result<GridSpec> {
    if sizes.len() != sample.dim() {
        return Err(Error::DimensionMismatch { expected: sample.dim(), got: sizes.len() });
    }
    if !(margin_fraction >= 0.0) {
        return Err(Error::InvalidInput("margin fraction must be non-negative".into()));
    }
    let mut lo = Vec::with_capacity(sizes.len());
    let mut hi = Vec::with_capacity(sizes.len());
    for axis in 0..sample.dim() {
        let (min, max) = sample.column_min_max(axis);
        let range = max - min;
        if range == 0.0 {
            return Err(Error::DegenerateAxis { axis });
        }
        lo.push(min - margin_fraction * range);
        hi.push(max + margin_fraction * range);
    }
    GridSpec::new(lo, hi, sizes.to_vec())
}

/// Linear-binning weights on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCounts {
    spec: GridSpec,
    counts: Vec<f64>,
    n: usize,
}

impl GridCounts {
    pub fn from_parts(spec: GridSpec, counts: Vec<f64>, n: usize) -> Result<Self> {
        if counts.len() != spec.total_points() {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for a grid of {} points",
                counts.len(),
                spec.total_points()
            )));
        }
        Ok(Self { spec, counts, n })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let st = strides(self.spec.sizes());
        self.counts[index.iter().zip(&st).map(|(i, s)| i * s).sum::<usize>()]
    }
}

/// Distributes each observation over the `2^d` vertices of its cell with
/// multilinear weights. O(n 2^d).
pub fn linear_binning(sample: &Sample, spec: &GridSpec) -> Result<GridCounts> {
    let d = spec.dim();
    if sample.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: sample.dim() });
    }
    let sizes = spec.sizes();
    let st = strides(sizes);
    let mut counts = vec![0.0; spec.total_points()];
    let mut base = vec![0usize; d];
    let mut frac = vec![0.0; d];
    let corners = 1usize << d;
    for (row, x) in sample.rows().enumerate() {
        for k in 0..d {
            if x[k] < spec.lo[k] || x[k] > spec.hi[k] {
                return Err(Error::OutOfRange { row, axis: k });
            }
            let t = (x[k] - spec.lo[k]) / spec.deltas[k];
            let cell = (t.floor() as usize).min(sizes[k] - 2);
            base[k] = cell;
            frac[k] = (t - cell as f64).clamp(0.0, 1.0);
        }
        for corner in 0..corners {
            let mut w = 1.0;
            let mut offset = 0;
            for k in 0..d {
                let upper = (corner >> (d - 1 - k)) & 1 == 1;
                w *= if upper { frac[k] } else { 1.0 - frac[k] };
                offset += (base[k] + upper as usize) * st[k];
            }
            if w != 0.0 {
                counts[offset] += w;
            }
        }
    }
    Ok(GridCounts { spec: spec.clone(), counts, n: sample.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_1d(values: &[f64]) -> Sample {
        Sample::new(1, values.to_vec()).unwrap()
    }

    #[test]
    fn make_grid_examples() {
        let s = sample_1d(&[0.0, 10.0]);
        let g = make_grid(&s, &[11], 0.0).unwrap();
        assert_eq!((g.lo()[0], g.hi()[0], g.deltas()[0]), (0.0, 10.0, 1.0));
        let g = make_grid(&s, &[11], 0.1).unwrap();
        assert_eq!((g.lo()[0], g.hi()[0]), (-1.0, 11.0));
        assert!((g.deltas()[0] - 1.2).abs() < 1e-15);
        let s = Sample::from_rows(&[[1.0, 0.0], [1.0, 2.0]]).unwrap();
        assert_eq!(make_grid(&s, &[5, 5], 0.1), Err(Error::DegenerateAxis { axis: 0 }));
    }

    #[test]
    fn grid_endpoints_are_exact() {
        let g = GridSpec::new(vec![-1.3], vec![2.9], vec![7]).unwrap();
        assert_eq!(g.coordinate(0, 0), -1.3);
        assert_eq!(g.coordinate(0, 6), 2.9);
    }

    #[test]
    fn node_coincidence() {
        let spec = GridSpec::new(vec![0.0, 0.0], vec![3.0, 3.0], vec![4, 4]).unwrap();
        let s = Sample::from_rows(&[[1.0, 2.0]]).unwrap();
        let c = linear_binning(&s, &spec).unwrap();
        assert_eq!(c.get(&[1, 2]), 1.0);
        assert_eq!(c.total(), 1.0);
        assert_eq!(c.counts().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn linear_split_and_cell_center() {
        let spec = GridSpec::new(vec![0.0], vec![1.0], vec![2]).unwrap();
        let c = linear_binning(&sample_1d(&[0.25]), &spec).unwrap();
        assert_eq!(c.counts(), &[0.75, 0.25]);

        let spec = GridSpec::new(vec![0.0, 0.0], vec![2.0, 2.0], vec![3, 3]).unwrap();
        let c = linear_binning(&Sample::from_rows(&[[0.5, 1.5]]).unwrap(), &spec).unwrap();
        for idx in [[0, 1], [0, 2], [1, 1], [1, 2]] {
            assert_eq!(c.get(&idx), 0.25);
        }
        assert_eq!(c.total(), 1.0);
    }

    #[test]
    fn out_of_range_is_reported() {
        let spec = GridSpec::new(vec![0.0], vec![1.0], vec![5]).unwrap();
        assert_eq!(
            linear_binning(&sample_1d(&[0.5, 1.5]), &spec),
            Err(Error::OutOfRange { row: 1, axis: 0 })
        );
    }

    #[test]
    fn grid_points_order() {
        let g = GridSpec::new(vec![0.0], vec![2.0], vec![3]).unwrap();
        let pts: Vec<f64> = g.points().map(|(_, c)| c[0]).collect();
        assert_eq!(pts, vec![0.0, 1.0, 2.0]);
        let g = GridSpec::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![2, 2]).unwrap();
        let pts: Vec<Vec<f64>> = g.points().map(|(_, c)| c).collect();
        assert_eq!(pts, vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
    }

    #[test]
    fn strides_row_major() {
        assert_eq!(strides(&[4, 3, 2]), vec![6, 2, 1]);
        assert_eq!(strides(&[5]), vec![1]);
    }
}
