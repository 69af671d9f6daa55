//! Small deterministic numeric substrate: dense row-major matrices, seeded
//! Gaussian sampling, top-2 PCA and polyline arc length.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of the generator behind every [`RngSeed`], stored in reports
/// and checkpoints so runs can be replayed.
pub const RNG_ALGORITHM: &str = "chacha20/rand_chacha-0.9/seed_from_u64+stream";

/// Dense row-major matrix of finite `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "matrix entry ({}, {}) is not finite",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw entries. Callers are responsible for keeping
    /// them finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * c).collect() }
    }

    /// Row vector times matrix: `out[j] += sum_i v[i] * self[i, j]`.
    #[inline]
    pub fn accumulate_vec_mul(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += vi * m;
            }
        }
    }

    /// Matrix times column vector: `out[i] += sum_j self[i, j] * v[j]`.
    #[inline]
    pub fn accumulate_mul_vec(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o += self.row(i).iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Rank-one update `self[i, j] += scale * u[i] * v[j]`.
    #[inline]
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) {
        for (i, &ui) in u.iter().enumerate() {
            let a = scale * ui;
            if a == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, &vj) in row.iter_mut().zip(v) {
                *r += a * vj;
            }
        }
    }
}

/// Seed for the crate's deterministic generator (see [`RNG_ALGORITHM`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.0)
    }

    /// Independent stream for sub-task `index` (e.g. one trial of a sweep).
    pub fn stream(self, index: u64) -> ChaCha20Rng {
        let mut rng = self.rng();
        rng.set_stream(index);
        rng
    }
}

/// Draws a `rows x cols` matrix with i.i.d. `N(mean, variance)` entries.
///
/// Entries are `mean + sqrt(variance) * z` with `z` standard normal, so for a
/// fixed seed the draw is affine in the standard deviation.
pub fn gaussian_matrix(rows: usize, cols: usize, mean: f64, variance: f64, seed: RngSeed) -> Result<Matrix> {
    gaussian_matrix_from(&mut seed.rng(), rows, cols, mean, variance)
}

pub fn gaussian_matrix_from<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    mean: f64,
    variance: f64,
) -> Result<Matrix> {
    let data = gaussian_vec_from(rng, rows * cols, mean, variance)?;
    Matrix::new(rows, cols, data)
}

pub fn gaussian_vec_from<R: Rng + ?Sized>(rng: &mut R, len: usize, mean: f64, variance: f64) -> Result<Vec<f64>> {
    if !(variance >= 0.0) || !variance.is_finite() || !mean.is_finite() {
        return Err(Error::Parameter(format!("gaussian needs finite mean and variance >= 0, got N({mean}, {variance})")));
    }
    let sd = variance.sqrt();
    Ok((0..len)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            mean + sd * z
        })
        .collect())
}

/// Ordered list of finite 2-D points.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline2D {
    points: Vec<[f64; 2]>,
}

impl Polyline2D {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Input("polyline needs at least one point".into()));
        }
        if let Some(i) = points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Input(format!("polyline point {i} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sum of Euclidean lengths of consecutive segments.
pub fn arc_length(path: &Polyline2D) -> f64 {
    path.points
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    pub projection: Polyline2D,
    /// Fraction of total variance carried by the first and second axis.
    pub variance_explained: [f64; 2],
    /// Unit principal axes (length = dims), sign-normalized.
    pub axes: [Vec<f64>; 2],
}

/// Relative eigenvalue threshold below which a component is treated as absent.
const RANK_TOL: f64 = 1e-12;

/// Projects mean-centred observations (rows) onto their two leading principal
/// axes, computed from the covariance matrix.
///
/// Each axis is flipped so that its largest-magnitude loading is positive.
/// Components whose eigenvalue is negligible relative to the largest are
/// returned as zero with zero variance explained.
pub fn pca_top2(samples: &Matrix) -> Result<Pca2> {
    let (n, d) = (samples.rows(), samples.cols());
    if n < 2 || d < 2 {
        return Err(Error::Input(format!("pca_top2 needs >= 2 observations and >= 2 dims, got {n}x{d}")));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(samples.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centred = DMatrix::from_fn(n, d, |r, c| samples.get(r, c) - mean[c]);
    let cov = (centred.transpose() * &centred) / (n as f64 - 1.0);
    let total: f64 = cov.diagonal().iter().sum();

    let zero = || Pca2 {
        projection: Polyline2D { points: vec![[0.0, 0.0]; n] },
        variance_explained: [0.0, 0.0],
        axes: [vec![0.0; d], vec![0.0; d]],
    };
    if total <= 0.0 {
        return Ok(zero());
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let lead = eig.eigenvalues[order[0]].max(0.0);

    let mut axes = [vec![0.0; d], vec![0.0; d]];
    let mut explained = [0.0; 2];
    for k in 0..2 {
        let lambda = eig.eigenvalues[order[k]];
        if lambda <= RANK_TOL * lead || lambda <= 0.0 {
            continue;
        }
        let col = eig.eigenvectors.column(order[k]);
        let pivot = (0..d).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a))).unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        axes[k] = col.iter().map(|v| sign * v).collect();
        explained[k] = (lambda / total).clamp(0.0, 1.0);
    }

    let points = (0..n)
        .map(|r| {
            let row = centred.row(r);
            let p = |axis: &[f64]| row.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>();
            [p(&axes[0]), p(&axes[1])]
        })
        .collect();
    Ok(Pca2 { projection: Polyline2D::new(points)?, variance_explained: explained, axes })
}

/// Mean and (population) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Least-squares slope of `y` against `x`.
pub fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, _) = mean_std(x);
    let (my, _) = mean_std(y);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}
