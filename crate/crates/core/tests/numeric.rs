//! Arc length and PCA properties; PCA checked against an independent cyclic
//! Jacobi eigen-solver.

use ltc_core::numeric::{arc_length, gaussian_matrix, pca_top2, Matrix, Polyline2D, RngSeed};
use proptest::prelude::*;
use rand::Rng;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (descending) and matching unit eigenvectors.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|r| v[r][i]).collect()).collect();
    (values, vectors)
}

fn covariance(m: &Matrix) -> Vec<Vec<f64>> {
    let (n, d) = (m.rows(), m.cols());
    let mean: Vec<f64> = (0..d).map(|c| (0..n).map(|r| m.get(r, c)).sum::<f64>() / n as f64).collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| (0..n).map(|r| (m.get(r, i) - mean[i]) * (m.get(r, j) - mean[j])).sum::<f64>() / (n as f64 - 1.0))
                .collect()
        })
        .collect()
}

#[test]
fn pca_matches_jacobi_oracle() {
    let mut rng = RngSeed(42).rng();
    // Anisotropic cloud: 100 samples in 5 dimensions with distinct spreads.
    let scales = [3.0, 2.0, 1.0, 0.5, 0.1];
    let m = Matrix::from_fn(100, 5, |_, c| scales[c] * rng.random_range(-1.0..1.0) + 0.3 * c as f64);
    let mixed = {
        let mut out = Matrix::zeros(100, 5);
        for r in 0..100 {
            for c in 0..5 {
                let v: f64 = (0..5).map(|k| m.get(r, k) * (((k * 5 + c) as f64).sin())).sum();
                out.set(r, c, v);
            }
        }
        out
    };
    let cov = covariance(&mixed);
    let total: f64 = (0..5).map(|i| cov[i][i]).sum();
    let (values, vectors) = jacobi_eigen(cov);
    let pca = pca_top2(&mixed).unwrap();
    for k in 0..2 {
        assert!((pca.variance_explained[k] - values[k] / total).abs() < 1e-8, "component {k}");
        let dot: f64 = pca.axes[k].iter().zip(&vectors[k]).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-8, "axis {k} differs: |dot| = {}", dot.abs());
    }
}

fn rotate(points: &[[f64; 2]], angle: f64, shift: [f64; 2]) -> Vec<[f64; 2]> {
    let (s, c) = angle.sin_cos();
    points.iter().map(|p| [c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1]]).collect()
}

fn points_strategy() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(prop::array::uniform2(-10.0f64..10.0), 1..40)
}

fn poly(p: Vec<[f64; 2]>) -> Polyline2D {
    Polyline2D::new(p).unwrap()
}

proptest! {
    #[test]
    fn arc_length_is_rigid_invariant(pts in points_strategy(), angle in -7.0f64..7.0, dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
        let a = arc_length(&poly(pts.clone()));
        let b = arc_length(&poly(rotate(&pts, angle, [dx, dy])));
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn arc_length_is_additive(p1 in points_strategy(), p2 in points_strategy()) {
        let gap = ((p2[0][0] - p1.last().unwrap()[0]).powi(2) + (p2[0][1] - p1.last().unwrap()[1]).powi(2)).sqrt();
        let joined: Vec<[f64; 2]> = p1.iter().chain(&p2).copied().collect();
        let lhs = arc_length(&poly(joined));
        let rhs = arc_length(&poly(p1)) + arc_length(&poly(p2)) + gap;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
    }

    #[test]
    fn pca_invariants(rows in 3usize..40, cols in 2usize..6, seed in any::<u64>()) {
        let mut rng = RngSeed(seed).rng();
        let m = Matrix::from_fn(rows, cols, |_, c| rng.random_range(-1.0..1.0) * (c + 1) as f64);
        let p = pca_top2(&m).unwrap();
        let [v1, v2] = p.variance_explained;
        prop_assert!(v1 + v2 <= 1.0 + 1e-10);
        prop_assert!(v1 >= v2);
        let pts = p.projection.points();
        let n = pts.len() as f64;
        let mean = [pts.iter().map(|q| q[0]).sum::<f64>() / n, pts.iter().map(|q| q[1]).sum::<f64>() / n];
        let cross = pts.iter().map(|q| (q[0] - mean[0]) * (q[1] - mean[1])).sum::<f64>() / (n - 1.0);
        prop_assert!(cross.abs() < 1e-8, "off-diagonal covariance {cross}");
    }

    #[test]
    fn gaussian_sampler_is_scale_affine(rows in 1usize..6, cols in 1usize..6, v in 0.01f64..4.0, c in 0.1f64..5.0, seed in any::<u64>()) {
        let base = gaussian_matrix(rows, cols, 0.0, v, RngSeed(seed)).unwrap();
        let scaled = gaussian_matrix(rows, cols, 0.0, c * c * v, RngSeed(seed)).unwrap();
        for (a, b) in base.data().iter().zip(scaled.data()) {
            prop_assert!((c * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}
