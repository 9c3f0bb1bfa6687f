//! Dense PCA, orthogonal Procrustes and cosine similarity on `nalgebra`
//! matrices. Rows are observations.

use nalgebra::{DMatrix, DVector, SVD};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `k × d`, orthonormal rows in order of decreasing explained variance.
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
    /// All singular values of the centered fit data, descending.
    pub singular_values: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.components.ncols()
    }
}

/// SVD with singular values sorted descending (stable on ties).
struct SortedSvd {
    u: DMatrix<f64>,
    singular: Vec<f64>,
    v_t: DMatrix<f64>,
}

fn sorted_svd(m: DMatrix<f64>) -> SortedSvd {
    let svd = SVD::new(m, true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    SortedSvd {
        u: DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]),
        singular: order.iter().map(|&i| svd.singular_values[i]).collect(),
        v_t: DMatrix::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]),
    }
}

/// Numerical rank of a descending singular value list.
pub fn numerical_rank(singular: &[f64], rows: usize, cols: usize) -> usize {
    let top = singular.first().copied().unwrap_or(0.0);
    let tol = top * rows.max(cols) as f64 * f64::EPSILON;
    singular.iter().filter(|&&s| s > tol).count()
}

/// Flips each row so that its entry of largest magnitude (first on ties) is
/// non-negative.
fn normalize_row_signs(m: &mut DMatrix<f64>) {
    for r in 0..m.nrows() {
        let mut best = 0;
        for c in 1..m.ncols() {
            if m[(r, c)].abs() > m[(r, best)].abs() {
                best = c;
            }
        }
        if m[(r, best)] < 0.0 {
            m.row_mut(r).neg_mut();
        }
    }
}

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_fn(x.ncols(), |c, _| x.column(c).iter().sum::<f64>() / n)
}

fn centered(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        row -= mean.transpose();
    }
    out
}

/// Fits the top-`k` principal directions of `x`.
pub fn pca_fit(x: &DMatrix<f64>, k: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::invalid(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    let max_k = (n - 1).min(d);
    if k == 0 || k > max_k {
        return Err(Error::invalid(format!(
            "PCA k = {k} outside 1..={max_k} for a {n}x{d} matrix"
        )));
    }
    let mean = column_means(x);
    let svd = sorted_svd(centered(x, &mean));
    let rank = numerical_rank(&svd.singular, n, d);
    if rank < k {
        return Err(Error::RankDeficient {
            requested: k,
            achievable: rank,
        });
    }
    let mut components = svd.v_t.rows(0, k).into_owned();
    normalize_row_signs(&mut components);
    let denom = (n - 1) as f64;
    Ok(PcaModel {
        mean,
        components,
        explained_variance: svd.singular[..k].iter().map(|s| s * s / denom).collect(),
        singular_values: svd.singular,
    })
}

/// Largest `k ≤ requested` that `pca_fit` can honour for `x`.
pub fn achievable_rank(x: &DMatrix<f64>) -> usize {
    let (n, d) = x.shape();
    if n < 2 {
        return 0;
    }
    let mean = column_means(x);
    let svd = sorted_svd(centered(x, &mean));
    numerical_rank(&svd.singular, n, d).min(n - 1)
}

/// `(x - mean) · componentsᵀ`.
pub fn pca_transform(model: &PcaModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "pca_transform columns",
            expected: model.dim(),
            actual: x.ncols(),
        });
    }
    Ok(centered(x, &model.mean) * model.components.transpose())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcrustesFit {
    pub q: DMatrix<f64>,
    /// `‖A·Q − B‖²_F`.
    pub residual: f64,
}

/// Solves `min ‖A·Q − B‖_F` over orthogonal `Q` via the SVD of `AᵀB`.
pub fn procrustes_fit(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<ProcrustesFit> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "procrustes shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::invalid("procrustes needs a non-empty matrix"));
    }
    let svd = sorted_svd(a.transpose() * b);
    let q = &svd.u * &svd.v_t;
    let residual = (a * &q - b).norm_squared();
    Ok(ProcrustesFit { q, residual })
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine",
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm("cosine"));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Matrix with i.i.d. standard normal entries.
pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed orthogonal `n × n` matrix (QR of a Gaussian matrix with
/// the sign of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, n, n).qr();
    let (mut q, r) = qr.unpack();
    for c in 0..n {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

/// `rows × cols` matrix with orthonormal rows (rows ≤ cols) or orthonormal
/// columns (rows > cols), cut from a Haar orthogonal matrix.
pub fn random_semi_orthogonal<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let q = random_orthogonal(rng, rows.max(cols));
    q.view((0, 0), (rows, cols)).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn assert_orthonormal_rows(m: &DMatrix<f64>, tol: f64) {
        let gram = m * m.transpose();
        let err = (gram - DMatrix::identity(m.nrows(), m.nrows())).norm();
        assert!(err <= tol, "orthonormality error {err}");
    }

    #[test]
    fn axis_aligned_data_gives_positive_e1() {
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[
                -3.0, 0.0, 0.0, //
                1.0, 0.0, 0.0, //
                4.0, 0.0, 0.0, //
                -0.5, 0.0, 0.0,
            ],
        );
        let m = pca_fit(&x, 1).unwrap();
        assert!((m.components[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(m.components[(0, 1)].abs() < 1e-12 && m.components[(0, 2)].abs() < 1e-12);
    }

    #[test]
    fn k_equal_to_n_is_rejected() {
        let mut rng = rng_from_seed(1);
        let x = gaussian_matrix(&mut rng, 5, 10);
        assert!(pca_fit(&x, 5).is_err());
        assert!(pca_fit(&x, 0).is_err());
        assert!(pca_fit(&x, 4).is_ok());
    }

    #[test]
    fn rank_deficiency_names_the_achievable_rank() {
        let mut rng = rng_from_seed(2);
        let basis = gaussian_matrix(&mut rng, 2, 6);
        let coeffs = gaussian_matrix(&mut rng, 10, 2);
        let x = coeffs * basis;
        match pca_fit(&x, 4) {
            Err(Error::RankDeficient {
                requested: 4,
                achievable,
            }) => assert_eq!(achievable, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(achievable_rank(&x), 2);
    }

    #[test]
    fn components_are_orthonormal_with_decreasing_variance() {
        let mut rng = rng_from_seed(3);
        let x = gaussian_matrix(&mut rng, 30, 12);
        let m = pca_fit(&x, 8).unwrap();
        assert_orthonormal_rows(&m.components, 1e-10);
        assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        for r in 0..m.k() {
            let row: Vec<f64> = m.components.row(r).iter().copied().collect();
            let (imax, _) = row.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| {
                if v.abs() > acc.1 {
                    (i, v.abs())
                } else {
                    acc
                }
            });
            assert!(row[imax] >= 0.0);
        }
    }

    #[test]
    fn reconstruction_error_matches_discarded_spectrum() {
        let mut rng = rng_from_seed(4);
        let x = gaussian_matrix(&mut rng, 20, 8);
        let m = pca_fit(&x, 5).unwrap();
        let z = pca_transform(&m, &x).unwrap();
        let recon = &z * &m.components;
        let xc = centered(&x, &m.mean);
        let err = (xc - recon).norm_squared();
        // Oracle: singular values of the centered matrix from an independent
        // eigen-decomposition of its Gram matrix.
        let xc = centered(&x, &column_means(&x));
        let eig = (xc.transpose() * &xc).symmetric_eigenvalues();
        let mut ev: Vec<f64> = eig.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        let discarded: f64 = ev[5..].iter().sum();
        assert!(
            (err - discarded).abs() <= 1e-9 * discarded.max(1.0),
            "{err} vs {discarded}"
        );
    }

    #[test]
    fn transform_centers_fit_data_and_maps_mean_to_zero() {
        let mut rng = rng_from_seed(5);
        let x = gaussian_matrix(&mut rng, 15, 6);
        let m = pca_fit(&x, 4).unwrap();
        let z = pca_transform(&m, &x).unwrap();
        assert!(column_means(&z).norm() < 1e-10);
        let mean_row = DMatrix::from_row_slice(1, 6, m.mean.as_slice());
        assert!(pca_transform(&m, &mean_row).unwrap().norm() < 1e-12);
        assert!(pca_transform(&m, &DMatrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn transform_matches_explicit_arithmetic() {
        let mut rng = rng_from_seed(6);
        let x = gaussian_matrix(&mut rng, 12, 5);
        let held_out = gaussian_matrix(&mut rng, 3, 5);
        let m = pca_fit(&x, 3).unwrap();
        let z = pca_transform(&m, &held_out).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let mut acc = 0.0;
                for j in 0..5 {
                    acc += (held_out[(r, j)] - m.mean[j]) * m.components[(c, j)];
                }
                assert!((z[(r, c)] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_rank_pca_preserves_distances() {
        let mut rng = rng_from_seed(7);
        let x = gaussian_matrix(&mut rng, 6, 10);
        let m = pca_fit(&x, 5).unwrap();
        let z = pca_transform(&m, &x).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let d0 = (x.row(i) - x.row(j)).norm();
                let d1 = (z.row(i) - z.row(j)).norm();
                assert!((d0 - d1).abs() <= 1e-8 * d0.max(1.0));
            }
        }
    }

    #[test]
    fn procrustes_identity_case() {
        let mut rng = rng_from_seed(8);
        let a = gaussian_matrix(&mut rng, 10, 4);
        let fit = procrustes_fit(&a, &a).unwrap();
        assert!((&fit.q - DMatrix::identity(4, 4)).norm() <= 1e-8);
        assert!(fit.residual <= 1e-12);
    }

    #[test]
    fn procrustes_recovers_planted_rotation() {
        let mut rng = rng_from_seed(9);
        let a = gaussian_matrix(&mut rng, 30, 6);
        let q0 = random_orthogonal(&mut rng, 6);
        let fit = procrustes_fit(&a, &(&a * &q0)).unwrap();
        assert!((&fit.q - &q0).norm() <= 1e-6);
        assert!(fit.residual <= 1e-10);
    }

    #[test]
    fn procrustes_beats_random_orthogonal_matrices() {
        let mut rng = rng_from_seed(10);
        let a = gaussian_matrix(&mut rng, 10, 4);
        let b = gaussian_matrix(&mut rng, 10, 4);
        let fit = procrustes_fit(&a, &b).unwrap();
        assert_orthonormal_rows(&fit.q, 1e-8);
        assert!(((&a * &fit.q - &b).norm_squared() - fit.residual).abs() <= 1e-8 * fit.residual);
        for _ in 0..1000 {
            let q = random_orthogonal(&mut rng, 4);
            assert!(fit.residual <= (&a * q - &b).norm_squared() + 1e-12);
        }
    }

    #[test]
    fn procrustes_shape_mismatch() {
        assert!(procrustes_fit(&DMatrix::zeros(3, 2), &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn rank_deficient_cross_covariance_still_yields_orthogonal_q() {
        let mut rng = rng_from_seed(11);
        let a = gaussian_matrix(&mut rng, 2, 5);
        let b = gaussian_matrix(&mut rng, 2, 5);
        let fit = procrustes_fit(&a, &b).unwrap();
        assert_orthonormal_rows(&fit.q, 1e-8);
    }

    #[test]
    fn cosine_cases() {
        let v = [0.3, -1.2, 4.0];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let u = [2.0, 1.0, -0.5];
        let scaled: Vec<f64> = u.iter().map(|x| x * 7.5).collect();
        assert!((cosine(&scaled, &v).unwrap() - cosine(&u, &v).unwrap()).abs() < 1e-15);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm(_))
        ));
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn semi_orthogonal_shapes() {
        let mut rng = rng_from_seed(12);
        let wide = random_semi_orthogonal(&mut rng, 3, 7);
        assert_orthonormal_rows(&wide, 1e-10);
        let tall = random_semi_orthogonal(&mut rng, 7, 3);
        assert_orthonormal_rows(&tall.transpose(), 1e-10);
    }
}
