//! Dense decompositions on nalgebra matrices, computed with faer.
//!
//! nalgebra's SVD and symmetric eigensolver occasionally return inaccurate factors for
//! rank-deficient inputs with exact zeros, which corrupts rank decisions and kernel bases.
//! Every SVD and symmetric eigendecomposition in this crate goes through this module.

use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

fn no_convergence(what: &str) -> Error {
    Error::Conditioning(format!("{what} did not converge"))
}

/// `m = u diag(singular_values) v^T` with singular values in non-increasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

/// Singular value decomposition. `full` returns square `u` and `v`; otherwise both have
/// `min(rows, cols)` columns.
pub fn svd(m: &DMatrix<f64>, full: bool) -> Result<Svd> {
    check_finite(m)?;
    let (rows, cols) = m.shape();
    let p = rows.min(cols);
    if p == 0 {
        let (ur, vr) = if full { (rows, cols) } else { (0, 0) };
        return Ok(Svd {
            u: DMatrix::identity(rows, ur),
            singular_values: Vec::new(),
            v: DMatrix::identity(cols, vr),
        });
    }
    let f = to_faer(m);
    let (u, s, v) = if full {
        let d = f.svd().map_err(|_| no_convergence("SVD"))?;
        let s: Vec<f64> = (0..p).map(|k| d.S()[k]).collect();
        (
            DMatrix::from_fn(rows, rows, |i, j| d.U()[(i, j)]),
            s,
            DMatrix::from_fn(cols, cols, |i, j| d.V()[(i, j)]),
        )
    } else {
        let d = f.thin_svd().map_err(|_| no_convergence("SVD"))?;
        let s: Vec<f64> = (0..p).map(|k| d.S()[k]).collect();
        (
            DMatrix::from_fn(rows, p, |i, j| d.U()[(i, j)]),
            s,
            DMatrix::from_fn(cols, p, |i, j| d.V()[(i, j)]),
        )
    };
    Ok(sorted_svd(u, s, v))
}

fn sorted_svd(u: DMatrix<f64>, s: Vec<f64>, v: DMatrix<f64>) -> Svd {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if order.iter().enumerate().all(|(k, &j)| k == j) {
        return Svd { u, singular_values: s, v };
    }
    let permute = |m: &DMatrix<f64>| {
        let mut out = m.clone();
        for (k, &j) in order.iter().enumerate() {
            out.set_column(k, &m.column(j));
        }
        out
    };
    Svd {
        u: permute(&u),
        singular_values: order.iter().map(|&j| s[j]).collect(),
        v: permute(&v),
    }
}

/// Singular values in non-increasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_finite(m)?;
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(Vec::new());
    }
    let mut sv = to_faer(m).singular_values().map_err(|_| no_convergence("SVD"))?;
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Moore-Penrose pseudo-inverse, treating singular values `<= tol` as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    let d = svd(m, false)?;
    let mut vs = d.v.clone();
    for (k, mut col) in vs.column_iter_mut().enumerate() {
        let s = d.singular_values[k];
        if s > tol {
            col /= s;
        } else {
            col.fill(0.0);
        }
    }
    Ok(vs * d.u.transpose())
}

/// `m = eigenvectors diag(eigenvalues) eigenvectors^T` with eigenvalues ascending. Only the
/// lower triangle of `m` is read.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen> {
    check_finite(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(SymmetricEigen {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let d = to_faer(m)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| no_convergence("symmetric eigendecomposition"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d.S()[a].total_cmp(&d.S()[b]));
    Ok(SymmetricEigen {
        eigenvalues: DVector::from_iterator(n, order.iter().map(|&j| d.S()[j])),
        eigenvectors: DMatrix::from_fn(n, n, |i, k| d.U()[(i, order[k])]),
    })
}

pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_finite(m)?;
    if m.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let mut ev = to_faer(m)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| no_convergence("symmetric eigendecomposition"))?;
    ev.sort_by(f64::total_cmp);
    Ok(DVector::from_vec(ev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Low-rank products of sparse factors: the inputs nalgebra's solvers mishandle.
    fn sparse_low_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        let r = rng.random_range(1..=rows.min(cols));
        let mut pick = |_: usize, _: usize| {
            if rng.random_bool(0.5) {
                0.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        };
        let left = DMatrix::from_fn(rows, r, &mut pick);
        let right = DMatrix::from_fn(r, cols, &mut pick);
        left * right
    }

    #[test]
    fn svd_reconstructs_and_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3000 {
            let (rows, cols) = (rng.random_range(1..8), rng.random_range(1..8));
            let m = sparse_low_rank(&mut rng, rows, cols);
            for full in [false, true] {
                let d = svd(&m, full).unwrap();
                let p = d.singular_values.len();
                let s = DMatrix::from_fn(d.u.ncols(), d.v.ncols(), |i, j| {
                    if i == j && i < p {
                        d.singular_values[i]
                    } else {
                        0.0
                    }
                });
                assert!((&d.u * s * d.v.transpose() - &m).norm() < 1e-12);
                assert!((d.u.transpose() * &d.u).is_identity(1e-12));
                assert!((d.v.transpose() * &d.v).is_identity(1e-12));
                assert!(d.singular_values.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }

    #[test]
    fn symmetric_eigen_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3000 {
            let n = rng.random_range(1..9);
            let f = sparse_low_rank(&mut rng, n, n);
            let s = &f * f.transpose();
            let e = symmetric_eigen(&s).unwrap();
            let back = &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues) * e.eigenvectors.transpose();
            assert!((back - &s).norm() < 1e-12 * (1.0 + s.norm()));
            assert!(e.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
            let values = symmetric_eigenvalues(&s).unwrap();
            assert!((values - &e.eigenvalues).amax() < 1e-12 * (1.0 + s.norm()));
        }
    }

    #[test]
    fn pseudo_inverse_satisfies_penrose_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let (rows, cols) = (rng.random_range(1..7), rng.random_range(1..7));
            let m = sparse_low_rank(&mut rng, rows, cols);
            let tol = 1e-10 * m.amax().max(1e-300);
            let p = pseudo_inverse(&m, tol).unwrap();
            assert!((&m * &p * &m - &m).norm() < 1e-9 * (1.0 + m.norm()));
            assert!((&p * &m * &p - &p).norm() < 1e-9 * (1.0 + p.norm()));
        }
    }

    #[test]
    fn empty_shapes() {
        let m = DMatrix::<f64>::zeros(0, 3);
        let d = svd(&m, true).unwrap();
        assert_eq!(d.v.shape(), (3, 3));
        assert!(singular_values(&m).unwrap().is_empty());
        assert_eq!(pseudo_inverse(&m, 0.0).unwrap().shape(), (3, 0));
    }
}
