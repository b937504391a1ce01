//! Observability objects and rank utilities.
//!
//! `O_T` stacks `C, CA, ..., CA^T`; `H_T` is the lower block-triangular Toeplitz map from the
//! stacked process noise `(nu_0, ..., nu_{T-1})` to the stacked outputs.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, svd};
use crate::sysmodel::{DisclosureSet, LinearSystem, TimeVaryingSystem};

/// Entries of `A^k` above this magnitude abort bundle construction.
pub const POWER_OVERFLOW_LIMIT: f64 = 1e150;

/// Singular values in non-increasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    linalg::singular_values(m)
}

/// `sigma_max * max(rows, cols) * eps`.
pub fn default_tolerance(m: &DMatrix<f64>) -> Result<f64> {
    let sv = singular_values(m)?;
    Ok(tolerance_from(&sv, m.nrows(), m.ncols()))
}

fn tolerance_from(sv: &[f64], rows: usize, cols: usize) -> f64 {
    sv.first().copied().unwrap_or(0.0) * rows.max(cols) as f64 * f64::EPSILON
}

/// Number of singular values strictly above `tol` (default: [`default_tolerance`]).
pub fn numerical_rank(m: &DMatrix<f64>, tol: Option<f64>) -> Result<usize> {
    let sv = singular_values(m)?;
    let tol = tol.unwrap_or_else(|| tolerance_from(&sv, m.nrows(), m.ncols()));
    Ok(sv.iter().filter(|s| **s > tol).count())
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(m)?.first().copied().unwrap_or(0.0))
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>, tol: Option<f64>) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let n = m.ncols();
    if m.nrows() == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    let d = svd(m, true)?;
    let sv = &d.singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let tol = tol.unwrap_or(smax * m.nrows().max(n) as f64 * f64::EPSILON);
    // Right singular vectors beyond min(rows, cols) have zero singular value.
    let cols: Vec<_> = (0..n)
        .filter(|&k| sv.get(k).is_none_or(|&s| s <= tol))
        .map(|k| d.v.column(k).into_owned())
        .collect();
    if cols.is_empty() {
        return Ok(DMatrix::zeros(n, 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Column selectors `E_P` and `E_Pbar` for a disclosure set.
#[derive(Debug, Clone)]
pub struct Selector {
    public: DisclosureSet,
    unpublic: Vec<usize>,
    n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Columns {
    Public,
    Unpublic,
}

impl Selector {
    pub fn new(public: &DisclosureSet, n: usize) -> Result<Self> {
        if let Some(&bad) = public.indices().iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad + 1, len: n });
        }
        Ok(Selector {
            public: public.clone(),
            unpublic: public.complement(n),
            n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn public(&self) -> &[usize] {
        self.public.indices()
    }

    pub fn unpublic(&self) -> &[usize] {
        &self.unpublic
    }

    fn unit_columns(&self, idx: &[usize]) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.n, idx.len());
        for (k, &i) in idx.iter().enumerate() {
            e[(i, k)] = 1.0;
        }
        e
    }

    /// `E_P`, n x l.
    pub fn e_public(&self) -> DMatrix<f64> {
        self.unit_columns(self.public())
    }

    /// `E_Pbar`, n x (n - l).
    pub fn e_unpublic(&self) -> DMatrix<f64> {
        self.unit_columns(&self.unpublic)
    }
}

/// `M E_P` or `M E_Pbar`, extracted column by column in selector order.
pub fn select_columns(m: &DMatrix<f64>, sel: &Selector, which: Columns) -> Result<DMatrix<f64>> {
    if m.ncols() != sel.n {
        return Err(Error::Dimension(format!(
            "matrix has {} columns, selector expects {}",
            m.ncols(),
            sel.n
        )));
    }
    let idx = match which {
        Columns::Public => sel.public(),
        Columns::Unpublic => sel.unpublic(),
    };
    Ok(m.select_columns(idx))
}

/// Stacks `C A^k` for `k = 0..=horizon`. Powers use `A^{k+1} = A A^k`.
pub fn extended_observability(a: &DMatrix<f64>, c: &DMatrix<f64>, horizon: usize) -> Result<DMatrix<f64>> {
    let (m, n) = c.shape();
    let mut out = DMatrix::zeros(m * (horizon + 1), n);
    let mut power = DMatrix::<f64>::identity(n, n);
    for k in 0..=horizon {
        if k > 0 {
            power = a * &power;
            if power.iter().any(|v| !v.is_finite() || v.abs() > POWER_OVERFLOW_LIMIT) {
                return Err(Error::Conditioning(format!(
                    "entries of A^{k} exceed {POWER_OVERFLOW_LIMIT:e}; rescale A or shorten the horizon"
                )));
            }
        }
        out.view_mut((k * m, 0), (m, n)).copy_from(&(c * &power));
    }
    Ok(out)
}

/// `O_ob = [C; CA; ...; CA^{n-1}]`.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    extended_observability(a, c, a.nrows() - 1)
}

/// Safety margin between a staircase direction's gain and its propagated error bound.
pub const STAIRCASE_TOLERANCE_FACTOR: f64 = 100.0;

/// Observability staircase: an orthonormal basis of the row space of `O_ob`, built from
/// `range(C^T)` by repeatedly adding the part of `A^T` applied to the newest directions that
/// is not yet spanned.
///
/// Avoids forming `A^k`, whose rows align with the dominant eigenvector as `k` grows. Each
/// step carries a first-order bound on the error of the frontier: a direction kept with a
/// small gain has a poorly determined orientation, and `A^T` carries that error into the next
/// step. Directions whose gain is within [`STAIRCASE_TOLERANCE_FACTOR`] of the bound are
/// treated as rounding and dropped.
#[derive(Debug, Clone)]
pub struct Staircase {
    /// `n x r`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Residual norm with which each basis column entered.
    pub gains: Vec<f64>,
    /// Largest deflation threshold used; the rank tolerance for [`Staircase::scaled_rows`].
    pub tolerance: f64,
}

impl Staircase {
    pub fn new(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let unit = n.max(1) as f64 * f64::EPSILON;
        let norm_a = spectral_norm(a)?;
        let mut error = unit * spectral_norm(c)?;
        let mut tolerance = 0.0_f64;
        let mut basis = DMatrix::<f64>::zeros(n, 0);
        let mut gains = Vec::new();
        let mut frontier = c.transpose();
        while basis.ncols() < n && frontier.ncols() > 0 {
            let incoming = spectral_norm(&frontier)?;
            for _ in 0..2 {
                frontier -= &basis * (basis.transpose() * &frontier);
            }
            let step_error = error + unit * incoming;
            let threshold = STAIRCASE_TOLERANCE_FACTOR * step_error;
            let d = svd(&frontier, false)?;
            let keep: Vec<usize> = (0..d.singular_values.len())
                .filter(|&k| d.singular_values[k] > threshold)
                .collect();
            if keep.is_empty() {
                break;
            }
            tolerance = tolerance.max(threshold);
            let smallest = keep.iter().map(|&k| d.singular_values[k]).fold(f64::INFINITY, f64::min);
            gains.extend(keep.iter().map(|&k| d.singular_values[k]));
            let fresh = d.u.select_columns(&keep);
            let width = basis.ncols();
            basis = basis.resize_horizontally(width + fresh.ncols(), 0.0);
            basis.view_mut((0, width), fresh.shape()).copy_from(&fresh);
            error = norm_a * step_error / smallest + unit * norm_a;
            frontier = a.transpose() * fresh;
        }
        Ok(Staircase {
            basis,
            gains,
            tolerance,
        })
    }

    /// Dimension of the observable subspace.
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// `r x n` rows spanning the row space of `O_ob`, each basis direction scaled by its gain.
    ///
    /// `rank(O_ob E) = rank(W E)` for every column selector `E`. Rounding in `W` is absolute
    /// and stays below [`Staircase::tolerance`], which is not true of the unit-norm basis.
    pub fn scaled_rows(&self) -> DMatrix<f64> {
        let mut w = self.basis.transpose();
        for (k, mut row) in w.row_iter_mut().enumerate() {
            row *= self.gains[k];
        }
        w
    }
}

/// Orthonormal basis (`n x r` columns) of the row space of `O_ob`; see [`Staircase`].
pub fn observable_subspace(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(Staircase::new(a, c)?.basis)
}

/// Toeplitz map with block `(i, j) = C A^{i-j-1}` for `i > j`, built from the blocks of `O_T`.
pub fn toeplitz_from_blocks(o_t: &DMatrix<f64>, m: usize, n: usize, horizon: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(m * (horizon + 1), n * horizon);
    for i in 1..=horizon {
        for j in 0..i {
            let k = i - j - 1;
            h.view_mut((i * m, j * n), (m, n))
                .copy_from(&o_t.view((k * m, 0), (m, n)));
        }
    }
    h
}

#[derive(Debug, Clone)]
pub struct ObservabilityBundle {
    pub o_ob: DMatrix<f64>,
    pub o_t: DMatrix<f64>,
    pub h_t: DMatrix<f64>,
    pub horizon: usize,
}

/// Builds `O_ob`, `O_T` and `H_T` for `horizon >= n - 1`.
pub fn build_bundle(sys: &LinearSystem, horizon: usize) -> Result<ObservabilityBundle> {
    let n = sys.n();
    if horizon + 1 < n {
        return Err(Error::Domain(format!("horizon T = {horizon} must be at least n - 1 = {}", n - 1)));
    }
    let o_t = extended_observability(sys.a(), sys.c(), horizon)?;
    let o_ob = o_t.rows(0, sys.m() * n).into_owned();
    let h_t = toeplitz_from_blocks(&o_t, sys.m(), n, horizon);
    Ok(ObservabilityBundle {
        o_ob,
        o_t,
        h_t,
        horizon,
    })
}

/// `O_T` and `H_T` for any horizon (no `T >= n - 1` requirement), as used by simulation and
/// the DP conditions.
pub fn output_maps(sys: &LinearSystem, horizon: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let o_t = extended_observability(sys.a(), sys.c(), horizon)?;
    let h_t = toeplitz_from_blocks(&o_t, sys.m(), sys.n(), horizon);
    Ok((o_t, h_t))
}

/// Row block `t` is `C_t A_{t-1} ... A_0`.
pub fn build_tv_observability(sys: &TimeVaryingSystem, horizon: usize) -> Result<DMatrix<f64>> {
    if sys.horizon() < horizon {
        return Err(Error::Dimension(format!(
            "sequences cover horizon {}, requested {horizon}",
            sys.horizon()
        )));
    }
    let (n, m) = (sys.n(), sys.m());
    let mut out = DMatrix::zeros(m * (horizon + 1), n);
    let mut transition = DMatrix::<f64>::identity(n, n);
    for t in 0..=horizon {
        if t > 0 {
            transition = &sys.a_seq()[t - 1] * &transition;
            if transition.iter().any(|v| !v.is_finite() || v.abs() > POWER_OVERFLOW_LIMIT) {
                return Err(Error::Conditioning(format!(
                    "state transition up to t = {t} exceeds {POWER_OVERFLOW_LIMIT:e}"
                )));
            }
        }
        out.view_mut((t * m, 0), (m, n))
            .copy_from(&(&sys.c_seq()[t] * &transition));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::NoiseModel;

    fn two_state(c: &[f64]) -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -1.0]),
            DMatrix::from_row_slice(1, 2, c),
            NoiseModel::iid(1.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn example_one_a_bundle() {
        let b = build_bundle(&two_state(&[1.0, 1.0]), 1).unwrap();
        assert_eq!(b.o_t, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]));
        assert_eq!(b.h_t, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]));
        assert_eq!(numerical_rank(&b.o_ob, None).unwrap(), 1);
    }

    #[test]
    fn staircase_matches_power_rank() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -1.0]);
        let q = observable_subspace(&a, &DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
        assert_eq!(q.ncols(), 1);
        assert!((q[(0, 0)].abs() - q[(1, 0)].abs()).abs() < 1e-15);
        let q = observable_subspace(&a, &DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        assert_eq!(q.ncols(), 2);
        assert!((q.transpose() * &q - DMatrix::identity(2, 2)).norm() < 1e-14);
        // Long chain x1 <- x2 <- ... <- x12, sensor on x1: fully observable.
        let n = 12;
        let mut chain = DMatrix::zeros(n, n);
        for k in 0..n - 1 {
            chain[(k, k + 1)] = 0.3;
        }
        let mut c = DMatrix::zeros(1, n);
        c[(0, 0)] = 1.0;
        assert_eq!(observable_subspace(&chain, &c).unwrap().ncols(), n);
    }

    #[test]
    fn identity_dynamics_stack_identities() {
        let sys = LinearSystem::new(
            DMatrix::identity(3, 3),
            DMatrix::identity(3, 3),
            NoiseModel::iid(0.0, 0.0).unwrap(),
        )
        .unwrap();
        let b = build_bundle(&sys, 2).unwrap();
        for k in 0..3 {
            assert_eq!(b.o_t.rows(3 * k, 3).into_owned(), DMatrix::<f64>::identity(3, 3));
        }
    }

    #[test]
    fn horizon_too_short() {
        let sys = LinearSystem::new(
            DMatrix::identity(3, 3),
            DMatrix::identity(3, 3),
            NoiseModel::iid(0.0, 0.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(build_bundle(&sys, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn overflow_guard_trips() {
        let sys = LinearSystem::new(
            DMatrix::from_element(1, 1, 1e20),
            DMatrix::from_element(1, 1, 1.0),
            NoiseModel::iid(0.0, 0.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(build_bundle(&sys, 10), Err(Error::Conditioning(_))));
    }

    #[test]
    fn toeplitz_first_block_row_is_zero() {
        let sys = two_state(&[1.0, 0.0]);
        let b = build_bundle(&sys, 4).unwrap();
        assert!(b.h_t.row(0).iter().all(|v| *v == 0.0));
        // block (3, 1) = C A^1
        let ca = sys.c() * sys.a();
        assert_eq!(b.h_t.view((3, 2), (1, 2)).into_owned(), ca);
        // strictly lower: block (1, 1) is zero
        assert!(b.h_t.view((1, 2), (1, 2)).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rank_basics() {
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 4), None).unwrap(), 0);
        assert_eq!(numerical_rank(&DMatrix::identity(5, 5), None).unwrap(), 5);
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 0), None).unwrap(), 0);
        let mut bad = DMatrix::identity(2, 2);
        bad[(0, 1)] = f64::NAN;
        assert!(matches!(numerical_rank(&bad, None), Err(Error::NonFinite)));
    }

    #[test]
    fn explicit_tolerance_is_respected() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1e-6]));
        assert_eq!(numerical_rank(&m, None).unwrap(), 2);
        assert_eq!(numerical_rank(&m, Some(1e-3)).unwrap(), 1);
    }

    #[test]
    fn column_selection() {
        let id = DMatrix::<f64>::identity(3, 3);
        let none = Selector::new(&DisclosureSet::empty(), 3).unwrap();
        assert_eq!(select_columns(&id, &none, Columns::Unpublic).unwrap(), id);
        let all = Selector::new(&DisclosureSet::new(vec![0, 1, 2], 3).unwrap(), 3).unwrap();
        assert_eq!(select_columns(&id, &all, Columns::Unpublic).unwrap().ncols(), 0);
        let two = Selector::new(&DisclosureSet::new(vec![1], 3).unwrap(), 3).unwrap();
        let got = select_columns(&id, &two, Columns::Unpublic).unwrap();
        assert_eq!(got, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
        assert_eq!(got, &id * two.e_unpublic());
        assert!(select_columns(&DMatrix::zeros(2, 2), &two, Columns::Public).is_err());
    }

    #[test]
    fn selectors_permute_identity() {
        let sel = Selector::new(&DisclosureSet::new(vec![3, 0], 5).unwrap(), 5).unwrap();
        let mut joined = DMatrix::zeros(5, 5);
        joined.columns_mut(0, 2).copy_from(&sel.e_public());
        joined.columns_mut(2, 3).copy_from(&sel.e_unpublic());
        let gram = joined.transpose() * &joined;
        assert_eq!(gram, DMatrix::identity(5, 5));
    }

    #[test]
    fn time_varying_zero_dynamics() {
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let tv = TimeVaryingSystem::new(
            vec![DMatrix::zeros(2, 2); 3],
            vec![c.clone(); 4],
            NoiseModel::iid(0.0, 0.0).unwrap(),
        )
        .unwrap();
        let o = build_tv_observability(&tv, 3).unwrap();
        assert_eq!(o.row(0).into_owned(), c);
        assert!(o.rows(1, 3).iter().all(|v| *v == 0.0));
        assert!(build_tv_observability(&tv, 4).is_err());
    }

    #[test]
    fn time_varying_matches_direct_products() {
        // Fixed "random" sequences; oracle multiplies the matrices out explicitly.
        let a0 = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 0.7, 0.4]);
        let a1 = DMatrix::from_row_slice(2, 2, &[1.1, 0.5, -0.2, 0.9]);
        let c0 = DMatrix::from_row_slice(1, 2, &[0.6, -0.8]);
        let c1 = DMatrix::from_row_slice(1, 2, &[1.5, 0.2]);
        let c2 = DMatrix::from_row_slice(1, 2, &[-0.4, 1.3]);
        let tv = TimeVaryingSystem::new(
            vec![a0.clone(), a1.clone()],
            vec![c0.clone(), c1.clone(), c2.clone()],
            NoiseModel::iid(0.0, 0.0).unwrap(),
        )
        .unwrap();
        let o = build_tv_observability(&tv, 2).unwrap();
        let row1 = [
            c1[(0, 0)] * a0[(0, 0)] + c1[(0, 1)] * a0[(1, 0)],
            c1[(0, 0)] * a0[(0, 1)] + c1[(0, 1)] * a0[(1, 1)],
        ];
        let a10 = [
            [
                a1[(0, 0)] * a0[(0, 0)] + a1[(0, 1)] * a0[(1, 0)],
                a1[(0, 0)] * a0[(0, 1)] + a1[(0, 1)] * a0[(1, 1)],
            ],
            [
                a1[(1, 0)] * a0[(0, 0)] + a1[(1, 1)] * a0[(1, 0)],
                a1[(1, 0)] * a0[(0, 1)] + a1[(1, 1)] * a0[(1, 1)],
            ],
        ];
        let row2 = [
            c2[(0, 0)] * a10[0][0] + c2[(0, 1)] * a10[1][0],
            c2[(0, 0)] * a10[0][1] + c2[(0, 1)] * a10[1][1],
        ];
        assert_eq!(o.row(0).into_owned(), c0);
        for j in 0..2 {
            assert!((o[(1, j)] - row1[j]).abs() < 1e-14);
            assert!((o[(2, j)] - row2[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn null_space_of_example_one_a() {
        let ns = null_space(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]), None).unwrap();
        assert_eq!(ns.ncols(), 1);
        let v = ns.column(0);
        assert!((v[0] + v[1]).abs() < 1e-12);
    }
}
