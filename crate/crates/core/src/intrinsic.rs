//! Exact intrinsic-privacy verdicts for a fixed `(A, C)`.
//!
//! A node `i` keeps its initial value private w.r.t. a disclosure set `P` when some direction
//! `eta` with `eta_i != 0` and `eta_P = 0` lies in the kernel of the observability matrix: two
//! initial states differing by `eta` produce identically distributed outputs. Three rank tests
//! detect this:
//!
//! * **b**  `rank(O E_Pbar) = rank(O` without column `i` `)`, column `i` is spanned by the
//!   other unpublic columns;
//! * **c**  `rank([O; E_P^T; e_i^T]) = rank([O; E_P^T]) + 1`, `e_i` is outside the
//!   `P`-extended observable row space;
//! * **c'** `rank([O; e_i^T] E_Pbar) = rank(O E_Pbar) + 1`, the same test restricted to the
//!   unpublic columns.
//!
//! All three hold together or fail together. Every rank inside one verdict uses one tolerance,
//! taken from `[O; E_P^T; e_i^T]`, which contains every other matrix involved.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg;
use crate::obsv::{null_space, numerical_rank, observability_matrix, singular_values, spectral_norm, Selector};
use crate::sysmodel::{DisclosureSet, LinearSystem};

/// Relative residual allowed for a certifying direction: `|O eta| <= 1e-8 |O|` with `|eta| = 1`.
pub const ETA_RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Largest node count accepted by [`privacy_index_bruteforce`].
pub const BRUTE_FORCE_MAX_NODES: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    B,
    C,
    CPrime,
    /// Evaluate b, c and c' and fail if they disagree.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    B,
    C,
    CPrime,
    Prop1,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RankRecord {
    #[serde(rename = "rank_Opbar")]
    pub rank_opbar: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_minus_i: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_with_ei: Option<usize>,
    /// `rank([O; E_P^T])`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_extended: Option<usize>,
    /// `rank([O; E_P^T; e_i^T])`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_extended_with_ei: Option<usize>,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyVerdict {
    /// `None` for the whole initial vector.
    pub node: Option<usize>,
    pub public: DisclosureSet,
    pub private: bool,
    pub ranks: RankRecord,
    pub certified_by: Certificate,
    /// Unit-norm kernel direction certifying privacy, when private.
    pub eta: Option<DVector<f64>>,
}

impl Serialize for PrivacyVerdict {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(None)?;
        match self.node {
            Some(i) => map.serialize_entry("node", &(i + 1))?,
            None => map.serialize_entry("node", "whole-vector")?,
        }
        map.serialize_entry("P", &self.public.one_based())?;
        map.serialize_entry("private", &self.private)?;
        map.serialize_entry("ranks", &self.ranks)?;
        map.serialize_entry("certified_by", &self.certified_by)?;
        if let Some(eta) = &self.eta {
            map.serialize_entry("eta", &eta.iter().copied().collect::<Vec<_>>())?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMethod {
    Formula,
    BruteForce,
    GenericSampling,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndexReport {
    pub index: i64,
    #[serde(rename = "rank_Oob")]
    pub rank_oob: usize,
    pub n: usize,
    pub method: IndexMethod,
    /// Set when the index is negative: even with nothing disclosed, every node is exposed.
    pub no_level0_privacy: bool,
}

impl IndexReport {
    pub(crate) fn new(index: i64, rank_oob: usize, n: usize, method: IndexMethod) -> Self {
        IndexReport {
            index,
            rank_oob,
            n,
            method,
            no_level0_privacy: index < 0,
        }
    }
}

/// Whole-vector privacy holds exactly when `(A, C)` is unobservable.
pub fn whole_vector_private(sys: &LinearSystem) -> Result<PrivacyVerdict> {
    whole_vector_private_in(&observability_matrix(sys.a(), sys.c())?, None)
}

/// Whole-vector verdict for an arbitrary observability matrix (LTI `O_ob` or time-varying `Ô`).
pub fn whole_vector_private_in(obsv: &DMatrix<f64>, tol: Option<f64>) -> Result<PrivacyVerdict> {
    let n = obsv.ncols();
    let tol = match tol {
        Some(t) => t,
        None => crate::obsv::default_tolerance(obsv)?,
    };
    let rank = numerical_rank(obsv, Some(tol))?;
    let private = rank < n;
    let eta = if private {
        let ns = null_space(obsv, Some(tol))?;
        Some(ns.column(0).into_owned())
    } else {
        None
    };
    Ok(PrivacyVerdict {
        node: None,
        public: DisclosureSet::empty(),
        private,
        ranks: RankRecord {
            rank_opbar: rank,
            tolerance: tol,
            ..Default::default()
        },
        certified_by: Certificate::Prop1,
        eta,
    })
}

pub fn node_private(sys: &LinearSystem, i: usize, public: &DisclosureSet, condition: Condition) -> Result<PrivacyVerdict> {
    node_private_in(&observability_matrix(sys.a(), sys.c())?, i, public, condition, None)
}

pub(crate) fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

pub(crate) fn unit_rows(idx: &[usize], n: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(idx.len(), n);
    for (k, &i) in idx.iter().enumerate() {
        e[(k, i)] = 1.0;
    }
    e
}

/// Node verdict for an arbitrary observability matrix. `tol` overrides the shared tolerance.
pub fn node_private_in(
    obsv: &DMatrix<f64>,
    i: usize,
    public: &DisclosureSet,
    condition: Condition,
    tol: Option<f64>,
) -> Result<PrivacyVerdict> {
    let n = obsv.ncols();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i + 1, len: n });
    }
    if public.contains(i) {
        return Err(Error::NodeIsPublic { node: i + 1 });
    }
    let sel = Selector::new(public, n)?;
    let unpublic = sel.unpublic();
    let pos_i = unpublic.iter().position(|&j| j == i).expect("i is unpublic");
    let others: Vec<usize> = unpublic.iter().copied().filter(|&j| j != i).collect();

    let mut extended_idx = public.indices().to_vec();
    let extended = stack_rows(obsv, &unit_rows(&extended_idx, n));
    extended_idx.push(i);
    let extended_ei = stack_rows(obsv, &unit_rows(&extended_idx, n));

    let tol = match tol {
        Some(t) => t,
        None => {
            let smax = singular_values(&extended_ei)?.first().copied().unwrap_or(0.0);
            smax * extended_ei.nrows().max(n) as f64 * f64::EPSILON
        }
    };
    let rank = |m: &DMatrix<f64>| numerical_rank(m, Some(tol));

    let o_pbar = obsv.select_columns(unpublic);
    let rank_opbar = rank(&o_pbar)?;
    let mut ranks = RankRecord {
        rank_opbar,
        tolerance: tol,
        ..Default::default()
    };

    let wants = |c: Condition| condition == c || condition == Condition::All;
    let mut verdicts: Vec<(Certificate, bool)> = Vec::new();
    if wants(Condition::B) {
        let r = rank(&obsv.select_columns(&others))?;
        ranks.rank_minus_i = Some(r);
        verdicts.push((Certificate::B, rank_opbar == r));
    }
    if wants(Condition::C) {
        let r0 = rank(&extended)?;
        let r1 = rank(&extended_ei)?;
        ranks.rank_extended = Some(r0);
        ranks.rank_extended_with_ei = Some(r1);
        verdicts.push((Certificate::C, r1 == r0 + 1));
    }
    if wants(Condition::CPrime) {
        let mut ei = DMatrix::zeros(1, unpublic.len());
        ei[(0, pos_i)] = 1.0;
        let r = rank(&stack_rows(&o_pbar, &ei))?;
        ranks.rank_with_ei = Some(r);
        verdicts.push((Certificate::CPrime, r == rank_opbar + 1));
    }

    let private = verdicts
        .iter()
        .find(|(c, _)| *c == Certificate::CPrime)
        .or(verdicts.first())
        .map(|(_, p)| *p)
        .expect("at least one condition evaluated");
    if verdicts.iter().any(|(_, p)| *p != private) {
        return Err(Error::InconsistentConditions(format!(
            "node {}, P = {public}: {:?} (ranks {ranks:?}); try an explicit rank tolerance",
            i + 1,
            verdicts
        )));
    }
    let certified_by = match condition {
        Condition::B => Certificate::B,
        Condition::C => Certificate::C,
        Condition::CPrime | Condition::All => Certificate::CPrime,
    };

    let eta = if private {
        let eta = certifying_direction(obsv, i, &others, tol)?;
        let residual = (obsv * &eta).norm();
        let scale = spectral_norm(obsv)?;
        if residual > ETA_RESIDUAL_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::InconsistentConditions(format!(
                "rank tests report node {} private but the certifying direction leaves residual {residual:e}",
                i + 1
            )));
        }
        Some(eta)
    } else {
        None
    };

    Ok(PrivacyVerdict {
        node: Some(i),
        public: public.clone(),
        private,
        ranks,
        certified_by,
        eta,
    })
}

/// Solves `[K_{i_1} .. K_{i_k}] gamma = K_i` in the least-squares sense and returns the
/// normalized direction with `eta_i = 1`, `eta_{i_j} = -gamma_j`, zero on public nodes.
fn certifying_direction(obsv: &DMatrix<f64>, i: usize, others: &[usize], tol: f64) -> Result<DVector<f64>> {
    let n = obsv.ncols();
    let mut eta = DVector::zeros(n);
    eta[i] = 1.0;
    if !others.is_empty() {
        let k_others = obsv.select_columns(others);
        let k_i = obsv.column(i).into_owned();
        let gamma = linalg::pseudo_inverse(&k_others, tol)? * k_i;
        for (j, &idx) in others.iter().enumerate() {
            eta[idx] = -gamma[j];
        }
    }
    let norm = eta.norm();
    Ok(eta / norm)
}

/// `I_rp = n - rank(O_ob) - 1`.
pub fn privacy_index(sys: &LinearSystem) -> Result<IndexReport> {
    privacy_index_in(&observability_matrix(sys.a(), sys.c())?, None)
}

pub fn privacy_index_in(obsv: &DMatrix<f64>, tol: Option<f64>) -> Result<IndexReport> {
    let n = obsv.ncols();
    let rank = numerical_rank(obsv, tol)?;
    Ok(IndexReport::new(n as i64 - rank as i64 - 1, rank, n, IndexMethod::Formula))
}

/// Largest `l <= l_max` such that every disclosure set of size `l` leaves some node private,
/// found by exhaustive enumeration. Returns `-1` when even `l = 0` fails.
pub fn privacy_index_bruteforce(sys: &LinearSystem, l_max: usize) -> Result<IndexReport> {
    privacy_index_bruteforce_in(&observability_matrix(sys.a(), sys.c())?, l_max, None)
}

pub fn privacy_index_bruteforce_in(obsv: &DMatrix<f64>, l_max: usize, tol: Option<f64>) -> Result<IndexReport> {
    let n = obsv.ncols();
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(Error::GuardExceeded(format!(
            "exhaustive index needs n <= {BRUTE_FORCE_MAX_NODES}, got {n}"
        )));
    }
    let mut best: i64 = -1;
    for l in 0..=l_max.min(n.saturating_sub(1)) {
        let sets: Vec<Vec<usize>> = (0..n).combinations(l).collect();
        let holds = sets
            .par_iter()
            .map(|set| -> Result<bool> {
                let public = DisclosureSet::new(set.clone(), n)?;
                for i in public.complement(n) {
                    if node_private_in(obsv, i, &public, Condition::CPrime, tol)?.private {
                        return Ok(true);
                    }
                }
                Ok(false)
            })
            .collect::<Result<Vec<bool>>>()?
            .into_iter()
            .all(|b| b);
        if holds {
            best = best.max(l as i64);
        }
    }
    let rank = numerical_rank(obsv, tol)?;
    Ok(IndexReport::new(best, rank, n, IndexMethod::BruteForce))
}
