//! Structural privacy: verdicts that hold for almost every weight configuration of a network.
//!
//! Ranks of `O_ob(theta) E_Pbar` reach their maximum `n_P_ob` for almost all `theta`, so a few
//! random draws recover it. Node privacy is then decided on fresh draws by three equivalent
//! tests (C1, C2, C3); any hit proves privacy holds generically, and with probability one a
//! generically private node produces a hit.
//!
//! Each draw's rank tests run on gain-scaled rows of the observability staircase
//! ([`Staircase`]) instead of the raw power stack, with the staircase's own error bound as
//! the rank tolerance.

use nalgebra::DMatrix;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::intrinsic::{node_private, stack_rows, unit_rows, Condition, IndexMethod, IndexReport, PrivacyVerdict};
use crate::obsv::{numerical_rank, Selector, Staircase};
use crate::sysmodel::{
    instantiate, instantiate_matrices, sample_configuration_with, Configuration, DisclosureSet, NetworkStructure,
    WeightDistribution,
};

pub const DEFAULT_SAMPLES: usize = 8;

const RANK_STREAM: u64 = 1;
const VERIFY_STREAM: u64 = 2;

/// Sampling plan shared by every generic analysis. Sample `k` of a stream draws its weights
/// from a seed derived from `(seed, stream, k)`, so results do not depend on scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenericSampler {
    samples: usize,
    seed: u64,
    distribution: WeightDistribution,
}

impl GenericSampler {
    pub fn new(samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::Domain("samples must be at least 1".into()));
        }
        Ok(GenericSampler {
            samples,
            seed,
            distribution: WeightDistribution::Unit,
        })
    }

    pub fn with_distribution(mut self, distribution: WeightDistribution) -> Self {
        self.distribution = distribution;
        self
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn distribution(&self) -> WeightDistribution {
        self.distribution
    }

    fn sample_seed(&self, stream: u64, k: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.set_word_pos(2 * k as u128);
        rng.next_u64()
    }

    fn configuration(&self, structure: &NetworkStructure, stream: u64, k: usize) -> Configuration {
        sample_configuration_with(structure, self.sample_seed(stream, k), self.distribution)
    }
}

/// Rows spanning the observable row space of the instantiated pair (`r x n`, `r` its rank)
/// and the tolerance for ranks of their column selections.
fn observable_rows(structure: &NetworkStructure, theta: &Configuration) -> Result<(DMatrix<f64>, f64)> {
    let (a, c) = instantiate_matrices(structure, theta)?;
    let staircase = Staircase::new(&a, &c)?;
    Ok((staircase.scaled_rows(), staircase.tolerance))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenericRankEstimate {
    #[serde(rename = "n_P_ob")]
    pub n_p_ob: usize,
    pub samples: usize,
    pub seed: u64,
    /// Fraction of samples attaining the maximum.
    pub agreement: f64,
    pub sample_ranks: Vec<usize>,
    /// Samples whose rank fell below the maximum; almost surely tolerance artifacts.
    pub below_max: usize,
}

/// Maximal rank of `O_ob(theta) E_Pbar` over `samples` random configurations.
pub fn estimate_generic_rank(
    structure: &NetworkStructure,
    public: &DisclosureSet,
    sampler: &GenericSampler,
) -> Result<GenericRankEstimate> {
    let sel = Selector::new(public, structure.n())?;
    let ranks = (0..sampler.samples)
        .into_par_iter()
        .map(|k| {
            let (rows, tol) = observable_rows(structure, &sampler.configuration(structure, RANK_STREAM, k))?;
            numerical_rank(&rows.select_columns(sel.unpublic()), Some(tol))
        })
        .collect::<Result<Vec<usize>>>()?;
    let max = ranks.iter().copied().max().unwrap_or(0);
    let hits = ranks.iter().filter(|&&r| r == max).count();
    Ok(GenericRankEstimate {
        n_p_ob: max,
        samples: sampler.samples,
        seed: sampler.seed,
        agreement: hits as f64 / ranks.len() as f64,
        below_max: ranks.len() - hits,
        sample_ranks: ranks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GenericCondition {
    C1,
    C2,
    C3,
}

/// Outcome of the three tests at one verification draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SampleCheck {
    #[serde(rename = "rank_Opbar")]
    pub rank_opbar: usize,
    pub c1: bool,
    pub c2: bool,
    pub c3: bool,
}

impl SampleCheck {
    fn any(&self) -> bool {
        self.c1 || self.c2 || self.c3
    }

    fn consistent(&self) -> bool {
        self.c1 == self.c2 && self.c2 == self.c3
    }
}

/// C1: `rank([O; e_i^T] E_Pbar) = n_P_ob + 1`; C2: the unpublic columns other than `i` reach
/// `n_P_ob`; C3: `rank([O; E_P^T; e_i^T]) = n_P_ob + |P| + 1`.
fn check_conditions(
    rows: &DMatrix<f64>,
    tol: f64,
    i: usize,
    public: &DisclosureSet,
    n_p_ob: usize,
) -> Result<SampleCheck> {
    let n = rows.ncols();
    let sel = Selector::new(public, n)?;
    let unpublic = sel.unpublic();
    let pos_i = unpublic.iter().position(|&j| j == i).expect("i is unpublic");
    let others: Vec<usize> = unpublic.iter().copied().filter(|&j| j != i).collect();

    let mut appended = public.indices().to_vec();
    appended.push(i);
    let full = stack_rows(rows, &unit_rows(&appended, n));
    let tol = Some(tol);

    let o_pbar = rows.select_columns(unpublic);
    let mut ei = DMatrix::zeros(1, unpublic.len());
    ei[(0, pos_i)] = 1.0;
    Ok(SampleCheck {
        rank_opbar: numerical_rank(&o_pbar, tol)?,
        c1: numerical_rank(&stack_rows(&o_pbar, &ei), tol)? == n_p_ob + 1,
        c2: numerical_rank(&rows.select_columns(&others), tol)? == n_p_ob,
        c3: numerical_rank(&full, tol)? == n_p_ob + public.len() + 1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenericVerdict {
    pub node: usize,
    pub public: DisclosureSet,
    pub generically_private: bool,
    pub event_e_observed: bool,
    pub condition_hit: Vec<GenericCondition>,
    /// False when C1, C2 and C3 disagreed at some draw, which only happens at a
    /// non-generic draw or under a misjudged rank.
    pub conditions_consistent: bool,
    pub estimate: GenericRankEstimate,
    pub checks: Vec<SampleCheck>,
}

impl Serialize for GenericVerdict {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(None)?;
        map.serialize_entry("node", &(self.node + 1))?;
        map.serialize_entry("P", &self.public.one_based())?;
        map.serialize_entry("generically_private", &self.generically_private)?;
        map.serialize_entry("event_E_observed", &self.event_e_observed)?;
        map.serialize_entry("condition_hit", &self.condition_hit)?;
        map.serialize_entry("conditions_consistent", &self.conditions_consistent)?;
        map.serialize_entry("estimate", &self.estimate)?;
        map.serialize_entry("checks", &self.checks)?;
        map.end()
    }
}

/// Two-step randomized test: estimate `n_P_ob`, then look for a C1/C2/C3 hit on fresh draws.
pub fn generic_node_privacy(
    structure: &NetworkStructure,
    i: usize,
    public: &DisclosureSet,
    sampler: &GenericSampler,
) -> Result<GenericVerdict> {
    let n = structure.n();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i + 1, len: n });
    }
    if public.contains(i) {
        return Err(Error::NodeIsPublic { node: i + 1 });
    }
    let estimate = estimate_generic_rank(structure, public, sampler)?;
    let checks = (0..sampler.samples)
        .into_par_iter()
        .map(|k| {
            let (rows, tol) = observable_rows(structure, &sampler.configuration(structure, VERIFY_STREAM, k))?;
            check_conditions(&rows, tol, i, public, estimate.n_p_ob)
        })
        .collect::<Result<Vec<SampleCheck>>>()?;

    let mut condition_hit = Vec::new();
    for (cond, hit) in [
        (GenericCondition::C1, checks.iter().any(|c| c.c1)),
        (GenericCondition::C2, checks.iter().any(|c| c.c2)),
        (GenericCondition::C3, checks.iter().any(|c| c.c3)),
    ] {
        if hit {
            condition_hit.push(cond);
        }
    }
    let event = checks.iter().any(SampleCheck::any);
    Ok(GenericVerdict {
        node: i,
        public: public.clone(),
        generically_private: event,
        event_e_observed: event,
        condition_hit,
        conditions_consistent: checks.iter().all(SampleCheck::consistent),
        estimate,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenericIndexReport {
    #[serde(flatten)]
    pub report: IndexReport,
    pub estimate: GenericRankEstimate,
}

/// `n - n_ob_g - 1`, with `n_ob_g` the generic rank of `O_ob`.
pub fn generic_privacy_index(structure: &NetworkStructure, sampler: &GenericSampler) -> Result<GenericIndexReport> {
    let estimate = estimate_generic_rank(structure, &DisclosureSet::empty(), sampler)?;
    let n = structure.n();
    Ok(GenericIndexReport {
        report: IndexReport::new(
            n as i64 - estimate.n_p_ob as i64 - 1,
            estimate.n_p_ob,
            n,
            IndexMethod::GenericSampling,
        ),
        estimate,
    })
}

/// Generic verdict next to the exact verdict at one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DichotomyReport {
    pub generic: GenericVerdict,
    pub special: PrivacyVerdict,
    pub special_theta: Vec<f64>,
    /// The configuration lies on the measure-zero surface where the exact verdict differs
    /// from the generic one.
    pub exception_surface_hit: bool,
}

pub fn dichotomy_report(
    structure: &NetworkStructure,
    i: usize,
    public: &DisclosureSet,
    special_theta: &Configuration,
    sampler: &GenericSampler,
) -> Result<DichotomyReport> {
    let generic = generic_node_privacy(structure, i, public, sampler)?;
    let sys = instantiate(structure, special_theta)?;
    let special = node_private(&sys, i, public, Condition::All)?;
    Ok(DichotomyReport {
        exception_surface_hit: generic.generically_private != special.private,
        generic,
        special,
        special_theta: special_theta.theta().to_vec(),
    })
}
