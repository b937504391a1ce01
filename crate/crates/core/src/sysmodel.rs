//! Systems, network structures, configurations and disclosure sets.
//!
//! Files use 1-based node and sensor labels; everything in memory is 0-based.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::obsv::numerical_rank;

/// Relative floor used when deciding whether a user covariance is PSD.
pub const PSD_RELATIVE_TOLERANCE: f64 = 1e-10;

/// Gaussian noise acting on the process and the measurements.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// `nu_t ~ N(0, sigma_nu^2 I_n)`, `omega_t ~ N(0, sigma_omega^2 I_m)`, all independent.
    Iid { sigma_nu: f64, sigma_omega: f64 },
    /// Joint covariance of the stacked vector `(V_T; W_T)`, of size `nT + m(T+1)`.
    General { sigma_t: DMatrix<f64> },
}

impl NoiseModel {
    pub fn iid(sigma_nu: f64, sigma_omega: f64) -> Result<Self> {
        if !(sigma_nu.is_finite() && sigma_nu >= 0.0) {
            return Err(Error::invalid("noise.sigma_nu", "must be finite and >= 0"));
        }
        if !(sigma_omega.is_finite() && sigma_omega >= 0.0) {
            return Err(Error::invalid("noise.sigma_omega", "must be finite and >= 0"));
        }
        Ok(NoiseModel::Iid {
            sigma_nu,
            sigma_omega,
        })
    }

    pub fn general(sigma_t: DMatrix<f64>) -> Result<Self> {
        check_psd(&sigma_t, "noise.SigmaT")?;
        Ok(NoiseModel::General { sigma_t })
    }

    pub fn is_iid(&self) -> bool {
        matches!(self, NoiseModel::Iid { .. })
    }

    /// Joint covariance of `(V_T; W_T)` for a system of size `(n, m)` over horizon `horizon`.
    pub fn joint_covariance(&self, n: usize, m: usize, horizon: usize) -> Result<DMatrix<f64>> {
        let nv = n * horizon;
        let nw = m * (horizon + 1);
        match self {
            NoiseModel::Iid {
                sigma_nu,
                sigma_omega,
            } => {
                let mut sigma = DMatrix::zeros(nv + nw, nv + nw);
                for k in 0..nv {
                    sigma[(k, k)] = sigma_nu * sigma_nu;
                }
                for k in nv..nv + nw {
                    sigma[(k, k)] = sigma_omega * sigma_omega;
                }
                Ok(sigma)
            }
            NoiseModel::General { sigma_t } => {
                if sigma_t.nrows() != nv + nw {
                    return Err(Error::Dimension(format!(
                        "SigmaT is {}x{} but horizon T={horizon} needs size nT + m(T+1) = {}",
                        sigma_t.nrows(),
                        sigma_t.ncols(),
                        nv + nw
                    )));
                }
                Ok(sigma_t.clone())
            }
        }
    }

    /// Covariance of one output trajectory's noise, `[H_T I] Sigma_T [H_T I]^T`.
    pub fn output_covariance(&self, toeplitz: &DMatrix<f64>, n: usize, m: usize) -> Result<DMatrix<f64>> {
        let rows = toeplitz.nrows();
        let horizon = rows / m - 1;
        match self {
            NoiseModel::Iid {
                sigma_nu,
                sigma_omega,
            } => {
                let mut sigma = toeplitz * toeplitz.transpose() * (sigma_nu * sigma_nu);
                for k in 0..rows {
                    sigma[(k, k)] += sigma_omega * sigma_omega;
                }
                Ok(symmetrize(sigma))
            }
            NoiseModel::General { .. } => {
                let joint = self.joint_covariance(n, m, horizon)?;
                let mut mix = DMatrix::zeros(rows, n * horizon + rows);
                mix.view_mut((0, 0), (rows, n * horizon)).copy_from(toeplitz);
                for k in 0..rows {
                    mix[(k, n * horizon + k)] = 1.0;
                }
                Ok(symmetrize(&mix * joint * mix.transpose()))
            }
        }
    }
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Accepts `m` when its smallest eigenvalue is at least `-1e-10 * max(largest, 1)`.
pub fn check_psd(m: &DMatrix<f64>, path: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::invalid(path, format!("must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(path, "contains non-finite entries"));
    }
    if m.nrows() == 0 {
        return Ok(());
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::invalid(path, format!("not symmetric (max asymmetry {asym:e})")));
    }
    let eig = linalg::symmetric_eigenvalues(&symmetrize(m.clone())).map_err(|e| Error::invalid(path, e.to_string()))?;
    let min = eig.min();
    let max = eig.max();
    if min < -PSD_RELATIVE_TOLERANCE * max.max(1.0) {
        return Err(Error::NotPsd {
            path: path.to_string(),
            min_eigenvalue: min,
        });
    }
    Ok(())
}

/// `x_{t+1} = A x_t + nu_t`, `y_t = C x_t + omega_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    noise: NoiseModel,
    structure: Option<NetworkStructure>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>, noise: NoiseModel) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(Error::invalid("n", "state dimension must be positive"));
        }
        if !a.is_square() {
            return Err(Error::Dimension(format!("A is {}x{}, expected square", a.nrows(), a.ncols())));
        }
        if c.nrows() == 0 {
            return Err(Error::invalid("m", "output dimension must be positive"));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!("C has {} columns, expected n = {n}", c.ncols())));
        }
        if a.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if numerical_rank(&c, None)? == 0 {
            return Err(Error::ZeroOutputRank);
        }
        Ok(LinearSystem {
            a,
            c,
            noise,
            structure: None,
        })
    }

    /// Attaches a network structure after checking that `(A, C)` complies with it.
    pub fn with_structure(mut self, structure: NetworkStructure) -> Result<Self> {
        if structure.n() != self.n() || structure.m() != self.m() {
            return Err(Error::Dimension(format!(
                "structure is {}x{} (n x m), system is {}x{}",
                structure.n(),
                structure.m(),
                self.n(),
                self.m()
            )));
        }
        let (mask_a, mask_c) = structure.masks();
        for ((i, j), v) in entries(&self.a) {
            if v != 0.0 && !mask_a[(i, j)] {
                return Err(Error::invalid(
                    format!("A[{}][{}]", i + 1, j + 1),
                    format!("nonzero entry without edge {} -> {} in structure", j + 1, i + 1),
                ));
            }
        }
        for ((i, j), v) in entries(&self.c) {
            if v != 0.0 && !mask_c[(i, j)] {
                return Err(Error::invalid(
                    format!("C[{}][{}]", i + 1, j + 1),
                    format!("nonzero entry without sensor edge {} -> s{} in structure", j + 1, i + 1),
                ));
            }
        }
        self.structure = Some(structure);
        Ok(self)
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn structure(&self) -> Option<&NetworkStructure> {
        self.structure.as_ref()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let file = SystemFile {
            n: self.n(),
            m: self.m(),
            a: Some(to_rows(&self.a)),
            c: Some(to_rows(&self.c)),
            a_seq: None,
            c_seq: None,
            noise: Some(NoiseFile::from(&self.noise)),
            structure: self.structure.as_ref().map(StructureFile::from),
        };
        serde_json::to_value(file).expect("system file serializes")
    }
}

/// `x_{t+1} = A_t x_t + nu_t`, `y_t = C_t x_t + omega_t` over a fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingSystem {
    n: usize,
    m: usize,
    a_seq: Vec<DMatrix<f64>>,
    c_seq: Vec<DMatrix<f64>>,
    noise: NoiseModel,
}

impl TimeVaryingSystem {
    /// `a_seq` holds `A_0..A_{T-1}` and `c_seq` holds `C_0..C_T`.
    pub fn new(a_seq: Vec<DMatrix<f64>>, c_seq: Vec<DMatrix<f64>>, noise: NoiseModel) -> Result<Self> {
        let first = c_seq
            .first()
            .ok_or_else(|| Error::invalid("C_seq", "must contain at least C_0"))?;
        let (m, n) = first.shape();
        if n == 0 || m == 0 {
            return Err(Error::invalid("C_seq[0]", "empty matrix"));
        }
        if c_seq.len() != a_seq.len() + 1 {
            return Err(Error::Dimension(format!(
                "C_seq has {} entries, A_seq has {}; expected len(C_seq) = len(A_seq) + 1",
                c_seq.len(),
                a_seq.len()
            )));
        }
        for (t, a) in a_seq.iter().enumerate() {
            if a.shape() != (n, n) {
                return Err(Error::Dimension(format!("A_seq[{t}] is {:?}, expected ({n}, {n})", a.shape())));
            }
        }
        for (t, c) in c_seq.iter().enumerate() {
            if c.shape() != (m, n) {
                return Err(Error::Dimension(format!("C_seq[{t}] is {:?}, expected ({m}, {n})", c.shape())));
            }
        }
        if a_seq.iter().chain(c_seq.iter()).flat_map(|x| x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if c_seq.iter().all(|c| c.iter().all(|v| *v == 0.0)) {
            return Err(Error::ZeroOutputRank);
        }
        Ok(TimeVaryingSystem {
            n,
            m,
            a_seq,
            c_seq,
            noise,
        })
    }

    /// Constant sequences `A_t = A`, `C_t = C` over `horizon` steps.
    pub fn from_lti(sys: &LinearSystem, horizon: usize) -> Self {
        TimeVaryingSystem {
            n: sys.n(),
            m: sys.m(),
            a_seq: vec![sys.a().clone(); horizon],
            c_seq: vec![sys.c().clone(); horizon + 1],
            noise: sys.noise().clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> usize {
        self.a_seq.len()
    }

    pub fn a_seq(&self) -> &[DMatrix<f64>] {
        &self.a_seq
    }

    pub fn c_seq(&self) -> &[DMatrix<f64>] {
        &self.c_seq
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedSystem {
    Lti(LinearSystem),
    TimeVarying(TimeVaryingSystem),
}

/// Directed interaction graph plus sensing graph.
///
/// Edges are kept in canonical order: node edges by `(target, source)`, then sensor edges by
/// `(sensor, source)`. That order defines the layout of a [`Configuration`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkStructure {
    n: usize,
    m: usize,
    /// `(source, target)`: `a[target][source]` may be nonzero.
    edges: Vec<(usize, usize)>,
    /// `(source node, sensor)`: `c[sensor][source]` may be nonzero.
    sensor_edges: Vec<(usize, usize)>,
}

impl NetworkStructure {
    /// Builds a structure from 0-based `(source, target)` and `(source, sensor)` pairs.
    pub fn new(
        n: usize,
        m: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        sensor_edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut node_set = BTreeSet::new();
        for (k, (src, dst)) in edges.into_iter().enumerate() {
            if src >= n || dst >= n {
                return Err(Error::invalid(
                    format!("structure.edges[{k}]"),
                    format!("endpoint out of range 1..={n}"),
                ));
            }
            if !node_set.insert((dst, src)) {
                return Err(Error::invalid(format!("structure.edges[{k}]"), "duplicate edge"));
            }
        }
        let mut sensor_set = BTreeSet::new();
        for (k, (src, sensor)) in sensor_edges.into_iter().enumerate() {
            if src >= n || sensor >= m {
                return Err(Error::invalid(
                    format!("structure.sensor_edges[{k}]"),
                    format!("endpoint out of range (nodes 1..={n}, sensors 1..={m})"),
                ));
            }
            if !sensor_set.insert((sensor, src)) {
                return Err(Error::invalid(format!("structure.sensor_edges[{k}]"), "duplicate edge"));
            }
        }
        Ok(NetworkStructure {
            n,
            m,
            edges: node_set.into_iter().map(|(dst, src)| (src, dst)).collect(),
            sensor_edges: sensor_set.into_iter().map(|(sensor, src)| (src, sensor)).collect(),
        })
    }

    /// Same as [`NetworkStructure::new`] with 1-based labels.
    pub fn from_one_based(
        n: usize,
        m: usize,
        edges: &[(usize, usize)],
        sensor_edges: &[(usize, usize)],
    ) -> Result<Self> {
        let shift = |(a, b): &(usize, usize), what: &str| -> Result<(usize, usize)> {
            if *a == 0 || *b == 0 {
                return Err(Error::invalid(format!("structure.{what}"), "labels are 1-based"));
            }
            Ok((a - 1, b - 1))
        };
        let e = edges.iter().map(|p| shift(p, "edges")).collect::<Result<Vec<_>>>()?;
        let s = sensor_edges
            .iter()
            .map(|p| shift(p, "sensor_edges"))
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, m, e, s)
    }

    /// Every sensor must see at least one node, otherwise `rank(C) = 0` for all weights.
    pub fn validate_sensing(&self) -> Result<()> {
        for s in 0..self.m {
            if !self.sensor_edges.iter().any(|&(_, sensor)| sensor == s) {
                return Err(Error::invalid(
                    "structure.sensor_edges",
                    format!("sensor s{} has no incident edge", s + 1),
                ));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn sensor_edges(&self) -> &[(usize, usize)] {
        &self.sensor_edges
    }

    /// Length of a configuration vector, `|E| + |E_S|`.
    pub fn n_edges(&self) -> usize {
        self.edges.len() + self.sensor_edges.len()
    }

    fn masks(&self) -> (DMatrix<bool>, DMatrix<bool>) {
        let mut a = DMatrix::from_element(self.n, self.n, false);
        let mut c = DMatrix::from_element(self.m, self.n, false);
        for &(src, dst) in &self.edges {
            a[(dst, src)] = true;
        }
        for &(src, s) in &self.sensor_edges {
            c[(s, src)] = true;
        }
        (a, c)
    }

    /// Reads the structure implied by the nonzero pattern of `(A, C)`.
    pub fn from_pattern(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<Self> {
        let edges = entries(a)
            .filter(|(_, v)| *v != 0.0)
            .map(|((i, j), _)| (j, i))
            .collect::<Vec<_>>();
        let sensor_edges = entries(c)
            .filter(|(_, v)| *v != 0.0)
            .map(|((i, j), _)| (j, i))
            .collect::<Vec<_>>();
        Self::new(a.nrows(), c.nrows(), edges, sensor_edges)
    }
}

fn entries(m: &DMatrix<f64>) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| ((i, j), m[(i, j)])))
}

/// Edge weights in the canonical order of a [`NetworkStructure`].
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration(pub Vec<f64>);

impl Configuration {
    pub fn theta(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightDistribution {
    /// Uniform on `[0, 1]`.
    #[default]
    Unit,
    /// Uniform on `[-1, 1]`.
    Signed,
}

/// Places `theta` at the structure's permitted positions, zero elsewhere.
pub fn instantiate_matrices(
    structure: &NetworkStructure,
    theta: &Configuration,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if theta.len() != structure.n_edges() {
        return Err(Error::Dimension(format!(
            "configuration has {} weights, structure has {} edges",
            theta.len(),
            structure.n_edges()
        )));
    }
    let mut a = DMatrix::zeros(structure.n, structure.n);
    let mut c = DMatrix::zeros(structure.m, structure.n);
    let (node_w, sensor_w) = theta.0.split_at(structure.edges.len());
    for (&(src, dst), &w) in structure.edges.iter().zip(node_w) {
        a[(dst, src)] = w;
    }
    for (&(src, s), &w) in structure.sensor_edges.iter().zip(sensor_w) {
        c[(s, src)] = w;
    }
    Ok((a, c))
}

/// Builds the noise-free system for `theta`. Fails downstream with `rank(C) = 0` if every
/// sensor weight vanishes.
pub fn instantiate(structure: &NetworkStructure, theta: &Configuration) -> Result<LinearSystem> {
    let (a, c) = instantiate_matrices(structure, theta)?;
    LinearSystem::new(a, c, NoiseModel::Iid {
        sigma_nu: 0.0,
        sigma_omega: 0.0,
    })
}

pub fn sample_configuration(structure: &NetworkStructure, seed: u64) -> Configuration {
    sample_configuration_with(structure, seed, WeightDistribution::Unit)
}

pub fn sample_configuration_with(
    structure: &NetworkStructure,
    seed: u64,
    dist: WeightDistribution,
) -> Configuration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = (0..structure.n_edges())
        .map(|_| {
            let u: f64 = rng.random();
            match dist {
                WeightDistribution::Unit => u,
                WeightDistribution::Signed => 2.0 * u - 1.0,
            }
        })
        .collect();
    Configuration(theta)
}

/// Public disclosure set: nodes whose initial values the eavesdropper already knows.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DisclosureSet(Vec<usize>);

impl DisclosureSet {
    pub fn empty() -> Self {
        DisclosureSet(Vec::new())
    }

    /// 0-based indices, kept in the given order.
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &i in &indices {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i + 1, len: n });
            }
            if !seen.insert(i) {
                return Err(Error::invalid("public", format!("node {} listed twice", i + 1)));
            }
        }
        Ok(DisclosureSet(indices))
    }

    pub fn from_one_based(labels: &[usize], n: usize) -> Result<Self> {
        if labels.contains(&0) {
            return Err(Error::invalid("public", "node labels are 1-based"));
        }
        Self::new(labels.iter().map(|l| l - 1).collect(), n)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.contains(&i)
    }

    /// Nodes not in the set, ascending.
    pub fn complement(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|i| !self.contains(*i)).collect()
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }
}

impl fmt::Display for DisclosureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.one_based().iter().map(|l| l.to_string()).collect();
        write!(f, "{{{}}}", labels.join(","))
    }
}

// ---------------------------------------------------------------------------
// JSON files

#[derive(Debug, Serialize, Deserialize)]
struct SystemFile {
    n: usize,
    m: usize,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    c: Option<Vec<Vec<f64>>>,
    #[serde(rename = "A_seq", default, skip_serializing_if = "Option::is_none")]
    a_seq: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(rename = "C_seq", default, skip_serializing_if = "Option::is_none")]
    c_seq: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise: Option<NoiseFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    structure: Option<StructureFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NoiseFile {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma_nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma_omega: Option<f64>,
    #[serde(rename = "SigmaT", default, skip_serializing_if = "Option::is_none")]
    sigma_t: Option<Vec<Vec<f64>>>,
}

impl From<&NoiseModel> for NoiseFile {
    fn from(noise: &NoiseModel) -> Self {
        match noise {
            NoiseModel::Iid {
                sigma_nu,
                sigma_omega,
            } => NoiseFile {
                kind: "iid".into(),
                sigma_nu: Some(*sigma_nu),
                sigma_omega: Some(*sigma_omega),
                sigma_t: None,
            },
            NoiseModel::General { sigma_t } => NoiseFile {
                kind: "general".into(),
                sigma_nu: None,
                sigma_omega: None,
                sigma_t: Some(to_rows(sigma_t)),
            },
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StructureFile {
    #[serde(default)]
    edges: Vec<[usize; 2]>,
    #[serde(default)]
    sensor_edges: Vec<[usize; 2]>,
}

impl From<&NetworkStructure> for StructureFile {
    fn from(s: &NetworkStructure) -> Self {
        StructureFile {
            edges: s.edges.iter().map(|&(a, b)| [a + 1, b + 1]).collect(),
            sensor_edges: s.sensor_edges.iter().map(|&(a, b)| [a + 1, b + 1]).collect(),
        }
    }
}

impl StructureFile {
    fn build(&self, n: usize, m: usize) -> Result<NetworkStructure> {
        let e: Vec<_> = self.edges.iter().map(|p| (p[0], p[1])).collect();
        let s: Vec<_> = self.sensor_edges.iter().map(|p| (p[0], p[1])).collect();
        NetworkStructure::from_one_based(n, m, &e, &s)
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, path: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::invalid(path, format!("expected {nrows} rows, found {}", rows.len())));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::invalid(
                format!("{path}[{}]", i + 1),
                format!("expected {ncols} columns, found {}", row.len()),
            ));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{path}[{}]", i + 1), "non-finite entry"));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn parse_noise(noise: Option<&NoiseFile>) -> Result<NoiseModel> {
    let Some(noise) = noise else {
        return NoiseModel::iid(0.0, 0.0);
    };
    match noise.kind.as_str() {
        "iid" => NoiseModel::iid(noise.sigma_nu.unwrap_or(0.0), noise.sigma_omega.unwrap_or(0.0)),
        "general" => {
            let rows = noise
                .sigma_t
                .as_ref()
                .ok_or_else(|| Error::invalid("noise.SigmaT", "required when kind = \"general\""))?;
            let k = rows.len();
            let sigma = matrix_from_rows(rows, k, k, "noise.SigmaT")?;
            NoiseModel::general(sigma)
        }
        other => Err(Error::invalid("noise.kind", format!("expected \"iid\" or \"general\", got {other:?}"))),
    }
}

fn parse_file(text: &str) -> Result<SystemFile> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses a system document (either `A`/`C` or `A_seq`/`C_seq`).
pub fn parse_system(text: &str) -> Result<LoadedSystem> {
    let file = parse_file(text)?;
    let (n, m) = (file.n, file.m);
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    if m == 0 {
        return Err(Error::invalid("m", "must be positive"));
    }
    let noise = parse_noise(file.noise.as_ref())?;
    match (&file.a, &file.c, &file.a_seq, &file.c_seq) {
        (Some(a), Some(c), None, None) => {
            let a = matrix_from_rows(a, n, n, "A")?;
            let c = matrix_from_rows(c, m, n, "C")?;
            let mut sys = LinearSystem::new(a, c, noise)?;
            if let Some(s) = &file.structure {
                sys = sys.with_structure(s.build(n, m)?)?;
            }
            Ok(LoadedSystem::Lti(sys))
        }
        (None, None, Some(a_seq), Some(c_seq)) => {
            let a_seq = a_seq
                .iter()
                .enumerate()
                .map(|(t, a)| matrix_from_rows(a, n, n, &format!("A_seq[{t}]")))
                .collect::<Result<Vec<_>>>()?;
            let c_seq = c_seq
                .iter()
                .enumerate()
                .map(|(t, c)| matrix_from_rows(c, m, n, &format!("C_seq[{t}]")))
                .collect::<Result<Vec<_>>>()?;
            Ok(LoadedSystem::TimeVarying(TimeVaryingSystem::new(a_seq, c_seq, noise)?))
        }
        _ => Err(Error::invalid(
            "A",
            "provide either both \"A\" and \"C\", or both \"A_seq\" and \"C_seq\"",
        )),
    }
}

pub fn load_system(path: impl AsRef<Path>) -> Result<LoadedSystem> {
    parse_system(&read(path.as_ref())?)
}

/// Loads a time-invariant system, rejecting time-varying files.
pub fn load_lti(path: impl AsRef<Path>) -> Result<LinearSystem> {
    match load_system(path)? {
        LoadedSystem::Lti(sys) => Ok(sys),
        LoadedSystem::TimeVarying(_) => Err(Error::invalid(
            "A_seq",
            "this operation needs a time-invariant system (A, C)",
        )),
    }
}

/// Parses a structure document: `n`, `m` and a `structure` object. `A`/`C` may be present and
/// are ignored.
pub fn parse_structure(text: &str) -> Result<NetworkStructure> {
    let file = parse_file(text)?;
    let s = file
        .structure
        .as_ref()
        .ok_or_else(|| Error::invalid("structure", "missing"))?
        .build(file.n, file.m)?;
    s.validate_sensing()?;
    Ok(s)
}

pub fn load_structure(path: impl AsRef<Path>) -> Result<NetworkStructure> {
    parse_structure(&read(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example3() -> NetworkStructure {
        NetworkStructure::from_one_based(3, 1, &[(2, 1), (1, 2), (3, 2)], &[(1, 1), (3, 1)]).unwrap()
    }

    #[test]
    fn loads_example_one() {
        let text = r#"{"n":2,"m":1,"A":[[0,1],[0,-1]],"C":[[1,1]],
                       "noise":{"kind":"iid","sigma_nu":1,"sigma_omega":0}}"#;
        let LoadedSystem::Lti(sys) = parse_system(text).unwrap() else {
            panic!("expected LTI")
        };
        assert_eq!((sys.n(), sys.m()), (2, 1));
        assert_eq!(sys.a()[(1, 1)], -1.0);
    }

    #[test]
    fn zero_output_matrix_is_rejected() {
        let text = r#"{"n":2,"m":1,"A":[[0,1],[0,-1]],"C":[[0,0]]}"#;
        assert!(matches!(parse_system(text), Err(Error::ZeroOutputRank)));
    }

    #[test]
    fn negative_covariance_is_rejected() {
        // n=1, m=1, T=1 -> SigmaT is 1 + 2 = 3 square.
        let text = r#"{"n":1,"m":1,"A":[[0.5]],"C":[[1]],
            "noise":{"kind":"general","SigmaT":[[1,0,0],[0,1,0],[0,0,-0.001]]}}"#;
        match parse_system(text) {
            Err(Error::NotPsd { path, min_eigenvalue }) => {
                assert_eq!(path, "noise.SigmaT");
                assert!((min_eigenvalue + 1e-3).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_report_field_path() {
        let text = r#"{"n":2,"m":1,"A":[[0,1],[0]],"C":[[1,1]]}"#;
        match parse_system(text) {
            Err(Error::Invalid { path, .. }) => assert_eq!(path, "A[2]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn structure_compliance_is_checked() {
        let text = r#"{"n":2,"m":1,"A":[[0,1],[1,0]],"C":[[1,0]],
            "structure":{"edges":[[2,1]],"sensor_edges":[[1,1]]}}"#;
        match parse_system(text) {
            Err(Error::Invalid { path, .. }) => assert_eq!(path, "A[2][1]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn instantiate_example_three_unit_weights() {
        let s = example3();
        let (a, c) = instantiate_matrices(&s, &Configuration(vec![1.0; 5])).unwrap();
        assert_eq!(
            a,
            DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        );
        assert_eq!(c, DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 1.0]));
    }

    #[test]
    fn canonical_order_is_target_then_source() {
        let s = example3();
        // a12 (2->1), a21 (1->2), a23 (3->2), then c11, c13
        assert_eq!(s.edges(), &[(1, 0), (0, 1), (2, 1)]);
        assert_eq!(s.sensor_edges(), &[(0, 0), (2, 0)]);
        let theta = Configuration(vec![2.0, 3.0, 5.0, 7.0, 11.0]);
        let (a, c) = instantiate_matrices(&s, &theta).unwrap();
        assert_eq!(a[(0, 1)], 2.0);
        assert_eq!(a[(1, 0)], 3.0);
        assert_eq!(a[(1, 2)], 5.0);
        assert_eq!(c[(0, 0)], 7.0);
        assert_eq!(c[(0, 2)], 11.0);
    }

    #[test]
    fn empty_structure_fails_downstream() {
        let s = NetworkStructure::new(2, 1, [], []).unwrap();
        let (a, c) = instantiate_matrices(&s, &Configuration(vec![])).unwrap();
        assert!(a.iter().chain(c.iter()).all(|v| *v == 0.0));
        assert!(matches!(instantiate(&s, &Configuration(vec![])), Err(Error::ZeroOutputRank)));
        assert!(s.validate_sensing().is_err());
    }

    #[test]
    fn zero_weights_give_zero_matrices() {
        let s = example3();
        let (a, c) = instantiate_matrices(&s, &Configuration(vec![0.0; 5])).unwrap();
        assert!(a.iter().chain(c.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn wrong_length_configuration() {
        assert!(matches!(
            instantiate_matrices(&example3(), &Configuration(vec![1.0; 4])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn sampling_is_seeded_and_in_range() {
        let s = example3();
        let a = sample_configuration(&s, 42);
        assert_eq!(a, sample_configuration(&s, 42));
        assert_ne!(a, sample_configuration(&s, 43));
        assert!(a.theta().iter().all(|w| (0.0..=1.0).contains(w)));
        let signed = sample_configuration_with(&s, 7, WeightDistribution::Signed);
        assert!(signed.theta().iter().all(|w| (-1.0..=1.0).contains(w)));
    }

    #[test]
    fn disclosure_set_validation() {
        assert!(DisclosureSet::from_one_based(&[1, 1], 3).is_err());
        assert!(DisclosureSet::from_one_based(&[4], 3).is_err());
        assert!(DisclosureSet::from_one_based(&[0], 3).is_err());
        let p = DisclosureSet::from_one_based(&[3, 1], 4).unwrap();
        assert_eq!(p.indices(), &[2, 0]);
        assert_eq!(p.complement(4), vec![1, 3]);
        assert_eq!(p.to_string(), "{3,1}");
    }

    #[test]
    fn time_varying_lengths_are_checked() {
        let a = DMatrix::identity(2, 2);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let noise = NoiseModel::iid(0.0, 0.0).unwrap();
        assert!(TimeVaryingSystem::new(vec![a.clone()], vec![c.clone()], noise.clone()).is_err());
        let tv = TimeVaryingSystem::new(vec![a], vec![c.clone(), c], noise).unwrap();
        assert_eq!(tv.horizon(), 1);
    }
}
