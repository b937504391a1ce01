//! Monte Carlo harness: trajectories, the eavesdropper's GLS attack and empirical DP evidence.
//!
//! Trajectory `i` draws its noise from a ChaCha stream keyed by `(seed, i)`, so batches are
//! reproducible regardless of how rayon schedules them.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::dp::q_function;
use crate::error::{Error, Result};
use crate::linalg::{self, symmetric_eigen};
use crate::obsv::{null_space, numerical_rank, output_maps, singular_values, POWER_OVERFLOW_LIMIT};
use crate::sysmodel::{LinearSystem, NoiseModel};

/// Upper bound on histogram bins per output coordinate.
pub const MAX_BINS: usize = 512;

/// Cells with fewer samples than this on either side are ignored by the ratio estimates.
pub const MIN_CELL_COUNT: u64 = 10;

/// A disjoint-support mass at or above this rules out every finite epsilon for delta < 0.5.
pub const VIOLATION_MASS: f64 = 0.5;

fn serialize_vector<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

fn serialize_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(m.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()))
}

/// `N` stacked output trajectories `Y_T^i`, one per row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryBatch {
    #[serde(serialize_with = "serialize_vector")]
    pub x0: DVector<f64>,
    #[serde(rename = "N")]
    pub n_traj: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "Y", serialize_with = "serialize_matrix")]
    pub y: DMatrix<f64>,
    pub seed: u64,
    /// Row `i` holds the draws `(V_T^i; W_T^i)` when recording was requested.
    #[serde(skip)]
    pub noise: Option<DMatrix<f64>>,
}

/// Draws `(V_T; W_T)` for one trajectory.
enum NoiseSampler {
    Iid { sigma_nu: f64, sigma_omega: f64, len_v: usize, len_w: usize },
    Joint { factor: DMatrix<f64> },
}

impl NoiseSampler {
    fn new(noise: &NoiseModel, n: usize, m: usize, horizon: usize) -> Result<Self> {
        match noise {
            NoiseModel::Iid {
                sigma_nu,
                sigma_omega,
            } => Ok(NoiseSampler::Iid {
                sigma_nu: *sigma_nu,
                sigma_omega: *sigma_omega,
                len_v: n * horizon,
                len_w: m * (horizon + 1),
            }),
            NoiseModel::General { .. } => {
                let joint = noise.joint_covariance(n, m, horizon)?;
                let eig = symmetric_eigen(&joint)?;
                let mut factor = eig.eigenvectors;
                for (k, mut col) in factor.column_iter_mut().enumerate() {
                    col *= eig.eigenvalues[k].max(0.0).sqrt();
                }
                Ok(NoiseSampler::Joint { factor })
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match self {
            NoiseSampler::Iid {
                sigma_nu,
                sigma_omega,
                len_v,
                len_w,
            } => DVector::from_fn(len_v + len_w, |k, _| {
                let z: f64 = rng.sample(StandardNormal);
                if k < *len_v {
                    sigma_nu * z
                } else {
                    sigma_omega * z
                }
            }),
            NoiseSampler::Joint { factor } => {
                let xi = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
                factor * xi
            }
        }
    }
}

fn run_batch(
    sys: &LinearSystem,
    x0: &DVector<f64>,
    n_traj: usize,
    horizon: usize,
    seed: u64,
    stream_offset: u64,
    record: bool,
) -> Result<TrajectoryBatch> {
    let (n, m) = (sys.n(), sys.m());
    if x0.len() != n {
        return Err(Error::Dimension(format!("x0 has length {}, system has n = {n}", x0.len())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if n_traj == 0 {
        return Err(Error::Domain("N must be a positive integer".into()));
    }
    let sampler = NoiseSampler::new(sys.noise(), n, m, horizon)?;
    let rows = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream_offset + i as u64);
            let draws = sampler.draw(&mut rng);
            let mut y = DVector::zeros(m * (horizon + 1));
            let mut x = x0.clone();
            for t in 0..=horizon {
                let w = draws.rows(n * horizon + t * m, m);
                y.rows_mut(t * m, m).copy_from(&(sys.c() * &x + w));
                if t < horizon {
                    x = sys.a() * &x + draws.rows(t * n, n);
                    if x.iter().any(|v| !v.is_finite() || v.abs() > POWER_OVERFLOW_LIMIT) {
                        return Err(Error::Conditioning(format!(
                            "state diverged at t = {} in trajectory {i}",
                            t + 1
                        )));
                    }
                }
            }
            Ok((y, draws))
        })
        .collect::<Result<Vec<_>>>()?;

    let y = DMatrix::from_fn(n_traj, m * (horizon + 1), |i, j| rows[i].0[j]);
    let noise = record.then(|| {
        let len = rows[0].1.len();
        DMatrix::from_fn(n_traj, len, |i, j| rows[i].1[j])
    });
    Ok(TrajectoryBatch {
        x0: x0.clone(),
        n_traj,
        horizon,
        y,
        seed,
        noise,
    })
}

/// Simulates `N` independent trajectories of the system from `x0`.
pub fn simulate(sys: &LinearSystem, x0: &DVector<f64>, n_traj: usize, horizon: usize, seed: u64) -> Result<TrajectoryBatch> {
    run_batch(sys, x0, n_traj, horizon, seed, 0, false)
}

/// [`simulate`], also keeping every noise draw in [`TrajectoryBatch::noise`].
pub fn simulate_recorded(
    sys: &LinearSystem,
    x0: &DVector<f64>,
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    run_batch(sys, x0, n_traj, horizon, seed, 0, true)
}

/// One row per trajectory: `trajectory, y0_1, .., y0_m, y1_1, ..`.
pub fn write_batch_csv<W: Write>(batch: &TrajectoryBatch, out: W) -> Result<()> {
    let m = batch.y.ncols() / (batch.horizon + 1);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["trajectory".to_string()];
    for t in 0..=batch.horizon {
        for s in 1..=m {
            header.push(format!("y{t}_{s}"));
        }
    }
    w.write_record(&header).map_err(csv_error)?;
    for (i, row) in batch.y.row_iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Parse(format!("csv: {e}")))?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

// ---------------------------------------------------------------------------
// GLS attack

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackResult {
    #[serde(serialize_with = "serialize_vector")]
    pub x0_hat: DVector<f64>,
    /// Covariance of `x0_hat`; `None` when `x0` is not identifiable.
    #[serde(serialize_with = "serialize_covariance")]
    pub covariance_estimate: Option<DMatrix<f64>>,
    pub identifiable: bool,
    /// `|O_T x0_hat - ybar|`.
    pub residual: f64,
    /// Orthonormal basis of the kernel of `O_T`, one vector per entry.
    #[serde(serialize_with = "serialize_columns")]
    pub null_space: DMatrix<f64>,
}

fn serialize_covariance<S: Serializer>(c: &Option<DMatrix<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match c {
        Some(m) => serialize_matrix(m, s),
        None => s.serialize_str("non-identifiable"),
    }
}

fn serialize_columns<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(m.column_iter().map(|c| c.iter().copied().collect::<Vec<_>>()))
}

fn pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(DMatrix::zeros(m.ncols(), m.nrows()));
    }
    let sv = singular_values(m)?;
    let tol = sv[0] * m.nrows().max(m.ncols()) as f64 * f64::EPSILON;
    linalg::pseudo_inverse(m, tol)
}

/// Linear GLS map `G` with `x0_hat = G ybar`.
///
/// Directions where `Sigma` vanishes carry no noise and become exact constraints; the
/// remaining directions are whitened and fitted by least squares. Among all minimizers the
/// minimum-norm one is returned, which is the plain GLS estimate when `Sigma` is nonsingular
/// and `O_T` has full column rank.
fn gls_map(o_t: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rows = sigma.nrows();
    let eig = symmetric_eigen(sigma)?;
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let tol = lmax * rows as f64 * f64::EPSILON;
    let (null_idx, range_idx): (Vec<usize>, Vec<usize>) = (0..rows).partition(|&k| eig.eigenvalues[k] <= tol);

    let u0 = eig.eigenvectors.select_columns(&null_idx);
    let mut whiten = eig.eigenvectors.select_columns(&range_idx).transpose();
    for (r, &k) in range_idx.iter().enumerate() {
        let scale = eig.eigenvalues[k].sqrt();
        whiten.row_mut(r).iter_mut().for_each(|v| *v /= scale);
    }

    let n = o_t.ncols();
    let constraint = u0.transpose() * o_t;
    let constraint_pinv = pseudo_inverse(&constraint)?;
    let particular = &constraint_pinv * u0.transpose();
    let free = if constraint.nrows() == 0 {
        DMatrix::identity(n, n)
    } else {
        null_space(&constraint, None)?
    };
    let fitted = &whiten * o_t * &free;
    let correction = pseudo_inverse(&fitted)? * &whiten * (DMatrix::identity(rows, rows) - o_t * &particular);
    Ok(particular + free * correction)
}

/// Generalized least squares on the trajectory-averaged output, the Gaussian MLE of `x0`.
pub fn mle_attack(sys: &LinearSystem, batch: &TrajectoryBatch) -> Result<AttackResult> {
    let (o_t, h_t) = output_maps(sys, batch.horizon)?;
    if batch.y.ncols() != o_t.nrows() {
        return Err(Error::Dimension(format!(
            "batch rows have length {}, expected m (T + 1) = {}",
            batch.y.ncols(),
            o_t.nrows()
        )));
    }
    if batch.n_traj == 0 || batch.y.nrows() == 0 {
        return Err(Error::Domain("empty trajectory batch".into()));
    }
    let sigma = sys.noise().output_covariance(&h_t, sys.n(), sys.m())?;
    let ybar: DVector<f64> = batch.y.row_mean().transpose();

    let g = gls_map(&o_t, &sigma)?;
    let x0_hat = &g * &ybar;
    let identifiable = numerical_rank(&o_t, None)? == sys.n();
    let covariance_estimate = identifiable.then(|| &g * &sigma * g.transpose() / batch.n_traj as f64);
    Ok(AttackResult {
        residual: (&o_t * &x0_hat - &ybar).norm(),
        x0_hat,
        covariance_estimate,
        identifiable,
        null_space: null_space(&o_t, None)?,
    })
}

// ---------------------------------------------------------------------------
// Empirical DP

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDpOptions {
    pub n_runs: usize,
    pub horizon: usize,
    /// Fixed bin count per coordinate; Freedman-Diaconis when `None`.
    pub bins: Option<usize>,
    /// Target `delta` for the hockey-stick estimate.
    pub delta: f64,
    /// Adjacency radius every pair must respect, when given.
    pub d: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateHistogram {
    /// 0-based index into the stacked output `Y_T`.
    pub coordinate: usize,
    pub edges: Vec<f64>,
    /// `counts[j][k]`: samples from initial value `j` in cell `k`.
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    /// 1-based positions in the initial-value list.
    pub first: usize,
    pub second: usize,
    pub distance: f64,
    /// `max |ln(p/q)|` over cells where both counts reach [`MIN_CELL_COUNT`].
    pub epsilon_hat_delta0: f64,
    /// Smallest `eps` whose hockey-stick divergence over all cells is at most `delta`;
    /// `None` when no finite `eps` suffices.
    pub epsilon_hat_at_delta: Option<f64>,
    /// Largest probability mass one side puts on cells the other side never visits.
    pub disjoint_mass: f64,
    /// `4 sqrt(1/c_p + 1/c_q)`, maximized over the cells behind `epsilon_hat_delta0`.
    pub sampling_noise_bound: f64,
    /// Same cells, exact Gaussian marginals. `None` for a noiseless coordinate.
    pub analytic_log_ratio: Option<f64>,
    pub cells_used: usize,
    pub dp_violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalDpReport {
    pub n_runs: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub delta: f64,
    pub seed: u64,
    pub epsilon_hat_delta0: f64,
    pub epsilon_hat_at_delta: Option<f64>,
    pub sampling_noise_bound: f64,
    pub dp_violation: bool,
    pub pairs: Vec<PairReport>,
    pub histograms: Vec<CoordinateHistogram>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Shared bin edges for one coordinate, from the pooled samples of every initial value.
fn bin_edges(pooled: &mut [f64], bins: Option<usize>) -> Vec<f64> {
    pooled.sort_by(f64::total_cmp);
    let (lo, hi) = (pooled[0], pooled[pooled.len() - 1]);
    if hi <= lo {
        return vec![lo - 0.5, lo + 0.5];
    }
    let count = bins.unwrap_or_else(|| {
        let iqr = quantile(pooled, 0.75) - quantile(pooled, 0.25);
        let width = 2.0 * iqr / (pooled.len() as f64).cbrt();
        if width > 0.0 {
            ((hi - lo) / width).ceil() as usize
        } else {
            (pooled.len() as f64).sqrt().ceil() as usize
        }
    });
    let count = count.clamp(1, MAX_BINS);
    (0..=count).map(|k| lo + (hi - lo) * k as f64 / count as f64).collect()
}

fn histogram(samples: impl Iterator<Item = f64>, edges: &[f64]) -> Vec<u64> {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let mut counts = vec![0u64; bins];
    for v in samples {
        let k = (((v - lo) / (hi - lo)) * bins as f64).floor();
        counts[(k.max(0.0) as usize).min(bins - 1)] += 1;
    }
    counts
}

/// `sum_k max(0, p_k - e^eps q_k)`.
fn hockey_stick(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let scale = eps.exp();
    p.iter().zip(q).map(|(a, b)| (a - scale * b).max(0.0)).sum()
}

/// Smallest `eps >= 0` with both hockey-stick divergences at most `delta`.
fn epsilon_at_delta(p: &[f64], q: &[f64], delta: f64) -> Option<f64> {
    let worst = |eps: f64| hockey_stick(p, q, eps).max(hockey_stick(q, p, eps));
    if worst(0.0) <= delta {
        return Some(0.0);
    }
    let disjoint = |a: &[f64], b: &[f64]| a.iter().zip(b).filter(|(_, y)| **y == 0.0).map(|(x, _)| x).sum::<f64>();
    if disjoint(p, q).max(disjoint(q, p)) > delta {
        return None;
    }
    let mut hi = 1.0;
    while worst(hi) > delta {
        hi *= 2.0;
        if hi > 1e6 {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if worst(mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

struct CoordinateStats {
    eps0: f64,
    eps_delta: Option<f64>,
    disjoint: f64,
    noise_bound: f64,
    analytic: Option<f64>,
    cells: usize,
}

fn compare_cells(
    cp: &[u64],
    cq: &[u64],
    total: f64,
    delta: f64,
    gaussian: Option<(f64, f64, f64)>,
    edges: &[f64],
) -> CoordinateStats {
    let p: Vec<f64> = cp.iter().map(|&c| c as f64 / total).collect();
    let q: Vec<f64> = cq.iter().map(|&c| c as f64 / total).collect();
    let mut stats = CoordinateStats {
        eps0: 0.0,
        eps_delta: epsilon_at_delta(&p, &q, delta),
        disjoint: 0.0,
        noise_bound: 0.0,
        analytic: gaussian.map(|_| 0.0),
        cells: 0,
    };
    let (mut only_p, mut only_q) = (0.0, 0.0);
    for k in 0..p.len() {
        if cq[k] == 0 {
            only_p += p[k];
        }
        if cp[k] == 0 {
            only_q += q[k];
        }
        if cp[k] < MIN_CELL_COUNT || cq[k] < MIN_CELL_COUNT {
            continue;
        }
        stats.cells += 1;
        stats.eps0 = stats.eps0.max((p[k] / q[k]).ln().abs());
        stats.noise_bound = stats
            .noise_bound
            .max(4.0 * (1.0 / cp[k] as f64 + 1.0 / cq[k] as f64).sqrt());
        if let (Some((mp, mq, sd)), Some(best)) = (gaussian, stats.analytic.as_mut()) {
            let mass = |mean: f64| q_function((edges[k] - mean) / sd) - q_function((edges[k + 1] - mean) / sd);
            let (ap, aq) = (mass(mp), mass(mq));
            if ap > 0.0 && aq > 0.0 {
                *best = best.max((ap / aq).ln().abs());
            }
        }
    }
    stats.disjoint = f64::max(only_p, only_q);
    stats
}

/// Histogram comparison of the output distributions produced by adjacent initial values.
///
/// Every initial value gets `n_runs` single-trajectory draws on its own RNG streams. Each
/// output coordinate is binned on edges shared by all initial values, and every pair is
/// compared cell by cell.
pub fn empirical_dp_report(
    sys: &LinearSystem,
    x0_list: &[DVector<f64>],
    opts: &EmpiricalDpOptions,
) -> Result<EmpiricalDpReport> {
    if x0_list.len() < 2 {
        return Err(Error::Domain("need at least two initial values".into()));
    }
    if opts.n_runs == 0 {
        return Err(Error::Domain("n_runs must be positive".into()));
    }
    if opts.bins == Some(0) {
        return Err(Error::Domain("bins must be positive".into()));
    }
    if !(opts.delta >= 0.0 && opts.delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in [0, 1), got {}", opts.delta)));
    }
    let pairs: Vec<(usize, usize)> = (0..x0_list.len())
        .flat_map(|a| (a + 1..x0_list.len()).map(move |b| (a, b)))
        .collect();
    if let Some(d) = opts.d {
        for &(a, b) in &pairs {
            let dist = (&x0_list[a] - &x0_list[b]).norm();
            if dist > d {
                return Err(Error::Domain(format!(
                    "initial values {} and {} are {dist} apart, beyond d = {d}",
                    a + 1,
                    b + 1
                )));
            }
        }
    }

    let batches = x0_list
        .iter()
        .enumerate()
        .map(|(j, x0)| run_batch(sys, x0, opts.n_runs, opts.horizon, opts.seed, (j * opts.n_runs) as u64, false))
        .collect::<Result<Vec<_>>>()?;

    let (o_t, h_t) = output_maps(sys, opts.horizon)?;
    let sigma = sys.noise().output_covariance(&h_t, sys.n(), sys.m())?;
    let means: Vec<DVector<f64>> = x0_list.iter().map(|x| &o_t * x).collect();

    let coords = o_t.nrows();
    let histograms: Vec<CoordinateHistogram> = (0..coords)
        .map(|c| {
            let mut pooled: Vec<f64> = batches.iter().flat_map(|b| b.y.column(c).iter().copied().collect::<Vec<_>>()).collect();
            let edges = bin_edges(&mut pooled, opts.bins);
            let counts = batches.iter().map(|b| histogram(b.y.column(c).iter().copied(), &edges)).collect();
            CoordinateHistogram {
                coordinate: c,
                edges,
                counts,
            }
        })
        .collect();

    let total = opts.n_runs as f64;
    let mut pair_reports = Vec::with_capacity(pairs.len());
    for &(a, b) in &pairs {
        let mut rep = PairReport {
            first: a + 1,
            second: b + 1,
            distance: (&x0_list[a] - &x0_list[b]).norm(),
            epsilon_hat_delta0: 0.0,
            epsilon_hat_at_delta: Some(0.0),
            disjoint_mass: 0.0,
            sampling_noise_bound: 0.0,
            analytic_log_ratio: Some(0.0),
            cells_used: 0,
            dp_violation: false,
        };
        for h in &histograms {
            let c = h.coordinate;
            let sd = sigma[(c, c)].max(0.0).sqrt();
            let gaussian = (sd > 0.0).then(|| (means[a][c], means[b][c], sd));
            let s = compare_cells(&h.counts[a], &h.counts[b], total, opts.delta, gaussian, &h.edges);
            rep.epsilon_hat_delta0 = rep.epsilon_hat_delta0.max(s.eps0);
            rep.epsilon_hat_at_delta = match (rep.epsilon_hat_at_delta, s.eps_delta) {
                (Some(x), Some(y)) => Some(x.max(y)),
                _ => None,
            };
            rep.disjoint_mass = rep.disjoint_mass.max(s.disjoint);
            rep.sampling_noise_bound = rep.sampling_noise_bound.max(s.noise_bound);
            rep.analytic_log_ratio = match (rep.analytic_log_ratio, s.analytic) {
                (Some(x), Some(y)) => Some(x.max(y)),
                _ => None,
            };
            rep.cells_used += s.cells;
        }
        rep.dp_violation = rep.disjoint_mass >= VIOLATION_MASS;
        pair_reports.push(rep);
    }

    let fold = |f: fn(&PairReport) -> f64| pair_reports.iter().map(f).fold(0.0, f64::max);
    Ok(EmpiricalDpReport {
        n_runs: opts.n_runs,
        horizon: opts.horizon,
        delta: opts.delta,
        seed: opts.seed,
        epsilon_hat_delta0: fold(|p| p.epsilon_hat_delta0),
        epsilon_hat_at_delta: pair_reports
            .iter()
            .map(|p| p.epsilon_hat_at_delta)
            .try_fold(0.0_f64, |acc, e| e.map(|v| acc.max(v))),
        sampling_noise_bound: fold(|p| p.sampling_noise_bound),
        dp_violation: pair_reports.iter().any(|p| p.dp_violation),
        pairs: pair_reports,
        histograms,
    })
}

/// Plot-ready histogram table: `coordinate, bin_lo, bin_hi, x0_1, x0_2, ..`.
pub fn write_histogram_csv<W: Write>(report: &EmpiricalDpReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let k = report.histograms.first().map_or(0, |h| h.counts.len());
    let mut header = vec!["coordinate".to_string(), "bin_lo".into(), "bin_hi".into()];
    header.extend((1..=k).map(|j| format!("x0_{j}")));
    w.write_record(&header).map_err(csv_error)?;
    for h in &report.histograms {
        for cell in 0..h.edges.len() - 1 {
            let mut rec = vec![
                (h.coordinate + 1).to_string(),
                h.edges[cell].to_string(),
                h.edges[cell + 1].to_string(),
            ];
            rec.extend(h.counts.iter().map(|c| c[cell].to_string()));
            w.write_record(&rec).map_err(csv_error)?;
        }
    }
    w.flush().map_err(|e| Error::Parse(format!("csv: {e}")))?;
    Ok(())
}
