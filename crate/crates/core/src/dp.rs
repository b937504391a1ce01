//! Differential privacy of the initial state under Gaussian noise.
//!
//! The output trajectory `Y_T = O_T x_0 + H_T V_T + W_T` is a Gaussian mechanism. With
//! `Sigma = [H_T I] Sigma_T [H_T I]^T` the per-trajectory noise covariance, `N` eavesdropped
//! trajectories and `d`-adjacent initial states, `(eps, delta)`-DP is certified when
//!
//! ```text
//! sigma_min(Sigma) >= d^2 N |O_T|^2 kappa(eps, delta)^2
//! ```
//!
//! The condition is sufficient only. When it fails the verdict reads "not certified", which
//! says nothing about whether the mechanism is actually private.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, SymmetricEigen};
use crate::obsv::{output_maps, spectral_norm};
use crate::sysmodel::LinearSystem;

/// Relative slack on the boundary of the certified inequalities, absorbing eigen-solver
/// rounding when the noise sits exactly at the calibrated floor.
pub const BOUNDARY_RELATIVE_SLACK: f64 = 1e-12;

const Q_INVERSE_MAX_ITER: usize = 200;

/// Standard normal upper tail, `Q(w) = P(Z >= w)`.
pub fn q_function(w: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(w / std::f64::consts::SQRT_2)
}

fn normal_pdf(w: f64) -> f64 {
    (-0.5 * w * w).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`q_function`] on `(0, 0.5]`.
///
/// Newton iteration on `ln Q(w) - ln p`, falling back to bisection whenever a step leaves the
/// current bracket.
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 0.5) {
        return Err(Error::Domain(format!("Q^-1 needs p in (0, 0.5], got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let target = p.ln();
    let mut lo = 0.0_f64;
    let mut hi = (2.0 * (1.0 / p).ln()).sqrt() + 1.0;
    // Rough start from the tail asymptote.
    let mut w = (2.0 * (0.5 / p).ln()).sqrt().clamp(lo, hi);
    for _ in 0..Q_INVERSE_MAX_ITER {
        let q = q_function(w);
        let f = q.ln() - target;
        if f > 0.0 {
            lo = w;
        } else {
            hi = w;
        }
        let slope = -normal_pdf(w) / q;
        let mut next = w - f / slope;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - w).abs() <= 4.0 * f64::EPSILON * w.max(1.0) {
            return Ok(next);
        }
        w = next;
    }
    Ok(w)
}

/// `kappa(eps, delta) = (Q^-1(delta) + sqrt(Q^-1(delta)^2 + 2 eps)) / (2 eps)`.
pub fn kappa(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain(format!("epsilon must be finite and > 0, got {epsilon}")));
    }
    let qi = q_inverse(delta)?;
    Ok((qi + (qi * qi + 2.0 * epsilon).sqrt()) / (2.0 * epsilon))
}

/// Privacy budget and threat model: `N` trajectories of horizon `T`, `d`-adjacent states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DpBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub d: f64,
    #[serde(rename = "N")]
    pub n_traj: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
}

impl DpBudget {
    pub fn new(epsilon: f64, delta: f64, d: f64, n_traj: usize, horizon: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Domain(format!("epsilon must be > 0, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Error::Domain(format!("delta must lie in (0, 0.5), got {delta}")));
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Domain(format!("adjacency radius d must be > 0, got {d}")));
        }
        if n_traj == 0 {
            return Err(Error::Domain("N must be a positive integer".into()));
        }
        Ok(DpBudget {
            epsilon,
            delta,
            d,
            n_traj,
            horizon,
        })
    }

    /// `d sqrt(N) |O_T|`, the sensitivity of the stacked mechanism.
    fn sensitivity(&self, norm_ot: f64) -> f64 {
        self.d * (self.n_traj as f64).sqrt() * norm_ot
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DpStatus {
    Certified,
    NotCertified,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpVerdict {
    pub satisfied: bool,
    pub status: DpStatus,
    /// `sigma_min(Sigma)`
    pub lhs: f64,
    /// `d^2 N |O_T|^2 kappa^2`
    pub rhs: f64,
    pub kappa: f64,
    #[serde(rename = "norm_OT")]
    pub norm_ot: f64,
    pub refined_used: bool,
    /// `|O_T^T Sigma^-1 O_T|`, when the refined condition was evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refined_lhs: Option<f64>,
    /// `1 / (d^2 N kappa^2)`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refined_rhs: Option<f64>,
    pub budget: DpBudget,
}

struct NoiseGeometry {
    o_t: DMatrix<f64>,
    norm_ot: f64,
    sigma: DMatrix<f64>,
    eig: SymmetricEigen,
}

impl NoiseGeometry {
    fn new(sys: &LinearSystem, horizon: usize) -> Result<Self> {
        let (o_t, h_t) = output_maps(sys, horizon)?;
        let sigma = sys.noise().output_covariance(&h_t, sys.n(), sys.m())?;
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let eig = symmetric_eigen(&sigma)?;
        let norm_ot = spectral_norm(&o_t)?;
        Ok(NoiseGeometry {
            o_t,
            norm_ot,
            sigma,
            eig,
        })
    }

    fn sigma_min(&self) -> f64 {
        self.eig.eigenvalues.min()
    }

    fn sigma_max(&self) -> f64 {
        self.eig.eigenvalues.max()
    }

    fn is_singular(&self) -> bool {
        self.sigma_min() <= 1e-13 * self.sigma_max().max(f64::MIN_POSITIVE)
    }

    /// `|O_T^T Sigma^-1 O_T|`, via the whitened map `Lambda^-1/2 U^T O_T`.
    fn whitened_information(&self) -> Result<f64> {
        if self.is_singular() {
            return Err(Error::SingularCovariance(format!(
                "output covariance has smallest eigenvalue {:e}",
                self.sigma_min()
            )));
        }
        let mut w = self.eig.eigenvectors.transpose() * &self.o_t;
        for (k, mut row) in w.row_iter_mut().enumerate() {
            row /= self.eig.eigenvalues[k].sqrt();
        }
        let s = spectral_norm(&w)?;
        Ok(s * s)
    }
}

/// Evaluates the sufficient DP condition. With `refined`, uses the weaker
/// `|O_T^T Sigma^-1 O_T| <= 1 / (d^2 N kappa^2)`, which the plain condition implies.
pub fn check_dp(sys: &LinearSystem, budget: &DpBudget, refined: bool) -> Result<DpVerdict> {
    let geo = NoiseGeometry::new(sys, budget.horizon)?;
    let k = kappa(budget.epsilon, budget.delta)?;
    let lhs = geo.sigma_min();
    let s = budget.sensitivity(geo.norm_ot);
    let rhs = s * s * k * k;
    let plain = lhs >= rhs * (1.0 - BOUNDARY_RELATIVE_SLACK);

    let (satisfied, refined_lhs, refined_rhs) = if refined {
        let info = geo.whitened_information()?;
        let bound = 1.0 / (budget.d * budget.d * budget.n_traj as f64 * k * k);
        (info <= bound * (1.0 + BOUNDARY_RELATIVE_SLACK), Some(info), Some(bound))
    } else {
        (plain, None, None)
    };
    debug_assert!(geo.sigma.nrows() == geo.o_t.nrows());
    Ok(DpVerdict {
        satisfied,
        status: if satisfied {
            DpStatus::Certified
        } else {
            DpStatus::NotCertified
        },
        lhs,
        rhs,
        kappa: k,
        norm_ot: geo.norm_ot,
        refined_used: refined,
        refined_lhs,
        refined_rhs,
        budget: *budget,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub sigma_omega_floor: f64,
    pub kappa: f64,
    #[serde(rename = "norm_OT")]
    pub norm_ot: f64,
}

/// Smallest i.i.d. measurement-noise scale `d sqrt(N) |O_T| kappa` that certifies the budget
/// for any process-noise scale.
pub fn calibrate_sigma_omega(sys: &LinearSystem, budget: &DpBudget) -> Result<Calibration> {
    let (o_t, _) = output_maps(sys, budget.horizon)?;
    let norm_ot = spectral_norm(&o_t)?;
    let k = kappa(budget.epsilon, budget.delta)?;
    Ok(Calibration {
        sigma_omega_floor: budget.sensitivity(norm_ot) * k,
        kappa: k,
        norm_ot,
    })
}

/// Smallest `delta` certified at `epsilon` for noise floor `sigma_min` and sensitivity
/// `d sqrt(N) |O_T|`:
/// `Q(eps sqrt(sigma_min) / s - s / (2 sqrt(sigma_min)))`.
pub fn delta_min_from(sigma_min: f64, norm_ot: f64, epsilon: f64, d: f64, n_traj: usize) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain(format!("epsilon must be > 0, got {epsilon}")));
    }
    if d.is_nan() || d <= 0.0 || n_traj == 0 {
        return Err(Error::Domain("need d > 0 and N >= 1".into()));
    }
    if sigma_min.is_nan() || sigma_min <= 0.0 {
        return Err(Error::SingularCovariance(format!(
            "smallest eigenvalue {sigma_min:e} of the output covariance"
        )));
    }
    let s = d * (n_traj as f64).sqrt() * norm_ot;
    let root = sigma_min.sqrt();
    Ok(q_function(epsilon * root / s - s / (2.0 * root)))
}

pub fn delta_min(sys: &LinearSystem, epsilon: f64, d: f64, n_traj: usize, horizon: usize) -> Result<f64> {
    let geo = NoiseGeometry::new(sys, horizon)?;
    if geo.is_singular() {
        return Err(Error::SingularCovariance(format!(
            "output covariance has smallest eigenvalue {:e}",
            geo.sigma_min()
        )));
    }
    delta_min_from(geo.sigma_min(), geo.norm_ot, epsilon, d, n_traj)
}
