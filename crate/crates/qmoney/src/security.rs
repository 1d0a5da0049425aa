//! Closed-form security calculus for the banknote protocol.
//!
//! Everything here is a pure function of its arguments: the completeness
//! (honest-failure) bound, the forging bound with its per-term breakdown,
//! the minimum error rate any forger must induce, the half-gap rule that
//! places the acceptance threshold, and the grid search that picks the
//! slack parameter ε minimizing the number of states a verification needs.
//!
//! All exponents are assembled in the log domain before a single `exp`
//! call so that large-`l` evaluations underflow to zero instead of
//! producing NaNs.

use thiserror::Error;

/// Overall conclusive-outcome efficiency η of the reference setup.
pub const DEFAULT_ETA: f64 = 0.0336;
/// Calibrated conclusive error rate β of the reference setup.
pub const DEFAULT_BETA: f64 = 0.033;
/// Mean photon number per pulse, μ = |α|².
pub const DEFAULT_MU: f64 = 0.25;
/// Forging-probability target.
pub const DEFAULT_FORGE_TARGET: f64 = 1e-7;
/// ε used by the calibrated operating point (β = [`DEFAULT_BETA`]).
pub const DEFAULT_EPS_CALIBRATED: f64 = 0.0018;
/// ε used by the strict operating point (β treated as zero).
pub const DEFAULT_EPS_STRICT: f64 = 0.0015;
/// Error-threshold slack δ used by the strict operating point.
pub const DEFAULT_DELTA_STRICT: f64 = 0.0335;
/// Largest `l` the solver will consider before declaring the target
/// unreachable.
pub const DEFAULT_MAX_STATES: u64 = 1_000_000_000_000;
/// Default grid step for the ε search.
pub const DEFAULT_EPS_GRID_STEP: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum SecurityError {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("infeasible parameters: {0}")]
    Infeasible(String),
}

fn require(cond: bool, name: &'static str, reason: &str) -> Result<(), SecurityError> {
    if cond {
        Ok(())
    } else {
        Err(SecurityError::InvalidParameter {
            name,
            reason: reason.to_string(),
        })
    }
}

/// Parameter set consumed by every bound.
///
/// `eta` is the probability that a single measured state yields a conclusive
/// outcome, `beta` the probability that a conclusive answer is wrong on an
/// honest device, `eps` the efficiency slack, `delta` the error-threshold
/// slack, `mu` the mean photon number per pulse and `forge_target` the
/// forging probability the operator wants to stay below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecurityParams {
    pub eta: f64,
    pub beta: f64,
    pub eps: f64,
    pub delta: f64,
    pub mu: f64,
    pub forge_target: f64,
}

impl SecurityParams {
    pub fn new(
        eta: f64,
        beta: f64,
        eps: f64,
        delta: f64,
        mu: f64,
        forge_target: f64,
    ) -> Result<Self, SecurityError> {
        require(eta.is_finite() && eta > 0.0 && eta <= 1.0, "eta", "must be in (0, 1]")?;
        require(beta.is_finite() && (0.0..1.0).contains(&beta), "beta", "must be in [0, 1)")?;
        require(eps.is_finite() && eps > 0.0, "eps", "must be > 0")?;
        require(eps < eta, "eps", "must be < eta")?;
        require(delta.is_finite() && delta > 0.0, "delta", "must be > 0")?;
        require(mu.is_finite() && mu > 0.0, "mu", "must be > 0")?;
        require(
            forge_target.is_finite() && forge_target > 0.0 && forge_target <= 1.0,
            "forge_target",
            "must be in (0, 1]",
        )?;
        Ok(Self { eta, beta, eps, delta, mu, forge_target })
    }

    /// Reference operating point calibrated against the measured device
    /// (η = 3.36%, β = 0.033); δ is placed by the half-gap rule.
    pub fn calibrated_defaults() -> Self {
        let emin = emin_lower_bound(DEFAULT_EPS_CALIBRATED, DEFAULT_ETA, DEFAULT_MU)
            .expect("default eps is valid");
        let delta = delta_from_gap(emin, DEFAULT_BETA).expect("default gap is positive");
        Self::new(
            DEFAULT_ETA,
            DEFAULT_BETA,
            DEFAULT_EPS_CALIBRATED,
            delta,
            DEFAULT_MU,
            DEFAULT_FORGE_TARGET,
        )
        .expect("defaults are valid")
    }

    /// Strict operating point: every conclusive error is attributed to an
    /// adversary (β = 0), so the whole threshold budget sits in δ.
    pub fn strict_defaults() -> Self {
        Self::new(
            DEFAULT_ETA,
            0.0,
            DEFAULT_EPS_STRICT,
            DEFAULT_DELTA_STRICT,
            DEFAULT_MU,
            DEFAULT_FORGE_TARGET,
        )
        .expect("defaults are valid")
    }

    /// Rate the bank publishes for the holder-side efficiency check: η − ε.
    pub fn efficiency_rate(&self) -> f64 {
        self.eta - self.eps
    }

    /// Rate cap the bank applies to conclusive errors: β + δ.
    pub fn error_rate_cap(&self) -> f64 {
        self.beta + self.delta
    }
}

/// Per-term breakdown of the forging bound.
///
/// `term_qrg` is the retrieval-game term exp(−2ε²l/η²), `term_eff` the
/// efficiency term exp(−2lε²) and `term_err` the error-threshold term
/// exp(−2·l_min·δ²). `total` is their sum clamped to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundBreakdown {
    pub term_qrg: f64,
    pub term_eff: f64,
    pub term_err: f64,
    pub total: f64,
}

/// Lower bound on the average error rate a forger must induce, as a function
/// of the efficiency slack ε, the efficiency η and the mean photon number μ.
///
/// The bound degenerates once 3ε ≥ η; its numerator changes sign at ε = η/9,
/// below which the result is clamped to zero.
pub fn emin_lower_bound(eps: f64, eta: f64, mu: f64) -> Result<f64, SecurityError> {
    require(eta.is_finite() && eta > 0.0, "eta", "must be > 0")?;
    require(mu.is_finite() && mu > 0.0, "mu", "must be > 0")?;
    require(eps.is_finite() && eps >= 0.0, "eps", "must be >= 0")?;
    require(3.0 * eps < eta, "eps", "3*eps must be < eta (bound degenerates)")?;
    let num = 1.0 / 6.0 - 1.5 * eps / eta;
    let den = 1.0 - 3.0 * eps / eta;
    let photon = 4.0 * mu * (-4.0 * mu).exp() / (1.0 - (-4.0 * mu).exp());
    Ok(((num / den) * photon).max(0.0))
}

/// Half-gap rule: place the error threshold midway between the honest rate
/// and the minimum rate a forger must induce, δ = (e_min − β)/2.
pub fn delta_from_gap(emin: f64, beta: f64) -> Result<f64, SecurityError> {
    require(emin.is_finite(), "emin", "must be finite")?;
    require(beta.is_finite() && beta >= 0.0, "beta", "must be >= 0")?;
    if emin <= beta {
        return Err(SecurityError::Infeasible(format!(
            "security unattainable: beta ({beta}) must be below e_min ({emin})"
        )));
    }
    Ok((emin - beta) / 2.0)
}

/// Efficiency threshold l_min = ceil((η − ε)·l): the fewest conclusive
/// outcomes a verification over `l` states may report.
pub fn min_conclusive_threshold(l: u64, eta: f64, eps: f64) -> u64 {
    let raw = ((eta - eps) * l as f64).ceil();
    if raw <= 0.0 {
        0
    } else {
        raw as u64
    }
}

/// Probability that an honest verification of a valid banknote fails,
/// exp(−2·l_min·δ²) + exp(−2lε²), clamped to 1.
pub fn honest_fail_bound(l: u64, params: &SecurityParams) -> Result<f64, SecurityError> {
    require(l >= 1, "l", "must be >= 1")?;
    let l_min = min_conclusive_threshold(l, params.eta, params.eps);
    let term_err = (-2.0 * l_min as f64 * params.delta * params.delta).exp();
    let term_eff = (-2.0 * l as f64 * params.eps * params.eps).exp();
    Ok((term_err + term_eff).min(1.0))
}

/// Probability that an adversary passes verification with a forged banknote.
pub fn forge_bound(l: u64, params: &SecurityParams) -> Result<BoundBreakdown, SecurityError> {
    require(l >= 1, "l", "must be >= 1")?;
    let lf = l as f64;
    let l_min = min_conclusive_threshold(l, params.eta, params.eps);
    let term_qrg = (-2.0 * (params.eps / params.eta).powi(2) * lf).exp();
    let term_eff = (-2.0 * lf * params.eps * params.eps).exp();
    let term_err = (-2.0 * l_min as f64 * params.delta * params.delta).exp();
    Ok(BoundBreakdown {
        term_qrg,
        term_eff,
        term_err,
        total: (term_qrg + term_eff + term_err).min(1.0),
    })
}

/// Smallest number of states `l` whose forging bound meets
/// `params.forge_target`, found by exponential bracketing followed by binary
/// search. The result is exact: `forge_bound(l-1) > target >= forge_bound(l)`.
pub fn solve_min_l(params: &SecurityParams) -> Result<u64, SecurityError> {
    solve_min_l_capped(params, DEFAULT_MAX_STATES)
}

/// [`solve_min_l`] with an explicit cap on the search range.
pub fn solve_min_l_capped(params: &SecurityParams, cap: u64) -> Result<u64, SecurityError> {
    let target = params.forge_target;
    let total = |l: u64| -> Result<f64, SecurityError> { Ok(forge_bound(l, params)?.total) };
    if total(1)? <= target {
        return Ok(1);
    }
    let mut lo = 1u64;
    let mut hi = 2u64;
    while total(hi)? > target {
        lo = hi;
        hi = hi.saturating_mul(2);
        if hi > cap {
            return Err(SecurityError::Infeasible(format!(
                "no l <= {cap} meets forge target {target:e}"
            )));
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if total(mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Controls for the ε grid search.
#[derive(Debug, Clone, Copy)]
pub struct EpsilonSearch {
    /// Grid step; candidates are multiples of this inside (0, η/9).
    pub grid_step: f64,
    /// When set, a candidate is only admitted if its acceptance threshold
    /// β + δ stays strictly above this rate. Used to force the threshold to
    /// clear the error rate of the physical device even when the analysis
    /// attributes all errors to an adversary (β = 0).
    pub threshold_floor: Option<f64>,
    /// Cap handed to the per-candidate `l` solver.
    pub max_states: u64,
}

impl Default for EpsilonSearch {
    fn default() -> Self {
        Self {
            grid_step: DEFAULT_EPS_GRID_STEP,
            threshold_floor: None,
            max_states: DEFAULT_MAX_STATES,
        }
    }
}

/// Result of the ε search: the slack, the half-gap δ it induces, the minimum
/// feasible `l` and the forger error-rate bound at that slack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub eps: f64,
    pub delta: f64,
    pub min_l: u64,
    pub emin: f64,
}

/// Scan ε over (0, η/9) and return the candidate minimizing the number of
/// states needed to reach `target`; ties break toward smaller ε.
pub fn optimize_epsilon(
    eta: f64,
    beta: f64,
    mu: f64,
    target: f64,
) -> Result<OperatingPoint, SecurityError> {
    optimize_epsilon_with(eta, beta, mu, target, &EpsilonSearch::default())
}

/// [`optimize_epsilon`] with explicit search controls.
pub fn optimize_epsilon_with(
    eta: f64,
    beta: f64,
    mu: f64,
    target: f64,
    search: &EpsilonSearch,
) -> Result<OperatingPoint, SecurityError> {
    require(eta.is_finite() && eta > 0.0 && eta <= 1.0, "eta", "must be in (0, 1]")?;
    require(beta.is_finite() && (0.0..1.0).contains(&beta), "beta", "must be in [0, 1)")?;
    require(mu.is_finite() && mu > 0.0, "mu", "must be > 0")?;
    require(
        target.is_finite() && target > 0.0 && target <= 1.0,
        "target",
        "must be in (0, 1]",
    )?;
    require(
        search.grid_step.is_finite() && search.grid_step > 0.0,
        "grid_step",
        "must be > 0",
    )?;

    let mut best: Option<OperatingPoint> = None;
    let mut infeasible_grid = true;
    let mut k = 1u64;
    loop {
        let eps = k as f64 * search.grid_step;
        if eps >= eta / 9.0 {
            break;
        }
        k += 1;
        let emin = emin_lower_bound(eps, eta, mu)?;
        if beta >= emin {
            continue;
        }
        infeasible_grid = false;
        let delta = (emin - beta) / 2.0;
        if let Some(floor) = search.threshold_floor {
            if beta + delta <= floor {
                continue;
            }
        }
        let params = SecurityParams::new(eta, beta, eps, delta, mu, target)?;
        let min_l = match solve_min_l_capped(&params, search.max_states) {
            Ok(l) => l,
            Err(SecurityError::Infeasible(_)) => continue,
            Err(e) => return Err(e),
        };
        if best.is_none_or(|b| min_l < b.min_l) {
            best = Some(OperatingPoint { eps, delta, min_l, emin });
        }
    }
    best.ok_or_else(|| {
        if infeasible_grid {
            SecurityError::Infeasible(format!(
                "beta ({beta}) is not below e_min at any grid point"
            ))
        } else {
            SecurityError::Infeasible(
                "no grid point meets the forge target within the state cap".into(),
            )
        }
    })
}
