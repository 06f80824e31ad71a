//! Trial follow-up designs and the information quantities they induce.
//!
//! Two designs are supported. In the fixed-duration design every subject is
//! followed for `tau_c` time units unless lost to follow-up first. In the
//! staggered-accrual design subjects enter during an accrual window of
//! `tau_a` units and are administratively censored `tau_c` units after the
//! window closes, so the planned horizon depends on the entry time. Loss to
//! follow-up is exponential with a per-arm hazard in both designs.
//!
//! For an arm with rate `lambda` and dispersion `kappa`, the quantity that
//! drives the variance of the log-rate estimate is
//! `d = E[lambda t / (1 + kappa lambda t)]` over the follow-up time `t`,
//! bracketed analytically by `d_lower` and `d_upper` from the first two
//! moments of `t`.

use crate::error::{Error, Result};
use crate::numeric::{integrate, QuadratureSpec};
use serde::{Deserialize, Serialize};

/// Censoring/accrual process of the trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DesignKind {
    /// Every subject has the same planned duration `tau_c`.
    FixedDuration,
    /// Entry during `[0, tau_a]`, administrative censoring at `tau_a + tau_c`.
    StaggeredAccrual,
}

/// Parameters of the follow-up process shared by both arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowUpDesign {
    pub kind: DesignKind,
    /// Post-accrual follow-up duration (design 1: the full planned duration).
    pub tau_c: f64,
    /// Accrual duration; zero and unused for `FixedDuration`.
    pub tau_a: f64,
    /// Entry-density shape: positive for front-loaded entry, negative for
    /// lagging entry, zero for uniform entry.
    pub eta: f64,
}

impl FollowUpDesign {
    pub fn fixed_duration(tau_c: f64) -> Self {
        Self {
            kind: DesignKind::FixedDuration,
            tau_c,
            tau_a: 0.0,
            eta: 0.0,
        }
    }

    pub fn staggered_accrual(tau_a: f64, tau_c: f64, eta: f64) -> Self {
        Self {
            kind: DesignKind::StaggeredAccrual,
            tau_c,
            tau_a,
            eta,
        }
    }

    /// Maximum possible follow-up time.
    pub fn total_duration(&self) -> f64 {
        match self.kind {
            DesignKind::FixedDuration => self.tau_c,
            DesignKind::StaggeredAccrual => self.tau_a + self.tau_c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_c > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tau_c must be positive, got {}",
                self.tau_c
            )));
        }
        if self.kind == DesignKind::StaggeredAccrual && !(self.tau_a > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tau_a must be positive in the staggered-accrual design, got {}",
                self.tau_a
            )));
        }
        if !self.eta.is_finite() {
            return Err(Error::InvalidInput("eta must be finite".into()));
        }
        Ok(())
    }
}

/// Event process and allocation of one treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    /// Event rate per time unit (> 0).
    pub lambda: f64,
    /// Dispersion parameter (>= 0; zero is the Poisson limit).
    pub kappa: f64,
    /// Allocation fraction of this arm (the two arms must sum to one).
    pub allocation: f64,
    /// Exponential loss-to-follow-up hazard (>= 0).
    pub dropout_hazard: f64,
}

impl ArmSpec {
    pub fn new(lambda: f64, kappa: f64, allocation: f64, dropout_hazard: f64) -> Result<Self> {
        let arm = Self {
            lambda,
            kappa,
            allocation,
            dropout_hazard,
        };
        arm.validate()?;
        Ok(arm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidInput(format!(
                "event rate must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "dispersion must be non-negative, got {}",
                self.kappa
            )));
        }
        if !(self.allocation > 0.0 && self.allocation < 1.0) {
            return Err(Error::InvalidInput(format!(
                "allocation must lie in (0, 1), got {}",
                self.allocation
            )));
        }
        if !(self.dropout_hazard >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "dropout hazard must be non-negative, got {}",
                self.dropout_hazard
            )));
        }
        Ok(())
    }
}

/// First two moments of the follow-up time together with its maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowUpMoments {
    /// E(t).
    pub mean_t: f64,
    /// E(t²).
    pub mean_t2: f64,
    /// Maximum possible follow-up time.
    pub max_t: f64,
}

impl FollowUpMoments {
    /// Coefficient of variation sd(t) / E(t).
    pub fn cv(&self) -> f64 {
        let var = (self.mean_t2 - self.mean_t * self.mean_t).max(0.0);
        var.sqrt() / self.mean_t
    }
}

/// The information quantity `d` with its analytic bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoQuantities {
    pub d: f64,
    pub d_lower: f64,
    pub d_upper: f64,
}

impl InfoQuantities {
    /// Picks `d`, `d_lower`, or `d_upper`.
    pub fn select(&self, which: DSelection) -> f64 {
        match which {
            DSelection::Exact => self.d,
            DSelection::LowerBound => self.d_lower,
            DSelection::UpperBound => self.d_upper,
        }
    }
}

/// Which variant of `d` a sizing computation should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DSelection {
    Exact,
    LowerBound,
    UpperBound,
}

/// Converts an overall dropout proportion `w` observed by horizon `tau`
/// into the exponential hazard `delta = -ln(1 - w) / tau`.
pub fn dropout_proportion_to_hazard(w: f64, tau: f64) -> Result<f64> {
    if !(w >= 0.0 && w < 1.0) {
        return Err(Error::Domain(format!(
            "dropout proportion must lie in [0, 1), got {w}"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("horizon must be positive, got {tau}")));
    }
    Ok(-(1.0 - w).ln() / tau)
}

// (1 - exp(-x)) / x, stable near zero.
#[inline]
fn expm1_ratio(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// E(t) and E(t²) of the follow-up time for the given design and hazard.
pub fn follow_up_moments(design: &FollowUpDesign, dropout_hazard: f64) -> Result<FollowUpMoments> {
    design.validate()?;
    if !(dropout_hazard >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "dropout hazard must be non-negative, got {dropout_hazard}"
        )));
    }
    let delta = dropout_hazard;
    let max_t = design.total_duration();
    // treat vanishing hazards by the dropout-free closed forms
    let no_dropout = delta * max_t < 1e-10;

    let (mean_t, mean_t2) = match design.kind {
        DesignKind::FixedDuration => {
            let tc = design.tau_c;
            if no_dropout {
                (tc, tc * tc)
            } else {
                let x = delta * tc;
                let mean = tc * expm1_ratio(x);
                // 1 - (1 + x) e^{-x}, written to avoid cancellation
                let core = -(-x).exp_m1() - x * (-x).exp();
                (mean, 2.0 * core / (delta * delta))
            }
        }
        DesignKind::StaggeredAccrual => {
            let ta = design.tau_a;
            let tc = design.tau_c;
            let tau = ta + tc;
            let eta = design.eta;
            let eta_zero = eta.abs() * ta < 1e-10;
            if no_dropout {
                // E(t) = tau - E(e), E(t²) = tau² - 2 tau E(e) + E(e²)
                let (ee, ee2) = if eta_zero {
                    (ta / 2.0, ta * ta / 3.0)
                } else {
                    let x = eta * ta;
                    let em = (-x).exp();
                    let denom = 1.0 - em;
                    let ee = (1.0 - (x + 1.0) * em) / (eta * denom);
                    let ee2 = (2.0 - (x * x + 2.0 * x + 2.0) * em) / (eta * eta * denom);
                    (ee, ee2)
                };
                (tau - ee, (tau - 2.0 * ee) * tau + ee2)
            } else {
                let entry_scale = if eta_zero {
                    1.0 / ta
                } else {
                    eta * (-eta * ta).exp() / (1.0 - (-eta * ta).exp())
                };
                let gap = delta - eta;
                let (h1, h2) = if !eta_zero && gap.abs() * ta < 1e-8 {
                    // limiting forms at eta = delta
                    (entry_scale * ta, entry_scale * ta * ta / 2.0)
                } else {
                    let x = gap * ta;
                    let h1 = entry_scale * ta * expm1_ratio(x);
                    let core = -(-x).exp_m1() - x * (-x).exp();
                    (h1, entry_scale * core / (gap * gap))
                };
                let ec = (-delta * tc).exp();
                let mean = (1.0 - ec * h1) / delta;
                let mean2 =
                    2.0 * (1.0 - ec * ((delta * tc + 1.0) * h1 + delta * h2)) / (delta * delta);
                (mean, mean2)
            }
        }
    };
    Ok(FollowUpMoments {
        mean_t,
        mean_t2,
        max_t,
    })
}

/// `d`, `d_lower`, `d_upper` for one arm under the given design.
///
/// `d` is computed by adaptive quadrature of the design's weighted integrand;
/// the staggered-accrual integral is split at `tau_c` where the censoring
/// weight has a slope kink. The bounds come from the follow-up moments.
pub fn info_quantities(design: &FollowUpDesign, arm: &ArmSpec) -> Result<InfoQuantities> {
    info_quantities_with(design, arm, &QuadratureSpec::default())
}

/// As [`info_quantities`] with an explicit quadrature control.
pub fn info_quantities_with(
    design: &FollowUpDesign,
    arm: &ArmSpec,
    quad: &QuadratureSpec,
) -> Result<InfoQuantities> {
    arm.validate()?;
    let moments = follow_up_moments(design, arm.dropout_hazard)?;
    let lambda = arm.lambda;
    let kappa = arm.kappa;
    let nu = moments.mean_t;

    let d_lower = lambda * nu * nu / (nu + kappa * lambda * moments.mean_t2);
    let d_upper = lambda * nu / (1.0 + kappa * lambda * nu);

    // Poisson limit: bounds collapse algebraically, no quadrature needed
    if kappa == 0.0 {
        let d = lambda * nu;
        return Ok(InfoQuantities {
            d,
            d_lower: d,
            d_upper: d,
        });
    }

    let delta = arm.dropout_hazard;
    let d = match design.kind {
        DesignKind::FixedDuration => {
            if delta * design.tau_c < 1e-10 {
                // degenerate follow-up: all three quantities coincide
                lambda * design.tau_c / (1.0 + kappa * lambda * design.tau_c)
            } else {
                integrate(
                    |t| lambda * (-delta * t).exp() / (1.0 + kappa * lambda * t).powi(2),
                    0.0,
                    design.tau_c,
                    quad,
                )?
            }
        }
        DesignKind::StaggeredAccrual => {
            let ta = design.tau_a;
            let tc = design.tau_c;
            let tau = ta + tc;
            let eta = design.eta;
            let eta_zero = eta.abs() * ta < 1e-10;
            let base = integrate(
                |t| lambda * (-delta * t).exp() / (1.0 + kappa * lambda * t).powi(2),
                0.0,
                tc,
                quad,
            )?;
            let tail = integrate(
                |t| {
                    let w = if eta_zero {
                        (tau - t) / ta
                    } else {
                        (1.0 - (-eta * (tau - t)).exp()) / (1.0 - (-eta * ta).exp())
                    };
                    lambda * (-delta * t).exp() * w / (1.0 + kappa * lambda * t).powi(2)
                },
                tc,
                tau,
                quad,
            )?;
            base + tail
        }
    };

    Ok(InfoQuantities { d, d_lower, d_upper })
}

/// The per-arm term `kappa * f * (max_t - mean_t) / mean_t` of the coarse
/// upper size bound, where `f` is the squared-quantile factor supplied by
/// the sizing layer.
pub fn coarse_upper_size_increment(arm: &ArmSpec, moments: &FollowUpMoments, f: f64) -> Result<f64> {
    if !(f > 0.0) {
        return Err(Error::Domain(format!("factor f must be positive, got {f}")));
    }
    if moments.mean_t == 0.0 {
        return Err(Error::Domain("mean follow-up time is zero".into()));
    }
    Ok(arm.kappa * f * (moments.max_t - moments.mean_t) / moments.mean_t)
}
