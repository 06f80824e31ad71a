//! Back-calculation of the dispersion parameter from published summary
//! statistics, and the quasi-Poisson variance-gap diagnostic.
//!
//! Published trials rarely report the NB dispersion directly, but the
//! variance of a reported rate (or rate ratio) CI brackets it: the
//! information sum `Σ λt/(1+κλt)` is squeezed between its evaluations at
//! the mean and maximum follow-up times, and inverting those bounds for κ
//! gives an interval from quantities that are routinely published.
//!
//! A Pearson dispersion factor from a quasi-Poisson fit gives a point
//! estimate instead: φ is approximately `1 + κ μ̄` with `μ̄` the overall
//! mean event count, so `κ ≈ (φ − 1)/μ̄`. Dividing by the pooled event
//! *rate* instead (a published variant) is dimensionally wrong and kept
//! only for comparison.

use crate::design::{ArmSpec, FollowUpMoments};
use crate::error::{Error, Result};
use crate::numeric::normal_quantile;
use serde::{Deserialize, Serialize};

/// Summary statistics of one arm as reported in a publication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PublishedArmSummary {
    /// Arm size.
    pub n: u64,
    /// Observed mean event count per subject (stands in for λ̂ t̄).
    pub mean_events: f64,
    /// Mean follow-up time.
    pub mean_followup: f64,
    /// Maximum follow-up time.
    pub max_followup: f64,
    /// Reported CI for the arm's event rate at level 1 − α, if any.
    pub rate_ci: Option<(f64, f64)>,
}

impl PublishedArmSummary {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidInput("arm size must be positive".into()));
        }
        if !(self.mean_events > 0.0) {
            return Err(Error::InvalidInput(
                "mean event count must be positive".into(),
            ));
        }
        if !(self.mean_followup > 0.0) || !(self.max_followup >= self.mean_followup) {
            return Err(Error::InvalidInput(
                "follow-up times must satisfy 0 < mean <= max".into(),
            ));
        }
        Ok(())
    }

    fn rate(&self) -> f64 {
        self.mean_events / self.mean_followup
    }
}

/// Back-calculated interval for the dispersion parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaInterval {
    pub lower: f64,
    pub upper: f64,
    /// True when a negative bound was clipped to zero.
    pub clipped: bool,
}

impl KappaInterval {
    fn from_raw(lower: f64, upper: f64) -> Self {
        if upper < 0.0 {
            KappaInterval {
                lower: 0.0,
                upper: 0.0,
                clipped: true,
            }
        } else if lower < 0.0 {
            KappaInterval {
                lower: 0.0,
                upper,
                clipped: true,
            }
        } else {
            KappaInterval {
                lower,
                upper,
                clipped: false,
            }
        }
    }
}

/// Point estimate of κ from a Pearson dispersion factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionEstimate {
    pub kappa: f64,
    /// True when φ < 1 forced the estimate to zero.
    pub underdispersed: bool,
}

/// Variance of a log-scale estimate recovered from a CI on the original
/// (rate or ratio) scale: log-transform, halve the width, divide by the
/// normal quantile, square.
fn log_ci_variance(ci: (f64, f64), alpha: f64) -> Result<f64> {
    let (lo, hi) = ci;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidInput(format!(
            "CI bounds must be positive and ordered, got ({lo}, {hi})"
        )));
    }
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let half_width = (hi.ln() - lo.ln()) / 2.0;
    Ok((half_width / z) * (half_width / z))
}

/// κ interval from one arm's published rate CI.
///
/// With `V` the recovered variance of the log rate, `m` the observed mean
/// event count, and λ̂ = m / t̄:
///
/// ```text
/// n V t̄/t_m − 1/(λ̂ t_m)  <=  κ  <=  n V − 1/m
/// ```
///
/// Both sides coincide when t_m = t̄. Negative bounds are clipped to zero
/// and flagged.
pub fn kappa_from_rate_ci(arm: &PublishedArmSummary, alpha: f64) -> Result<KappaInterval> {
    arm.validate()?;
    let ci = arm
        .rate_ci
        .ok_or_else(|| Error::InvalidInput("arm summary carries no rate CI".into()))?;
    let v = log_ci_variance(ci, alpha)?;
    let n = arm.n as f64;
    let rate_times_max = arm.rate() * arm.max_followup;
    let lower = n * v * arm.mean_followup / arm.max_followup - 1.0 / rate_times_max;
    let upper = n * v - 1.0 / arm.mean_events;
    Ok(KappaInterval::from_raw(lower, upper))
}

/// κ interval from a published rate-ratio CI and both arms' summaries.
///
/// With `V` the recovered variance of the log ratio and `m_g` the observed
/// mean event counts:
///
/// ```text
///         V − (n0 m0)⁻¹ − (n1 m1)⁻¹
/// lower = ─────────────────────────────────
///         t_m0/(n0 t̄0) + t_m1/(n1 t̄1)
///
///         V − (n0 m0)⁻¹ − (n1 m1)⁻¹
/// upper = ─────────────────────────────────
///                 n0⁻¹ + n1⁻¹
/// ```
pub fn kappa_from_ratio_ci(
    arms: (&PublishedArmSummary, &PublishedArmSummary),
    ratio_ci: (f64, f64),
    alpha: f64,
) -> Result<KappaInterval> {
    let (a0, a1) = arms;
    a0.validate()?;
    a1.validate()?;
    let v = log_ci_variance(ratio_ci, alpha)?;
    let (n0, n1) = (a0.n as f64, a1.n as f64);
    let numerator = v - 1.0 / (n0 * a0.mean_events) - 1.0 / (n1 * a1.mean_events);
    let lower_denom =
        a0.max_followup / (n0 * a0.mean_followup) + a1.max_followup / (n1 * a1.mean_followup);
    let upper_denom = 1.0 / n0 + 1.0 / n1;
    Ok(KappaInterval::from_raw(
        numerator / lower_denom,
        numerator / upper_denom,
    ))
}

/// Overall mean event count from both arms, weighted by arm size.
pub fn overall_mean_events(arms: (&PublishedArmSummary, &PublishedArmSummary)) -> f64 {
    let (a0, a1) = arms;
    let (n0, n1) = (a0.n as f64, a1.n as f64);
    (n0 * a0.mean_events + n1 * a1.mean_events) / (n0 + n1)
}

/// κ from a quasi-Poisson Pearson dispersion factor: `(φ − 1) / μ̄` with
/// `μ̄` the overall mean event count. Underdispersion (φ < 1) clips to zero.
pub fn kappa_from_quasi_poisson(phi: f64, mean_events_overall: f64) -> Result<DispersionEstimate> {
    if !(mean_events_overall > 0.0) {
        return Err(Error::Domain(format!(
            "overall mean event count must be positive, got {mean_events_overall}"
        )));
    }
    if !phi.is_finite() {
        return Err(Error::Domain(format!("phi must be finite, got {phi}")));
    }
    if phi < 1.0 {
        return Ok(DispersionEstimate {
            kappa: 0.0,
            underdispersed: true,
        });
    }
    Ok(DispersionEstimate {
        kappa: (phi - 1.0) / mean_events_overall,
        underdispersed: false,
    })
}

/// The dimensionally incorrect variant `(φ − 1) / λ̄` that divides by the
/// pooled event *rate*; kept for comparison against published uses.
pub fn kappa_zhu_lakkis(phi: f64, pooled_rate: f64) -> Result<f64> {
    if !(pooled_rate > 0.0) {
        return Err(Error::Domain(format!(
            "pooled event rate must be positive, got {pooled_rate}"
        )));
    }
    Ok((phi - 1.0) / pooled_rate)
}

/// Pooled event rate (total events over total follow-up time) from two
/// published arms, as a quasi-Poisson intercept-only fit would estimate it.
pub fn pooled_event_rate(arms: (&PublishedArmSummary, &PublishedArmSummary)) -> f64 {
    let (a0, a1) = arms;
    let (n0, n1) = (a0.n as f64, a1.n as f64);
    (n0 * a0.mean_events + n1 * a1.mean_events)
        / (n0 * a0.mean_followup + n1 * a1.mean_followup)
}

/// Approximate gap `var_true − var_poi` of the log-ratio variance under the
/// null between the delta-method truth and the quasi-Poisson estimate:
///
/// ```text
/// (κ / n̄) [ 2 CV_t² − (λ0 − λ1)² / (2 λ0 λ1) ]
/// ```
///
/// Positive values mean the quasi-Poisson variance is anti-conservative.
/// The derivation assumes equal per-arm sizes, a common mean follow-up, and
/// a common dispersion.
pub fn quasi_poisson_variance_gap(
    arms: (&ArmSpec, &ArmSpec),
    moments: &FollowUpMoments,
    n_per_arm: u64,
) -> Result<f64> {
    let (a0, a1) = arms;
    a0.validate()?;
    a1.validate()?;
    if a0.kappa != a1.kappa {
        return Err(Error::InvalidInput(
            "the variance-gap approximation assumes a common dispersion".into(),
        ));
    }
    if n_per_arm == 0 {
        return Err(Error::InvalidInput("per-arm size must be positive".into()));
    }
    if !(moments.mean_t > 0.0) {
        return Err(Error::Domain("mean follow-up time is zero".into()));
    }
    let cv = moments.cv();
    let penalty = (a0.lambda - a1.lambda).powi(2) / (2.0 * a0.lambda * a1.lambda);
    Ok(a0.kappa / n_per_arm as f64 * (2.0 * cv * cv - penalty))
}
