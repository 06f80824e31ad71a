//! Monte Carlo trial simulator and model fitters, used to verify the type I
//! error and power of the Wald tests produced by the sizing formulas.
//!
//! Subjects are drawn from the gamma-mixed Poisson representation of the
//! negative binomial: a subject-level frailty `ε ~ Gamma(1/κ, κ)` multiplies
//! the arm rate, and the event count is Poisson with mean `ε λ t` over the
//! sampled follow-up time `t`. Fitting maximizes the NB log-likelihood by
//! profiling the dispersion: for fixed κ the per-arm log-rate score is
//! solved by a damped Newton step, and the profiled κ score is bracketed
//! and polished by an Illinois false-position search on log κ.
//!
//! Each replication draws from its own counter-indexed ChaCha stream, so a
//! fixed master seed produces identical reports for any worker count.

use crate::design::{ArmSpec, DesignKind, FollowUpDesign};
use crate::error::{Error, Result};
use crate::numeric::normal_quantile;
use crate::sizing::{Hypothesis, Metric, TrialSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One simulated subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    /// Treatment group (0 control, 1 active).
    pub arm: u8,
    /// Entry time within the accrual window (zero in the fixed-duration design).
    pub entry_time: f64,
    /// Observed follow-up time.
    pub follow_up: f64,
    /// Observed event count.
    pub events: u64,
}

/// Draws one subject under the given design and arm parameters.
pub fn sample_subject<R: Rng + ?Sized>(
    design: &FollowUpDesign,
    arm_index: u8,
    arm: &ArmSpec,
    rng: &mut R,
) -> SubjectRecord {
    let (entry_time, horizon) = match design.kind {
        DesignKind::FixedDuration => (0.0, design.tau_c),
        DesignKind::StaggeredAccrual => {
            let ta = design.tau_a;
            let eta = design.eta;
            let entry = if eta.abs() * ta < 1e-10 {
                rng.random::<f64>() * ta
            } else {
                // inverse CDF of the truncated-exponential entry density
                let u = rng.random::<f64>();
                -(1.0 - u * (1.0 - (-eta * ta).exp())).ln() / eta
            };
            (entry, ta + design.tau_c - entry)
        }
    };
    let follow_up = if arm.dropout_hazard > 0.0 {
        let dropout = Exp::new(arm.dropout_hazard).unwrap().sample(rng);
        dropout.min(horizon)
    } else {
        horizon
    };
    let frailty = if arm.kappa > 0.0 {
        Gamma::new(1.0 / arm.kappa, arm.kappa).unwrap().sample(rng)
    } else {
        1.0
    };
    let mean = frailty * arm.lambda * follow_up;
    let events = if mean > 0.0 {
        Poisson::new(mean).unwrap().sample(rng) as u64
    } else {
        0
    };
    SubjectRecord {
        arm: arm_index,
        entry_time,
        follow_up,
        events,
    }
}

/// Whether the NB fit shares one dispersion parameter or estimates one per arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DispersionMode {
    Common,
    PerArm,
}

/// Which regression model the simulator fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fitter {
    NegBinomial(DispersionMode),
    QuasiPoisson,
}

/// Fitted two-arm model with the pieces needed for Wald decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Estimated event rates per arm.
    pub lambda_hat: [f64; 2],
    /// Variance of each log-rate estimate.
    pub var_gamma: [f64; 2],
    /// NB dispersion estimates (equal entries under a common fit).
    pub kappa_hat: Option<[f64; 2]>,
    /// Pearson dispersion factor of a quasi-Poisson fit.
    pub phi: Option<f64>,
    /// True when an arm's dispersion was driven to the Poisson boundary.
    pub poisson_fallback: [bool; 2],
    pub converged: bool,
    pub iterations: u32,
}

impl FitResult {
    pub fn gamma_hat(&self) -> [f64; 2] {
        [self.lambda_hat[0].ln(), self.lambda_hat[1].ln()]
    }

    /// Variance of the log rate ratio estimate.
    pub fn var_log_ratio(&self) -> f64 {
        self.var_gamma[0] + self.var_gamma[1]
    }

    /// Delta-method variance of the rate difference estimate.
    pub fn var_rate_difference(&self) -> f64 {
        self.lambda_hat[0] * self.lambda_hat[0] * self.var_gamma[0]
            + self.lambda_hat[1] * self.lambda_hat[1] * self.var_gamma[1]
    }
}

const KAPPA_FLOOR: f64 = 1e-8;
const POISSON_FALLBACK_BELOW: f64 = 1e-6;
const MAX_INNER_ITER: u32 = 100;

struct ArmData {
    t: Vec<f64>,
    y: Vec<f64>,
    sum_y: f64,
    sum_t: f64,
    /// tail_counts[i] = number of subjects with more than i events, so that
    /// sums over 0..y_j collapse to one pass over event levels.
    tail_counts: Vec<f64>,
}

impl ArmData {
    fn from_records(records: &[SubjectRecord], arm: u8) -> Result<Self> {
        let mut t = Vec::new();
        let mut y = Vec::new();
        let mut max_y = 0u64;
        for r in records.iter().filter(|r| r.arm == arm) {
            if !(r.follow_up > 0.0) {
                return Err(Error::InvalidInput(
                    "follow-up times must be positive".into(),
                ));
            }
            t.push(r.follow_up);
            y.push(r.events as f64);
            max_y = max_y.max(r.events);
        }
        if t.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no subjects in arm {arm}"
            )));
        }
        let sum_y: f64 = y.iter().sum();
        if sum_y == 0.0 {
            return Err(Error::ZeroEventArm(arm));
        }
        let mut tail_counts = vec![0.0f64; max_y as usize];
        for &yi in &y {
            for level in tail_counts.iter_mut().take(yi as usize) {
                *level += 1.0;
            }
        }
        Ok(ArmData {
            sum_t: t.iter().sum(),
            t,
            y,
            sum_y,
            tail_counts,
        })
    }

    fn len(&self) -> usize {
        self.t.len()
    }

    /// Newton solve of the log-rate score at fixed kappa, warm-started.
    fn solve_gamma(&self, kappa: f64, start: f64) -> (f64, bool, u32) {
        let mut gamma = start;
        for iter in 0..MAX_INNER_ITER {
            let lambda = gamma.exp();
            let mut score = 0.0;
            let mut slope = 0.0;
            for (&t, &y) in self.t.iter().zip(&self.y) {
                let mu = lambda * t;
                let denom = 1.0 + kappa * mu;
                score += (y - mu) / denom;
                slope += mu * (1.0 + kappa * y) / (denom * denom);
            }
            let step = (score / slope).clamp(-5.0, 5.0);
            gamma += step;
            if step.abs() < 1e-13 * (1.0 + gamma.abs()) {
                return (gamma, true, iter + 1);
            }
        }
        (gamma, false, MAX_INNER_ITER)
    }

    /// Profiled dispersion score dl/dkappa at (gamma_hat(kappa), kappa).
    ///
    /// The digamma difference ψ(1/κ) − ψ(y + 1/κ) is the finite harmonic
    /// sum −Σ_{i<y} 1/(1/κ + i); using it directly keeps the score accurate
    /// down to the κ → 0 boundary where the digamma form cancels
    /// catastrophically.
    fn kappa_score(&self, kappa: f64, gamma: f64) -> f64 {
        let inv = 1.0 / kappa;
        let lambda = gamma.exp();
        let mut log_sum = 0.0;
        let mut resid_sum = 0.0;
        for (&t, &y) in self.t.iter().zip(&self.y) {
            let mu = lambda * t;
            log_sum += (kappa * mu).ln_1p();
            resid_sum += (y - mu) / (1.0 + kappa * mu);
        }
        let mut harmonic = 0.0;
        for (i, &count) in self.tail_counts.iter().enumerate() {
            harmonic += count / (1.0 + i as f64 * kappa);
        }
        inv * inv * log_sum - inv * harmonic + inv * resid_sum
    }

    fn poisson_rate(&self) -> f64 {
        self.sum_y / self.sum_t
    }

    /// Expected-information variance of the log-rate estimate at the fit.
    fn var_gamma(&self, lambda: f64, kappa: f64) -> f64 {
        let info: f64 = self
            .t
            .iter()
            .map(|&t| {
                let mu = lambda * t;
                mu / (1.0 + kappa * mu)
            })
            .sum();
        1.0 / info
    }
}

/// Outcome of profiling kappa over one or two arms.
struct ProfiledFit {
    kappa: f64,
    gammas: Vec<f64>,
    poisson_fallback: bool,
    converged: bool,
    iterations: u32,
}

/// Maximizes the profiled likelihood over log kappa for a set of arms
/// sharing one dispersion parameter.
fn profile_kappa(arms: &[&ArmData]) -> ProfiledFit {
    let mut iterations = 0u32;
    let mut all_inner_ok = true;
    let mut gammas: Vec<f64> = arms.iter().map(|a| a.poisson_rate().ln()).collect();

    let eval = |kappa: f64, gammas: &mut Vec<f64>, iterations: &mut u32, ok: &mut bool| {
        let mut total = 0.0;
        for (arm, gamma) in arms.iter().zip(gammas.iter_mut()) {
            let (g, inner_ok, used) = arm.solve_gamma(kappa, *gamma);
            *gamma = g;
            *iterations += used;
            *ok &= inner_ok;
            total += arm.kappa_score(kappa, g);
        }
        total
    };

    // boundary check: non-positive score at the floor means the Poisson
    // submodel maximizes the likelihood
    let score_floor = eval(KAPPA_FLOOR, &mut gammas, &mut iterations, &mut all_inner_ok);
    if score_floor <= 0.0 {
        let gammas = arms.iter().map(|a| a.poisson_rate().ln()).collect();
        return ProfiledFit {
            kappa: 0.0,
            gammas,
            poisson_fallback: true,
            converged: all_inner_ok,
            iterations,
        };
    }

    // bracket upward in kappa
    let mut lo = KAPPA_FLOOR;
    let mut f_lo = score_floor;
    let mut hi = 1.0;
    let mut f_hi;
    loop {
        f_hi = eval(hi, &mut gammas, &mut iterations, &mut all_inner_ok);
        if f_hi <= 0.0 {
            break;
        }
        lo = hi;
        f_lo = f_hi;
        hi *= 4.0;
        if hi > 1e8 {
            // dispersion unbounded on these data
            return ProfiledFit {
                kappa: hi,
                gammas,
                poisson_fallback: false,
                converged: false,
                iterations,
            };
        }
    }

    // Illinois false position on log kappa
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let (mut fa, mut fb) = (f_lo, f_hi);
    let mut side = 0i8;
    let mut kappa = 0.5 * (a + b);
    for _ in 0..200 {
        if (b - a).abs() < 1e-11 {
            break;
        }
        let c = (a * fb - b * fa) / (fb - fa);
        let c = if c.is_finite() && c > a && c < b {
            c
        } else {
            0.5 * (a + b)
        };
        let fc = eval(c.exp(), &mut gammas, &mut iterations, &mut all_inner_ok);
        kappa = c;
        if fc == 0.0 {
            a = c;
            b = c;
            break;
        }
        if (fc > 0.0) == (fa > 0.0) {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        } else {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        }
    }
    let kappa = if a == b { kappa.exp() } else { (0.5 * (a + b)).exp() };

    if kappa < POISSON_FALLBACK_BELOW {
        let gammas = arms.iter().map(|a| a.poisson_rate().ln()).collect();
        return ProfiledFit {
            kappa: 0.0,
            gammas,
            poisson_fallback: true,
            converged: all_inner_ok,
            iterations,
        };
    }

    // final polish of the rates at the profiled kappa, plus a scaled
    // gradient check (per-subject norm below 1e-8)
    let mut grad_ok = true;
    let mut score_total = 0.0;
    let mut n_total = 0.0;
    for (arm, gamma) in arms.iter().zip(gammas.iter_mut()) {
        let (g, inner_ok, used) = arm.solve_gamma(kappa, *gamma);
        *gamma = g;
        iterations += used;
        all_inner_ok &= inner_ok;
        let lambda = g.exp();
        let score: f64 = arm
            .t
            .iter()
            .zip(&arm.y)
            .map(|(&t, &y)| {
                let mu = lambda * t;
                (y - mu) / (1.0 + kappa * mu)
            })
            .sum();
        grad_ok &= (score / arm.len() as f64).abs() < 1e-8;
        score_total += arm.kappa_score(kappa, g);
        n_total += arm.len() as f64;
    }
    grad_ok &= (score_total / n_total).abs() < 1e-8;

    ProfiledFit {
        kappa,
        gammas,
        poisson_fallback: false,
        converged: all_inner_ok && grad_ok,
        iterations,
    }
}

/// Maximum likelihood NB fit of one arm: returns the rate, dispersion,
/// log-rate variance, and diagnostics.
pub fn fit_nb_single(records: &[SubjectRecord], arm: u8) -> Result<(f64, f64, f64, bool)> {
    let data = ArmData::from_records(records, arm)?;
    let fit = profile_kappa(&[&data]);
    let lambda = fit.gammas[0].exp();
    Ok((
        lambda,
        fit.kappa,
        data.var_gamma(lambda, fit.kappa),
        fit.converged,
    ))
}

/// Maximum likelihood NB fit of a two-arm dataset.
pub fn fit_nb(records: &[SubjectRecord], mode: DispersionMode) -> Result<FitResult> {
    let arm0 = ArmData::from_records(records, 0)?;
    let arm1 = ArmData::from_records(records, 1)?;
    match mode {
        DispersionMode::Common => {
            let fit = profile_kappa(&[&arm0, &arm1]);
            let lambda = [fit.gammas[0].exp(), fit.gammas[1].exp()];
            Ok(FitResult {
                lambda_hat: lambda,
                var_gamma: [
                    arm0.var_gamma(lambda[0], fit.kappa),
                    arm1.var_gamma(lambda[1], fit.kappa),
                ],
                kappa_hat: Some([fit.kappa, fit.kappa]),
                phi: None,
                poisson_fallback: [fit.poisson_fallback; 2],
                converged: fit.converged,
                iterations: fit.iterations,
            })
        }
        DispersionMode::PerArm => {
            let f0 = profile_kappa(&[&arm0]);
            let f1 = profile_kappa(&[&arm1]);
            let lambda = [f0.gammas[0].exp(), f1.gammas[0].exp()];
            Ok(FitResult {
                lambda_hat: lambda,
                var_gamma: [
                    arm0.var_gamma(lambda[0], f0.kappa),
                    arm1.var_gamma(lambda[1], f1.kappa),
                ],
                kappa_hat: Some([f0.kappa, f1.kappa]),
                phi: None,
                poisson_fallback: [f0.poisson_fallback, f1.poisson_fallback],
                converged: f0.converged && f1.converged,
                iterations: f0.iterations + f1.iterations,
            })
        }
    }
}

/// Quasi-Poisson fit: rate-of-sums estimates with the Pearson dispersion
/// factor inflating the Poisson variances (treatment-only model, p = 2).
pub fn fit_quasi_poisson(records: &[SubjectRecord]) -> Result<FitResult> {
    let arm0 = ArmData::from_records(records, 0)?;
    let arm1 = ArmData::from_records(records, 1)?;
    let n = arm0.len() + arm1.len();
    if n <= 2 {
        return Err(Error::DegenerateData(
            "no residual degrees of freedom for the Pearson dispersion".into(),
        ));
    }
    let lambda = [arm0.poisson_rate(), arm1.poisson_rate()];
    let mut pearson = 0.0;
    for (arm, &l) in [&arm0, &arm1].iter().zip(&lambda) {
        for (&t, &y) in arm.t.iter().zip(&arm.y) {
            let mu = l * t;
            pearson += (y - mu) * (y - mu) / mu;
        }
    }
    let phi = pearson / (n - 2) as f64;
    Ok(FitResult {
        lambda_hat: lambda,
        // Poisson information is the expected event total, inflated by phi
        var_gamma: [
            phi / (lambda[0] * arm0.sum_t),
            phi / (lambda[1] * arm1.sum_t),
        ],
        kappa_hat: None,
        phi: Some(phi),
        poisson_fallback: [false; 2],
        converged: true,
        iterations: 1,
    })
}

/// Applies the fixed-margin Wald decision rule for the hypothesis.
///
/// Noninferiority compares the upper CI limit to an above-neutral margin
/// (lower limit for a below-neutral margin; a neutral superiority margin
/// tests the upper limit, i.e. a lower rate is desirable). Equivalence
/// requires the whole CI inside the margin interval.
pub fn decide(fit: &FitResult, hypothesis: &Hypothesis, alpha: f64) -> Result<bool> {
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let metric = hypothesis.metric();
    let (estimate, se) = match metric {
        Metric::RateRatio => (
            (fit.lambda_hat[1] / fit.lambda_hat[0]).ln(),
            fit.var_log_ratio().sqrt(),
        ),
        Metric::RateDifference => (
            fit.lambda_hat[1] - fit.lambda_hat[0],
            fit.var_rate_difference().sqrt(),
        ),
    };
    let (ci_lower, ci_upper) = (estimate - z * se, estimate + z * se);
    match *hypothesis {
        Hypothesis::Superiority { .. } | Hypothesis::NonInferiority { .. } => {
            let margin = hypothesis.ni_margin().unwrap();
            let (margin_effect, neutral) = match metric {
                Metric::RateRatio => (margin.ln(), 0.0),
                Metric::RateDifference => (margin, 0.0),
            };
            if margin_effect >= neutral {
                Ok(ci_upper < margin_effect)
            } else {
                Ok(ci_lower > margin_effect)
            }
        }
        Hypothesis::Equivalence { lower, upper, .. } => {
            let (lo, up) = match metric {
                Metric::RateRatio => (lower.ln(), upper.ln()),
                Metric::RateDifference => (lower, upper),
            };
            Ok(ci_lower > lo && ci_upper < up)
        }
    }
}

/// Replication summary of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub replications: u64,
    pub rejections: u64,
    /// Rejections over the replications whose fit succeeded.
    pub rejection_rate: f64,
    /// Binomial standard error sqrt(r (1 - r) / replications).
    pub mc_se: f64,
    pub fit_failures: u64,
    pub seed: u64,
}

/// Inputs of one Monte Carlo experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Planning specification: design, margins, alpha, and the per-arm
    /// dispersion/dropout/allocation used to generate and analyze data.
    pub spec: TrialSpec,
    /// Total subjects per replication, split by the allocation fractions.
    pub n_total: u64,
    /// Data-generating event rates (may differ from the planning rates,
    /// e.g. a null configuration at the margin).
    pub truth: (f64, f64),
    pub replications: u64,
    pub seed: u64,
    pub fitter: Fitter,
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidInput(
                "at least one replication is required".into(),
            ));
        }
        if self.n_total < 2 {
            return Err(Error::InvalidInput("need at least two subjects".into()));
        }
        if !(self.truth.0 > 0.0 && self.truth.1 > 0.0) {
            return Err(Error::InvalidInput(
                "data-generating rates must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Splits a total into per-arm counts by largest-remainder rounding
/// (ties go to the control arm).
pub fn split_arms(n_total: u64, p0: f64) -> (u64, u64) {
    let exact0 = n_total as f64 * p0;
    let exact1 = n_total as f64 * (1.0 - p0);
    let base0 = exact0.floor() as u64;
    let base1 = exact1.floor() as u64;
    let leftover = n_total - base0 - base1;
    let frac0 = exact0 - exact0.floor();
    let frac1 = exact1 - exact1.floor();
    match leftover {
        0 => (base0, base1),
        1 if frac1 > frac0 => (base0, base1 + 1),
        1 => (base0 + 1, base1),
        _ => (base0 + 1, base1 + 1),
    }
}

fn run_replication(cfg: &SimConfig, n0: u64, n1: u64, rep: u64) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(rep);
    let truth0 = ArmSpec {
        lambda: cfg.truth.0,
        ..cfg.spec.control
    };
    let truth1 = ArmSpec {
        lambda: cfg.truth.1,
        ..cfg.spec.active
    };
    let mut records = Vec::with_capacity((n0 + n1) as usize);
    for _ in 0..n0 {
        records.push(sample_subject(&cfg.spec.design, 0, &truth0, &mut rng));
    }
    for _ in 0..n1 {
        records.push(sample_subject(&cfg.spec.design, 1, &truth1, &mut rng));
    }
    let fit = match cfg.fitter {
        Fitter::NegBinomial(mode) => fit_nb(&records, mode),
        Fitter::QuasiPoisson => fit_quasi_poisson(&records),
    };
    match fit {
        Ok(f) if f.converged => match decide(&f, &cfg.spec.hypothesis, cfg.spec.alpha) {
            Ok(true) => (1, 0),
            Ok(false) => (0, 0),
            Err(_) => (0, 1),
        },
        _ => (0, 1),
    }
}

fn finish(cfg: &SimConfig, rejections: u64, fit_failures: u64) -> SimReport {
    let effective = cfg.replications - fit_failures;
    let rate = if effective > 0 {
        rejections as f64 / effective as f64
    } else {
        0.0
    };
    SimReport {
        replications: cfg.replications,
        rejections,
        rejection_rate: rate,
        mc_se: (rate * (1.0 - rate) / cfg.replications as f64).sqrt(),
        fit_failures,
        seed: cfg.seed,
    }
}

/// Runs the experiment on the current thread.
pub fn monte_carlo_serial(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let (n0, n1) = split_arms(cfg.n_total, cfg.spec.control.allocation);
    let mut rejections = 0;
    let mut failures = 0;
    for rep in 0..cfg.replications {
        let (r, f) = run_replication(cfg, n0, n1, rep);
        rejections += r;
        failures += f;
    }
    Ok(finish(cfg, rejections, failures))
}

/// Runs the experiment, spreading replications over the current rayon
/// thread pool. Reports are identical to [`monte_carlo_serial`] for the
/// same seed regardless of worker count.
#[cfg(feature = "parallel")]
pub fn monte_carlo(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let (n0, n1) = split_arms(cfg.n_total, cfg.spec.control.allocation);
    let (rejections, failures) = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_replication(cfg, n0, n1, rep))
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(finish(cfg, rejections, failures))
}

/// Sequential fallback used when the `parallel` feature is disabled.
#[cfg(not(feature = "parallel"))]
pub fn monte_carlo(cfg: &SimConfig) -> Result<SimReport> {
    monte_carlo_serial(cfg)
}
