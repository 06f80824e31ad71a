//! Rendering of results in the three output formats. CSV prints sizes as
//! integers and powers as percentages with two decimals; json-lines carries
//! the result structs with their field names unchanged.

use nbtrial_core::design::{follow_up_moments, info_quantities, FollowUpMoments, InfoQuantities};
use nbtrial_core::error::Result;
use nbtrial_core::sim::SimReport;
use nbtrial_core::sizing::{SizingResult, TrialSpec};
use nbtrial_core::summary::{DispersionEstimate, KappaInterval};
use nbtrial_core::tables;
use serde::Serialize;

use crate::params::OutputFormat;

#[derive(Serialize)]
struct SizeRecord<'a> {
    command: &'static str,
    #[serde(flatten)]
    result: &'a SizingResult,
}

#[derive(Serialize)]
struct PowerRecord {
    command: &'static str,
    ntot: u64,
    nominal_power: f64,
}

#[derive(Serialize)]
struct SimRecord<'a> {
    command: &'static str,
    #[serde(flatten)]
    report: &'a SimReport,
}

#[derive(Serialize)]
struct IntervalRecord<'a> {
    command: &'static str,
    #[serde(flatten)]
    interval: &'a KappaInterval,
}

#[derive(Serialize)]
struct PhiRecord<'a> {
    command: &'static str,
    #[serde(flatten)]
    estimate: &'a DispersionEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    zhu_lakkis: Option<f64>,
}

/// Per-arm information echo printed in human mode (d, its bounds, and the
/// first two follow-up moments).
pub fn arm_echo(spec: &TrialSpec) -> Result<String> {
    let mut out = String::new();
    for (label, arm) in [("control", &spec.control), ("active", &spec.active)] {
        let q: InfoQuantities = info_quantities(&spec.design, arm)?;
        let m: FollowUpMoments = follow_up_moments(&spec.design, arm.dropout_hazard)?;
        out.push_str(&format!(
            "d dl du E(t) E(t*t) in {label} arm: {:.6} {:.6} {:.6} {:.6} {:.6}\n",
            q.d, q.d_lower, q.d_upper, m.mean_t, m.mean_t2
        ));
    }
    Ok(out)
}

fn fmt_opt(n: Option<u64>) -> String {
    n.map(|v| v.to_string()).unwrap_or_default()
}

pub fn render_size(spec: &TrialSpec, result: &SizingResult, format: OutputFormat) -> Result<String> {
    Ok(match format {
        OutputFormat::Human => {
            let mut out = arm_echo(spec)?;
            out.push_str(&format!(
                "The required size (before rounding) is {:.4}, which is rounded up to {}\n",
                result.n_raw, result.n
            ));
            out.push_str(&format!(
                "The lower and upper sample size bounds are {} {}\n",
                result.n_lower, result.n_upper
            ));
            out.push_str(&format!(
                "The nominal power is {:.4} at the sample size {}\n",
                result.nominal_power_at_n, result.n
            ));
            if let Some(zhu) = result.n_zhu {
                out.push_str(&format!(
                    "The mean-follow-up comparator size is {zhu} (generally close to the lower bound)\n"
                ));
            }
            out
        }
        OutputFormat::JsonLines => {
            let mut line = serde_json::to_string(&SizeRecord {
                command: "size",
                result,
            })
            .expect("serializable");
            line.push('\n');
            line
        }
        OutputFormat::Csv => format!(
            "n_raw,n,n_lower,n_upper,n_zhu,nominal_power_pct\n{:.4},{},{},{},{},{:.2}\n",
            result.n_raw,
            result.n,
            result.n_lower,
            result.n_upper,
            fmt_opt(result.n_zhu),
            100.0 * result.nominal_power_at_n
        ),
    })
}

pub fn render_power(spec: &TrialSpec, ntot: u64, power: f64, format: OutputFormat) -> Result<String> {
    Ok(match format {
        OutputFormat::Human => {
            let mut out = arm_echo(spec)?;
            out.push_str(&format!(
                "The nominal power is {power:.4} at the sample size {ntot}\n"
            ));
            out
        }
        OutputFormat::JsonLines => {
            let mut line = serde_json::to_string(&PowerRecord {
                command: "power",
                ntot,
                nominal_power: power,
            })
            .expect("serializable");
            line.push('\n');
            line
        }
        OutputFormat::Csv => format!(
            "ntot,nominal_power_pct\n{ntot},{:.2}\n",
            100.0 * power
        ),
    })
}

pub fn render_simulation(report: &SimReport, format: OutputFormat) -> String {
    match format {
        OutputFormat::Human => format!(
            "Simulated {} replications (seed {}): rejection rate {:.2}% (MC se {:.2} pp), {} fit failures excluded\n",
            report.replications,
            report.seed,
            100.0 * report.rejection_rate,
            100.0 * report.mc_se,
            report.fit_failures
        ),
        OutputFormat::JsonLines => {
            let mut line = serde_json::to_string(&SimRecord {
                command: "simulate",
                report,
            })
            .expect("serializable");
            line.push('\n');
            line
        }
        OutputFormat::Csv => format!(
            "replications,rejections,rejection_rate_pct,mc_se_pct,fit_failures,seed\n{},{},{:.2},{:.2},{},{}\n",
            report.replications,
            report.rejections,
            100.0 * report.rejection_rate,
            100.0 * report.mc_se,
            report.fit_failures,
            report.seed
        ),
    }
}

pub fn render_interval(interval: &KappaInterval, format: OutputFormat) -> String {
    match format {
        OutputFormat::Human => {
            let mut out = format!(
                "Back-calculated dispersion interval: {:.4} <= kappa <= {:.4}\n",
                interval.lower, interval.upper
            );
            if interval.clipped {
                out.push_str("(a negative bound was clipped to zero)\n");
            }
            out
        }
        OutputFormat::JsonLines => {
            let mut line = serde_json::to_string(&IntervalRecord {
                command: "backcalc",
                interval,
            })
            .expect("serializable");
            line.push('\n');
            line
        }
        OutputFormat::Csv => format!(
            "lower,upper,clipped\n{:.6},{:.6},{}\n",
            interval.lower, interval.upper, interval.clipped
        ),
    }
}

pub fn render_phi(
    estimate: &DispersionEstimate,
    zhu_lakkis: Option<f64>,
    format: OutputFormat,
) -> String {
    match format {
        OutputFormat::Human => {
            let mut out = format!(
                "Dispersion from the Pearson factor: kappa = {:.4}\n",
                estimate.kappa
            );
            if estimate.underdispersed {
                out.push_str("(phi < 1: underdispersed, estimate clipped to zero)\n");
            }
            if let Some(zl) = zhu_lakkis {
                out.push_str(&format!(
                    "Rate-denominator variant (dimensionally incorrect, for comparison): {zl:.4}\n"
                ));
            }
            out
        }
        OutputFormat::JsonLines => {
            let mut line = serde_json::to_string(&PhiRecord {
                command: "backcalc",
                estimate,
                zhu_lakkis,
            })
            .expect("serializable");
            line.push('\n');
            line
        }
        OutputFormat::Csv => match zhu_lakkis {
            Some(zl) => format!(
                "kappa,underdispersed,zhu_lakkis\n{:.6},{},{:.6}\n",
                estimate.kappa, estimate.underdispersed, zl
            ),
            None => format!(
                "kappa,underdispersed\n{:.6},{}\n",
                estimate.kappa, estimate.underdispersed
            ),
        },
    }
}

pub fn ni_table_csv(design: tables::TableDesign) -> Result<String> {
    let mut out = String::from("lambda0,exp_beta,kappa,mr0,n_zr,n_rl,n_r,n_ru,md0,n_dl,n_d,n_du\n");
    for r in tables::ni_table(design)? {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:.4},{},{},{}\n",
            r.lambda0,
            r.exp_beta,
            r.kappa,
            r.mr0,
            r.n_zr,
            r.n_rl,
            r.n_r,
            r.n_ru,
            r.md0,
            r.n_dl,
            r.n_d,
            r.n_du
        ));
    }
    Ok(out)
}

pub fn hetero_table_csv() -> Result<String> {
    let mut out =
        String::from("lambda0,kappa0,lambda1,kappa1,mr0,n_rl,n_r,n_ru,md0,n_dl,n_d,n_du\n");
    for r in tables::hetero_table()? {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:.4},{},{},{}\n",
            r.lambda0,
            r.kappa0,
            r.lambda1,
            r.kappa1,
            r.mr0,
            r.n_rl,
            r.n_r,
            r.n_ru,
            r.md0,
            r.n_dl,
            r.n_d,
            r.n_du
        ));
    }
    Ok(out)
}

pub fn equiv_table_csv() -> Result<String> {
    let mut out =
        String::from("design,lambda0,exp_beta,kappa,n_zr,n_rl,n_r,n_ru,mdu,n_dl,n_d,n_du\n");
    for r in tables::equiv_table()? {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:.4},{},{},{}\n",
            r.design,
            r.lambda0,
            r.exp_beta,
            r.kappa,
            r.n_zr,
            r.n_rl,
            r.n_r,
            r.n_ru,
            r.mdu,
            r.n_dl,
            r.n_d,
            r.n_du
        ));
    }
    Ok(out)
}

pub fn type1_table_csv(design: tables::TableDesign) -> Result<String> {
    let mut out = String::from("lambda0,exp_beta,kappa,mr0,n_r,md0,n_d\n");
    for r in tables::type1_table(design)? {
        out.push_str(&format!(
            "{},{},{},{},{},{:.4},{}\n",
            r.lambda0, r.exp_beta, r.kappa, r.mr0, r.n_r, r.md0, r.n_d
        ));
    }
    Ok(out)
}
