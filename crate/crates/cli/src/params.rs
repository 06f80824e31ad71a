//! Parameter merging and validation for the trial commands.
//!
//! Values come from an optional flat `key = value` config file overlaid by
//! command-line flags (flags win). Validation mirrors a fixed rule list,
//! one rule per exit code, so scripted callers can branch on the code.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use nbtrial_core::design::{dropout_proportion_to_hazard, ArmSpec, FollowUpDesign};
use nbtrial_core::sizing::{Hypothesis, Metric, Rounding, TrialSpec};

/// Validation failure with its process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

fn fail<T>(code: i32, message: impl Into<String>) -> Result<T, CliError> {
    Err(CliError {
        code,
        message: message.into(),
    })
}

/// Raw, possibly incomplete parameter set before validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawParams {
    pub design: Option<String>,
    pub tauc: Option<f64>,
    pub taua: Option<f64>,
    pub eta: Option<f64>,
    pub lambda0: Option<f64>,
    pub lambda1: Option<f64>,
    pub kappa0: Option<f64>,
    pub kappa1: Option<f64>,
    pub droprate0: Option<f64>,
    pub droprate1: Option<f64>,
    pub dropout_prop0: Option<f64>,
    pub dropout_prop1: Option<f64>,
    pub p0: Option<f64>,
    pub alpha: Option<f64>,
    pub power: Option<f64>,
    pub ntot: Option<u64>,
    pub hypothesis: Option<String>,
    pub metric: Option<String>,
    pub mr0: Option<f64>,
    pub mru: Option<f64>,
    pub mrl: Option<f64>,
    pub md0: Option<f64>,
    pub mdu: Option<f64>,
    pub mdl: Option<f64>,
    pub reps: Option<u64>,
    pub seed: Option<u64>,
    pub format: Option<String>,
    pub rounding: Option<String>,
}

macro_rules! merge_field {
    ($self:ident, $other:ident, $($field:ident),+ $(,)?) => {
        $(if $self.$field.is_none() {
            $self.$field = $other.$field.clone();
        })+
    };
}

impl RawParams {
    /// Fills unset fields from `fallback` (used for config-file overlay).
    pub fn or_from(&mut self, fallback: &RawParams) {
        merge_field!(
            self, fallback, design, tauc, taua, eta, lambda0, lambda1, kappa0, kappa1,
            droprate0, droprate1, dropout_prop0, dropout_prop1, p0, alpha, power, ntot,
            hypothesis, metric, mr0, mru, mrl, md0, mdu, mdl, reps, seed, format, rounding
        );
    }

    /// Parses a flat `key = value` file (one pair per line, `#` comments).
    pub fn from_config_file(path: &Path) -> Result<RawParams, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError {
                code: 1,
                message: format!("cannot read config file {}: {e}", path.display()),
            })?;
        Self::from_key_values(&text)
    }

    pub fn from_key_values(text: &str) -> Result<RawParams, CliError> {
        let mut map = HashMap::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return fail(1, format!("config line {} is not key = value: {raw_line:?}", lineno + 1));
            };
            map.insert(key.trim().to_ascii_lowercase(), value.trim().trim_matches('"').to_string());
        }
        let mut params = RawParams::default();
        let parse_f64 = |map: &HashMap<String, String>, key: &str| -> Result<Option<f64>, CliError> {
            match map.get(key) {
                None => Ok(None),
                Some(v) => v.parse::<f64>().map(Some).map_err(|_| CliError {
                    code: 1,
                    message: format!("config value for {key} is not a number: {v:?}"),
                }),
            }
        };
        let parse_u64 = |map: &HashMap<String, String>, key: &str| -> Result<Option<u64>, CliError> {
            match map.get(key) {
                None => Ok(None),
                Some(v) => v.parse::<u64>().map(Some).map_err(|_| CliError {
                    code: 1,
                    message: format!("config value for {key} is not a non-negative integer: {v:?}"),
                }),
            }
        };
        params.design = map.get("design").cloned();
        params.tauc = parse_f64(&map, "tauc")?;
        params.taua = parse_f64(&map, "taua")?;
        params.eta = parse_f64(&map, "eta")?;
        params.lambda0 = parse_f64(&map, "lambda0")?;
        params.lambda1 = parse_f64(&map, "lambda1")?;
        params.kappa0 = parse_f64(&map, "kappa0")?;
        params.kappa1 = parse_f64(&map, "kappa1")?;
        params.droprate0 = parse_f64(&map, "droprate0")?;
        params.droprate1 = parse_f64(&map, "droprate1")?;
        params.dropout_prop0 = parse_f64(&map, "dropout-prop0")?;
        params.dropout_prop1 = parse_f64(&map, "dropout-prop1")?;
        params.p0 = parse_f64(&map, "p0")?;
        params.alpha = parse_f64(&map, "alpha")?;
        params.power = parse_f64(&map, "power")?;
        params.ntot = parse_u64(&map, "ntot")?;
        params.hypothesis = map.get("type").cloned();
        params.metric = map.get("metric").cloned();
        params.mr0 = parse_f64(&map, "mr0")?;
        params.mru = parse_f64(&map, "mru")?;
        params.mrl = parse_f64(&map, "mrl")?;
        params.md0 = parse_f64(&map, "md0")?;
        params.mdu = parse_f64(&map, "mdu")?;
        params.mdl = parse_f64(&map, "mdl")?;
        params.reps = parse_u64(&map, "reps")?;
        params.seed = parse_u64(&map, "seed")?;
        params.format = map.get("format").cloned();
        params.rounding = map.get("rounding").cloned();
        Ok(params)
    }
}

/// Which trial command the parameters feed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Size,
    Power,
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Human,
    JsonLines,
    Csv,
}

/// Fully validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub spec: TrialSpec,
    pub target_power: Option<f64>,
    pub ntot: Option<u64>,
    pub rounding: Rounding,
    pub format: OutputFormat,
    pub replications: u64,
    pub seed: u64,
}

pub fn parse_format(value: Option<&str>) -> Result<OutputFormat, CliError> {
    match value.map(|s| s.to_ascii_lowercase()).as_deref() {
        None | Some("human") => Ok(OutputFormat::Human),
        Some("jsonl") => Ok(OutputFormat::JsonLines),
        Some("csv") => Ok(OutputFormat::Csv),
        Some(other) => fail(1, format!("format must be human, jsonl or csv, got {other}")),
    }
}

/// Applies the defaulting rules and the ordered validation list, producing
/// a runnable configuration.
pub fn parse_and_validate(command: CommandKind, mut p: RawParams) -> Result<RunConfig, CliError> {
    // defaulting: missing per-arm values copy the control arm, missing
    // equivalence margins mirror their counterparts
    if p.kappa1.is_none() {
        p.kappa1 = p.kappa0;
    }
    if p.droprate1.is_none() && p.dropout_prop1.is_none() {
        p.droprate1 = p.droprate0;
        p.dropout_prop1 = p.dropout_prop0;
    }
    if p.mrl.is_none() {
        p.mrl = p.mru.map(|m| 1.0 / m);
    }
    if p.mdl.is_none() {
        p.mdl = p.mdu.map(|m| -m);
    }

    // rule 1: metric
    let metric = match p.metric.as_deref().map(|s| s.to_ascii_uppercase()) {
        Some(ref m) if m == "RATIO" => Metric::RateRatio,
        Some(ref m) if m == "DIFF" => Metric::RateDifference,
        _ => return fail(2, "Metric should be equal to RATIO or DIFF"),
    };
    // rule 2: hypothesis type
    let kind = match p.hypothesis.as_deref().map(|s| s.to_ascii_uppercase()) {
        Some(ref t) if t == "SUP" => "SUP",
        Some(ref t) if t == "NI" => "NI",
        Some(ref t) if t == "EQUI" => "EQUI",
        _ => return fail(3, "Type should be equal to SUP, NI or EQUI"),
    };

    // required basics
    let (Some(lambda0), Some(lambda1), Some(kappa0), Some(tauc)) =
        (p.lambda0, p.lambda1, p.kappa0, p.tauc)
    else {
        return fail(15, "Error: lambda0, lambda1, kappa0 and tauc are required");
    };
    let kappa1 = p.kappa1.unwrap_or(kappa0);

    // rule 14 (artifact): at most one dropout input per arm, converted to a
    // hazard over the treatment duration
    let hazard = |rate: Option<f64>, prop: Option<f64>, which: &str| -> Result<f64, CliError> {
        match (rate, prop) {
            (Some(_), Some(_)) => fail(
                14,
                format!("Error: give either droprate{which} or dropout-prop{which}, not both"),
            ),
            (Some(r), None) => Ok(r),
            (None, Some(w)) => dropout_proportion_to_hazard(w, tauc).map_err(|e| CliError {
                code: 14,
                message: format!("Error: dropout-prop{which}: {e}"),
            }),
            (None, None) => Ok(0.0),
        }
    };
    let droprate0 = hazard(p.droprate0, p.dropout_prop0, "0")?;
    let droprate1 = hazard(p.droprate1, p.dropout_prop1, "1")?;

    // rule 3: sign constraints
    if droprate0 < 0.0
        || droprate1 < 0.0
        || lambda0 <= 0.0
        || lambda1 <= 0.0
        || kappa0 < 0.0
        || kappa1 < 0.0
        || tauc <= 0.0
    {
        return fail(
            4,
            "Error: droprate0/droprate1, lambda0/lambda1, kappa0/kappa1, tauc shall be non-negative or positive",
        );
    }
    // rule 4: design
    let design_no = match p.design.as_deref().map(str::trim) {
        Some("1") => 1,
        Some("2") => 2,
        _ => return fail(5, "Error: design should be equal to 1 or 2"),
    };
    // rule 5: exactly one of power / ntot, with the one the command needs
    let power_ok = p.power.map(|pw| pw > 0.0 && pw < 1.0).unwrap_or(false);
    let ntot_ok = p.ntot.map(|n| n > 0).unwrap_or(false);
    let rule6 = "Error: there should be either 0<power<1, ntot=. OR ntot>0 & power=.";
    match command {
        CommandKind::Size => {
            if !power_ok || p.ntot.is_some() {
                return fail(6, rule6);
            }
        }
        CommandKind::Power => {
            if !ntot_ok || p.power.is_some() {
                return fail(6, rule6);
            }
        }
        CommandKind::Simulate => {
            if !ntot_ok {
                return fail(6, rule6);
            }
        }
    }
    // rule 6: accrual duration
    let taua = p.taua.unwrap_or(0.0);
    if design_no == 2 && taua <= 0.0 {
        return fail(7, "Error: taua must be >0 in design 2");
    }
    // rule 7: allocation
    let p0 = p.p0.unwrap_or(0.5);
    if !(p0 > 0.0 && p0 < 1.0) {
        return fail(
            8,
            "Error: p0 the proportion of subject in control arm must be between 0 and 1",
        );
    }
    // rules 8-12: hypothesis-specific margin constraints
    let hypothesis = match (kind, metric) {
        ("SUP", m) => {
            if lambda0 == lambda1 {
                return fail(
                    9,
                    "Error: lambda0 & lambda1 should be different in a superiority trial",
                );
            }
            Hypothesis::Superiority { metric: m }
        }
        ("EQUI", Metric::RateDifference) => {
            let valid = match (p.mdl, p.mdu) {
                (Some(lo), Some(up)) => lo < lambda1 - lambda0 && lambda1 - lambda0 < up,
                _ => false,
            };
            if !valid {
                return fail(
                    10,
                    "Error: Equivalence DIFF margin must satisfy Mdl < lambda1-lambda0 < Mdu, Mdu^=.",
                );
            }
            Hypothesis::Equivalence {
                metric,
                lower: p.mdl.unwrap(),
                upper: p.mdu.unwrap(),
            }
        }
        ("EQUI", Metric::RateRatio) => {
            let valid = match (p.mrl, p.mru) {
                (Some(lo), Some(up)) => lo < lambda1 / lambda0 && lambda1 / lambda0 < up,
                _ => false,
            };
            if !valid {
                return fail(
                    11,
                    "Error: Equivalence RATIO margin must satisfy Mrl < lambda1/lambda0 < Mru, Mru^=.",
                );
            }
            Hypothesis::Equivalence {
                metric,
                lower: p.mrl.unwrap(),
                upper: p.mru.unwrap(),
            }
        }
        ("NI", Metric::RateRatio) => {
            let valid = p.mr0.map(|m| m > 0.0 && lambda1 / lambda0 != m).unwrap_or(false);
            if !valid {
                return fail(
                    12,
                    "Error: NI RATIO Margin must satisfy Mr0>0 & lambda1/lambda0 ^= Mr0",
                );
            }
            Hypothesis::NonInferiority {
                metric,
                margin: p.mr0.unwrap(),
            }
        }
        ("NI", Metric::RateDifference) => {
            let valid = p.md0.map(|m| lambda1 - lambda0 != m).unwrap_or(false);
            if !valid {
                return fail(
                    13,
                    "Error: NI DIFF margin must satisfy Md0 ^= . and lambda1-lambda0 ^= Md0",
                );
            }
            Hypothesis::NonInferiority {
                metric,
                margin: p.md0.unwrap(),
            }
        }
        _ => unreachable!(),
    };

    let alpha = p.alpha.unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return fail(1, format!("alpha must lie in (0, 1), got {alpha}"));
    }
    let rounding = match p.rounding.as_deref().map(|s| s.to_ascii_lowercase()).as_deref() {
        None | Some("total") => Rounding::TotalCeil,
        Some("per-arm") => Rounding::PerArmCeil,
        Some(other) => return fail(1, format!("rounding must be total or per-arm, got {other}")),
    };
    let format = parse_format(p.format.as_deref())?;

    let design = if design_no == 1 {
        FollowUpDesign::fixed_duration(tauc)
    } else {
        FollowUpDesign::staggered_accrual(taua, tauc, p.eta.unwrap_or(0.0))
    };

    let spec = TrialSpec {
        design,
        control: ArmSpec {
            lambda: lambda0,
            kappa: kappa0,
            allocation: p0,
            dropout_hazard: droprate0,
        },
        active: ArmSpec {
            lambda: lambda1,
            kappa: kappa1,
            allocation: 1.0 - p0,
            dropout_hazard: droprate1,
        },
        hypothesis,
        alpha,
    };

    Ok(RunConfig {
        command,
        spec,
        target_power: p.power,
        ntot: p.ntot,
        rounding,
        format,
        replications: p.reps.unwrap_or(10_000),
        seed: p.seed.unwrap_or(1),
    })
}
