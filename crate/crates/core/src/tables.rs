//! Deterministic regeneration of the reference design grids: the
//! noninferiority grids for both designs, the heterogeneous-dispersion
//! grid, the equivalence grid, and the type-I-error planning grids.
//!
//! All grids fix equal allocation, a two-sided α of 0.05, and 80% target
//! power. Design 1 follows everyone for 2 time units with a dropout hazard
//! of 0.1438 (25% overall dropout); design 2 accrues uniformly over 2 units
//! with 2 further units of follow-up and hazard 0.2.

use crate::design::{ArmSpec, FollowUpDesign};
use crate::error::Result;
use crate::sizing::{compute_size, translate_margin, Hypothesis, Metric, Rounding, TrialSpec};
use serde::{Deserialize, Serialize};

const ALPHA: f64 = 0.05;
const POWER: f64 = 0.8;

/// The two tabulated follow-up configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableDesign {
    Design1,
    Design2,
}

impl TableDesign {
    pub fn follow_up(self) -> FollowUpDesign {
        match self {
            TableDesign::Design1 => FollowUpDesign::fixed_duration(2.0),
            TableDesign::Design2 => FollowUpDesign::staggered_accrual(2.0, 2.0, 0.0),
        }
    }

    pub fn dropout_hazard(self) -> f64 {
        match self {
            // 25% overall dropout by year 2; the exact hazard, not its
            // rounded 0.1438 display, is what the reference grids were
            // computed with
            TableDesign::Design1 => -(0.75f64.ln()) / 2.0,
            TableDesign::Design2 => 0.2,
        }
    }

    pub fn index(self) -> u8 {
        match self {
            TableDesign::Design1 => 1,
            TableDesign::Design2 => 2,
        }
    }
}

fn trial(
    design: TableDesign,
    lambda0: f64,
    lambda1: f64,
    kappa0: f64,
    kappa1: f64,
    hypothesis: Hypothesis,
) -> TrialSpec {
    let delta = design.dropout_hazard();
    TrialSpec {
        design: design.follow_up(),
        control: ArmSpec {
            lambda: lambda0,
            kappa: kappa0,
            allocation: 0.5,
            dropout_hazard: delta,
        },
        active: ArmSpec {
            lambda: lambda1,
            kappa: kappa1,
            allocation: 0.5,
            dropout_hazard: delta,
        },
        hypothesis,
        alpha: ALPHA,
    }
}

/// One noninferiority grid row: ratio-metric sizes with bounds and the
/// comparator, then the translated margin and difference-metric sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NiRow {
    pub lambda0: f64,
    pub exp_beta: f64,
    pub kappa: f64,
    pub mr0: f64,
    pub n_zr: u64,
    pub n_rl: u64,
    pub n_r: u64,
    pub n_ru: u64,
    pub md0: f64,
    pub n_dl: u64,
    pub n_d: u64,
    pub n_du: u64,
}

/// The 20-row noninferiority grid for one design.
pub fn ni_table(design: TableDesign) -> Result<Vec<NiRow>> {
    let mut rows = Vec::with_capacity(20);
    for &(lambda0, kappa) in &[(0.6, 1.0), (0.9, 1.5)] {
        for &mr0 in &[1.2, 1.3] {
            for &exp_beta in &[0.65, 0.80, 0.95, 1.00, 1.05] {
                let lambda1 = lambda0 * exp_beta;
                let ratio = compute_size(
                    &trial(
                        design,
                        lambda0,
                        lambda1,
                        kappa,
                        kappa,
                        Hypothesis::NonInferiority {
                            metric: Metric::RateRatio,
                            margin: mr0,
                        },
                    ),
                    POWER,
                    Rounding::TotalCeil,
                )?;
                let md0 = translate_margin(mr0, lambda0, lambda1)?;
                let diff = compute_size(
                    &trial(
                        design,
                        lambda0,
                        lambda1,
                        kappa,
                        kappa,
                        Hypothesis::NonInferiority {
                            metric: Metric::RateDifference,
                            margin: md0,
                        },
                    ),
                    POWER,
                    Rounding::TotalCeil,
                )?;
                rows.push(NiRow {
                    lambda0,
                    exp_beta,
                    kappa,
                    mr0,
                    n_zr: ratio.n_zhu.expect("common arms admit the comparator"),
                    n_rl: ratio.n_lower,
                    n_r: ratio.n,
                    n_ru: ratio.n_upper,
                    md0,
                    n_dl: diff.n_lower,
                    n_d: diff.n,
                    n_du: diff.n_upper,
                });
            }
        }
    }
    Ok(rows)
}

/// One heterogeneous-dispersion grid row (design 1, ratio margin 1.3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeteroRow {
    pub lambda0: f64,
    pub kappa0: f64,
    pub lambda1: f64,
    pub kappa1: f64,
    pub mr0: f64,
    pub n_rl: u64,
    pub n_r: u64,
    pub n_ru: u64,
    pub md0: f64,
    pub n_dl: u64,
    pub n_d: u64,
    pub n_du: u64,
}

/// The 24-row grid where the dispersion parameter varies by arm.
pub fn hetero_table() -> Result<Vec<HeteroRow>> {
    const MR0: f64 = 1.3;
    let mut rows = Vec::with_capacity(24);
    for &exp_beta in &[0.8, 0.9, 1.0] {
        for &lambda0 in &[0.6, 1.0] {
            for &(kappa0, kappa1) in &[(2.0, 1.0), (1.0, 2.0), (2.0, 0.5), (0.5, 2.0)] {
                let lambda1 = lambda0 * exp_beta;
                let ratio = compute_size(
                    &trial(
                        TableDesign::Design1,
                        lambda0,
                        lambda1,
                        kappa0,
                        kappa1,
                        Hypothesis::NonInferiority {
                            metric: Metric::RateRatio,
                            margin: MR0,
                        },
                    ),
                    POWER,
                    Rounding::TotalCeil,
                )?;
                let md0 = translate_margin(MR0, lambda0, lambda1)?;
                let diff = compute_size(
                    &trial(
                        TableDesign::Design1,
                        lambda0,
                        lambda1,
                        kappa0,
                        kappa1,
                        Hypothesis::NonInferiority {
                            metric: Metric::RateDifference,
                            margin: md0,
                        },
                    ),
                    POWER,
                    Rounding::TotalCeil,
                )?;
                rows.push(HeteroRow {
                    lambda0,
                    kappa0,
                    lambda1,
                    kappa1,
                    mr0: MR0,
                    n_rl: ratio.n_lower,
                    n_r: ratio.n,
                    n_ru: ratio.n_upper,
                    md0,
                    n_dl: diff.n_lower,
                    n_d: diff.n,
                    n_du: diff.n_upper,
                });
            }
        }
    }
    Ok(rows)
}

/// One equivalence grid row (margins 1/1.3 and 1.3 on the ratio scale,
/// symmetric translated margins on the difference scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivRow {
    pub design: u8,
    pub lambda0: f64,
    pub exp_beta: f64,
    pub kappa: f64,
    pub n_zr: u64,
    pub n_rl: u64,
    pub n_r: u64,
    pub n_ru: u64,
    pub mdu: f64,
    pub n_dl: u64,
    pub n_d: u64,
    pub n_du: u64,
}

/// The 8-row equivalence grid across both designs.
pub fn equiv_table() -> Result<Vec<EquivRow>> {
    const MRU: f64 = 1.3;
    let mut rows = Vec::with_capacity(8);
    for design in [TableDesign::Design1, TableDesign::Design2] {
        for &(lambda0, exp_beta, kappa) in &[
            (0.6, 1.00, 1.0),
            (0.6, 1.05, 1.0),
            (0.9, 1.00, 1.5),
            (0.9, 1.05, 1.5),
        ] {
            let lambda1 = lambda0 * exp_beta;
            let ratio = compute_size(
                &trial(
                    design,
                    lambda0,
                    lambda1,
                    kappa,
                    kappa,
                    Hypothesis::Equivalence {
                        metric: Metric::RateRatio,
                        lower: 1.0 / MRU,
                        upper: MRU,
                    },
                ),
                POWER,
                Rounding::TotalCeil,
            )?;
            let mdu = translate_margin(MRU, lambda0, lambda1)?;
            let diff = compute_size(
                &trial(
                    design,
                    lambda0,
                    lambda1,
                    kappa,
                    kappa,
                    Hypothesis::Equivalence {
                        metric: Metric::RateDifference,
                        lower: -mdu,
                        upper: mdu,
                    },
                ),
                POWER,
                Rounding::TotalCeil,
            )?;
            rows.push(EquivRow {
                design: design.index(),
                lambda0,
                exp_beta,
                kappa,
                n_zr: ratio.n_zhu.expect("common arms admit the comparator"),
                n_rl: ratio.n_lower,
                n_r: ratio.n,
                n_ru: ratio.n_upper,
                mdu,
                n_dl: diff.n_lower,
                n_d: diff.n,
                n_du: diff.n_upper,
            });
        }
    }
    Ok(rows)
}

/// Deterministic columns of the type-I-error grids: the planning sizes at
/// which the null configurations are simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Type1Row {
    pub lambda0: f64,
    pub exp_beta: f64,
    pub kappa: f64,
    pub mr0: f64,
    pub n_r: u64,
    pub md0: f64,
    pub n_d: u64,
}

/// The 20-row type-I planning grid for one design.
pub fn type1_table(design: TableDesign) -> Result<Vec<Type1Row>> {
    Ok(ni_table(design)?
        .into_iter()
        .map(|r| Type1Row {
            lambda0: r.lambda0,
            exp_beta: r.exp_beta,
            kappa: r.kappa,
            mr0: r.mr0,
            n_r: r.n_r,
            md0: r.md0,
            n_d: r.n_d,
        })
        .collect())
}
