//! Power and sample size for comparing two negative binomial event rates in
//! superiority, noninferiority, and equivalence trials with unequal
//! follow-up times.
//!
//! The crate covers the full planning workflow for recurrent-event trials:
//!
//! - [`design`] — follow-up time distributions for fixed-duration and
//!   staggered-accrual designs, and the per-subject information quantities
//!   they induce, with analytic bounds;
//! - [`sizing`] — power and total sample size for noninferiority and
//!   equivalence hypotheses on the rate-ratio and rate-difference metrics
//!   (superiority is the unit-margin special case), plus the mean-follow-up
//!   comparator size;
//! - [`summary`] — back-calculation of the dispersion parameter from
//!   published summary statistics and the quasi-Poisson variance-gap
//!   diagnostic;
//! - [`sim`] — a reproducible Monte Carlo trial simulator with negative
//!   binomial and quasi-Poisson fitters, used to verify type I error and
//!   power of the Wald tests;
//! - [`tables`] — deterministic regeneration of the reference design grids;
//! - [`numeric`] — the shared numerical primitives.
//!
//! Replications in [`sim`] run in parallel through `rayon` when the default
//! `parallel` feature is enabled; results are identical to the sequential
//! fallback for a fixed seed.

pub mod design;
pub mod error;
pub mod numeric;
pub mod sim;
pub mod sizing;
pub mod summary;
pub mod tables;

pub use error::{Error, Result};
