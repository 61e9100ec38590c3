//! Trajectory-processing toolkit for robot manipulation data.
//!
//! - [`geometry`]: SE(3)/SO(3) types and metrics.
//! - [`waypoints`]: minimal waypoint extraction within reconstruction budgets.
//! - [`tokenizer`]: the spatial action tokenizer (motion token library,
//!   greedy/top-3 encoding, binning baseline).
//! - [`datapipe`]: dataset IO, occupancy-grid de-duplication, mirroring.
//! - [`rewards`]: reward suite, group-relative advantages, comparison metrics.
//! - [`scaling`]: data-constrained scaling-law fitting.
//! - [`synth`]: seeded synthetic-data generators.

pub mod datapipe;
pub mod geometry;
pub mod rewards;
pub mod scaling;
pub mod synth;
pub mod tokenizer;
pub mod waypoints;
