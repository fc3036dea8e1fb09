//! Collision scenario generation for microscopic traffic.
//!
//! One target vehicle is steered by a Monte Carlo Tree Search over a
//! discretized (steering, acceleration) grid while every other vehicle
//! follows a car-following policy. The search reward trades collision
//! discovery against comfort and surrogate-safety costs, and switches
//! between upper and lower confidence bounds during selection.

pub mod dynamics;
pub mod fixtures;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod netmodel;
pub mod reward;
pub mod search;
pub mod simcore;
