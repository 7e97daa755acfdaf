//! Multi-level emergency collision avoidance.
//!
//! Staged safe-distance risk assessment, inverse-TTC handling for oncoming
//! traffic, drivable-area envelope construction, jerk-bounded lateral
//! trajectory optimization, a phased braking model, and a closed-loop
//! simulator that replays hazard scenarios end to end.

pub mod cli_io;
pub mod collision;
pub mod drivable_area;
pub mod lateral_qp;
pub mod longitudinal;
pub mod risk_decision;
pub mod safety_distance;
pub mod selfcheck;
pub mod simulator;
