//! Distributed model predictive control for networks of coupled
//! piecewise-affine subsystems. The controller solves the nonconvex
//! receding-horizon problem with consensus iterations over one convex
//! piece at a time, letting agents switch pieces when their local
//! solutions reach region boundaries; terminal-set and terminal-cost
//! machinery provides a stabilizing dual-mode variant, and a brute-force
//! enumeration oracle grounds suboptimality studies.

// agent/step index loops over parallel structures read better than zips here
#![allow(clippy::needless_range_loop)]

pub mod admm;
pub mod config;
pub mod model;
pub mod mpc;
pub mod oracle;
pub mod polytope;
pub mod presets;
pub mod qp;
pub mod switching;
pub mod terminal;
