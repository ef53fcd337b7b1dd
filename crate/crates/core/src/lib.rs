//! Characteristic-curve solver for 1-D scalar conservation laws
//! `u_t + F(u)_x = Q(u, x, t)` with uniformly convex flux.

pub mod curve;
pub mod expr;
pub mod characteristics;
pub mod catalog;
pub mod projection;
pub mod shock;
pub mod solver;
pub mod study;
pub mod cli;
