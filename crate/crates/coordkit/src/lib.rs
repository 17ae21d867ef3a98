//! Constrained motion coordination for heterogeneous vehicle groups.
//!
//! The pipeline: vehicle kinematics and coordination tasks become one
//! stacked differential-algebraic system on the group velocity
//! ([`kinematics`], [`constraints`], [`feasibility`]); a rank test decides
//! feasibility; an SVD produces the motion family `Ṗ = K̄ + Σ wₗ·Kₗ`;
//! virtual inputs are selected by a small quadratic program respecting the
//! active inequality rows ([`motion_gen`], [`qp`]); the closed loop is
//! integrated with fixed-step fourth-order Runge–Kutta and certified by
//! temporal-cone diagnostics ([`sim`], [`temporal`]). Directed-tree
//! fleets solve the same equations follower-by-follower
//! ([`leader_follower`]). Scenario files, builtins and log formats live in
//! [`scenario`], [`expr`] and [`output`].

pub mod constraints;
pub mod error;
pub mod expr;
pub mod feasibility;
pub mod kinematics;
pub mod leader_follower;
pub mod motion_gen;
pub mod output;
pub mod qp;
pub mod scenario;
pub mod sim;
pub mod temporal;

pub use error::{Error, Result};
