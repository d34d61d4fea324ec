//! Exponential stability certificates for coupled parabolic systems
//! `∂t z = AΔz + B(x)z` with homogeneous Dirichlet boundary conditions.
//!
//! The pipeline grids the spatial domain ([`mesh`]), bounds how far `B(x)`
//! strays from its cellwise approximation ([`bounds`]), assembles the
//! Lyapunov matrix inequalities ([`lmi`]), decides them with a barrier method
//! ([`sdp`]), and cross-checks verdicts against a finite-difference
//! discretization ([`oracle`]).

pub mod bounds;
pub mod expr;
pub mod linalg;
pub mod lmi;
pub mod mesh;
pub mod oracle;
pub mod problem;
pub mod sdp;
