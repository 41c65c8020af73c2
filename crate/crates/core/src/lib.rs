//! Spectral and stochastic solvers for kinetic Fokker-Planck operators with
//! heavy-tailed equilibria.

pub mod banded;
pub mod discretization;
pub mod eigensolver;
pub mod equilibria;
pub mod kinetic_propagator;
pub mod limit_problem;
pub mod montecarlo;
pub mod quad;
pub mod stats;
