//! Slow-fast McKean-Vlasov particle systems: equilibria of the fast process,
//! cell problems, averaged coefficients, ensemble simulation, fluctuation
//! pairings and moderate-deviation rate functionals.

pub mod averaging;
pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod exec;
pub mod fluctuation;
pub mod grid;
pub mod mdp_rate;
pub mod model;
pub mod noise;
pub mod poisson;
pub mod simulate;

pub use error::{Error, Result};
