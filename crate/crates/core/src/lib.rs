//! Two-type (susceptible / persistent) bacterial branching process under
//! antibiotic mass-killings.
//!
//! The crate has two halves. The analytic half computes the mean-field flow
//! `e^{At}`, the post-kill first-moment matrix and its Perron root, the
//! critical inter-treatment period `T_c(p)` for periodic killing, and the
//! Lyapunov exponent that decides survival when killing times are i.i.d.
//! random. The stochastic half simulates the continuous-time chain exactly,
//! with binomial mass-killings, and estimates survival probabilities and
//! mean trajectories by Monte Carlo.
//!
//! ```
//! use persisters::{critical::critical_time, model::ModelParams};
//!
//! let s = 21f64.sqrt();
//! let params = ModelParams::new((s + 3.0) / 4.0, 0.5, (s - 3.0) / 4.0, 0.5, 0.5, 1.0)?;
//! let tc = critical_time(&params, 1e-10)?;
//! assert!((tc.t_c - 2.8995).abs() < 1e-4);
//! # Ok::<(), persisters::Error>(())
//! ```
//!
//! The guide in `book/` walks through the model chapter by chapter; every
//! code listing there is compiled and run as a doc-test of this crate.

pub mod critical;
pub mod environment;
mod error;
pub mod io;
pub mod meanfield;
pub mod model;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};

// Compile and run the code listings in the guide as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/mean-field.md")]
    mod mean_field {}
    #[doc = include_str!("../../../book/src/critical-time.md")]
    mod critical_time {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/random-environment.md")]
    mod random_environment {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
