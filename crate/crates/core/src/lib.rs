//! Influence-function forgetting for Bayesian inference.
//!
//! A trained posterior (a mean-field Gaussian from variational inference, or a
//! buffer of SGLD / SGHMC draws) is edited in place so that it approximates the
//! posterior that would have been obtained without a set of removed training
//! datums. Everything is phrased through an energy function
//! `F(γ, S) = Σ h(γ, z) + f(γ)`: removing `z` moves the minimiser by
//! approximately `H⁻¹ ∇h(γ, z)`, computed here with a scaled Neumann series.
//!
//! The crate is `no_std` + `alloc`. File formats, the CLI and the experiment
//! pipelines live in the `bif` crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod bounds;
pub mod certificate;
pub mod clock;
pub mod dataset;
pub mod energy;
pub mod error;
pub mod forget;
pub mod influence;
pub mod linalg;
pub mod matching;
pub(crate) mod math;
pub mod models;
pub mod rng;
pub mod schedule;
pub mod sgmcmc;
pub mod vi;

pub use clock::{Clock, NoClock};

pub use dataset::{dataset_remove, Datum, Dataset};
pub use energy::{energy, grad_energy, hvp_energy};
pub use error::{Error, Result};
pub use linalg::{dense_solve, DenseMatrix, ParamVector};
pub use models::EnergyModel;
pub use rng::{seeded_rng, RngStream};
