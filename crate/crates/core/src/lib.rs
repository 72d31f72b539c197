//! Graybox modelling of a single noisy qubit.
//!
//! The crate covers the whole pipeline: coloured noise synthesis, Monte Carlo
//! simulation of pulsed evolution, a hybrid recurrent/physics model trained on
//! the simulated measurements, gradient-based control design on the trained
//! model and noise spectroscopy through the model.

pub mod linalg2;
pub mod noise_gen;
pub mod pulse_lib;
pub mod rng;
pub mod mc_simulator;
pub mod dataset;
pub mod util;
pub mod graybox_model;
pub mod trainer;
pub mod controller;
pub mod spectroscopy;
pub mod error;
pub mod cli;

pub use error::{Error, Result};
