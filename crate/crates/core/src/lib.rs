//! Modelling toolkit for balanced heterodyne detection of weak mid-infrared
//! signals: detector noise budgets and NEP, a seeded time-domain simulator of
//! the stabilized detection chains, a software spectrum analyzer, and
//! heterodyne-interferometry fringe fitting.

pub mod detectors;
pub mod error;
pub mod interferometry;
pub mod noise_budget;
pub mod signal_chain;
pub mod spectral;
pub mod units;

pub use error::{Error, Result};
