//! Fine-Gray cumulative incidence estimation for competing risks, with
//! time-simultaneous confidence bands from censoring-complete data (wild
//! bootstrap), from incomplete data via multiple imputation of censoring
//! times (WB-MI) and via inverse probability of censoring weighting (B-IPCW).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod censoring;
pub mod data;
pub mod error;
pub mod finegray;
pub mod imputation;
pub mod io;
pub mod ipcw;
pub mod resampling;
mod risk;
pub mod rng;
pub mod simulation;
pub mod step;

pub use censoring::CensoringSurvival;
pub use data::{band_interval, BandInterval, Completeness, Dataset, IntervalRule, Record};
pub use error::{Error, NewtonDiagnostics, Result};
pub use finegray::{FineGrayFit, FitMethod};
pub use imputation::{ImputationConfig, ImputationMethod, TailRule};
pub use ipcw::IpcwContext;
pub use risk::NewtonOptions;
pub use step::StepFunction;
pub use resampling::{BandMethod, BandResult, BandSettings, CenterRule};
