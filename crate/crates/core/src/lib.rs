pub mod autodiff;
pub mod cli;
pub mod error;
pub mod flows;
pub mod gauss;
pub mod metrics;
pub mod models;
pub mod objective;
pub mod rng;
pub mod synthdata;
pub mod toy;

pub use error::{Error, Result};
