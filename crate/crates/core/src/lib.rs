#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod divergences;
pub mod error;
pub mod estimators;
mod moments;
pub mod quadrature;
pub mod simulation;
pub mod special;
pub mod tuning;
pub mod vmf_model;

pub use error::{Result, VmfError};
pub use special::Dimension;
pub use vmf_model::{Contaminant, MixtureModel, NaturalParam, UnitVector};
