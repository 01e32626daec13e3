//! One-shot learning that fuses class side information into the learned
//! embedding through a kernel dependence (HSIC) objective, plus quasi-samples
//! for data-poor classes generated by attention over a label-affinity kernel.

pub mod affinity;
pub mod data;
pub mod error;
pub mod kernels;
pub mod numgrad;
pub mod regression;
pub mod trainer;
pub mod tree_cov;

pub use error::{Error, Result};
pub use numgrad::{AdamConfig, Matrix, ParamStore, Tape, Var};
