//! Sampling-based learning of parameterized predictive control policies for
//! uncertain linear systems, with a Hoeffding-type certificate of chance
//! constraint satisfaction.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baseline_mpc;
pub mod certify;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod objectives;
pub mod plot;
pub mod policy;
pub mod rng;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
