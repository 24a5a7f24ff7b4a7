//! Flow-map learning and control of a wake-oscillator drag model.
//!
//! The crate is generic over the floating-point type; the `*64` and `*32`
//! aliases fix it.

// Negated comparisons deliberately reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod fml;
pub mod harness;
pub mod mpc;
pub mod optim;
pub mod plant;
pub mod rl;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type PlantParams64 = plant::PlantParams<f64>;
pub type PlantParams32 = plant::PlantParams<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Mlp64 = fml::Mlp<f64>;
pub type Mlp32 = fml::Mlp<f32>;
pub type FlowMapModel64 = fml::FlowMapModel<f64>;
pub type FlowMapModel32 = fml::FlowMapModel<f32>;
pub type PolicyModel64 = rl::PolicyModel<f64>;
pub type PolicyModel32 = rl::PolicyModel<f32>;
