pub mod baselines;
pub mod config;
pub mod data;
pub mod learners;
pub mod nn;
pub mod oda;
pub mod policy;
pub mod scalar;
pub mod seeding;
pub mod sim;

pub use scalar::Scalar;

pub type MetaCheckpoint32 = oda::MetaCheckpoint<f32>;
pub type MetaCheckpoint64 = oda::MetaCheckpoint<f64>;
pub type AdaptedPolicy32 = oda::AdaptedPolicy<f32>;
pub type AdaptedPolicy64 = oda::AdaptedPolicy<f64>;
pub type DdpgCheckpoint32 = baselines::DdpgCheckpoint<f32>;
pub type DdpgCheckpoint64 = baselines::DdpgCheckpoint<f64>;
pub type BaselineCheckpoint32 = baselines::BaselineCheckpoint<f32>;
pub type BaselineCheckpoint64 = baselines::BaselineCheckpoint<f64>;
