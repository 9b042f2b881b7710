//! Solid-state NMR under magic-angle spinning: direct propagation and
//! frequency-domain average Hamiltonian theory for modulated pulse sequences.
//!
//! Numeric kernels in [`spin`], [`tensor`] and [`quaternion`] are generic over
//! [`num::Real`]; the simulation layers work in `f64`.

pub mod aht;
pub mod config;
pub mod num;
pub mod optimizer;
pub mod output;
pub mod powder;
pub mod propagation;
pub mod pulse;
pub mod quaternion;
pub mod recipes;
pub mod spin;
pub mod system;
pub mod tensor;

pub use num::{CMatrix, Real};

pub type OperatorMatrix = CMatrix<f64>;
pub type OperatorMatrix32 = CMatrix<f32>;
pub type Quaternion = quaternion::Quaternion<f64>;
pub type Quaternion32 = quaternion::Quaternion<f32>;
pub type EulerAngles = tensor::EulerAngles<f64>;
pub type EulerAngles32 = tensor::EulerAngles<f32>;
pub type InteractionTensor = tensor::InteractionTensor<f64>;
pub type SphericalComponents = tensor::SphericalComponents<f64>;
pub type SpatialFourierComponents = tensor::SpatialFourierComponents<f64>;
pub type DensityOperator = spin::DensityOperator<f64>;
pub type SubspaceBasis = spin::SubspaceBasis<f64>;
