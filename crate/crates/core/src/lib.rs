//! Maximum-likelihood maximum-entropy (MLME) estimation of quantum channels
//! from informationally incomplete process-tomography data, with adaptive
//! selection of input states.
//!
//! All numerical code is generic over the scalar type through [`Real`]
//! (implemented for `f32` and `f64`). The aliases at the crate root fix the
//! scalar to `f64`, which is what the tolerances in this crate are tuned for.

pub mod channel;
pub mod error;
pub mod operator;
pub mod random;
pub mod scalar;
pub mod setup;
pub mod strategy;
pub mod solver;
pub mod metrics;
pub mod mpl;

pub use error::{Error, Result};
pub use scalar::Real;

pub type HermitianOp = operator::HermitianOperator<f64>;
pub type Choi = channel::ChoiOperator<f64>;
pub type Kraus = channel::KrausSet<f64>;
pub type Ensemble = setup::InputEnsemble<f64>;
pub type Measurement = setup::Pom<f64>;
pub type Data = setup::TomographyData<f64>;
pub type Report = solver::SolverReport<f64>;
