//! Local pseudo-partial likelihood estimation for marginal hazard models with
//! varying coefficients on clustered failure-time data.
//!
//! The model for member `j` of cluster `i` is
//! `λ_ij(t) = λ_0j(t) exp{β(V_ij)ᵀZ_ij + g(V_ij)}`, with `β(·)` and `g(·)`
//! estimated by kernel-weighted local linear fits in the exposure `V`.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases name the double-precision instantiations used by the simulator,
//! benchmark harness and command-line front end.

pub mod baseline;
pub mod bench;
pub mod data;
pub mod error;
pub mod inference;
pub mod kernel;
pub mod linalg;
pub mod locfit;
pub mod multi;
pub mod scalar;
pub mod simgen;
pub mod solver;

pub use baseline::{breslow, SmoothHazard, StepHazard};
pub use data::{load_dataset, read_dataset, write_dataset, Dataset, Schema, SubjectRecord};
pub use error::{Error, Result};
pub use kernel::KernelSpec;
pub use linalg::Matrix;
pub use locfit::{local_hessian, local_loglik, local_score, s_hat, LocalDesign, LocalParams, LocalProblem, Smoothing};
pub use scalar::Real;
pub use solver::{
    default_anchors, default_grid, fit_curve, integrate_gprime, maximize_local, one_step, support_grid,
    CurveEstimate, FitMode, FitOptions, GridFit, LocalFit,
};

pub type Dataset64 = Dataset<f64>;
pub type SubjectRecord64 = SubjectRecord<f64>;
pub type Matrix64 = Matrix<f64>;
pub type LocalParams64 = LocalParams<f64>;
pub type LocalDesign64 = LocalDesign<f64>;
pub type Smoothing64 = Smoothing<f64>;
pub type FitOptions64 = FitOptions<f64>;
pub type LocalFit64 = LocalFit<f64>;
pub type CurveEstimate64 = CurveEstimate<f64>;
pub type StepHazard64 = StepHazard<f64>;
pub type SandwichParts64 = inference::SandwichParts<f64>;
pub type TypeStack64 = multi::TypeStack<f64>;
