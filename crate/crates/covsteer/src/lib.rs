//! Data-driven covariance steering for unknown linear stochastic systems.
//!
//! This crate synthesizes finite-horizon covariance-steering controllers for a
//! discrete-time linear system `x_{k+1} = A x_k + B u_k + D w_k` whose matrices
//! `(A, B, D)` are *unknown*: everything is computed from a single recorded
//! input/state trajectory. The pipeline is
//!
//! 1. [`sysdata`] — simulate a ground-truth system, collect a dataset, and
//!    assemble the input/state Hankel matrices,
//! 2. [`estimate`] — maximum-likelihood estimation of the noise realization
//!    hidden in the data (analytic and difference-of-convex forms) together
//!    with chi-square uncertainty bounds on the estimation error,
//! 3. [`steer`] — nominal and robust semidefinite-program synthesis of
//!    feedback/feedforward policies steering the state mean and covariance to
//!    prescribed terminal values, plus a model-based baseline,
//! 4. validation — exact moment propagation and Monte Carlo rollout of a
//!    synthesized policy on the true (optionally perturbed) system.
//!
//! Supporting modules: [`matlib`] (dense linear algebra and the chi-square
//! inverse CDF) and [`sdpcore`] (a small semidefinite-program builder with a
//! verified interior-point backend).
//!
//! All numerics are generic over the scalar type through the [`Scalar`] trait
//! (implemented by `f32` and `f64`); the `*64` aliases at the crate root fix
//! the common double-precision choices.

pub mod estimate;
pub mod matlib;
pub mod sdpcore;
pub mod steer;
pub mod sysdata;

/// Scalar field for all numerics in this crate.
///
/// `f32` and `f64` implement it. The bound combines nalgebra's `RealField`
/// (elementary functions, comparisons) with num-traits conversions so that
/// algorithm constants written as `f64` literals can be lifted into `T`.
pub trait Scalar:
    nalgebra::RealField + num_traits::FromPrimitive + num_traits::ToPrimitive + Copy
{
    /// Lift an `f64` constant into `T`, panicking only for non-representable
    /// values (never for ordinary finite constants).
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant not representable in scalar type")
    }
    /// Lift a count into `T`.
    fn from_count(v: usize) -> Self {
        Self::from_usize(v).expect("count not representable in scalar type")
    }
}

impl<T> Scalar for T where
    T: nalgebra::RealField + num_traits::FromPrimitive + num_traits::ToPrimitive + Copy
{
}

/// Dense dynamically-sized matrix over `T`.
pub type Mat<T> = nalgebra::DMatrix<T>;
/// Dense dynamically-sized column vector over `T`.
pub type Vect<T> = nalgebra::DVector<T>;

pub use matlib::SymMat;

/// Double-precision matrix.
pub type Mat64 = Mat<f64>;
/// Double-precision vector.
pub type Vect64 = Vect<f64>;
/// Double-precision symmetric matrix.
pub type SymMat64 = SymMat<f64>;

// Clarabel's dense PSD-cone kernels call BLAS/LAPACK provided by the system
// OpenBLAS; the reference keeps the link directives alive.
use openblas_src as _;
