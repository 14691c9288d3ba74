//! Reachable-set approximation for nonlinear control systems.
//!
//! Two representations are built from the same grid of Mayer problems: the
//! distance-field complement of balls ([`dfog`]) and the sublevel set of a
//! three-label kernel SVM ([`svm`]). [`pipeline`] runs both and measures them
//! against an Euler reference in the Hausdorff distance.
//!
//! Numerical types are generic over [`Scalar`] (`f32` or `f64`). The aliases in
//! [`f64`] and [`f32`] fix the scalar type.

pub mod dfog;
pub mod discretization;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod labelling;
pub mod linalg;
pub mod pipeline;
pub mod scalar;
pub mod svm;
pub mod systems;

pub use error::{Error, Result};
pub use labelling::Label;
pub use scalar::Scalar;

macro_rules! aliases {
    ($name:ident, $t:ty) => {
        pub mod $name {
            pub type ControlSystem = crate::systems::ControlSystem<$t>;
            pub type ControlSequence = crate::discretization::ControlSequence<$t>;
            pub type GridSpec = crate::discretization::GridSpec<$t>;
            pub type DiscreteReachSet = crate::discretization::DiscreteReachSet<$t>;
            pub type MayerResult = crate::dfog::MayerResult<$t>;
            pub type DistanceField = crate::dfog::DistanceField<$t>;
            pub type TrainingSet = crate::labelling::TrainingSet<$t>;
            pub type KernelSpec = crate::kernel::KernelSpec<$t>;
            pub type SvmModel = crate::svm::SvmModel<$t>;
            pub type PointSet = crate::geometry::PointSet<$t>;
        }
    };
}

aliases!(f64, f64);
aliases!(f32, f32);
