//! Varifold-based curvature estimation and approximate mean curvature flow
//! for point clouds.
//!
//! The crate models a point cloud together with per-point masses and tangent
//! planes as a varifold, estimates its mean curvature and second fundamental
//! form by kernel-weighted pair sums, evolves the cloud by the resulting
//! velocity field (continuous and discrete schemes), and checks the sphere
//! comparison principles the schemes satisfy.

pub mod barriers;
pub mod curvature;
pub mod flow;
pub mod io;
pub mod kernels;
pub mod neighbors;
pub mod operator;
pub mod rng;
pub mod sff;
pub mod varifold;

pub use curvature::{
    mean_curvature, mean_curvature_field, mean_curvature_tangential, CurvatureEvaluator,
    CurvatureField, CurvatureResult, KernelArg,
};
pub use kernels::{
    default_bump_pair, normalization, validate_natural_pair, KernelPair, KernelProfile,
    NormalizationConstants,
};
pub use operator::OperatorSpec;
pub use varifold::{estimate_tangents_pca, uniform_masses, PointCloudVarifold, Projector};
