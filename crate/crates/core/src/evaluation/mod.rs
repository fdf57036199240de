//! Cross-validated geometry error, sliced Wasserstein distance between texture sets, and
//! nearest-identity distance curves.

mod cv;
mod identity;
mod swd;

pub use cv::{assign_folds, cross_validate, cross_validate_methods, CvOptions, CvReport};
pub use identity::{
    identity_descriptor, nn_distance_curve, nn_distances, DescriptorInput, DescriptorSet, DistanceCurve,
    DistanceCurves, DEFAULT_DESCRIPTOR_RANK,
};
pub use swd::{sliced_wasserstein, SwdParams, SwdReport};
