//! Unoriented normal estimation for point clouds with neural angle fields.
//!
//! A network learns, for each local patch, the unoriented angle between an
//! arbitrary query direction and the true surface normal. Normals are read
//! back by evaluating the field on many sphere samples, keeping the
//! directions with the smallest predicted angle, refining them by gradient
//! descent on the query, and averaging the sign-aligned results.

pub mod baselines;
pub mod bench;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod neural;
pub mod pipeline;

pub use baselines::{jet2_normal, pca_normal, BaselineKind, BaselineMethod};
pub use error::{Error, ErrorClass, Result};
pub use geometry::{
    angle_offset, extract_patch, sample_sphere_uniform, unoriented_rmse, KdIndex, LabeledCloud, Patch,
    UnitVec3, Vec3,
};
pub use inference::{estimate_normal, InferConfig, NormalEstimator};
pub use neural::{load_model, save_model, AngleFieldModel, Architecture};
pub use pipeline::{train, TrainConfig, TrainLog};
