//! Point clouds, neighborhoods, sphere sampling and angle math.

mod angle;
mod cloud;
mod kdtree;
mod patch;
mod sphere;
mod vec;

pub use angle::{angle_offset, unoriented_angle, unoriented_rmse};
pub use cloud::{parse_xyz, LabeledCloud};
pub use kdtree::KdIndex;
pub use patch::{extract_patch, Patch};
pub use sphere::{random_direction, sample_sphere_uniform};
pub use vec::{UnitVec3, Vec3, UNIT_TOLERANCE};

pub(crate) use cloud::bbox_diagonal;
