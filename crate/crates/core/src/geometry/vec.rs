use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// A point or direction in model space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance_squared(self, o: Vec3) -> f64 {
        (self - o).norm_squared()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Returns the normalized direction, or `None` for a zero or non-finite vector.
    /// Vectors already unit length to rounding are returned unchanged, so
    /// normalizing is idempotent.
    pub fn try_normalize(self) -> Option<UnitVec3> {
        if (self.norm_squared() - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Some(UnitVec3(self));
        }
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            Some(UnitVec3(self / n))
        } else {
            None
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Tolerance on `| |v| - 1 |` accepted by [`UnitVec3::new`].
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// A direction of unit length: query vectors, normals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVec3(Vec3);

impl UnitVec3 {
    pub const X: UnitVec3 = UnitVec3(Vec3::new(1.0, 0.0, 0.0));
    pub const Y: UnitVec3 = UnitVec3(Vec3::new(0.0, 1.0, 0.0));
    pub const Z: UnitVec3 = UnitVec3(Vec3::new(0.0, 0.0, 1.0));

    /// Wraps a vector that is already unit length (within [`UNIT_TOLERANCE`]).
    pub fn new(v: Vec3) -> Result<Self> {
        if !v.is_finite() || (v.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "not a unit vector: ({}, {}, {})",
                v.x, v.y, v.z
            )));
        }
        Ok(UnitVec3(v))
    }

    /// Normalizes an arbitrary non-zero vector.
    pub fn normalize(v: Vec3) -> Result<Self> {
        v.try_normalize().ok_or(Error::ZeroVector)
    }

    pub fn vec(self) -> Vec3 {
        self.0
    }

    pub fn x(self) -> f64 {
        self.0.x
    }

    pub fn y(self) -> f64 {
        self.0.y
    }

    pub fn z(self) -> f64 {
        self.0.z
    }

    pub fn to_array(self) -> [f64; 3] {
        self.0.to_array()
    }

    pub fn dot(self, o: UnitVec3) -> f64 {
        self.0.dot(o.0)
    }

    /// Flips the vector so that z >= 0, breaking ties on y then x.
    pub fn canonical_sign(self) -> UnitVec3 {
        let v = self.0;
        let flip = if v.z != 0.0 {
            v.z < 0.0
        } else if v.y != 0.0 {
            v.y < 0.0
        } else {
            v.x < 0.0
        };
        if flip {
            -self
        } else {
            self
        }
    }
}

impl Neg for UnitVec3 {
    type Output = UnitVec3;
    fn neg(self) -> UnitVec3 {
        UnitVec3(-self.0)
    }
}

impl From<UnitVec3> for Vec3 {
    fn from(u: UnitVec3) -> Vec3 {
        u.0
    }
}
