//! Analytic shapes with exact normals, plus density and noise variants.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{bbox_diagonal, LabeledCloud, UnitVec3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    /// Square of side `extent` in the z = 0 plane.
    Plane { extent: f64 },
    Sphere { radius: f64 },
    /// Open cylinder along z.
    Cylinder { radius: f64, height: f64 },
    /// Torus around z.
    Torus { major: f64, minor: f64 },
}

impl ShapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Plane { .. } => "plane",
            ShapeKind::Sphere { .. } => "sphere",
            ShapeKind::Cylinder { .. } => "cylinder",
            ShapeKind::Torus { .. } => "torus",
        }
    }

    /// Unit-scale default parameters for a kind name.
    pub fn default_for(name: &str) -> Result<Self> {
        Ok(match name {
            "plane" => ShapeKind::Plane { extent: 2.0 },
            "sphere" => ShapeKind::Sphere { radius: 1.0 },
            "cylinder" => ShapeKind::Cylinder {
                radius: 0.5,
                height: 2.0,
            },
            "torus" => ShapeKind::Torus {
                major: 1.0,
                minor: 0.35,
            },
            other => return Err(Error::InvalidArgument(format!("unknown shape {other:?}"))),
        })
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            ShapeKind::Plane { extent } => vec![extent],
            ShapeKind::Sphere { radius } => vec![radius],
            ShapeKind::Cylinder { radius, height } => vec![radius, height],
            ShapeKind::Torus { major, minor } => vec![major, minor],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.params().iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("shape parameters must be positive: {self:?}")));
        }
        if let ShapeKind::Torus { major, minor } = *self {
            if minor >= major {
                return Err(Error::InvalidArgument("torus minor radius must be below the major".into()));
            }
        }
        Ok(())
    }

    /// Samples one surface point uniformly by area. Returns the point, its
    /// normal and the first surface parameter mapped to `[0, 1]`.
    fn sample<R: Rng>(&self, rng: &mut R) -> (Vec3, UnitVec3, f64) {
        match *self {
            ShapeKind::Plane { extent } => {
                let t: f64 = rng.random();
                let s: f64 = rng.random();
                let p = Vec3::new((t - 0.5) * extent, (s - 0.5) * extent, 0.0);
                (p, UnitVec3::Z, t)
            }
            ShapeKind::Sphere { radius } => {
                // Uniform height and azimuth give uniform area (Archimedes).
                let t: f64 = rng.random();
                let phi = rng.random::<f64>() * TAU;
                let z = 2.0 * t - 1.0;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let dir = Vec3::new(r * phi.cos(), r * phi.sin(), z);
                let n = UnitVec3::normalize(dir).expect("unit direction");
                (n.vec() * radius, n, t)
            }
            ShapeKind::Cylinder { radius, height } => {
                let t: f64 = rng.random();
                let phi = rng.random::<f64>() * TAU;
                let n = Vec3::new(phi.cos(), phi.sin(), 0.0);
                let p = Vec3::new(radius * n.x, radius * n.y, (t - 0.5) * height);
                (p, UnitVec3::normalize(n).expect("unit"), t)
            }
            ShapeKind::Torus { major, minor } => {
                let t: f64 = rng.random();
                let u = t * TAU;
                // Area element is proportional to (major + minor cos v).
                let v = loop {
                    let v = rng.random::<f64>() * TAU;
                    let accept = (major + minor * v.cos()) / (major + minor);
                    if rng.random::<f64>() < accept {
                        break v;
                    }
                };
                let n = Vec3::new(u.cos() * v.cos(), u.sin() * v.cos(), v.sin());
                let ring = Vec3::new(u.cos(), u.sin(), 0.0) * major;
                (ring + n * minor, UnitVec3::normalize(n).expect("unit"), t)
            }
        }
    }
}

/// Point-density variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Density {
    #[default]
    Uniform,
    /// Keeps points whose first surface parameter falls in every other band
    /// of width 1/10 of its range.
    Stripes,
    /// Keeps points with probability rising linearly along the first
    /// surface parameter.
    Gradient,
}

impl Density {
    fn keep<R: Rng>(&self, t: f64, rng: &mut R) -> bool {
        match self {
            Density::Uniform => true,
            Density::Stripes => ((t * 10.0).floor() as i64).rem_euclid(2) == 0,
            Density::Gradient => rng.random::<f64>() < GRADIENT_FLOOR + (1.0 - GRADIENT_FLOOR) * t,
        }
    }
}

/// Keep probability at the sparse end of the gradient variant.
const GRADIENT_FLOOR: f64 = 0.05;

impl FromStr for Density {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Density::Uniform),
            "stripes" => Ok(Density::Stripes),
            "gradient" | "gradients" => Ok(Density::Gradient),
            other => Err(Error::InvalidArgument(format!("unknown density {other:?}"))),
        }
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Density::Uniform => "uniform",
            Density::Stripes => "stripes",
            Density::Gradient => "gradient",
        })
    }
}

/// Everything needed to regenerate one synthetic cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Samples drawn before density rejection.
    pub points: usize,
    /// Gaussian noise std as a fraction of the bounding-box diagonal.
    pub noise: f64,
    pub density: Density,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind, points: usize, seed: u64) -> Self {
        ShapeSpec {
            kind,
            points,
            noise: 0.0,
            density: Density::Uniform,
            seed,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_density(mut self, density: Density) -> Self {
        self.density = density;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        if self.points == 0 {
            return Err(Error::InvalidArgument("points must be >= 1".into()));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::InvalidArgument(format!("noise must be >= 0, got {}", self.noise)));
        }
        Ok(())
    }

    /// Short column label, e.g. `sphere/n0.0065/uniform`.
    pub fn label(&self) -> String {
        format!("{}/n{}/{}", self.kind.name(), self.noise, self.density)
    }

    /// One manifest line: `kind=sphere r=1 points=2000 noise=0 density=uniform seed=3`.
    pub fn to_manifest_line(&self) -> String {
        let shape = match self.kind {
            ShapeKind::Plane { extent } => format!("kind=plane extent={extent}"),
            ShapeKind::Sphere { radius } => format!("kind=sphere r={radius}"),
            ShapeKind::Cylinder { radius, height } => format!("kind=cylinder r={radius} height={height}"),
            ShapeKind::Torus { major, minor } => format!("kind=torus major={major} minor={minor}"),
        };
        format!(
            "{shape} points={} noise={} density={} seed={}",
            self.points, self.noise, self.density, self.seed
        )
    }
}

impl FromStr for ShapeSpec {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got {tok:?}")))?;
            if fields.insert(k, v).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate key {k:?}")));
            }
        }
        let kind_name = fields
            .remove("kind")
            .ok_or_else(|| Error::InvalidArgument("missing kind=".into()))?;
        let mut kind = ShapeKind::default_for(kind_name)?;
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad number {v:?}")))
        };
        let mut spec = ShapeSpec::new(kind, 2000, 0);
        for (k, v) in fields {
            match (k, &mut kind) {
                ("extent", ShapeKind::Plane { extent }) => *extent = num(v)?,
                ("r" | "radius", ShapeKind::Sphere { radius }) => *radius = num(v)?,
                ("r" | "radius", ShapeKind::Cylinder { radius, .. }) => *radius = num(v)?,
                ("height", ShapeKind::Cylinder { height, .. }) => *height = num(v)?,
                ("major", ShapeKind::Torus { major, .. }) => *major = num(v)?,
                ("minor", ShapeKind::Torus { minor, .. }) => *minor = num(v)?,
                ("points", _) => {
                    spec.points = v
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad point count {v:?}")))?
                }
                ("noise", _) => spec.noise = num(v)?,
                ("density", _) => spec.density = v.parse()?,
                ("seed", _) => {
                    spec.seed = v
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad seed {v:?}")))?
                }
                (k, kind) => {
                    return Err(Error::InvalidArgument(format!(
                        "key {k:?} does not apply to {}",
                        kind.name()
                    )))
                }
            }
        }
        spec.kind = kind;
        spec.validate()?;
        Ok(spec)
    }
}

/// Generates the cloud described by `spec`. Normals are those of the clean
/// surface at the pre-noise positions.
pub fn synth_cloud(spec: &ShapeSpec) -> Result<LabeledCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::with_capacity(spec.points);
    let mut normals = Vec::with_capacity(spec.points);
    for _ in 0..spec.points {
        let (p, n, t) = spec.kind.sample(&mut rng);
        if spec.density.keep(t, &mut rng) {
            points.push(p);
            normals.push(n);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyResult);
    }
    if spec.noise > 0.0 {
        let sigma = spec.noise * bbox_diagonal(&points);
        let gauss = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
        for p in &mut points {
            *p = *p
                + Vec3::new(
                    gauss.sample(&mut noise_rng),
                    gauss.sample(&mut noise_rng),
                    gauss.sample(&mut noise_rng),
                );
        }
    }
    LabeledCloud::new(points, Some(normals))
}

/// Noise levels used by the standard test suite: none, low, medium, high.
pub const NOISE_LEVELS: [f64; 4] = [0.0, 0.00125, 0.0065, 0.012];
