//! Point containers and the whitespace-separated XYZ text format.
//!
//! A file holds either 3 fields per line (`x y z`) or 6 (`x y z nx ny nz`).
//! Lines starting with `#` and blank lines are skipped. Mixing 3- and 6-field
//! lines in one file is rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::vec::{UnitVec3, Vec3};
use crate::error::{Error, Result};

/// Points with optional per-point ground-truth normals.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<UnitVec3>>,
}

impl LabeledCloud {
    pub fn new(points: Vec<Vec3>, normals: Option<Vec<UnitVec3>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("cloud must contain at least one point".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("point {i} is not finite")));
        }
        if let Some(n) = &normals {
            if n.len() != points.len() {
                return Err(Error::LengthMismatch {
                    left: points.len(),
                    right: n.len(),
                });
            }
        }
        Ok(LabeledCloud { points, normals })
    }

    pub fn unlabeled(points: Vec<Vec3>) -> Result<Self> {
        Self::new(points, None)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[UnitVec3]> {
        self.normals.as_deref()
    }

    pub fn with_normals(self, normals: Vec<UnitVec3>) -> Result<Self> {
        Self::new(self.points, Some(normals))
    }

    /// Length of the diagonal of the axis-aligned bounding box.
    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.points)
    }

    pub fn read_xyz(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(Error::file(path))?;
        parse_xyz(&text, path)
    }

    pub fn write_xyz(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_xyz_string()).map_err(Error::file(path))
    }

    /// Serializes with shortest round-trip float formatting so that reading
    /// the text back reproduces every coordinate bit for bit.
    pub fn to_xyz_string(&self) -> String {
        let mut out = String::with_capacity(self.points.len() * 64);
        for (i, p) in self.points.iter().enumerate() {
            match &self.normals {
                Some(n) => {
                    let n = n[i];
                    let _ = writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x(), n.y(), n.z());
                }
                None => {
                    let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
                }
            }
        }
        out
    }
}

pub(crate) fn bbox_diagonal(points: &[Vec3]) -> f64 {
    let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = -lo;
    for p in points {
        lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    (hi - lo).norm()
}

/// Parses XYZ text. `origin` is only used in error messages.
pub fn parse_xyz(text: &str, origin: &Path) -> Result<LabeledCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut width = None;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::parse(origin, lineno, format!("not a number: {tok:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if fields.len() != 3 && fields.len() != 6 {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected 3 or 6 fields, found {}", fields.len()),
            ));
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("mixed field counts: {} then {}", w, fields.len()),
                ));
            }
            _ => {}
        }
        let p = Vec3::new(fields[0], fields[1], fields[2]);
        if !p.is_finite() {
            return Err(Error::parse(origin, lineno, "non-finite coordinate"));
        }
        points.push(p);
        if fields.len() == 6 {
            let n = Vec3::new(fields[3], fields[4], fields[5]);
            // Files written by other tools carry normals rounded to a few
            // digits; accept anything close and renormalize.
            if !n.is_finite() || (n.norm() - 1.0).abs() > 1e-3 {
                return Err(Error::parse(origin, lineno, "normal is not unit length"));
            }
            let n = if (n.norm() - 1.0).abs() <= super::vec::UNIT_TOLERANCE {
                UnitVec3::new(n)?
            } else {
                UnitVec3::normalize(n)?
            };
            normals.push(n);
        }
    }

    if points.is_empty() {
        return Err(Error::parse(origin, 0, "no points"));
    }
    let normals = (width == Some(6)).then_some(normals);
    LabeledCloud::new(points, normals)
}
