//! Classical normal estimators used as reference rows in benchmarks:
//! covariance (PCA) plane fitting and order-2 jet (quadric height field)
//! fitting.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{Patch, UnitVec3, Vec3};

const JACOBI_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 50;
const RANK_TOL: f64 = 1e-12;
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Pca,
    Jet2,
}

impl BaselineKind {
    pub fn min_k(self) -> usize {
        match self {
            BaselineKind::Pca => 3,
            BaselineKind::Jet2 => 6,
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::Pca => "pca",
            BaselineKind::Jet2 => "jet2",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pca" => Ok(BaselineKind::Pca),
            "jet2" | "jet" => Ok(BaselineKind::Jet2),
            other => Err(Error::InvalidArgument(format!("unknown baseline {other:?}"))),
        }
    }
}

/// A classical estimator together with its neighborhood size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineMethod {
    kind: BaselineKind,
    k: usize,
}

impl BaselineMethod {
    pub fn new(kind: BaselineKind, k: usize) -> Result<Self> {
        if k < kind.min_k() {
            return Err(Error::InvalidArgument(format!(
                "{kind} needs k >= {}, got {k}",
                kind.min_k()
            )));
        }
        Ok(BaselineMethod { kind, k })
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn estimate(&self, patch: &Patch) -> Result<UnitVec3> {
        match self.kind {
            BaselineKind::Pca => pca_normal(patch),
            BaselineKind::Jet2 => jet2_normal(patch),
        }
    }
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// the columns of the returned matrix.
pub fn symmetric_eigen<const N: usize>(mut a: [[f64; N]; N]) -> ([f64; N], [[f64; N]; N]) {
    let mut v = [[0.0; N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..N)
            .flat_map(|p| (p + 1..N).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..N {
            for q in p + 1..N {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..N {
                    let arp = a[r][p];
                    let arq = a[r][q];
                    a[r][p] = c * arp - s * arq;
                    a[r][q] = s * arp + c * arq;
                }
                for r in 0..N {
                    let apr = a[p][r];
                    let aqr = a[q][r];
                    a[p][r] = c * apr - s * aqr;
                    a[q][r] = s * apr + c * aqr;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let mut order: [usize; N] = std::array::from_fn(|i| i);
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let values = std::array::from_fn(|i| a[order[i]][order[i]]);
    let mut vectors = [[0.0; N]; N];
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..N {
            vectors[r][dst] = v[r][src];
        }
    }
    (values, vectors)
}

fn covariance(patch: &Patch) -> [[f64; 3]; 3] {
    let c = patch.coords();
    let k = c.nrows() as f64;
    let mut mean = [0.0; 3];
    for row in c.rows() {
        for a in 0..3 {
            mean[a] += row[a] / k;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for row in c.rows() {
        let d = [row[0] - mean[0], row[1] - mean[1], row[2] - mean[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j] / k;
            }
        }
    }
    cov
}

/// Eigenvectors of the patch covariance as a right-handed frame
/// `[tangent_u, tangent_v, normal]` ordered by descending spread, plus the
/// ascending eigenvalues.
fn pca_frame(patch: &Patch) -> Result<([f64; 3], [Vec3; 3])> {
    let (vals, vecs) = symmetric_eigen(covariance(patch));
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    if (vals[1] - vals[0]).abs() <= RANK_TOL {
        return Err(Error::RankDeficient);
    }
    let col = |j: usize| Vec3::new(vecs[0][j], vecs[1][j], vecs[2][j]);
    let n = col(0);
    let u = col(2);
    let v = n.cross(u);
    Ok((vals, [u, v, n]))
}

/// Normal of the least-squares plane through the patch: the covariance
/// eigenvector with the smallest eigenvalue.
pub fn pca_normal(patch: &Patch) -> Result<UnitVec3> {
    let (_, [_, _, n]) = pca_frame(patch)?;
    Ok(UnitVec3::normalize(n)?.canonical_sign())
}

/// Coefficients `[a0..a5]` of `h = a0 + a1 u + a2 v + a3 u^2 + a4 uv + a5 v^2`
/// together with the frame they are expressed in.
#[derive(Debug, Clone, Copy)]
pub struct JetFit {
    pub coefficients: [f64; 6],
    pub frame: [Vec3; 3],
}

impl JetFit {
    pub fn normal(&self) -> Result<UnitVec3> {
        let [u, v, n] = self.frame;
        let [_, a1, a2, ..] = self.coefficients;
        let world = u * -a1 + v * -a2 + n;
        Ok(UnitVec3::normalize(world)?.canonical_sign())
    }
}

/// Fits the order-2 height field in the PCA frame of the patch.
pub fn fit_jet2(patch: &Patch) -> Result<JetFit> {
    if patch.k() < 6 {
        return Err(Error::InvalidArgument(format!(
            "jet2 needs k >= 6, got {}",
            patch.k()
        )));
    }
    let (_, frame) = pca_frame(patch)?;
    let [eu, ev, en] = frame;

    let mut ata = [[0.0; 6]; 6];
    let mut atb = [0.0; 6];
    for row in patch.coords().rows() {
        let p = Vec3::new(row[0], row[1], row[2]);
        let (u, v, h) = (p.dot(eu), p.dot(ev), p.dot(en));
        let basis = [1.0, u, v, u * u, u * v, v * v];
        for i in 0..6 {
            atb[i] += basis[i] * h;
            for j in 0..6 {
                ata[i][j] += basis[i] * basis[j];
            }
        }
    }

    let (vals, _) = symmetric_eigen(ata);
    let condition = if vals[0] > 0.0 {
        vals[5] / vals[0]
    } else {
        f64::INFINITY
    };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularSystem { condition });
    }
    let coefficients = solve_pivoted(ata, atb).ok_or(Error::SingularSystem { condition })?;
    Ok(JetFit {
        coefficients,
        frame,
    })
}

/// Normal of the fitted quadric height field at the patch center.
pub fn jet2_normal(patch: &Patch) -> Result<UnitVec3> {
    fit_jet2(patch)?.normal()
}

/// Gaussian elimination with partial pivoting.
fn solve_pivoted<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let pivot = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col] == 0.0 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..N {
            let f = a[r][col] / a[col][col];
            for c in col..N {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; N];
    for r in (0..N).rev() {
        let s: f64 = (r + 1..N).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
