use ndarray::Array2;

use super::cloud::LabeledCloud;
use super::kdtree::KdIndex;
use super::vec::Vec3;
use crate::error::{Error, Result};

/// The `k` nearest neighbors of one point, translated so that point sits at
/// the origin and scaled so the farthest neighbor lies on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    coords: Array2<f64>,
    center: Vec3,
    centroid: Vec3,
    scale: f64,
    center_index: usize,
    neighbors: Vec<usize>,
}

impl Patch {
    /// Builds a patch from already-normalized coordinates (rows of `k x 3`).
    /// Used by tests and tooling that synthesize patches directly.
    pub fn from_coords(coords: Array2<f64>) -> Result<Self> {
        if coords.ncols() != 3 || coords.nrows() < 3 {
            return Err(Error::InvalidArgument(format!(
                "patch must be k x 3 with k >= 3, got {:?}",
                coords.dim()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("patch coordinates"));
        }
        let max_norm = coords
            .rows()
            .into_iter()
            .map(|r| (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt())
            .fold(0.0, f64::max);
        if max_norm > 1.0 + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "patch coordinates exceed the unit ball (max norm {max_norm})"
            )));
        }
        let k = coords.nrows();
        let mean = coords.sum_axis(ndarray::Axis(0)) / k as f64;
        Ok(Patch {
            centroid: Vec3::new(mean[0], mean[1], mean[2]),
            neighbors: (0..k).collect(),
            coords,
            center: Vec3::ZERO,
            scale: 1.0,
            center_index: 0,
        })
    }

    /// Normalized neighbor coordinates, one row per neighbor, nearest first.
    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    pub fn k(&self) -> usize {
        self.coords.nrows()
    }

    /// Source position of the center point.
    pub fn center(&self) -> Vec3 {
        self.center
    }

    /// Neighbor centroid in source coordinates.
    pub fn centroid(&self) -> Vec3 {
        self.centroid
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn center_index(&self) -> usize {
        self.center_index
    }

    /// Source indices of the neighbors, in row order.
    pub fn neighbor_indices(&self) -> &[usize] {
        &self.neighbors
    }

    /// Maps row `r` back to source coordinates.
    pub fn denormalize_row(&self, r: usize) -> Vec3 {
        let row = self.coords.row(r);
        Vec3::new(row[0], row[1], row[2]) * self.scale + self.center
    }

    /// Returns a copy with rows reordered by `perm` (row `i` of the result is
    /// row `perm[i]` of `self`).
    pub fn permuted(&self, perm: &[usize]) -> Patch {
        assert_eq!(perm.len(), self.k());
        let mut coords = Array2::zeros(self.coords.dim());
        for (dst, &src) in perm.iter().enumerate() {
            coords.row_mut(dst).assign(&self.coords.row(src));
        }
        Patch {
            coords,
            neighbors: perm.iter().map(|&p| self.neighbors[p]).collect(),
            ..self.clone()
        }
    }
}

/// Extracts the normalized `k`-neighborhood of point `i`.
pub fn extract_patch(index: &KdIndex, cloud: &LabeledCloud, i: usize, k: usize) -> Result<Patch> {
    let points = cloud.points();
    if i >= points.len() {
        return Err(Error::InvalidArgument(format!(
            "point index {i} out of range for {} points",
            points.len()
        )));
    }
    if k < 3 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 3..={}",
            points.len()
        )));
    }
    if index.len() != points.len() {
        return Err(Error::LengthMismatch {
            left: index.len(),
            right: points.len(),
        });
    }

    let center = points[i];
    let mut found = index.knn_with_distances(center, k)?;
    // Duplicates of the center sort by index, so `i` itself may have been
    // crowded out; it belongs in the patch at distance zero.
    if !found.iter().any(|&(j, _)| j == i) {
        found.pop();
        found.insert(0, (i, 0.0));
        found.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    }

    let scale = found.iter().map(|&(_, d2)| d2).fold(0.0, f64::max).sqrt();
    if scale == 0.0 {
        return Err(Error::DegeneratePatch { center: i });
    }

    let mut coords = Array2::zeros((k, 3));
    let mut sum = Vec3::ZERO;
    for (r, &(j, _)) in found.iter().enumerate() {
        let p = points[j];
        sum = sum + p;
        let c = (p - center) / scale;
        coords[[r, 0]] = c.x;
        coords[[r, 1]] = c.y;
        coords[[r, 2]] = c.z;
    }

    Ok(Patch {
        coords,
        center,
        centroid: sum / k as f64,
        scale,
        center_index: i,
        neighbors: found.into_iter().map(|(j, _)| j).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sphere::sample_sphere_uniform;

    fn grid_cloud() -> LabeledCloud {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Vec3::new(i as f64 * 0.1, j as f64 * 0.1, 0.5));
            }
        }
        LabeledCloud::unlabeled(pts).unwrap()
    }

    #[test]
    fn plane_grid_interior_patch() {
        let cloud = grid_cloud();
        let idx = KdIndex::build(&cloud);
        let p = extract_patch(&idx, &cloud, 55, 9).unwrap();
        assert_eq!(p.k(), 9);
        assert_eq!(p.center_index(), 55);
        let max_norm = p
            .coords()
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max);
        assert!((max_norm - 1.0).abs() < 1e-12);
        assert!(p.coords().column(2).iter().all(|z| z.abs() == 0.0));
        assert_eq!(p.coords().row(0).to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn sphere_round_trip() {
        let pts: Vec<Vec3> = sample_sphere_uniform(500, 3)
            .unwrap()
            .into_iter()
            .map(|u| u.vec() * 2.5 + Vec3::new(1.0, -2.0, 0.5))
            .collect();
        let cloud = LabeledCloud::unlabeled(pts.clone()).unwrap();
        let idx = KdIndex::build(&cloud);
        for i in [0, 17, 499] {
            let p = extract_patch(&idx, &cloud, i, 32).unwrap();
            for (r, &j) in p.neighbor_indices().iter().enumerate() {
                let back = p.denormalize_row(r);
                let err = (back - pts[j]).norm() / pts[j].norm();
                assert!(err < 1e-12, "row {r}: {err}");
            }
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let cloud = LabeledCloud::unlabeled(vec![Vec3::new(1.0, 1.0, 1.0); 5]).unwrap();
        let idx = KdIndex::build(&cloud);
        assert!(matches!(
            extract_patch(&idx, &cloud, 2, 4),
            Err(Error::DegeneratePatch { center: 2 })
        ));
    }

    #[test]
    fn center_is_kept_among_duplicates() {
        let mut pts = vec![Vec3::ZERO; 4];
        pts.push(Vec3::new(1.0, 0.0, 0.0));
        pts.push(Vec3::new(0.0, 1.0, 0.0));
        let cloud = LabeledCloud::unlabeled(pts).unwrap();
        let idx = KdIndex::build(&cloud);
        let p = extract_patch(&idx, &cloud, 3, 3).unwrap_err();
        // 3 nearest of point 3 are all duplicates at the origin.
        assert!(matches!(p, Error::DegeneratePatch { .. }));
        let p = extract_patch(&idx, &cloud, 3, 5).unwrap();
        assert!(p.neighbor_indices().contains(&3));
    }

    #[test]
    fn rejects_bad_arguments() {
        let cloud = grid_cloud();
        let idx = KdIndex::build(&cloud);
        assert!(extract_patch(&idx, &cloud, 100, 9).is_err());
        assert!(extract_patch(&idx, &cloud, 0, 2).is_err());
        assert!(extract_patch(&idx, &cloud, 0, 101).is_err());
    }
}
