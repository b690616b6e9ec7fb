//! Single-plane RANSAC ground removal.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Point3, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundCfg {
    pub iterations: usize,
    /// Point-to-plane distance (m) counted as a RANSAC inlier.
    pub inlier_threshold: f64,
    /// Points must sit strictly more than this (m) above the plane to survive.
    pub height_margin: f64,
    /// Minimum inlier fraction for a plane to be accepted.
    pub min_inliers: f64,
    /// Candidate planes whose normal leans further than this from +z are ignored.
    pub max_tilt_deg: f64,
    /// Return the input unchanged instead of failing when no plane is found.
    pub passthrough_on_failure: bool,
    pub seed: u64,
}

impl Default for GroundCfg {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_threshold: 0.1,
            height_margin: 0.2,
            min_inliers: 0.1,
            max_tilt_deg: 20.0,
            passthrough_on_failure: false,
            seed: 0,
        }
    }
}

/// Plane `normal · p + offset = 0` with `normal.z > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub inlier_fraction: f64,
}

impl GroundPlane {
    /// Signed height of `p` above the plane.
    pub fn height(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.coords()) + self.offset
    }
}

fn upward(n: Vector3<f64>) -> Vector3<f64> {
    if n.z < 0.0 {
        -n
    } else {
        n
    }
}

pub fn fit_ground_plane(cloud: &PointCloud, cfg: &GroundCfg) -> Result<GroundPlane> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    let cos_tilt = cfg.max_tilt_deg.to_radians().cos();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pts: Vec<Vector3<f64>> = cloud.iter().map(Point3::coords).collect();

    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    if n >= 3 {
        for _ in 0..cfg.iterations {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            let k = rng.random_range(0..n);
            if i == j || j == k || i == k {
                continue;
            }
            let cross = (pts[j] - pts[i]).cross(&(pts[k] - pts[i]));
            let norm = cross.norm();
            if norm < 1e-9 {
                continue;
            }
            let normal = upward(cross / norm);
            if normal.z < cos_tilt {
                continue;
            }
            let offset = -normal.dot(&pts[i]);
            let count = pts
                .iter()
                .filter(|p| (normal.dot(p) + offset).abs() <= cfg.inlier_threshold)
                .count();
            if best.is_none_or(|(c, _, _)| count > c) {
                best = Some((count, normal, offset));
            }
        }
    }

    let fraction = best.map_or(0.0, |(c, _, _)| c as f64 / n as f64);
    let (_, normal, offset) = match best {
        Some(b) if fraction >= cfg.min_inliers => b,
        _ => {
            return Err(Error::PlaneFitFailure {
                fraction,
                required: cfg.min_inliers,
            })
        }
    };

    // Least-squares refit on the consensus set.
    let inliers: Vec<&Vector3<f64>> = pts
        .iter()
        .filter(|p| (normal.dot(p) + offset).abs() <= cfg.inlier_threshold)
        .collect();
    let centroid = inliers.iter().fold(Vector3::zeros(), |acc, p| acc + *p) / inliers.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in &inliers {
        let d = *p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (min_idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let refined = upward(eig.eigenvectors.column(min_idx).into_owned().normalize());
    let (normal, offset) = if refined.z >= cos_tilt {
        (refined, -refined.dot(&centroid))
    } else {
        (normal, offset)
    };

    Ok(GroundPlane {
        normal,
        offset,
        inlier_fraction: fraction,
    })
}

/// Removes every point that is not more than `height_margin` above the
/// fitted ground plane.
pub fn remove_ground(cloud: &PointCloud, cfg: &GroundCfg) -> Result<PointCloud> {
    let plane = match fit_ground_plane(cloud, cfg) {
        Ok(p) => p,
        Err(Error::PlaneFitFailure { .. }) if cfg.passthrough_on_failure => return Ok(cloud.clone()),
        Err(e) => return Err(e),
    };
    Ok(cloud.filtered(|p| plane.height(p) > cfg.height_margin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{transform, RigidTransform};
    use proptest::prelude::*;

    fn plane_grid(z: f64) -> Vec<Point3> {
        let mut v = Vec::new();
        for i in 0..60 {
            for j in 0..60 {
                v.push(Point3::new(-6.0 + 0.2 * i as f64, 0.2 * j as f64, z));
            }
        }
        v
    }

    fn box_points() -> Vec<Point3> {
        let mut v = Vec::new();
        for i in 0..10 {
            for k in 0..11 {
                let s = 0.1 * i as f64;
                let z = 0.5 + 0.1 * k as f64;
                v.push(Point3::new(2.0 + s, 5.0, z));
                v.push(Point3::new(2.0 + s, 6.0, z));
                v.push(Point3::new(2.0, 5.0 + s, z));
                v.push(Point3::new(3.0, 5.0 + s, z));
            }
        }
        v
    }

    #[test]
    fn flat_plane_keeps_only_box() {
        let boxes = box_points();
        let mut pts = plane_grid(0.0);
        pts.extend(&boxes);
        let out = remove_ground(&PointCloud::new(pts), &GroundCfg::default()).unwrap();
        assert_eq!(out.points, boxes);
    }

    #[test]
    fn tilted_plane_removes_ground_keeps_box() {
        let plane = plane_grid(0.0);
        let boxes = box_points();
        let tilt = RigidTransform::from_euler_deg(0.0, 5.0, 0.0, Vector3::zeros());
        let plane_t = transform(&PointCloud::new(plane.clone()), &tilt);
        let box_t = transform(&PointCloud::new(boxes.clone()), &tilt);
        let mut pts = plane_t.points.clone();
        pts.extend(&box_t.points);
        let out = remove_ground(&PointCloud::new(pts), &GroundCfg::default()).unwrap();
        for b in &box_t.points {
            assert!(out.points.contains(b));
        }
        let plane_left = out.iter().filter(|p| plane_t.points.contains(p)).count();
        assert!(plane_left as f64 <= 0.01 * plane.len() as f64, "{plane_left} plane points left");
    }

    fn wall() -> PointCloud {
        let mut v = Vec::new();
        for i in 0..40 {
            for k in 0..20 {
                v.push(Point3::new(0.1 * i as f64, 4.0, 0.1 * k as f64));
            }
        }
        PointCloud::new(v)
    }

    #[test]
    fn no_ground_passthrough_leaves_cloud_unchanged() {
        let cfg = GroundCfg {
            passthrough_on_failure: true,
            ..GroundCfg::default()
        };
        let cloud = wall();
        assert_eq!(remove_ground(&cloud, &cfg).unwrap(), cloud);
    }

    #[test]
    fn no_ground_without_passthrough_fails() {
        let err = remove_ground(&wall(), &GroundCfg::default()).unwrap_err();
        assert!(matches!(err, Error::PlaneFitFailure { .. }));
    }

    #[test]
    fn empty_cloud_is_an_error() {
        assert!(matches!(
            remove_ground(&PointCloud::default(), &GroundCfg::default()),
            Err(Error::EmptyCloud)
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn output_is_subset_of_input(seed in any::<u64>(), lift in -1.0f64..1.0) {
            let mut pts = plane_grid(lift);
            pts.extend(box_points());
            let cloud = PointCloud::new(pts);
            let cfg = GroundCfg { seed, ..GroundCfg::default() };
            let out = remove_ground(&cloud, &cfg).unwrap();
            prop_assert!(out.len() <= cloud.len());
            for p in &out.points {
                prop_assert!(cloud.points.contains(p));
            }
            // Everything well above the margin survives.
            for p in cloud.iter().filter(|p| p.z - lift > 0.45) {
                prop_assert!(out.points.contains(p));
            }
        }
    }
}
