use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Dims, KdTree};
use crate::pointcloud::{Point3, PointCloud, RigidTransform};

/// Point-to-point ICP settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iters: usize,
    /// Stop once the residual changes by less than this (m).
    pub tol: f64,
    /// Initial correspondence gate (m).
    pub gate: f64,
    /// Gate multiplier applied after every iteration.
    pub gate_decay: f64,
    pub gate_floor: f64,
    /// Voxel leaf for downsampling both clouds; 0 disables it.
    pub leaf: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iters: 60,
            tol: 1e-7,
            gate: 1.0,
            gate_decay: 0.9,
            gate_floor: 0.2,
            leaf: 0.2,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("icp max_iters must be positive"));
        }
        if !(self.gate > 0.0 && self.gate_floor > 0.0 && self.gate_floor <= self.gate) {
            return Err(Error::invalid("icp gates must satisfy 0 < gate_floor <= gate"));
        }
        if !(self.gate_decay > 0.0 && self.gate_decay <= 1.0) {
            return Err(Error::invalid("icp gate_decay must lie in (0, 1]"));
        }
        if !(self.tol >= 0.0 && self.leaf >= 0.0) {
            return Err(Error::invalid("icp tol and leaf must be non-negative"));
        }
        Ok(())
    }
}

/// Final transform plus the residual trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// `sqrt(mean_p min(d(p)², g²))` over all source points, where `d` is
    /// the nearest-neighbour distance under the current estimate and `g` the
    /// current gate. Entry `k` is measured before the `k`-th update; the
    /// last entry after the final update. Never increases.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Replaces the points of every occupied `leaf`-sized voxel by their
/// centroid. Output order follows the voxel index.
pub fn voxel_downsample(cloud: &PointCloud, leaf: f64) -> PointCloud {
    if leaf <= 0.0 {
        return cloud.clone();
    }
    let mut cells: BTreeMap<(i64, i64, i64), (Vector3<f64>, usize)> = BTreeMap::new();
    for p in cloud.iter().filter(|p| p.is_finite()) {
        let key = (
            (p.x / leaf).floor() as i64,
            (p.y / leaf).floor() as i64,
            (p.z / leaf).floor() as i64,
        );
        let e = cells.entry(key).or_insert((Vector3::zeros(), 0));
        e.0 += p.coords();
        e.1 += 1;
    }
    let points = cells
        .values()
        .map(|(sum, n)| {
            let c = sum / *n as f64;
            Point3::new(c.x, c.y, c.z)
        })
        .collect();
    PointCloud::with_frame(points, cloud.frame_id.clone())
}

fn covariance_rank_ok(pts: &[Vector3<f64>]) -> bool {
    if pts.len() < 3 {
        return false;
    }
    let mean = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let cov = pts.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    });
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev[0] > 0.0 && ev[1] > 1e-12 * ev[0]
}

/// Least-squares proper rotation and translation taking `src[k]` onto
/// `dst[k]`.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<RigidTransform> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::DegenerateGeometry(format!("{} correspondences", src.len().min(dst.len()))));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let h = src.iter().zip(dst).fold(Matrix3::zeros(), |acc, (s, d)| acc + (s - cs) * (d - cd).transpose());
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0].is_nan() || sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::DegenerateGeometry("rank-deficient cross-covariance".into()));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = cd - r * cs;
    RigidTransform::new(r, t).ok_or_else(|| Error::DegenerateGeometry("SVD produced an improper rotation".into()))
}

fn xyz(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Aligns `source` onto `target` starting from `init`.
pub fn icp(source: &PointCloud, target: &PointCloud, init: &RigidTransform, cfg: &IcpConfig) -> Result<IcpResult> {
    cfg.validate()?;
    let src: Vec<Vector3<f64>> = voxel_downsample(source, cfg.leaf).iter().map(|p| p.coords()).collect();
    let dst: Vec<Vector3<f64>> = voxel_downsample(target, cfg.leaf).iter().map(|p| p.coords()).collect();
    if !covariance_rank_ok(&src) || !covariance_rank_ok(&dst) {
        return Err(Error::DegenerateGeometry(
            "ICP needs at least three non-collinear points in each cloud".into(),
        ));
    }
    let tree = KdTree::new(dst.iter().map(xyz).collect(), Dims::Three);

    let mut est = *init;
    let mut gate = cfg.gate;
    let mut residuals = Vec::with_capacity(cfg.max_iters + 1);
    let mut converged = false;
    let mut iterations = 0;

    let truncated = |est: &RigidTransform, gate: f64| -> (f64, Vec<(usize, usize)>) {
        let g2 = gate * gate;
        let mut cost = 0.0;
        let mut pairs = Vec::new();
        for (k, p) in src.iter().enumerate() {
            let q = est.rotation * p + est.translation;
            let (j, d2) = tree.nearest(&xyz(&q)).expect("target is nonempty");
            if d2 < g2 {
                cost += d2;
                pairs.push((k, j));
            } else {
                cost += g2;
            }
        }
        ((cost / src.len() as f64).sqrt(), pairs)
    };

    let (mut res, mut pairs) = truncated(&est, gate);
    residuals.push(res);
    while iterations < cfg.max_iters {
        iterations += 1;
        if pairs.len() < 3 {
            break;
        }
        let (a, b): (Vec<_>, Vec<_>) = pairs.iter().map(|&(k, j)| (src[k], dst[j])).unzip();
        let candidate = match kabsch(&a, &b) {
            Ok(t) => t,
            // Too few spread-out inliers to constrain another update.
            Err(Error::DegenerateGeometry(_)) if iterations > 1 => break,
            Err(e) => return Err(e),
        };
        est = candidate;
        gate = (gate * cfg.gate_decay).max(cfg.gate_floor);
        let (next, next_pairs) = truncated(&est, gate);
        residuals.push(next);
        let change = res - next;
        res = next;
        pairs = next_pairs;
        if change < cfg.tol && gate <= cfg.gate_floor {
            converged = true;
            break;
        }
    }
    Ok(IcpResult {
        transform: est,
        residuals,
        iterations,
        converged,
    })
}
