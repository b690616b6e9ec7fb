//! Rigid registration benchmark: point-to-point ICP, error metrics and
//! registration recall.

mod icp;

pub use icp::{icp, kabsch, voxel_downsample, IcpConfig, IcpResult};

use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{PointCloud, RigidTransform};

/// Relative translation error `‖t_est − t_gt‖` in meters.
pub fn rte(est: &RigidTransform, gt: &RigidTransform) -> f64 {
    (est.translation - gt.translation).norm()
}

/// Relative rotation error: the geodesic angle between the two rotations,
/// in degrees.
pub fn rre(est: &RigidTransform, gt: &RigidTransform) -> f64 {
    let c = (((est.rotation.transpose() * gt.rotation).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

/// Success thresholds; both comparisons are strict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecallThresholds {
    pub rte_m: f64,
    pub rre_deg: f64,
}

impl Default for RecallThresholds {
    fn default() -> Self {
        Self {
            rte_m: 0.5,
            rre_deg: 5.0,
        }
    }
}

impl RecallThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.rte_m > 0.0 && self.rre_deg > 0.0) {
            return Err(Error::invalid("recall thresholds must be positive"));
        }
        Ok(())
    }
}

/// Outcome of registering frame `source` onto frame `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub source: usize,
    pub target: usize,
    pub estimated: RigidTransform,
    pub ground_truth: RigidTransform,
    pub rte: f64,
    pub rre: f64,
    pub success: bool,
}

impl RegistrationResult {
    pub fn new(
        source: usize,
        target: usize,
        estimated: RigidTransform,
        ground_truth: RigidTransform,
        thresholds: &RecallThresholds,
    ) -> Self {
        let rte = rte(&estimated, &ground_truth);
        let rre = rre(&estimated, &ground_truth);
        Self {
            source,
            target,
            estimated,
            ground_truth,
            rte,
            rre,
            success: rte < thresholds.rte_m && rre < thresholds.rre_deg,
        }
    }
}

/// Registration recall with mean errors over the successful pairs (`None`
/// when there are none) and over all pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallSummary {
    pub total: usize,
    pub successes: usize,
    pub rr: f64,
    pub rte_succ: Option<f64>,
    pub rte_all: f64,
    pub rre_succ: Option<f64>,
    pub rre_all: f64,
}

pub fn registration_recall(results: &[RegistrationResult]) -> Result<RecallSummary> {
    if results.is_empty() {
        return Err(Error::invalid("registration recall needs at least one result"));
    }
    let n = results.len() as f64;
    let succ: Vec<_> = results.iter().filter(|r| r.success).collect();
    let mean_succ = |f: fn(&RegistrationResult) -> f64| {
        (!succ.is_empty()).then(|| succ.iter().map(|r| f(r)).sum::<f64>() / succ.len() as f64)
    };
    Ok(RecallSummary {
        total: results.len(),
        successes: succ.len(),
        rr: succ.len() as f64 / n,
        rte_succ: mean_succ(|r| r.rte),
        rte_all: results.iter().map(|r| r.rte).sum::<f64>() / n,
        rre_succ: mean_succ(|r| r.rre),
        rre_all: results.iter().map(|r| r.rre).sum::<f64>() / n,
    })
}

/// Pair selection bounds on the distance between frame positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairSelection {
    /// Pairs must be strictly farther apart than this.
    pub min_distance: f64,
    /// Pairs must be at most this far apart.
    pub max_distance: f64,
}

impl Default for PairSelection {
    fn default() -> Self {
        Self {
            min_distance: 1.0,
            max_distance: 10.0,
        }
    }
}

/// All `(i, j)` with `i < j` whose pose translations are more than
/// `min_distance` and at most `max_distance` apart.
pub fn select_pairs(poses: &[RigidTransform], sel: &PairSelection) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..poses.len() {
        for j in i + 1..poses.len() {
            let d = (poses[i].translation - poses[j].translation).norm();
            if d > sel.min_distance && d <= sel.max_distance {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Transform taking frame `j` coordinates into frame `i`, given poses that
/// map each frame into a common world frame.
pub fn relative_pose(pose_i: &RigidTransform, pose_j: &RigidTransform) -> RigidTransform {
    pose_i.inverse().compose(pose_j)
}

/// Odometry-style initial guess: `gt` followed by a Gaussian planar offset
/// (std `trans_std` per horizontal axis) and a Gaussian yaw error.
pub fn perturb<R: Rng + ?Sized>(gt: &RigidTransform, trans_std: f64, yaw_std_deg: f64, rng: &mut R) -> RigidTransform {
    let dx: f64 = rng.sample(StandardNormal);
    let dy: f64 = rng.sample(StandardNormal);
    let dyaw: f64 = rng.sample(StandardNormal);
    let delta = RigidTransform::from_yaw(yaw_std_deg * dyaw, Vector3::new(trans_std * dx, trans_std * dy, 0.0));
    delta.compose(gt)
}

/// One perturbed initial guess per pair, drawn in pair order.
pub fn initial_guesses<R: Rng + ?Sized>(
    poses: &[RigidTransform],
    pairs: &[(usize, usize)],
    trans_std: f64,
    yaw_std_deg: f64,
    rng: &mut R,
) -> Vec<RigidTransform> {
    pairs
        .iter()
        .map(|&(i, j)| perturb(&relative_pose(&poses[i], &poses[j]), trans_std, yaw_std_deg, rng))
        .collect()
}

/// Registers `clouds[j]` onto `clouds[i]` for every pair `(i, j)`, starting
/// from the matching entry of `inits`. A pair whose clouds are too
/// degenerate for ICP counts as a failure that keeps its initial guess.
pub fn register_pairs(
    clouds: &[PointCloud],
    poses: &[RigidTransform],
    pairs: &[(usize, usize)],
    inits: &[RigidTransform],
    cfg: &IcpConfig,
    thresholds: &RecallThresholds,
) -> Result<Vec<RegistrationResult>> {
    if clouds.len() != poses.len() {
        return Err(Error::invalid(format!("{} clouds but {} poses", clouds.len(), poses.len())));
    }
    if inits.len() != pairs.len() {
        return Err(Error::invalid(format!("{} initial guesses for {} pairs", inits.len(), pairs.len())));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for (&(i, j), init) in pairs.iter().zip(inits) {
        let gt = relative_pose(&poses[i], &poses[j]);
        let (est, ok) = match icp(&clouds[j], &clouds[i], init, cfg) {
            Ok(r) => (r.transform, true),
            Err(Error::DegenerateGeometry(_)) => (*init, false),
            Err(e) => return Err(e),
        };
        let mut r = RegistrationResult::new(j, i, est, gt, thresholds);
        r.success &= ok;
        out.push(r);
    }
    Ok(out)
}

pub const RESULTS_HEADER: &str = "source,target,rte_m,rre_deg,success";

pub fn results_to_csv(results: &[RegistrationResult]) -> String {
    let mut s = format!("{RESULTS_HEADER}\n");
    for r in results {
        let _ = writeln!(s, "{},{},{},{},{}", r.source, r.target, r.rte, r.rre, u8::from(r.success));
    }
    s
}

pub fn pairs_to_csv(poses: &[RigidTransform], pairs: &[(usize, usize)]) -> String {
    let mut s = String::from("i,j,distance_m\n");
    for &(i, j) in pairs {
        let d = (poses[i].translation - poses[j].translation).norm();
        let _ = writeln!(s, "{i},{j},{d}");
    }
    s
}

/// Table with columns RR, RTE (succ./all) and RRE (succ./all).
pub fn summary_table(rows: &[(String, RecallSummary)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
    let mut s = format!("{:<width$} | {:>7} | {:>17} | {:>17}\n", "method", "RR(%)", "RTE(m) succ./all", "RRE(deg) succ./all");
    s.push_str(&format!("{}\n", "-".repeat(width + 51)));
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<width$} | {:>7.2} | {:>17} | {:>17}",
            name,
            100.0 * r.rr,
            format!("{}/{:.3}", opt(r.rte_succ), r.rte_all),
            format!("{}/{:.3}", opt(r.rre_succ), r.rre_all),
        );
    }
    s
}

/// Summary rows as CSV.
pub fn summary_to_csv(rows: &[(String, RecallSummary)]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    let mut s = String::from("method,pairs,successes,rr,rte_succ_m,rte_all_m,rre_succ_deg,rre_all_deg\n");
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{},{}",
            r.total,
            r.successes,
            r.rr,
            opt(r.rte_succ),
            r.rte_all,
            opt(r.rre_succ),
            r.rre_all
        );
    }
    s
}
