//! Point-cloud similarity: Chamfer distance (CD), modified Hausdorff
//! distance (MHD) and their LiDAR-to-candidate unidirectional variants
//! (UCD, UMHD).

mod kdtree;

pub use kdtree::KdTree;

use std::fmt;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use kdtree::dist_sq;

/// Which coordinates enter the distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Dims {
    /// `(x, y)` only.
    #[serde(rename = "2d")]
    Two,
    /// `(x, y, z)`.
    #[serde(rename = "3d")]
    Three,
}

impl Dims {
    pub fn count(self) -> usize {
        match self {
            Dims::Two => 2,
            Dims::Three => 3,
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dims::Two => "2d",
            Dims::Three => "3d",
        })
    }
}

fn coords(cloud: &PointCloud, dims: Dims) -> Vec<[f64; 3]> {
    cloud
        .iter()
        .map(|p| match dims {
            Dims::Two => [p.x, p.y, 0.0],
            Dims::Three => [p.x, p.y, p.z],
        })
        .collect()
}

/// Distance from every point of `a` to its nearest neighbour in `b`,
/// answered through a k-d tree.
pub fn nn_dists(a: &PointCloud, b: &PointCloud, dims: Dims) -> Result<Vec<f64>> {
    if b.is_empty() {
        return Err(Error::EmptyReference);
    }
    let tree = KdTree::new(coords(b, dims), dims);
    Ok(coords(a, dims)
        .iter()
        .map(|q| tree.nearest_sq(q).expect("nonempty tree").sqrt())
        .collect())
}

/// Exhaustive reference for [`nn_dists`].
pub fn nn_dists_brute(a: &PointCloud, b: &PointCloud, dims: Dims) -> Result<Vec<f64>> {
    if b.is_empty() {
        return Err(Error::EmptyReference);
    }
    let bs = coords(b, dims);
    let k = dims.count();
    Ok(coords(a, dims)
        .iter()
        .map(|q| bs.iter().map(|p| dist_sq(q, p, k)).fold(f64::INFINITY, f64::min).sqrt())
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Median; the mean of the middle two for even lengths.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn directed(a: &PointCloud, b: &PointCloud, dims: Dims) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    nn_dists(a, b, dims)
}

/// Mean of the two directed mean nearest-neighbour distances.
pub fn chamfer(a: &PointCloud, b: &PointCloud, dims: Dims) -> Result<f64> {
    Ok((mean(&directed(a, b, dims)?) + mean(&directed(b, a, dims)?)) / 2.0)
}

/// Mean of the two directed median nearest-neighbour distances.
pub fn mhd(a: &PointCloud, b: &PointCloud, dims: Dims) -> Result<f64> {
    Ok((median(&directed(a, b, dims)?) + median(&directed(b, a, dims)?)) / 2.0)
}

/// Mean distance from each LiDAR point to the candidate cloud.
pub fn ucd(lidar: &PointCloud, candidate: &PointCloud, dims: Dims) -> Result<f64> {
    Ok(mean(&directed(lidar, candidate, dims)?))
}

/// Median distance from each LiDAR point to the candidate cloud.
pub fn umhd(lidar: &PointCloud, candidate: &PointCloud, dims: Dims) -> Result<f64> {
    Ok(median(&directed(lidar, candidate, dims)?))
}

/// The four quality metrics for one (LiDAR, candidate) pair, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub cd: f64,
    pub mhd: f64,
    pub ucd: f64,
    pub umhd: f64,
    pub dims: Dims,
}

impl MetricReport {
    pub fn compute(lidar: &PointCloud, candidate: &PointCloud, dims: Dims) -> Result<Self> {
        let to_cand = directed(lidar, candidate, dims)?;
        let to_lidar = directed(candidate, lidar, dims)?;
        Ok(Self {
            cd: (mean(&to_cand) + mean(&to_lidar)) / 2.0,
            mhd: (median(&to_cand) + median(&to_lidar)) / 2.0,
            ucd: mean(&to_cand),
            umhd: median(&to_cand),
            dims,
        })
    }

    /// Column-wise mean of several reports (all with the same `dims`).
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        let first = reports.first()?;
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricReport {
            cd: avg(|r| r.cd),
            mhd: avg(|r| r.mhd),
            ucd: avg(|r| r.ucd),
            umhd: avg(|r| r.umhd),
            dims: first.dims,
        })
    }
}

pub const CSV_HEADER: &str = "name,dims,cd,mhd,ucd,umhd";

/// CSV with one labelled row per report.
pub fn to_csv(rows: &[(String, MetricReport)]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for (name, r) in rows {
        s.push_str(&format!("{name},{},{},{},{},{}\n", r.dims, r.cd, r.mhd, r.ucd, r.umhd));
    }
    s
}

/// Fixed-width table in the column order CD, MHD, UCD, UMHD.
pub fn to_table(rows: &[(String, MetricReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(4).max(4);
    let mut s = format!(
        "{:<width$} | {:>4} | {:>8} {:>8} | {:>8} {:>8}\n",
        "case", "dims", "CD", "MHD", "UCD", "UMHD"
    );
    s.push_str(&format!("{}\n", "-".repeat(width + 46)));
    for (name, r) in rows {
        s.push_str(&format!(
            "{:<width$} | {:>4} | {:>8.4} {:>8.4} | {:>8.4} {:>8.4}\n",
            name,
            r.dims.to_string(),
            r.cd,
            r.mhd,
            r.ucd,
            r.umhd
        ));
    }
    s
}
