//! Bird's-eye-view height images.
//!
//! Each pixel stores the height of the highest point that falls into it,
//! mapped onto `[0, 1]` via `max(z_max_cell - gamma, 0) / (z_max - z_min)`.
//! Row 0 is the far edge (`y = y_max`) and column 0 is `x = x_min`.

pub mod io;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{Point3, PointCloud};

/// Geometry of a BEV raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BevGrid {
    pub width: usize,
    pub height: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Height subtracted before normalization; heights at or below map to 0.
    pub gamma: f64,
}

impl Default for BevGrid {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            x_min: -15.0,
            x_max: 15.0,
            y_min: 0.0,
            y_max: 30.0,
            z_min: -0.8,
            z_max: 1.7,
            gamma: -0.8,
        }
    }
}

impl BevGrid {
    /// Default ranges at a different pixel resolution.
    pub fn with_size(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("BEV grid must have nonzero width and height"));
        }
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && hi > lo;
        if !ok(self.x_min, self.x_max) || !ok(self.y_min, self.y_max) || !ok(self.z_min, self.z_max) {
            return Err(Error::invalid("BEV grid ranges must be finite with max > min"));
        }
        if !self.gamma.is_finite() {
            return Err(Error::invalid("BEV gamma must be finite"));
        }
        Ok(())
    }

    pub fn cell_x(&self) -> f64 {
        (self.x_max - self.x_min) / self.width as f64
    }

    pub fn cell_y(&self) -> f64 {
        (self.y_max - self.y_min) / self.height as f64
    }

    pub fn range_z(&self) -> f64 {
        self.z_max - self.z_min
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.cell_x().hypot(self.cell_y())
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (self.x_min..=self.x_max).contains(&p.x)
            && (self.y_min..=self.y_max).contains(&p.y)
            && (self.z_min..=self.z_max).contains(&p.z)
    }

    /// `(row, col)` of the cell holding `p`, ignoring z. Coordinates exactly
    /// on the upper bound fall into the last cell.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !(self.x_min..=self.x_max).contains(&x) || !(self.y_min..=self.y_max).contains(&y) {
            return None;
        }
        let col = (((x - self.x_min) / self.cell_x()).floor() as usize).min(self.width - 1);
        let from_bottom = (((y - self.y_min) / self.cell_y()).floor() as usize).min(self.height - 1);
        Some((self.height - 1 - from_bottom, col))
    }

    /// Metric `(x, y)` of a pixel center.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let x = self.x_min + (col as f64 + 0.5) * self.cell_x();
        let y = self.y_min + ((self.height - 1 - row) as f64 + 0.5) * self.cell_y();
        (x, y)
    }

    /// Crops a cloud to the grid's x/y/z box.
    pub fn crop(&self, cloud: &PointCloud) -> PointCloud {
        cloud.filtered(|p| self.contains(p))
    }
}

/// A normalized height image on a [`BevGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct BevImage {
    pub grid: BevGrid,
    /// `height × width`, every value in `[0, 1]`.
    pub pixels: Array2<f64>,
}

impl BevImage {
    pub fn zeros(grid: BevGrid) -> Self {
        let pixels = Array2::zeros((grid.height, grid.width));
        Self { grid, pixels }
    }

    /// Wraps an array, clamping values into `[0, 1]`.
    pub fn from_array(grid: BevGrid, pixels: Array2<f64>) -> Result<Self> {
        let dim = pixels.dim();
        if dim != (grid.height, grid.width) {
            return Err(Error::ShapeMismatch {
                expected: (grid.height, grid.width),
                actual: dim,
            });
        }
        Ok(Self {
            grid,
            pixels: pixels.mapv(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }),
        })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    /// Snaps every pixel onto the 8-bit lattice `k / 255`.
    pub fn quantized(&self) -> BevImage {
        BevImage {
            grid: self.grid.clone(),
            pixels: self.pixels.mapv(|v| to_u8(v) as f64 / 255.0),
        }
    }

    pub fn count_above(&self, threshold: f64) -> usize {
        self.pixels.iter().filter(|&&v| v > threshold).count()
    }
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rasterizes `cloud` into a max-height BEV image.
pub fn rasterize(cloud: &PointCloud, grid: &BevGrid) -> BevImage {
    let mut img = BevImage::zeros(grid.clone());
    let range_z = grid.range_z();
    for p in cloud.iter().filter(|p| grid.contains(p)) {
        let Some((r, c)) = grid.cell_of(p.x, p.y) else {
            continue;
        };
        let g = ((p.z - grid.gamma).max(0.0) / range_z).min(1.0);
        let px = &mut img.pixels[(r, c)];
        if g > *px {
            *px = g;
        }
    }
    img
}

/// Default emission threshold: any pixel that exports to a nonzero byte.
pub const DEFAULT_EMIT_THRESHOLD: f64 = 0.5 / 255.0;

/// Emits one point per pixel above [`DEFAULT_EMIT_THRESHOLD`].
pub fn back_project(img: &BevImage) -> PointCloud {
    back_project_with(img, DEFAULT_EMIT_THRESHOLD)
}

/// Emits one point at each pixel center whose value exceeds `threshold`,
/// at height `g · range_z + gamma`.
pub fn back_project_with(img: &BevImage, threshold: f64) -> PointCloud {
    let grid = &img.grid;
    let range_z = grid.range_z();
    img.pixels
        .indexed_iter()
        .filter(|(_, &g)| g > threshold)
        .map(|((r, c), &g)| {
            let (x, y) = grid.pixel_center(r, c);
            Point3::new(x, y, g * range_z + grid.gamma)
        })
        .collect()
}

/// Indicator images of the occupied pixels and their complement.
#[derive(Debug, Clone, PartialEq)]
pub struct Masks {
    /// 1 where the source pixel is > 0.
    pub target: Array2<f64>,
    /// 1 where the source pixel is 0.
    pub blank: Array2<f64>,
}

impl Masks {
    pub fn target_count(&self) -> usize {
        self.target.iter().filter(|&&m| m > 0.0).count()
    }

    pub fn blank_count(&self) -> usize {
        self.blank.iter().filter(|&&m| m > 0.0).count()
    }
}

pub fn mask_of(pixels: &Array2<f64>) -> Masks {
    let target = pixels.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let blank = target.mapv(|m| 1.0 - m);
    Masks { target, blank }
}
