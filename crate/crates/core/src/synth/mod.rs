//! Synthetic paired scenes: a dense, noiseless "LiDAR" surface sampling of
//! random boxes, walls and cylinders, and a sparse, jittered "radar" copy
//! with uniformly scattered ghost detections.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{transform, Point3, PointCloud, RigidTransform};

/// Parameters of a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub ground_z: f64,
    pub include_ground: bool,
    /// Lattice spacing of ground samples (m).
    pub ground_spacing: f64,
    /// Lattice spacing of object surface samples (m).
    pub lattice: f64,
    pub boxes: usize,
    pub walls: usize,
    pub cylinders: usize,
    /// Scale applied to every object dimension.
    pub object_scale: f64,
    /// Probability that a LiDAR point survives into the radar cloud.
    pub p_keep: f64,
    pub ghosts: usize,
    /// Ghost heights are uniform in `[ground_z, ground_z + ghost_spread]`.
    pub ghost_spread: f64,
    /// Standard deviation of the per-axis radar jitter (m).
    pub noise_std: f64,
    /// Yaw of each trajectory frame is uniform in `±max_yaw_deg`.
    pub max_yaw_deg: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            x_min: -15.0,
            x_max: 15.0,
            y_min: 0.0,
            y_max: 30.0,
            ground_z: -0.75,
            include_ground: true,
            ground_spacing: 0.25,
            lattice: 0.05,
            boxes: 6,
            walls: 2,
            cylinders: 4,
            object_scale: 1.0,
            p_keep: 0.05,
            ghosts: 30,
            ghost_spread: 2.0,
            noise_std: 0.05,
            max_yaw_deg: 2.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.x_min,
            self.x_max,
            self.y_min,
            self.y_max,
            self.ground_z,
            self.ground_spacing,
            self.lattice,
            self.object_scale,
            self.p_keep,
            self.ghost_spread,
            self.noise_std,
            self.max_yaw_deg,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("scene spec values must be finite"));
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(Error::invalid("scene extent must satisfy min < max"));
        }
        if !(self.p_keep > 0.0 && self.p_keep <= 1.0) {
            return Err(Error::invalid(format!("p_keep = {} outside (0, 1]", self.p_keep)));
        }
        if self.lattice <= 0.0 || self.ground_spacing <= 0.0 || self.object_scale <= 0.0 {
            return Err(Error::invalid("lattice, ground_spacing and object_scale must be positive"));
        }
        if self.noise_std < 0.0 || self.ghost_spread < 0.0 || self.max_yaw_deg < 0.0 {
            return Err(Error::invalid("noise_std, ghost_spread and max_yaw_deg must be non-negative"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::format("scene spec", e.to_string()))
    }

    fn contains_xy(&self, p: &Point3) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

/// One scene object, in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    /// Upright box; `yaw_deg` rotates it about its vertical axis.
    Box {
        center: [f64; 2],
        half_size: [f64; 2],
        height: f64,
        yaw_deg: f64,
    },
    /// Thin vertical plane between two ground points.
    Wall { start: [f64; 2], end: [f64; 2], height: f64 },
    Cylinder { center: [f64; 2], radius: f64, height: f64 },
}

/// Ground height and objects of a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub ground_z: f64,
    pub include_ground: bool,
    pub shapes: Vec<Shape>,
}

impl Layout {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("layout serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::format("scene layout", e.to_string()))
    }
}

/// A generated LiDAR/radar pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub lidar: PointCloud,
    pub radar: PointCloud,
    pub layout: Layout,
    /// Number of radar points derived from LiDAR points; the rest are ghosts.
    pub radar_real: usize,
}

/// Evenly spaced parameters `(k + 0.5)·len/n` with spacing at most `step`.
fn lattice(len: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = ((len / step).ceil() as usize).max(1);
    (0..n).map(move |k| (k as f64 + 0.5) * len / n as f64)
}

fn random_layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Layout {
    let s = spec.object_scale;
    let xy = |rng: &mut ChaCha8Rng| [rng.random_range(spec.x_min..=spec.x_max), rng.random_range(spec.y_min..=spec.y_max)];
    let mut shapes = Vec::new();
    for _ in 0..spec.boxes {
        shapes.push(Shape::Box {
            center: xy(rng),
            half_size: [s * rng.random_range(0.3..1.5), s * rng.random_range(0.3..1.5)],
            height: s * rng.random_range(0.5..2.0),
            yaw_deg: rng.random_range(0.0..180.0),
        });
    }
    for _ in 0..spec.walls {
        let start = xy(rng);
        let heading = rng.random_range(0.0..PI);
        let len = s * rng.random_range(2.0..8.0);
        shapes.push(Shape::Wall {
            start,
            end: [start[0] + len * heading.cos(), start[1] + len * heading.sin()],
            height: s * rng.random_range(1.0..2.5),
        });
    }
    for _ in 0..spec.cylinders {
        shapes.push(Shape::Cylinder {
            center: xy(rng),
            radius: s * rng.random_range(0.15..0.6),
            height: s * rng.random_range(0.5..2.0),
        });
    }
    Layout {
        ground_z: spec.ground_z,
        include_ground: spec.include_ground,
        shapes,
    }
}

/// Samples a vertical rectangle from `a` to `b` (ground points) up to `height`.
fn vertical_face(a: [f64; 2], b: [f64; 2], z0: f64, height: f64, step: f64, out: &mut Vec<Point3>) {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    if len == 0.0 {
        return;
    }
    for u in lattice(len, step) {
        let f = u / len;
        let (x, y) = (a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]));
        for v in lattice(height, step) {
            out.push(Point3::new(x, y, z0 + v));
        }
    }
}

fn sample_shape(shape: &Shape, z0: f64, step: f64, out: &mut Vec<Point3>) {
    match *shape {
        Shape::Box {
            center,
            half_size,
            height,
            yaw_deg,
        } => {
            let (s, c) = yaw_deg.to_radians().sin_cos();
            let corner = |u: f64, v: f64| [center[0] + c * u - s * v, center[1] + s * u + c * v];
            let [hx, hy] = half_size;
            let corners = [corner(-hx, -hy), corner(hx, -hy), corner(hx, hy), corner(-hx, hy)];
            for k in 0..4 {
                vertical_face(corners[k], corners[(k + 1) % 4], z0, height, step, out);
            }
            for u in lattice(2.0 * hx, step) {
                for v in lattice(2.0 * hy, step) {
                    let [x, y] = corner(u - hx, v - hy);
                    out.push(Point3::new(x, y, z0 + height));
                }
            }
        }
        Shape::Wall { start, end, height } => vertical_face(start, end, z0, height, step, out),
        Shape::Cylinder { center, radius, height } => {
            for a in lattice(2.0 * PI * radius, step) {
                let phi = a / radius;
                let (x, y) = (center[0] + radius * phi.cos(), center[1] + radius * phi.sin());
                for v in lattice(height, step) {
                    out.push(Point3::new(x, y, z0 + v));
                }
            }
            for r in lattice(radius, step) {
                for a in lattice(2.0 * PI * r, step) {
                    let phi = a / r;
                    out.push(Point3::new(center[0] + r * phi.cos(), center[1] + r * phi.sin(), z0 + height));
                }
            }
        }
    }
}

/// Dense noiseless surface samples of `layout`, cropped to the spec extent.
pub fn sample_surfaces(layout: &Layout, spec: &SceneSpec) -> PointCloud {
    let mut pts = Vec::new();
    if layout.include_ground {
        for u in lattice(spec.x_max - spec.x_min, spec.ground_spacing) {
            for v in lattice(spec.y_max - spec.y_min, spec.ground_spacing) {
                pts.push(Point3::new(spec.x_min + u, spec.y_min + v, layout.ground_z));
            }
        }
    }
    for shape in &layout.shapes {
        sample_shape(shape, layout.ground_z, spec.lattice, &mut pts);
    }
    pts.retain(|p| spec.contains_xy(p));
    PointCloud::with_frame(pts, "lidar")
}

/// Radar view of `lidar`: Bernoulli(`p_keep`) subsample with Gaussian jitter
/// plus uniformly placed ghosts. Returns the cloud and its real-point count.
fn radarize(lidar: &PointCloud, spec: &SceneSpec, rng: &mut ChaCha8Rng) -> (PointCloud, usize) {
    let mut pts = Vec::new();
    for p in lidar.iter() {
        if rng.random::<f64>() < spec.p_keep {
            let mut jitter = || spec.noise_std * rng.sample::<f64, _>(StandardNormal);
            let (dx, dy, dz) = (jitter(), jitter(), jitter());
            pts.push(Point3 {
                x: p.x + dx,
                y: p.y + dy,
                z: p.z + dz,
                intensity: p.intensity,
            });
        }
    }
    let real = pts.len();
    for _ in 0..spec.ghosts {
        pts.push(Point3::new(
            rng.random_range(spec.x_min..=spec.x_max),
            rng.random_range(spec.y_min..=spec.y_max),
            spec.ground_z + spec.ghost_spread * rng.random::<f64>(),
        ));
    }
    (PointCloud::with_frame(pts, "radar"), real)
}

/// Generates one scene; identical specs give identical output.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layout = random_layout(spec, &mut rng);
    let lidar = sample_surfaces(&layout, spec);
    let (radar, radar_real) = radarize(&lidar, spec, &mut rng);
    Ok(Scene {
        lidar,
        radar,
        layout,
        radar_real,
    })
}

/// One frame of a trajectory; clouds are in the sensor frame and `pose`
/// maps sensor coordinates to world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub lidar: PointCloud,
    pub radar: PointCloud,
    pub pose: RigidTransform,
}

/// A static world observed from a sequence of poses.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<Frame>,
    pub layout: Layout,
    /// World-frame extent the layout was generated in.
    pub world: SceneSpec,
}

/// Drives a sensor along +y in steps of `step` meters with small random
/// yaw. Each frame sees the spec extent in its own coordinates. Frame 0
/// sits at the world origin.
pub fn generate_trajectory(spec: &SceneSpec, n_frames: usize, step: f64) -> Result<Trajectory> {
    spec.validate()?;
    if n_frames == 0 {
        return Err(Error::invalid("trajectory needs at least one frame"));
    }
    if !step.is_finite() {
        return Err(Error::invalid("trajectory step must be finite"));
    }
    let travel = step * (n_frames - 1) as f64;
    let reach = [spec.x_min, spec.x_max, spec.y_min, spec.y_max]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    // World extent covers every view even after yaw; object counts scale
    // with area so the density matches a single scene.
    let margin = reach * spec.max_yaw_deg.min(90.0).to_radians().sin();
    let mut world = SceneSpec {
        x_min: spec.x_min - margin,
        x_max: spec.x_max + margin,
        y_min: spec.y_min + travel.min(0.0) - margin,
        y_max: spec.y_max + travel.max(0.0) + margin,
        ..spec.clone()
    };
    let area = |s: &SceneSpec| (s.x_max - s.x_min) * (s.y_max - s.y_min);
    let ratio = area(&world) / area(spec);
    let scaled = |n: usize| (n as f64 * ratio).round() as usize;
    world.boxes = scaled(spec.boxes);
    world.walls = scaled(spec.walls);
    world.cylinders = scaled(spec.cylinders);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layout = random_layout(&world, &mut rng);
    let surfaces = sample_surfaces(&layout, &world);

    let mut frames = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let pose = if k == 0 {
            RigidTransform::identity()
        } else {
            let yaw = rng.random_range(-spec.max_yaw_deg..=spec.max_yaw_deg);
            RigidTransform::from_yaw(yaw, Vector3::new(0.0, step * k as f64, 0.0))
        };
        let local = transform(&surfaces, &pose.inverse()).filtered(|p| spec.contains_xy(p));
        let lidar = PointCloud::with_frame(local.points, format!("lidar_{k:04}"));
        let (mut radar, _) = radarize(&lidar, spec, &mut rng);
        radar.frame_id = format!("radar_{k:04}");
        frames.push(Frame { lidar, radar, pose });
    }
    Ok(Trajectory { frames, layout, world })
}
