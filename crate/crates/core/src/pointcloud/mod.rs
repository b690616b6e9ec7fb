//! Point-cloud containers and the geometric preprocessing applied to raw
//! sensor frames: extrinsic alignment, ground removal, shared field-of-view
//! extraction and multi-frame aggregation.

mod ground;
pub mod io;

pub use ground::{remove_ground, GroundCfg, GroundPlane};

use nalgebra::{Matrix3, Rotation3, Vector3};

/// A single 3D point in meters with an optional unitless intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: Option<f64>,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            intensity: None,
        }
    }

    pub const fn with_intensity(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self {
            x,
            y,
            z,
            intensity: Some(intensity),
        }
    }

    pub fn coords(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Yaw angle in degrees, `atan2(y, x)`, in (-180, 180].
    pub fn yaw_deg(&self) -> f64 {
        self.y.atan2(self.x).to_degrees()
    }
}

/// An ordered set of points in a common sensor frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            frame_id: String::new(),
        }
    }

    pub fn with_frame(points: Vec<Point3>, frame_id: impl Into<String>) -> Self {
        Self {
            points,
            frame_id: frame_id.into(),
        }
    }

    pub fn from_xyz(xyz: &[[f64; 3]]) -> Self {
        Self::new(xyz.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    /// Keeps the points matching `keep`, preserving order and frame id.
    pub fn filtered(&self, mut keep: impl FnMut(&Point3) -> bool) -> PointCloud {
        PointCloud {
            points: self.points.iter().filter(|p| keep(p)).copied().collect(),
            frame_id: self.frame_id.clone(),
        }
    }
}

impl FromIterator<Point3> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point3>>(iter: I) -> Self {
        PointCloud::new(iter.into_iter().collect())
    }
}

/// Proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform from a rotation matrix, re-orthonormalizing it.
    ///
    /// Returns `None` when the matrix is not close to a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Option<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if err > 1e-6 || rotation.determinant() <= 0.0 {
            return None;
        }
        let rotation = Rotation3::from_matrix(&rotation).into_inner();
        Some(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation of `yaw_deg` degrees about +z followed by a translation.
    pub fn from_yaw(yaw_deg: f64, translation: Vector3<f64>) -> Self {
        Self::from_euler_deg(0.0, 0.0, yaw_deg, translation)
    }

    /// `R = Rz(yaw) · Ry(pitch) · Rx(roll)`, angles in degrees.
    pub fn from_euler_deg(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        let r = Rotation3::from_euler_angles(roll.to_radians(), pitch.to_radians(), yaw.to_radians());
        Self {
            rotation: r.into_inner(),
            translation,
        }
    }

    /// Rotation of `angle_deg` about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vector3<f64>, angle_deg: f64, translation: Vector3<f64>) -> Self {
        let axis = nalgebra::Unit::new_normalize(axis);
        Self {
            rotation: Rotation3::from_axis_angle(&axis, angle_deg.to_radians()).into_inner(),
            translation,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let q = self.rotation * p.coords() + self.translation;
        Point3 {
            x: q.x,
            y: q.y,
            z: q.z,
            intensity: p.intensity,
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle of `R` in degrees.
    pub fn angle_deg(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }

    /// Max-abs deviation of `RᵀR` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max()
    }

    /// Row-major `[R | t]` as 12 numbers.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    /// Inverse of [`to_row_major`](Self::to_row_major); the rotation is
    /// taken verbatim so that files round-trip bit-exactly.
    pub fn from_row_major(v: &[f64; 12]) -> Self {
        Self {
            rotation: Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            translation: Vector3::new(v[3], v[7], v[11]),
        }
    }
}

/// Applies `transform` to every point. Intensity and frame id are kept.
pub fn transform(cloud: &PointCloud, transform: &RigidTransform) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| transform.apply(p)).collect(),
        frame_id: cloud.frame_id.clone(),
    }
}

// Absorbs atan2/to_degrees round-off so grid-aligned bearings land inside.
const YAW_SLACK_DEG: f64 = 1e-9;

/// Keeps points whose yaw `atan2(y, x)` lies in `[yaw_min, yaw_max]` degrees.
pub fn filter_fov(cloud: &PointCloud, yaw_min: f64, yaw_max: f64) -> PointCloud {
    debug_assert!(yaw_min < yaw_max);
    cloud.filtered(|p| {
        let yaw = p.yaw_deg();
        yaw >= yaw_min - YAW_SLACK_DEG && yaw <= yaw_max + YAW_SLACK_DEG
    })
}

/// Concatenates every frame after moving it into the reference frame.
///
/// Panics if `frames` is empty.
pub fn aggregate(frames: &[(PointCloud, RigidTransform)]) -> PointCloud {
    assert!(!frames.is_empty(), "aggregate needs at least one frame");
    let total = frames.iter().map(|(c, _)| c.len()).sum();
    let mut points = Vec::with_capacity(total);
    for (cloud, pose) in frames {
        points.extend(cloud.points.iter().map(|p| pose.apply(p)));
    }
    PointCloud {
        points,
        frame_id: frames[0].0.frame_id.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
        (0..n)
            .map(|_| {
                Point3::with_intensity(
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect()
    }

    fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        RigidTransform::from_euler_deg(
            rng.random_range(-180.0..180.0),
            rng.random_range(-80.0..80.0),
            rng.random_range(-180.0..180.0),
            Vector3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            ),
        )
    }

    #[test]
    fn identity_transform_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = random_cloud(&mut rng, 50);
        assert_eq!(transform(&cloud, &RigidTransform::identity()), cloud);
    }

    #[test]
    fn quarter_yaw_maps_x_to_y() {
        let cloud = PointCloud::from_xyz(&[[1.0, 0.0, 0.0]]);
        let out = transform(&cloud, &RigidTransform::from_yaw(90.0, Vector3::zeros()));
        let p = out.points[0];
        assert!(p.x.abs() < 1e-12 && (p.y - 1.0).abs() < 1e-12 && p.z.abs() < 1e-12);
    }

    #[test]
    fn transform_then_inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cloud = random_cloud(&mut rng, 100);
        let t = random_transform(&mut rng);
        let back = transform(&transform(&cloud, &t), &t.inverse());
        for (a, b) in cloud.iter().zip(back.iter()) {
            assert!((a.coords() - b.coords()).norm() < 1e-9);
            assert_eq!(a.intensity, b.intensity);
        }
    }

    #[test]
    fn compose_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_transform(&mut rng);
        let b = random_transform(&mut rng);
        let p = Point3::new(1.0, -2.0, 0.5);
        let seq = a.apply(&b.apply(&p));
        let comp = a.compose(&b).apply(&p);
        assert!((seq.coords() - comp.coords()).norm() < 1e-12);
        assert!(a.compose(&b).orthonormality_error() < 1e-9);
    }

    #[test]
    fn fov_keeps_center_and_drops_side() {
        let cloud = PointCloud::from_xyz(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]);
        let out = filter_fov(&cloud, 30.0, 150.0);
        assert_eq!(out.points, vec![Point3::new(0.0, 1.0, 0.0)]);
    }

    #[test]
    fn fov_ring_count() {
        let ring: PointCloud = (0..360)
            .map(|k| {
                let a = (k as f64).to_radians();
                Point3::new(a.cos(), a.sin(), 0.0)
            })
            .collect();
        // Independent count: bearings 30..=150 inclusive.
        let expected = (0..360).filter(|k| (30..=150).contains(k)).count();
        assert_eq!(expected, 121);
        assert_eq!(filter_fov(&ring, 30.0, 150.0).len(), expected);
    }

    #[test]
    fn aggregate_single_identity_and_doubling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cloud = random_cloud(&mut rng, 20);
        let id = RigidTransform::identity();
        assert_eq!(aggregate(&[(cloud.clone(), id)]), cloud);
        let two = aggregate(&[(cloud.clone(), id), (cloud.clone(), id)]);
        assert_eq!(two.len(), 40);
        assert_eq!(&two.points[20..], &cloud.points[..]);
    }

    #[test]
    fn rejects_improper_rotation() {
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(reflect, Vector3::zeros()).is_none());
        assert!(RigidTransform::new(Matrix3::identity() * 2.0, Vector3::zeros()).is_none());
    }

    proptest! {
        #[test]
        fn transform_is_an_isometry(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cloud = random_cloud(&mut rng, 12);
            let t = random_transform(&mut rng);
            let out = transform(&cloud, &t);
            prop_assert_eq!(out.len(), cloud.len());
            for i in 0..cloud.len() {
                for j in 0..cloud.len() {
                    let d0 = (cloud.points[i].coords() - cloud.points[j].coords()).norm();
                    let d1 = (out.points[i].coords() - out.points[j].coords()).norm();
                    prop_assert!((d0 - d1).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn fov_filter_is_idempotent(seed in any::<u64>(), lo in -170.0f64..0.0, span in 1.0f64..170.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cloud = random_cloud(&mut rng, 200);
            let once = filter_fov(&cloud, lo, lo + span);
            let twice = filter_fov(&once, lo, lo + span);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn aggregate_count_is_sum(sizes in proptest::collection::vec(0usize..30, 1..6)) {
            let mut rng = ChaCha8Rng::seed_from_u64(sizes.len() as u64);
            let frames: Vec<_> = sizes
                .iter()
                .map(|&n| (random_cloud(&mut rng, n), random_transform(&mut rng)))
                .collect();
            prop_assert_eq!(aggregate(&frames).len(), sizes.iter().sum::<usize>());
        }
    }
}
