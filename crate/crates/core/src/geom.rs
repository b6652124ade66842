//! Planar rigid-body geometry: poses, point clouds, and polar returns.
//!
//! Every downstream module works in SE(2). Angles are a single scalar radian
//! kept normalized in `[-pi, pi)` after every composition so that long chain
//! products (odometry chains, consistency cycles) never accumulate wrap
//! errors.

use alloc::vec::Vec;
use core::fmt;

/// Normalize an angle into `[-pi, pi)`. Idempotent.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * core::f64::consts::PI;
    let wrapped = theta - two_pi * libm::floor((theta + core::f64::consts::PI) / two_pi);
    // floor() rounding can land exactly on +pi for inputs like -pi - 2^-53.
    if wrapped >= core::f64::consts::PI {
        wrapped - two_pi
    } else {
        wrapped
    }
}

/// A 2D point in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn norm(&self) -> f64 {
        libm::hypot(self.x, self.y)
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }
}

/// A planar robot pose (x, y, heading), heading normalized in `[-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub const fn identity() -> Self {
        Pose2 {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// SE(2) product `self * other`: apply `other` in the frame of `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = libm::sincos(self.theta);
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = libm::sincos(self.theta);
        Pose2::new(
            -(c * self.x + s * self.y),
            -(-s * self.x + c * self.y),
            -self.theta,
        )
    }

    /// The transform `T` with `a.compose(T) = b`.
    pub fn between(a: &Pose2, b: &Pose2) -> Pose2 {
        a.inverse().compose(b)
    }

    /// Map a point from this pose's frame into the parent frame.
    pub fn transform_point(&self, p: &Point2) -> Point2 {
        let (s, c) = libm::sincos(self.theta);
        Point2::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y)
    }

    pub fn translation_norm(&self) -> f64 {
        libm::hypot(self.x, self.y)
    }

    /// Pose as an (x, y, theta) vector; theta already wrapped.
    pub fn to_vec3(&self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }
}

impl fmt::Display for Pose2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.theta)
    }
}

/// An ordered 2D point cloud in meters.
///
/// A plain sequence with no embedded spatial index; consumers build indices on
/// demand (see [`crate::spatial`]), which keeps the type trivially
/// serializable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cloud2 {
    pub points: Vec<Point2>,
}

impl Cloud2 {
    pub fn new(points: Vec<Point2>) -> Self {
        Cloud2 { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Rigidly transform every point by `pose` (cloud frame -> parent frame).
    pub fn transformed(&self, pose: &Pose2) -> Cloud2 {
        Cloud2 {
            points: self
                .points
                .iter()
                .map(|p| pose.transform_point(p))
                .collect(),
        }
    }

    pub fn extend_from(&mut self, other: &Cloud2) {
        self.points.extend_from_slice(&other.points);
    }
}

/// One polar sensor return.
///
/// Sonar returns carry `elevation = 0`: the imaging sonar does not measure the
/// elevation angle, so contacts are treated as in-plane. LiDAR returns use the
/// full spherical triple. Intensity is carried for completeness; only the
/// sonar grid pipeline consumes it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarReturn {
    pub range: f64,
    pub bearing: f64,
    pub elevation: f64,
    pub intensity: f64,
}

impl PolarReturn {
    /// Build a return, rejecting negative range or intensity.
    pub fn new(range: f64, bearing: f64, elevation: f64, intensity: f64) -> Result<Self, GeomError> {
        if !(range >= 0.0) {
            return Err(GeomError::NegativeRange);
        }
        if !(intensity >= 0.0) {
            return Err(GeomError::NegativeIntensity);
        }
        Ok(PolarReturn {
            range,
            bearing,
            elevation,
            intensity,
        })
    }

    /// In-plane sonar return (elevation fixed to zero).
    pub fn in_plane(range: f64, bearing: f64, intensity: f64) -> Result<Self, GeomError> {
        Self::new(range, bearing, 0.0, intensity)
    }

    /// Project onto the plane, ignoring elevation: `(r cos b, r sin b)`.
    pub fn to_cartesian(&self) -> Point2 {
        let (s, c) = libm::sincos(self.bearing);
        Point2::new(self.range * c, self.range * s)
    }

    /// Full spherical-to-3D conversion, `(x, y, height)` in the sensor frame.
    pub fn to_cartesian_3d(&self) -> [f64; 3] {
        let (se, ce) = libm::sincos(self.elevation);
        let (sb, cb) = libm::sincos(self.bearing);
        let planar = self.range * ce;
        [planar * cb, planar * sb, self.range * se]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeomError {
    NegativeRange,
    NegativeIntensity,
}

impl fmt::Display for GeomError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeomError::NegativeRange => write!(f, "polar return has negative range"),
            GeomError::NegativeIntensity => write!(f, "polar return has negative intensity"),
        }
    }
}

impl core::error::Error for GeomError {}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-9;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < TOL
    }

    fn pose_close(a: &Pose2, b: &Pose2) -> bool {
        close(a.x, b.x) && close(a.y, b.y) && close(wrap_angle(a.theta() - b.theta()), 0.0)
    }

    #[test]
    fn compose_identity() {
        let p = Pose2::new(3.0, -2.0, 1.2);
        assert!(pose_close(&Pose2::identity().compose(&p), &p));
        assert!(pose_close(&p.compose(&Pose2::identity()), &p));
    }

    #[test]
    fn compose_pure_translation() {
        let a = Pose2::new(1.0, 0.0, 0.0);
        let b = Pose2::new(1.0, 0.0, 0.0);
        assert!(pose_close(&a.compose(&b), &Pose2::new(2.0, 0.0, 0.0)));
    }

    #[test]
    fn compose_quarter_turn() {
        // Hand-evaluated rotation matrix product: a 90 degree frame followed
        // by a unit step along its local x lands on (0, 1).
        let a = Pose2::new(0.0, 0.0, core::f64::consts::FRAC_PI_2);
        let b = Pose2::new(1.0, 0.0, 0.0);
        let c = a.compose(&b);
        assert!(pose_close(
            &c,
            &Pose2::new(0.0, 1.0, core::f64::consts::FRAC_PI_2)
        ));
    }

    #[test]
    fn between_trivial_cases() {
        let p = Pose2::new(2.0, 5.0, -0.7);
        assert!(pose_close(&Pose2::between(&p, &p), &Pose2::identity()));
        assert!(pose_close(
            &Pose2::between(&Pose2::identity(), &Pose2::new(3.0, 4.0, 0.0)),
            &Pose2::new(3.0, 4.0, 0.0)
        ));
    }

    #[test]
    fn between_round_trip() {
        let a = Pose2::new(1.0, 1.0, core::f64::consts::FRAC_PI_2);
        let b = Pose2::new(1.0, 2.0, core::f64::consts::FRAC_PI_2);
        let t = Pose2::between(&a, &b);
        assert!(pose_close(&t, &Pose2::new(1.0, 0.0, 0.0)));
        assert!(pose_close(&a.compose(&t), &b));
    }

    #[test]
    fn inverse_round_trip() {
        let p = Pose2::new(-4.0, 2.5, 2.9);
        assert!(pose_close(&p.compose(&p.inverse()), &Pose2::identity()));
        assert!(pose_close(&p.inverse().compose(&p), &Pose2::identity()));
    }

    #[test]
    fn wrap_angle_idempotent_and_half_open() {
        assert!(close(wrap_angle(core::f64::consts::PI), -core::f64::consts::PI));
        assert!(close(wrap_angle(-core::f64::consts::PI), -core::f64::consts::PI));
        assert!(close(wrap_angle(3.0 * core::f64::consts::PI), -core::f64::consts::PI));
        for k in -8..8 {
            let theta = 0.3 + k as f64 * core::f64::consts::PI;
            let w = wrap_angle(theta);
            assert!((-core::f64::consts::PI..core::f64::consts::PI).contains(&w));
            assert!(close(wrap_angle(w), w));
        }
    }

    #[test]
    fn polar_to_cartesian_axis_cases() {
        let r = PolarReturn::in_plane(2.0, 0.0, 1.0).unwrap();
        let p = r.to_cartesian();
        assert!(close(p.x, 2.0) && close(p.y, 0.0));

        let r = PolarReturn::in_plane(0.0, 1.234, 1.0).unwrap();
        let p = r.to_cartesian();
        assert!(close(p.x, 0.0) && close(p.y, 0.0));

        let r = PolarReturn::in_plane(1.0, core::f64::consts::FRAC_PI_2, 1.0).unwrap();
        let p = r.to_cartesian();
        assert!(close(p.x, 0.0) && close(p.y, 1.0));
    }

    #[test]
    fn negative_range_rejected() {
        assert_eq!(
            PolarReturn::in_plane(-0.1, 0.0, 1.0),
            Err(GeomError::NegativeRange)
        );
    }

    #[test]
    fn cloud_transform_preserves_count_and_identity() {
        let cloud = Cloud2::new(vec![Point2::new(1.0, 2.0), Point2::new(-3.0, 0.5)]);
        let same = cloud.transformed(&Pose2::identity());
        assert_eq!(same, cloud);
        let moved = cloud.transformed(&Pose2::new(5.0, 0.0, 1.0));
        assert_eq!(moved.len(), cloud.len());
    }
}
