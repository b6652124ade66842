//! Per-robot local state estimation.
//!
//! Underwater vehicles dead-reckon with an extended Kalman filter over
//! velocity-logger and compass measurements (free-floating particle motion
//! model); the surface vehicle runs scan-to-map ICP odometry on its projected
//! 2D LiDAR clouds. Both chains are downsampled into keyframes whenever the
//! vehicle has moved or rotated enough.

use alloc::collections::VecDeque;
use core::fmt;

use crate::geom::{wrap_angle, Cloud2, Pose2};
use crate::mat3::Mat3;
use crate::registration::{refine_icp, voxel_downsample, RegistrationParams};

/// A downsampled pose with its attached observation (2D LiDAR cloud or
/// cartesian sonar contact cloud, in the keyframe's own frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub robot_id: u16,
    pub index: u32,
    pub pose: Pose2,
    pub covariance: Mat3,
    pub observation: Cloud2,
    pub timestamp: f64,
}

/// Relative-pose factor between consecutive keyframes of one robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryFactor {
    pub robot_id: u16,
    pub from_index: u32,
    pub to_index: u32,
    pub delta: Pose2,
    pub covariance: Mat3,
}

impl OdometryFactor {
    pub fn new(
        robot_id: u16,
        from_index: u32,
        to_index: u32,
        delta: Pose2,
        covariance: Mat3,
    ) -> Result<Self, OdometryError> {
        if from_index >= to_index {
            return Err(OdometryError::NonIncreasingIndices);
        }
        if !covariance.is_spd(0.0) {
            return Err(OdometryError::CovarianceNotSpd);
        }
        Ok(OdometryFactor {
            robot_id,
            from_index,
            to_index,
            delta,
            covariance,
        })
    }
}

/// Diagonal odometry covariance proportional to step length, floored so pure
/// rotations stay positive definite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdomCovParams {
    pub sigma_trans: f64,
    pub sigma_rot: f64,
    pub min_step: f64,
}

impl Default for OdomCovParams {
    fn default() -> Self {
        OdomCovParams {
            sigma_trans: 0.05,
            sigma_rot: 0.01,
            min_step: 0.05,
        }
    }
}

pub fn step_covariance(delta: &Pose2, params: &OdomCovParams) -> Mat3 {
    let d = delta.translation_norm().max(params.min_step);
    Mat3::diag(
        params.sigma_trans * params.sigma_trans * d,
        params.sigma_trans * params.sigma_trans * d,
        params.sigma_rot * params.sigma_rot * d,
    )
}

/// True when motion since the last keyframe reaches either gate (inclusive:
/// "moved at least").
pub fn keyframe_gate(
    current: &Pose2,
    last_keyframe: &Pose2,
    delta_t_min: f64,
    delta_r_min: f64,
) -> bool {
    let motion = Pose2::between(last_keyframe, current);
    motion.translation_norm() >= delta_t_min || motion.theta().abs() >= delta_r_min
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfNoiseParams {
    /// Velocity measurement noise per body axis, m/s.
    pub sigma_vel: f64,
    /// Heading measurement noise, radians.
    pub sigma_heading: f64,
    /// Heading random walk, rad/sqrt(s).
    pub sigma_theta_process: f64,
}

impl Default for EkfNoiseParams {
    fn default() -> Self {
        EkfNoiseParams {
            sigma_vel: 0.05,
            sigma_heading: 2.0 * core::f64::consts::PI / 180.0,
            sigma_theta_process: 0.01,
        }
    }
}

/// One EKF cycle: predict with the measured body-frame velocity as the
/// control input (free-floating particle motion), then update heading with
/// the compass measurement (Joseph-form covariance update).
pub fn ekf_step(
    pose: &Pose2,
    covariance: &Mat3,
    velocity_body: (f64, f64),
    heading_meas: f64,
    dt: f64,
    noise: &EkfNoiseParams,
) -> Result<(Pose2, Mat3), OdometryError> {
    if !(dt > 0.0) {
        return Err(OdometryError::NonPositiveDt);
    }
    if !covariance.is_spd(0.0) {
        return Err(OdometryError::CovarianceNotSpd);
    }
    // Predict.
    let (s, c) = libm::sincos(pose.theta());
    let dx = (c * velocity_body.0 - s * velocity_body.1) * dt;
    let dy = (s * velocity_body.0 + c * velocity_body.1) * dt;
    let predicted = Pose2::new(pose.x + dx, pose.y + dy, pose.theta());
    let f = Mat3 {
        m: [[1.0, 0.0, -dy], [0.0, 1.0, dx], [0.0, 0.0, 1.0]],
    };
    // Isotropic velocity noise makes the rotated position noise diagonal.
    let qv = noise.sigma_vel * noise.sigma_vel * dt * dt;
    let q = Mat3::diag(qv, qv, noise.sigma_theta_process * noise.sigma_theta_process * dt);
    let mut p = f.mul(covariance).mul(&f.transpose()).add(&q);

    // Heading update, residual wrapped.
    let innovation = wrap_angle(heading_meas - predicted.theta());
    let r = noise.sigma_heading * noise.sigma_heading;
    let s_inn = p.m[2][2] + r;
    let k = [p.m[0][2] / s_inn, p.m[1][2] / s_inn, p.m[2][2] / s_inn];
    let updated = Pose2::new(
        predicted.x + k[0] * innovation,
        predicted.y + k[1] * innovation,
        predicted.theta() + k[2] * innovation,
    );
    // Joseph form keeps the covariance symmetric positive definite.
    let ikh = Mat3 {
        m: [
            [1.0, 0.0, -k[0]],
            [0.0, 1.0, -k[1]],
            [0.0, 0.0, 1.0 - k[2]],
        ],
    };
    let mut krk = Mat3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            krk.m[i][j] = k[i] * r * k[j];
        }
    }
    p = ikh.mul(&p).mul(&ikh.transpose()).add(&krk);
    // Symmetrize against rounding drift.
    for i in 0..3 {
        for j in (i + 1)..3 {
            let avg = 0.5 * (p.m[i][j] + p.m[j][i]);
            p.m[i][j] = avg;
            p.m[j][i] = avg;
        }
    }
    Ok((updated, p))
}

/// Pure scan-to-map alignment step. An empty local map (first frame) passes
/// the initial pose through; a mean residual above `divergence_residual`
/// signals odometry failure so the caller can fall back on its motion prior.
pub fn lidar_odometry_step(
    scan: &Cloud2,
    local_map: &Cloud2,
    prev_pose: &Pose2,
    registration: &RegistrationParams,
    divergence_residual: f64,
) -> Result<Pose2, OdometryError> {
    if scan.is_empty() {
        return Err(OdometryError::EmptyScan);
    }
    if local_map.is_empty() {
        return Ok(*prev_pose);
    }
    match refine_icp(scan, local_map, prev_pose, registration) {
        Ok((pose, residual)) => {
            if residual > divergence_residual {
                Err(OdometryError::Diverged)
            } else {
                Ok(pose)
            }
        }
        Err(_) => Err(OdometryError::Diverged),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarOdometryParams {
    /// Scans retained in the local map.
    pub map_scans: usize,
    /// Voxel edge for map deduplication, meters.
    pub map_voxel: f64,
    /// Mean ICP residual above which the frame is treated as failed.
    pub divergence_residual: f64,
    pub registration: RegistrationParams,
}

impl Default for LidarOdometryParams {
    fn default() -> Self {
        LidarOdometryParams {
            map_scans: 12,
            map_voxel: 0.15,
            divergence_residual: 0.7,
            registration: RegistrationParams::default(),
        }
    }
}

/// Stateful scan-to-map odometry: aligns each scan against a voxel-
/// deduplicated union of the last few registered scans. On a failed frame the
/// previous delta is propagated (constant-velocity fallback).
pub struct LidarOdometry {
    params: LidarOdometryParams,
    pose: Pose2,
    last_delta: Pose2,
    world_scans: VecDeque<Cloud2>,
    map: Cloud2,
}

impl LidarOdometry {
    pub fn new(initial_pose: Pose2, params: LidarOdometryParams) -> Self {
        LidarOdometry {
            params,
            pose: initial_pose,
            last_delta: Pose2::identity(),
            world_scans: VecDeque::new(),
            map: Cloud2::default(),
        }
    }

    pub fn pose(&self) -> Pose2 {
        self.pose
    }

    pub fn local_map(&self) -> &Cloud2 {
        &self.map
    }

    /// Process one projected 2D scan; returns the refined pose. Empty scans
    /// propagate the motion prior.
    pub fn step(&mut self, scan: &Cloud2) -> Pose2 {
        let predicted = self.pose.compose(&self.last_delta);
        if scan.is_empty() {
            self.pose = predicted;
            return self.pose;
        }
        let refined = lidar_odometry_step(
            scan,
            &self.map,
            &predicted,
            &self.params.registration,
            self.params.divergence_residual,
        )
        .unwrap_or(predicted);
        self.last_delta = Pose2::between(&self.pose, &refined);
        self.pose = refined;

        self.world_scans.push_back(scan.transformed(&self.pose));
        while self.world_scans.len() > self.params.map_scans {
            self.world_scans.pop_front();
        }
        let mut merged = Cloud2::default();
        for s in &self.world_scans {
            merged.extend_from(s);
        }
        self.map = voxel_downsample(&merged, self.params.map_voxel);
        self.pose
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdometryError {
    NonPositiveDt,
    CovarianceNotSpd,
    NonIncreasingIndices,
    EmptyScan,
    Diverged,
}

impl fmt::Display for OdometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OdometryError::NonPositiveDt => write!(f, "time step must be positive"),
            OdometryError::CovarianceNotSpd => {
                write!(f, "covariance must be symmetric positive definite")
            }
            OdometryError::NonIncreasingIndices => {
                write!(f, "factor indices must be strictly increasing")
            }
            OdometryError::EmptyScan => write!(f, "scan has no points"),
            OdometryError::Diverged => write!(f, "scan-to-map alignment diverged"),
        }
    }
}

impl core::error::Error for OdometryError {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;
    use crate::rng::{label, Pcg32};
    use alloc::vec::Vec;

    #[test]
    fn ekf_zero_velocity_keeps_pose_and_grows_position_cov() {
        let pose = Pose2::new(2.0, -1.0, 0.4);
        let p0 = Mat3::diag(0.1, 0.1, 0.05);
        let noise = EkfNoiseParams::default();
        let (pose1, p1) =
            ekf_step(&pose, &p0, (0.0, 0.0), pose.theta(), 1.0, &noise).unwrap();
        assert!((pose1.x - pose.x).abs() < 1e-12);
        assert!((pose1.y - pose.y).abs() < 1e-12);
        assert!((pose1.theta() - pose.theta()).abs() < 1e-12);
        // Diagonal prior: position variance grows by exactly the process term.
        let qv = noise.sigma_vel * noise.sigma_vel;
        assert!((p1.m[0][0] - (0.1 + qv)).abs() < 1e-12);
        assert!((p1.m[1][1] - (0.1 + qv)).abs() < 1e-12);
        assert!(p1.is_spd(0.0));
    }

    #[test]
    fn ekf_constant_velocity_advances() {
        let mut pose = Pose2::identity();
        let mut cov = Mat3::diag(1e-6, 1e-6, 1e-6);
        let noise = EkfNoiseParams::default();
        for _ in 0..10 {
            let (p, c) = ekf_step(&pose, &cov, (1.0, 0.0), 0.0, 1.0, &noise).unwrap();
            pose = p;
            cov = c;
        }
        assert!((pose.x - 10.0).abs() < 1e-9);
        assert!(pose.y.abs() < 1e-9);
    }

    #[test]
    fn ekf_rejects_bad_inputs() {
        let pose = Pose2::identity();
        let p = Mat3::diag(0.1, 0.1, 0.1);
        assert_eq!(
            ekf_step(&pose, &p, (0.0, 0.0), 0.0, 0.0, &EkfNoiseParams::default()),
            Err(OdometryError::NonPositiveDt)
        );
        let bad = Mat3::diag(0.1, -0.1, 0.1);
        assert_eq!(
            ekf_step(&pose, &bad, (0.0, 0.0), 0.0, 1.0, &EkfNoiseParams::default()),
            Err(OdometryError::CovarianceNotSpd)
        );
    }

    /// Filter consistency against a truth process that matches the model
    /// exactly: averaged NEES over Monte-Carlo runs must sit in the
    /// chi-square band for 3 degrees of freedom.
    #[test]
    fn ekf_nees_within_chi_square_band() {
        let noise = EkfNoiseParams {
            sigma_vel: 0.05,
            sigma_heading: 0.02,
            sigma_theta_process: 0.01,
        };
        let dt = 0.5;
        let steps = 120;
        let seeds = 100;
        let mut nees_acc = 0.0;
        for seed in 0..seeds {
            let mut rng = Pcg32::stream(seed, label("nees"));
            let mut truth = Pose2::identity();
            let mut est = Pose2::identity();
            let mut cov = Mat3::diag(1e-9, 1e-9, 1e-9);
            for _ in 0..steps {
                // Truth: commanded body velocity plus heading random walk.
                let v_true = (1.0, 0.2);
                let (s, c) = libm::sincos(truth.theta());
                truth = Pose2::new(
                    truth.x + (c * v_true.0 - s * v_true.1) * dt,
                    truth.y + (s * v_true.0 + c * v_true.1) * dt,
                    truth.theta()
                        + rng.gaussian_scaled(noise.sigma_theta_process * libm::sqrt(dt)),
                );
                let v_meas = (
                    v_true.0 + rng.gaussian_scaled(noise.sigma_vel),
                    v_true.1 + rng.gaussian_scaled(noise.sigma_vel),
                );
                let heading_meas = truth.theta() + rng.gaussian_scaled(noise.sigma_heading);
                let (e, p) = ekf_step(&est, &cov, v_meas, heading_meas, dt, &noise).unwrap();
                est = e;
                cov = p;
            }
            let err = [
                est.x - truth.x,
                est.y - truth.y,
                wrap_angle(est.theta() - truth.theta()),
            ];
            let info = cov.inverse().unwrap();
            let ie = info.mul_vec(&err);
            nees_acc += err[0] * ie[0] + err[1] * ie[1] + err[2] * ie[2];
        }
        let mean_nees = nees_acc / seeds as f64;
        // chi2(3*100)/100 95% band is about [2.55, 3.48]; allow a little
        // slack for the linearized heading coupling.
        assert!(
            (2.3..=3.7).contains(&mean_nees),
            "mean NEES {mean_nees} outside consistency band"
        );
    }

    #[test]
    fn keyframe_gate_cases() {
        let a = Pose2::new(0.0, 0.0, 0.0);
        let dr = 30.0 * core::f64::consts::PI / 180.0;
        assert!(!keyframe_gate(&a, &a, 2.0, dr));
        // Exactly at the translation gate: inclusive.
        assert!(keyframe_gate(&Pose2::new(2.0, 0.0, 0.0), &a, 2.0, dr));
        assert!(!keyframe_gate(&Pose2::new(1.99, 0.0, 0.0), &a, 2.0, dr));
        // Rotation alone.
        assert!(keyframe_gate(&Pose2::new(0.0, 0.0, dr), &a, 2.0, dr));
    }

    #[test]
    fn odometry_factor_validation() {
        let delta = Pose2::new(1.0, 0.0, 0.0);
        let cov = Mat3::diag(0.01, 0.01, 0.001);
        assert!(OdometryFactor::new(0, 3, 4, delta, cov).is_ok());
        assert_eq!(
            OdometryFactor::new(0, 4, 4, delta, cov),
            Err(OdometryError::NonIncreasingIndices)
        );
        assert_eq!(
            OdometryFactor::new(0, 3, 4, delta, Mat3::zeros()),
            Err(OdometryError::CovarianceNotSpd)
        );
    }

    /// Ray-cast scan of a walled corridor with posts, the sampling geometry
    /// the real sensor produces: wall sample spacing varies with range and
    /// pose, so there is no shared sampling lattice between scans.
    fn corridor_scan(pose: &Pose2, world: &crate::simenv::WorldModel) -> Cloud2 {
        use crate::simenv::{raycast, Domain};
        let present = alloc::vec![true; world.structures.len()];
        let beams = 720;
        let mut pts = Vec::new();
        for b in 0..beams {
            let bearing = -core::f64::consts::PI
                + (b as f64 + 0.5) * 2.0 * core::f64::consts::PI / beams as f64;
            if let Some((d, _)) = raycast(
                world,
                Point2::new(pose.x, pose.y),
                pose.theta() + bearing,
                25.0,
                Domain::AboveWater,
                &present,
            ) {
                let (s, c) = libm::sincos(bearing);
                pts.push(Point2::new(d * c, d * s));
            }
        }
        Cloud2::new(pts)
    }

    fn corridor_world() -> crate::simenv::WorldModel {
        use crate::simenv::{Structure, StructureKind, WorldModel};
        let mut structures = alloc::vec![
            Structure {
                id: 0,
                kind: StructureKind::Seawall,
                vertices: alloc::vec![Point2::new(-15.0, -4.0), Point2::new(40.0, -4.0)],
                closed: false,
                height: 2.0,
                visible_above_water: true,
                visible_below_water: true,
                transient_presence: None,
            },
            Structure {
                id: 1,
                kind: StructureKind::Seawall,
                vertices: alloc::vec![Point2::new(-15.0, 6.0), Point2::new(40.0, 6.0)],
                closed: false,
                height: 2.0,
                visible_above_water: true,
                visible_below_water: true,
                transient_presence: None,
            },
        ];
        for k in 0..6u32 {
            let px = k as f64 * 5.0 + 1.3;
            let py = if k % 2 == 0 { -2.0 } else { 3.5 };
            structures.push(Structure {
                id: 2 + k,
                kind: StructureKind::Piling,
                vertices: alloc::vec![
                    Point2::new(px - 0.3, py - 0.3),
                    Point2::new(px + 0.3, py - 0.3),
                    Point2::new(px + 0.3, py + 0.3),
                    Point2::new(px - 0.3, py + 0.3),
                ],
                closed: true,
                height: 2.0,
                visible_above_water: true,
                visible_below_water: true,
                transient_presence: None,
            });
        }
        WorldModel {
            structures,
            bounds: 50.0,
        }
    }

    #[test]
    fn lidar_odometry_step_recovers_constructed_transform() {
        // Map equals the scan moved by a known transform: the step must
        // recover it precisely.
        let mut rng = Pcg32::new(21, 9);
        let scan = Cloud2::new(
            (0..300)
                .map(|_| Point2::new(rng.uniform(-10.0, 10.0), rng.uniform(-8.0, 8.0)))
                .collect(),
        );
        let truth = Pose2::new(0.5, 0.0, 5.0 * core::f64::consts::PI / 180.0);
        let map = scan.transformed(&truth);
        let pose = lidar_odometry_step(
            &scan,
            &map,
            &Pose2::identity(),
            &RegistrationParams::default(),
            0.7,
        )
        .unwrap();
        assert!((pose.x - truth.x).abs() < 0.02, "{pose}");
        assert!((pose.y - truth.y).abs() < 0.02, "{pose}");
        assert!(
            (pose.theta() - truth.theta()).abs() < 0.2 * core::f64::consts::PI / 180.0,
            "{pose}"
        );
    }

    #[test]
    fn lidar_odometry_tracks_straight_motion() {
        let world = corridor_world();
        let mut odom = LidarOdometry::new(Pose2::identity(), LidarOdometryParams::default());
        let mut truth = Pose2::identity();
        let mut final_err = 0.0;
        for step in 0..20 {
            let scan = corridor_scan(&truth, &world);
            let est = odom.step(&scan);
            let err = libm::hypot(est.x - truth.x, est.y - truth.y);
            if step > 0 {
                assert!(err < 0.35, "step {step}: est {est} truth {truth}");
            }
            final_err = err;
            truth = truth.compose(&Pose2::new(0.8, 0.0, 0.0));
        }
        // Scan-to-map keeps the cumulative drift much smaller than the
        // 15 m traveled.
        assert!(final_err < 0.6, "terminal drift {final_err}");
    }

    #[test]
    fn lidar_odometry_step_bootstrap_and_empty_scan() {
        let prev = Pose2::new(1.0, 2.0, 0.3);
        let params = RegistrationParams::default();
        let scan = Cloud2::new(vec![Point2::new(0.0, 0.0)]);
        let out = lidar_odometry_step(&scan, &Cloud2::default(), &prev, &params, 0.5).unwrap();
        assert_eq!(out, prev);
        assert_eq!(
            lidar_odometry_step(&Cloud2::default(), &scan, &prev, &params, 0.5),
            Err(OdometryError::EmptyScan)
        );
    }

    #[test]
    fn step_covariance_scales_with_length_and_floors() {
        let params = OdomCovParams::default();
        let long = step_covariance(&Pose2::new(4.0, 0.0, 0.0), &params);
        let short = step_covariance(&Pose2::new(0.001, 0.0, 0.1), &params);
        assert!(long.m[0][0] > short.m[0][0]);
        assert!(short.is_spd(0.0));
    }
}
