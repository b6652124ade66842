//! Sensor simulation: first-return ray casting against the world's wall
//! segments, plus dead-reckoning measurement synthesis.

use alloc::vec::Vec;

use crate::geom::{Point2, PolarReturn, Pose2};
use crate::rng::{label, label_indexed, Pcg32};
use crate::sensing::{ContactGrid, PartialUsvState};
use crate::simenv::world::{Domain, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorKind {
    Sonar,
    Lidar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSpec {
    pub kind: SensorKind,
    pub max_range: f64,
    /// Field of view, radians, centered on the robot heading.
    pub fov: f64,
    pub angular_bins: usize,
    /// Sonar only: rows of the polar grid.
    pub range_bins: usize,
    /// Gaussian noise on measured range, meters.
    pub noise_sigma_range: f64,
    /// Sonar: per-beam dropout probability. LiDAR: reused as the waterline
    /// mirror probability (a return is replaced by its below-water
    /// reflection).
    pub dropout_prob: f64,
    /// Sonar only: additive gaussian speckle on cell intensity.
    pub noise_sigma_intensity: f64,
    /// LiDAR only: returns distributed over each struck structure's height.
    pub points_per_hit: usize,
}

impl SensorSpec {
    pub fn sonar(max_range: f64, range_bins: usize, angular_bins: usize) -> Self {
        SensorSpec {
            kind: SensorKind::Sonar,
            max_range,
            fov: 2.0 * core::f64::consts::PI,
            angular_bins,
            range_bins,
            noise_sigma_range: 0.0,
            dropout_prob: 0.0,
            noise_sigma_intensity: 0.0,
            points_per_hit: 0,
        }
    }

    pub fn lidar(max_range: f64, angular_bins: usize) -> Self {
        SensorSpec {
            kind: SensorKind::Lidar,
            max_range,
            fov: 2.0 * core::f64::consts::PI,
            angular_bins,
            range_bins: 0,
            noise_sigma_range: 0.0,
            dropout_prob: 0.0,
            noise_sigma_intensity: 0.0,
            points_per_hit: 4,
        }
    }
}

/// Per-frame presence of each structure; permanent structures are always
/// present, transient ones flip a seeded coin.
pub fn frame_presence(world: &WorldModel, seed: u64) -> Vec<bool> {
    world
        .structures
        .iter()
        .map(|s| match s.transient_presence {
            None => true,
            Some(p) => Pcg32::stream(seed, label_indexed("transient", s.id as u64)).chance(p),
        })
        .collect()
}

/// First intersection of a ray with any present structure visible in the
/// given domain. Returns (distance, structure index).
pub fn raycast(
    world: &WorldModel,
    origin: Point2,
    direction: f64,
    max_range: f64,
    domain: Domain,
    present: &[bool],
) -> Option<(f64, usize)> {
    let (uy, ux) = libm::sincos(direction);
    let mut best: Option<(f64, usize)> = None;
    for (idx, structure) in world.structures.iter().enumerate() {
        if !present[idx] || !structure.visible_in(domain) {
            continue;
        }
        for (a, b) in structure.segments() {
            let dx = b.x - a.x;
            let dy = b.y - a.y;
            let denom = ux * dy - uy * dx;
            if denom.abs() < 1e-12 {
                continue;
            }
            let ox = a.x - origin.x;
            let oy = a.y - origin.y;
            let t = (ox * dy - oy * dx) / denom;
            let s = (ox * uy - oy * ux) / denom;
            if t >= 0.0 && t <= max_range && (0.0..=1.0).contains(&s) {
                match best {
                    Some((bt, _)) if bt <= t => {}
                    _ => best = Some((t, idx)),
                }
            }
        }
    }
    best
}

/// Simulate one sonar frame as a polar contact grid; also reports which
/// structures were struck (oracle metadata for tests and metrics, not used by
/// the estimation pipeline).
pub fn simulate_sonar_traced(
    world: &WorldModel,
    pose: &Pose2,
    spec: &SensorSpec,
    seed: u64,
) -> (ContactGrid, Vec<u32>) {
    debug_assert_eq!(spec.kind, SensorKind::Sonar);
    debug_assert!(spec.max_range > 0.0 && spec.range_bins > 0 && spec.angular_bins > 0);
    let mut rng = Pcg32::stream(seed, label("sonar"));
    let present = frame_presence(world, seed);
    let half_fov = spec.fov * 0.5;
    let mut grid = ContactGrid::zeroed(
        spec.range_bins,
        spec.angular_bins,
        spec.max_range / spec.range_bins as f64,
        -half_fov,
        half_fov,
    );
    let mut hits: Vec<u32> = Vec::new();
    let origin = Point2::new(pose.x, pose.y);
    for b in 0..spec.angular_bins {
        let (_, bearing) = (0, grid.cell_center(0, b).1);
        let hit = raycast(
            world,
            origin,
            pose.theta() + bearing,
            spec.max_range,
            Domain::BelowWater,
            &present,
        );
        let dropped = spec.dropout_prob > 0.0 && rng.chance(spec.dropout_prob);
        if let Some((dist, idx)) = hit {
            if dropped {
                continue;
            }
            let noisy = dist + rng.gaussian_scaled(spec.noise_sigma_range);
            if noisy < 0.0 || noisy >= spec.max_range {
                continue;
            }
            let row = (noisy / grid.range_resolution) as usize;
            let row = row.min(spec.range_bins - 1);
            // Intensity falls off with true range; strongest return wins the
            // cell.
            let intensity = 1.0 - 0.6 * (dist / spec.max_range);
            if intensity > grid.get(row, b) {
                grid.set(row, b, intensity);
            }
            let id = world.structures[idx].id;
            if !hits.contains(&id) {
                hits.push(id);
            }
        }
    }
    if spec.noise_sigma_intensity > 0.0 {
        // Folded gaussian: intensity noise is strictly positive, like the
        // receiver background it stands in for.
        for cell in grid.cells.iter_mut() {
            *cell += rng.gaussian_scaled(spec.noise_sigma_intensity).abs();
        }
    }
    (grid, hits)
}

pub fn simulate_sonar(world: &WorldModel, pose: &Pose2, spec: &SensorSpec, seed: u64) -> ContactGrid {
    simulate_sonar_traced(world, pose, spec, seed).0
}

/// Simulate one LiDAR frame as spherical returns in the tilted sensor frame.
///
/// Each beam that strikes an above-water structure yields `points_per_hit`
/// returns spread over the structure's height. With probability
/// `dropout_prob` a return is replaced by its waterline reflection (same
/// planar position, negated height), reproducing mirror noise off the water
/// surface; those points sit below the waterline and are removed by the
/// height crop. Also reports struck structure ids (oracle metadata).
pub fn simulate_lidar_traced(
    world: &WorldModel,
    pose: &Pose2,
    spec: &SensorSpec,
    mount: &PartialUsvState,
    seed: u64,
) -> (Vec<PolarReturn>, Vec<u32>) {
    debug_assert_eq!(spec.kind, SensorKind::Lidar);
    debug_assert!(spec.max_range > 0.0 && spec.angular_bins > 0 && spec.points_per_hit > 0);
    let mut rng = Pcg32::stream(seed, label("lidar"));
    let present = frame_presence(world, seed);
    let half_fov = spec.fov * 0.5;
    let step = spec.fov / spec.angular_bins as f64;
    let origin = Point2::new(pose.x, pose.y);
    let mut returns = Vec::new();
    let mut hits: Vec<u32> = Vec::new();
    for b in 0..spec.angular_bins {
        let bearing = -half_fov + (b as f64 + 0.5) * step;
        let Some((dist, idx)) = raycast(
            world,
            origin,
            pose.theta() + bearing,
            spec.max_range,
            Domain::AboveWater,
            &present,
        ) else {
            continue;
        };
        let structure = &world.structures[idx];
        if structure.height <= 0.0 {
            continue;
        }
        if !hits.contains(&structure.id) {
            hits.push(structure.id);
        }
        let (sb, cb) = libm::sincos(bearing);
        for k in 0..spec.points_per_hit {
            let noisy = dist + rng.gaussian_scaled(spec.noise_sigma_range);
            if noisy <= 0.0 || noisy > spec.max_range {
                continue;
            }
            let mut height = (k as f64 + 0.5) / spec.points_per_hit as f64 * structure.height;
            if spec.dropout_prob > 0.0 && rng.chance(spec.dropout_prob) {
                height = -height;
            }
            // Waterline-level point in the robot's planar frame, then into the
            // tilted sensor frame.
            let level = [noisy * cb, noisy * sb, height];
            let sensor = mount.uncorrect(level);
            let range = libm::sqrt(
                sensor[0] * sensor[0] + sensor[1] * sensor[1] + sensor[2] * sensor[2],
            );
            if range == 0.0 {
                continue;
            }
            let out_bearing = libm::atan2(sensor[1], sensor[0]);
            let elevation = libm::asin((sensor[2] / range).clamp(-1.0, 1.0));
            returns.push(
                PolarReturn::new(range, out_bearing, elevation, 1.0)
                    .expect("range checked positive"),
            );
        }
    }
    (returns, hits)
}

pub fn simulate_lidar(
    world: &WorldModel,
    pose: &Pose2,
    spec: &SensorSpec,
    mount: &PartialUsvState,
    seed: u64,
) -> Vec<PolarReturn> {
    simulate_lidar_traced(world, pose, spec, mount, seed).0
}

/// Corrupt a ground-truth pose sequence with independent gaussian noise on
/// every between-pose increment; the first pose is preserved and drift
/// accumulates through re-composition.
pub fn simulate_dead_reckoning(
    truth: &[Pose2],
    sigma_trans: f64,
    sigma_rot: f64,
    seed: u64,
) -> Vec<Pose2> {
    debug_assert!(!truth.is_empty());
    let mut rng = Pcg32::stream(seed, label("dead-reckoning"));
    let mut out = Vec::with_capacity(truth.len());
    out.push(truth[0]);
    for w in truth.windows(2) {
        let inc = Pose2::between(&w[0], &w[1]);
        let noisy = Pose2::new(
            inc.x + rng.gaussian_scaled(sigma_trans),
            inc.y + rng.gaussian_scaled(sigma_trans),
            inc.theta() + rng.gaussian_scaled(sigma_rot),
        );
        let prev = *out.last().expect("seeded with first pose");
        out.push(prev.compose(&noisy));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadReckoningParams {
    /// Gaussian noise on each body-frame velocity axis, m/s.
    pub sigma_vel: f64,
    /// Gaussian noise on compass heading, radians.
    pub sigma_heading: f64,
    /// Constant compass bias (magnetic interference stress mode), radians.
    pub heading_bias: f64,
    /// Velocity scale factor error: measured speed = scale * true speed.
    /// Stretches the dead-reckoned chain, a drift no rigid alignment can
    /// absorb.
    pub vel_scale: f64,
    /// Slow sinusoidal compass wander (magnetic interference): amplitude in
    /// radians and period in seconds. Long periods distort the mission-scale
    /// chain while leaving any registration window almost rigid.
    pub heading_wander_amplitude: f64,
    pub heading_wander_period_s: f64,
}

/// One synthesized DVL + compass sample covering the step ending at its
/// timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvlCompassSample {
    pub t: f64,
    pub dt: f64,
    /// Measured body-frame velocity, m/s.
    pub vx: f64,
    pub vy: f64,
    /// Measured heading, radians.
    pub heading: f64,
}

/// Synthesize DVL velocity and compass heading measurements from a
/// ground-truth timed pose sequence.
pub fn simulate_dvl_compass(
    truth: &[crate::simenv::TimedPose],
    params: &DeadReckoningParams,
    seed: u64,
) -> Vec<DvlCompassSample> {
    let mut rng = Pcg32::stream(seed, label("dvl-compass"));
    let mut out = Vec::with_capacity(truth.len().saturating_sub(1));
    for w in truth.windows(2) {
        let dt = w[1].t - w[0].t;
        if dt <= 0.0 {
            continue;
        }
        let dx = w[1].pose.x - w[0].pose.x;
        let dy = w[1].pose.y - w[0].pose.y;
        let (s, c) = libm::sincos(w[0].pose.theta());
        let vx = (c * dx + s * dy) / dt;
        let vy = (-s * dx + c * dy) / dt;
        let wander = if params.heading_wander_period_s > 0.0 {
            params.heading_wander_amplitude
                * libm::sin(2.0 * core::f64::consts::PI * w[1].t / params.heading_wander_period_s)
        } else {
            0.0
        };
        out.push(DvlCompassSample {
            t: w[1].t,
            dt,
            vx: params.vel_scale * vx + rng.gaussian_scaled(params.sigma_vel),
            vy: params.vel_scale * vy + rng.gaussian_scaled(params.sigma_vel),
            heading: w[1].pose.theta() + params.heading_bias + wander
                + rng.gaussian_scaled(params.sigma_heading),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simenv::world::{generate_world, Structure, StructureKind, WorldTemplate};

    fn empty_world() -> WorldModel {
        WorldModel {
            structures: Vec::new(),
            bounds: 50.0,
        }
    }

    /// One wall segment at x = 10 spanning y in [-20, 20].
    fn single_wall_world() -> WorldModel {
        WorldModel {
            structures: vec![Structure {
                id: 0,
                kind: StructureKind::Seawall,
                vertices: vec![Point2::new(10.0, -20.0), Point2::new(10.0, 20.0)],
                closed: false,
                height: 3.0,
                visible_above_water: true,
                visible_below_water: true,
                transient_presence: None,
            }],
            bounds: 50.0,
        }
    }

    #[test]
    fn empty_world_gives_empty_outputs() {
        let world = empty_world();
        let sonar = simulate_sonar(
            &world,
            &Pose2::identity(),
            &SensorSpec::sonar(30.0, 64, 32),
            7,
        );
        assert_eq!(sonar.nonzero_count(), 0);

        let lidar = simulate_lidar(
            &world,
            &Pose2::identity(),
            &SensorSpec::lidar(100.0, 90),
            &PartialUsvState::level(1.0),
            7,
        );
        assert!(lidar.is_empty());
    }

    #[test]
    fn sonar_wall_lands_in_correct_range_bin() {
        // Noise-free: every contact must sit in the range bin containing the
        // analytic ray-segment intersection distance.
        let world = single_wall_world();
        let spec = SensorSpec::sonar(30.0, 60, 90);
        let pose = Pose2::identity();
        let grid = simulate_sonar(&world, &pose, &spec, 3);
        assert!(grid.nonzero_count() > 0);
        for (r, b) in grid.contact_cells() {
            let (_, bearing) = grid.cell_center(r, b);
            let present = vec![true];
            let expected = raycast(
                &world,
                Point2::new(0.0, 0.0),
                bearing,
                spec.max_range,
                Domain::BelowWater,
                &present,
            )
            .expect("contact must come from a hit")
            .0;
            let lo = r as f64 * grid.range_resolution;
            let hi = (r + 1) as f64 * grid.range_resolution;
            assert!(
                expected >= lo - 1e-9 && expected <= hi + 1e-9,
                "hit {expected} outside bin [{lo}, {hi})"
            );
        }
        // The wall at x=10 straight ahead: the forward bearing bin holds a
        // contact in the bin containing range 10.
        let forward_bin = grid.angular_bins / 2;
        let column_hit = (0..grid.range_bins).any(|r| grid.get(r, forward_bin) > 0.0);
        assert!(column_hit);
    }

    #[test]
    fn sonar_dropout_one_empties_grid() {
        let world = single_wall_world();
        let mut spec = SensorSpec::sonar(30.0, 64, 32);
        spec.dropout_prob = 1.0;
        let grid = simulate_sonar(&world, &Pose2::identity(), &spec, 5);
        assert_eq!(grid.nonzero_count(), 0);
    }

    #[test]
    fn sonar_intensity_decays_with_range() {
        let world = single_wall_world();
        let spec = SensorSpec::sonar(30.0, 64, 90);
        // Move back so the wall is farther: intensities must drop.
        let near = simulate_sonar(&world, &Pose2::new(5.0, 0.0, 0.0), &spec, 3);
        let far = simulate_sonar(&world, &Pose2::new(-15.0, 0.0, 0.0), &spec, 3);
        let max_near = near.cells.iter().cloned().fold(0.0, f64::max);
        let max_far = far.cells.iter().cloned().fold(0.0, f64::max);
        assert!(max_near > max_far && max_far > 0.0);
    }

    #[test]
    fn lidar_range_gate() {
        let world = single_wall_world();
        let mut spec = SensorSpec::lidar(9.0, 180);
        spec.points_per_hit = 2;
        // Wall at 10 m, max range 9 m: nothing.
        let returns = simulate_lidar(
            &world,
            &Pose2::identity(),
            &spec,
            &PartialUsvState::level(1.0),
            2,
        );
        assert!(returns.is_empty());
    }

    #[test]
    fn lidar_mirror_rate_matches_probability() {
        let world = single_wall_world();
        let mut spec = SensorSpec::lidar(100.0, 256);
        spec.points_per_hit = 8;
        spec.dropout_prob = 0.2;
        let mount = PartialUsvState::level(1.0);
        let mut below = 0usize;
        let mut total = 0usize;
        for seed in 0..8 {
            let returns = simulate_lidar(&world, &Pose2::identity(), &spec, &mount, seed);
            for r in returns {
                // Corrected height: level mount, so just add the sensor
                // height back.
                let corrected = mount.correct(r.to_cartesian_3d());
                total += 1;
                if corrected[2] < 0.0 {
                    below += 1;
                }
            }
        }
        assert!(total > 2000, "want a large sample, got {total}");
        let rate = below as f64 / total as f64;
        assert!((rate - 0.2).abs() < 0.03, "mirror rate {rate}");
    }

    #[test]
    fn lidar_returns_recover_world_points() {
        // Noise-free geometry round trip: correcting a return and mapping it
        // through the robot pose must land on the wall plane x = 10.
        let world = single_wall_world();
        let mut spec = SensorSpec::lidar(100.0, 64);
        spec.fov = 1.0;
        let mount = PartialUsvState::new(1.4, 0.08, -0.05).unwrap();
        let pose = Pose2::new(-3.0, 2.0, 0.1);
        let returns = simulate_lidar(&world, &pose, &spec, &mount, 3);
        assert!(!returns.is_empty());
        for r in &returns {
            let leveled = mount.correct(r.to_cartesian_3d());
            let world_pt = pose.transform_point(&Point2::new(leveled[0], leveled[1]));
            assert!((world_pt.x - 10.0).abs() < 1e-6, "x = {}", world_pt.x);
            assert!(leveled[2] > 0.0 && leveled[2] <= 3.0);
        }
    }

    #[test]
    fn dead_reckoning_zero_noise_is_exact() {
        let truth: Vec<Pose2> = (0..20)
            .map(|k| Pose2::new(k as f64, (k as f64 * 0.3).sin(), 0.1 * k as f64))
            .collect();
        let dr = simulate_dead_reckoning(&truth, 0.0, 0.0, 9);
        for (a, b) in truth.iter().zip(dr.iter()) {
            assert!((a.x - b.x).abs() < 1e-9);
            assert!((a.y - b.y).abs() < 1e-9);
        }
    }

    #[test]
    fn dead_reckoning_single_pose() {
        let truth = vec![Pose2::new(1.0, 2.0, 0.5)];
        let dr = simulate_dead_reckoning(&truth, 0.1, 0.1, 9);
        assert_eq!(dr, truth);
    }

    #[test]
    fn dead_reckoning_error_grows_like_sqrt_steps() {
        // Straight 1000-step line, translation noise only: terminal RMS error
        // across seeds follows sqrt(steps) * sigma.
        let sigma = 0.01;
        let truth: Vec<Pose2> = (0..=1000).map(|k| Pose2::new(k as f64, 0.0, 0.0)).collect();
        let rms_at = |step: usize| -> f64 {
            let mut acc = 0.0;
            for seed in 0..100u64 {
                let dr = simulate_dead_reckoning(&truth, sigma, 0.0, seed);
                let e = libm::hypot(dr[step].x - truth[step].x, dr[step].y - truth[step].y);
                acc += e * e;
            }
            libm::sqrt(acc / 100.0)
        };
        let rms_250 = rms_at(250);
        let rms_1000 = rms_at(1000);
        // Expected terminal RMS: sigma * sqrt(2 * steps) over the two
        // translation axes.
        let expected = sigma * libm::sqrt(2.0 * 1000.0);
        assert!(
            (rms_1000 / expected - 1.0).abs() < 0.25,
            "rms {rms_1000} vs expected {expected}"
        );
        let ratio = rms_1000 / rms_250;
        assert!((ratio - 2.0).abs() < 0.5, "growth ratio {ratio}");
    }

    #[test]
    fn transient_structures_flicker() {
        let world = generate_world_with_transients();
        let mut seen_present = false;
        let mut seen_absent = false;
        for seed in 0..64 {
            let presence = frame_presence(&world, seed);
            let transient_idx = world
                .structures
                .iter()
                .position(|s| s.transient_presence.is_some())
                .unwrap();
            if presence[transient_idx] {
                seen_present = true;
            } else {
                seen_absent = true;
            }
        }
        assert!(seen_present && seen_absent);
    }

    fn generate_world_with_transients() -> WorldModel {
        use crate::simenv::world::WorldOptions;
        crate::simenv::world::generate_world_with(
            1,
            WorldTemplate::Harbor,
            &WorldOptions {
                transient_count: 1,
                transient_presence: 0.5,
                ..WorldOptions::default()
            },
        )
    }

    #[test]
    fn identical_inputs_identical_streams() {
        let world = generate_world(4, WorldTemplate::Harbor);
        let spec = {
            let mut s = SensorSpec::sonar(30.0, 64, 64);
            s.noise_sigma_range = 0.05;
            s.noise_sigma_intensity = 0.05;
            s.dropout_prob = 0.05;
            s
        };
        let pose = Pose2::new(10.0, -5.0, 0.7);
        let a = simulate_sonar(&world, &pose, &spec, 99);
        let b = simulate_sonar(&world, &pose, &spec, 99);
        assert_eq!(a, b);
    }
}
