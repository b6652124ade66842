//! Cross-module checks that run the preprocessing chain against simulated
//! sensor data, with the noise-free simulation as the oracle.

use tideline_core::geom::{Point2, Pose2};
use tideline_core::registration::voxel_downsample;
use tideline_core::sensing::{
    cfar_detect, correct_and_crop_lidar, project_lidar_2d, CfarParams, PartialUsvState,
};
use tideline_core::simenv::{
    generate_world, raycast, simulate_lidar, simulate_sonar, Domain, SensorSpec, WorldTemplate,
};

#[test]
fn cfar_recall_and_false_alarms_against_noise_free_oracle() {
    // Same geometry with and without speckle; the noise-free contact set is
    // the oracle. Tuned detector: recall >= 0.9, cell false-alarm <= 0.01.
    let world = generate_world(11, WorldTemplate::Harbor);
    let mut clean_spec = SensorSpec::sonar(30.0, 64, 96);
    clean_spec.noise_sigma_range = 0.0;
    let mut noisy_spec = clean_spec;
    noisy_spec.noise_sigma_intensity = 0.08;

    let params = CfarParams {
        guard: 2,
        train: 8,
        threshold_factor: 5.0,
        noise_floor: 1e-6,
    };
    let mut hits = 0usize;
    let mut truth_cells = 0usize;
    let mut false_alarms = 0usize;
    let mut empty_cells = 0usize;
    for (i, pose) in [
        Pose2::new(20.0, 20.0, 0.3),
        Pose2::new(40.0, -10.0, 2.0),
        Pose2::new(0.0, 40.0, -1.2),
        Pose2::new(30.0, 0.0, 1.0),
    ]
    .iter()
    .enumerate()
    {
        let seed = 1000 + i as u64;
        let clean = simulate_sonar(&world, pose, &clean_spec, seed);
        let noisy = simulate_sonar(&world, pose, &noisy_spec, seed);
        let detected = cfar_detect(&noisy, &params).unwrap();
        for r in 0..clean.range_bins {
            for b in 0..clean.angular_bins {
                let truth = clean.get(r, b) > 0.0;
                let got = detected.get(r, b) > 0.0;
                if truth {
                    truth_cells += 1;
                    if got {
                        hits += 1;
                    }
                } else {
                    empty_cells += 1;
                    if got {
                        false_alarms += 1;
                    }
                }
            }
        }
    }
    assert!(truth_cells > 50, "oracle produced too few contacts");
    let recall = hits as f64 / truth_cells as f64;
    let fa_rate = false_alarms as f64 / empty_cells as f64;
    assert!(recall >= 0.9, "recall {recall}");
    assert!(fa_rate <= 0.01, "false alarm rate {fa_rate}");
}

#[test]
fn sonar_contacts_back_project_onto_structures() {
    // Zero noise: every contact cell center must land within one range bin
    // of a below-water structure along its ray.
    let world = generate_world(3, WorldTemplate::Bridge);
    let spec = SensorSpec::sonar(30.0, 64, 72);
    let present = vec![true; world.structures.len()];
    for (i, pose) in [Pose2::new(-30.0, -30.0, 0.7), Pose2::new(10.0, 5.0, -2.0)]
        .iter()
        .enumerate()
    {
        let grid = simulate_sonar(&world, pose, &spec, 50 + i as u64);
        for (r, b) in grid.contact_cells() {
            let (range, bearing) = grid.cell_center(r, b);
            let hit = raycast(
                &world,
                Point2::new(pose.x, pose.y),
                pose.theta() + bearing,
                spec.max_range + 1.0,
                Domain::BelowWater,
                &present,
            )
            .expect("contact without a structure on the ray");
            assert!(
                (hit.0 - range).abs() <= grid.range_resolution,
                "cell at {range} but structure at {}",
                hit.0
            );
        }
    }
}

#[test]
fn mirror_points_are_removed_by_the_crop() {
    let world = generate_world(7, WorldTemplate::Harbor);
    let mut spec = SensorSpec::lidar(120.0, 360);
    spec.dropout_prob = 0.25;
    let mount = PartialUsvState::new(1.5, 0.05, -0.03).unwrap();
    let pose = Pose2::new(20.0, 0.0, 0.5);
    let returns = simulate_lidar(&world, &pose, &spec, &mount, 77);
    assert!(!returns.is_empty());
    let mirrors = returns
        .iter()
        .filter(|r| mount.correct(r.to_cartesian_3d())[2] < 0.0)
        .count();
    assert!(mirrors > 0, "stress mode must inject mirror points");
    let cropped = correct_and_crop_lidar(&returns, &mount);
    assert_eq!(cropped.len(), returns.len() - mirrors);
    for p in &cropped.points {
        assert!(p[2] > 0.0);
    }
}

#[test]
fn projection_band_count_matches_simulator_heights() {
    let world = generate_world(5, WorldTemplate::Harbor);
    let spec = SensorSpec::lidar(120.0, 240);
    let mount = PartialUsvState::level(1.2);
    let pose = Pose2::new(10.0, -10.0, 1.1);
    let returns = simulate_lidar(&world, &pose, &spec, &mount, 5);
    let corrected = correct_and_crop_lidar(&returns, &mount);
    let h_max = 2.0;
    // Independent count of in-band points.
    let expected = corrected
        .points
        .iter()
        .filter(|p| p[2] > 0.0 && p[2] <= h_max)
        .count();
    let cloud = project_lidar_2d(&corrected, h_max);
    assert_eq!(cloud.len(), expected);
    assert!(!cloud.is_empty());
}

#[test]
fn voxel_downsample_of_simulated_submap_matches_occupancy() {
    let world = generate_world(2, WorldTemplate::Waterfront);
    let spec = SensorSpec::lidar(120.0, 480);
    let mount = PartialUsvState::level(1.2);
    let mut merged = tideline_core::geom::Cloud2::default();
    for k in 0..4 {
        let pose = Pose2::new(-30.0 + 3.0 * k as f64, -20.0, 0.8);
        let returns = simulate_lidar(&world, &pose, &spec, &mount, 60 + k);
        let cloud = project_lidar_2d(&correct_and_crop_lidar(&returns, &mount), 2.0);
        merged.extend_from(&cloud.transformed(&pose));
    }
    let cell = 0.2;
    let down = voxel_downsample(&merged, cell);
    let mut keys: Vec<(i64, i64)> = merged
        .points
        .iter()
        .map(|p| {
            (
                libm::floor(p.x / cell) as i64,
                libm::floor(p.y / cell) as i64,
            )
        })
        .collect();
    keys.sort();
    keys.dedup();
    assert_eq!(down.len(), keys.len());
}
