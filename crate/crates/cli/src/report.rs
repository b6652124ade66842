//! Output artifacts: metric/bandwidth/runtime CSVs, map and trajectory SVGs,
//! observation logs, and the graph snapshot. One mission writes one output
//! directory; `report` re-renders the SVGs from the persisted logs alone.
//!
//! File formats (all little-endian text, one record per line):
//!   metrics.csv     case,auv_id,mode,mae_m,rmse_m,status
//!   bandwidth.csv   Table-style message size stats (kbits) and rates
//!   runtimes.csv    module,mean_ms,std_ms,samples
//!   map_lidar.tsv   x<TAB>y               (anchor frame)
//!   map_sonar_<id>.tsv  x<TAB>y
//!   traj_<id>.tsv   x<TAB>y<TAB>theta
//!   closures.tsv    usv_x<TAB>usv_y<TAB>auv_x<TAB>auv_y
//!   truth_<id>.tsv  x<TAB>y<TAB>theta     (oracle, metrics only)
//!   graph.txt       factor graph snapshot

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use tideline_core::geom::{Cloud2, Point2, Pose2};

use crate::mission::{MapProduct, MissionResult};
use crate::render::{render_map, render_trajectories};

pub fn metrics_csv(result: &MissionResult) -> String {
    let mut out = String::from("case,auv_id,mode,mae_m,rmse_m,status\n");
    for report in &result.reports {
        let _ = writeln!(
            out,
            "{},{},dead-reckoning,{:.6},{:.6},{}",
            result.scenario_name,
            report.id,
            report.dead_reckoning.mae,
            report.dead_reckoning.rmse,
            "baseline"
        );
        match &report.multi_robot {
            Some(err) => {
                let _ = writeln!(
                    out,
                    "{},{},multi-robot,{:.6},{:.6},{}",
                    result.scenario_name,
                    report.id,
                    err.mae,
                    err.rmse,
                    report.status.as_str()
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{},{},multi-robot,,,{}",
                    result.scenario_name,
                    report.id,
                    report.status.as_str()
                );
            }
        }
    }
    out
}

pub fn bandwidth_csv(result: &MissionResult) -> String {
    let b = &result.bandwidth;
    let mut out = String::from("metric,value\n");
    let _ = writeln!(out, "messages,{}", b.message_count);
    let _ = writeln!(out, "mean_size_kbits,{:.6}", b.mean_kbits);
    let _ = writeln!(out, "std_size_kbits,{:.6}", b.std_kbits);
    let _ = writeln!(out, "min_size_kbits,{:.6}", b.min_kbits);
    let _ = writeln!(out, "max_size_kbits,{:.6}", b.max_kbits);
    let _ = writeln!(out, "total_kbits_per_s,{:.6}", b.total_kbits_per_s);
    for (id, rate) in &b.per_robot_kbits_per_s {
        let _ = writeln!(out, "auv{id}_kbits_per_s,{rate:.6}");
    }
    let _ = writeln!(out, "channel_delivered_bits,{}", result.channel_delivered_bits);
    let _ = writeln!(out, "codec_delivered_bits,{}", result.codec_delivered_bits);
    out
}

pub fn runtimes_csv(result: &MissionResult) -> String {
    let mut out = String::from("module,mean_ms,std_ms,samples\n");
    for (name, timer) in [
        ("point_cloud_registration", &result.runtime.registration),
        ("pcm", &result.runtime.pcm),
        ("rectangle_compression", &result.runtime.compression),
        ("graph_optimization", &result.runtime.optimize),
    ] {
        let (mean, std) = timer.mean_std();
        let _ = writeln!(
            out,
            "{name},{mean:.3},{std:.3},{}",
            timer.samples_ms.len()
        );
    }
    out
}

fn cloud_tsv(cloud: &Cloud2) -> String {
    let mut out = String::new();
    for p in &cloud.points {
        let _ = writeln!(out, "{:.4}\t{:.4}", p.x, p.y);
    }
    out
}

fn trajectory_tsv(poses: &[Pose2]) -> String {
    let mut out = String::new();
    for p in poses {
        let _ = writeln!(out, "{:.6}\t{:.6}\t{:.6}", p.x, p.y, p.theta());
    }
    out
}

/// Write the full artifact set. `runtimes.csv` is the only file expected to
/// differ between identical runs.
pub fn write_all(result: &MissionResult, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(result))?;
    fs::write(dir.join("bandwidth.csv"), bandwidth_csv(result))?;
    fs::write(dir.join("runtimes.csv"), runtimes_csv(result))?;
    fs::write(dir.join("map.svg"), render_map(&result.product))?;
    fs::write(
        dir.join("trajectories.svg"),
        render_trajectories(&result.product),
    )?;
    fs::write(dir.join("graph.txt"), &result.graph_snapshot)?;
    fs::write(dir.join("map_lidar.tsv"), cloud_tsv(&result.product.lidar_points))?;
    for (id, cloud) in &result.product.sonar_points {
        fs::write(dir.join(format!("map_sonar_{id}.tsv")), cloud_tsv(cloud))?;
    }
    for (id, trajectory) in &result.product.trajectories {
        fs::write(dir.join(format!("traj_{id}.tsv")), trajectory_tsv(trajectory))?;
    }
    let mut closures = String::new();
    for (u, a) in &result.product.closures {
        let _ = writeln!(closures, "{:.4}\t{:.4}\t{:.4}\t{:.4}", u.x, u.y, a.x, a.y);
    }
    fs::write(dir.join("closures.tsv"), closures)?;
    // Oracle logs: ground truth per keyframe, used by metrics only.
    fs::write(
        dir.join("truth_0.tsv"),
        trajectory_tsv(&result.truth.usv_keyframe_truth),
    )?;
    for auv in &result.truth.auvs {
        fs::write(
            dir.join(format!("truth_{}.tsv", auv.id)),
            trajectory_tsv(&auv.keyframe_truth),
        )?;
        fs::write(
            dir.join(format!("dr_{}.tsv", auv.id)),
            trajectory_tsv(&auv.dead_reckoning),
        )?;
    }
    Ok(())
}

fn parse_cloud_tsv(text: &str) -> Cloud2 {
    Cloud2::new(
        text.lines()
            .filter_map(|l| {
                let mut it = l.split('\t');
                let x = it.next()?.parse().ok()?;
                let y = it.next()?.parse().ok()?;
                Some(Point2::new(x, y))
            })
            .collect(),
    )
}

fn parse_trajectory_tsv(text: &str) -> Vec<Pose2> {
    text.lines()
        .filter_map(|l| {
            let mut it = l.split('\t');
            let x: f64 = it.next()?.parse().ok()?;
            let y: f64 = it.next()?.parse().ok()?;
            let theta: f64 = it.next()?.parse().ok()?;
            Some(Pose2::new(x, y, theta))
        })
        .collect()
}

/// Rebuild a map product from a written output directory and re-render the
/// SVGs into `out_dir`.
pub fn rerender_from_logs(logs_dir: &Path, out_dir: &Path) -> std::io::Result<()> {
    let mut product = MapProduct {
        lidar_points: parse_cloud_tsv(&fs::read_to_string(logs_dir.join("map_lidar.tsv"))?),
        ..MapProduct::default()
    };
    let mut entries: Vec<PathBuf> = fs::read_dir(logs_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in &entries {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(id) = name
            .strip_prefix("map_sonar_")
            .and_then(|s| s.strip_suffix(".tsv"))
        {
            if let Ok(id) = id.parse::<u16>() {
                product
                    .sonar_points
                    .push((id, parse_cloud_tsv(&fs::read_to_string(path)?)));
            }
        }
        if let Some(id) = name
            .strip_prefix("traj_")
            .and_then(|s| s.strip_suffix(".tsv"))
        {
            if let Ok(id) = id.parse::<u16>() {
                product
                    .trajectories
                    .push((id, parse_trajectory_tsv(&fs::read_to_string(path)?)));
            }
        }
    }
    product.trajectories.sort_by_key(|(id, _)| *id);
    product.sonar_points.sort_by_key(|(id, _)| *id);
    if let Ok(text) = fs::read_to_string(logs_dir.join("closures.tsv")) {
        for line in text.lines() {
            let vals: Vec<f64> = line.split('\t').filter_map(|v| v.parse().ok()).collect();
            if vals.len() == 4 {
                product
                    .closures
                    .push((Point2::new(vals[0], vals[1]), Point2::new(vals[2], vals[3])));
            }
        }
    }
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("map.svg"), render_map(&product))?;
    fs::write(out_dir.join("trajectories.svg"), render_trajectories(&product))?;
    Ok(())
}
