//! Static SVG rendering of the joint map and the per-robot trajectories.
//! Output is plain text with fixed-precision coordinates, so a given product
//! always renders to identical bytes.

use std::fmt::Write as _;

use tideline_core::geom::{Point2, Pose2};

use crate::mission::MapProduct;

const LIDAR_COLOR: &str = "#1f77b4";
const SONAR_COLORS: [&str; 4] = ["#ff7f0e", "#2ca02c", "#9467bd", "#8c564b"];
const CLOSURE_COLOR: &str = "#d62728";
const GRID_COLOR: &str = "#d0d0d0";
const GRID_SPACING: f64 = 10.0;

struct Frame {
    min_x: f64,
    min_y: f64,
    max_x: f64,
    max_y: f64,
    scale: f64,
}

impl Frame {
    fn around(points: impl Iterator<Item = Point2>, pad: f64) -> Frame {
        let mut min_x = f64::INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        let mut any = false;
        for p in points {
            any = true;
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        if !any {
            min_x = -10.0;
            min_y = -10.0;
            max_x = 10.0;
            max_y = 10.0;
        }
        Frame {
            min_x: min_x - pad,
            min_y: min_y - pad,
            max_x: max_x + pad,
            max_y: max_y + pad,
            scale: 6.0,
        }
    }

    fn width(&self) -> f64 {
        (self.max_x - self.min_x) * self.scale
    }

    fn height(&self) -> f64 {
        (self.max_y - self.min_y) * self.scale
    }

    /// World to screen; the y axis flips so north is up.
    fn map(&self, p: &Point2) -> (f64, f64) {
        (
            (p.x - self.min_x) * self.scale,
            (self.max_y - p.y) * self.scale,
        )
    }
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn grid_lines(out: &mut String, frame: &Frame) {
    let x0 = (frame.min_x / GRID_SPACING).ceil() as i64;
    let x1 = (frame.max_x / GRID_SPACING).floor() as i64;
    for gx in x0..=x1 {
        let x = gx as f64 * GRID_SPACING;
        let (sx, _) = frame.map(&Point2::new(x, 0.0));
        let _ = writeln!(
            out,
            r#"<line x1="{x0}" y1="0" x2="{x0}" y2="{h}" stroke="{GRID_COLOR}" stroke-width="0.5"/>"#,
            x0 = fmt2(sx),
            h = fmt2(frame.height()),
        );
    }
    let y0 = (frame.min_y / GRID_SPACING).ceil() as i64;
    let y1 = (frame.max_y / GRID_SPACING).floor() as i64;
    for gy in y0..=y1 {
        let y = gy as f64 * GRID_SPACING;
        let (_, sy) = frame.map(&Point2::new(0.0, y));
        let _ = writeln!(
            out,
            r#"<line x1="0" y1="{y0}" x2="{w}" y2="{y0}" stroke="{GRID_COLOR}" stroke-width="0.5"/>"#,
            y0 = fmt2(sy),
            w = fmt2(frame.width()),
        );
    }
}

fn points(out: &mut String, frame: &Frame, cloud: &[Point2], color: &str) {
    for p in cloud {
        let (x, y) = frame.map(p);
        let _ = writeln!(
            out,
            r#"<circle cx="{}" cy="{}" r="0.8" fill="{color}"/>"#,
            fmt2(x),
            fmt2(y)
        );
    }
}

fn polyline(out: &mut String, frame: &Frame, poses: &[Pose2], color: &str, width: f64) {
    if poses.len() < 2 {
        return;
    }
    let mut path = String::new();
    for p in poses {
        let (x, y) = frame.map(&Point2::new(p.x, p.y));
        let _ = write!(path, "{},{} ", fmt2(x), fmt2(y));
    }
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
        path.trim_end()
    );
}

/// Joint map: LiDAR points, per-vehicle sonar points, trajectories, accepted
/// closures as red segments, and a 10 m grid, all in the anchor frame.
pub fn render_map(product: &MapProduct) -> String {
    let all_points = product
        .lidar_points
        .points
        .iter()
        .copied()
        .chain(
            product
                .sonar_points
                .iter()
                .flat_map(|(_, c)| c.points.iter().copied()),
        )
        .chain(
            product
                .trajectories
                .iter()
                .flat_map(|(_, t)| t.iter().map(|p| Point2::new(p.x, p.y))),
        );
    let frame = Frame::around(all_points, 8.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = fmt2(frame.width()),
        h = fmt2(frame.height()),
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    grid_lines(&mut out, &frame);
    points(&mut out, &frame, &product.lidar_points.points, LIDAR_COLOR);
    for (slot, (_, cloud)) in product.sonar_points.iter().enumerate() {
        points(
            &mut out,
            &frame,
            &cloud.points,
            SONAR_COLORS[slot % SONAR_COLORS.len()],
        );
    }
    for (slot, (id, trajectory)) in product.trajectories.iter().enumerate() {
        let color = if *id == 0 {
            LIDAR_COLOR
        } else {
            SONAR_COLORS[(slot.max(1) - 1) % SONAR_COLORS.len()]
        };
        polyline(&mut out, &frame, trajectory, color, 1.5);
    }
    for (a, b) in &product.closures {
        let (x1, y1) = frame.map(a);
        let (x2, y2) = frame.map(b);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{CLOSURE_COLOR}" stroke-width="1"/>"#,
            fmt2(x1),
            fmt2(y1),
            fmt2(x2),
            fmt2(y2)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Trajectories only (estimates per robot), same conventions as the map.
pub fn render_trajectories(product: &MapProduct) -> String {
    let all_points = product
        .trajectories
        .iter()
        .flat_map(|(_, t)| t.iter().map(|p| Point2::new(p.x, p.y)));
    let frame = Frame::around(all_points, 8.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = fmt2(frame.width()),
        h = fmt2(frame.height()),
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    grid_lines(&mut out, &frame);
    for (slot, (id, trajectory)) in product.trajectories.iter().enumerate() {
        let color = if *id == 0 {
            LIDAR_COLOR
        } else {
            SONAR_COLORS[(slot.max(1) - 1) % SONAR_COLORS.len()]
        };
        polyline(&mut out, &frame, trajectory, color, 1.5);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use tideline_core::geom::Cloud2;

    #[test]
    fn empty_product_renders_grid_only() {
        let svg = render_map(&MapProduct::default());
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<line"));
        assert!(!svg.contains("<circle"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let product = MapProduct {
            lidar_points: Cloud2::new(vec![Point2::new(1.0, 2.0), Point2::new(-3.0, 4.0)]),
            sonar_points: vec![(1, Cloud2::new(vec![Point2::new(0.5, -0.5)]))],
            trajectories: vec![(0, vec![Pose2::identity(), Pose2::new(5.0, 0.0, 0.0)])],
            closures: vec![(Point2::new(0.0, 0.0), Point2::new(1.0, 1.0))],
        };
        assert_eq!(render_map(&product), render_map(&product));
        assert_eq!(render_trajectories(&product), render_trajectories(&product));
    }

    #[test]
    fn closure_segments_touch_trajectory_vertices() {
        // The closure endpoints are trajectory vertices; the rendered line
        // coordinates must match the rendered polyline vertices.
        let a = Pose2::new(2.0, 3.0, 0.0);
        let b = Pose2::new(8.0, -1.0, 0.0);
        let product = MapProduct {
            lidar_points: Cloud2::default(),
            sonar_points: vec![],
            trajectories: vec![
                (0, vec![a, Pose2::new(4.0, 3.0, 0.0)]),
                (1, vec![b, Pose2::new(9.0, 0.0, 0.0)]),
            ],
            closures: vec![(Point2::new(a.x, a.y), Point2::new(b.x, b.y))],
        };
        let svg = render_map(&product);
        let line = svg
            .lines()
            .find(|l| l.contains(CLOSURE_COLOR))
            .expect("closure line present");
        let coord = |attr: &str| -> String {
            let start = line.find(&format!("{attr}=\"")).unwrap() + attr.len() + 2;
            let end = line[start..].find('"').unwrap();
            line[start..start + end].to_string()
        };
        let (x1, y1) = (coord("x1"), coord("y1"));
        let polyline_line = svg
            .lines()
            .find(|l| l.contains("<polyline"))
            .expect("trajectory present");
        assert!(
            polyline_line.contains(&format!("{x1},{y1}")),
            "vertex {x1},{y1} missing from {polyline_line}"
        );
    }
}
