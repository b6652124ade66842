//! Ground-truth trajectory sampling from waypoint specs.

use alloc::vec::Vec;
use core::fmt;

use crate::geom::{Point2, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobotKind {
    Usv,
    Auv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub robot_id: u16,
    pub robot_kind: RobotKind,
    pub waypoints: Vec<Point2>,
    /// Constant speed along the waypoint polyline, m/s.
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryError {
    TooFewWaypoints,
    NonPositiveSpeed,
    NonPositiveStep,
}

impl fmt::Display for TrajectoryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrajectoryError::TooFewWaypoints => write!(f, "trajectory needs at least 2 waypoints"),
            TrajectoryError::NonPositiveSpeed => write!(f, "speed must be positive"),
            TrajectoryError::NonPositiveStep => write!(f, "sample step must be positive"),
        }
    }
}

impl core::error::Error for TrajectoryError {}

/// Sample the trajectory at a fixed time step. Heading at each sample points
/// at the next sample (the vehicle moves where it points, so synthesized
/// body velocities stay forward even across waypoint corners); the final
/// sample sits on the last waypoint.
pub fn sample_truth(spec: &TrajectorySpec, dt: f64) -> Result<Vec<TimedPose>, TrajectoryError> {
    if spec.waypoints.len() < 2 {
        return Err(TrajectoryError::TooFewWaypoints);
    }
    if !(spec.speed > 0.0) {
        return Err(TrajectoryError::NonPositiveSpeed);
    }
    if !(dt > 0.0) {
        return Err(TrajectoryError::NonPositiveStep);
    }

    // Cumulative arc length per waypoint; zero-length segments are skipped
    // when deriving headings.
    let mut cumulative = Vec::with_capacity(spec.waypoints.len());
    let mut total = 0.0;
    cumulative.push(0.0);
    for w in spec.waypoints.windows(2) {
        total += w[0].dist(&w[1]);
        cumulative.push(total);
    }
    let duration = total / spec.speed;
    let steps = libm::floor(duration / dt) as usize;

    let mut out = Vec::with_capacity(steps + 2);
    for k in 0..=steps {
        let t = k as f64 * dt;
        out.push(TimedPose {
            t,
            pose: pose_at(spec, &cumulative, (t * spec.speed).min(total)),
        });
    }
    if out.last().map(|p| p.t < duration).unwrap_or(true) {
        out.push(TimedPose {
            t: duration,
            pose: pose_at(spec, &cumulative, total),
        });
    }
    // Re-aim each heading at the next sample.
    for k in 0..out.len().saturating_sub(1) {
        let (a, b) = (out[k].pose, out[k + 1].pose);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        if libm::hypot(dx, dy) > 1e-9 {
            out[k].pose = Pose2::new(a.x, a.y, libm::atan2(dy, dx));
        }
    }
    if out.len() >= 2 {
        let last = out.len() - 1;
        let heading = out[last - 1].pose.theta();
        let p = out[last].pose;
        out[last].pose = Pose2::new(p.x, p.y, heading);
    }
    Ok(out)
}

fn pose_at(spec: &TrajectorySpec, cumulative: &[f64], s: f64) -> Pose2 {
    let n = spec.waypoints.len();
    let mut seg = n - 2;
    for i in 0..n - 1 {
        if s <= cumulative[i + 1] || i == n - 2 {
            seg = i;
            if s <= cumulative[i + 1] {
                break;
            }
        }
    }
    // Walk back over zero-length segments for a defined heading.
    let mut a = spec.waypoints[seg];
    let mut b = spec.waypoints[seg + 1];
    let mut len = a.dist(&b);
    let mut back = seg;
    while len == 0.0 && back > 0 {
        back -= 1;
        a = spec.waypoints[back];
        b = spec.waypoints[back + 1];
        len = a.dist(&b);
    }
    if len == 0.0 {
        return Pose2::new(spec.waypoints[seg].x, spec.waypoints[seg].y, 0.0);
    }
    let heading = libm::atan2(b.y - a.y, b.x - a.x);
    let seg_start = cumulative[seg];
    let seg_len = cumulative[seg + 1] - seg_start;
    let frac = if seg_len > 0.0 {
        ((s - seg_start) / seg_len).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let a = spec.waypoints[seg];
    let b = spec.waypoints[seg + 1];
    Pose2::new(a.x + frac * (b.x - a.x), a.y + frac * (b.y - a.y), heading)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spec(waypoints: Vec<Point2>, speed: f64) -> TrajectorySpec {
        TrajectorySpec {
            robot_id: 0,
            robot_kind: RobotKind::Usv,
            waypoints,
            speed,
        }
    }

    #[test]
    fn straight_line_sampling() {
        let s = spec(vec![Point2::new(0.0, 0.0), Point2::new(10.0, 0.0)], 2.0);
        let samples = sample_truth(&s, 1.0).unwrap();
        assert_eq!(samples.len(), 6);
        assert_eq!(samples[0].pose, Pose2::new(0.0, 0.0, 0.0));
        assert!((samples[3].pose.x - 6.0).abs() < 1e-12);
        assert!((samples[5].pose.x - 10.0).abs() < 1e-12);
    }

    #[test]
    fn heading_follows_segments() {
        let s = spec(
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(10.0, 0.0),
                Point2::new(10.0, 10.0),
            ],
            1.0,
        );
        let samples = sample_truth(&s, 1.0).unwrap();
        assert!((samples[2].pose.theta() - 0.0).abs() < 1e-12);
        let late = &samples[15];
        assert!((late.pose.theta() - core::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn validation_errors() {
        assert_eq!(
            sample_truth(&spec(vec![Point2::new(0.0, 0.0)], 1.0), 1.0),
            Err(TrajectoryError::TooFewWaypoints)
        );
        assert_eq!(
            sample_truth(
                &spec(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)], 0.0),
                1.0
            ),
            Err(TrajectoryError::NonPositiveSpeed)
        );
    }

    #[test]
    fn final_sample_reaches_last_waypoint() {
        let s = spec(vec![Point2::new(0.0, 0.0), Point2::new(7.3, 0.0)], 2.0);
        let samples = sample_truth(&s, 0.5).unwrap();
        let last = samples.last().unwrap();
        assert!((last.pose.x - 7.3).abs() < 1e-12);
    }
}
