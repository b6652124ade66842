//! Trajectory error metrics: gauge-free MAE/RMSE after a single rigid
//! alignment of the estimate onto the truth.

use std::fmt;

use tideline_core::geom::{Point2, Pose2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryError {
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsError {
    LengthMismatch,
    Empty,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::LengthMismatch => write!(f, "estimate and truth lengths differ"),
            MetricsError::Empty => write!(f, "no poses to compare"),
        }
    }
}

impl std::error::Error for MetricsError {}

/// Least-squares rigid transform g minimizing `sum |g(est_i) - truth_i|^2`.
pub fn align_rigid(estimate: &[Point2], truth: &[Point2]) -> Pose2 {
    let n = estimate.len() as f64;
    let mut me = Point2::new(0.0, 0.0);
    let mut mt = Point2::new(0.0, 0.0);
    for (e, t) in estimate.iter().zip(truth.iter()) {
        me.x += e.x;
        me.y += e.y;
        mt.x += t.x;
        mt.y += t.y;
    }
    me.x /= n;
    me.y /= n;
    mt.x /= n;
    mt.y /= n;
    let mut dot = 0.0;
    let mut cross = 0.0;
    for (e, t) in estimate.iter().zip(truth.iter()) {
        let ex = e.x - me.x;
        let ey = e.y - me.y;
        let tx = t.x - mt.x;
        let ty = t.y - mt.y;
        dot += ex * tx + ey * ty;
        cross += ex * ty - ey * tx;
    }
    let theta = cross.atan2(dot);
    let (s, c) = theta.sin_cos();
    Pose2::new(
        mt.x - (c * me.x - s * me.y),
        mt.y - (s * me.x + c * me.y),
        theta,
    )
}

/// Per-pose position errors after one rigid alignment of the estimated
/// trajectory onto the truth; MAE is their mean, RMSE their quadratic mean.
/// Inputs must be matched index by index.
pub fn compute_trajectory_error(
    estimate: &[Point2],
    truth: &[Point2],
) -> Result<TrajectoryError, MetricsError> {
    if estimate.len() != truth.len() {
        return Err(MetricsError::LengthMismatch);
    }
    if estimate.is_empty() {
        return Err(MetricsError::Empty);
    }
    let g = align_rigid(estimate, truth);
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for (e, t) in estimate.iter().zip(truth.iter()) {
        let aligned = g.transform_point(e);
        let err = aligned.dist(t);
        abs_sum += err;
        sq_sum += err * err;
    }
    let n = estimate.len() as f64;
    Ok(TrajectoryError {
        mae: abs_sum / n,
        rmse: (sq_sum / n).sqrt(),
    })
}

pub fn poses_to_points(poses: &[Pose2]) -> Vec<Point2> {
    poses.iter().map(|p| Point2::new(p.x, p.y)).collect()
}
