//! Submap assembly and globally-initialized SE(2) registration.
//!
//! Loop-closure candidates pair a sonar keyframe with a LiDAR keyframe whose
//! relative transform is unknown (the vehicles share no reference frame), so
//! registration runs in two stages: a branch-and-bound search over the whole
//! SE(2) box — rotation intervals crossed with a translation square, bounded
//! from below through a truncated distance transform of the target — followed
//! by point-to-point ICP refinement. A closure is only emitted when the
//! registered sonar cloud overlaps the LiDAR cloud well enough.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::geom::{Cloud2, Point2, Pose2};
use crate::mat3::Mat3;
use crate::odometry::Keyframe;
use crate::spatial::GridIndex;

/// Nearest-neighbor radius of the overlap metric; also the truncation cap of
/// the registration objective so one robust radius is used throughout.
pub const OVERLAP_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationParams {
    /// Voxel edge used to downsample both submaps, meters.
    pub voxel_size: f64,
    /// Half-extent of the translation search box, meters.
    pub translation_bound: f64,
    /// Branch-and-bound leaf sizes: half-widths below which a node is
    /// evaluated but not split.
    pub rotation_leaf: f64,
    pub translation_leaf: f64,
    /// Node expansion budget; exceeding it returns the best found so far
    /// with `optimal = false`. Bad candidates burn the whole budget (their
    /// cost surface is flat near the truncation cap), so this bounds the
    /// per-candidate cost.
    pub max_expansions: usize,
    /// Stop searching once the best cost drops below this: the basin is
    /// found and the polish stage finishes the job.
    pub good_enough_cost: f64,
    pub icp_max_iterations: usize,
    /// Correspondences beyond this distance are trimmed, meters.
    pub icp_max_correspondence: f64,
    /// ICP stops when the relative residual change drops below this.
    pub icp_relative_tolerance: f64,
    /// Minimum overlap for a candidate to become a loop closure.
    pub o_min: f64,
    /// Closure covariance model: sigma = floor + slope * (1 - overlap).
    pub sigma_xy_floor: f64,
    pub sigma_xy_slope: f64,
    pub sigma_theta_floor: f64,
    pub sigma_theta_slope: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            voxel_size: 0.2,
            translation_bound: 15.0,
            rotation_leaf: 1.5 * core::f64::consts::PI / 180.0,
            translation_leaf: 0.25,
            max_expansions: 5_000,
            good_enough_cost: 0.12,
            icp_max_iterations: 40,
            icp_max_correspondence: OVERLAP_RADIUS,
            icp_relative_tolerance: 1e-4,
            o_min: 0.75,
            sigma_xy_floor: 0.3,
            sigma_xy_slope: 1.0,
            sigma_theta_floor: 2.0 * core::f64::consts::PI / 180.0,
            sigma_theta_slope: 10.0 * core::f64::consts::PI / 180.0,
        }
    }
}

/// Search-phase bounds are evaluated on at most this many source points
/// (deterministic stride subsample); the ICP polish and the reported residual
/// always use the full cloud.
const SEARCH_POINT_BUDGET: usize = 200;

/// A windowed union of keyframe clouds expressed in the anchor keyframe's
/// frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Submap {
    pub anchor_index: usize,
    pub window: usize,
    pub cloud: Cloud2,
}

/// Union of the clouds of keyframes `anchor-window ..= anchor` (truncated at
/// the chain start), each moved into the anchor frame through the relative
/// pose taken from the chain's current estimates.
pub fn build_submap(keyframes: &[Keyframe], anchor_index: usize, window: usize) -> Submap {
    assert!(anchor_index < keyframes.len(), "anchor keyframe must exist");
    let anchor = &keyframes[anchor_index];
    let first = anchor_index.saturating_sub(window);
    let mut cloud = Cloud2::default();
    for k in first..=anchor_index {
        let relative = Pose2::between(&anchor.pose, &keyframes[k].pose);
        cloud.extend_from(&keyframes[k].observation.transformed(&relative));
    }
    Submap {
        anchor_index,
        window,
        cloud,
    }
}

/// One representative point (cell centroid) per occupied voxel. Output order
/// follows the voxel lattice, so equal inputs give identical outputs.
pub fn voxel_downsample(cloud: &Cloud2, cell: f64) -> Cloud2 {
    assert!(cell > 0.0);
    let mut cells: BTreeMap<(i64, i64), (f64, f64, u32)> = BTreeMap::new();
    for p in &cloud.points {
        let key = (
            libm::floor(p.x / cell) as i64,
            libm::floor(p.y / cell) as i64,
        );
        let e = cells.entry(key).or_insert((0.0, 0.0, 0));
        e.0 += p.x;
        e.1 += p.y;
        e.2 += 1;
    }
    Cloud2::new(
        cells
            .values()
            .map(|&(sx, sy, n)| Point2::new(sx / n as f64, sy / n as f64))
            .collect(),
    )
}

/// Euclidean distance field over a uniform grid covering everywhere a
/// transformed source point can land. Provides admissible lower and valid
/// upper bounds on the distance from an arbitrary point to the nearest
/// target point; distances are untruncated so boxes far from the target
/// prune at any size.
struct DistanceField {
    origin_x: f64,
    origin_y: f64,
    cell: f64,
    cols: usize,
    rows: usize,
    /// Distance from each cell center to the nearest occupied cell center.
    dist: Vec<f64>,
    cap: f64,
    diag: f64,
}

impl DistanceField {
    fn build(target: &Cloud2, cell: f64, cap: f64, reach: f64) -> DistanceField {
        let mut min_x = f64::INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for p in &target.points {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        let diag = cell * core::f64::consts::SQRT_2;
        let pad = reach + cap + 2.0 * diag;
        let origin_x = min_x - pad;
        let origin_y = min_y - pad;
        let cols = (libm::ceil((max_x + pad - origin_x) / cell) as usize).max(1) + 1;
        let rows = (libm::ceil((max_y + pad - origin_y) / cell) as usize).max(1) + 1;

        // Finite sentinel above any in-grid squared distance (cell units)
        // keeps the envelope arithmetic free of inf - inf.
        let sentinel = 4.0 * ((rows + cols) as f64) * ((rows + cols) as f64);
        let mut sq = vec![sentinel; cols * rows];
        for p in &target.points {
            let cx = libm::floor((p.x - origin_x) / cell) as i64;
            let cy = libm::floor((p.y - origin_y) / cell) as i64;
            if cx >= 0 && cy >= 0 && (cx as usize) < cols && (cy as usize) < rows {
                sq[cy as usize * cols + cx as usize] = 0.0;
            }
        }
        // Two-pass exact squared EDT (lower envelope of parabolas), in cell
        // units, columns then rows.
        let mut column = vec![0.0; rows];
        for x in 0..cols {
            for y in 0..rows {
                column[y] = sq[y * cols + x];
            }
            let transformed = edt_1d(&column);
            for y in 0..rows {
                sq[y * cols + x] = transformed[y];
            }
        }
        let mut row = vec![0.0; cols];
        for y in 0..rows {
            row.copy_from_slice(&sq[y * cols..(y + 1) * cols]);
            let transformed = edt_1d(&row);
            sq[y * cols..(y + 1) * cols].copy_from_slice(&transformed);
        }
        let dist = sq.iter().map(|&d2| libm::sqrt(d2) * cell).collect();
        DistanceField {
            origin_x,
            origin_y,
            cell,
            cols,
            rows,
            dist,
            cap,
            diag,
        }
    }

    fn cell_of(&self, p: &Point2) -> Option<usize> {
        let cx = libm::floor((p.x - self.origin_x) / self.cell) as i64;
        let cy = libm::floor((p.y - self.origin_y) / self.cell) as i64;
        if cx < 0 || cy < 0 || cx as usize >= self.cols || cy as usize >= self.rows {
            None
        } else {
            Some(cy as usize * self.cols + cx as usize)
        }
    }

    /// Lower bound on the true distance from `p` to the nearest target point.
    fn lower(&self, p: &Point2) -> f64 {
        match self.cell_of(p) {
            Some(i) => (self.dist[i] - self.diag).max(0.0),
            // Outside the padded grid every target point is farther than cap.
            None => self.cap,
        }
    }

    /// Upper bound on `min(cap, true distance)`.
    fn upper(&self, p: &Point2) -> f64 {
        match self.cell_of(p) {
            Some(i) => (self.dist[i] + self.diag).min(self.cap),
            None => self.cap,
        }
    }
}

/// 1D squared distance transform of sampled function `f` (lower-envelope-of-
/// parabolas construction), grid spacing 1.
fn edt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] {
                if k == 0 {
                    // Head replacement; happens when f[q] undercuts the whole
                    // envelope so far.
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0usize;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
    d
}

/// Result of a registration call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationResult {
    /// Transform mapping source-frame points into the target frame.
    pub pose: Pose2,
    /// Mean truncated point-to-nearest-target distance at `pose`.
    pub residual: f64,
    /// False when the search budget ran out before the bound gap closed.
    pub optimal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegistrationError {
    EmptySourceCloud,
    EmptyTargetCloud,
    NoCorrespondences,
}

impl fmt::Display for RegistrationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegistrationError::EmptySourceCloud => write!(f, "source cloud is empty"),
            RegistrationError::EmptyTargetCloud => write!(f, "target cloud is empty"),
            RegistrationError::NoCorrespondences => {
                write!(f, "no correspondences within the trim distance")
            }
        }
    }
}

impl core::error::Error for RegistrationError {}

/// Search node: a rotation interval crossed with a translation square,
/// parameterized by centers and half-widths.
#[derive(Debug, Clone, Copy)]
struct Node {
    lb: f64,
    theta: f64,
    theta_half: f64,
    tx: f64,
    ty: f64,
    t_half: f64,
    seq: u64,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.lb == other.lb && self.seq == other.seq
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; order reversed so the smallest lower
        // bound pops first, sequence number for determinism.
        other.lb.total_cmp(&self.lb).then(other.seq.cmp(&self.seq))
    }
}

/// Globally-initialized registration: best-first branch-and-bound over the
/// full SE(2) box with ICP polish.
///
/// The lower bound of a node subtracts from each point's distance-field value
/// the largest displacement the node can still induce on that point
/// (`|p| * half rotation width + sqrt(2) * half translation width` plus the
/// grid quantization slack), which keeps the bound admissible; upper bounds
/// are tightened by running ICP from promising node centers, Go-ICP style.
/// When the source cloud is large the search optimizes a deterministic
/// stride subsample and the final polish runs on the full cloud, so the
/// `optimal` flag refers to the subsampled objective at leaf granularity.
pub fn global_register(
    source: &Cloud2,
    target: &Cloud2,
    params: &RegistrationParams,
) -> Result<RegistrationResult, RegistrationError> {
    if source.is_empty() {
        return Err(RegistrationError::EmptySourceCloud);
    }
    if target.is_empty() {
        return Err(RegistrationError::EmptyTargetCloud);
    }
    let cap = OVERLAP_RADIUS;
    let radius_max = source.points.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let reach = params.translation_bound * core::f64::consts::SQRT_2 + radius_max;
    let field = DistanceField::build(target, params.voxel_size, cap, reach);
    let target_index = GridIndex::build(target, cap);

    // Search subsample (bounds and ICP tightening run on this set).
    let stride = source.len().div_ceil(SEARCH_POINT_BUDGET);
    let search: Cloud2 = Cloud2::new(
        source
            .points
            .iter()
            .step_by(stride.max(1))
            .copied()
            .collect(),
    );
    let norms: Vec<f64> = search.points.iter().map(|p| p.norm()).collect();
    let n = search.len() as f64;

    let eval_upper = |pose: &Pose2| -> f64 {
        let mut acc = 0.0;
        for p in &search.points {
            acc += field.upper(&pose.transform_point(p));
        }
        acc / n
    };
    // Exact truncated cost on the search set.
    let eval_exact = |pose: &Pose2| -> f64 {
        let mut acc = 0.0;
        for p in &search.points {
            let q = pose.transform_point(p);
            acc += target_index.nearest_within(&q).map(|(_, d)| d).unwrap_or(cap);
        }
        acc / n
    };
    let eval_lower = |node: &Node| -> f64 {
        let pose = Pose2::new(node.tx, node.ty, node.theta);
        let t_slack = node.t_half * core::f64::consts::SQRT_2;
        let mut acc = 0.0;
        for (p, r) in search.points.iter().zip(norms.iter()) {
            let d = field.lower(&pose.transform_point(p));
            let slack = r * node.theta_half + t_slack;
            acc += (d - slack).max(0.0).min(cap);
        }
        acc / n
    };

    let mut seq = 0u64;
    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    heap.push(Node {
        lb: 0.0,
        theta: 0.0,
        theta_half: core::f64::consts::PI,
        tx: 0.0,
        ty: 0.0,
        t_half: params.translation_bound,
        seq,
    });

    let mut best_pose = Pose2::identity();
    let mut best_ub = eval_exact(&best_pose);
    let mut expansions = 0usize;
    let mut polishes = 0usize;
    let mut optimal = true;
    while let Some(node) = heap.pop() {
        if node.lb >= best_ub - 1e-9 {
            break;
        }
        if best_ub <= params.good_enough_cost {
            break;
        }
        if expansions >= params.max_expansions {
            optimal = false;
            break;
        }
        expansions += 1;
        let center = Pose2::new(node.tx, node.ty, node.theta);
        if eval_upper(&center) < best_ub {
            // Promising basin: measure exactly and let ICP pull the upper
            // bound down (rate limited; each polish is a full ICP run).
            let exact_center = eval_exact(&center);
            if exact_center < best_ub {
                best_ub = exact_center;
                best_pose = center;
                if polishes < 8 {
                    polishes += 1;
                    if let Ok((polished, _)) = refine_icp(&search, target, &center, params) {
                        let exact_polished = eval_exact(&polished);
                        if exact_polished < best_ub {
                            best_ub = exact_polished;
                            best_pose = polished;
                        }
                    }
                }
            }
        }
        let rot_leaf = node.theta_half <= params.rotation_leaf;
        let trans_leaf = node.t_half <= params.translation_leaf;
        if rot_leaf && trans_leaf {
            continue;
        }
        // Split the dimension whose slack currently dominates the bound.
        let rotation_slack = radius_max * node.theta_half;
        let translation_slack = node.t_half * core::f64::consts::SQRT_2;
        let split_rotation = !rot_leaf && (trans_leaf || rotation_slack >= translation_slack);
        let mut children: Vec<Node> = Vec::with_capacity(4);
        if split_rotation {
            let h = node.theta_half * 0.5;
            for dir in [-1.0, 1.0] {
                children.push(Node {
                    lb: 0.0,
                    theta: node.theta + dir * h,
                    theta_half: h,
                    ..node
                });
            }
        } else {
            let h = node.t_half * 0.5;
            for dy in [-1.0, 1.0] {
                for dx in [-1.0, 1.0] {
                    children.push(Node {
                        lb: 0.0,
                        tx: node.tx + dx * h,
                        ty: node.ty + dy * h,
                        t_half: h,
                        ..node
                    });
                }
            }
        }
        for mut child in children {
            seq += 1;
            child.seq = seq;
            child.lb = eval_lower(&child);
            if child.lb < best_ub - 1e-9 {
                heap.push(child);
            }
        }
    }

    // Final polish on the full cloud.
    let exact_full = |pose: &Pose2| truncated_residual(source, target, pose, cap);
    let mut result = RegistrationResult {
        pose: best_pose,
        residual: exact_full(&best_pose),
        optimal,
    };
    if let Ok((refined, _)) = refine_icp(source, target, &best_pose, params) {
        let refined_residual = exact_full(&refined);
        if refined_residual <= result.residual {
            result.pose = refined;
            result.residual = refined_residual;
        }
    }
    Ok(result)
}

/// Mean truncated distance from transformed source points to their nearest
/// target neighbors (exact, grid-indexed).
pub fn truncated_residual(source: &Cloud2, target: &Cloud2, pose: &Pose2, cap: f64) -> f64 {
    let index = GridIndex::build(target, cap);
    let mut acc = 0.0;
    for p in &source.points {
        let q = pose.transform_point(p);
        acc += index.nearest_within(&q).map(|(_, d)| d).unwrap_or(cap);
    }
    acc / source.len().max(1) as f64
}

/// Point-to-point ICP with trimmed correspondences.
///
/// Correspondences beyond `icp_max_correspondence` are dropped each sweep and
/// the rigid fit is the closed-form 2D solution. Progress is measured on the
/// truncated root-mean-square distance over all source points (unmatched
/// points count at the trim radius): it matches the norm the fit minimizes
/// and stays well defined as the correspondence set changes. Iteration stops
/// on a small relative residual change, the iteration cap, or when a sweep
/// would raise that residual — the previous pose is kept, so accepted
/// iterations never increase it.
pub fn refine_icp(
    source: &Cloud2,
    target: &Cloud2,
    init: &Pose2,
    params: &RegistrationParams,
) -> Result<(Pose2, f64), RegistrationError> {
    if source.is_empty() {
        return Err(RegistrationError::EmptySourceCloud);
    }
    if target.is_empty() {
        return Err(RegistrationError::EmptyTargetCloud);
    }
    let cap = params.icp_max_correspondence;
    let index = GridIndex::build(target, cap);

    let truncated_rms = |pose: &Pose2| -> f64 {
        let mut acc = 0.0;
        for p in &source.points {
            let q = pose.transform_point(p);
            let d = index.nearest_within(&q).map(|(_, d)| d).unwrap_or(cap);
            acc += d * d;
        }
        libm::sqrt(acc / source.len() as f64)
    };

    let mut current = *init;
    let mut best_pose = current;
    let mut best_residual = truncated_rms(&current);
    let mut first = true;
    let mut stalled = 0usize;
    for _ in 0..params.icp_max_iterations {
        // Gather trimmed correspondences at the current pose.
        let mut pairs: Vec<(Point2, Point2)> = Vec::new();
        for p in &source.points {
            let q = current.transform_point(p);
            if let Some((j, _)) = index.nearest_within(&q) {
                pairs.push((*p, target.points[j]));
            }
        }
        if pairs.len() < 3 {
            if first {
                return Err(RegistrationError::NoCorrespondences);
            }
            break;
        }
        first = false;
        let candidate = fit_rigid(&pairs);
        let candidate_residual = truncated_rms(&candidate);
        if candidate_residual < best_residual - 1e-12 {
            let improvement = best_residual - candidate_residual;
            best_pose = candidate;
            best_residual = candidate_residual;
            stalled = 0;
            if improvement < params.icp_relative_tolerance * candidate_residual.max(1e-9) {
                break;
            }
        } else {
            // Plateaus happen when matches flip between equally near
            // samples; allow a few sweeps of exploration before giving up.
            stalled += 1;
            if stalled > 4 {
                break;
            }
        }
        current = candidate;
    }
    Ok((best_pose, best_residual))
}

/// Closed-form least-squares rigid transform for matched 2D pairs.
fn fit_rigid(pairs: &[(Point2, Point2)]) -> Pose2 {
    let n = pairs.len() as f64;
    let mut mp = Point2::new(0.0, 0.0);
    let mut mq = Point2::new(0.0, 0.0);
    for (p, q) in pairs {
        mp.x += p.x;
        mp.y += p.y;
        mq.x += q.x;
        mq.y += q.y;
    }
    mp.x /= n;
    mp.y /= n;
    mq.x /= n;
    mq.y /= n;
    let mut dot = 0.0;
    let mut cross = 0.0;
    for (p, q) in pairs {
        let px = p.x - mp.x;
        let py = p.y - mp.y;
        let qx = q.x - mq.x;
        let qy = q.y - mq.y;
        dot += px * qx + py * qy;
        cross += px * qy - py * qx;
    }
    let theta = libm::atan2(cross, dot);
    let (s, c) = libm::sincos(theta);
    Pose2::new(
        mq.x - (c * mp.x - s * mp.y),
        mq.y - (s * mp.x + c * mp.y),
        theta,
    )
}

/// Fraction of sonar points with a LiDAR neighbor within [`OVERLAP_RADIUS`].
/// The sonar cloud must already be registered into the LiDAR frame.
pub fn overlap_score(registered_sonar: &Cloud2, lidar: &Cloud2) -> f64 {
    debug_assert!(!registered_sonar.is_empty());
    if registered_sonar.is_empty() || lidar.is_empty() {
        return 0.0;
    }
    let index = GridIndex::build(lidar, OVERLAP_RADIUS);
    let hits = registered_sonar
        .points
        .iter()
        .filter(|p| index.has_neighbor_within(p))
        .count();
    hits as f64 / registered_sonar.len() as f64
}

/// An accepted cross-domain loop closure: the SE(2) transform taking points
/// in the sonar keyframe's frame into the LiDAR keyframe's frame, with an
/// overlap-scaled diagonal covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopClosure {
    pub auv_robot_id: u16,
    pub auv_keyframe: u32,
    pub usv_keyframe: u32,
    pub transform: Pose2,
    pub overlap: f64,
    pub covariance: Mat3,
}

/// Apply the overlap gate (inclusive: `overlap >= o_min`) and attach the
/// covariance model.
pub fn gate_closure(
    auv_robot_id: u16,
    auv_keyframe: u32,
    usv_keyframe: u32,
    transform: Pose2,
    overlap: f64,
    params: &RegistrationParams,
) -> Option<LoopClosure> {
    if overlap < params.o_min {
        return None;
    }
    Some(LoopClosure {
        auv_robot_id,
        auv_keyframe,
        usv_keyframe,
        transform,
        overlap,
        covariance: closure_covariance(overlap, params),
    })
}

pub fn closure_covariance(overlap: f64, params: &RegistrationParams) -> Mat3 {
    let miss = (1.0 - overlap).max(0.0);
    let sxy = params.sigma_xy_floor + params.sigma_xy_slope * miss;
    let sth = params.sigma_theta_floor + params.sigma_theta_slope * miss;
    Mat3::diag(sxy * sxy, sxy * sxy, sth * sth)
}
