//! Robust outlier rejection over inter-robot loop closures.
//!
//! Two closures are mutually consistent when the cycle formed by the surface
//! vehicle's odometry between the two LiDAR keyframes, the two closure
//! transforms, and the underwater vehicle's odometry between the two sonar
//! keyframes composes back to the identity within a threshold. Perceptual
//! aliasing makes single closures untrustworthy, so only the largest set of
//! pairwise-consistent closures survives: the maximum clique of the
//! consistency graph.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::geom::{wrap_angle, Pose2};
use crate::registration::LoopClosure;

/// Keyframe-indexed pose estimates of one robot's odometry chain.
#[derive(Debug, Clone, Default)]
pub struct PoseChain {
    poses: BTreeMap<u32, Pose2>,
}

impl PoseChain {
    pub fn new() -> Self {
        PoseChain {
            poses: BTreeMap::new(),
        }
    }

    pub fn from_poses(poses: impl IntoIterator<Item = (u32, Pose2)>) -> Self {
        PoseChain {
            poses: poses.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, keyframe: u32, pose: Pose2) {
        self.poses.insert(keyframe, pose);
    }

    pub fn get(&self, keyframe: u32) -> Option<&Pose2> {
        self.poses.get(&keyframe)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcmParams {
    /// Cycle residual threshold; with the covariance weighting below this
    /// reads as a chi-square bound (default: 95% for 3 dof).
    pub epsilon: f64,
    /// Residual weighting floors, matching the closure covariance floors.
    pub sigma_xy: f64,
    pub sigma_theta: f64,
    /// Odometry drift allowance: the cycle crosses both chains between the
    /// two closures, so the position tolerance widens by this rate per
    /// meter of chain separation (variance grows linearly, like the
    /// odometry factors').
    pub sigma_trans_per_sqrt_m: f64,
    pub sigma_rot_per_sqrt_m: f64,
    /// Largest closure count for which the clique search stays exact.
    pub exact_limit: usize,
}

impl Default for PcmParams {
    fn default() -> Self {
        PcmParams {
            epsilon: 7.81,
            sigma_xy: 0.3,
            sigma_theta: 2.0 * core::f64::consts::PI / 180.0,
            sigma_trans_per_sqrt_m: 0.15,
            sigma_rot_per_sqrt_m: 0.01,
            exact_limit: 40,
        }
    }
}

/// Weighted squared norm of the consistency cycle of two closures sharing one
/// underwater vehicle.
///
/// With closure transforms written as `T = usv_pose^-1 * auv_pose`, the cycle
/// `U^-1 * T_a * A * T_b^-1` (U: surface chain between the two LiDAR
/// keyframes, A: underwater chain between the two sonar keyframes) is the
/// identity exactly when both closures agree with the odometry, so its
/// (x, y, wrapped theta) is the residual.
pub fn pairwise_consistency(
    a: &LoopClosure,
    b: &LoopClosure,
    usv_chain: &PoseChain,
    auv_chain: &PoseChain,
    params: &PcmParams,
) -> Result<f64, PcmError> {
    if a.auv_robot_id != b.auv_robot_id {
        return Err(PcmError::MixedRobots);
    }
    if a.auv_keyframe == b.auv_keyframe
        && a.usv_keyframe == b.usv_keyframe
        && a.transform == b.transform
    {
        // The cycle is the identity algebraically; skip the float round trip.
        return Ok(0.0);
    }
    let usv_j = usv_chain
        .get(a.usv_keyframe)
        .ok_or(PcmError::MissingKeyframe)?;
    let usv_l = usv_chain
        .get(b.usv_keyframe)
        .ok_or(PcmError::MissingKeyframe)?;
    let auv_i = auv_chain
        .get(a.auv_keyframe)
        .ok_or(PcmError::MissingKeyframe)?;
    let auv_k = auv_chain
        .get(b.auv_keyframe)
        .ok_or(PcmError::MissingKeyframe)?;

    let usv_between = Pose2::between(usv_j, usv_l);
    let auv_between = Pose2::between(auv_i, auv_k);
    let cycle = usv_between
        .inverse()
        .compose(&a.transform)
        .compose(&auv_between)
        .compose(&b.transform.inverse());

    // Chain separation widens the tolerance: the cycle rides the odometry
    // of both vehicles between the two closures.
    let separation = usv_between.translation_norm() + auv_between.translation_norm();
    let var_xy = params.sigma_xy * params.sigma_xy
        + params.sigma_trans_per_sqrt_m * params.sigma_trans_per_sqrt_m * separation;
    let var_theta = params.sigma_theta * params.sigma_theta
        + params.sigma_rot_per_sqrt_m * params.sigma_rot_per_sqrt_m * separation;
    let dtheta = wrap_angle(cycle.theta());
    Ok((cycle.x * cycle.x + cycle.y * cycle.y) / var_xy + dtheta * dtheta / var_theta)
}

/// The consistency graph over a set of closures: node indices into the input
/// slice, an edge wherever the pairwise residual is within epsilon.
#[derive(Debug, Clone)]
pub struct ConsistencyGraph {
    pub n: usize,
    pub epsilon: f64,
    adjacency: Vec<bool>,
}

impl ConsistencyGraph {
    pub fn build(
        closures: &[LoopClosure],
        usv_chain: &PoseChain,
        auv_chain: &PoseChain,
        params: &PcmParams,
    ) -> Result<Self, PcmError> {
        let n = closures.len();
        let mut adjacency = vec![false; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let residual =
                    pairwise_consistency(&closures[i], &closures[j], usv_chain, auv_chain, params)?;
                if residual <= params.epsilon {
                    adjacency[i * n + j] = true;
                    adjacency[j * n + i] = true;
                }
            }
        }
        Ok(ConsistencyGraph {
            n,
            epsilon: params.epsilon,
            adjacency,
        })
    }

    pub fn connected(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.connected(i, j)).count()
    }
}

/// Result of consistent-set extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistentSet {
    /// Indices into the input closure slice, ascending.
    pub indices: Vec<usize>,
    /// False when the heuristic (not the exact clique search) produced the
    /// set because the instance was too large.
    pub exact: bool,
}

/// Largest set of mutually consistent closures for one underwater vehicle.
///
/// Exact branch-and-bound maximum clique up to `exact_limit` nodes (the
/// first maximum clique in ascending index order wins ties); a greedy
/// degree-ordered heuristic above that, flagged through `exact`.
pub fn max_consistent_set(
    closures: &[LoopClosure],
    usv_chain: &PoseChain,
    auv_chain: &PoseChain,
    params: &PcmParams,
) -> Result<ConsistentSet, PcmError> {
    if closures.is_empty() {
        return Ok(ConsistentSet {
            indices: Vec::new(),
            exact: true,
        });
    }
    let graph = ConsistencyGraph::build(closures, usv_chain, auv_chain, params)?;
    if graph.n <= params.exact_limit {
        Ok(ConsistentSet {
            indices: max_clique_exact(&graph),
            exact: true,
        })
    } else {
        Ok(ConsistentSet {
            indices: max_clique_greedy(&graph),
            exact: false,
        })
    }
}

fn max_clique_exact(graph: &ConsistencyGraph) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let candidates: Vec<usize> = (0..graph.n).collect();
    extend_clique(graph, &mut current, &candidates, &mut best);
    best
}

fn extend_clique(
    graph: &ConsistencyGraph,
    current: &mut Vec<usize>,
    candidates: &[usize],
    best: &mut Vec<usize>,
) {
    if current.len() > best.len() {
        *best = current.clone();
    }
    if current.len() + candidates.len() <= best.len() {
        return;
    }
    for (pos, &v) in candidates.iter().enumerate() {
        if current.len() + (candidates.len() - pos) <= best.len() {
            return;
        }
        let narrowed: Vec<usize> = candidates[pos + 1..]
            .iter()
            .copied()
            .filter(|&u| graph.connected(v, u))
            .collect();
        current.push(v);
        extend_clique(graph, current, &narrowed, best);
        current.pop();
    }
}

fn max_clique_greedy(graph: &ConsistencyGraph) -> Vec<usize> {
    let mut order: Vec<usize> = (0..graph.n).collect();
    order.sort_by_key(|&v| (core::cmp::Reverse(graph.degree(v)), v));
    let mut best: Vec<usize> = Vec::new();
    for &seed in &order {
        let mut clique = vec![seed];
        for &v in &order {
            if v != seed && clique.iter().all(|&u| graph.connected(u, v)) {
                clique.push(v);
            }
        }
        if clique.len() > best.len() {
            clique.sort_unstable();
            best = clique;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcmError {
    MixedRobots,
    MissingKeyframe,
}

impl fmt::Display for PcmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PcmError::MixedRobots => {
                write!(f, "pairwise consistency is defined per underwater vehicle")
            }
            PcmError::MissingKeyframe => {
                write!(f, "closure references a keyframe absent from its chain")
            }
        }
    }
}

impl core::error::Error for PcmError {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat3::Mat3;
    use crate::rng::Pcg32;

    fn chain_from(poses: &[Pose2]) -> PoseChain {
        PoseChain::from_poses(poses.iter().enumerate().map(|(i, p)| (i as u32, *p)))
    }

    fn closure(auv_kf: u32, usv_kf: u32, usv: &[Pose2], auv: &[Pose2]) -> LoopClosure {
        LoopClosure {
            auv_robot_id: 1,
            auv_keyframe: auv_kf,
            usv_keyframe: usv_kf,
            transform: Pose2::between(&usv[usv_kf as usize], &auv[auv_kf as usize]),
            overlap: 0.9,
            covariance: Mat3::diag(0.09, 0.09, 0.001),
        }
    }

    fn sample_chains() -> (Vec<Pose2>, Vec<Pose2>) {
        let usv: Vec<Pose2> = (0..8)
            .map(|k| Pose2::new(2.0 * k as f64, 0.5 * k as f64, 0.1 * k as f64))
            .collect();
        let auv: Vec<Pose2> = (0..8)
            .map(|k| Pose2::new(1.5 * k as f64 + 3.0, -1.0 * k as f64 + 4.0, -0.07 * k as f64))
            .collect();
        (usv, auv)
    }

    #[test]
    fn self_consistency_is_exactly_zero() {
        let (usv, auv) = sample_chains();
        let a = closure(2, 3, &usv, &auv);
        let r = pairwise_consistency(
            &a,
            &a,
            &chain_from(&usv),
            &chain_from(&auv),
            &PcmParams::default(),
        )
        .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn exact_closures_close_the_cycle() {
        let (usv, auv) = sample_chains();
        let a = closure(1, 2, &usv, &auv);
        let b = closure(5, 6, &usv, &auv);
        let r = pairwise_consistency(
            &a,
            &b,
            &chain_from(&usv),
            &chain_from(&auv),
            &PcmParams::default(),
        )
        .unwrap();
        assert!(r < 1e-18, "residual {r}");
    }

    #[test]
    fn perturbed_closure_matches_hand_composed_cycle() {
        let (usv, auv) = sample_chains();
        let a = closure(1, 2, &usv, &auv);
        let mut b = closure(5, 6, &usv, &auv);
        b.transform = b.transform.compose(&Pose2::new(4.0, 0.0, 0.0));
        let params = PcmParams::default();
        let r = pairwise_consistency(
            &a,
            &b,
            &chain_from(&usv),
            &chain_from(&auv),
            &params,
        )
        .unwrap();

        // Independent composition with raw trigonometry.
        let compose_raw = |p: [f64; 3], q: [f64; 3]| -> [f64; 3] {
            let (s, c) = libm::sincos(p[2]);
            [
                p[0] + c * q[0] - s * q[1],
                p[1] + s * q[0] + c * q[1],
                p[2] + q[2],
            ]
        };
        let invert_raw = |p: [f64; 3]| -> [f64; 3] {
            let (s, c) = libm::sincos(p[2]);
            [-(c * p[0] + s * p[1]), -(-s * p[0] + c * p[1]), -p[2]]
        };
        let raw = |p: &Pose2| [p.x, p.y, p.theta()];
        let u = compose_raw(invert_raw(raw(&usv[2])), raw(&usv[6]));
        let a_chain = compose_raw(invert_raw(raw(&auv[1])), raw(&auv[5]));
        let cycle = compose_raw(
            compose_raw(
                compose_raw(invert_raw(u), raw(&a.transform)),
                a_chain,
            ),
            invert_raw(raw(&b.transform)),
        );
        let separation = libm::hypot(u[0], u[1]) + libm::hypot(a_chain[0], a_chain[1]);
        let var_xy = params.sigma_xy * params.sigma_xy
            + params.sigma_trans_per_sqrt_m * params.sigma_trans_per_sqrt_m * separation;
        let var_theta = params.sigma_theta * params.sigma_theta
            + params.sigma_rot_per_sqrt_m * params.sigma_rot_per_sqrt_m * separation;
        let wrapped = wrap_angle(cycle[2]);
        let expected =
            (cycle[0] * cycle[0] + cycle[1] * cycle[1]) / var_xy + wrapped * wrapped / var_theta;
        assert!((r - expected).abs() < 1e-9 * expected.max(1.0));
        assert!(r > PcmParams::default().epsilon);
    }

    #[test]
    fn mixed_robots_rejected() {
        let (usv, auv) = sample_chains();
        let a = closure(1, 2, &usv, &auv);
        let mut b = closure(3, 4, &usv, &auv);
        b.auv_robot_id = 2;
        assert_eq!(
            pairwise_consistency(
                &a,
                &b,
                &chain_from(&usv),
                &chain_from(&auv),
                &PcmParams::default()
            ),
            Err(PcmError::MixedRobots)
        );
    }

    #[test]
    fn empty_input_empty_output() {
        let set = max_consistent_set(
            &[],
            &PoseChain::new(),
            &PoseChain::new(),
            &PcmParams::default(),
        )
        .unwrap();
        assert!(set.indices.is_empty());
        assert!(set.exact);
    }

    /// Two internally consistent groups of sizes 4 and 2: closures computed
    /// from a rigidly displaced copy of the underwater trajectory are
    /// mutually consistent (shared frame hypothesis) yet inconsistent with
    /// the true group.
    #[test]
    fn two_groups_keep_the_larger_verified_by_enumeration() {
        let (usv, auv) = sample_chains();
        let displaced: Vec<Pose2> = {
            let g = Pose2::new(6.0, -4.0, 0.9);
            auv.iter().map(|p| g.compose(p)).collect()
        };
        let mut closures = Vec::new();
        for (a_kf, u_kf) in [(0u32, 1u32), (2, 3), (4, 5), (6, 7)] {
            closures.push(closure(a_kf, u_kf, &usv, &auv));
        }
        for (a_kf, u_kf) in [(1u32, 2u32), (5, 4)] {
            closures.push(closure(a_kf, u_kf, &usv, &displaced));
        }
        let usv_chain = chain_from(&usv);
        let auv_chain = chain_from(&auv);
        let params = PcmParams::default();
        let set = max_consistent_set(&closures, &usv_chain, &auv_chain, &params).unwrap();
        assert_eq!(set.indices, vec![0, 1, 2, 3]);
        assert!(set.exact);

        // Exhaustive subset enumeration oracle.
        let graph = ConsistencyGraph::build(&closures, &usv_chain, &auv_chain, &params).unwrap();
        let mut best = 0usize;
        for mask in 0u32..(1 << closures.len()) {
            let members: Vec<usize> =
                (0..closures.len()).filter(|&i| mask & (1 << i) != 0).collect();
            let is_clique = members
                .iter()
                .enumerate()
                .all(|(pos, &i)| members[pos + 1..].iter().all(|&j| graph.connected(i, j)));
            if is_clique {
                best = best.max(members.len());
            }
        }
        assert_eq!(set.indices.len(), best);
    }

    #[test]
    fn planted_inliers_survive_random_outliers() {
        let (usv, auv) = sample_chains();
        let usv_chain = chain_from(&usv);
        let auv_chain = chain_from(&auv);
        let params = PcmParams::default();
        let mut recovered = 0;
        let trials = 50;
        for seed in 0..trials {
            let mut rng = Pcg32::new(seed, 5);
            let mut closures = Vec::new();
            for (a_kf, u_kf) in [(0u32, 0u32), (2, 2), (4, 4), (6, 6), (7, 5)] {
                closures.push(closure(a_kf, u_kf, &usv, &auv));
            }
            for _ in 0..3 {
                let a_kf = rng.below(8);
                let u_kf = rng.below(8);
                let mut c = closure(a_kf, u_kf, &usv, &auv);
                c.transform = c.transform.compose(&Pose2::new(
                    rng.uniform(2.0, 8.0),
                    rng.uniform(-8.0, -2.0),
                    rng.uniform(-3.0, 3.0),
                ));
                closures.push(c);
            }
            let set = max_consistent_set(&closures, &usv_chain, &auv_chain, &params).unwrap();
            if set.indices == vec![0, 1, 2, 3, 4] {
                recovered += 1;
            }
        }
        assert!(recovered >= trials * 95 / 100, "recovered {recovered}/{trials}");
    }

    #[test]
    fn adding_outliers_never_shrinks_the_set() {
        let (usv, auv) = sample_chains();
        let usv_chain = chain_from(&usv);
        let auv_chain = chain_from(&auv);
        let params = PcmParams::default();
        let mut closures = Vec::new();
        for (a_kf, u_kf) in [(0u32, 0u32), (2, 2), (4, 4)] {
            closures.push(closure(a_kf, u_kf, &usv, &auv));
        }
        let base = max_consistent_set(&closures, &usv_chain, &auv_chain, &params)
            .unwrap()
            .indices
            .len();
        let mut rng = Pcg32::new(77, 8);
        for _ in 0..10 {
            let mut c = closure(rng.below(8), rng.below(8), &usv, &auv);
            c.transform = c
                .transform
                .compose(&Pose2::new(rng.uniform(3.0, 9.0), 4.0, 1.0));
            closures.push(c);
            let now = max_consistent_set(&closures, &usv_chain, &auv_chain, &params)
                .unwrap()
                .indices
                .len();
            assert!(now >= base);
        }
    }
}
