//! Factor-graph construction and sparse nonlinear least-squares.
//!
//! Variables are per-robot pose chains; factors are a single prior (gauge
//! anchor on the surface vehicle's first pose), odometry between-factors, and
//! inter-robot between-factors from accepted loop closures. Underwater chains
//! never receive priors: their frames are fixed entirely through inter-robot
//! factors, so a chain stays out of the central graph (flagged unanchored)
//! until its first accepted closure arrives.
//!
//! Optimization is Levenberg-Marquardt on the stacked whitened residuals with
//! wrapped angle handling; the damped normal equations are solved by the
//! sparse LDL^T factorization in [`crate::sparse`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::geom::{wrap_angle, Pose2};
use crate::mat3::Mat3;
use crate::odometry::OdometryFactor;
use crate::pcm::PoseChain;
use crate::registration::LoopClosure;
use crate::sparse::{SparseLdl, TripletMatrix};

/// A pose variable: one keyframe of one robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct VarId {
    pub robot_id: u16,
    pub keyframe: u32,
}

impl VarId {
    pub const fn new(robot_id: u16, keyframe: u32) -> Self {
        VarId { robot_id, keyframe }
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}k{}", self.robot_id, self.keyframe)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    Prior,
    Odometry,
    InterRobot,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factor {
    Prior {
        var: VarId,
        measurement: Pose2,
        information: Mat3,
    },
    Between {
        kind: FactorKind,
        from: VarId,
        to: VarId,
        measurement: Pose2,
        information: Mat3,
    },
}

/// Current pose estimates keyed by variable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Estimates {
    poses: BTreeMap<VarId, Pose2>,
}

impl Estimates {
    pub fn new() -> Self {
        Estimates {
            poses: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, var: VarId, pose: Pose2) {
        self.poses.insert(var, pose);
    }

    pub fn get(&self, var: &VarId) -> Option<&Pose2> {
        self.poses.get(var)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VarId, &Pose2)> {
        self.poses.iter()
    }

    /// Poses of one robot ordered by keyframe.
    pub fn robot_chain(&self, robot_id: u16) -> Vec<(u32, Pose2)> {
        self.poses
            .iter()
            .filter(|(v, _)| v.robot_id == robot_id)
            .map(|(v, p)| (v.keyframe, *p))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveParams {
    pub max_iterations: usize,
    /// Converged when the relative error change drops below this.
    pub relative_tolerance: f64,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub lambda_max: f64,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            max_iterations: 100,
            relative_tolerance: 1e-8,
            lambda_init: 1e-4,
            lambda_up: 10.0,
            lambda_down: 10.0,
            lambda_max: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_error: f64,
    pub final_error: f64,
    pub converged: bool,
    pub estimates: Estimates,
}

#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    vars: Vec<VarId>,
    var_index: BTreeMap<VarId, usize>,
    factors: Vec<Factor>,
    // Union-find over variable slots, with an anchored flag at each root.
    uf_parent: Vec<usize>,
    uf_anchored: Vec<bool>,
}

impl FactorGraph {
    pub fn new() -> Self {
        FactorGraph::default()
    }

    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn vars(&self) -> &[VarId] {
        &self.vars
    }

    pub fn contains(&self, var: &VarId) -> bool {
        self.var_index.contains_key(var)
    }

    fn intern(&mut self, var: VarId) -> usize {
        if let Some(&i) = self.var_index.get(&var) {
            return i;
        }
        let i = self.vars.len();
        self.vars.push(var);
        self.var_index.insert(var, i);
        self.uf_parent.push(i);
        self.uf_anchored.push(false);
        i
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.uf_parent[i] != i {
            self.uf_parent[i] = self.uf_parent[self.uf_parent[i]];
            i = self.uf_parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            let anchored = self.uf_anchored[ra] || self.uf_anchored[rb];
            self.uf_parent[rb] = ra;
            self.uf_anchored[ra] = anchored;
        }
    }

    /// Gauge anchor. The graph keeps exactly one prior per connected
    /// component solvable; additional priors on the same component are
    /// accepted (they tighten it) but none are required elsewhere.
    pub fn add_prior(
        &mut self,
        var: VarId,
        measurement: Pose2,
        information: Mat3,
    ) -> Result<(), GraphError> {
        check_information(&information)?;
        let i = self.intern(var);
        let root = self.find(i);
        self.uf_anchored[root] = true;
        self.factors.push(Factor::Prior {
            var,
            measurement,
            information,
        });
        Ok(())
    }

    /// Odometry between-factor; missing variables are created (chain
    /// extension).
    pub fn add_odometry(
        &mut self,
        from: VarId,
        to: VarId,
        measurement: Pose2,
        information: Mat3,
    ) -> Result<(), GraphError> {
        check_information(&information)?;
        let a = self.intern(from);
        let b = self.intern(to);
        self.union(a, b);
        self.factors.push(Factor::Between {
            kind: FactorKind::Odometry,
            from,
            to,
            measurement,
            information,
        });
        Ok(())
    }

    /// Inter-robot between-factor; both keyframes must already exist.
    pub fn add_inter_robot(
        &mut self,
        from: VarId,
        to: VarId,
        measurement: Pose2,
        information: Mat3,
    ) -> Result<(), GraphError> {
        check_information(&information)?;
        if !self.contains(&from) {
            return Err(GraphError::UnknownKeyframe(from));
        }
        if !self.contains(&to) {
            return Err(GraphError::UnknownKeyframe(to));
        }
        let a = self.var_index[&from];
        let b = self.var_index[&to];
        self.union(a, b);
        self.factors.push(Factor::Between {
            kind: FactorKind::InterRobot,
            from,
            to,
            measurement,
            information,
        });
        Ok(())
    }

    /// Whether the variable's connected component contains a prior.
    pub fn is_anchored(&mut self, var: &VarId) -> Option<bool> {
        let i = *self.var_index.get(var)?;
        let root = self.find(i);
        Some(self.uf_anchored[root])
    }

    pub fn fully_anchored(&mut self) -> bool {
        (0..self.vars.len()).all(|i| {
            let root = self.find(i);
            self.uf_anchored[root]
        })
    }

    /// Total whitened squared error at the given estimates.
    pub fn total_error(&self, estimates: &Estimates) -> Result<f64, GraphError> {
        let mut acc = 0.0;
        for factor in &self.factors {
            let r = whitened_residual(factor, estimates)?;
            acc += r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
        }
        Ok(acc)
    }

    /// Whitened squared error of each factor at the given estimates, in
    /// factor insertion order.
    pub fn factor_errors(&self, estimates: &Estimates) -> Result<Vec<(FactorKind, f64)>, GraphError> {
        let mut out = Vec::with_capacity(self.factors.len());
        for factor in &self.factors {
            let kind = match factor {
                Factor::Prior { .. } => FactorKind::Prior,
                Factor::Between { kind, .. } => *kind,
            };
            let r = whitened_residual(factor, estimates)?;
            out.push((kind, r[0] * r[0] + r[1] * r[1] + r[2] * r[2]));
        }
        Ok(out)
    }

    /// Levenberg-Marquardt over all variables.
    pub fn optimize(
        &mut self,
        initial: &Estimates,
        params: &SolveParams,
    ) -> Result<SolveReport, GraphError> {
        for var in &self.vars {
            if initial.get(var).is_none() {
                return Err(GraphError::MissingInitial(*var));
            }
        }
        if !self.fully_anchored() {
            return Err(GraphError::Unanchored);
        }
        if self.vars.is_empty() {
            return Ok(SolveReport {
                iterations: 0,
                initial_error: 0.0,
                final_error: 0.0,
                converged: true,
                estimates: initial.clone(),
            });
        }

        let mut estimates = initial.clone();
        let initial_error = self.total_error(&estimates)?;
        let mut error = initial_error;
        let mut lambda = params.lambda_init;
        let mut iterations = 0usize;
        let mut converged = false;

        while iterations < params.max_iterations {
            iterations += 1;
            let (hessian, gradient, diag) = self.assemble(&estimates)?;
            let mut stepped = false;
            while lambda <= params.lambda_max {
                let mut damped = hessian.clone();
                for (k, &d) in diag.iter().enumerate() {
                    // Marquardt scaling with an absolute floor so zero
                    // curvature directions stay regularized.
                    damped.add(k, k, lambda * d.max(1e-9));
                }
                let factorized = match SparseLdl::factor(&damped.to_csc()) {
                    Ok(f) => f,
                    Err(_) => {
                        lambda *= params.lambda_up;
                        continue;
                    }
                };
                let rhs: Vec<f64> = gradient.iter().map(|g| -g).collect();
                let dx = factorized.solve(&rhs);
                let candidate = apply_step(&self.vars, &estimates, &dx);
                let candidate_error = self.total_error(&candidate)?;
                if candidate_error <= error {
                    let change = error - candidate_error;
                    estimates = candidate;
                    error = candidate_error;
                    lambda = (lambda / params.lambda_down).max(1e-15);
                    stepped = true;
                    if change <= params.relative_tolerance * error.max(1e-12) {
                        converged = true;
                    }
                    break;
                }
                lambda *= params.lambda_up;
            }
            if !stepped {
                // Damping exhausted: either converged at a minimum or the
                // system is structurally deficient.
                if error.is_finite() {
                    converged = true;
                    break;
                }
                return Err(GraphError::RankDeficient);
            }
            if converged {
                break;
            }
        }

        Ok(SolveReport {
            iterations,
            initial_error,
            final_error: error,
            converged,
            estimates,
        })
    }

    /// Gauss-Newton normal equations at the current estimates: sparse
    /// Hessian approximation, gradient, and the Hessian diagonal.
    #[allow(clippy::type_complexity)]
    fn assemble(
        &self,
        estimates: &Estimates,
    ) -> Result<(TripletMatrix, Vec<f64>, Vec<f64>), GraphError> {
        let n = self.vars.len() * 3;
        let mut h = TripletMatrix::new(n);
        let mut g = alloc::vec![0.0; n];
        let mut diag = alloc::vec![0.0; n];
        for factor in &self.factors {
            let (residual, blocks) = linearize(factor, estimates)?;
            for &(vi, ja) in &blocks {
                let oi = self.var_index[&vi] * 3;
                // Gradient: J^T r.
                for r in 0..3 {
                    for c in 0..3 {
                        g[oi + c] += ja.m[r][c] * residual[r];
                    }
                }
                for &(vj, jb) in &blocks {
                    let oj = self.var_index[&vj] * 3;
                    // H block: Ja^T Jb.
                    for a in 0..3 {
                        for b in 0..3 {
                            let mut acc = 0.0;
                            for k in 0..3 {
                                acc += ja.m[k][a] * jb.m[k][b];
                            }
                            if acc != 0.0 {
                                h.add(oi + a, oj + b, acc);
                                if oi + a == oj + b {
                                    diag[oi + a] += acc;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok((h, g, diag))
    }
}

fn check_information(information: &Mat3) -> Result<(), GraphError> {
    if information.is_spd(0.0) {
        Ok(())
    } else {
        Err(GraphError::InformationNotSpd)
    }
}

fn apply_step(vars: &[VarId], estimates: &Estimates, dx: &[f64]) -> Estimates {
    let mut out = estimates.clone();
    for (i, var) in vars.iter().enumerate() {
        let p = out.get(var).expect("checked on entry");
        let o = i * 3;
        out.insert(
            *var,
            Pose2::new(p.x + dx[o], p.y + dx[o + 1], p.theta() + dx[o + 2]),
        );
    }
    out
}

/// Whitened residual of one factor.
fn whitened_residual(factor: &Factor, estimates: &Estimates) -> Result<[f64; 3], GraphError> {
    Ok(linearize(factor, estimates)?.0)
}

type Linearization = ([f64; 3], Vec<(VarId, Mat3)>);

/// Whitened residual and whitened Jacobian blocks of one factor.
///
/// Between residual: `e = vec(z^-1 * (x_from^-1 * x_to))` with wrapped angle;
/// prior residual: `e = vec(z^-1 * x)`. Whitening multiplies by `L^T` where
/// `information = L L^T`.
fn linearize(factor: &Factor, estimates: &Estimates) -> Result<Linearization, GraphError> {
    match factor {
        Factor::Prior {
            var,
            measurement,
            information,
        } => {
            let x = estimates.get(var).ok_or(GraphError::MissingInitial(*var))?;
            let whitener = information
                .cholesky()
                .ok_or(GraphError::InformationNotSpd)?;
            let (sz, cz) = libm::sincos(measurement.theta());
            let dx = x.x - measurement.x;
            let dy = x.y - measurement.y;
            let e = [
                cz * dx + sz * dy,
                -sz * dx + cz * dy,
                wrap_angle(x.theta() - measurement.theta()),
            ];
            // d e / d x is the constant rotation by -theta_z.
            let j = Mat3 {
                m: [[cz, sz, 0.0], [-sz, cz, 0.0], [0.0, 0.0, 1.0]],
            };
            let r = whitener.lt_mul_vec(&e);
            let jw = whiten_block(&whitener, &j);
            Ok((r, alloc::vec![(*var, jw)]))
        }
        Factor::Between {
            from,
            to,
            measurement,
            information,
            ..
        } => {
            let xi = estimates
                .get(from)
                .ok_or(GraphError::MissingInitial(*from))?;
            let xj = estimates.get(to).ok_or(GraphError::MissingInitial(*to))?;
            let whitener = information
                .cholesky()
                .ok_or(GraphError::InformationNotSpd)?;
            let (si, ci) = libm::sincos(xi.theta());
            let (sz, cz) = libm::sincos(measurement.theta());
            let dx = xj.x - xi.x;
            let dy = xj.y - xi.y;
            // pred = between(xi, xj) in xi's frame.
            let px = ci * dx + si * dy;
            let py = -si * dx + ci * dy;
            let e = [
                cz * (px - measurement.x) + sz * (py - measurement.y),
                -sz * (px - measurement.x) + cz * (py - measurement.y),
                wrap_angle(xj.theta() - xi.theta() - measurement.theta()),
            ];
            // Rz^T Ri^T and Rz^T d(Ri^T)/dtheta_i * d.
            let rzt_rit = [
                [cz * ci + sz * -si, cz * si + sz * ci],
                [-sz * ci + cz * -si, -sz * si + cz * ci],
            ];
            let dpx = -si * dx + ci * dy;
            let dpy = -ci * dx - si * dy;
            let dtheta_col = [cz * dpx + sz * dpy, -sz * dpx + cz * dpy];
            let ja = Mat3 {
                m: [
                    [-rzt_rit[0][0], -rzt_rit[0][1], dtheta_col[0]],
                    [-rzt_rit[1][0], -rzt_rit[1][1], dtheta_col[1]],
                    [0.0, 0.0, -1.0],
                ],
            };
            let jb = Mat3 {
                m: [
                    [rzt_rit[0][0], rzt_rit[0][1], 0.0],
                    [rzt_rit[1][0], rzt_rit[1][1], 0.0],
                    [0.0, 0.0, 1.0],
                ],
            };
            let r = whitener.lt_mul_vec(&e);
            Ok((
                r,
                alloc::vec![
                    (*from, whiten_block(&whitener, &ja)),
                    (*to, whiten_block(&whitener, &jb)),
                ],
            ))
        }
    }
}

/// `L^T J` for a lower-triangular whitener.
fn whiten_block(whitener: &Mat3, j: &Mat3) -> Mat3 {
    let mut out = Mat3::zeros();
    for c in 0..3 {
        let col = [j.m[0][c], j.m[1][c], j.m[2][c]];
        let w = whitener.lt_mul_vec(&col);
        for r in 0..3 {
            out.m[r][c] = w[r];
        }
    }
    out
}

/// Outcome of merging one underwater chain into the central graph.
#[derive(Debug, Clone, PartialEq)]
pub enum MergeOutcome {
    /// No accepted closures yet: graph untouched, chain still floating.
    NoClosures,
    Merged(SolveReport),
}

/// Merge one underwater vehicle into the central graph.
///
/// The chain's frame is unknown until the first accepted closure, so the
/// highest-overlap closure seeds it: the seed keyframe's pose is the current
/// estimate of its surface keyframe composed with the closure transform, and
/// the rest of the chain is propagated through the dead-reckoned relative
/// poses. Odometry and inter-robot factors are then added and the joint graph
/// re-optimized.
pub fn merge_robot(
    graph: &mut FactorGraph,
    estimates: &Estimates,
    chain_factors: &[OdometryFactor],
    dead_reckoning: &PoseChain,
    closures: &[LoopClosure],
    params: &SolveParams,
) -> Result<MergeOutcome, GraphError> {
    if closures.is_empty() {
        return Ok(MergeOutcome::NoClosures);
    }
    let robot_id = closures[0].auv_robot_id;
    let seed = closures
        .iter()
        .max_by(|a, b| {
            a.overlap
                .total_cmp(&b.overlap)
                .then(b.auv_keyframe.cmp(&a.auv_keyframe))
                .then(b.usv_keyframe.cmp(&a.usv_keyframe))
        })
        .expect("non-empty");

    let usv_var = VarId::new(seed_usv_robot(graph, estimates)?, seed.usv_keyframe);
    let usv_pose = *estimates
        .get(&usv_var)
        .ok_or(GraphError::UnknownKeyframe(usv_var))?;
    let seed_world = usv_pose.compose(&seed.transform);
    let seed_dr = *dead_reckoning
        .get(seed.auv_keyframe)
        .ok_or(GraphError::MissingInitial(VarId::new(
            robot_id,
            seed.auv_keyframe,
        )))?;

    // Initialize every chain keyframe by propagating the seed through the
    // dead-reckoned relative poses.
    let mut initial = estimates.clone();
    let mut chain_keyframes: Vec<u32> = chain_factors
        .iter()
        .flat_map(|f| [f.from_index, f.to_index])
        .collect();
    chain_keyframes.push(seed.auv_keyframe);
    for c in closures {
        chain_keyframes.push(c.auv_keyframe);
    }
    chain_keyframes.sort_unstable();
    chain_keyframes.dedup();
    for &kf in &chain_keyframes {
        let dr = dead_reckoning
            .get(kf)
            .ok_or(GraphError::MissingInitial(VarId::new(robot_id, kf)))?;
        let world = seed_world.compose(&Pose2::between(&seed_dr, dr));
        initial.insert(VarId::new(robot_id, kf), world);
    }

    for f in chain_factors {
        let info = f
            .covariance
            .inverse()
            .ok_or(GraphError::InformationNotSpd)?;
        graph.add_odometry(
            VarId::new(f.robot_id, f.from_index),
            VarId::new(f.robot_id, f.to_index),
            f.delta,
            info,
        )?;
    }
    for c in closures {
        let info = c
            .covariance
            .inverse()
            .ok_or(GraphError::InformationNotSpd)?;
        graph.add_inter_robot(
            VarId::new(usv_var.robot_id, c.usv_keyframe),
            VarId::new(robot_id, c.auv_keyframe),
            c.transform,
            info,
        )?;
    }

    let report = graph.optimize(&initial, params)?;
    Ok(MergeOutcome::Merged(report))
}

/// The surface robot id is the one carrying the prior.
fn seed_usv_robot(graph: &FactorGraph, estimates: &Estimates) -> Result<u16, GraphError> {
    for f in graph.factors() {
        if let Factor::Prior { var, .. } = f {
            return Ok(var.robot_id);
        }
    }
    let _ = estimates;
    Err(GraphError::Unanchored)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphError {
    InformationNotSpd,
    UnknownKeyframe(VarId),
    MissingInitial(VarId),
    Unanchored,
    RankDeficient,
    SnapshotParse(usize),
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::InformationNotSpd => {
                write!(f, "information matrix is not symmetric positive definite")
            }
            GraphError::UnknownKeyframe(v) => write!(f, "factor references unknown keyframe {v}"),
            GraphError::MissingInitial(v) => write!(f, "no initial estimate for {v}"),
            GraphError::Unanchored => {
                write!(f, "graph has a connected component with no prior")
            }
            GraphError::RankDeficient => write!(f, "normal equations are rank deficient"),
            GraphError::SnapshotParse(line) => write!(f, "snapshot parse error on line {line}"),
        }
    }
}

impl core::error::Error for GraphError {}

/// Text snapshot of a graph and its estimates, for offline inspection and
/// oracle comparisons. Floats print in shortest round-trip form, so parsing
/// reproduces them bit-exactly.
pub fn write_snapshot(graph: &FactorGraph, estimates: &Estimates) -> String {
    let mut out = String::new();
    out.push_str("# factor graph snapshot v1\n");
    for (var, pose) in estimates.iter() {
        out.push_str(&format!(
            "VAR {} {} {} {} {}\n",
            var.robot_id,
            var.keyframe,
            pose.x,
            pose.y,
            pose.theta()
        ));
    }
    for factor in graph.factors() {
        match factor {
            Factor::Prior {
                var,
                measurement,
                information,
            } => {
                out.push_str(&format!(
                    "PRIOR {} {} {} {} {}{}\n",
                    var.robot_id,
                    var.keyframe,
                    measurement.x,
                    measurement.y,
                    measurement.theta(),
                    fmt_upper(information)
                ));
            }
            Factor::Between {
                kind,
                from,
                to,
                measurement,
                information,
            } => {
                let tag = match kind {
                    FactorKind::Odometry => "ODO",
                    FactorKind::InterRobot => "IR",
                    FactorKind::Prior => unreachable!("priors are not between factors"),
                };
                out.push_str(&format!(
                    "BETWEEN {tag} {} {} {} {} {} {} {}{}\n",
                    from.robot_id,
                    from.keyframe,
                    to.robot_id,
                    to.keyframe,
                    measurement.x,
                    measurement.y,
                    measurement.theta(),
                    fmt_upper(information)
                ));
            }
        }
    }
    out
}

fn fmt_upper(m: &Mat3) -> String {
    let u = m.upper_triangle();
    format!(" {} {} {} {} {} {}", u[0], u[1], u[2], u[3], u[4], u[5])
}

pub fn parse_snapshot(text: &str) -> Result<(FactorGraph, Estimates), GraphError> {
    let mut graph = FactorGraph::new();
    let mut estimates = Estimates::new();
    let mut deferred_ir: Vec<(VarId, VarId, Pose2, Mat3, usize)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        let err = || GraphError::SnapshotParse(lineno + 1);
        let f64_at = |i: usize| -> Result<f64, GraphError> {
            tok.get(i).and_then(|s| s.parse().ok()).ok_or_else(err)
        };
        let int_at = |i: usize| -> Result<u32, GraphError> {
            tok.get(i).and_then(|s| s.parse().ok()).ok_or_else(err)
        };
        match tok[0] {
            "VAR" => {
                if tok.len() != 6 {
                    return Err(err());
                }
                let var = VarId::new(int_at(1)? as u16, int_at(2)?);
                estimates.insert(var, Pose2::new(f64_at(3)?, f64_at(4)?, f64_at(5)?));
            }
            "PRIOR" => {
                if tok.len() != 12 {
                    return Err(err());
                }
                let var = VarId::new(int_at(1)? as u16, int_at(2)?);
                let pose = Pose2::new(f64_at(3)?, f64_at(4)?, f64_at(5)?);
                let info = Mat3::from_upper_triangle(&[
                    f64_at(6)?,
                    f64_at(7)?,
                    f64_at(8)?,
                    f64_at(9)?,
                    f64_at(10)?,
                    f64_at(11)?,
                ]);
                graph.add_prior(var, pose, info).map_err(|_| err())?;
            }
            "BETWEEN" => {
                if tok.len() != 15 {
                    return Err(err());
                }
                let from = VarId::new(int_at(2)? as u16, int_at(3)?);
                let to = VarId::new(int_at(4)? as u16, int_at(5)?);
                let pose = Pose2::new(f64_at(6)?, f64_at(7)?, f64_at(8)?);
                let info = Mat3::from_upper_triangle(&[
                    f64_at(9)?,
                    f64_at(10)?,
                    f64_at(11)?,
                    f64_at(12)?,
                    f64_at(13)?,
                    f64_at(14)?,
                ]);
                match tok[1] {
                    "ODO" => graph.add_odometry(from, to, pose, info).map_err(|_| err())?,
                    "IR" => deferred_ir.push((from, to, pose, info, lineno + 1)),
                    _ => return Err(err()),
                }
            }
            _ => return Err(err()),
        }
    }
    // Inter-robot factors after all chains exist.
    for (from, to, pose, info, lineno) in deferred_ir {
        graph
            .add_inter_robot(from, to, pose, info)
            .map_err(|_| GraphError::SnapshotParse(lineno))?;
    }
    Ok((graph, estimates))
}
