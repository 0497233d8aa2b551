//! Gradient trees: the intersection of the vertex diagonals with the edge
//! relations inside `M^{H(T)}`, its numerical solution and its tangent
//! spaces.
//!
//! Conventions:
//! * The function on a half-edge oriented away from its source is
//!   `F(left, right)` for its boundary pair, with `F(j, i) = -F(i, j)`.
//! * External leg `k` is oriented inward, from the leaf to its vertex. Its
//!   function `g_k` is therefore the negation of the outward half-edge
//!   function, and the constraint reads `vertex ∈ W^u(p_k; g_k)`.
//! * In floer mode the translation symmetry is removed by the slice
//!   `F(v_0) = (F(p_0) + F(p_1)) / 2` with `F = F(0, 1)`.

use crate::error::{Error, Result};
use crate::expr::ScalarFunction;
use crate::geometry::{classify, find_critical_points, flow, flow_with_jacobian, sample_flow, CriticalPoint, ModelManifold, DEFAULT_STEP};
use crate::numerics::{lstsq, Spectrum};
use crate::tree::{HalfEdgeId, Partner, RibbonTree, VertexId};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 50;
pub const MATCH_TOL: f64 = 1e-8;
pub const DEFECT_TOL: f64 = 1e-6;
pub const DEDUP_TOL: f64 = 1e-5;
pub const RANK_TOL: f64 = 1e-7;
pub const MARGINAL_LO: f64 = 1e-9;
const CONTINUATION_STAGES: usize = 6;
/// Newton iterates with a longer internal edge are rejected.
pub const MAX_LENGTH: f64 = 50.0;
const MAX_POSITION_STEP: f64 = 0.2;
const MAX_LENGTH_STEP: f64 = 1.0;
/// Starting lengths tried for each free internal edge.
pub const LENGTH_SEEDS: [f64; 4] = [0.05, 0.25, 1.0, 4.0];
const TRAJECTORY_SAMPLES: usize = 65;

/// How the critical point at the end of an external leg is chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum LegSelector {
    /// The critical point nearest to a location.
    Near(Vec<f64>),
    /// The unique critical point of this Morse index for the leg function.
    Index(usize),
}

#[derive(Clone, Debug)]
pub struct TreeProblem {
    pub tree: RibbonTree,
    pub manifold: ModelManifold,
    /// `F(i, j)` for `i < j`.
    pub functions: BTreeMap<(usize, usize), ScalarFunction>,
    /// Endpoint of each leg, classified for the leg function `g_k`.
    pub external_points: Vec<CriticalPoint>,
    pub epsilon: f64,
    oriented: Vec<ScalarFunction>,
    reversed: Vec<ScalarFunction>,
}

impl TreeProblem {
    pub fn new(
        tree: RibbonTree,
        manifold: ModelManifold,
        functions: BTreeMap<(usize, usize), ScalarFunction>,
        external_points: &[Vec<f64>],
        epsilon: f64,
    ) -> Result<TreeProblem> {
        let (oriented, reversed) = orient(&tree, &manifold, &functions)?;
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        let d = tree.d();
        if external_points.len() != d {
            return Err(Error::InvalidArgument(format!("{} external points for d = {d}", external_points.len())));
        }
        let mut points = Vec::with_capacity(d);
        for (k, loc) in external_points.iter().enumerate() {
            if loc.len() != manifold.dim {
                return Err(Error::Dimension { expected: manifold.dim, got: loc.len() });
            }
            let g = &reversed[tree.leaf(k)];
            let grad = g.grad(&manifold.wrapped(loc))?;
            if grad.norm() > 1e-8 {
                return Err(Error::InvalidArgument(format!(
                    "external point {k} at {loc:?} is not critical for its leg function (|grad| = {:e})",
                    grad.norm()
                )));
            }
            points.push(classify(g, &manifold, loc)?);
        }
        Ok(TreeProblem { tree, manifold, functions, external_points: points, epsilon, oriented, reversed })
    }

    /// Builds a problem choosing leg endpoints among the critical points
    /// of each leg function found from a seed grid.
    pub fn with_selectors(
        tree: RibbonTree,
        manifold: ModelManifold,
        functions: BTreeMap<(usize, usize), ScalarFunction>,
        selectors: &[LegSelector],
        epsilon: f64,
        resolution: usize,
    ) -> Result<TreeProblem> {
        let (_, reversed) = orient(&tree, &manifold, &functions)?;
        if selectors.len() != tree.d() {
            return Err(Error::InvalidArgument(format!("{} selectors for d = {}", selectors.len(), tree.d())));
        }
        let mut locations = Vec::new();
        for (k, sel) in selectors.iter().enumerate() {
            let g = &reversed[tree.leaf(k)];
            let pts = find_critical_points(g, &manifold, resolution)?;
            let chosen = match sel {
                LegSelector::Near(x) => pts
                    .iter()
                    .min_by(|a, b| manifold.dist(&a.location, x).partial_cmp(&manifold.dist(&b.location, x)).unwrap())
                    .ok_or_else(|| Error::InvalidArgument(format!("leg {k}: no critical points found")))?,
                LegSelector::Index(i) => {
                    let matching: Vec<&CriticalPoint> = pts.iter().filter(|p| p.morse_index == *i).collect();
                    match matching.as_slice() {
                        [p] => *p,
                        [] => return Err(Error::InvalidArgument(format!("leg {k}: no critical point of index {i}"))),
                        _ => {
                            return Err(Error::InvalidArgument(format!(
                                "leg {k}: {} critical points of index {i}; select by location",
                                matching.len()
                            )))
                        }
                    }
                }
            };
            locations.push(chosen.location.clone());
        }
        TreeProblem::new(tree, manifold, functions, &locations, epsilon)
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim
    }

    /// `F(i, j)` for any ordered pair of distinct boundary components.
    pub fn pair_function(&self, i: usize, j: usize) -> Option<ScalarFunction> {
        if i < j {
            self.functions.get(&(i, j)).cloned()
        } else {
            self.functions.get(&(j, i)).map(|f| f.negated())
        }
    }

    /// Function of half-edge `h` oriented away from its source.
    pub fn half_edge_function(&self, h: HalfEdgeId) -> &ScalarFunction {
        &self.oriented[h]
    }

    /// Inward leg function `g_k`.
    pub fn leg_function(&self, k: usize) -> &ScalarFunction {
        &self.reversed[self.tree.leaf(k)]
    }

    /// `-g_k`, whose forward flow is the backward flow along leg `k`.
    pub fn leg_backward(&self, k: usize) -> &ScalarFunction {
        &self.oriented[self.tree.leaf(k)]
    }

    pub fn leg_vertex(&self, k: usize) -> VertexId {
        self.tree.half_edge(self.tree.leaf(k)).source
    }

    pub fn t_back(&self, k: usize) -> f64 {
        self.external_points[k].t_back()
    }

    /// Floer slice function and level.
    pub fn slice(&self) -> Option<(ScalarFunction, f64)> {
        if !self.tree.floer_mode() {
            return None;
        }
        let f = self.functions.get(&(0, 1))?.clone();
        let level = 0.5
            * (f.value_unchecked(&self.external_points[0].location)
                + f.value_unchecked(&self.external_points[1].location));
        Some((f, level))
    }

    /// Expected dimension `n + (d - 3) - Σ_k ind_{g_k}(p_k)` including
    /// internal lengths (floer mode: `n - 1 - Σ`).
    pub fn expected_dimension(&self) -> isize {
        let n = self.dim() as isize;
        let d = self.tree.d() as isize;
        let sum: isize = self.external_points.iter().map(|p| p.morse_index as isize).sum();
        if self.tree.floer_mode() {
            n - 1 - sum + self.tree.internal_edges().len() as isize
        } else {
            n + d - 3 - sum
        }
    }
}

fn orient(
    tree: &RibbonTree,
    manifold: &ModelManifold,
    functions: &BTreeMap<(usize, usize), ScalarFunction>,
) -> Result<(Vec<ScalarFunction>, Vec<ScalarFunction>)> {
    let d = tree.d();
    for (&(i, j), f) in functions {
        if !(i < j && j < d) {
            return Err(Error::InvalidArgument(format!("function key ({i},{j}) must satisfy i < j < {d}")));
        }
        if f.dim() != manifold.dim {
            return Err(Error::Dimension { expected: manifold.dim, got: f.dim() });
        }
    }
    let mut oriented = Vec::new();
    let mut reversed = Vec::new();
    for h in 0..tree.half_edges().len() {
        let (l, r) = tree.boundary_pair(h)?;
        let (a, b) = (l.min(r), l.max(r));
        let f = functions
            .get(&(a, b))
            .ok_or_else(|| Error::InvalidArgument(format!("no function for boundary pair ({a},{b})")))?;
        let (fw, bw) = if l < r { (f.clone(), f.negated()) } else { (f.negated(), f.clone()) };
        oriented.push(fw);
        reversed.push(bw);
    }
    Ok((oriented, reversed))
}

/// Sampled edge trajectory. Internal edges run forward on `[0, L]`, legs run
/// inward on `[-T_back, 0]`.
#[derive(Clone, Debug, Serialize)]
pub struct EdgeTrajectory {
    pub half_edge: HalfEdgeId,
    pub external: bool,
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct GradientTree {
    pub problem: TreeProblem,
    pub vertex_positions: Vec<Vec<f64>>,
    pub lengths: Vec<f64>,
    pub trajectories: Vec<EdgeTrajectory>,
    pub residual_norm: f64,
}

impl GradientTree {
    pub fn position(&self, v: VertexId) -> &[f64] {
        &self.vertex_positions[v]
    }

    /// Largest matching error over internal edges and largest unstable
    /// defect over legs.
    pub fn invariant_errors(&self) -> Result<(f64, f64)> {
        let p = &self.problem;
        let mut matching: f64 = 0.0;
        for (e, edge) in p.tree.internal_edges().iter().enumerate() {
            let v = p.tree.half_edge(edge.forward).source;
            let w = p.tree.half_edge(edge.backward).source;
            let end = flow(p.half_edge_function(edge.forward), &p.manifold, &self.vertex_positions[v], self.lengths[e], DEFAULT_STEP)?;
            matching = matching.max(p.manifold.dist(&end, &self.vertex_positions[w]));
        }
        let mut defect: f64 = 0.0;
        for k in 0..p.tree.d() {
            let x = &self.vertex_positions[p.leg_vertex(k)];
            defect = defect.max(leg_components(p, k, x, p.t_back(k))?.norm());
        }
        Ok((matching, defect))
    }

    /// CSV of all edge trajectories: `half_edge,external,t,x0,..`.
    pub fn trajectories_csv(&self) -> String {
        let n = self.problem.dim();
        let mut s = String::from("half_edge,external,t");
        for i in 0..n {
            s.push_str(&format!(",x{i}"));
        }
        s.push('\n');
        for tr in &self.trajectories {
            for (t, x) in tr.times.iter().zip(&tr.points) {
                s.push_str(&format!("{},{},{t:?}", tr.half_edge, tr.external));
                for v in x {
                    s.push_str(&format!(",{v:?}"));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Stable components of the backward-flowed vertex along leg `k`.
fn leg_components(p: &TreeProblem, k: usize, x: &[f64], t: f64) -> Result<DVector<f64>> {
    let cp = &p.external_points[k];
    if cp.morse_index == 0 {
        return Ok(DVector::zeros(0));
    }
    let y = flow(p.leg_backward(k), &p.manifold, x, t, DEFAULT_STEP).map_err(|_| Error::Inconclusive { point: x.to_vec() })?;
    Ok(cp.stable_basis().transpose() * p.manifold.diff(&y, &cp.location))
}

fn leg_components_jac(p: &TreeProblem, k: usize, x: &[f64], t: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let cp = &p.external_points[k];
    let n = p.dim();
    if cp.morse_index == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, n)));
    }
    let (y, j) = flow_with_jacobian(p.leg_backward(k), &p.manifold, x, t, DEFAULT_STEP)
        .map_err(|_| Error::Inconclusive { point: x.to_vec() })?;
    let es = cp.stable_basis().transpose();
    Ok((&es * p.manifold.diff(&y, &cp.location), es * j))
}

/// Whether the backward flow along leg `k` from `x` comes within `0.1` of
/// the leg endpoint by time 40.
fn approaches(p: &TreeProblem, k: usize, x: &[f64]) -> bool {
    let cp = &p.external_points[k];
    let t1 = p.t_back(k);
    let back = p.leg_backward(k);
    let Ok(y) = flow(back, &p.manifold, x, t1, DEFAULT_STEP) else { return false };
    if p.manifold.dist(&y, &cp.location) <= 0.1 {
        return true;
    }
    if t1 >= 40.0 {
        return false;
    }
    flow(back, &p.manifold, &y, 40.0 - t1, DEFAULT_STEP).is_ok_and(|z| p.manifold.dist(&z, &cp.location) <= 0.1)
}

fn softplus(a: f64) -> f64 {
    if a > 30.0 {
        a
    } else {
        a.exp().ln_1p()
    }
}

fn softplus_inv(l: f64) -> f64 {
    if l > 30.0 {
        l
    } else {
        l.exp_m1().ln()
    }
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// The square system solved by Newton: vertex positions and the free
/// internal lengths (softplus-parametrized).
struct System<'a> {
    p: &'a TreeProblem,
    pinned: Vec<Option<f64>>,
    free: Vec<usize>,
    tol: f64,
}

impl<'a> System<'a> {
    fn new(p: &'a TreeProblem, guess: &[f64], tol: f64) -> System<'a> {
        let pinned: Vec<Option<f64>> = guess.iter().map(|&l| (l == 0.0).then_some(0.0)).collect();
        let free = (0..guess.len()).filter(|&e| pinned[e].is_none()).collect();
        System { p, pinned, free, tol }
    }

    fn unknowns(&self) -> usize {
        self.p.dim() * self.p.tree.vertex_count() + self.free.len()
    }

    fn split(&self, z: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = self.p.dim();
        let nv = self.p.tree.vertex_count();
        let xs = (0..nv).map(|v| z[v * n..(v + 1) * n].to_vec()).collect();
        let mut lengths: Vec<f64> = self.pinned.iter().map(|l| l.unwrap_or(0.0)).collect();
        for (i, &e) in self.free.iter().enumerate() {
            lengths[e] = softplus(z[nv * n + i]);
        }
        (xs, lengths)
    }

    fn pack(&self, xs: &[Vec<f64>], lengths: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = xs.iter().flatten().copied().collect();
        z.extend(self.free.iter().map(|&e| softplus_inv(lengths[e])));
        z
    }

    /// Residual and Jacobian with leg backward times scaled by `scale`.
    fn eval(&self, z: &[f64], scale: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let p = self.p;
        let n = p.dim();
        let nv = p.tree.vertex_count();
        let (xs, lengths) = self.split(z);
        let cols = self.unknowns();
        let mut rows: Vec<(DVector<f64>, DMatrix<f64>)> = Vec::new();
        for (e, edge) in p.tree.internal_edges().iter().enumerate() {
            let v = p.tree.half_edge(edge.forward).source;
            let w = p.tree.half_edge(edge.backward).source;
            let mut jac = DMatrix::zeros(n, cols);
            let f = p.half_edge_function(edge.forward);
            let (end, j) = flow_with_jacobian(f, &p.manifold, &xs[v], lengths[e], DEFAULT_STEP)?;
            jac.view_mut((0, v * n), (n, n)).copy_from(&j);
            for i in 0..n {
                jac[(i, w * n + i)] -= 1.0;
            }
            if let Some(slot) = self.free.iter().position(|&x| x == e) {
                let a = z[nv * n + slot];
                let gdot = f.grad_unchecked(&end) * sigmoid(a);
                jac.view_mut((0, nv * n + slot), (n, 1)).copy_from(&gdot);
            }
            rows.push((p.manifold.diff(&end, &xs[w]), jac));
        }
        for k in 0..p.tree.d() {
            let v = p.leg_vertex(k);
            let (r, j) = leg_components_jac(p, k, &xs[v], scale * p.t_back(k))?;
            let mut jac = DMatrix::zeros(r.len(), cols);
            jac.view_mut((0, v * n), (r.len(), n)).copy_from(&j);
            rows.push((r, jac));
        }
        if let Some((f, level)) = p.slice() {
            let x0 = &xs[0];
            let mut jac = DMatrix::zeros(1, cols);
            jac.view_mut((0, 0), (1, n)).copy_from(&f.grad_unchecked(x0).transpose());
            rows.push((DVector::from_element(1, f.value_unchecked(x0) - level), jac));
        }
        let total: usize = rows.iter().map(|(r, _)| r.len()).sum();
        let mut r = DVector::zeros(total);
        let mut jac = DMatrix::zeros(total, cols);
        let mut at = 0;
        for (ri, ji) in rows {
            r.rows_mut(at, ri.len()).copy_from(&ri);
            jac.view_mut((at, 0), (ri.len(), cols)).copy_from(&ji);
            at += ri.len();
        }
        Ok((r, jac))
    }

    fn wrap(&self, z: &mut [f64]) {
        let nx = self.p.dim() * self.p.tree.vertex_count();
        self.p.manifold.wrap(&mut z[..nx]);
    }

    /// Damped Gauss–Newton with minimum-norm steps at one continuation stage.
    fn newton(&self, z: &mut Vec<f64>, scale: f64) -> Result<f64> {
        let (mut r, mut jac) = self.eval(z, scale)?;
        let mut norm = r.norm();
        for _ in 0..NEWTON_MAX_ITER {
            if norm <= self.tol {
                break;
            }
            let mut step = lstsq(&jac, &r);
            let nx = self.p.dim() * self.p.tree.vertex_count();
            let big = step.iter().enumerate().map(|(i, v)| v.abs() / if i < nx { MAX_POSITION_STEP } else { MAX_LENGTH_STEP }).fold(1.0, f64::max);
            step /= big;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let mut trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, s)| a - alpha * s).collect();
                self.wrap(&mut trial);
                if trial[nx..].iter().any(|&a| !(softplus(a) <= MAX_LENGTH)) {
                    alpha *= 0.5;
                    continue;
                }
                if let Ok((tr, tj)) = self.eval(&trial, scale) {
                    if tr.norm() < norm {
                        *z = trial;
                        r = tr;
                        jac = tj;
                        norm = r.norm();
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok(norm)
    }
}

fn seed_grid(m: &ModelManifold, resolution: usize) -> Vec<Vec<f64>> {
    let n = m.dim;
    let total = resolution.pow(n as u32);
    (0..total)
        .map(|idx| {
            let mut rest = idx;
            (0..n)
                .map(|_| {
                    let k = rest % resolution;
                    rest /= resolution;
                    if m.is_torus() {
                        (k as f64 + 0.5) / resolution as f64
                    } else if resolution == 1 {
                        0.0
                    } else {
                        -m.extent + 2.0 * m.extent * k as f64 / (resolution - 1) as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Places every vertex by flowing guessed lengths outward from vertex 0.
fn propagate(p: &TreeProblem, root: &[f64], lengths: &[f64]) -> Option<Vec<Vec<f64>>> {
    let nv = p.tree.vertex_count();
    let mut xs: Vec<Option<Vec<f64>>> = vec![None; nv];
    xs[0] = Some(root.to_vec());
    let mut stack = vec![0];
    while let Some(v) = stack.pop() {
        for &h in p.tree.cyclic_order(v) {
            if let Partner::Internal(o) = p.tree.half_edge(h).partner {
                let w = p.tree.half_edge(o).source;
                if xs[w].is_none() {
                    let e = p.tree.edge_of(h)?;
                    let y = flow(p.half_edge_function(h), &p.manifold, xs[v].as_ref()?, lengths[e], DEFAULT_STEP).ok()?;
                    xs[w] = Some(y);
                    stack.push(w);
                }
            }
        }
    }
    xs.into_iter().collect()
}

fn solution_distance(m: &ModelManifold, a: &GradientTree, b: &GradientTree) -> f64 {
    let pos = a
        .vertex_positions
        .iter()
        .zip(&b.vertex_positions)
        .map(|(x, y)| m.dist(x, y))
        .fold(0.0, f64::max);
    let len = a.lengths.iter().zip(&b.lengths).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    pos.max(len)
}

fn build_trajectories(p: &TreeProblem, xs: &[Vec<f64>], lengths: &[f64]) -> Result<Vec<EdgeTrajectory>> {
    let mut out = Vec::new();
    let s = TRAJECTORY_SAMPLES;
    for (e, edge) in p.tree.internal_edges().iter().enumerate() {
        let v = p.tree.half_edge(edge.forward).source;
        let times: Vec<f64> = (0..s).map(|i| lengths[e] * i as f64 / (s - 1) as f64).collect();
        let points = sample_flow(p.half_edge_function(edge.forward), &p.manifold, &xs[v], &times, DEFAULT_STEP)?;
        out.push(EdgeTrajectory { half_edge: edge.forward, external: false, times, points });
    }
    for k in 0..p.tree.d() {
        let t = p.t_back(k);
        let back: Vec<f64> = (0..s).map(|i| t * i as f64 / (s - 1) as f64).collect();
        let mut points = sample_flow(p.leg_backward(k), &p.manifold, &xs[p.leg_vertex(k)], &back, DEFAULT_STEP)?;
        points.reverse();
        let times = back.iter().rev().map(|t| -t).collect();
        out.push(EdgeTrajectory { half_edge: p.tree.leaf(k), external: true, times, points });
    }
    Ok(out)
}

fn finish(p: &TreeProblem, xs: Vec<Vec<f64>>, lengths: Vec<f64>, residual_norm: f64) -> Result<Option<GradientTree>> {
    if !(0..p.tree.d()).all(|k| approaches(p, k, &xs[p.leg_vertex(k)])) {
        return Ok(None);
    }
    let trajectories = build_trajectories(p, &xs, &lengths)?;
    let g = GradientTree { problem: p.clone(), vertex_positions: xs, lengths, trajectories, residual_norm };
    let (matching, defect) = g.invariant_errors()?;
    Ok((matching <= MATCH_TOL && defect <= DEFECT_TOL).then_some(g))
}

/// All distinct gradient trees reached by Newton iteration from a grid of
/// seeds for vertex 0 combined with starting lengths. Entries of
/// `metric_guess` that are exactly zero pin their edge to length zero and
/// positive entries are the only starting length of their edge; with an
/// empty guess every edge is started from each of [`LENGTH_SEEDS`].
pub fn solve(problem: &TreeProblem, metric_guess: &[f64], seed_grid_resolution: usize) -> Result<Vec<GradientTree>> {
    solve_with_tolerance(problem, metric_guess, seed_grid_resolution, NEWTON_TOL)
}

/// [`solve`] with a Newton residual tolerance other than [`NEWTON_TOL`].
pub fn solve_with_tolerance(
    problem: &TreeProblem,
    metric_guess: &[f64],
    seed_grid_resolution: usize,
    newton_tol: f64,
) -> Result<Vec<GradientTree>> {
    if !(newton_tol > 0.0) {
        return Err(Error::InvalidArgument("Newton tolerance must be positive".into()));
    }
    let ne = problem.tree.internal_edges().len();
    let guess: Vec<f64> = if metric_guess.is_empty() { vec![1.0; ne] } else { metric_guess.to_vec() };
    if guess.len() != ne {
        return Err(Error::InvalidArgument(format!("{} length guesses for {ne} internal edges", guess.len())));
    }
    if let Some((e, &l)) = guess.iter().enumerate().find(|(_, l)| !(**l >= 0.0) || !l.is_finite()) {
        return Err(Error::NegativeLength { edge: e, length: l });
    }
    if seed_grid_resolution == 0 {
        return Err(Error::InvalidArgument("seed resolution must be positive".into()));
    }
    let system = System::new(problem, &guess, newton_tol);
    let mut length_seeds: Vec<Vec<f64>> = vec![Vec::new()];
    for &g in &guess {
        let options: Vec<f64> = if g == 0.0 || !metric_guess.is_empty() { vec![g] } else { LENGTH_SEEDS.to_vec() };
        length_seeds = length_seeds
            .iter()
            .flat_map(|prefix| options.iter().map(move |&l| [prefix.as_slice(), &[l]].concat()))
            .collect();
    }
    let seeds: Vec<(Vec<f64>, Vec<f64>)> = seed_grid(&problem.manifold, seed_grid_resolution)
        .into_iter()
        .flat_map(|root| length_seeds.iter().map(move |ls| (root.clone(), ls.clone())))
        .collect();
    let outcomes: Vec<Result<Option<GradientTree>>> = seeds
        .par_iter()
        .map(|(root, lengths)| {
            let Some(xs) = propagate(problem, root, lengths) else { return Ok(None) };
            let mut z = system.pack(&xs, lengths);
            let mut norm = f64::INFINITY;
            for stage in 1..=CONTINUATION_STAGES {
                let scale = stage as f64 / CONTINUATION_STAGES as f64;
                match system.newton(&mut z, scale) {
                    Ok(r) => norm = r,
                    Err(Error::Inconclusive { .. } | Error::Divergence { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
            if !(norm <= newton_tol) {
                return Ok(None);
            }
            let (xs, lengths) = system.split(&z);
            let xs = xs.iter().map(|x| problem.manifold.wrapped(x)).collect();
            match finish(problem, xs, lengths, norm) {
                Err(Error::Inconclusive { .. } | Error::Divergence { .. }) => Ok(None),
                other => other,
            }
        })
        .collect();
    let mut unique: Vec<GradientTree> = Vec::new();
    for outcome in outcomes {
        if let Some(g) = outcome? {
            if unique.iter().all(|u| solution_distance(&problem.manifold, u, &g) >= DEDUP_TOL) {
                unique.push(g);
            }
        }
    }
    unique.sort_by(|a, b| {
        a.vertex_positions
            .partial_cmp(&b.vertex_positions)
            .unwrap()
            .then_with(|| a.lengths.partial_cmp(&b.lengths).unwrap())
    });
    Ok(unique)
}

/// Point of `M^{H(T)}` whose component at each half-edge is the position of
/// its source vertex.
pub fn half_edge_embedding(g: &GradientTree) -> Vec<f64> {
    g.problem
        .tree
        .half_edges()
        .iter()
        .flat_map(|he| g.vertex_positions[he.source].iter().copied())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransversalityReport {
    pub dim_ambient: usize,
    pub dim_tv: usize,
    pub dim_te: usize,
    pub rank_sum: usize,
    pub transversal: bool,
    pub dim_moduli: usize,
    pub marginal: bool,
    pub smallest_singular_value: f64,
}

/// Orthonormal basis of the column space.
fn orth(m: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > rel * smax).collect();
    let mut out = DMatrix::zeros(m.nrows(), keep.len());
    for (k, &i) in keep.iter().enumerate() {
        out.set_column(k, &u.column(i));
    }
    out
}

/// Tangent spaces of the vertex diagonals and the edge relations at `g`
/// as column bases of `T M^{H(T)}`, in that order.
pub fn tangent_bases(g: &GradientTree) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = &g.problem;
    let n = p.dim();
    let tree = &p.tree;
    let nh = tree.half_edges().len();
    let amb = n * nh;
    let mut tv_cols: Vec<DVector<f64>> = Vec::new();
    let slice = p.slice();
    for v in 0..tree.vertex_count() {
        let order = tree.cyclic_order(v);
        let dirs: DMatrix<f64> = match (&slice, v) {
            (Some((f, _)), 0) => {
                let grad = f.grad(&g.vertex_positions[0])?;
                crate::numerics::null_space(&DMatrix::from_row_slice(1, n, grad.as_slice()), 1e-12)
            }
            _ => DMatrix::identity(n, n),
        };
        for c in 0..dirs.ncols() {
            let mut col = DVector::zeros(amb);
            for &h in order {
                col.rows_mut(h * n, n).copy_from(&dirs.column(c));
            }
            tv_cols.push(col / (order.len() as f64).sqrt());
        }
    }
    let mut te_blocks: Vec<DMatrix<f64>> = Vec::new();
    for (e, edge) in tree.internal_edges().iter().enumerate() {
        let v = tree.half_edge(edge.forward).source;
        let f = p.half_edge_function(edge.forward);
        let (end, j) = flow_with_jacobian(f, &p.manifold, &g.vertex_positions[v], g.lengths[e], DEFAULT_STEP)?;
        let free = g.lengths[e] > 0.0;
        let mut span = DMatrix::zeros(amb, n + usize::from(free));
        for c in 0..n {
            span[(edge.forward * n + c, c)] = 1.0;
            for r in 0..n {
                span[(edge.backward * n + r, c)] = j[(r, c)];
            }
        }
        if free {
            let gdot = f.grad_unchecked(&end);
            span.view_mut((edge.backward * n, n), (n, 1)).copy_from(&gdot);
        }
        te_blocks.push(orth(&span, 1e-12));
    }
    for k in 0..tree.d() {
        let h = tree.leaf(k);
        let v = p.leg_vertex(k);
        let (_, j) = leg_components_jac(p, k, &g.vertex_positions[v], p.t_back(k))?;
        let ker = crate::numerics::null_space(&j, 1e-10);
        let mut span = DMatrix::zeros(amb, ker.ncols());
        span.view_mut((h * n, 0), (n, ker.ncols())).copy_from(&ker);
        te_blocks.push(span);
    }
    let te_cols: Vec<DVector<f64>> =
        te_blocks.iter().flat_map(|b| b.column_iter().map(|c| c.into_owned()).collect::<Vec<_>>()).collect();
    let te = if te_cols.is_empty() { DMatrix::zeros(amb, 0) } else { DMatrix::from_columns(&te_cols) };
    let tv = if tv_cols.is_empty() { DMatrix::zeros(amb, 0) } else { DMatrix::from_columns(&tv_cols) };
    Ok((tv, te))
}

/// Ranks of `T𝒱`, `Tℰ` and their sum at `g`.
pub fn tangent_report(g: &GradientTree) -> Result<TransversalityReport> {
    let (tv, te) = tangent_bases(g)?;
    let amb = tv.nrows();
    let mut both = DMatrix::zeros(amb, tv.ncols() + te.ncols());
    both.view_mut((0, 0), (amb, tv.ncols())).copy_from(&tv);
    both.view_mut((0, tv.ncols()), (amb, te.ncols())).copy_from(&te);
    // rank of the sum = rank of the Gram structure; transpose keeps rows ≥ cols irrelevant
    let spec = Spectrum::of(&both);
    let rank_sum = spec.rank(RANK_TOL);
    let dim_tv = tv.ncols();
    let dim_te = te.ncols();
    Ok(TransversalityReport {
        dim_ambient: amb,
        dim_tv,
        dim_te,
        rank_sum,
        transversal: rank_sum == amb,
        dim_moduli: dim_tv + dim_te - rank_sum,
        marginal: spec.marginal(MARGINAL_LO, RANK_TOL),
        smallest_singular_value: spec.values.iter().copied().take(amb).last().unwrap_or(0.0),
    })
}

/// Residual of the constraint system at given vertex positions, with all
/// internal lengths pinned at `lengths`.
fn scan_residual(p: &TreeProblem, xs: &[Vec<f64>], lengths: &[f64]) -> Option<DVector<f64>> {
    let mut parts: Vec<f64> = Vec::new();
    for (e, edge) in p.tree.internal_edges().iter().enumerate() {
        let v = p.tree.half_edge(edge.forward).source;
        let w = p.tree.half_edge(edge.backward).source;
        let end = flow(p.half_edge_function(edge.forward), &p.manifold, &xs[v], lengths[e], DEFAULT_STEP).ok()?;
        parts.extend(p.manifold.diff(&end, &xs[w]).iter());
    }
    for k in 0..p.tree.d() {
        parts.extend(leg_components(p, k, &xs[p.leg_vertex(k)], p.t_back(k)).ok()?.iter());
    }
    if let Some((f, level)) = p.slice() {
        parts.push(f.value_unchecked(&xs[0]) - level);
    }
    Some(DVector::from_vec(parts))
}

/// Independent count of solutions by scanning all vertex positions on a
/// grid: sign changes refined by bisection for a single unknown and a
/// single equation, otherwise grid minima of the residual refined by
/// pattern search. Internal edges must have pinned lengths.
pub fn brute_force_count(problem: &TreeProblem, lengths: &[f64], resolution: usize) -> Result<usize> {
    let p = problem;
    let n = p.dim();
    let nv = p.tree.vertex_count();
    let dims = n * nv;
    if dims > 3 {
        return Err(Error::InvalidArgument(format!("brute force needs n·|V| ≤ 3, got {dims}")));
    }
    if lengths.len() != p.tree.internal_edges().len() {
        return Err(Error::InvalidArgument("brute force needs a length for every internal edge".into()));
    }
    if resolution < 4 {
        return Err(Error::InvalidArgument("brute force resolution must be at least 4".into()));
    }
    let m = &p.manifold;
    let unpack = |z: &[f64]| -> Vec<Vec<f64>> { (0..nv).map(|v| m.wrapped(&z[v * n..(v + 1) * n])).collect() };
    let resid = |z: &[f64]| scan_residual(p, &unpack(z), lengths);
    let accept = |z: &[f64]| -> bool {
        let xs = unpack(z);
        (0..p.tree.d()).all(|k| approaches(p, k, &xs[p.leg_vertex(k)]))
    };
    let full = ModelManifold { dim: dims, ..*m };
    let grid = seed_grid(&full, resolution);
    let spacing = if m.is_torus() { 1.0 / resolution as f64 } else { 2.0 * m.extent / (resolution - 1) as f64 };
    let values: Vec<Option<DVector<f64>>> = grid.par_iter().map(|z| resid(z)).collect();
    let rows = values.iter().flatten().map(|r| r.len()).next().unwrap_or(0);
    let mut found: Vec<Vec<f64>> = Vec::new();
    let push = |z: Vec<f64>, found: &mut Vec<Vec<f64>>| {
        if found.iter().all(|y| full.dist(y, &z) >= 1e-4) {
            found.push(z);
        }
    };
    if dims == 1 && rows == 1 {
        let count = if m.is_torus() { resolution } else { resolution - 1 };
        for i in 0..count {
            let j = (i + 1) % resolution;
            let (Some(ra), Some(rb)) = (&values[i], &values[j]) else { continue };
            let (fa, fb) = (ra[0], rb[0]);
            let a = grid[i][0];
            let b = a + spacing;
            if fa == 0.0 {
                if accept(&[a]) {
                    push(m.wrapped(&[a]), &mut found);
                }
                continue;
            }
            if fa * fb > 0.0 {
                continue;
            }
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let Some(r) = resid(&[mid]) else { break };
                if (r[0] > 0.0) == (flo > 0.0) {
                    lo = mid;
                    flo = r[0];
                } else {
                    hi = mid;
                }
            }
            let mid = 0.5 * (lo + hi);
            if resid(&[mid]).is_some_and(|r| r.norm() <= 1e-6) && accept(&[mid]) {
                push(m.wrapped(&[mid]), &mut found);
            }
        }
        return Ok(found.len());
    }
    let norms: Vec<f64> = values.iter().map(|r| r.as_ref().map_or(f64::INFINITY, |r| r.norm())).collect();
    let index_of = |coords: &[isize]| -> Option<usize> {
        let mut idx = 0;
        let mut mul = 1;
        for &c in coords {
            let c = if m.is_torus() {
                c.rem_euclid(resolution as isize)
            } else if c < 0 || c >= resolution as isize {
                return None;
            } else {
                c
            };
            idx += c as usize * mul;
            mul *= resolution;
        }
        Some(idx)
    };
    for (i, z) in grid.iter().enumerate() {
        if !norms[i].is_finite() {
            continue;
        }
        let mut coords = Vec::with_capacity(dims);
        let mut rest = i;
        for _ in 0..dims {
            coords.push((rest % resolution) as isize);
            rest /= resolution;
        }
        let mut is_min = true;
        for offset in 0..3usize.pow(dims as u32) {
            let mut o = offset;
            let mut nb = coords.clone();
            let mut zero = true;
            for c in nb.iter_mut() {
                let delta = (o % 3) as isize - 1;
                o /= 3;
                zero &= delta == 0;
                *c += delta;
            }
            if zero {
                continue;
            }
            if let Some(j) = index_of(&nb) {
                if norms[j] < norms[i] {
                    is_min = false;
                    break;
                }
            }
        }
        if !is_min {
            continue;
        }
        let (zmin, rmin) = pattern_search(&|x: &[f64]| resid(x).map_or(f64::INFINITY, |r| r.norm()), z, spacing);
        if rmin <= 1e-6 && accept(&zmin) {
            push(unpack(&zmin).concat(), &mut found);
        }
    }
    Ok(found.len())
}

/// Compass search minimizing `f` from `x0` with initial step `step`.
fn pattern_search(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64) -> (Vec<f64>, f64) {
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut s = step;
    let mut iters = 0;
    while s > 1e-14 && iters < 5000 {
        iters += 1;
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[i] += dir * s;
                let fy = f(&y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            s *= 0.5;
        }
    }
    (x, fx)
}
