//! Disks assembled from vertex regions and strips, carrying the explicit
//! solutions `u(t, s) = γ_e(l(s))` of the perturbed equation.
//!
//! Strips use coordinates `(t, s) ∈ [0,1] × [0, l]` (external strips:
//! `s ∈ [-S_max, 0]`, with `s = 0` at the vertex). Vertex regions are unit
//! disks with a polar grid. On the boundary circle of a vertex of valence
//! `k`, the half-edge in cyclic position `j` is glued along the arc centred
//! at `2πj/k` with half-width `π/(2k)`, parametrised counterclockwise by
//! `τ ∈ [0,1]`. An internal strip's `s = 0` end is glued with `τ = t`; its
//! `s = l` end and the `s = 0` end of an external strip with `τ = 1 - t`.
//! These choices make the two traversals of every interface opposite.

use crate::error::{Error, Result};
use crate::expr::ScalarFunction;
use crate::geometry::{sample_flow, ModelManifold, DEFAULT_STEP};
use crate::moduli::GradientTree;
use crate::numerics::{integrate, integrate_with_breaks, wrap_diff};
use crate::tree::{HalfEdgeId, MetricRibbonTree, VertexId};
use serde::Serialize;
use std::f64::consts::PI;

fn sigma(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// `σ(t) / (σ(t) + σ(1-t))` with `σ(t) = exp(-1/t)` for `t > 0`, else 0.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = sigma(t);
        a / (a + sigma(1.0 - t))
    }
}

pub fn smooth_step_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let a = sigma(t);
    let b = sigma(1.0 - t);
    a * b * (1.0 / (t * t) + 1.0 / ((1.0 - t) * (1.0 - t))) / ((a + b) * (a + b))
}

/// `ρ_l(s) = φ(l) φ(s) φ(l - s)` on an internal strip, `φ(-s)` on an
/// external one (`l = None`).
pub fn cutoff_rho(l: Option<f64>, s: f64) -> f64 {
    match l {
        Some(l) => smooth_step(l) * smooth_step(s) * smooth_step(l - s),
        None => smooth_step(-s),
    }
}

/// `∂ρ_l(s) / ∂l`.
pub fn cutoff_rho_dl(l: f64, s: f64) -> f64 {
    smooth_step(s) * (smooth_step_deriv(l) * smooth_step(l - s) + smooth_step(l) * smooth_step_deriv(l - s))
}

/// `∫₀^l ρ_l(s) ds`.
pub fn rho_integral(l: f64) -> f64 {
    if l <= 0.0 {
        return 0.0;
    }
    integrate_with_breaks(|s| cutoff_rho(Some(l), s), 0.0, l, &[1.0, l - 1.0], 1e-15)
}

/// The strip length `l` with `ε ∫₀^l ρ_l = R`, by bisection to `1e-12`.
pub fn strip_length_from_edge(r: f64, eps: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("Morse length must be positive, got {r}")));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
    }
    let target = r / eps;
    let (mut lo, mut hi) = (0.0, (target + 2.0).max(2.0));
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if rho_integral(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Grid and admissibility parameters for disk construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiskOptions {
    /// Strip nodes per unit of `s`.
    pub per_unit: usize,
    pub t_nodes: usize,
    /// Cells per arc and per gap on vertex boundary circles.
    pub theta_cells: usize,
    pub radial_nodes: usize,
    pub eps_max: f64,
}

impl Default for DiskOptions {
    fn default() -> Self {
        DiskOptions { per_unit: 100, t_nodes: 17, theta_cells: 24, radial_nodes: 17, eps_max: 0.25 }
    }
}

/// Where a strip end is glued.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Attachment {
    pub vertex: VertexId,
    pub half_edge: HalfEdgeId,
}

/// A strip with `q, p` sampled on `s × t`; values at `(k, j)` (s index `k`,
/// t index `j`) start at `((k * t.len()) + j) * n`.
#[derive(Clone, Debug)]
pub struct Strip {
    pub half_edge: HalfEdgeId,
    pub external: bool,
    pub function: ScalarFunction,
    pub length: f64,
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    /// Morse time `l(s)` at each `s` node.
    pub tau: Vec<f64>,
    pub rho: Vec<f64>,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub dim: usize,
    /// Attachment of the `s = 0` end, and of the `s = l` end for internal strips.
    pub start: Attachment,
    pub end: Option<Attachment>,
}

impl Strip {
    #[inline]
    pub fn at(&self, k: usize, j: usize) -> usize {
        (k * self.t.len() + j) * self.dim
    }

    pub fn q_at(&self, k: usize, j: usize) -> &[f64] {
        let i = self.at(k, j);
        &self.q[i..i + self.dim]
    }

    pub fn p_at(&self, k: usize, j: usize) -> &[f64] {
        let i = self.at(k, j);
        &self.p[i..i + self.dim]
    }

    /// Index of the `s = 0` node.
    pub fn zero_index(&self) -> usize {
        if self.external {
            self.s.len() - 1
        } else {
            0
        }
    }
}

/// A vertex region on a polar grid; values at `(i, j)` (radius `i`, angle
/// `j`) start at `((i * theta.len()) + j) * n`.
#[derive(Clone, Debug)]
pub struct VertexRegion {
    pub vertex: VertexId,
    pub valence: usize,
    pub center: Vec<f64>,
    /// `(half_edge, centre angle, half-width)` per cyclic position.
    pub arcs: Vec<(HalfEdgeId, f64, f64)>,
    pub radii: Vec<f64>,
    pub theta: Vec<f64>,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub dim: usize,
    pub moduli: Vec<f64>,
}

impl VertexRegion {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> usize {
        (i * self.theta.len() + j) * self.dim
    }

    /// `∮ ⟨p, dq⟩` over the unit circle, counterclockwise, by trapezoids.
    pub fn contour_integral(&self, torus: bool) -> f64 {
        let n = self.dim;
        let nt = self.theta.len();
        let i = self.radii.len() - 1;
        let mut sum = 0.0;
        for j in 0..nt {
            let a = self.at(i, j);
            let b = self.at(i, (j + 1) % nt);
            for c in 0..n {
                sum += 0.5 * (self.p[a + c] + self.p[b + c]) * diff(self.q[b + c], self.q[a + c], torus);
            }
        }
        sum
    }

    /// `∬ dp ∧ dq` over the disk from cell-averaged polar derivatives.
    pub fn area_integral(&self, torus: bool) -> f64 {
        let n = self.dim;
        let nt = self.theta.len();
        let mut sum = 0.0;
        for i in 0..self.radii.len() - 1 {
            let dr = self.radii[i + 1] - self.radii[i];
            for j in 0..nt {
                let jn = (j + 1) % nt;
                let dth = if jn == 0 { 2.0 * PI - self.theta[j] + self.theta[0] } else { self.theta[jn] - self.theta[j] };
                let (a, b, c, d) = (self.at(i, j), self.at(i + 1, j), self.at(i, jn), self.at(i + 1, jn));
                for k in 0..n {
                    let pr = 0.5 * (self.p[b + k] - self.p[a + k] + self.p[d + k] - self.p[c + k]) / dr;
                    let pt = 0.5 * (self.p[c + k] - self.p[a + k] + self.p[d + k] - self.p[b + k]) / dth;
                    let qr = 0.5 * (diff(self.q[b + k], self.q[a + k], torus) + diff(self.q[d + k], self.q[c + k], torus)) / dr;
                    let qt = 0.5 * (diff(self.q[c + k], self.q[a + k], torus) + diff(self.q[d + k], self.q[b + k], torus)) / dth;
                    sum += (pr * qt - pt * qr) * dr * dth;
                }
            }
        }
        sum
    }

    /// Arc position `τ ∈ [0,1]` of angle `θ`, if it lies on a glued arc.
    pub fn arc_position(&self, theta: f64) -> Option<(usize, f64)> {
        for (pos, &(_, c, w)) in self.arcs.iter().enumerate() {
            let mut d = theta - (c - w);
            d -= (d / (2.0 * PI)).floor() * 2.0 * PI;
            if d <= 2.0 * w + 1e-12 {
                return Some((pos, (d / (2.0 * w)).min(1.0)));
            }
        }
        None
    }
}

#[inline]
fn diff(a: f64, b: f64, torus: bool) -> f64 {
    if torus {
        wrap_diff(a - b)
    } else {
        a - b
    }
}

#[derive(Clone, Debug)]
pub struct DiskMap {
    pub tree: MetricRibbonTree,
    pub epsilon: f64,
    pub manifold: ModelManifold,
    pub strips: Vec<Strip>,
    pub vertices: Vec<VertexRegion>,
    pub options: DiskOptions,
}

fn uniform(a: f64, b: f64, cells: usize) -> Vec<f64> {
    (0..=cells).map(|k| if k == cells { b } else { a + (b - a) * k as f64 / cells as f64 }).collect()
}

/// Angles of a vertex circle: each arc and each gap split into `cells`.
fn vertex_angles(valence: usize, cells: usize) -> (Vec<f64>, Vec<(f64, f64)>) {
    let k = valence as f64;
    let w = PI / (2.0 * k);
    let mut theta = Vec::new();
    let mut arcs = Vec::new();
    for j in 0..valence {
        let c = 2.0 * PI * j as f64 / k;
        arcs.push((c, w));
        let start = c - w;
        let next = 2.0 * PI * (j + 1) as f64 / k - w;
        for i in 0..cells {
            theta.push(start + 2.0 * w * i as f64 / cells as f64);
        }
        for i in 0..cells {
            theta.push(c + w + (next - c - w) * i as f64 / cells as f64);
        }
    }
    let theta = theta.into_iter().map(|t| t.rem_euclid(2.0 * PI)).collect::<Vec<_>>();
    let mut order: Vec<usize> = (0..theta.len()).collect();
    order.sort_by(|&a, &b| theta[a].partial_cmp(&theta[b]).unwrap());
    (order.iter().map(|&i| theta[i]).collect(), arcs)
}

/// Backward time along leg `k` at which the trajectory is within `1e-8`
/// of its endpoint, or the closest approach up to time 60.
fn leg_time(g: &GradientTree, k: usize) -> Result<f64> {
    let p = &g.problem;
    let cp = &p.external_points[k];
    let back = p.leg_backward(k);
    let x0 = &g.vertex_positions[p.leg_vertex(k)];
    let dt = 0.05;
    let times: Vec<f64> = (0..=1200).map(|i| i as f64 * dt).collect();
    let pts = sample_flow(back, &p.manifold, x0, &times, DEFAULT_STEP)?;
    let mut best = (f64::INFINITY, 0.0);
    for (t, x) in times.iter().zip(&pts) {
        let d = p.manifold.dist(x, &cp.location);
        if d <= 1e-8 {
            return Ok(*t);
        }
        if d < best.0 {
            best = (d, *t);
        }
    }
    Ok(best.1)
}

/// Cumulative `ε ∫₀^{s_k} ρ` over the nodes `s` of a strip.
pub fn morse_times(l: Option<f64>, s: &[f64], eps: f64) -> Vec<f64> {
    let mut tau = vec![0.0; s.len()];
    match l {
        Some(l) => {
            for k in 1..s.len() {
                let piece = integrate_with_breaks(|x| cutoff_rho(Some(l), x), s[k - 1], s[k], &[1.0, l - 1.0], 1e-15);
                tau[k] = tau[k - 1] + eps * piece;
            }
        }
        None => {
            for k in (0..s.len() - 1).rev() {
                let piece = integrate_with_breaks(|x| cutoff_rho(None, x), s[k], s[k + 1], &[-1.0], 1e-15);
                tau[k] = tau[k + 1] - eps * piece;
            }
        }
    }
    tau
}

/// The disk map of a gradient tree: vertex regions constant at the vertex
/// positions, `p ≡ 0`, and strips following the reparametrised edge
/// trajectories. `vertex_moduli[v]` must have `max(|v| - 3, 0)` entries.
pub fn build_solution(g: &GradientTree, eps: f64, vertex_moduli: &[Vec<f64>], opts: &DiskOptions) -> Result<DiskMap> {
    let p = &g.problem;
    let tree = &p.tree;
    let n = p.dim();
    if !(eps > 0.0) || eps > opts.eps_max {
        return Err(Error::Disk(format!("epsilon {eps} outside (0, {}]", opts.eps_max)));
    }
    if opts.per_unit < 2 || opts.t_nodes < 3 || opts.theta_cells < 2 || opts.radial_nodes < 2 {
        return Err(Error::Disk("disk grid too coarse".into()));
    }
    if vertex_moduli.len() != tree.vertex_count() {
        return Err(Error::Disk(format!(
            "vertex moduli given for {} vertices, tree has {}",
            vertex_moduli.len(),
            tree.vertex_count()
        )));
    }
    for (v, m) in vertex_moduli.iter().enumerate() {
        let want = tree.valence(v).saturating_sub(3);
        if m.len() != want {
            return Err(Error::Disk(format!("vertex {v} of valence {} needs {want} moduli, got {}", tree.valence(v), m.len())));
        }
    }
    let t = uniform(0.0, 1.0, opts.t_nodes - 1);
    let mut strips = Vec::new();
    for (e, edge) in tree.internal_edges().iter().enumerate() {
        let r = g.lengths[e];
        let l = if r == 0.0 { 0.0 } else { strip_length_from_edge(r, eps)? };
        let cells = if l == 0.0 { 0 } else { ((opts.per_unit as f64 * l).ceil() as usize).max(4) };
        let s = uniform(0.0, l, cells);
        let tau = if l == 0.0 { vec![0.0] } else { morse_times(Some(l), &s, eps) };
        let rho = s.iter().map(|&x| cutoff_rho(Some(l), x)).collect();
        let f = p.half_edge_function(edge.forward).clone();
        let v = tree.half_edge(edge.forward).source;
        let w = tree.half_edge(edge.backward).source;
        let traj = sample_flow(&f, &p.manifold, &g.vertex_positions[v], &tau, DEFAULT_STEP)?;
        strips.push(fill_strip(edge.forward, false, f, l, s, &t, tau, rho, &traj, n, Attachment { vertex: v, half_edge: edge.forward }, Some(Attachment { vertex: w, half_edge: edge.backward })));
    }
    for k in 0..tree.d() {
        let h = tree.leaf(k);
        let v = p.leg_vertex(k);
        let big_t = leg_time(g, k)?;
        let s_max = (big_t / eps + 0.5).max(2.0);
        let cells = ((opts.per_unit as f64 * s_max).ceil() as usize).max(4);
        let s = uniform(-s_max, 0.0, cells);
        let tau = morse_times(None, &s, eps);
        let rho = s.iter().map(|&x| cutoff_rho(None, x)).collect();
        let back_times: Vec<f64> = tau.iter().rev().map(|x| -x).collect();
        let mut traj = sample_flow(p.leg_backward(k), &p.manifold, &g.vertex_positions[v], &back_times, DEFAULT_STEP)?;
        traj.reverse();
        let f = p.leg_function(k).clone();
        strips.push(fill_strip(h, true, f, s_max, s, &t, tau, rho, &traj, n, Attachment { vertex: v, half_edge: h }, None));
    }
    let mut vertices = Vec::new();
    for v in 0..tree.vertex_count() {
        let valence = tree.valence(v);
        let (theta, arcs) = vertex_angles(valence, opts.theta_cells);
        let radii = uniform(0.0, 1.0, opts.radial_nodes - 1);
        let center = g.vertex_positions[v].clone();
        let cells = radii.len() * theta.len();
        let q = (0..cells).flat_map(|_| center.iter().copied()).collect();
        vertices.push(VertexRegion {
            vertex: v,
            valence,
            arcs: tree.cyclic_order(v).iter().zip(arcs).map(|(&h, (c, w))| (h, c, w)).collect(),
            center,
            radii,
            theta,
            q,
            p: vec![0.0; cells * n],
            dim: n,
            moduli: vertex_moduli[v].clone(),
        });
    }
    let metric = MetricRibbonTree::new(tree.clone(), g.lengths.clone())?;
    Ok(DiskMap { tree: metric, epsilon: eps, manifold: p.manifold, strips, vertices, options: *opts })
}

#[allow(clippy::too_many_arguments)]
fn fill_strip(
    half_edge: HalfEdgeId,
    external: bool,
    function: ScalarFunction,
    length: f64,
    s: Vec<f64>,
    t: &[f64],
    tau: Vec<f64>,
    rho: Vec<f64>,
    traj: &[Vec<f64>],
    n: usize,
    start: Attachment,
    end: Option<Attachment>,
) -> Strip {
    let nt = t.len();
    let mut q = Vec::with_capacity(s.len() * nt * n);
    for x in traj {
        for _ in 0..nt {
            q.extend_from_slice(x);
        }
    }
    let p = vec![0.0; q.len()];
    Strip { half_edge, external, function, length, s, t: t.to_vec(), tau, rho, q, p, dim: n, start, end }
}

impl DiskMap {
    pub fn is_torus(&self) -> bool {
        self.manifold.is_torus()
    }

    /// Largest mismatch between strip ends and the constant values of the
    /// adjacent vertex regions.
    pub fn continuity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let m = &self.manifold;
        for st in &self.strips {
            let mut ends = vec![(st.zero_index(), st.start.vertex)];
            if let Some(end) = st.end {
                ends.push((st.s.len() - 1, end.vertex));
            }
            for (k, v) in ends {
                for j in 0..st.t.len() {
                    worst = worst.max(m.dist(st.q_at(k, j), &self.vertices[v].center));
                }
            }
        }
        worst
    }

    /// Largest `|p|` on the boundary lines `t = 0, 1` of all strips and on
    /// the free boundary of the vertex regions.
    pub fn boundary_p(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for st in &self.strips {
            for k in 0..st.s.len() {
                for j in [0, st.t.len() - 1] {
                    worst = st.p_at(k, j).iter().fold(worst, |a, v| a.max(v.abs()));
                }
            }
        }
        for vr in &self.vertices {
            let i = vr.radii.len() - 1;
            for (j, &th) in vr.theta.iter().enumerate() {
                if vr.arc_position(th).is_none() {
                    let a = vr.at(i, j);
                    worst = vr.p[a..a + vr.dim].iter().fold(worst, |acc, v| acc.max(v.abs()));
                }
            }
        }
        worst
    }

    /// Max of `|l(l_e) - R_e|` over internal strips.
    pub fn length_bookkeeping_error(&self) -> f64 {
        let lengths = self.tree.lengths();
        self.strips
            .iter()
            .filter(|s| !s.external)
            .zip(lengths)
            .map(|(s, &r)| (s.tau.last().copied().unwrap_or(0.0) - r).abs())
            .fold(0.0, f64::max)
    }

    /// Adds `δp, δq = Σ_k c_k sin(kπt) w(s)` on strips (`w ≡ 1` on internal
    /// strips, vanishing at the far end of external ones) and `r² g(θ)` on
    /// vertex regions, `g` being the strip profile on glued arcs and `0`
    /// elsewhere. `p_coeffs[strip][mode][component]`, likewise for `q`.
    pub fn perturbed(&self, p_coeffs: &[Vec<Vec<f64>>], q_coeffs: &[Vec<Vec<f64>>]) -> Result<DiskMap> {
        if p_coeffs.len() != self.strips.len() || q_coeffs.len() != self.strips.len() {
            return Err(Error::Disk("one coefficient block per strip required".into()));
        }
        let n = self.manifold.dim;
        let profile = |coeffs: &[Vec<f64>], t: f64, c: usize| -> f64 {
            coeffs.iter().enumerate().map(|(m, a)| a[c] * ((m + 1) as f64 * PI * t).sin()).sum()
        };
        let mut out = self.clone();
        for (si, st) in out.strips.iter_mut().enumerate() {
            let s_max = if st.external { -st.s[0] } else { 0.0 };
            for k in 0..st.s.len() {
                let w = if st.external { smooth_step(2.0 * (st.s[k] + s_max) / s_max) } else { 1.0 };
                for j in 0..st.t.len() {
                    let a = st.at(k, j);
                    for c in 0..n {
                        st.p[a + c] += w * profile(&p_coeffs[si], st.t[j], c);
                        st.q[a + c] += w * profile(&q_coeffs[si], st.t[j], c);
                    }
                }
            }
            if self.manifold.is_torus() {
                for v in st.q.iter_mut() {
                    *v = crate::numerics::wrap_unit(*v);
                }
            }
        }
        // strip index and the t ↔ τ relation for each glued half-edge
        let glue = |h: HalfEdgeId| -> (usize, bool) {
            for (si, st) in self.strips.iter().enumerate() {
                if st.start.half_edge == h {
                    return (si, !st.external);
                }
                if st.end.is_some_and(|e| e.half_edge == h) {
                    return (si, false);
                }
            }
            unreachable!("every half-edge bounds a strip")
        };
        for vr in out.vertices.iter_mut() {
            let nt = vr.theta.len();
            for j in 0..nt {
                let Some((pos, tau)) = vr.arc_position(vr.theta[j]) else { continue };
                let (si, direct) = glue(vr.arcs[pos].0);
                let t = if direct { tau } else { 1.0 - tau };
                for (i, &r) in vr.radii.iter().enumerate() {
                    let a = vr.at(i, j);
                    for c in 0..n {
                        vr.p[a + c] += r * r * profile(&p_coeffs[si], t, c);
                        vr.q[a + c] += r * r * profile(&q_coeffs[si], t, c);
                    }
                }
            }
            if self.manifold.is_torus() {
                for v in vr.q.iter_mut() {
                    *v = crate::numerics::wrap_unit(*v);
                }
            }
        }
        Ok(out)
    }

    /// Region manifest for export.
    pub fn manifest(&self) -> DiskManifest {
        DiskManifest {
            epsilon: self.epsilon,
            options: self.options,
            strips: self
                .strips
                .iter()
                .enumerate()
                .map(|(i, s)| StripEntry {
                    file: format!("strip_{i}.csv"),
                    half_edge: s.half_edge,
                    external: s.external,
                    length: s.length,
                    s_nodes: s.s.len(),
                    t_nodes: s.t.len(),
                    start: s.start,
                    end: s.end,
                })
                .collect(),
            vertices: self
                .vertices
                .iter()
                .map(|v| VertexEntry { vertex: v.vertex, valence: v.valence, position: v.center.clone(), moduli: v.moduli.clone() })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StripEntry {
    pub file: String,
    pub half_edge: HalfEdgeId,
    pub external: bool,
    pub length: f64,
    pub s_nodes: usize,
    pub t_nodes: usize,
    pub start: Attachment,
    pub end: Option<Attachment>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VertexEntry {
    pub vertex: VertexId,
    pub valence: usize,
    pub position: Vec<f64>,
    pub moduli: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiskManifest {
    pub epsilon: f64,
    pub options: DiskOptions,
    pub strips: Vec<StripEntry>,
    pub vertices: Vec<VertexEntry>,
}

/// CSV rows `t,s,q0..,p0..` of a strip.
pub fn strip_csv(st: &Strip) -> String {
    let n = st.dim;
    let mut out = String::from("t,s");
    for i in 0..n {
        out.push_str(&format!(",q{i}"));
    }
    for i in 0..n {
        out.push_str(&format!(",p{i}"));
    }
    out.push('\n');
    for k in 0..st.s.len() {
        for j in 0..st.t.len() {
            out.push_str(&format!("{:?},{:?}", st.t[j], st.s[k]));
            for v in st.q_at(k, j) {
                out.push_str(&format!(",{v:?}"));
            }
            for v in st.p_at(k, j) {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
    }
    out
}

/// Centered-difference residual of the strip equation at interior nodes:
/// `∂_s q + ∂_t p - ε ρ ∇f(q)` and `∂_t q - ∂_s p`, `2n` values per node.
#[derive(Clone, Debug)]
pub struct StripResidual {
    pub values: Vec<f64>,
    pub max_norm: f64,
}

pub fn residual(u: &DiskMap, strip: usize) -> StripResidual {
    let st = &u.strips[strip];
    let n = st.dim;
    let torus = u.is_torus();
    let (ns, nt) = (st.s.len(), st.t.len());
    let mut values = Vec::new();
    let mut max_norm: f64 = 0.0;
    if ns < 3 {
        return StripResidual { values, max_norm };
    }
    for k in 1..ns - 1 {
        let ds = st.s[k + 1] - st.s[k - 1];
        for j in 1..nt - 1 {
            let dt = st.t[j + 1] - st.t[j - 1];
            let q = st.q_at(k, j);
            let grad = st.function.grad_unchecked(q);
            let mut sq = 0.0;
            for c in 0..n {
                let qs = diff(st.q[st.at(k + 1, j) + c], st.q[st.at(k - 1, j) + c], torus) / ds;
                let pt = (st.p[st.at(k, j + 1) + c] - st.p[st.at(k, j - 1) + c]) / dt;
                let r1 = qs + pt - u.epsilon * st.rho[k] * grad[c];
                let qt = diff(st.q[st.at(k, j + 1) + c], st.q[st.at(k, j - 1) + c], torus) / dt;
                let ps = (st.p[st.at(k + 1, j) + c] - st.p[st.at(k - 1, j) + c]) / ds;
                let r2 = qt - ps;
                values.push(r1);
                values.push(r2);
                sq += r1 * r1 + r2 * r2;
            }
            max_norm = max_norm.max(sq.sqrt());
        }
    }
    StripResidual { values, max_norm }
}

/// Max norm of the Cauchy–Riemann residual `∂_x u + J ∂_y u` of a vertex
/// region in Cartesian coordinates, by centered differences on its polar
/// grid (interior nodes).
pub fn vertex_residual(u: &DiskMap, v: usize) -> f64 {
    let vr = &u.vertices[v];
    let n = vr.dim;
    let torus = u.is_torus();
    let nt = vr.theta.len();
    let mut worst: f64 = 0.0;
    for i in 1..vr.radii.len() - 1 {
        let r = vr.radii[i];
        let dr = vr.radii[i + 1] - vr.radii[i - 1];
        for j in 0..nt {
            let (jm, jp) = ((j + nt - 1) % nt, (j + 1) % nt);
            let dth = (vr.theta[jp] - vr.theta[jm]).rem_euclid(2.0 * PI);
            let th = vr.theta[j];
            let mut sq = 0.0;
            for c in 0..n {
                let qr = diff(vr.q[vr.at(i + 1, j) + c], vr.q[vr.at(i - 1, j) + c], torus) / dr;
                let qt = diff(vr.q[vr.at(i, jp) + c], vr.q[vr.at(i, jm) + c], torus) / dth;
                let pr = (vr.p[vr.at(i + 1, j) + c] - vr.p[vr.at(i - 1, j) + c]) / dr;
                let pt = (vr.p[vr.at(i, jp) + c] - vr.p[vr.at(i, jm) + c]) / dth;
                let (cs, sn) = (th.cos(), th.sin());
                let (qx, qy) = (cs * qr - sn * qt / r, sn * qr + cs * qt / r);
                let (px, py) = (cs * pr - sn * pt / r, sn * pr + cs * pt / r);
                // J(q, p) = (-p, q)
                let r1 = qx - py;
                let r2 = px + qy;
                sq += r1 * r1 + r2 * r2;
            }
            worst = worst.max(sq.sqrt());
        }
    }
    worst
}

/// `β(s) = ½ ∫₀¹ |p|² dt` with its first two `s`-derivatives.
#[derive(Clone, Debug, Serialize)]
pub struct BetaSeries {
    pub s: Vec<f64>,
    pub beta: Vec<f64>,
    pub beta_dot: Vec<f64>,
    pub beta_ddot: Vec<f64>,
}

/// β by trapezoids in `t`; derivatives by centered differences (one-sided
/// second order at the ends).
pub fn beta_of_strip(st: &Strip) -> BetaSeries {
    let nt = st.t.len();
    let beta: Vec<f64> = (0..st.s.len())
        .map(|k| {
            let mut acc = 0.0;
            for j in 0..nt - 1 {
                let a: f64 = st.p_at(k, j).iter().map(|v| v * v).sum();
                let b: f64 = st.p_at(k, j + 1).iter().map(|v| v * v).sum();
                acc += 0.5 * (a + b) * (st.t[j + 1] - st.t[j]);
            }
            0.5 * acc
        })
        .collect();
    let beta_dot = derivative(&st.s, &beta);
    let beta_ddot = derivative(&st.s, &beta_dot);
    BetaSeries { s: st.s.clone(), beta, beta_dot, beta_ddot }
}

pub fn beta(u: &DiskMap, strip: usize) -> BetaSeries {
    beta_of_strip(&u.strips[strip])
}

/// Finite-difference derivative on a uniform grid.
fn derivative(x: &[f64], y: &[f64]) -> Vec<f64> {
    let m = x.len();
    if m < 3 {
        return vec![0.0; m];
    }
    let h = x[1] - x[0];
    (0..m)
        .map(|k| {
            if k == 0 {
                (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h)
            } else if k == m - 1 {
                (3.0 * y[m - 1] - 4.0 * y[m - 2] + y[m - 3]) / (2.0 * h)
            } else {
                (y[k + 1] - y[k - 1]) / (2.0 * h)
            }
        })
        .collect()
}

/// `∮ ⟨p, dq⟩` around a strip, counterclockwise in `z = s + i t`.
pub fn strip_contour_integral(st: &Strip, torus: bool) -> f64 {
    let n = st.dim;
    let (ns, nt) = (st.s.len(), st.t.len());
    let seg = |a: usize, b: usize| -> f64 {
        (0..n).map(|c| 0.5 * (st.p[a + c] + st.p[b + c]) * diff(st.q[b + c], st.q[a + c], torus)).sum::<f64>()
    };
    let mut sum = 0.0;
    for k in 0..ns - 1 {
        sum += seg(st.at(k, 0), st.at(k + 1, 0));
        sum += seg(st.at(k + 1, nt - 1), st.at(k, nt - 1));
    }
    for j in 0..nt - 1 {
        sum += seg(st.at(ns - 1, j), st.at(ns - 1, j + 1));
        sum += seg(st.at(0, j + 1), st.at(0, j));
    }
    sum
}

/// `|Σ_V ∮ u*θ + Σ_S ∮ u*θ|` with `θ = ⟨p, dq⟩`.
pub fn energy_identity_check(u: &DiskMap) -> f64 {
    let torus = u.is_torus();
    let strips: f64 = u.strips.iter().map(|s| strip_contour_integral(s, torus)).sum();
    let verts: f64 = u.vertices.iter().map(|v| v.contour_integral(torus)).sum();
    (strips + verts).abs()
}

/// Independent check of a strip length by fine fixed-rule integration.
pub fn rho_integral_reference(l: f64) -> f64 {
    integrate(|s| cutoff_rho(Some(l), s), 0.0, l, 1e-14)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_step_shape() {
        assert_eq!(smooth_step(0.0), 0.0);
        assert_eq!(smooth_step(1.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        for i in 0..100 {
            let t = i as f64 / 100.0;
            assert!(smooth_step(t + 0.01) >= smooth_step(t));
            let fd = (smooth_step(t + 1e-6) - smooth_step(t - 1e-6)) / 2e-6;
            assert!((fd - smooth_step_deriv(t)).abs() < 1e-6);
        }
    }

    #[test]
    fn cutoff_examples() {
        assert_eq!(cutoff_rho(Some(3.0), 1.5), 1.0);
        for i in 0..=10 {
            assert!(cutoff_rho(Some(0.5), i as f64 / 20.0) <= smooth_step(0.5));
        }
        assert_eq!(cutoff_rho(Some(2.0), -0.3), 0.0);
        assert_eq!(cutoff_rho(None, 0.5), 0.0);
        assert_eq!(cutoff_rho(None, -2.0), 1.0);
    }

    #[test]
    fn strip_length_roundtrip() {
        for l0 in [2.0, 5.0, 10.0] {
            let r = 0.1 * rho_integral(l0);
            assert!((strip_length_from_edge(r, 0.1).unwrap() - l0).abs() < 1e-10);
        }
        assert!(strip_length_from_edge(0.0, 0.1).is_err());
    }
}
