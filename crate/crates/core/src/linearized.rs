//! Discretized linearizations along gradient trees.
//!
//! Every edge carries a node grid and the cell equations
//!
//! ```text
//! (ξ_{k+1} - ξ_k) / h - ½ (A_k ξ_k + A_{k+1} ξ_{k+1}) - λ ½ (b_k + b_{k+1}) = 0
//! ```
//!
//! For `D₀` the coefficient is the Hessian `A = ∇²f(γ)` and the forcing
//! `b = χ γ̇` only appears on internal edges of positive length. Columns are
//! ordered edge by edge (nodes, then components), followed by one `λ` per
//! internal edge. Rows are the cell equations, then the matching rows at the
//! vertices, then the stable-direction rows at the leg ends, then the slice
//! row in floer mode.

use crate::disk::{cutoff_rho, cutoff_rho_dl, morse_times};
use crate::error::{Error, Result};
use crate::geometry::{sample_flow, sample_flow_with_jacobian, DEFAULT_STEP};
use crate::moduli::{tangent_report, GradientTree, MARGINAL_LO, RANK_TOL};
use crate::numerics::{integrate, integrate_with_breaks, observed_order, Spectrum};
use crate::tree::HalfEdgeId;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Smallest accepted grid density (cells per unit length).
pub const MIN_PER_UNIT: usize = 50;
/// Smallest number of cells on any edge.
pub const MIN_CELLS: usize = 16;

/// `χ(τ) = c (1 - u²)³` with `u = 2(τ - L/2)/w`, `w = L/3`, normalised to
/// unit integral and supported in the middle third of `[0, L]`.
pub fn chi_bump(l: f64, tau: f64) -> f64 {
    if !(l > 0.0) {
        return 0.0;
    }
    let w = l / 3.0;
    let u = 2.0 * (tau - 0.5 * l) / w;
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let a = 1.0 - u * u;
    35.0 / (16.0 * w) * a * a * a
}

/// `ψ(τ) = ∫₀^τ χ`, in closed form.
pub fn psi_bump(l: f64, tau: f64) -> f64 {
    if !(l > 0.0) {
        return 0.0;
    }
    let w = l / 3.0;
    let u = 2.0 * (tau - 0.5 * l) / w;
    if u <= -1.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let (u3, u5, u7) = (u.powi(3), u.powi(5), u.powi(7));
        35.0 / 32.0 * (u - u3 + 0.6 * u5 - u7 / 7.0 + 16.0 / 35.0)
    }
}

/// The cutoffs `χ_e` of a tree with internal lengths `lengths`.
#[derive(Clone, Debug, PartialEq)]
pub struct CutoffChi {
    pub lengths: Vec<f64>,
}

impl CutoffChi {
    pub fn new(lengths: &[f64]) -> Self {
        CutoffChi { lengths: lengths.to_vec() }
    }

    pub fn for_tree(g: &GradientTree) -> Self {
        Self::new(&g.lengths)
    }

    pub fn chi(&self, e: usize, tau: f64) -> f64 {
        chi_bump(self.lengths[e], tau)
    }

    pub fn psi(&self, e: usize, tau: f64) -> f64 {
        psi_bump(self.lengths[e], tau)
    }
}

/// Which edge of the tree a block discretizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRef {
    Internal(usize),
    Leg(usize),
}

/// One edge of a discretized operator.
#[derive(Clone, Debug)]
pub struct EdgeBlock {
    pub edge: EdgeRef,
    pub half_edge: HalfEdgeId,
    /// Grid nodes (Morse time for `D₀`, strip coordinate for strips).
    pub nodes: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    /// `γ̇` at the nodes.
    pub velocity: Vec<DVector<f64>>,
    /// Coefficient `A_k`.
    pub coefficient: Vec<DMatrix<f64>>,
    /// Scalar factor `c_k` with forcing `b_k = c_k γ̇_k`.
    pub forcing: Vec<f64>,
    /// Running integral of the forcing factor.
    pub forcing_integral: Vec<f64>,
    /// Linearized flow from the first node to each node.
    pub jacobians: Vec<DMatrix<f64>>,
    pub col_offset: usize,
    pub row_offset: usize,
    pub lambda_col: Option<usize>,
}

impl EdgeBlock {
    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node_col(&self, k: usize, n: usize) -> usize {
        self.col_offset + k * n
    }
}

/// Sparse operator with its grid metadata.
#[derive(Clone, Debug)]
pub struct DiscretizedOperator {
    pub dim: usize,
    pub rows: usize,
    pub cols: usize,
    pub triplets: Vec<(usize, usize, f64)>,
    pub blocks: Vec<EdgeBlock>,
    /// First row after the cell equations.
    pub constraint_start: usize,
}

/// Summary of the discrete spectrum.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OperatorReport {
    pub rows: usize,
    pub cols: usize,
    pub kernel_dim: usize,
    pub cokernel_dim: usize,
    pub index: isize,
    pub expected_index: Option<isize>,
    pub marginal: bool,
    pub smallest_singular_value: f64,
    pub largest_singular_value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResidualNorms {
    pub max: f64,
    /// `(Σ h_k |r_k|²)^{1/2}` over the cell rows.
    pub l2: f64,
}

impl DiscretizedOperator {
    pub fn dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for &(r, c, v) in &self.triplets {
            m[(r, c)] += v;
        }
        m
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        for &(r, c, v) in &self.triplets {
            y[r] += v * x[c];
        }
        y
    }

    pub fn spectrum(&self) -> Spectrum {
        Spectrum::of(&self.dense())
    }

    pub fn index(&self) -> isize {
        self.cols as isize - self.rows as isize
    }

    pub fn report(&self, expected_index: Option<isize>) -> OperatorReport {
        let s = self.spectrum();
        OperatorReport {
            rows: self.rows,
            cols: self.cols,
            kernel_dim: s.kernel_dim(RANK_TOL),
            cokernel_dim: s.cokernel_dim(RANK_TOL),
            index: self.index(),
            expected_index,
            marginal: s.marginal(MARGINAL_LO, RANK_TOL),
            smallest_singular_value: s.values.last().copied().unwrap_or(0.0),
            largest_singular_value: s.max(),
        }
    }

    /// `row col value` lines, one per stored entry.
    pub fn triplet_text(&self) -> String {
        let mut out = format!("# rows {} cols {}\n", self.rows, self.cols);
        for &(r, c, v) in &self.triplets {
            out.push_str(&format!("{r} {c} {v:e}\n"));
        }
        out
    }

    /// Norms of `D x` restricted to the cell rows of block `b`.
    pub fn block_residual(&self, b: usize, x: &[f64]) -> ResidualNorms {
        let y = self.apply(x);
        let blk = &self.blocks[b];
        let n = self.dim;
        let (mut max, mut sq) = (0.0f64, 0.0);
        for k in 0..blk.cells() {
            let h = blk.nodes[k + 1] - blk.nodes[k];
            for c in 0..n {
                let r = y[blk.row_offset + k * n + c];
                max = max.max(r.abs());
                sq += h * r * r;
            }
        }
        ResidualNorms { max, l2: sq.sqrt() }
    }

    /// `(ψ γ̇, λ = 1)` on block `b`, zero elsewhere.
    pub fn explicit_kernel_vector(&self, b: usize) -> Result<Vec<f64>> {
        let blk = &self.blocks[b];
        let lc = blk
            .lambda_col
            .ok_or_else(|| Error::Linearized("block has no length variation".into()))?;
        let mut x = vec![0.0; self.cols];
        for k in 0..blk.nodes.len() {
            let col = blk.node_col(k, self.dim);
            for c in 0..self.dim {
                x[col + c] = blk.forcing_integral[k] * blk.velocity[k][c];
            }
        }
        x[lc] = 1.0;
        Ok(x)
    }

    /// The linearized flow of `xi0` along block `b` with `λ = 0`.
    pub fn flow_kernel_vector(&self, b: usize, xi0: &[f64]) -> Vec<f64> {
        let blk = &self.blocks[b];
        let v = DVector::from_column_slice(xi0);
        let mut x = vec![0.0; self.cols];
        for (k, j) in blk.jacobians.iter().enumerate() {
            let col = blk.node_col(k, self.dim);
            let xi = j * &v;
            x[col..col + self.dim].copy_from_slice(xi.as_slice());
        }
        x
    }
}

fn cell_count(len: f64, per_unit: usize) -> usize {
    ((per_unit as f64 * len).ceil() as usize).max(MIN_CELLS)
}

fn uniform(a: f64, b: f64, cells: usize) -> Vec<f64> {
    (0..=cells).map(|i| a + (b - a) * i as f64 / cells as f64).collect()
}

fn check_density(per_unit: usize) -> Result<()> {
    if per_unit < MIN_PER_UNIT {
        return Err(Error::Linearized(format!("grid density {per_unit} below the minimum {MIN_PER_UNIT}")));
    }
    Ok(())
}

struct BlockData {
    edge: EdgeRef,
    half_edge: HalfEdgeId,
    nodes: Vec<f64>,
    points: Vec<Vec<f64>>,
    velocity: Vec<DVector<f64>>,
    coefficient: Vec<DMatrix<f64>>,
    forcing: Vec<f64>,
    forcing_integral: Vec<f64>,
    jacobians: Vec<DMatrix<f64>>,
    has_lambda: bool,
}

/// Trajectory of `f` through `x0` sampled at the offsets `times - times[0]`,
/// with the flow Jacobians.
fn sampled(g: &GradientTree, f: &crate::expr::ScalarFunction, x0: &[f64], times: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<DMatrix<f64>>)> {
    let offs: Vec<f64> = times.iter().map(|t| t - times[0]).collect();
    let h = DEFAULT_STEP.min(offs.last().copied().unwrap_or(1.0) / offs.len().max(1) as f64).max(1e-6);
    let s = sample_flow_with_jacobian(f, &g.problem.manifold, x0, &offs, h)?;
    Ok(s.into_iter().unzip())
}

fn edge_data(g: &GradientTree, edge: EdgeRef, chi: &CutoffChi, per_unit: usize) -> Result<BlockData> {
    let p = &g.problem;
    match edge {
        EdgeRef::Internal(e) => {
            let ie = p.tree.internal_edges()[e];
            let l = g.lengths[e];
            if !(l > 0.0) {
                return Err(Error::Linearized(format!(
                    "internal edge {e} has length zero; contract the tree before linearizing"
                )));
            }
            let f = p.half_edge_function(ie.forward);
            let nodes = uniform(0.0, l, cell_count(l, per_unit));
            let x0 = &g.vertex_positions[p.tree.half_edge(ie.forward).source];
            let (points, jacobians) = sampled(g, f, x0, &nodes)?;
            let (velocity, coefficient) = points.iter().map(|x| f.grad_hessian_unchecked(x)).unzip();
            Ok(BlockData {
                edge,
                half_edge: ie.forward,
                forcing: nodes.iter().map(|&t| chi.chi(e, t)).collect(),
                forcing_integral: nodes.iter().map(|&t| chi.psi(e, t)).collect(),
                nodes,
                points,
                velocity,
                coefficient,
                jacobians,
                has_lambda: true,
            })
        }
        EdgeRef::Leg(k) => {
            let t = p.t_back(k);
            let nodes = uniform(-t, 0.0, cell_count(t, per_unit));
            let back: Vec<f64> = nodes.iter().rev().map(|s| -s).collect();
            let x_v = &g.vertex_positions[p.leg_vertex(k)];
            let mut start = sample_flow(p.leg_backward(k), &p.manifold, x_v, &back, DEFAULT_STEP.min(t / nodes.len() as f64))?;
            let x_start = start.pop().expect("nonempty grid");
            let f = p.leg_function(k);
            let (points, jacobians) = sampled(g, f, &x_start, &nodes)?;
            let (velocity, coefficient) = points.iter().map(|x| f.grad_hessian_unchecked(x)).unzip();
            Ok(BlockData {
                edge,
                half_edge: p.tree.leaf(k),
                forcing: vec![0.0; nodes.len()],
                forcing_integral: vec![0.0; nodes.len()],
                nodes,
                points,
                velocity,
                coefficient,
                jacobians,
                has_lambda: false,
            })
        }
    }
}

struct Assembler {
    n: usize,
    triplets: Vec<(usize, usize, f64)>,
    blocks: Vec<EdgeBlock>,
    rows: usize,
}

impl Assembler {
    fn new(n: usize) -> Self {
        Assembler { n, triplets: Vec::new(), blocks: Vec::new(), rows: 0 }
    }

    /// Lays out columns for every block, then the λ columns.
    fn layout(&mut self, data: Vec<BlockData>) -> usize {
        let n = self.n;
        let mut col = 0;
        let mut row = 0;
        let mut blocks = Vec::new();
        for d in data {
            let nodes = d.nodes.len();
            blocks.push(EdgeBlock {
                edge: d.edge,
                half_edge: d.half_edge,
                nodes: d.nodes,
                points: d.points,
                velocity: d.velocity,
                coefficient: d.coefficient,
                forcing: d.forcing,
                forcing_integral: d.forcing_integral,
                jacobians: d.jacobians,
                col_offset: col,
                row_offset: row,
                lambda_col: d.has_lambda.then_some(usize::MAX),
            });
            col += nodes * n;
            row += (nodes - 1) * n;
        }
        for b in blocks.iter_mut() {
            if b.lambda_col.is_some() {
                b.lambda_col = Some(col);
                col += 1;
            }
        }
        self.blocks = blocks;
        self.rows = row;
        col
    }

    fn cells(&mut self) {
        let n = self.n;
        for b in &self.blocks {
            for k in 0..b.cells() {
                let h = b.nodes[k + 1] - b.nodes[k];
                let (c0, c1) = (b.node_col(k, n), b.node_col(k + 1, n));
                for i in 0..n {
                    let r = b.row_offset + k * n + i;
                    self.triplets.push((r, c0 + i, -1.0 / h));
                    self.triplets.push((r, c1 + i, 1.0 / h));
                    for j in 0..n {
                        let a0 = -0.5 * b.coefficient[k][(i, j)];
                        let a1 = -0.5 * b.coefficient[k + 1][(i, j)];
                        if a0 != 0.0 {
                            self.triplets.push((r, c0 + j, a0));
                        }
                        if a1 != 0.0 {
                            self.triplets.push((r, c1 + j, a1));
                        }
                    }
                    if let Some(lc) = b.lambda_col {
                        let v = -0.5 * (b.forcing[k] * b.velocity[k][i] + b.forcing[k + 1] * b.velocity[k + 1][i]);
                        if v != 0.0 {
                            self.triplets.push((r, lc, v));
                        }
                    }
                }
            }
        }
    }

    fn row(&mut self, entries: &[(usize, f64)]) {
        for &(c, v) in entries {
            self.triplets.push((self.rows, c, v));
        }
        self.rows += 1;
    }

    fn finish(self, cols: usize, constraint_start: usize) -> DiscretizedOperator {
        DiscretizedOperator {
            dim: self.n,
            rows: self.rows,
            cols,
            triplets: self.triplets,
            blocks: self.blocks,
            constraint_start,
        }
    }
}

/// Column of the node where half-edge `h` meets its source vertex.
fn endpoint_col(blocks: &[EdgeBlock], h: HalfEdgeId, g: &GradientTree, n: usize) -> usize {
    let tree = &g.problem.tree;
    for b in blocks {
        match b.edge {
            EdgeRef::Internal(e) => {
                let ie = tree.internal_edges()[e];
                if ie.forward == h {
                    return b.node_col(0, n);
                }
                if ie.backward == h {
                    return b.node_col(b.nodes.len() - 1, n);
                }
            }
            EdgeRef::Leg(_) => {
                if b.half_edge == h {
                    return b.node_col(b.nodes.len() - 1, n);
                }
            }
        }
    }
    unreachable!("every half-edge belongs to an edge block")
}

/// Blocks for every internal edge then every leg, in order.
fn all_edges(g: &GradientTree) -> Vec<EdgeRef> {
    let ne = g.problem.tree.internal_edges().len();
    (0..ne).map(EdgeRef::Internal).chain((0..g.problem.tree.d()).map(EdgeRef::Leg)).collect()
}

/// The linearized operator `D₀` of the gradient tree `g` on a grid of
/// `per_unit` cells per unit length (at least [`MIN_CELLS`] per edge).
pub fn assemble_d0(g: &GradientTree, chi: &CutoffChi, per_unit: usize) -> Result<DiscretizedOperator> {
    check_density(per_unit)?;
    let p = &g.problem;
    let n = p.dim();
    let data = all_edges(g).into_iter().map(|e| edge_data(g, e, chi, per_unit)).collect::<Result<Vec<_>>>()?;
    let mut a = Assembler::new(n);
    let cols = a.layout(data);
    a.cells();
    let constraint_start = a.rows;
    let inv = std::f64::consts::FRAC_1_SQRT_2;
    for v in 0..p.tree.vertex_count() {
        let order = p.tree.cyclic_order(v).to_vec();
        let first = endpoint_col(&a.blocks, order[0], g, n);
        for &h in &order[1..] {
            let col = endpoint_col(&a.blocks, h, g, n);
            for i in 0..n {
                a.row(&[(col + i, inv), (first + i, -inv)]);
            }
        }
    }
    for k in 0..p.tree.d() {
        let es = p.external_points[k].stable_basis();
        let b = a.blocks.iter().position(|b| b.edge == EdgeRef::Leg(k)).expect("leg block");
        let col = a.blocks[b].node_col(0, n);
        for s in 0..es.ncols() {
            let entries: Vec<(usize, f64)> = (0..n).map(|i| (col + i, es[(i, s)])).collect();
            a.row(&entries);
        }
    }
    if let Some((f, _)) = p.slice() {
        let grad = f.grad(&g.vertex_positions[0])?;
        let norm = grad.norm();
        if norm == 0.0 {
            return Err(Error::Linearized("slice function is critical at vertex 0".into()));
        }
        let col = endpoint_col(&a.blocks, p.tree.cyclic_order(0)[0], g, n);
        let entries: Vec<(usize, f64)> = (0..n).map(|i| (col + i, grad[i] / norm)).collect();
        a.row(&entries);
    }
    Ok(a.finish(cols, constraint_start))
}

/// `n + |E_int| - Σ ind - [floer]`, the index `D₀` should have.
pub fn expected_index(g: &GradientTree) -> isize {
    let p = &g.problem;
    let sum: isize = p.external_points.iter().map(|c| c.morse_index as isize).sum();
    p.dim() as isize + p.tree.internal_edges().len() as isize - sum - isize::from(p.tree.floer_mode())
}

/// The cell equations of a single edge, without any constraint rows.
pub fn assemble_edge(g: &GradientTree, edge: EdgeRef, chi: &CutoffChi, per_unit: usize) -> Result<DiscretizedOperator> {
    check_density(per_unit)?;
    let data = edge_data(g, edge, chi, per_unit)?;
    let mut a = Assembler::new(g.problem.dim());
    let cols = a.layout(vec![data]);
    a.cells();
    let rows = a.rows;
    Ok(a.finish(cols, rows))
}

/// `χ̃(s) = χ_e(τ(s)) ρ_l(s) + ∂_l ρ_l(s)`.
pub fn chi_tilde(chi_l: f64, tau: f64, l: f64, s: f64) -> f64 {
    chi_bump(chi_l, tau) * cutoff_rho(Some(l), s) + cutoff_rho_dl(l, s)
}

/// The edge operator on the strip `[0, l]` of internal edge `e`, rescaled by
/// the strip coordinate: coefficient `ε ρ_l ∇²f(γ(τ(s)))`, forcing
/// `ε χ̃ γ̇(τ(s))`, with `τ(s) = ε ∫₀^s ρ_l`.
pub fn assemble_strip_reduced_with_length(
    g: &GradientTree,
    e: usize,
    eps: f64,
    l: f64,
    per_unit: usize,
) -> Result<DiscretizedOperator> {
    check_density(per_unit)?;
    if !(l > 0.0) || !(eps >= 0.0) {
        return Err(Error::Linearized(format!("invalid strip length {l} or epsilon {eps}")));
    }
    let p = &g.problem;
    let ie = p.tree.internal_edges()[e];
    let f = p.half_edge_function(ie.forward);
    let big_l = g.lengths[e];
    let nodes = uniform(0.0, l, cell_count(l, per_unit));
    let tau = morse_times(Some(l), &nodes, eps);
    let x0 = &g.vertex_positions[p.tree.half_edge(ie.forward).source];
    let (points, jacobians) = sampled_at(g, f, x0, &tau)?;
    let mut velocity = Vec::new();
    let mut coefficient = Vec::new();
    for (x, &s) in points.iter().zip(&nodes) {
        let (gr, h) = f.grad_hessian_unchecked(x);
        velocity.push(gr);
        coefficient.push(h * (eps * cutoff_rho(Some(l), s)));
    }
    let tilde: Vec<f64> = nodes.iter().zip(&tau).map(|(&s, &t)| chi_tilde(big_l, t, l, s)).collect();
    let mass: f64 = (1..nodes.len()).map(|k| 0.5 * (nodes[k] - nodes[k - 1]) * (tilde[k] + tilde[k - 1])).sum();
    if eps > 0.0 && mass.abs() < 1e-12 {
        return Err(Error::Linearized(format!("χ̃ on strip of edge {e} integrates to zero")));
    }
    let forcing: Vec<f64> = tilde.iter().map(|c| eps * c).collect();
    let breaks = [1.0, l - 1.0];
    let mut forcing_integral = vec![0.0; nodes.len()];
    let mut acc = 0.0;
    for k in 1..nodes.len() {
        acc += integrate_with_breaks(|s| cutoff_rho_dl(l, s), nodes[k - 1], nodes[k], &breaks, 1e-15);
        forcing_integral[k] = psi_bump(big_l, tau[k]) + eps * acc;
    }
    forcing_integral[0] = psi_bump(big_l, tau[0]);
    let data = BlockData {
        edge: EdgeRef::Internal(e),
        half_edge: ie.forward,
        nodes,
        points,
        velocity,
        coefficient,
        forcing,
        forcing_integral,
        jacobians,
        has_lambda: true,
    };
    let mut a = Assembler::new(p.dim());
    let cols = a.layout(vec![data]);
    a.cells();
    let rows = a.rows;
    Ok(a.finish(cols, rows))
}

/// Like [`assemble_strip_reduced_with_length`] with the strip length that
/// matches the Morse length of edge `e` at this `eps`.
pub fn assemble_strip_reduced(g: &GradientTree, e: usize, eps: f64, per_unit: usize) -> Result<DiscretizedOperator> {
    let l = crate::disk::strip_length_from_edge(g.lengths[e], eps)?;
    assemble_strip_reduced_with_length(g, e, eps, l, per_unit)
}

/// Trajectory at nondecreasing times (not necessarily starting at zero).
fn sampled_at(g: &GradientTree, f: &crate::expr::ScalarFunction, x0: &[f64], times: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<DMatrix<f64>>)> {
    let span = times.last().copied().unwrap_or(0.0) - times[0];
    let h = if span > 0.0 { DEFAULT_STEP.min(span / times.len() as f64).max(1e-7) } else { DEFAULT_STEP };
    let start = crate::geometry::flow(f, &g.problem.manifold, x0, times[0], DEFAULT_STEP)?;
    let offs: Vec<f64> = times.iter().map(|t| t - times[0]).collect();
    let s = sample_flow_with_jacobian(f, &g.problem.manifold, &start, &offs, h)?;
    Ok(s.into_iter().unzip())
}

/// A smooth section `[t0, t1] → ℝⁿ` built from a few Fourier modes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmoothSection {
    pub t0: f64,
    pub t1: f64,
    /// `cos[j][c]` and `sin[j][c]` multiply `cos(jπ(t - t0))` and
    /// `sin(jπ(t - t0))`.
    pub cos: Vec<Vec<f64>>,
    pub sin: Vec<Vec<f64>>,
    /// Multiply by `s³`, making the section vanish at `t0` to third order.
    pub vanish_left: bool,
}

impl SmoothSection {
    pub fn random(rng: &mut ChaCha8Rng, n: usize, t0: f64, t1: f64, modes: usize, vanish_left: bool) -> Self {
        let mut draw = || (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let cos = (0..modes).map(|_| draw()).collect();
        let sin = (0..modes).map(|_| draw()).collect();
        SmoothSection { t0, t1, cos, sin, vanish_left }
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let n = self.cos.first().map_or(0, |c| c.len());
        let s = (t - self.t0) / (self.t1 - self.t0);
        let mut out = DVector::zeros(n);
        for (j, (a, b)) in self.cos.iter().zip(&self.sin).enumerate() {
            let w = std::f64::consts::PI * j as f64 * (t - self.t0);
            for c in 0..n {
                out[c] += a[c] * w.cos() + b[c] * w.sin();
            }
        }
        if self.vanish_left {
            out *= s * s * s;
        }
        out
    }
}

/// Both sides of the integration-by-parts identity on one edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdjointCheck {
    /// `⟨D ξ, η⟩ + ⟨(ξ, λ), D* η⟩`.
    pub lhs: f64,
    /// `⟨ξ(t₁), η(t₁)⟩ - ⟨ξ(t₀), η(t₀)⟩`.
    pub boundary: f64,
    pub defect: f64,
}

/// Compares the assembled edge operator with an independently discretized
/// formal adjoint `D* η = (η' + ∇²f η, ∫ χ ⟨γ̇, η⟩)`. `D ξ` is paired with
/// `η` at cell midpoints; `D* η` uses fourth-order differences and
/// Gregory end-corrected weights, so the defect measures the assembled
/// operator's own error.
pub fn adjoint_identity_check(
    g: &GradientTree,
    edge: EdgeRef,
    xi: &dyn Fn(f64) -> DVector<f64>,
    lambda: f64,
    eta: &dyn Fn(f64) -> DVector<f64>,
    per_unit: usize,
) -> Result<AdjointCheck> {
    let chi = CutoffChi::for_tree(g);
    let op = assemble_edge(g, edge, &chi, per_unit)?;
    let n = op.dim;
    let b = &op.blocks[0];
    let t = &b.nodes;
    let m = t.len();
    let mut x = vec![0.0; op.cols];
    let xs: Vec<DVector<f64>> = t.iter().map(|&s| xi(s)).collect();
    let es: Vec<DVector<f64>> = t.iter().map(|&s| eta(s)).collect();
    for k in 0..m {
        x[b.node_col(k, n)..b.node_col(k, n) + n].copy_from_slice(xs[k].as_slice());
    }
    if let Some(lc) = b.lambda_col {
        x[lc] = lambda;
    }
    let y = op.apply(&x);
    let mut primal = 0.0;
    for k in 0..m - 1 {
        let h = t[k + 1] - t[k];
        let mid = eta(0.5 * (t[k] + t[k + 1]));
        for c in 0..n {
            primal += h * y[b.row_offset + k * n + c] * mid[c];
        }
    }
    let h = t[1] - t[0];
    let d = |c: [f64; 5], at: [usize; 5]| -> DVector<f64> {
        let mut out = DVector::zeros(n);
        for (w, &i) in c.iter().zip(&at) {
            out += *w * &es[i];
        }
        out / (12.0 * h)
    };
    let deriv = |k: usize| -> DVector<f64> {
        match k {
            0 => d([-25.0, 48.0, -36.0, 16.0, -3.0], [0, 1, 2, 3, 4]),
            1 => d([-3.0, -10.0, 18.0, -6.0, 1.0], [0, 1, 2, 3, 4]),
            k if k == m - 1 => -d([-25.0, 48.0, -36.0, 16.0, -3.0], [m - 1, m - 2, m - 3, m - 4, m - 5]),
            k if k == m - 2 => -d([-3.0, -10.0, 18.0, -6.0, 1.0], [m - 1, m - 2, m - 3, m - 4, m - 5]),
            k => d([1.0, -8.0, 0.0, 8.0, -1.0], [k - 2, k - 1, k, k + 1, k + 2]),
        }
    };
    let gregory = [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0];
    let mut dual = 0.0;
    let mut lam_part = 0.0;
    for k in 0..m {
        let edge = k.min(m - 1 - k);
        let w = h * gregory.get(edge).copied().unwrap_or(1.0);
        let ds = deriv(k) + &b.coefficient[k] * &es[k];
        dual += w * xs[k].dot(&ds);
        lam_part += w * b.forcing[k] * b.velocity[k].dot(&es[k]);
    }
    let lhs = primal + dual + lambda * lam_part;
    let boundary = xs[m - 1].dot(&es[m - 1]) - xs[0].dot(&es[0]);
    Ok(AdjointCheck { lhs, boundary, defect: (lhs - boundary).abs() })
}

/// Random smooth `ξ, η` on `edge` from `seed`; on legs both vanish at the
/// far end.
pub fn random_sections(g: &GradientTree, edge: EdgeRef, seed: u64) -> (SmoothSection, SmoothSection, f64) {
    let p = &g.problem;
    let (t0, t1, leg) = match edge {
        EdgeRef::Internal(e) => (0.0, g.lengths[e], false),
        EdgeRef::Leg(k) => (-p.t_back(k), 0.0, true),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = SmoothSection::random(&mut rng, p.dim(), t0, t1, 2, leg);
    let b = SmoothSection::random(&mut rng, p.dim(), t0, t1, 2, leg);
    let lambda = if leg { 0.0 } else { rng.gen_range(-1.0..1.0) };
    (a, b, lambda)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IndexAdditivity {
    pub index_d0: isize,
    pub kernel_dim: usize,
    pub cokernel_dim: usize,
    /// `Σ_v (|v| - 3)`, zero in floer mode.
    pub vertex_correction: isize,
    pub total: isize,
    pub expected_dimension: isize,
    /// Moduli dimension from the tangent-space computation.
    pub tangent_dim_moduli: usize,
    pub consistent: bool,
}

/// `index D₀ + Σ_v (|v| - 3)` against the expected moduli dimension, and the
/// kernel of `D₀` against the tangent-space count.
pub fn index_additivity(g: &GradientTree, per_unit: usize) -> Result<IndexAdditivity> {
    let p = &g.problem;
    let op = assemble_d0(g, &CutoffChi::for_tree(g), per_unit)?;
    let spec = op.spectrum();
    let vertex_correction: isize = if p.tree.floer_mode() {
        0
    } else {
        (0..p.tree.vertex_count()).map(|v| p.tree.valence(v) as isize - 3).sum()
    };
    let index_d0 = op.index();
    let total = index_d0 + vertex_correction;
    let expected_dimension = p.expected_dimension();
    let tangent = tangent_report(g)?;
    let kernel_dim = spec.kernel_dim(RANK_TOL);
    let cokernel_dim = spec.cokernel_dim(RANK_TOL);
    Ok(IndexAdditivity {
        index_d0,
        kernel_dim,
        cokernel_dim,
        vertex_correction,
        total,
        expected_dimension,
        tangent_dim_moduli: tangent.dim_moduli,
        consistent: total == expected_dimension
            && kernel_dim == tangent.dim_moduli
            && index_d0 == expected_index(g),
    })
}

/// Smallest nonzero singular values of the cell equations with `L²`
/// weights at `m`, `2m` and `4m` cells per unit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SigmaConvergence {
    pub grids: [Vec<f64>; 3],
    /// Largest relative change from `m` to `2m`, then from `2m` to `4m`.
    pub changes: [f64; 2],
    pub order: f64,
}

fn weighted_cell_sigmas(op: &DiscretizedOperator, count: usize) -> Vec<f64> {
    let n = op.dim;
    let mut row_w = vec![1.0; op.constraint_start];
    let mut col_w = vec![1.0; op.cols];
    for b in &op.blocks {
        let m = b.nodes.len();
        for k in 0..m {
            let left = if k > 0 { b.nodes[k] - b.nodes[k - 1] } else { 0.0 };
            let right = if k + 1 < m { b.nodes[k + 1] - b.nodes[k] } else { 0.0 };
            let w = 0.5 * (left + right);
            for c in 0..n {
                col_w[b.node_col(k, n) + c] = 1.0 / w.sqrt();
            }
            if k + 1 < m {
                for c in 0..n {
                    row_w[b.row_offset + k * n + c] = right.sqrt();
                }
            }
        }
    }
    let mut a = DMatrix::zeros(op.constraint_start, op.cols);
    for &(r, c, v) in &op.triplets {
        if r < op.constraint_start {
            a[(r, c)] += v * row_w[r] * col_w[c];
        }
    }
    let s = Spectrum::of(&a);
    let cut = 1e-7 * s.max();
    let mut nz: Vec<f64> = s.values.iter().copied().filter(|&v| v > cut).collect();
    nz.reverse();
    nz.truncate(count);
    nz
}

/// Self-convergence of the `count` smallest nonzero weighted singular
/// values of `D₀`'s cell equations under doubling of the grid.
pub fn sigma_convergence(g: &GradientTree, per_unit: usize, count: usize) -> Result<SigmaConvergence> {
    let chi = CutoffChi::for_tree(g);
    let grids = [1, 2, 4].map(|k| assemble_d0(g, &chi, k * per_unit).map(|op| weighted_cell_sigmas(&op, count)));
    let [a, b, c] = grids;
    let grids = [a?, b?, c?];
    let change = |x: &[f64], y: &[f64]| {
        x.iter().zip(y).map(|(a, b)| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)).fold(0.0, f64::max)
    };
    let changes = [change(&grids[0], &grids[1]), change(&grids[1], &grids[2])];
    Ok(SigmaConvergence { order: observed_order(changes[0], changes[1]), grids, changes })
}

/// `∫₀^L χ_e`, which must be one.
pub fn chi_mass(l: f64) -> f64 {
    integrate(|t| chi_bump(l, t), 0.0, l, 1e-13)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::geometry::ModelManifold;
    use crate::moduli::{solve, LegSelector, TreeProblem};
    use crate::tree::RibbonTree;
    use std::collections::BTreeMap;

    fn chain() -> GradientTree {
        static TREE: std::sync::OnceLock<GradientTree> = std::sync::OnceLock::new();
        TREE.get_or_init(build).clone()
    }

    fn build() -> GradientTree {
        let t1 = |src: &str| parse(src, 1, &[true]).unwrap();
        let tree = RibbonTree::from_encoding("((1,2),3)", false).unwrap();
        let mut fs = BTreeMap::new();
        fs.insert((0, 1), t1("0.25*cos(2*pi*(x0-0.45))"));
        fs.insert((0, 2), t1("-0.175*cos(2*pi*(x0-0.35))"));
        fs.insert((0, 3), t1("0.225*cos(2*pi*(x0-0.3))"));
        fs.insert((1, 2), t1("0.325*cos(2*pi*(x0-0.6))"));
        fs.insert((1, 3), t1("0.275*cos(2*pi*(x0-0.45))"));
        fs.insert((2, 3), t1("0.2*cos(2*pi*(x0-0.2))"));
        let sel: Vec<LegSelector> = [1, 1, 0, 0].iter().map(|&i| LegSelector::Index(i)).collect();
        let p = TreeProblem::with_selectors(tree, ModelManifold::torus(1), fs, &sel, 0.1, 16).unwrap();
        solve(&p, &[0.4], 2).unwrap().into_iter().next().expect("one gradient tree")
    }

    #[test]
    fn bump_integrates_to_its_primitive() {
        let l = 1.7;
        for &t in &[0.2, 0.7, 0.85, 1.0, 1.5] {
            let num = integrate(|s| chi_bump(l, s), 0.0, t, 1e-13);
            assert!((num - psi_bump(l, t)).abs() < 1e-10, "t = {t}");
        }
        assert!((chi_mass(l) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tree_kernel_matches_tangent_count() {
        let g = chain();
        let op = assemble_d0(&g, &CutoffChi::for_tree(&g), 100).unwrap();
        let r = op.report(Some(expected_index(&g)));
        assert_eq!(r.index, expected_index(&g));
        assert_eq!(r.kernel_dim, tangent_report(&g).unwrap().dim_moduli);
        assert_eq!(r.cokernel_dim, 0);
        let dense = op.dense();
        for row in op.constraint_start..op.rows {
            assert!((dense.row(row).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_column_is_the_averaged_forcing() {
        let g = chain();
        let chi = CutoffChi::for_tree(&g);
        let op = assemble_d0(&g, &chi, 60).unwrap();
        let b = &op.blocks[0];
        let lc = b.lambda_col.unwrap();
        let col = op.dense().column(lc).into_owned();
        for k in 0..b.cells() {
            let (t0, t1) = (b.nodes[k], b.nodes[k + 1]);
            let v0 = chi.chi(0, t0) * b.velocity[k][0];
            let v1 = chi.chi(0, t1) * b.velocity[k + 1][0];
            assert!((col[b.row_offset + k] + 0.5 * (v0 + v1)).abs() < 1e-12);
        }
    }

    #[test]
    fn coarse_grid_and_zero_length_are_rejected() {
        let g = chain();
        assert!(matches!(assemble_d0(&g, &CutoffChi::for_tree(&g), 49), Err(Error::Linearized(_))));
        let mut z = g.clone();
        z.lengths[0] = 0.0;
        assert!(matches!(assemble_d0(&z, &CutoffChi::for_tree(&z), 100), Err(Error::Linearized(_))));
    }

    #[test]
    fn strip_at_zero_epsilon_is_a_plain_derivative() {
        let g = chain();
        let op = assemble_strip_reduced_with_length(&g, 0, 0.0, 2.5, 80).unwrap();
        let r = op.report(None);
        assert_eq!(r.kernel_dim, g.problem.dim() + 1);
        let ones = vec![1.0; op.cols];
        assert!(op.apply(&ones).iter().all(|v| v.abs() < 1e-12));
    }
}
