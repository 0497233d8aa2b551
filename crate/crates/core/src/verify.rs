//! The self-check suite behind `morsedisk verify`: every stage of the
//! pipeline run on one configuration, each reduced to a named pass/fail
//! record with the measured value and its threshold.

use crate::config::RunConfig;
use crate::disk::{beta, build_solution, energy_identity_check, residual, vertex_residual, DiskMap, DiskOptions};
use crate::error::Result;
use crate::linearized::{
    adjoint_identity_check, assemble_d0, assemble_edge, assemble_strip_reduced, expected_index, index_additivity,
    random_sections, sigma_convergence, CutoffChi, EdgeRef,
};
use crate::moduli::{brute_force_count, solve_with_tolerance, tangent_report, GradientTree, DEFECT_TOL, MATCH_TOL};
use crate::numerics::{observed_order, Spectrum};
use crate::report::SCHEMA_VERSION;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Solutions examined by the linearization and disk checks.
pub const MAX_EXAMINED: usize = 4;
/// Cells on an edge for the explicit kernel substitutions (and twice that).
pub const KERNEL_CELLS: usize = 8192;
/// Smallest observed order accepted as second order.
pub const MIN_ORDER: f64 = 1.8;
/// Relative change of singular values under grid doubling.
pub const SIGMA_TOL: f64 = 1e-3;
/// Random perturbations in the energy identity check.
pub const PERTURBATIONS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub checks: Vec<CheckRecord>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    /// One `PASS`/`FAIL` line per check.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{tag} {:<28} value {:.3e} threshold {:.3e}  {}\n", c.name, c.value, c.threshold, c.detail));
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        out.push_str(&format!("{} checks, {failed} failed\n", self.checks.len()));
        out
    }
}

struct Suite {
    checks: Vec<CheckRecord>,
}

impl Suite {
    /// `value ≤ threshold`.
    fn at_most(&mut self, name: &str, value: f64, threshold: f64, detail: String) {
        self.push(name, value <= threshold, value, threshold, detail);
    }

    /// `value ≥ threshold`.
    fn at_least(&mut self, name: &str, value: f64, threshold: f64, detail: String) {
        self.push(name, value >= threshold, value, threshold, detail);
    }

    fn push(&mut self, name: &str, passed: bool, value: f64, threshold: f64, detail: String) {
        self.checks.push(CheckRecord { name: name.into(), passed: passed && value.is_finite(), value, threshold, detail });
    }
}

fn max(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, f64::max)
}

fn min(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(f64::INFINITY, f64::min)
}

fn disk_residual(u: &DiskMap) -> f64 {
    max((0..u.strips.len()).map(|i| residual(u, i).max_norm))
}

fn scaled_options(o: &DiskOptions, k: usize) -> DiskOptions {
    DiskOptions {
        per_unit: o.per_unit * k,
        t_nodes: (o.t_nodes - 1) * k + 1,
        theta_cells: o.theta_cells * k,
        radial_nodes: (o.radial_nodes - 1) * k + 1,
        eps_max: o.eps_max,
    }
}

/// Runs every check on `cfg`.
pub fn verify(cfg: &RunConfig) -> Result<VerifyReport> {
    let mut s = Suite { checks: Vec::new() };
    let problem = cfg.problem()?;
    let min_eig = min(problem.external_points.iter().flat_map(|c| c.eigenvalues.iter().map(|e| e.abs())));
    s.at_least("endpoints_nondegenerate", min_eig, 1e-8, format!("{} leg endpoints", problem.tree.d()));

    let sols = solve_with_tolerance(&problem, &cfg.tree.metric_guess, cfg.grids.seed_resolution, cfg.tolerances.newton)?;
    let expected = problem.expected_dimension();
    if expected < 0 {
        // Solutions may exist only where transversality fails.
        let transversal = sols.iter().map(|g| Ok(tangent_report(g)?.transversal as usize)).sum::<Result<usize>>()?;
        s.at_most("negative_dimension", transversal as f64, 0.0, format!("{} solutions, expected dimension {expected}", sols.len()));
    } else {
        s.at_least("solutions_found", sols.len() as f64, 1.0, format!("expected dimension {expected}"));
    }
    if sols.is_empty() {
        return Ok(finish(cfg, s));
    }
    let errs: Vec<(f64, f64)> = sols.iter().map(|g| g.invariant_errors()).collect::<Result<_>>()?;
    s.at_most("vertex_matching", max(errs.iter().map(|e| e.0)), MATCH_TOL, String::new());
    s.at_most("unstable_membership", max(errs.iter().map(|e| e.1)), DEFECT_TOL, String::new());

    let examined: Vec<&GradientTree> = sols.iter().take(MAX_EXAMINED).collect();
    let reports = examined.iter().map(|g| tangent_report(g)).collect::<Result<Vec<_>>>()?;
    let tree = &problem.tree;
    let vertex_terms: isize =
        if tree.floer_mode() { 0 } else { (0..tree.vertex_count()).map(|v| tree.valence(v) as isize - 3).sum() };
    let dim_ok = reports.iter().all(|r| !r.transversal || r.dim_moduli as isize + vertex_terms == expected);
    s.push(
        "dimension_formula",
        dim_ok,
        reports.iter().map(|r| r.dim_moduli as isize + vertex_terms).max().unwrap_or(0) as f64,
        expected as f64,
        format!("vertex terms {vertex_terms}, {} of {} solutions examined", examined.len(), sols.len()),
    );

    let m = cfg.grids.linearize_per_unit;
    let mut kernel_ok = true;
    let mut worst_gap = 0usize;
    for (g, r) in examined.iter().zip(&reports) {
        for per_unit in [m, 2 * m] {
            let op = assemble_d0(g, &CutoffChi::for_tree(g), per_unit)?;
            let spec: Spectrum = op.spectrum();
            let ker = spec.kernel_dim(cfg.tolerances.svd);
            let coker = spec.cokernel_dim(cfg.tolerances.svd);
            let ok = op.index() == expected_index(g) && (!r.transversal || (ker == r.dim_moduli && coker == 0));
            kernel_ok &= ok;
            worst_gap = worst_gap.max(ker.abs_diff(r.dim_moduli));
        }
    }
    s.push("kernel_matches_moduli", kernel_ok, worst_gap as f64, 0.0, format!("grids {m} and {} per unit", 2 * m));

    let g = examined[0];
    let additivity = index_additivity(g, m)?;
    s.push(
        "index_additivity",
        additivity.consistent,
        additivity.total as f64,
        additivity.expected_dimension as f64,
        format!("index {} + vertex terms {}", additivity.index_d0, additivity.vertex_correction),
    );
    let sigma = sigma_convergence(g, m, 4)?;
    s.at_most(
        "singular_value_change",
        sigma.changes[1],
        SIGMA_TOL,
        format!("grids {} and {} per unit", 2 * m, 4 * m),
    );
    s.at_least(
        "singular_value_order",
        sigma.order,
        MIN_ORDER,
        format!("relative changes {:.2e} {:.2e} over grids {m}, {}, {}", sigma.changes[0], sigma.changes[1], 2 * m, 4 * m),
    );

    let ne = problem.tree.internal_edges().len();
    let positive: Vec<usize> = (0..ne).filter(|&e| g.lengths[e] > 0.0).collect();
    if !positive.is_empty() {
        let chi = CutoffChi::for_tree(g);
        let (mut fine, mut order) = (0.0f64, f64::INFINITY);
        for &e in &positive {
            let r: Vec<f64> = [KERNEL_CELLS, 2 * KERNEL_CELLS]
                .iter()
                .map(|&cells| {
                    let pu = (cells as f64 / g.lengths[e]).ceil() as usize;
                    let op = assemble_edge(g, EdgeRef::Internal(e), &chi, pu)?;
                    Ok(op.block_residual(0, &op.explicit_kernel_vector(0)?).max)
                })
                .collect::<Result<_>>()?;
            fine = fine.max(r[1]);
            order = order.min(observed_order(r[0], r[1]));
        }
        s.at_most("explicit_kernel_element", fine, cfg.tolerances.residual, format!("order {order:.2}"));
        let (mut fine, mut order) = (0.0f64, f64::INFINITY);
        for &e in &positive {
            let l = crate::disk::strip_length_from_edge(g.lengths[e], cfg.epsilon)?;
            let mut rows = Vec::new();
            for cells in [KERNEL_CELLS, 2 * KERNEL_CELLS] {
                let pu = (cells as f64 / l).ceil() as usize;
                let op = assemble_strip_reduced(g, e, cfg.epsilon, pu)?;
                let xi0 = vec![1.0; op.dim];
                let a = op.block_residual(0, &op.explicit_kernel_vector(0)?).max;
                let b = op.block_residual(0, &op.flow_kernel_vector(0, &xi0)).max;
                rows.push((a, b));
            }
            fine = fine.max(rows[1].0).max(rows[1].1);
            order = order.min(observed_order(rows[0].0, rows[1].0)).min(observed_order(rows[0].1, rows[1].1));
        }
        s.at_most("strip_kernel_substitutes", fine, cfg.tolerances.residual, format!("order {order:.2}"));
    }

    let edges: Vec<EdgeRef> =
        positive.iter().map(|&e| EdgeRef::Internal(e)).chain((0..problem.tree.d()).map(EdgeRef::Leg)).collect();
    let (mut worst_order, mut worst_defect) = (f64::INFINITY, 0.0f64);
    for (i, &edge) in edges.iter().enumerate() {
        let (a, b, lam) = random_sections(g, edge, cfg.seed.wrapping_add(i as u64));
        let d: Vec<f64> = [4 * m, 8 * m]
            .iter()
            .map(|&pu| Ok(adjoint_identity_check(g, edge, &|t| a.eval(t), lam, &|t| b.eval(t), pu)?.defect))
            .collect::<Result<_>>()?;
        worst_order = worst_order.min(observed_order(d[0], d[1]));
        worst_defect = worst_defect.max(d[0]);
    }
    s.at_least("adjoint_identity_order", worst_order, MIN_ORDER, format!("defect {worst_defect:.2e} at {} per unit", 4 * m));

    if problem.dim() * problem.tree.vertex_count() == 1 && ne == 0 {
        let brute = brute_force_count(&problem, &[], 200)?;
        s.push("brute_force_count", brute == sols.len(), brute as f64, sols.len() as f64, "resolution 200".into());
    }

    let opts = cfg.disk_options();
    let moduli = cfg.vertex_moduli_for(&problem.tree);
    let mut res = Vec::new();
    let mut last = None;
    for k in [1, 2, 4] {
        let u = build_solution(g, cfg.epsilon, &moduli, &scaled_options(&opts, k))?;
        res.push(disk_residual(&u));
        last = Some(u);
    }
    let u = last.expect("three grids");
    s.at_most("disk_residual", res[2], cfg.tolerances.residual, format!("order {:.2}", observed_order(res[1], res[2])));
    s.at_least("disk_residual_order", observed_order(res[1], res[2]), MIN_ORDER, format!("{:.2e} {:.2e} {:.2e}", res[0], res[1], res[2]));
    s.at_most("vertex_residual", max((0..u.vertices.len()).map(|v| vertex_residual(&u, v))), 0.0, String::new());
    s.at_most("beta_vanishes", max((0..u.strips.len()).flat_map(|i| beta(&u, i).beta)), 1e-12, String::new());
    s.at_most("length_bookkeeping", u.length_bookkeeping_error(), 1e-9, String::new());
    s.at_most("continuity", u.continuity_error(), 1e-9, String::new());
    s.at_most("boundary_condition", u.boundary_p(), 0.0, String::new());
    s.at_most("energy_identity", energy_identity_check(&u), 1e-10, String::new());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst = f64::INFINITY;
    let mut coarse_fine = (0.0, 0.0);
    let base = build_solution(g, cfg.epsilon, &moduli, &opts)?;
    let strips = base.strips.len();
    let n = problem.dim();
    for _ in 0..PERTURBATIONS {
        let mut draw = || -> Vec<Vec<Vec<f64>>> {
            (0..strips).map(|_| (0..2).map(|_| (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect()).collect()
        };
        let (pc, qc) = (draw(), draw());
        let d: Vec<f64> = [1, 2]
            .iter()
            .map(|&k| Ok(energy_identity_check(&build_solution(g, cfg.epsilon, &moduli, &scaled_options(&opts, k))?.perturbed(&pc, &qc)?)))
            .collect::<Result<_>>()?;
        let o = observed_order(d[0], d[1]);
        if o < worst {
            worst = o;
            coarse_fine = (d[0], d[1]);
        }
    }
    s.at_least(
        "energy_identity_order",
        worst,
        MIN_ORDER,
        format!("{PERTURBATIONS} perturbations, worst {:.2e} -> {:.2e}", coarse_fine.0, coarse_fine.1),
    );
    Ok(finish(cfg, s))
}

fn finish(cfg: &RunConfig, s: Suite) -> VerifyReport {
    let passed = s.checks.iter().all(|c| c.passed);
    VerifyReport { schema_version: SCHEMA_VERSION, name: cfg.name.clone(), seed: cfg.seed, checks: s.checks, passed }
}
