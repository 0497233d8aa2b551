use crate::{Cli, Command, FunctionArgs, Kind};
use anyhow::{anyhow, bail, Context, Result};
use morsedisk::config::RunConfig;
use morsedisk::disk::{beta, build_solution, energy_identity_check, residual, strip_csv, vertex_residual};
use morsedisk::expr::{parse, ScalarFunction};
use morsedisk::geometry::{find_critical_points, ModelManifold};
use morsedisk::homology::morse_homology;
use morsedisk::linearized::{assemble_d0, expected_index, index_additivity, CutoffChi, IndexAdditivity, OperatorReport};
use morsedisk::moduli::{solve_with_tolerance, tangent_report, GradientTree, TransversalityReport};
use morsedisk::report::{Report, SolutionSummary, SolveReport};
use morsedisk::tree::enumerate_ribbon_trees;
use morsedisk::verify::verify;
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Runs the parsed command. `Ok(false)` means the command ran but a check failed.
pub fn run(cli: &Cli) -> Result<bool> {
    let g = &cli.global;
    let out = Output { json: g.json, dir: g.out.clone() };
    match &cli.command {
        Command::Trees { d, floer } => trees(&out, *d, *floer),
        Command::Critical(f) => critical(&out, f, g.config.as_deref()),
        Command::Homology(f) => homology(&out, f, g.config.as_deref()),
        cmd => {
            let cfg = load(cli)?;
            match cmd {
                Command::Solve => solve(&out, &cfg),
                Command::Transversality => transversality(&out, &cfg),
                Command::Linearize { solution } => linearize(&out, &cfg, *solution),
                Command::BuildDisk { solution } => {
                    let out = Output { dir: out.dir.clone().or_else(|| Some(PathBuf::from(&cfg.output))), ..out };
                    build_disk(&out, &cfg, *solution)
                }
                Command::Verify => {
                    let report = verify(&cfg)?;
                    out.emit(&report.to_json(), &report.summary())?;
                    Ok(report.passed)
                }
                _ => unreachable!(),
            }
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let path = cli.global.config.as_deref().ok_or_else(|| anyhow!("--config PATH is required for `{}`", cli.command.name()))?;
    let mut cfg = RunConfig::load(path)?.scaled(cli.global.grid_scale)?;
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

struct Output {
    json: bool,
    dir: Option<PathBuf>,
}

impl Output {
    /// Machine report to stdout under `--json`, human summary otherwise (and
    /// to stderr under `--json`); `report.json` into the output directory.
    fn emit(&self, json: &str, summary: &str) -> Result<()> {
        if self.json {
            print!("{json}");
            eprint!("{summary}");
        } else {
            print!("{summary}");
        }
        self.write("report.json", json)
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }
}

fn function_source(f: &FunctionArgs, config: Option<&Path>) -> Result<(ScalarFunction, ModelManifold, String)> {
    if let Some(src) = &f.function {
        let m = match f.kind {
            Kind::Euclidean => ModelManifold::euclidean(f.dim),
            Kind::FlatTorus => ModelManifold::torus(f.dim),
        };
        return Ok((parse(src, m.dim, &m.periodic())?, m, src.clone()));
    }
    let path = config.ok_or_else(|| anyhow!("give --function EXPR or --config PATH"))?;
    let cfg = RunConfig::load(path)?;
    let src = cfg.functions.values().next().ok_or_else(|| anyhow!("configuration has no functions"))?;
    let f = cfg.function_table()?.into_values().next().expect("table matches functions");
    Ok((f, cfg.manifold(), src.clone()))
}

#[derive(Serialize)]
struct TreeEntry {
    encoding: String,
    internal_edges: usize,
    trivalent: bool,
}

#[derive(Serialize)]
struct TreeListing {
    d: usize,
    floer_mode: bool,
    trivalent: usize,
    total: usize,
    trees: Vec<TreeEntry>,
}

fn trees(out: &Output, d: usize, floer: bool) -> Result<bool> {
    let all = enumerate_ribbon_trees(d, false, floer)?;
    let trees: Vec<TreeEntry> = all
        .iter()
        .map(|t| TreeEntry {
            encoding: t.encoding(),
            internal_edges: t.internal_edges().len(),
            trivalent: (0..t.vertex_count()).all(|v| t.valence(v) == 3),
        })
        .collect();
    let trivalent = trees.iter().filter(|t| t.trivalent).count();
    let listing = TreeListing { d, floer_mode: floer, trivalent, total: trees.len(), trees };
    let mut s = String::new();
    for t in &listing.trees {
        writeln!(s, "{}  internal edges {}", t.encoding, t.internal_edges)?;
    }
    writeln!(s, "{} trivalent, {} total", listing.trivalent, listing.total)?;
    out.emit(&Report::new("trees", &listing).to_json(), &s)?;
    Ok(true)
}

#[derive(Serialize)]
struct CriticalEntry {
    location: Vec<f64>,
    morse_index: usize,
    value: f64,
    eigenvalues: Vec<f64>,
}

#[derive(Serialize)]
struct CriticalTable {
    function: String,
    dim: usize,
    torus: bool,
    points: Vec<CriticalEntry>,
}

fn critical(out: &Output, f: &FunctionArgs, config: Option<&Path>) -> Result<bool> {
    let (func, m, src) = function_source(f, config)?;
    let pts = find_critical_points(&func, &m, f.resolution)?;
    let table = CriticalTable {
        function: src,
        dim: m.dim,
        torus: m.is_torus(),
        points: pts
            .iter()
            .map(|c| CriticalEntry {
                location: c.location.clone(),
                morse_index: c.morse_index,
                value: c.value,
                eigenvalues: c.eigenvalues.clone(),
            })
            .collect(),
    };
    let mut s = format!("{}\n", table.function);
    let mut csv = String::from("index,value");
    for i in 0..m.dim {
        write!(csv, ",x{i}")?;
    }
    csv.push('\n');
    for p in &table.points {
        writeln!(s, "  index {}  value {:+.6}  at {:?}", p.morse_index, p.value, p.location)?;
        write!(csv, "{},{:?}", p.morse_index, p.value)?;
        for x in &p.location {
            write!(csv, ",{x:?}")?;
        }
        csv.push('\n');
    }
    writeln!(s, "{} critical points", table.points.len())?;
    out.emit(&Report::new("critical", &table).to_json(), &s)?;
    out.write("critical.csv", &csv)?;
    Ok(true)
}

fn homology(out: &Output, f: &FunctionArgs, config: Option<&Path>) -> Result<bool> {
    let (func, m, src) = function_source(f, config)?;
    let h = morse_homology(&func, &m, f.resolution)?;
    let mut s = format!("{src}\n");
    writeln!(s, "chain ranks    {:?}", h.chain_ranks)?;
    writeln!(s, "boundary ranks {:?}", h.boundary_ranks)?;
    writeln!(s, "homology ranks {:?}", h.homology_ranks)?;
    out.emit(&Report::new("homology", &h).to_json(), &s)?;
    Ok(true)
}

fn solutions(cfg: &RunConfig) -> Result<Vec<GradientTree>> {
    let problem = cfg.problem()?;
    Ok(solve_with_tolerance(&problem, &cfg.tree.metric_guess, cfg.grids.seed_resolution, cfg.tolerances.newton)?)
}

fn pick(cfg: &RunConfig, index: usize) -> Result<GradientTree> {
    let mut sols = solutions(cfg)?;
    if index >= sols.len() {
        bail!("solution {index} requested but {} found", sols.len());
    }
    Ok(sols.swap_remove(index))
}

fn solve(out: &Output, cfg: &RunConfig) -> Result<bool> {
    let problem = cfg.problem()?;
    let sols = solve_with_tolerance(&problem, &cfg.tree.metric_guess, cfg.grids.seed_resolution, cfg.tolerances.newton)?;
    let report = SolveReport {
        name: cfg.name.clone(),
        tree: problem.tree.encoding(),
        floer_mode: problem.tree.floer_mode(),
        external_points: problem.external_points.iter().map(|c| c.location.clone()).collect(),
        external_indices: problem.external_points.iter().map(|c| c.morse_index).collect(),
        expected_dimension: problem.expected_dimension(),
        solutions: sols.iter().map(SolutionSummary::of).collect::<morsedisk::Result<_>>()?,
    };
    let mut s = format!("{} {}  expected dimension {}\n", report.name, report.tree, report.expected_dimension);
    for (i, (sol, g)) in report.solutions.iter().zip(&sols).enumerate() {
        writeln!(
            s,
            "  [{i}] vertices {:?} lengths {:?} residual {:.1e} moduli dim {}{}",
            sol.vertex_positions,
            sol.lengths,
            sol.residual_norm,
            sol.transversality.dim_moduli,
            if sol.transversality.transversal { "" } else { " (not transversal)" }
        )?;
        out.write(&format!("solution_{i}.csv"), &g.trajectories_csv())?;
    }
    writeln!(s, "{} solutions", report.solutions.len())?;
    out.emit(&Report::new("solve", &report).to_json(), &s)?;
    Ok(true)
}

#[derive(Serialize)]
struct TransversalityEntry {
    tangent: TransversalityReport,
    d0: OperatorReport,
    d0_fine: OperatorReport,
}

fn transversality(out: &Output, cfg: &RunConfig) -> Result<bool> {
    let m = cfg.grids.linearize_per_unit;
    let mut entries = Vec::new();
    let mut s = String::new();
    for (i, g) in solutions(cfg)?.iter().enumerate() {
        let chi = CutoffChi::for_tree(g);
        let want = Some(expected_index(g));
        let e = TransversalityEntry {
            tangent: tangent_report(g)?,
            d0: assemble_d0(g, &chi, m)?.report(want),
            d0_fine: assemble_d0(g, &chi, 2 * m)?.report(want),
        };
        writeln!(
            s,
            "  [{i}] transversal {} moduli dim {} | D0 kernel {} cokernel {} index {} (grid {m}), kernel {} cokernel {} (grid {})",
            e.tangent.transversal,
            e.tangent.dim_moduli,
            e.d0.kernel_dim,
            e.d0.cokernel_dim,
            e.d0.index,
            e.d0_fine.kernel_dim,
            e.d0_fine.cokernel_dim,
            2 * m
        )?;
        entries.push(e);
    }
    writeln!(s, "{} solutions", entries.len())?;
    out.emit(&Report::new("transversality", &entries).to_json(), &s)?;
    Ok(true)
}

#[derive(Serialize)]
struct LinearizeReport {
    solution: usize,
    per_unit: usize,
    operator: OperatorReport,
    additivity: IndexAdditivity,
}

fn linearize(out: &Output, cfg: &RunConfig, solution: usize) -> Result<bool> {
    let g = pick(cfg, solution)?;
    let m = cfg.grids.linearize_per_unit;
    let op = assemble_d0(&g, &CutoffChi::for_tree(&g), m)?;
    let report =
        LinearizeReport { solution, per_unit: m, operator: op.report(Some(expected_index(&g))), additivity: index_additivity(&g, m)? };
    let o = &report.operator;
    let a = &report.additivity;
    let s = format!(
        "D0 {}x{}  kernel {} cokernel {} index {} (expected {:?})\nsingular values in [{:.3e}, {:.3e}]\nindex {} + vertex terms {} = {}, moduli dim {}\n",
        o.rows,
        o.cols,
        o.kernel_dim,
        o.cokernel_dim,
        o.index,
        o.expected_index,
        o.smallest_singular_value,
        o.largest_singular_value,
        a.index_d0,
        a.vertex_correction,
        a.total,
        a.tangent_dim_moduli
    );
    out.emit(&Report::new("linearize", &report).to_json(), &s)?;
    out.write("d0_triplets.txt", &op.triplet_text())?;
    let mut sv = String::from("k,sigma\n");
    for (k, v) in op.spectrum().values.iter().enumerate() {
        writeln!(sv, "{k},{v:?}")?;
    }
    out.write("singular_values.csv", &sv)?;
    Ok(true)
}

#[derive(Serialize)]
struct DiskSummary {
    solution: usize,
    manifest: morsedisk::disk::DiskManifest,
    strip_residual: Vec<f64>,
    vertex_residual: Vec<f64>,
    beta_max: f64,
    continuity_error: f64,
    boundary_p: f64,
    length_bookkeeping_error: f64,
    energy_identity: f64,
}

fn build_disk(out: &Output, cfg: &RunConfig, solution: usize) -> Result<bool> {
    let g = pick(cfg, solution)?;
    let u = build_solution(&g, cfg.epsilon, &cfg.vertex_moduli_for(&g.problem.tree), &cfg.disk_options())?;
    let summary = DiskSummary {
        solution,
        manifest: u.manifest(),
        strip_residual: (0..u.strips.len()).map(|i| residual(&u, i).max_norm).collect(),
        vertex_residual: (0..u.vertices.len()).map(|v| vertex_residual(&u, v)).collect(),
        beta_max: (0..u.strips.len()).flat_map(|i| beta(&u, i).beta).fold(0.0, f64::max),
        continuity_error: u.continuity_error(),
        boundary_p: u.boundary_p(),
        length_bookkeeping_error: u.length_bookkeeping_error(),
        energy_identity: energy_identity_check(&u),
    };
    for (entry, st) in summary.manifest.strips.iter().zip(&u.strips) {
        out.write(&entry.file, &strip_csv(st))?;
    }
    let s = format!(
        "{} strips, {} vertex regions, epsilon {}\nmax strip residual {:.3e}, vertex residual {:.1e}, beta {:.1e}, energy {:.3e}\n",
        u.strips.len(),
        u.vertices.len(),
        u.epsilon,
        summary.strip_residual.iter().copied().fold(0.0, f64::max),
        summary.vertex_residual.iter().copied().fold(0.0, f64::max),
        summary.beta_max,
        summary.energy_identity
    );
    let json = Report::new("build-disk", &summary).to_json();
    out.emit(&json, &s)?;
    Ok(true)
}
