//! TOML run configuration shared by the command-line tool and the tests.
//!
//! ```toml
//! name = "t1_floer"
//! epsilon = 0.1
//! seed = 7
//!
//! [manifold]
//! dim = 1
//! kind = "flat_torus"
//!
//! [tree]
//! encoding = "(1)"
//! floer_mode = true
//!
//! [functions]
//! "0,1" = "cos(2*pi*x0)"
//!
//! [[legs]]
//! near = [0.0]
//!
//! [[legs]]
//! index = 0
//! ```

use crate::disk::DiskOptions;
use crate::error::{Error, Result};
use crate::expr::{parse, ScalarFunction};
use crate::geometry::{ManifoldKind, ModelManifold};
use crate::linearized::MIN_PER_UNIT;
use crate::moduli::{LegSelector, TreeProblem};
use crate::tree::RibbonTree;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSpec {
    pub dim: usize,
    pub kind: ManifoldKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    /// Planar encoding, see [`RibbonTree::from_encoding`].
    pub encoding: String,
    #[serde(default)]
    pub floer_mode: bool,
    /// Starting (or, when zero, pinned) internal lengths for `solve`.
    #[serde(default)]
    pub metric_guess: Vec<f64>,
}

/// Exactly one of `index` (Morse index with respect to the inward leg
/// function) and `near` (approximate location).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegSpec {
    pub index: Option<usize>,
    pub near: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub newton: f64,
    pub svd: f64,
    pub residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { newton: 1e-10, svd: 1e-7, residual: 1e-5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grids {
    /// Seed grid per axis for `solve`.
    pub seed_resolution: usize,
    /// Seed grid per axis for critical point search.
    pub critical_resolution: usize,
    /// Cells per unit length of the linearized operators.
    pub linearize_per_unit: usize,
    /// Disk strip cells per unit length.
    pub disk_per_unit: usize,
    pub t_nodes: usize,
    pub theta_cells: usize,
    pub radial_nodes: usize,
}

impl Default for Grids {
    fn default() -> Self {
        let d = DiskOptions::default();
        Grids {
            seed_resolution: 16,
            critical_resolution: 16,
            linearize_per_unit: 100,
            disk_per_unit: d.per_unit,
            t_nodes: d.t_nodes,
            theta_cells: d.theta_cells,
            radial_nodes: d.radial_nodes,
        }
    }
}

fn default_name() -> String {
    "run".into()
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_output() -> String {
    "out".into()
}

fn default_eps_max() -> f64 {
    DiskOptions::default().eps_max
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub manifold: ManifoldSpec,
    pub tree: TreeSpec,
    /// `"i,j"` with `i < j` to the expression of `F(i, j)`.
    pub functions: BTreeMap<String, String>,
    pub legs: Vec<LegSpec>,
    pub epsilon: f64,
    #[serde(default = "default_eps_max")]
    pub eps_max: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub grids: Grids,
    /// Vertex moduli per vertex, `max(|v| - 3, 0)` entries each; zeros when
    /// absent.
    #[serde(default)]
    pub vertex_moduli: Vec<Vec<f64>>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: String,
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let path = e.span().map_or_else(|| "<document>".to_string(), |s| key_at(text, s.start));
            invalid(path, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn manifold(&self) -> ModelManifold {
        match self.manifold.kind {
            ManifoldKind::Euclidean => ModelManifold::euclidean(self.manifold.dim),
            ManifoldKind::FlatTorus => ModelManifold::torus(self.manifold.dim),
        }
    }

    pub fn ribbon_tree(&self) -> Result<RibbonTree> {
        RibbonTree::from_encoding(&self.tree.encoding, self.tree.floer_mode)
            .map_err(|e| invalid("tree.encoding", e.to_string()))
    }

    /// Parsed function table keyed by `(i, j)`.
    pub fn function_table(&self) -> Result<BTreeMap<(usize, usize), ScalarFunction>> {
        let m = self.manifold();
        let mut out = BTreeMap::new();
        for (key, src) in &self.functions {
            let path = format!("functions.\"{key}\"");
            let (i, j) = parse_pair(key).ok_or_else(|| invalid(&path, "key must be \"i,j\" with integers i < j"))?;
            let f = parse(src, m.dim, &m.periodic()).map_err(|e| invalid(&path, e.to_string()))?;
            out.insert((i, j), f);
        }
        Ok(out)
    }

    pub fn selectors(&self) -> Vec<LegSelector> {
        self.legs
            .iter()
            .map(|l| match (&l.index, &l.near) {
                (Some(i), _) => LegSelector::Index(*i),
                (None, Some(x)) => LegSelector::Near(x.clone()),
                (None, None) => unreachable!("validated"),
            })
            .collect()
    }

    pub fn problem(&self) -> Result<TreeProblem> {
        TreeProblem::with_selectors(
            self.ribbon_tree()?,
            self.manifold(),
            self.function_table()?,
            &self.selectors(),
            self.epsilon,
            self.grids.critical_resolution,
        )
    }

    pub fn disk_options(&self) -> DiskOptions {
        DiskOptions {
            per_unit: self.grids.disk_per_unit,
            t_nodes: self.grids.t_nodes,
            theta_cells: self.grids.theta_cells,
            radial_nodes: self.grids.radial_nodes,
            eps_max: self.eps_max,
        }
    }

    /// Vertex moduli padded with zeros to the valences of `tree`.
    pub fn vertex_moduli_for(&self, tree: &RibbonTree) -> Vec<Vec<f64>> {
        (0..tree.vertex_count())
            .map(|v| {
                let k = tree.valence(v).saturating_sub(3);
                self.vertex_moduli.get(v).cloned().unwrap_or_else(|| vec![0.0; k])
            })
            .collect()
    }

    /// The same run with every resolution multiplied by `k`.
    pub fn scaled(&self, k: usize) -> Result<RunConfig> {
        if k == 0 {
            return Err(invalid("--grid-scale", "must be a positive integer"));
        }
        let mut c = self.clone();
        let g = &mut c.grids;
        g.seed_resolution *= k;
        g.critical_resolution *= k;
        g.linearize_per_unit *= k;
        g.disk_per_unit *= k;
        g.t_nodes = (g.t_nodes - 1) * k + 1;
        g.theta_cells *= k;
        g.radial_nodes = (g.radial_nodes - 1) * k + 1;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.manifold.dim == 0 {
            return Err(invalid("manifold.dim", "must be positive"));
        }
        let tree = self.ribbon_tree()?;
        let d = tree.d();
        let table = self.function_table()?;
        for (&(i, j), _) in &table {
            if !(i < j && j < d) {
                return Err(invalid(format!("functions.\"{i},{j}\""), format!("needs i < j < {d}")));
            }
        }
        for i in 0..d {
            for j in i + 1..d {
                let needed = tree.half_edges().iter().enumerate().any(|(h, _)| {
                    tree.boundary_pair(h).is_ok_and(|(a, b)| (a.min(b), a.max(b)) == (i, j))
                });
                if needed && !table.contains_key(&(i, j)) {
                    return Err(invalid("functions", format!("missing boundary pair \"{i},{j}\"")));
                }
            }
        }
        if self.legs.len() != d {
            return Err(invalid("legs", format!("expected {d} leg selectors, found {}", self.legs.len())));
        }
        for (k, l) in self.legs.iter().enumerate() {
            match (&l.index, &l.near) {
                (Some(_), Some(_)) | (None, None) => {
                    return Err(invalid(format!("legs[{k}]"), "give exactly one of `index` and `near`"));
                }
                (None, Some(x)) if x.len() != self.manifold.dim => {
                    return Err(invalid(format!("legs[{k}].near"), format!("needs {} coordinates", self.manifold.dim)));
                }
                _ => {}
            }
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(invalid("epsilon", "must be positive"));
        }
        if !(self.eps_max > 0.0) {
            return Err(invalid("eps_max", "must be positive"));
        }
        if self.epsilon > self.eps_max {
            return Err(invalid("epsilon", format!("exceeds eps_max = {}", self.eps_max)));
        }
        for (name, v) in [
            ("tolerances.newton", self.tolerances.newton),
            ("tolerances.svd", self.tolerances.svd),
            ("tolerances.residual", self.tolerances.residual),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, "must be positive"));
            }
        }
        let g = &self.grids;
        if g.linearize_per_unit < MIN_PER_UNIT {
            return Err(invalid("grids.linearize_per_unit", format!("must be at least {MIN_PER_UNIT}")));
        }
        for (name, v, min) in [
            ("grids.seed_resolution", g.seed_resolution, 1),
            ("grids.critical_resolution", g.critical_resolution, 1),
            ("grids.disk_per_unit", g.disk_per_unit, 4),
            ("grids.t_nodes", g.t_nodes, 3),
            ("grids.theta_cells", g.theta_cells, 2),
            ("grids.radial_nodes", g.radial_nodes, 3),
        ] {
            if v < min {
                return Err(invalid(name, format!("must be at least {min}")));
            }
        }
        if tree.internal_edges().len() != self.tree.metric_guess.len() && !self.tree.metric_guess.is_empty() {
            return Err(invalid(
                "tree.metric_guess",
                format!("expected {} lengths", tree.internal_edges().len()),
            ));
        }
        for (v, m) in self.vertex_moduli.iter().enumerate() {
            let k = tree.valence(v).saturating_sub(3);
            if v >= tree.vertex_count() || m.len() != k {
                return Err(invalid(format!("vertex_moduli[{v}]"), format!("expected {k} entries")));
            }
        }
        Ok(())
    }
}

fn parse_pair(key: &str) -> Option<(usize, usize)> {
    let (a, b) = key.split_once(',')?;
    let i = a.trim().parse().ok()?;
    let j = b.trim().parse().ok()?;
    (i < j).then_some((i, j))
}

/// Best-effort dotted path of the entry containing byte `offset`.
fn key_at(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let mut table = String::new();
    let mut key = String::new();
    for line in before.lines() {
        let t = line.trim();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').to_string();
            key.clear();
        } else if let Some((k, _)) = t.split_once('=') {
            key = k.trim().to_string();
        }
    }
    match (table.is_empty(), key.is_empty()) {
        (true, true) => "<document>".into(),
        (true, false) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLOER: &str = r#"
name = "circle"
epsilon = 0.1

[manifold]
dim = 1
kind = "flat_torus"

[tree]
encoding = "(1)"
floer_mode = true

[functions]
"0,1" = "cos(2*pi*x0)"

[[legs]]
near = [0.0]

[[legs]]
near = [0.5]
"#;

    #[test]
    fn parses_and_builds_problem() {
        let c = RunConfig::from_toml_str(FLOER).unwrap();
        assert_eq!(c.seed, DEFAULT_SEED);
        let p = c.problem().unwrap();
        assert!(p.tree.floer_mode());
        let again = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = FLOER.replace("epsilon = 0.1", "epsilon = -1.0");
        match RunConfig::from_toml_str(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "epsilon"),
            other => panic!("{other:?}"),
        }
        let bad = FLOER.replace("near = [0.5]", "near = [0.5, 1.0]");
        match RunConfig::from_toml_str(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "legs[1].near"),
            other => panic!("{other:?}"),
        }
        let bad = FLOER.replace("cos(2*pi*x0)", "cos(x0)");
        match RunConfig::from_toml_str(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "functions.\"0,1\""),
            other => panic!("{other:?}"),
        }
        let bad = FLOER.replace("dim = 1", "dim = \"one\"");
        match RunConfig::from_toml_str(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "manifold.dim"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_scale_multiplies_resolutions() {
        let c = RunConfig::from_toml_str(FLOER).unwrap().scaled(2).unwrap();
        assert_eq!(c.grids.linearize_per_unit, 200);
        assert_eq!(c.grids.t_nodes, 33);
    }
}
