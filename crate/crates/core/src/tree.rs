//! Ribbon trees: the combinatorics indexing the strip decomposition of a
//! pointed disk.
//!
//! A tree has `d` external half-edges labelled `0..d` in counterclockwise
//! boundary order and internal edges made of two partnered half-edges. Every
//! half-edge starts at a vertex, and each vertex carries a counterclockwise
//! cyclic order of the half-edges starting there. Boundary component `k` of
//! the disk is the arc from leaf `k` to leaf `k + 1 (mod d)`.

use crate::error::{Error, Result};
use std::fmt::Write as _;

pub type VertexId = usize;
pub type HalfEdgeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Partner {
    /// Other half of an internal edge.
    Internal(HalfEdgeId),
    /// External half-edge carrying this leaf label.
    External(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HalfEdge {
    pub source: VertexId,
    pub partner: Partner,
}

/// An internal edge, named by its two half-edges with `forward < backward`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InternalEdge {
    pub forward: HalfEdgeId,
    pub backward: HalfEdgeId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RibbonTree {
    vertex_count: usize,
    half_edges: Vec<HalfEdge>,
    cyclic: Vec<Vec<HalfEdgeId>>,
    floer_mode: bool,
    leaves: Vec<HalfEdgeId>,
    internal: Vec<InternalEdge>,
    left: Vec<usize>,
    right: Vec<usize>,
}

/// Planar rooted picture of a ribbon tree, hung from leaf 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Planar {
    Leaf(usize),
    Node(Vec<Planar>),
}

impl RibbonTree {
    /// Validates and builds a tree. Checks partner symmetry, cyclic orders,
    /// leaf labels, the tree property, valences and that the boundary walk
    /// visits the leaves in counterclockwise label order.
    pub fn new(
        vertex_count: usize,
        half_edges: Vec<HalfEdge>,
        cyclic: Vec<Vec<HalfEdgeId>>,
        floer_mode: bool,
    ) -> Result<RibbonTree> {
        let bad = |m: String| Err(Error::InvalidTree(m));
        if vertex_count == 0 {
            return bad("a tree needs at least one vertex".into());
        }
        if cyclic.len() != vertex_count {
            return bad(format!("{} cyclic orders for {} vertices", cyclic.len(), vertex_count));
        }
        let mut leaves_by_label: Vec<Option<HalfEdgeId>> = Vec::new();
        let mut internal = Vec::new();
        for (h, he) in half_edges.iter().enumerate() {
            if he.source >= vertex_count {
                return bad(format!("half-edge {h} starts at missing vertex {}", he.source));
            }
            match he.partner {
                Partner::Internal(o) => {
                    if o == h || o >= half_edges.len() || half_edges[o].partner != Partner::Internal(h) {
                        return bad(format!("half-edge {h} has an asymmetric partner"));
                    }
                    if h < o {
                        internal.push(InternalEdge { forward: h, backward: o });
                    }
                }
                Partner::External(label) => {
                    if label >= leaves_by_label.len() {
                        leaves_by_label.resize(label + 1, None);
                    }
                    if leaves_by_label[label].replace(h).is_some() {
                        return bad(format!("leaf label {label} used twice"));
                    }
                }
            }
        }
        let d = leaves_by_label.len();
        let leaves: Vec<HalfEdgeId> = match leaves_by_label.into_iter().collect::<Option<Vec<_>>>() {
            Some(l) => l,
            None => return bad("leaf labels must be exactly 0..d".into()),
        };
        if floer_mode {
            if d != 2 {
                return bad(format!("floer_mode requires d = 2, got {d}"));
            }
        } else if d < 3 {
            return bad(format!("d = {d} < 3 requires floer_mode"));
        }
        if internal.len() + 1 != vertex_count {
            return bad(format!(
                "{} internal edges on {} vertices is not a tree",
                internal.len(),
                vertex_count
            ));
        }
        for (v, order) in cyclic.iter().enumerate() {
            let mut mine: Vec<HalfEdgeId> =
                (0..half_edges.len()).filter(|&h| half_edges[h].source == v).collect();
            let mut given = order.clone();
            mine.sort_unstable();
            given.sort_unstable();
            if mine != given {
                return bad(format!("cyclic order at vertex {v} is not a permutation of its half-edges"));
            }
            let min_valence = if floer_mode { 2 } else { 3 };
            if order.len() < min_valence {
                return bad(format!("vertex {v} has valence {} < {min_valence}", order.len()));
            }
        }
        // connectivity
        let mut seen = vec![false; vertex_count];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &h in &cyclic[v] {
                if let Partner::Internal(o) = half_edges[h].partner {
                    let w = half_edges[o].source;
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("graph is not connected".into());
        }
        let mut tree = RibbonTree {
            vertex_count,
            half_edges,
            cyclic,
            floer_mode,
            leaves,
            internal,
            left: Vec::new(),
            right: Vec::new(),
        };
        tree.walk_boundary()?;
        Ok(tree)
    }

    fn walk_boundary(&mut self) -> Result<()> {
        const UNSET: usize = usize::MAX;
        let d = self.leaves.len();
        let mut left = vec![UNSET; self.half_edges.len()];
        let mut right = vec![UNSET; self.half_edges.len()];
        for k in 0..d {
            let h = self.leaves[k];
            left[h] = k;
            let mut g = self.next_ccw(h);
            let mut steps = 0;
            loop {
                if right[g] != UNSET {
                    return Err(Error::InvalidTree("boundary walk revisits a half-edge".into()));
                }
                right[g] = k;
                match self.half_edges[g].partner {
                    Partner::External(j) => {
                        if j != (k + 1) % d {
                            return Err(Error::InvalidTree(format!(
                                "boundary walk from leaf {k} reaches leaf {j}; labels are not in counterclockwise order"
                            )));
                        }
                        break;
                    }
                    Partner::Internal(o) => {
                        left[o] = k;
                        g = self.next_ccw(o);
                    }
                }
                steps += 1;
                if steps > self.half_edges.len() {
                    return Err(Error::InvalidTree("boundary walk does not close".into()));
                }
            }
        }
        if left.iter().chain(&right).any(|&x| x == UNSET) {
            return Err(Error::InvalidTree("boundary walk misses a half-edge".into()));
        }
        self.left = left;
        self.right = right;
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.leaves.len()
    }

    pub fn floer_mode(&self) -> bool {
        self.floer_mode
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn half_edges(&self) -> &[HalfEdge] {
        &self.half_edges
    }

    pub fn half_edge(&self, h: HalfEdgeId) -> HalfEdge {
        self.half_edges[h]
    }

    pub fn cyclic_order(&self, v: VertexId) -> &[HalfEdgeId] {
        &self.cyclic[v]
    }

    pub fn valence(&self, v: VertexId) -> usize {
        self.cyclic[v].len()
    }

    /// External half-edge of leaf `label`.
    pub fn leaf(&self, label: usize) -> HalfEdgeId {
        self.leaves[label]
    }

    pub fn internal_edges(&self) -> &[InternalEdge] {
        &self.internal
    }

    /// Index of the internal edge containing half-edge `h`.
    pub fn edge_of(&self, h: HalfEdgeId) -> Option<usize> {
        self.internal.iter().position(|e| e.forward == h || e.backward == h)
    }

    /// The half-edge following `h` counterclockwise at its source.
    pub fn next_ccw(&self, h: HalfEdgeId) -> HalfEdgeId {
        let order = &self.cyclic[self.half_edges[h].source];
        let i = order.iter().position(|&x| x == h).expect("half-edge in its vertex order");
        order[(i + 1) % order.len()]
    }

    /// Boundary components `(left, right)` of half-edge `h` oriented away
    /// from its source. The opposite orientation swaps them.
    pub fn boundary_pair(&self, h: HalfEdgeId) -> Result<(usize, usize)> {
        if h >= self.half_edges.len() {
            return Err(Error::InvalidTree(format!("no half-edge {h}")));
        }
        Ok((self.left[h], self.right[h]))
    }

    /// The planar picture hung from leaf 0, optionally collapsing some
    /// internal edges (their children are spliced into the parent).
    pub fn to_planar_collapsing(&self, collapse: &dyn Fn(usize) -> bool) -> Planar {
        let root = self.leaves[0];
        Planar::Node(self.children_of(root, collapse))
    }

    pub fn to_planar(&self) -> Planar {
        self.to_planar_collapsing(&|_| false)
    }

    fn children_of(&self, incoming: HalfEdgeId, collapse: &dyn Fn(usize) -> bool) -> Vec<Planar> {
        let mut out = Vec::new();
        let mut h = self.next_ccw(incoming);
        while h != incoming {
            match self.half_edges[h].partner {
                Partner::External(label) => out.push(Planar::Leaf(label)),
                Partner::Internal(o) => {
                    let kids = self.children_of(o, collapse);
                    if collapse(self.edge_of(h).unwrap()) {
                        out.extend(kids);
                    } else {
                        out.push(Planar::Node(kids));
                    }
                }
            }
            h = self.next_ccw(h);
        }
        out
    }

    /// Canonical encoding: nested leaf lists of the tree hung from leaf 0.
    pub fn encoding(&self) -> String {
        self.to_planar().encoding()
    }

    /// Rebuilds the tree with vertices in preorder from leaf 0 and
    /// half-edges numbered in walk order.
    pub fn canonical(&self) -> RibbonTree {
        Self::from_planar(&self.to_planar(), self.floer_mode).expect("canonical rebuild of a valid tree")
    }

    /// Builds a tree from its planar picture (a root `Node` whose leaves,
    /// read left to right, are `1..d`).
    pub fn from_planar(root: &Planar, floer_mode: bool) -> Result<RibbonTree> {
        let Planar::Node(_) = root else {
            return Err(Error::InvalidTree("root of a planar tree must be a node".into()));
        };
        let mut half_edges = Vec::new();
        let mut cyclic = Vec::new();
        build(root, Partner::External(0), &mut half_edges, &mut cyclic);
        RibbonTree::new(cyclic.len(), half_edges, cyclic, floer_mode)
    }

    /// Parses the canonical encoding, e.g. `(1,(2,3))`.
    pub fn from_encoding(text: &str, floer_mode: bool) -> Result<RibbonTree> {
        let planar = Planar::parse(text)?;
        Self::from_planar(&planar, floer_mode)
    }

    /// The single-vertex tree with `d` leaves.
    pub fn corolla(d: usize) -> Result<RibbonTree> {
        let floer = d == 2;
        Self::from_planar(&Planar::Node((1..d).map(Planar::Leaf).collect()), floer)
    }
}

fn build(node: &Planar, parent: Partner, half_edges: &mut Vec<HalfEdge>, cyclic: &mut Vec<Vec<HalfEdgeId>>) -> HalfEdgeId {
    let Planar::Node(children) = node else { unreachable!("leaves are emitted by their parent") };
    let v = cyclic.len();
    cyclic.push(Vec::new());
    let up = half_edges.len();
    half_edges.push(HalfEdge { source: v, partner: parent });
    cyclic[v].push(up);
    for child in children {
        match child {
            Planar::Leaf(label) => {
                let h = half_edges.len();
                half_edges.push(HalfEdge { source: v, partner: Partner::External(*label) });
                cyclic[v].push(h);
            }
            Planar::Node(_) => {
                let h = half_edges.len();
                half_edges.push(HalfEdge { source: v, partner: Partner::External(usize::MAX) });
                cyclic[v].push(h);
                let o = build(child, Partner::Internal(h), half_edges, cyclic);
                half_edges[h].partner = Partner::Internal(o);
            }
        }
    }
    up
}

impl Planar {
    pub fn encoding(&self) -> String {
        let mut s = String::new();
        self.write(&mut s);
        s
    }

    fn write(&self, s: &mut String) {
        match self {
            Planar::Leaf(l) => {
                let _ = write!(s, "{l}");
            }
            Planar::Node(kids) => {
                s.push('(');
                for (i, k) in kids.iter().enumerate() {
                    if i > 0 {
                        s.push(',');
                    }
                    k.write(s);
                }
                s.push(')');
            }
        }
    }

    pub fn parse(text: &str) -> Result<Planar> {
        let bytes: Vec<u8> = text.bytes().filter(|b| !b.is_ascii_whitespace()).collect();
        let mut pos = 0;
        let p = parse_planar(&bytes, &mut pos)?;
        if pos != bytes.len() {
            return Err(Error::InvalidTree(format!("trailing input in tree encoding `{text}`")));
        }
        Ok(p)
    }

    fn internal_edges(&self) -> usize {
        match self {
            Planar::Leaf(_) => 0,
            Planar::Node(kids) => kids
                .iter()
                .map(|k| match k {
                    Planar::Leaf(_) => 0,
                    Planar::Node(_) => 1 + k.internal_edges(),
                })
                .sum(),
        }
    }
}

fn parse_planar(b: &[u8], pos: &mut usize) -> Result<Planar> {
    let err = |m: &str| Error::InvalidTree(format!("tree encoding: {m}"));
    match b.get(*pos) {
        Some(b'(') => {
            *pos += 1;
            let mut kids = vec![parse_planar(b, pos)?];
            loop {
                match b.get(*pos) {
                    Some(b',') => {
                        *pos += 1;
                        kids.push(parse_planar(b, pos)?);
                    }
                    Some(b')') => {
                        *pos += 1;
                        return Ok(Planar::Node(kids));
                    }
                    _ => return Err(err("expected `,` or `)`")),
                }
            }
        }
        Some(c) if c.is_ascii_digit() => {
            let start = *pos;
            while b.get(*pos).is_some_and(|c| c.is_ascii_digit()) {
                *pos += 1;
            }
            let label = std::str::from_utf8(&b[start..*pos]).unwrap().parse().map_err(|_| err("bad label"))?;
            Ok(Planar::Leaf(label))
        }
        _ => Err(err("unexpected character")),
    }
}

/// One representative per isomorphism class of ribbon trees with `d` leaves,
/// in deterministic order (by number of internal edges, then encoding).
/// `floer_mode` with `d = 2` yields the single two-valent vertex.
pub fn enumerate_ribbon_trees(d: usize, trivalent_only: bool, floer_mode: bool) -> Result<Vec<RibbonTree>> {
    if floer_mode {
        if d != 2 {
            return Err(Error::InvalidTree(format!("floer_mode requires d = 2, got {d}")));
        }
        return Ok(vec![RibbonTree::corolla(2)?]);
    }
    if d < 3 {
        return Err(Error::InvalidTree(format!("d = {d} < 3")));
    }
    let mut planars: Vec<Planar> = plant(1, d - 1, trivalent_only)
        .into_iter()
        .filter(|p| matches!(p, Planar::Node(_)))
        .collect();
    planars.sort_by_key(|p| (p.internal_edges(), p.encoding()));
    planars.iter().map(|p| RibbonTree::from_planar(p, false)).collect()
}

/// All planar rooted trees whose leaves read `lo..=hi`.
fn plant(lo: usize, hi: usize, trivalent_only: bool) -> Vec<Planar> {
    if lo == hi {
        return vec![Planar::Leaf(lo)];
    }
    let mut out = Vec::new();
    let n = hi - lo + 1;
    // cut positions between consecutive leaves: bitmask over n-1 gaps
    for mask in 1u32..(1u32 << (n - 1)) {
        let blocks = mask.count_ones() as usize + 1;
        if trivalent_only && blocks != 2 {
            continue;
        }
        let mut ranges = Vec::new();
        let mut start = lo;
        for gap in 0..n - 1 {
            if mask & (1 << gap) != 0 {
                ranges.push((start, lo + gap));
                start = lo + gap + 1;
            }
        }
        ranges.push((start, hi));
        let mut partial: Vec<Vec<Planar>> = vec![Vec::new()];
        for &(a, b) in &ranges {
            let options = plant(a, b, trivalent_only);
            partial = partial
                .into_iter()
                .flat_map(|prefix| {
                    options.iter().map(move |o| {
                        let mut p = prefix.clone();
                        p.push(o.clone());
                        p
                    })
                })
                .collect();
        }
        out.extend(partial.into_iter().map(Planar::Node));
    }
    out
}

/// A ribbon tree with nonnegative lengths on its internal edges. External
/// edges are implicitly infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRibbonTree {
    pub tree: RibbonTree,
    lengths: Vec<f64>,
}

impl MetricRibbonTree {
    pub fn new(tree: RibbonTree, lengths: Vec<f64>) -> Result<MetricRibbonTree> {
        if lengths.len() != tree.internal_edges().len() {
            return Err(Error::InvalidTree(format!(
                "{} lengths for {} internal edges",
                lengths.len(),
                tree.internal_edges().len()
            )));
        }
        for (edge, &length) in lengths.iter().enumerate() {
            if !(length >= 0.0) || !length.is_finite() {
                return Err(Error::NegativeLength { edge, length });
            }
        }
        Ok(MetricRibbonTree { tree, lengths })
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// Codimension of the stratum: internal edges of length exactly zero.
    pub fn stratum_codim(&self) -> usize {
        self.lengths.iter().filter(|&&l| l == 0.0).count()
    }

    /// The tree obtained by contracting every zero-length edge.
    pub fn contracted(&self) -> RibbonTree {
        let planar = self.tree.to_planar_collapsing(&|e| self.lengths[e] == 0.0);
        RibbonTree::from_planar(&planar, self.tree.floer_mode()).expect("contraction of a valid tree")
    }
}

/// Free-standing form of [`MetricRibbonTree::stratum_codim`]; rejects
/// negative lengths.
pub fn stratum_codim(tree: &RibbonTree, lengths: &[f64]) -> Result<usize> {
    Ok(MetricRibbonTree::new(tree.clone(), lengths.to_vec())?.stratum_codim())
}

const TEXT_HEADER: &str = "ribbon-tree 1";

/// Serializes a tree (and optional internal-edge lengths) to the line-based
/// text record described in the book's file-format chapter.
pub fn to_text(tree: &RibbonTree, lengths: Option<&[f64]>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{TEXT_HEADER}");
    let _ = writeln!(s, "floer_mode {}", tree.floer_mode);
    let _ = writeln!(s, "vertices {}", tree.vertex_count);
    for (h, he) in tree.half_edges.iter().enumerate() {
        match he.partner {
            Partner::Internal(o) => {
                let _ = writeln!(s, "half_edge {h} {} {o}", he.source);
            }
            Partner::External(l) => {
                let _ = writeln!(s, "half_edge {h} {} EXT {l}", he.source);
            }
        }
    }
    for (v, order) in tree.cyclic.iter().enumerate() {
        let list: Vec<String> = order.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(s, "cyclic {v} {}", list.join(" "));
    }
    if let Some(ls) = lengths {
        for (e, l) in ls.iter().enumerate() {
            let _ = writeln!(s, "length {e} {l:?}");
        }
    }
    s
}

/// Parses [`to_text`] output. Lengths are returned when present.
pub fn from_text(text: &str) -> Result<(RibbonTree, Option<Vec<f64>>)> {
    let err = |line: usize, m: &str| Error::InvalidTree(format!("line {}: {m}", line + 1));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    match lines.next() {
        Some((_, l)) if l.trim() == TEXT_HEADER => {}
        Some((i, _)) => return Err(err(i, "expected header `ribbon-tree 1`")),
        None => return Err(Error::InvalidTree("empty tree record".into())),
    }
    let mut floer = false;
    let mut vertices = None;
    let mut half_edges: Vec<Option<HalfEdge>> = Vec::new();
    let mut cyclic: Vec<Option<Vec<HalfEdgeId>>> = Vec::new();
    let mut lengths: Vec<(usize, f64)> = Vec::new();
    for (i, line) in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        let num = |k: usize| -> Result<usize> {
            tok.get(k).and_then(|t| t.parse().ok()).ok_or_else(|| err(i, "expected an integer"))
        };
        match tok[0] {
            "floer_mode" => {
                floer = tok.get(1).and_then(|t| t.parse().ok()).ok_or_else(|| err(i, "expected true/false"))?
            }
            "vertices" => vertices = Some(num(1)?),
            "half_edge" => {
                let h = num(1)?;
                let source = num(2)?;
                let partner = if tok.get(3) == Some(&"EXT") { Partner::External(num(4)?) } else { Partner::Internal(num(3)?) };
                if h >= half_edges.len() {
                    half_edges.resize(h + 1, None);
                }
                half_edges[h] = Some(HalfEdge { source, partner });
            }
            "cyclic" => {
                let v = num(1)?;
                let order = (2..tok.len()).map(num).collect::<Result<Vec<_>>>()?;
                if v >= cyclic.len() {
                    cyclic.resize(v + 1, None);
                }
                cyclic[v] = Some(order);
            }
            "length" => {
                let e = num(1)?;
                let l: f64 = tok.get(2).and_then(|t| t.parse().ok()).ok_or_else(|| err(i, "expected a length"))?;
                lengths.push((e, l));
            }
            other => return Err(err(i, &format!("unknown record `{other}`"))),
        }
    }
    let vertices = vertices.ok_or_else(|| Error::InvalidTree("missing `vertices` record".into()))?;
    let half_edges = half_edges
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InvalidTree("half-edge ids must be contiguous".into()))?;
    let mut cyclic = cyclic
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InvalidTree("cyclic orders must be given for every vertex".into()))?;
    cyclic.resize(vertices, Vec::new());
    let tree = RibbonTree::new(vertices, half_edges, cyclic, floer)?;
    let lengths = if lengths.is_empty() {
        None
    } else {
        let mut out = vec![f64::NAN; tree.internal_edges().len()];
        for (e, l) in lengths {
            *out.get_mut(e).ok_or_else(|| Error::InvalidTree(format!("no internal edge {e}")))? = l;
        }
        if out.iter().any(|l| l.is_nan()) {
            return Err(Error::InvalidTree("missing length for an internal edge".into()));
        }
        Some(out)
    };
    Ok((tree, lengths))
}
