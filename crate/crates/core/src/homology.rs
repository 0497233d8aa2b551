//! Morse homology mod 2 from counted flow lines.

use crate::error::Result;
use crate::expr::ScalarFunction;
use crate::geometry::{find_critical_points, CriticalPoint, ModelManifold};
use crate::moduli::{solve, TreeProblem};
use crate::tree::RibbonTree;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowLineCount {
    /// Critical point of index `k`.
    pub from: usize,
    /// Critical point of index `k - 1`.
    pub to: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MorseHomology {
    pub locations: Vec<Vec<f64>>,
    pub indices: Vec<usize>,
    pub counts: Vec<FlowLineCount>,
    /// `chain_ranks[k]` critical points of index `k`.
    pub chain_ranks: Vec<usize>,
    /// Rank over F₂ of `∂_k : C_k → C_{k-1}`, `k ≥ 1`.
    pub boundary_ranks: Vec<usize>,
    pub homology_ranks: Vec<usize>,
}

/// Rank over F₂ by elimination.
pub fn rank_mod2(mut rows: Vec<Vec<u8>>) -> usize {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows.len()).find(|&r| rows[r][c] & 1 == 1) else { continue };
        rows.swap(rank, p);
        for r in 0..rows.len() {
            if r != rank && rows[r][c] & 1 == 1 {
                let pivot = rows[rank].clone();
                for (a, b) in rows[r].iter_mut().zip(pivot) {
                    *a ^= b;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Counts the flow lines between critical points whose indices differ by
/// one, as floer-mode gradient trees with two legs, and reduces mod 2.
pub fn morse_homology(f: &ScalarFunction, m: &ModelManifold, resolution: usize) -> Result<MorseHomology> {
    let crit: Vec<CriticalPoint> = find_critical_points(f, m, resolution)?;
    let indices: Vec<usize> = crit.iter().map(|c| c.morse_index).collect();
    let mut functions = BTreeMap::new();
    functions.insert((0, 1), f.clone());
    let mut counts = Vec::new();
    for (a, p) in crit.iter().enumerate() {
        for (b, q) in crit.iter().enumerate() {
            if p.morse_index != q.morse_index + 1 {
                continue;
            }
            let mut found = None;
            for locs in [[&p.location, &q.location], [&q.location, &p.location]] {
                let pr = TreeProblem::new(
                    RibbonTree::corolla(2)?,
                    m.clone(),
                    functions.clone(),
                    &[locs[0].clone(), locs[1].clone()],
                    0.1,
                )?;
                if pr.expected_dimension() == 0 {
                    found = Some(solve(&pr, &[], resolution)?.len());
                }
            }
            counts.push(FlowLineCount { from: a, to: b, count: found.unwrap_or(0) });
        }
    }
    let top = indices.iter().copied().max().unwrap_or(0);
    let chain_ranks: Vec<usize> = (0..=top).map(|k| indices.iter().filter(|&&i| i == k).count()).collect();
    let mut boundary_ranks = vec![0; top + 1];
    for k in 1..=top {
        let src: Vec<usize> = (0..crit.len()).filter(|&i| indices[i] == k).collect();
        let dst: Vec<usize> = (0..crit.len()).filter(|&i| indices[i] == k - 1).collect();
        let rows: Vec<Vec<u8>> = src
            .iter()
            .map(|&s| {
                dst.iter()
                    .map(|&t| {
                        let c = counts.iter().find(|c| c.from == s && c.to == t).map_or(0, |c| c.count);
                        (c % 2) as u8
                    })
                    .collect()
            })
            .collect();
        boundary_ranks[k] = rank_mod2(rows);
    }
    let homology_ranks = (0..=top)
        .map(|k| chain_ranks[k] - boundary_ranks[k] - boundary_ranks.get(k + 1).copied().unwrap_or(0))
        .collect();
    Ok(MorseHomology {
        locations: crit.iter().map(|c| c.location.clone()).collect(),
        indices,
        counts,
        chain_ranks,
        boundary_ranks,
        homology_ranks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn elimination_rank() {
        assert_eq!(rank_mod2(vec![vec![1, 1], vec![1, 1]]), 1);
        assert_eq!(rank_mod2(vec![vec![1, 0], vec![1, 1]]), 2);
        assert_eq!(rank_mod2(vec![vec![0, 0]]), 0);
    }

    #[test]
    fn circle_has_the_homology_of_a_circle() {
        let f = parse("cos(2*pi*x0)", 1, &[true]).unwrap();
        let h = morse_homology(&f, &ModelManifold::torus(1), 16).unwrap();
        assert_eq!(h.homology_ranks, vec![1, 1]);
        assert!(h.counts.iter().all(|c| c.count == 2));
    }
}
