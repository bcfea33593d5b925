//! Canonical codes: equal iff two graphs are isomorphic with matching
//! elements and bond orders.
//!
//! Colour refinement first, then an individualisation search over the first
//! non-singleton cell at every level. Leaves that tie with the best code yield
//! automorphisms, which prune sibling branches in the same orbit.
//!
//! Code layout: `<elements joined by '.'>;<edges i-j:o joined by ','>`,
//! with positions in canonical order and edges sorted.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use super::{BondOrder, ChemError, Element, MolecularGraph};

pub const DEFAULT_CANON_CAP: usize = 64;

pub fn canonical_code(graph: &MolecularGraph) -> Result<String, ChemError> {
    canonical_code_with_cap(graph, DEFAULT_CANON_CAP)
}

pub fn canonical_code_with_cap(graph: &MolecularGraph, cap: usize) -> Result<String, ChemError> {
    let n = graph.atom_count();
    if n > cap {
        return Err(ChemError::TooLarge { size: n, cap });
    }
    let order = canonical_order(graph);
    Ok(render(graph, &order))
}

/// `order[k]` is the atom placed at canonical position `k`.
pub(crate) fn canonical_order(graph: &MolecularGraph) -> Vec<usize> {
    let n = graph.atom_count();
    if n == 0 {
        return Vec::new();
    }
    let mut symbols: Vec<Element> = graph.atoms().to_vec();
    symbols.sort_unstable();
    symbols.dedup();
    let colors: Vec<u32> = graph
        .atoms()
        .iter()
        .map(|e| symbols.binary_search(e).unwrap() as u32)
        .collect();
    let mut search = Search { graph, best: None, automorphisms: Vec::new() };
    search.descend(colors, &mut Vec::new());
    let (_, pos) = search.best.expect("at least one leaf");
    let mut order = vec![0; n];
    for (v, &p) in pos.iter().enumerate() {
        order[p as usize] = v;
    }
    order
}

type EdgeKey = Vec<(u32, u32, u8)>;

struct Search<'g> {
    graph: &'g MolecularGraph,
    /// (edge key, position of each atom)
    best: Option<(EdgeKey, Vec<u32>)>,
    automorphisms: Vec<Vec<usize>>,
}

impl Search<'_> {
    fn descend(&mut self, mut colors: Vec<u32>, prefix: &mut Vec<usize>) {
        refine(self.graph, &mut colors);
        let n = colors.len();
        let mut sizes = vec![0usize; n];
        for &c in &colors {
            sizes[c as usize] += 1;
        }
        let Some(target) = (0..n).find(|&c| sizes[c] > 1) else {
            self.leaf(colors);
            return;
        };
        let cell: Vec<usize> = (0..n).filter(|&v| colors[v] as usize == target).collect();
        let mut explored: Vec<usize> = Vec::new();
        for &v in &cell {
            if !explored.is_empty() && self.same_orbit(prefix, v, &explored) {
                continue;
            }
            let mut next = colors.clone();
            individualize(&mut next, v);
            prefix.push(v);
            self.descend(next, prefix);
            prefix.pop();
            explored.push(v);
        }
    }

    fn leaf(&mut self, pos: Vec<u32>) {
        let key = edge_key(self.graph, &pos);
        match &self.best {
            None => self.best = Some((key, pos)),
            Some((best_key, best_pos)) => match key.cmp(best_key) {
                core::cmp::Ordering::Less => self.best = Some((key, pos)),
                core::cmp::Ordering::Equal => {
                    let mut at = vec![0usize; pos.len()];
                    for (v, &p) in best_pos.iter().enumerate() {
                        at[p as usize] = v;
                    }
                    let gamma: Vec<usize> = pos.iter().map(|&p| at[p as usize]).collect();
                    if gamma.iter().enumerate().any(|(v, &w)| v != w) {
                        self.automorphisms.push(gamma);
                    }
                }
                core::cmp::Ordering::Greater => {}
            },
        }
    }

    /// Whether `v` shares an orbit with an explored vertex under the known
    /// automorphisms that fix `prefix` pointwise.
    fn same_orbit(&self, prefix: &[usize], v: usize, explored: &[usize]) -> bool {
        let n = self.graph.atom_count();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for gamma in &self.automorphisms {
            if prefix.iter().any(|&p| gamma[p] != p) {
                continue;
            }
            for (x, &y) in gamma.iter().enumerate() {
                let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
                if rx != ry {
                    parent[rx] = ry;
                }
            }
        }
        let rv = find(&mut parent, v);
        explored.iter().any(|&w| find(&mut parent, w) == rv)
    }
}

/// Splits colour classes by neighbourhood until stable; colours stay ranks
/// and existing cell order is preserved.
fn refine(graph: &MolecularGraph, colors: &mut [u32]) {
    let n = colors.len();
    let mut distinct = count_distinct(colors);
    loop {
        if distinct == n {
            return;
        }
        let signatures: Vec<(u32, Vec<(u8, u32)>)> = (0..n)
            .map(|v| {
                let mut nb: Vec<(u8, u32)> = graph
                    .neighbors(v)
                    .iter()
                    .map(|&(w, e)| (graph.bond(e).order as u8, colors[w]))
                    .collect();
                nb.sort_unstable();
                (colors[v], nb)
            })
            .collect();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| signatures[a].cmp(&signatures[b]));
        let mut rank = 0u32;
        let mut new = vec![0u32; n];
        for (i, &v) in idx.iter().enumerate() {
            if i > 0 && signatures[v] != signatures[idx[i - 1]] {
                rank += 1;
            }
            new[v] = rank;
        }
        let now = rank as usize + 1;
        colors.copy_from_slice(&new);
        if now == distinct {
            return;
        }
        distinct = now;
    }
}

fn count_distinct(colors: &[u32]) -> usize {
    let mut c = colors.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

/// Gives `v` its own colour ahead of the rest of its cell, then re-ranks.
fn individualize(colors: &mut [u32], v: usize) {
    let keys: Vec<(u32, bool)> = colors.iter().enumerate().map(|(u, &c)| (c, u != v)).collect();
    let mut sorted = keys.clone();
    sorted.sort_unstable();
    sorted.dedup();
    for (u, k) in keys.iter().enumerate() {
        colors[u] = sorted.binary_search(k).unwrap() as u32;
    }
}

fn edge_key(graph: &MolecularGraph, pos: &[u32]) -> EdgeKey {
    let mut key: EdgeKey = graph
        .bonds()
        .iter()
        .map(|b| {
            let (x, y) = (pos[b.a], pos[b.b]);
            let (x, y) = if x < y { (x, y) } else { (y, x) };
            (x, y, b.order as u8)
        })
        .collect();
    key.sort_unstable();
    key
}

fn render(graph: &MolecularGraph, order: &[usize]) -> String {
    let mut pos = vec![0u32; order.len()];
    for (k, &v) in order.iter().enumerate() {
        pos[v] = k as u32;
    }
    let mut out = String::new();
    for (k, &v) in order.iter().enumerate() {
        if k > 0 {
            out.push('.');
        }
        out.push_str(graph.element(v).as_str());
    }
    out.push(';');
    for (i, (x, y, o)) in edge_key(graph, &pos).into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let order = BondOrder::ALL[o as usize];
        let _ = write!(out, "{x}-{y}:{}", order.code_char());
    }
    out
}

impl MolecularGraph {
    /// Rebuilds the graph a canonical code describes (atoms in canonical order).
    pub fn from_code(code: &str) -> Result<MolecularGraph, ChemError> {
        let bad = || ChemError::BadCode(code.into());
        let (atoms, edges) = code.split_once(';').ok_or_else(bad)?;
        let atoms: Vec<Element> = if atoms.is_empty() {
            Vec::new()
        } else {
            atoms.split('.').map(Element::new).collect::<Result<_, _>>().map_err(|_| bad())?
        };
        let mut g = MolecularGraph::from_parts(atoms, core::iter::empty())?;
        if !edges.is_empty() {
            for edge in edges.split(',') {
                let (ij, o) = edge.split_once(':').ok_or_else(bad)?;
                let (i, j) = ij.split_once('-').ok_or_else(bad)?;
                let i: usize = i.parse().map_err(|_| bad())?;
                let j: usize = j.parse().map_err(|_| bad())?;
                let mut chars = o.chars();
                let order = chars.next().and_then(BondOrder::from_code_char).ok_or_else(bad)?;
                if chars.next().is_some() {
                    return Err(bad());
                }
                g.add_bond(i, j, order).map_err(|_| bad())?;
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{el, parse_smiles};

    fn code(s: &str) -> String {
        canonical_code(&parse_smiles(s).unwrap()).unwrap()
    }

    #[test]
    fn rotation_invariant() {
        assert_eq!(code("c1ccccc1"), code("c1ccccc1"));
        let g = parse_smiles("c1ccccc1O").unwrap();
        let rotated = g.permuted(&[3, 4, 5, 6, 0, 1, 2]);
        assert_eq!(canonical_code(&g).unwrap(), canonical_code(&rotated).unwrap());
    }

    #[test]
    fn bond_colours_matter() {
        assert_ne!(code("c1ccccc1"), code("C1CCCCC1"));
        assert_ne!(code("C=CC"), code("CCC"));
        assert_ne!(code("CO"), code("CN"));
    }

    #[test]
    fn cap() {
        let g = parse_smiles("CCCCCC").unwrap();
        assert_eq!(canonical_code_with_cap(&g, 5), Err(ChemError::TooLarge { size: 6, cap: 5 }));
    }

    #[test]
    fn code_round_trip() {
        for s in ["c1ccccc1", "CC(=O)O", "C#N", "C", "[X9]CCl"] {
            let c = code(s);
            let back = MolecularGraph::from_code(&c).unwrap();
            assert_eq!(canonical_code(&back).unwrap(), c);
        }
        assert!(MolecularGraph::from_code("C.C;0-2:1").is_err());
        assert!(MolecularGraph::from_code("C.C").is_err());
        assert_eq!(MolecularGraph::from_code(";").unwrap().atom_count(), 0);
    }

    #[test]
    fn symmetric_molecules_terminate() {
        // several equivalent CCl3 groups and large rings exercise the pruning
        let c = code("ClC(Cl)(Cl)C(C(Cl)(Cl)Cl)(C(Cl)(Cl)Cl)C(Cl)(Cl)Cl");
        assert!(c.starts_with("C.C.C.C.C."));
        let ring = code("C1CCCCCCCCCCCCCCCCCCCCCCCCCCCCC1");
        assert_eq!(ring.matches(',').count(), 29);
        let cube = code("C12C3C4C1C5C2C3C45");
        assert_eq!(cube.matches(',').count(), 11);
    }

    #[test]
    fn single_atoms() {
        assert_eq!(code("C"), "C;");
        assert_ne!(code("C"), code("N"));
        let _ = el("C");
    }
}
