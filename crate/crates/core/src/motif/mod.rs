//! Motif extraction: bridge-bond decomposition and rings-and-bonded-pairs.

mod vocab;

pub use vocab::{build_vocabulary, MoleculeMotifs, Motif, MotifInstance, MotifVocabulary, VOCAB_CANON_CAP};

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::chem::{ChemError, MolecularGraph};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MotifError {
    #[error("graph is disconnected")]
    Disconnected,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unknown extraction method `{0}`")]
    UnknownMethod(alloc::string::String),
    #[error(transparent)]
    Chem(#[from] ChemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Method {
    /// cut bridge bonds whose endpoints both have degree ≥ 2
    #[default]
    Bridge,
    /// cycle-basis rings plus every bond outside a ring
    RingsAndBonds,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Bridge => "bridge",
            Method::RingsAndBonds => "rings_and_bonds",
        })
    }
}

impl FromStr for Method {
    type Err = MotifError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bridge" => Ok(Method::Bridge),
            "rings_and_bonds" | "rb" => Ok(Method::RingsAndBonds),
            other => Err(MotifError::UnknownMethod(other.into())),
        }
    }
}

/// A simple cycle as a closed atom walk (first atom not repeated) and its bonds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cycle {
    pub atoms: Vec<usize>,
    /// sorted bond indices
    pub bonds: Vec<usize>,
}

/// Fundamental cycles of a breadth-first spanning tree.
pub fn find_cycle_basis(graph: &MolecularGraph) -> Result<Vec<Cycle>, MotifError> {
    if !graph.is_connected() {
        return Err(MotifError::Disconnected);
    }
    Ok(cycle_basis_any(graph))
}

/// Cycle basis of every component (no connectivity precondition).
pub(crate) fn cycle_basis_any(graph: &MolecularGraph) -> Vec<Cycle> {
    let n = graph.atom_count();
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut depth = vec![usize::MAX; n];
    let mut tree_bond = vec![false; graph.bond_count()];
    for root in 0..n {
        if depth[root] != usize::MAX {
            continue;
        }
        depth[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            for &(w, e) in graph.neighbors(v) {
                if depth[w] == usize::MAX {
                    depth[w] = depth[v] + 1;
                    parent[w] = Some((v, e));
                    tree_bond[e] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    let mut cycles = Vec::new();
    for e in 0..graph.bond_count() {
        if tree_bond[e] {
            continue;
        }
        let bond = graph.bond(e);
        let (mut u, mut v) = (bond.a, bond.b);
        let (mut left, mut right) = (vec![u], vec![v]);
        let mut bonds = vec![e];
        while u != v {
            if depth[u] >= depth[v] {
                let (p, pe) = parent[u].expect("non-root");
                bonds.push(pe);
                u = p;
                left.push(u);
            } else {
                let (p, pe) = parent[v].expect("non-root");
                bonds.push(pe);
                v = p;
                right.push(v);
            }
        }
        // left ends at the meeting atom; right ends there too
        right.pop();
        right.reverse();
        left.extend(right);
        bonds.sort_unstable();
        cycles.push(Cycle { atoms: left, bonds });
    }
    cycles
}

/// Graph bridges whose two endpoints both have degree ≥ 2.
pub fn find_bridge_bonds(graph: &MolecularGraph) -> Vec<usize> {
    graph
        .bridges()
        .into_iter()
        .filter(|&e| {
            let b = graph.bond(e);
            graph.degree(b.a) >= 2 && graph.degree(b.b) >= 2
        })
        .collect()
}

/// One motif occurrence inside a host graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotifPiece {
    /// sorted host atom indices
    pub atoms: Vec<usize>,
    /// sorted host bond indices
    pub bonds: Vec<usize>,
}

impl MotifPiece {
    pub fn subgraph(&self, host: &MolecularGraph) -> MolecularGraph {
        host.subgraph(&self.atoms, &self.bonds).0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub motifs: Vec<MotifPiece>,
    /// bonds cut by the bridge method (always empty for rings-and-bonds)
    pub non_motif_bonds: Vec<usize>,
    /// motifs containing each atom
    pub atom_motifs: Vec<Vec<usize>>,
}

pub fn decompose(graph: &MolecularGraph, method: Method) -> Result<Decomposition, MotifError> {
    if !graph.is_connected() {
        return Err(MotifError::Disconnected);
    }
    Ok(decompose_any(graph, method))
}

/// [`decompose`] without the connectivity precondition; components are
/// handled independently.
pub(crate) fn decompose_any(graph: &MolecularGraph, method: Method) -> Decomposition {
    let n = graph.atom_count();
    let (motifs, non_motif_bonds) = match method {
        Method::Bridge => {
            let cut = find_bridge_bonds(graph);
            let mut is_cut = vec![false; graph.bond_count()];
            for &e in &cut {
                is_cut[e] = true;
            }
            let kept: Vec<usize> = (0..graph.bond_count()).filter(|&e| !is_cut[e]).collect();
            let all: Vec<usize> = (0..n).collect();
            let (pruned, _) = graph.subgraph(&all, &kept);
            let motifs = pruned
                .components()
                .into_iter()
                .map(|atoms| {
                    let bonds = atoms
                        .iter()
                        .flat_map(|&a| graph.neighbors(a).iter().map(|&(_, e)| e))
                        .filter(|&e| !is_cut[e])
                        .collect::<alloc::collections::BTreeSet<_>>()
                        .into_iter()
                        .collect();
                    MotifPiece { atoms, bonds }
                })
                .collect();
            (motifs, cut)
        }
        Method::RingsAndBonds => {
            let mut in_ring = vec![false; graph.bond_count()];
            let mut motifs = Vec::new();
            for cycle in cycle_basis_any(graph) {
                for &e in &cycle.bonds {
                    in_ring[e] = true;
                }
                let mut atoms = cycle.atoms;
                atoms.sort_unstable();
                motifs.push(MotifPiece { atoms, bonds: cycle.bonds });
            }
            for (e, &ring) in in_ring.iter().enumerate() {
                if !ring {
                    let b = graph.bond(e);
                    motifs.push(MotifPiece { atoms: vec![b.a, b.b], bonds: vec![e] });
                }
            }
            for a in 0..n {
                if graph.degree(a) == 0 {
                    motifs.push(MotifPiece { atoms: vec![a], bonds: Vec::new() });
                }
            }
            (motifs, Vec::new())
        }
    };
    let mut atom_motifs = vec![Vec::new(); n];
    for (m, piece) in motifs.iter().enumerate() {
        for &a in &piece.atoms {
            atom_motifs[a].push(m);
        }
    }
    Decomposition { motifs, non_motif_bonds, atom_motifs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{canonical_code, parse_smiles};
    use alloc::collections::BTreeSet;
    use alloc::string::String;

    fn g(s: &str) -> MolecularGraph {
        parse_smiles(s).unwrap()
    }

    /// Brute-force bridge test: remove the bond and count components.
    fn bridge_oracle(graph: &MolecularGraph) -> Vec<usize> {
        let atoms: Vec<usize> = (0..graph.atom_count()).collect();
        let base = graph.components().len();
        (0..graph.bond_count())
            .filter(|&e| {
                let rest: Vec<usize> = (0..graph.bond_count()).filter(|&f| f != e).collect();
                let b = graph.bond(e);
                graph.subgraph(&atoms, &rest).0.components().len() > base
                    && graph.degree(b.a) >= 2
                    && graph.degree(b.b) >= 2
            })
            .collect()
    }

    /// All simple cycles as bond sets, by DFS from each start atom.
    fn all_cycles(graph: &MolecularGraph) -> BTreeSet<Vec<usize>> {
        let mut out = BTreeSet::new();
        fn walk(g: &MolecularGraph, start: usize, v: usize, path: &mut Vec<usize>, bonds: &mut Vec<usize>, out: &mut BTreeSet<Vec<usize>>) {
            for &(w, e) in g.neighbors(v) {
                if bonds.contains(&e) {
                    continue;
                }
                if w == start && bonds.len() >= 2 {
                    let mut c = bonds.clone();
                    c.push(e);
                    c.sort_unstable();
                    out.insert(c);
                } else if w > start && !path.contains(&w) {
                    path.push(w);
                    bonds.push(e);
                    walk(g, start, w, path, bonds, out);
                    bonds.pop();
                    path.pop();
                }
            }
        }
        for s in 0..graph.atom_count() {
            walk(graph, s, s, &mut vec![s], &mut Vec::new(), &mut out);
        }
        out
    }

    #[test]
    fn cycle_basis_examples() {
        let benzene = find_cycle_basis(&g("c1ccccc1")).unwrap();
        assert_eq!(benzene.len(), 1);
        assert_eq!(benzene[0].atoms.len(), 6);
        assert!(find_cycle_basis(&g("CC(C)CCO")).unwrap().is_empty());
        assert_eq!(find_cycle_basis(&g("C.C")), Err(MotifError::Disconnected));
    }

    #[test]
    fn naphthalene_basis_against_enumeration() {
        let n = g("C1=CC=C2C=CC=CC2=C1");
        let basis = find_cycle_basis(&n).unwrap();
        assert_eq!(basis.len(), n.bond_count() - n.atom_count() + 1);
        assert_eq!(basis.len(), 2);
        let every = all_cycles(&n);
        // two 6-rings and the 10-ring perimeter
        assert_eq!(every.len(), 3);
        let union: BTreeSet<usize> = basis.iter().flat_map(|c| c.bonds.iter().copied()).collect();
        let ring_bonds: BTreeSet<usize> = every.iter().flatten().copied().collect();
        assert_eq!(union, ring_bonds);
        assert_eq!(union.len(), 11);
        for c in &basis {
            assert!(every.contains(&c.bonds), "basis cycles are simple cycles");
            // consecutive atoms bonded
            for k in 0..c.atoms.len() {
                let (x, y) = (c.atoms[k], c.atoms[(k + 1) % c.atoms.len()]);
                assert!(n.bond_between(x, y).is_some());
            }
        }
    }

    #[test]
    fn bridge_bond_examples() {
        assert!(find_bridge_bonds(&g("c1ccccc1")).is_empty());
        let eb = g("CCc1ccccc1");
        let found = find_bridge_bonds(&eb);
        assert_eq!(found, bridge_oracle(&eb));
        assert_eq!(found.len(), 1);
        let b = eb.bond(found[0]);
        assert_eq!((b.a, b.b), (1, 2));
        let path = g("CCCC");
        assert_eq!(find_bridge_bonds(&path), bridge_oracle(&path));
        assert_eq!(find_bridge_bonds(&path), [1]);
    }

    #[test]
    fn decompose_examples() {
        let d = decompose(&g("c1ccccc1"), Method::Bridge).unwrap();
        assert_eq!(d.motifs.len(), 1);
        assert!(d.non_motif_bonds.is_empty());

        let eb = g("CCc1ccccc1");
        let d = decompose(&eb, Method::Bridge).unwrap();
        let codes: BTreeSet<String> =
            d.motifs.iter().map(|m| canonical_code(&m.subgraph(&eb)).unwrap()).collect();
        let expected: BTreeSet<String> =
            ["CC", "c1ccccc1"].iter().map(|s| canonical_code(&g(s)).unwrap()).collect();
        assert_eq!(codes, expected);
        assert_eq!(d.non_motif_bonds.len(), 1);

        let d = decompose(&g("c1ccccc1"), Method::RingsAndBonds).unwrap();
        assert_eq!(d.motifs.len(), 1);
        assert_eq!(d.motifs[0].bonds.len(), 6);
    }

    #[test]
    fn bridge_partition_property() {
        for s in ["CCc1ccccc1CC(=O)O", "C1CC1C1CC1", "CCCCC", "OC(=O)C1=CC=C(N)C=C1Cl", "C"] {
            let graph = g(s);
            let d = decompose(&graph, Method::Bridge).unwrap();
            let atoms: usize = d.motifs.iter().map(|m| m.atoms.len()).sum();
            assert_eq!(atoms, graph.atom_count(), "{s}");
            assert_eq!(d.motifs.len(), d.non_motif_bonds.len() + 1, "{s}");
            let mut seen = vec![0; graph.bond_count()];
            for m in &d.motifs {
                for &e in &m.bonds {
                    seen[e] += 1;
                }
            }
            for &e in &d.non_motif_bonds {
                seen[e] += 1;
            }
            assert!(seen.iter().all(|&c| c == 1), "{s}");
            assert!(d.atom_motifs.iter().all(|m| m.len() == 1));
        }
    }

    #[test]
    fn rings_and_bonds_cover_every_bond() {
        for s in ["CCc1ccccc1CC(=O)O", "C1=CC=C2C=CC=CC2=C1", "C1CC2CCC1CC2"] {
            let graph = g(s);
            let d = decompose(&graph, Method::RingsAndBonds).unwrap();
            let covered: BTreeSet<usize> = d.motifs.iter().flat_map(|m| m.bonds.iter().copied()).collect();
            assert_eq!(covered.len(), graph.bond_count(), "{s}");
        }
    }
}
