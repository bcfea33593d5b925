//! Deterministic stand-in for Mutagenicity when the real archive is absent.
//!
//! Molecules are ring scaffolds joined by short linkers and decorated with
//! substituents, all in Kekulé form over the Mutagenicity alphabet. Class 0
//! (mutagen) carries at least one toxicophore; class 1 carries none. Like the
//! TU release, hydrogens can be stored as explicit atoms.

use mage_core::chem::{check_valence, parse_smiles, BondOrder, Dataset, MolecularGraph, ValenceTable};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCAFFOLDS: [&str; 8] = [
    "C1=CC=CC=C1",
    "C1=CC=NC=C1",
    "C1CCCCC1",
    "C1CCNCC1",
    "C1=CC=C2C=CC=CC2=C1",
    "C1=COC=C1",
    "C1CCOC1",
    "C1=CSC=C1",
];
const LINKERS: [&str; 4] = ["C", "CC", "C(=O)N", "O"];
const NEUTRAL: [&str; 9] = ["C", "CC", "O", "OC", "C(=O)O", "F", "Cl", "C#N", "S"];
/// nitroso, azo, epoxide, aziridine, hydrazine, bromo, iodo
const TOXICOPHORES: [&str; 7] = ["N=O", "N=NC", "C1OC1", "C1NC1", "NN", "Br", "I"];

pub const MUTAGEN: usize = 0;

fn fragment(smiles: &str) -> MolecularGraph {
    parse_smiles(smiles).expect("static fragment")
}

/// Atoms of `g` that can take one more single bond.
fn open_atoms(g: &MolecularGraph, table: &ValenceTable, range: std::ops::Range<usize>) -> Vec<usize> {
    range.filter(|&a| table.free_half_units(g, a).unwrap_or(0) >= 2).collect()
}

/// Bonds atom 0 of `frag` to `host_atom`; returns the offset of the new atoms.
fn attach(g: &mut MolecularGraph, host_atom: usize, frag: &MolecularGraph) -> usize {
    let offset = g.atom_count();
    for &e in frag.atoms() {
        g.add_atom(e);
    }
    for b in frag.bonds() {
        g.add_bond(b.a + offset, b.b + offset, b.order).expect("fresh atoms");
    }
    g.add_bond(host_atom, offset, BondOrder::Single).expect("fresh atom");
    offset
}

fn molecule<R: Rng>(rng: &mut R, class: usize, table: &ValenceTable) -> MolecularGraph {
    let mut g = fragment(SCAFFOLDS.choose(rng).expect("non-empty"));
    let rings = match rng.random_range(0..10) {
        0..=4 => 1,
        5..=8 => 2,
        _ => 3,
    };
    for _ in 1..rings {
        let open = open_atoms(&g, table, 0..g.atom_count());
        let Some(&at) = open.choose(rng) else { break };
        let at = if rng.random_bool(0.3) {
            at
        } else {
            let linker = fragment(LINKERS.choose(rng).expect("non-empty"));
            let start = attach(&mut g, at, &linker);
            let end = start + linker.atom_count();
            open_atoms(&g, table, start..end).last().copied().unwrap_or(start)
        };
        attach(&mut g, at, &fragment(SCAFFOLDS.choose(rng).expect("non-empty")));
    }
    let neutral = rng.random_range(0..4);
    let toxic = if class == MUTAGEN { rng.random_range(1..3) } else { 0 };
    let mut picks: Vec<&str> = (0..neutral).map(|_| *NEUTRAL.choose(rng).expect("non-empty")).collect();
    picks.extend((0..toxic).map(|_| *TOXICOPHORES.choose(rng).expect("non-empty")));
    let scaffold_atoms = g.atom_count();
    for smiles in picks {
        let open = open_atoms(&g, table, 0..scaffold_atoms);
        let Some(&at) = open.choose(rng) else { break };
        attach(&mut g, at, &fragment(smiles));
    }
    g.with_label(Some(class))
}

fn has_toxicophore(g: &MolecularGraph) -> bool {
    g.atoms().iter().any(|e| matches!(e.as_str(), "Br" | "I"))
        || g.bonds().iter().any(|b| {
            let (x, y) = (g.element(b.a), g.element(b.b));
            match (x.as_str(), y.as_str()) {
                ("N", "N") => true,
                ("N", "O") | ("O", "N") => b.order == BondOrder::Double,
                _ => false,
            }
        })
        || g.atoms().iter().enumerate().any(|(a, e)| matches!(e.as_str(), "O" | "N") && in_three_ring(g, a))
}

fn in_three_ring(g: &MolecularGraph, a: usize) -> bool {
    let n: Vec<usize> = g.neighbors(a).iter().map(|&(v, _)| v).collect();
    n.iter().enumerate().any(|(i, &u)| n[i + 1..].iter().any(|&w| g.bond_between(u, w).is_some()))
}

/// Saturates every heavy atom with single-bonded hydrogens.
pub fn add_hydrogens(g: &MolecularGraph, table: &ValenceTable) -> MolecularGraph {
    let h = mage_core::chem::Element::new("H").expect("static symbol");
    let mut out = g.clone();
    for a in 0..g.atom_count() {
        let free = table.free_half_units(g, a).unwrap_or(0) / 2;
        for _ in 0..free {
            let x = out.add_atom(h);
            out.add_bond(a, x, BondOrder::Single).expect("fresh atom");
        }
    }
    out
}

/// `n` labelled molecules, alternating classes, reproducible from `seed`.
///
/// A class-1 draw that happens to contain a toxicophore motif is redrawn, so
/// the label is a function of the graph.
pub fn surrogate_dataset(n: usize, seed: u64, hydrogens: bool) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = ValenceTable::default();
    let mut graphs = Vec::with_capacity(n);
    while graphs.len() < n {
        let class = graphs.len() % 2;
        let g = molecule(&mut rng, class, &table);
        if has_toxicophore(&g) != (class == MUTAGEN) || !check_valence(&g, &table).unwrap_or(false) {
            continue;
        }
        graphs.push(if hydrogens { add_hydrogens(&g, &table) } else { g });
    }
    Dataset::new(graphs, 2).expect("labels are 0 or 1")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_connected_and_valid() {
        let a = surrogate_dataset(60, 3, false);
        assert_eq!(a, surrogate_dataset(60, 3, false));
        assert_ne!(a, surrogate_dataset(60, 4, false));
        let table = ValenceTable::default();
        for g in &a.graphs {
            assert!(g.is_connected());
            assert!(check_valence(g, &table).unwrap());
            assert_eq!(has_toxicophore(g), g.label == Some(MUTAGEN));
        }
        let counts = a.graphs.iter().filter(|g| g.label == Some(MUTAGEN)).count();
        assert_eq!(counts, 30);
    }

    #[test]
    fn sizes_are_drug_like() {
        let d = surrogate_dataset(200, 0, false);
        let mean = d.mean_atom_count();
        assert!((8.0..30.0).contains(&mean), "{mean}");
    }

    #[test]
    fn hydrogens_saturate_without_changing_labels() {
        let heavy = surrogate_dataset(40, 1, false);
        let full = surrogate_dataset(40, 1, true);
        let table = ValenceTable::default();
        for (a, b) in heavy.graphs.iter().zip(&full.graphs) {
            assert_eq!(a.label, b.label);
            assert!(b.atom_count() > a.atom_count());
            assert!(check_valence(b, &table).unwrap());
            assert!((0..b.atom_count()).all(|x| b.element(x).as_str() == "H" || table.free_half_units(b, x).unwrap() < 2));
            assert_eq!(b.induced_subgraph(&(0..a.atom_count()).collect::<Vec<_>>()), a.clone().with_label(None));
        }
    }
}
