//! Property tests over randomly grown valid molecules.

use std::collections::BTreeSet;

use mage_core::chem::{canonical_code, check_valence, parse_smiles, write_smiles, BondOrder, Dataset, Element, MolecularGraph, ValenceTable};
use mage_core::junction::{decompose_tree, JunctionError, SpanningTree};
use mage_core::motif::{build_vocabulary, decompose, Method};
use mage_core::target::{TargetConfig, TargetModel};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ELEMENTS: [&str; 6] = ["C", "C", "C", "N", "O", "Cl"];

/// Grows a connected molecule atom by atom, closing rings at random,
/// never exceeding the default valence table.
fn molecule(seed: u64, max_atoms: usize) -> MolecularGraph {
    let table = ValenceTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = MolecularGraph::new();
    g.add_atom(Element::new("C").unwrap());
    let target = rng.random_range(1..=max_atoms);
    let free = |g: &MolecularGraph, a: usize| table.free_half_units(g, a).unwrap() / 2;
    while g.atom_count() < target {
        let open: Vec<usize> = (0..g.atom_count()).filter(|&a| free(&g, a) >= 1).collect();
        let Some(&host) = open.choose(&mut rng) else { break };
        let x = Element::new(ELEMENTS[rng.random_range(0..ELEMENTS.len())]).unwrap();
        let cap = table.cap_half_units(x).unwrap() / 2;
        let order = if cap >= 2 && free(&g, host) >= 2 && rng.random::<f64>() < 0.2 { BondOrder::Double } else { BondOrder::Single };
        let a = g.add_atom(x);
        g.add_bond(host, a, order).unwrap();
        if rng.random::<f64>() < 0.15 {
            let open: Vec<usize> = (0..g.atom_count()).filter(|&b| b != a && free(&g, b) >= 1 && g.bond_between(a, b).is_none()).collect();
            if free(&g, a) >= 1 {
                if let Some(&b) = open.choose(&mut rng) {
                    g.add_bond(a, b, BondOrder::Single).unwrap();
                }
            }
        }
    }
    assert!(check_valence(&g, &table).unwrap());
    g
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_code_ignores_atom_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let g = molecule(seed, 14);
        let h = g.permuted(&permutation(g.atom_count(), shuffle));
        prop_assert_eq!(canonical_code(&g).unwrap(), canonical_code(&h).unwrap());
        prop_assert_eq!(MolecularGraph::from_code(&canonical_code(&g).unwrap()).map(|m| canonical_code(&m).unwrap()).unwrap(), canonical_code(&g).unwrap());
    }

    #[test]
    fn smiles_round_trips(seed in any::<u64>()) {
        let g = molecule(seed, 16);
        let text = write_smiles(&g, &ValenceTable::default()).unwrap();
        let back = parse_smiles(&text).unwrap();
        prop_assert_eq!(canonical_code(&back).unwrap(), canonical_code(&g).unwrap(), "{}", text);
    }

    #[test]
    fn decomposition_covers_the_molecule(seed in any::<u64>(), rb in any::<bool>()) {
        let g = molecule(seed, 16);
        let method = if rb { Method::RingsAndBonds } else { Method::Bridge };
        let d = decompose(&g, method).unwrap();
        let mut atoms = BTreeSet::new();
        for m in &d.motifs {
            let sub = m.subgraph(&g);
            prop_assert!(sub.is_connected());
            atoms.extend(m.atoms.iter().copied());
        }
        for &b in &d.non_motif_bonds {
            atoms.insert(g.bond(b).a);
            atoms.insert(g.bond(b).b);
        }
        prop_assert_eq!(atoms.len(), g.atom_count());
    }

    #[test]
    fn junction_trees_hold_their_invariants(seed in any::<u64>(), pick in any::<u64>(), uniform in any::<bool>()) {
        let graphs: Vec<MolecularGraph> = (0..6).map(|i| molecule(seed.wrapping_add(i), 16).with_label(Some(i as usize % 2))).collect();
        let data = Dataset::new(graphs, 2).unwrap();
        let vocab = build_vocabulary(&data, Method::Bridge).unwrap();
        for m in &vocab.motifs {
            prop_assert!(m.occurrence >= 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(pick);
        let selected: BTreeSet<usize> = (0..vocab.len()).filter(|_| rng.random::<bool>()).collect();
        let spanning = if uniform { SpanningTree::UniformRandom(pick) } else { SpanningTree::MaxWeight };
        for (k, host) in data.graphs.iter().enumerate() {
            let t = match decompose_tree(host, &vocab.molecules[k], &vocab, &selected, spanning) {
                Err(JunctionError::EmptyTree) if host.atom_count() == 1 => continue,
                t => t.unwrap(),
            };
            prop_assert!(t.violations(host).is_empty(), "{:?}", t.violations(host));
        }
    }

    #[test]
    fn embeddings_ignore_atom_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let g = molecule(seed, 12);
        let mut elements: Vec<Element> = ["C", "Cl", "N", "O"].iter().map(|s| Element::new(s).unwrap()).collect();
        elements.sort();
        let model = TargetModel::init(TargetConfig { hidden: 8, seed: 2, ..TargetConfig::default() }, elements, 2);
        let h = g.permuted(&permutation(g.atom_count(), shuffle));
        let (a, b) = (model.embed(&g).unwrap(), model.embed(&h).unwrap());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
        let p = model.predict(&g).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
