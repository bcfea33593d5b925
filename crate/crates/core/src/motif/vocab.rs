use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use super::{decompose_any, Method, MotifError};
use crate::chem::{canonical_code_with_cap, canonical_order, Dataset, MolecularGraph};

/// A deduplicated motif.
#[derive(Debug, Clone, PartialEq)]
pub struct Motif {
    pub code: String,
    /// atoms in canonical order
    pub graph: MolecularGraph,
    /// number of distinct molecules containing the motif
    pub occurrence: usize,
    /// host molecule → host atoms per occurrence, aligned with `graph` atoms
    pub atom_maps: BTreeMap<usize, Vec<Vec<usize>>>,
}

/// One motif occurrence in a molecule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotifInstance {
    /// index into [`MotifVocabulary::motifs`]
    pub motif: usize,
    /// sorted host atoms
    pub atoms: Vec<usize>,
    /// sorted host bonds
    pub bonds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MoleculeMotifs {
    pub instances: Vec<MotifInstance>,
    pub non_motif_bonds: Vec<usize>,
    /// sorted distinct motif indices (the molecule's motif set)
    pub motif_set: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotifVocabulary {
    pub method: Method,
    /// ordered by occurrence descending, then code ascending
    pub motifs: Vec<Motif>,
    pub molecules: Vec<MoleculeMotifs>,
    index: BTreeMap<String, usize>,
}

impl MotifVocabulary {
    pub fn len(&self) -> usize {
        self.motifs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motifs.is_empty()
    }

    pub fn lookup(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn motif(&self, code: &str) -> Option<&Motif> {
        self.lookup(code).map(|i| &self.motifs[i])
    }

    pub fn motif_set(&self, molecule: usize) -> &[usize] {
        &self.molecules[molecule].motif_set
    }

    /// Number of occurrences of motif `m` in `molecule` (0 when absent).
    pub fn count_in(&self, m: usize, molecule: usize) -> usize {
        self.motifs[m].atom_maps.get(&molecule).map_or(0, Vec::len)
    }
}

/// Canonical code size cap used when building vocabularies.
pub const VOCAB_CANON_CAP: usize = 512;

/// Decomposes every molecule and merges motifs by canonical code.
pub fn build_vocabulary(dataset: &Dataset, method: Method) -> Result<MotifVocabulary, MotifError> {
    if dataset.is_empty() {
        return Err(MotifError::EmptyDataset);
    }
    struct Raw {
        occurrence: usize,
        maps: BTreeMap<usize, Vec<Vec<usize>>>,
        graph: MolecularGraph,
    }
    let mut raw: BTreeMap<String, Raw> = BTreeMap::new();
    let mut per_molecule: Vec<(Vec<(String, Vec<usize>, Vec<usize>)>, Vec<usize>)> =
        Vec::with_capacity(dataset.len());
    for (mol, graph) in dataset.graphs.iter().enumerate() {
        let d = decompose_any(graph, method);
        let mut found = Vec::with_capacity(d.motifs.len());
        let mut seen_here = BTreeSet::new();
        for piece in d.motifs {
            let (sub, host) = graph.subgraph(&piece.atoms, &piece.bonds);
            let code = canonical_code_with_cap(&sub, VOCAB_CANON_CAP)?;
            let order = canonical_order(&sub);
            let mapping: Vec<usize> = order.iter().map(|&k| host[k]).collect();
            let entry = raw.entry(code.clone()).or_insert_with(|| Raw {
                occurrence: 0,
                maps: BTreeMap::new(),
                graph: MolecularGraph::from_code(&code).expect("codes rebuild"),
            });
            if seen_here.insert(code.clone()) {
                entry.occurrence += 1;
            }
            entry.maps.entry(mol).or_default().push(mapping);
            found.push((code, piece.atoms, piece.bonds));
        }
        per_molecule.push((found, d.non_motif_bonds));
    }

    let mut ordered: Vec<(String, Raw)> = raw.into_iter().collect();
    // BTreeMap iteration is code-ascending; a stable sort keeps that for ties
    ordered.sort_by(|a, b| b.1.occurrence.cmp(&a.1.occurrence));
    let index: BTreeMap<String, usize> =
        ordered.iter().enumerate().map(|(i, (c, _))| (c.clone(), i)).collect();
    let motifs = ordered
        .into_iter()
        .map(|(code, r)| Motif { code, graph: r.graph, occurrence: r.occurrence, atom_maps: r.maps })
        .collect();
    let molecules = per_molecule
        .into_iter()
        .map(|(found, non_motif_bonds)| {
            let instances: Vec<MotifInstance> = found
                .into_iter()
                .map(|(code, atoms, bonds)| MotifInstance { motif: index[&code], atoms, bonds })
                .collect();
            let motif_set: BTreeSet<usize> = instances.iter().map(|i| i.motif).collect();
            MoleculeMotifs { instances, non_motif_bonds, motif_set: motif_set.into_iter().collect() }
        })
        .collect();
    Ok(MotifVocabulary { method, motifs, molecules, index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{canonical_code, parse_smiles};
    use alloc::vec;

    fn ds(smiles: &[&str]) -> Dataset {
        let graphs = smiles.iter().map(|s| parse_smiles(s).unwrap().with_label(Some(0))).collect();
        Dataset::new(graphs, 2).unwrap()
    }

    #[test]
    fn two_benzenes() {
        let v = build_vocabulary(&ds(&["c1ccccc1", "c1ccccc1"]), Method::Bridge).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.motifs[0].occurrence, 2);
        assert_eq!(v.motif_set(1), [0]);
    }

    #[test]
    fn benzene_and_cyclohexane() {
        let v = build_vocabulary(&ds(&["c1ccccc1", "C1CCCCC1"]), Method::Bridge).unwrap();
        assert_eq!(v.len(), 2);
        assert!(v.motifs.iter().all(|m| m.occurrence == 1));
        assert!(v.motifs[0].code < v.motifs[1].code);
    }

    #[test]
    fn occurrence_counts_molecules_not_instances() {
        // biphenyl has two ring instances but counts once
        let v = build_vocabulary(&ds(&["c1ccccc1-c1ccccc1", "CCc1ccccc1"]), Method::Bridge).unwrap();
        let ring = v.motif(&canonical_code(&parse_smiles("c1ccccc1").unwrap()).unwrap()).unwrap();
        assert_eq!(ring.occurrence, 2);
        assert_eq!(ring.atom_maps[&0].len(), 2);
        let id = v.lookup(&ring.code).unwrap();
        assert_eq!(v.count_in(id, 0), 2);
        assert_eq!(v.count_in(id, 1), 1);
        assert!(v.motifs.windows(2).all(|w| w[0].occurrence >= w[1].occurrence));
    }

    #[test]
    fn atom_maps_align_with_motif_graph() {
        let data = ds(&["OC(=O)c1ccccc1CCN", "ClC1CCCCC1"]);
        let v = build_vocabulary(&data, Method::Bridge).unwrap();
        for m in &v.motifs {
            for (&mol, maps) in &m.atom_maps {
                let host = &data.graphs[mol];
                for map in maps {
                    for (k, &h) in map.iter().enumerate() {
                        assert_eq!(m.graph.element(k), host.element(h));
                    }
                    for b in m.graph.bonds() {
                        let e = host.bond_between(map[b.a], map[b.b]).unwrap();
                        assert_eq!(host.bond(e).order, b.order);
                    }
                }
            }
        }
    }

    #[test]
    fn covers_every_atom() {
        let data = ds(&["CCc1ccccc1", "CC(C)(C)O", "C", "c1ccccc1Cc1ccncc1"]);
        for method in [Method::Bridge, Method::RingsAndBonds] {
            let v = build_vocabulary(&data, method).unwrap();
            for (mol, g) in data.graphs.iter().enumerate() {
                let mut covered = vec![false; g.atom_count()];
                for inst in &v.molecules[mol].instances {
                    for &a in &inst.atoms {
                        covered[a] = true;
                    }
                }
                for &e in &v.molecules[mol].non_motif_bonds {
                    covered[g.bond(e).a] = true;
                    covered[g.bond(e).b] = true;
                }
                assert!(covered.iter().all(|&c| c), "{method} {mol}");
            }
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        assert_eq!(
            build_vocabulary(&Dataset::new(Vec::new(), 2).unwrap(), Method::Bridge),
            Err(MotifError::EmptyDataset)
        );
    }
}
