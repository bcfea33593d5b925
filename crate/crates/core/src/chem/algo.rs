use alloc::vec;
use alloc::vec::Vec;

use super::MolecularGraph;

impl MolecularGraph {
    /// Indices of bonds whose removal disconnects their component, ascending.
    ///
    /// Iterative low-link search, so deep chains do not recurse.
    pub fn bridges(&self) -> Vec<usize> {
        let n = self.atom_count();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut out = Vec::new();
        let mut timer = 0;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // (vertex, bond used to enter it, next neighbour slot)
            let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(&mut (v, via, ref mut slot)) = stack.last_mut() {
                if let Some(&(w, e)) = self.neighbors(v).get(*slot) {
                    *slot += 1;
                    if e == via {
                        continue;
                    }
                    if disc[w] == usize::MAX {
                        disc[w] = timer;
                        low[w] = timer;
                        timer += 1;
                        stack.push((w, e, 0));
                    } else {
                        low[v] = low[v].min(disc[w]);
                    }
                } else {
                    stack.pop();
                    if let Some(&(parent, _, _)) = stack.last() {
                        low[parent] = low[parent].min(low[v]);
                        if low[v] > disc[parent] {
                            out.push(via);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use crate::chem::parse_smiles;

    #[test]
    fn ring_has_no_bridges() {
        assert!(parse_smiles("C1CCCCC1").unwrap().bridges().is_empty());
    }

    #[test]
    fn chain_is_all_bridges() {
        assert_eq!(parse_smiles("CCCC").unwrap().bridges(), [0, 1, 2]);
    }

    #[test]
    fn bridge_matches_removal_oracle() {
        for s in ["CCc1ccccc1", "C1CC1CC1CC1", "c1ccc2ccccc2c1CCO", "CC(C)(C)C1CCC(CC1)N"] {
            let g = parse_smiles(s).unwrap();
            let comps = g.components().len();
            let oracle: alloc::vec::Vec<usize> = (0..g.bond_count())
                .filter(|&e| {
                    let bonds = (0..g.bond_count()).filter(|&f| f != e).collect::<alloc::vec::Vec<_>>();
                    let atoms: alloc::vec::Vec<usize> = (0..g.atom_count()).collect();
                    g.subgraph(&atoms, &bonds).0.components().len() > comps
                })
                .collect();
            assert_eq!(g.bridges(), oracle, "{s}");
        }
    }
}
