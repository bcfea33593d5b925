use alloc::collections::BTreeMap;

use super::{ChemError, Element, MolecularGraph};

/// Maximum total bond order per element.
///
/// Stored in half-bond units so aromatic bonds (1.5) stay exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValenceTable {
    caps: BTreeMap<Element, u32>,
    /// applied to synthetic `X<n>` symbols
    synthetic_default: u32,
}

impl Default for ValenceTable {
    fn default() -> Self {
        let mut t = Self { caps: BTreeMap::new(), synthetic_default: 4 };
        for (sym, cap) in [
            ("C", 4),
            ("N", 3),
            ("O", 2),
            ("S", 6),
            ("P", 5),
            ("F", 1),
            ("Cl", 1),
            ("Br", 1),
            ("I", 1),
            ("H", 1),
            ("B", 3),
            ("Si", 4),
            ("Se", 2),
            ("Li", 1),
            ("Na", 1),
            ("K", 1),
            ("Ca", 2),
            ("Mg", 2),
        ] {
            t.set(Element::new(sym).expect("static symbol"), cap);
        }
        t
    }
}

impl ValenceTable {
    pub fn empty() -> Self {
        Self { caps: BTreeMap::new(), synthetic_default: 4 }
    }

    /// Sets an integer valence cap; zero is rejected.
    pub fn set(&mut self, element: Element, max_valence: u32) {
        assert!(max_valence > 0, "valence caps are positive");
        self.caps.insert(element, max_valence * 2);
    }

    pub fn set_synthetic_default(&mut self, max_valence: u32) {
        assert!(max_valence > 0, "valence caps are positive");
        self.synthetic_default = max_valence * 2;
    }

    /// Cap in half-bond units.
    pub fn cap_half_units(&self, element: Element) -> Result<u32, ChemError> {
        match self.caps.get(&element) {
            Some(&c) => Ok(c),
            None if element.is_synthetic() => Ok(self.synthetic_default),
            None => Err(ChemError::UnknownElement(element)),
        }
    }

    pub fn max_valence(&self, element: Element) -> Result<f64, ChemError> {
        Ok(self.cap_half_units(element)? as f64 / 2.0)
    }

    /// Remaining capacity of `atom` in half-bond units (saturating).
    pub fn free_half_units(&self, graph: &MolecularGraph, atom: usize) -> Result<u32, ChemError> {
        Ok(self
            .cap_half_units(graph.element(atom))?
            .saturating_sub(graph.bond_order_sum(atom)))
    }

    pub fn entries(&self) -> impl Iterator<Item = (Element, f64)> + '_ {
        self.caps.iter().map(|(&e, &c)| (e, c as f64 / 2.0))
    }
}

/// Valence caps, connectivity, and aromatic bonds on cycles.
///
/// Errors (rather than returning `false`) when an element has no table entry.
pub fn check_valence(graph: &MolecularGraph, table: &ValenceTable) -> Result<bool, ChemError> {
    for atom in 0..graph.atom_count() {
        if graph.bond_order_sum(atom) > table.cap_half_units(graph.element(atom))? {
            return Ok(false);
        }
    }
    if !graph.is_connected() {
        return Ok(false);
    }
    let has_aromatic = graph.bonds().iter().any(|b| b.order == super::BondOrder::Aromatic);
    if has_aromatic {
        let bridges = graph.bridges();
        if bridges
            .iter()
            .any(|&e| graph.bond(e).order == super::BondOrder::Aromatic)
        {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{el, parse_smiles, BondOrder};
    use alloc::vec;

    fn star(center: &str, arms: usize) -> MolecularGraph {
        let mut atoms = vec![el(center)];
        atoms.extend(core::iter::repeat_n(el("C"), arms));
        MolecularGraph::from_parts(atoms, (1..=arms).map(|i| (0, i, BondOrder::Single))).unwrap()
    }

    #[test]
    fn carbon_cap() {
        let t = ValenceTable::default();
        assert!(check_valence(&star("C", 4), &t).unwrap());
        assert!(!check_valence(&star("C", 5), &t).unwrap());
    }

    #[test]
    fn disconnected_is_invalid() {
        let g = MolecularGraph::from_parts(vec![el("C"), el("C")], []).unwrap();
        assert!(!check_valence(&g, &ValenceTable::default()).unwrap());
        assert!(!check_valence(&MolecularGraph::new(), &ValenceTable::default()).unwrap());
    }

    #[test]
    fn unknown_element_is_an_error() {
        let g = MolecularGraph::from_parts(vec![el("Xe")], []).unwrap();
        assert_eq!(
            check_valence(&g, &ValenceTable::default()),
            Err(ChemError::UnknownElement(el("Xe")))
        );
        let synth = MolecularGraph::from_parts(vec![Element::synthetic(7)], []).unwrap();
        assert!(check_valence(&synth, &ValenceTable::default()).unwrap());
    }

    #[test]
    fn aromatic_counts_one_and_a_half() {
        let t = ValenceTable::default();
        assert!(check_valence(&parse_smiles("c1ccccc1").unwrap(), &t).unwrap());
        // three aromatic bonds on one carbon: 4.5 > 4
        let over = parse_smiles("c12ccc3cc1c23").unwrap();
        assert!(!check_valence(&over, &t).unwrap());
        // fusion atoms carry three aromatic bonds; Kekulé form is fine
        assert!(!check_valence(&parse_smiles("c1ccc2ccccc2c1").unwrap(), &t).unwrap());
        assert!(check_valence(&parse_smiles("C1=CC=C2C=CC=CC2=C1").unwrap(), &t).unwrap());
        // aromatic bond outside any ring
        let chain = parse_smiles("C:C").unwrap();
        assert!(!check_valence(&chain, &t).unwrap());
    }

    #[test]
    fn invariant_under_reordering() {
        let t = ValenceTable::default();
        let g = parse_smiles("CC(=O)Nc1ccccc1").unwrap();
        let n = g.atom_count();
        let perm: alloc::vec::Vec<usize> = (0..n).rev().collect();
        assert_eq!(check_valence(&g, &t), check_valence(&g.permuted(&perm), &t));
    }
}
