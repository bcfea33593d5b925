//! Molecular graphs, datasets, valence rules, SMILES and canonical codes.

mod algo;
mod canon;
mod smiles;
mod valence;

pub(crate) use canon::canonical_order;
pub use canon::{canonical_code, canonical_code_with_cap, DEFAULT_CANON_CAP};
pub use smiles::{parse_smiles, write_smiles, write_smiles_unchecked};
pub use valence::{check_valence, ValenceTable};

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChemError {
    #[error("element symbol `{0}` is empty, too long or not ASCII alphanumeric")]
    BadSymbol(String),
    #[error("bond ({0}, {1}) references an atom outside the graph")]
    AtomOutOfRange(usize, usize),
    #[error("self-loop on atom {0}")]
    SelfLoop(usize),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("unknown bond order `{0}`")]
    BadBondOrder(String),
    #[error("element `{0}` has no valence entry")]
    UnknownElement(Element),
    #[error("graph has {size} atoms, canonical code cap is {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("graph is not chemically valid; cannot write SMILES")]
    InvalidForSmiles,
    #[error("SMILES parse error at byte {pos}: {kind}")]
    Smiles { pos: usize, kind: SmilesErrorKind },
    #[error("malformed canonical code: {0}")]
    BadCode(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SmilesErrorKind {
    UnmatchedParenthesis,
    DanglingRingClosure(u32),
    UnknownSymbol(String),
    UnexpectedEnd,
    BondWithoutAtom,
    Unsupported(char),
}

impl fmt::Display for SmilesErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnmatchedParenthesis => f.write_str("unmatched parenthesis"),
            Self::DanglingRingClosure(d) => write!(f, "ring closure {d} never closed"),
            Self::UnknownSymbol(s) => write!(f, "unknown symbol `{s}`"),
            Self::UnexpectedEnd => f.write_str("unexpected end of input"),
            Self::BondWithoutAtom => f.write_str("bond symbol not followed by an atom"),
            Self::Unsupported(c) => write!(f, "unsupported character `{c}`"),
        }
    }
}

const SYMBOL_CAP: usize = 8;

/// An element symbol stored inline (at most eight ASCII alphanumerics).
///
/// Synthetic symbols such as `X7` stand in for unmapped integer labels.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Element {
    len: u8,
    bytes: [u8; SYMBOL_CAP],
}

impl Element {
    pub fn new(symbol: &str) -> Result<Self, ChemError> {
        let raw = symbol.as_bytes();
        if raw.is_empty()
            || raw.len() > SYMBOL_CAP
            || !raw.iter().all(u8::is_ascii_alphanumeric)
            || !raw[0].is_ascii_alphabetic()
        {
            return Err(ChemError::BadSymbol(symbol.into()));
        }
        let mut bytes = [0u8; SYMBOL_CAP];
        bytes[..raw.len()].copy_from_slice(raw);
        Ok(Self { len: raw.len() as u8, bytes })
    }

    /// Symbol for an integer label with no declared mapping.
    pub fn synthetic(label: u32) -> Self {
        let mut s = String::from("X");
        s.push_str(&alloc::format!("{label}"));
        Self::new(&s).expect("synthetic symbols fit")
    }

    pub fn as_str(&self) -> &str {
        core::str::from_utf8(&self.bytes[..self.len as usize]).expect("ascii")
    }

    pub fn is_synthetic(&self) -> bool {
        let s = self.as_str();
        s.len() > 1 && s.starts_with('X') && s[1..].bytes().all(|b| b.is_ascii_digit())
    }
}

impl fmt::Debug for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Element {
    type Err = ChemError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub const ALL: [BondOrder; 4] = [Self::Single, Self::Double, Self::Triple, Self::Aromatic];

    /// Contribution to valence in half-bond units (aromatic counts 1.5).
    pub fn half_units(self) -> u32 {
        match self {
            Self::Single => 2,
            Self::Double => 4,
            Self::Triple => 6,
            Self::Aromatic => 3,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code_char(self) -> char {
        match self {
            Self::Single => '1',
            Self::Double => '2',
            Self::Triple => '3',
            Self::Aromatic => 'a',
        }
    }

    pub fn from_code_char(c: char) -> Option<Self> {
        Some(match c {
            '1' => Self::Single,
            '2' => Self::Double,
            '3' => Self::Triple,
            'a' => Self::Aromatic,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Single => "single",
            Self::Double => "double",
            Self::Triple => "triple",
            Self::Aromatic => "aromatic",
        }
    }
}

impl FromStr for BondOrder {
    type Err = ChemError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "single" | "1" | "-" => Self::Single,
            "double" | "2" | "=" => Self::Double,
            "triple" | "3" | "#" => Self::Triple,
            "aromatic" | "a" | ":" => Self::Aromatic,
            _ => return Err(ChemError::BadBondOrder(s.into())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }

    pub fn touches(&self, atom: usize) -> bool {
        self.a == atom || self.b == atom
    }
}

/// Heavy-atom molecular graph; hydrogens are implicit.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MolecularGraph {
    atoms: Vec<Element>,
    bonds: Vec<Bond>,
    /// neighbour lists of (atom, bond index), kept sorted by atom
    adjacency: Vec<Vec<(usize, usize)>>,
    pub label: Option<usize>,
}

impl MolecularGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph, rejecting out-of-range indices, self-loops and duplicates.
    pub fn from_parts(
        atoms: Vec<Element>,
        bonds: impl IntoIterator<Item = (usize, usize, BondOrder)>,
    ) -> Result<Self, ChemError> {
        let mut g = Self {
            adjacency: vec![Vec::new(); atoms.len()],
            atoms,
            bonds: Vec::new(),
            label: None,
        };
        for (a, b, order) in bonds {
            g.add_bond(a, b, order)?;
        }
        Ok(g)
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn add_atom(&mut self, element: Element) -> usize {
        self.atoms.push(element);
        self.adjacency.push(Vec::new());
        self.atoms.len() - 1
    }

    pub fn add_bond(&mut self, a: usize, b: usize, order: BondOrder) -> Result<usize, ChemError> {
        let n = self.atoms.len();
        if a >= n || b >= n {
            return Err(ChemError::AtomOutOfRange(a, b));
        }
        if a == b {
            return Err(ChemError::SelfLoop(a));
        }
        if self.bond_between(a, b).is_some() {
            return Err(ChemError::DuplicateBond(a, b));
        }
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        let idx = self.bonds.len();
        self.bonds.push(Bond { a, b, order });
        insert_sorted(&mut self.adjacency[a], (b, idx));
        insert_sorted(&mut self.adjacency[b], (a, idx));
        Ok(idx)
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn atoms(&self) -> &[Element] {
        &self.atoms
    }

    pub fn element(&self, atom: usize) -> Element {
        self.atoms[atom]
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn bond(&self, idx: usize) -> Bond {
        self.bonds[idx]
    }

    /// `(neighbour, bond index)` pairs sorted by neighbour.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        let list = self.adjacency.get(a)?;
        list.binary_search_by_key(&b, |&(n, _)| n).ok().map(|i| list[i].1)
    }

    /// Sum of incident bond orders in half-bond units.
    pub fn bond_order_sum(&self, atom: usize) -> u32 {
        self.adjacency[atom]
            .iter()
            .map(|&(_, e)| self.bonds[e].order.half_units())
            .sum()
    }

    pub fn is_connected(&self) -> bool {
        if self.atoms.is_empty() {
            return false;
        }
        self.component_of(0).len() == self.atoms.len()
    }

    /// Atoms reachable from `start`, in BFS order.
    pub fn component_of(&self, start: usize) -> Vec<usize> {
        let mut seen = vec![false; self.atoms.len()];
        let mut queue = alloc::collections::VecDeque::new();
        let mut out = Vec::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            out.push(v);
            for &(w, _) in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        out
    }

    /// Connected components, each a sorted atom list, ordered by smallest atom.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.atoms.len()];
        let mut out = Vec::new();
        for s in 0..self.atoms.len() {
            if seen[s] {
                continue;
            }
            let mut comp = self.component_of(s);
            for &v in &comp {
                seen[v] = true;
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Subgraph induced by `atoms` restricted to the listed bonds.
    ///
    /// Atoms keep the order given; the second return maps new index → host index.
    pub fn subgraph(&self, atoms: &[usize], bonds: &[usize]) -> (MolecularGraph, Vec<usize>) {
        let mut index = alloc::collections::BTreeMap::new();
        for (i, &a) in atoms.iter().enumerate() {
            index.insert(a, i);
        }
        let elements = atoms.iter().map(|&a| self.atoms[a]).collect();
        let mut g = MolecularGraph::from_parts(elements, core::iter::empty()).expect("no bonds");
        for &e in bonds {
            let bond = self.bonds[e];
            g.add_bond(index[&bond.a], index[&bond.b], bond.order)
                .expect("host bonds are well formed");
        }
        (g, atoms.to_vec())
    }

    /// Subgraph with every host bond between the listed atoms.
    pub fn induced_subgraph(&self, atoms: &[usize]) -> MolecularGraph {
        let set: BTreeSet<usize> = atoms.iter().copied().collect();
        let bonds: Vec<usize> = (0..self.bonds.len())
            .filter(|&e| set.contains(&self.bonds[e].a) && set.contains(&self.bonds[e].b))
            .collect();
        self.subgraph(atoms, &bonds).0
    }

    /// Copy with atoms reordered so that new atom `i` is old atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> MolecularGraph {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let atoms = perm.iter().map(|&old| self.atoms[old]).collect();
        let bonds = self
            .bonds
            .iter()
            .map(|b| (inverse[b.a], inverse[b.b], b.order));
        MolecularGraph::from_parts(atoms, bonds)
            .expect("permutation preserves validity")
            .with_label(self.label)
    }

    /// Dense 0/1 adjacency, row-major.
    pub fn adjacency_matrix(&self) -> Vec<Vec<u8>> {
        let n = self.atoms.len();
        let mut a = vec![vec![0u8; n]; n];
        for b in &self.bonds {
            a[b.a][b.b] = 1;
            a[b.b][b.a] = 1;
        }
        a
    }

    /// One-hot atom features over `alphabet`; `None` for an unknown element.
    pub fn node_features(&self, alphabet: &[Element]) -> Option<Vec<Vec<f64>>> {
        self.atoms
            .iter()
            .map(|el| {
                let idx = alphabet.iter().position(|a| a == el)?;
                let mut row = vec![0.0; alphabet.len()];
                row[idx] = 1.0;
                Some(row)
            })
            .collect()
    }

    /// One-hot bond features over the four bond orders.
    pub fn bond_features(&self) -> Vec<[f64; 4]> {
        self.bonds
            .iter()
            .map(|b| {
                let mut row = [0.0; 4];
                row[b.order.index()] = 1.0;
                row
            })
            .collect()
    }
}

fn insert_sorted(list: &mut Vec<(usize, usize)>, item: (usize, usize)) {
    let pos = list.partition_point(|x| x.0 < item.0);
    list.insert(pos, item);
}

/// A labelled collection of molecules sharing one element alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graphs: Vec<MolecularGraph>,
    pub num_classes: usize,
    /// sorted, deduplicated
    pub elements: Vec<Element>,
    pub bond_orders: Vec<BondOrder>,
}

impl Dataset {
    /// Derives alphabets from the graphs and checks every label.
    pub fn new(graphs: Vec<MolecularGraph>, num_classes: usize) -> Result<Self, ChemError> {
        let mut elements = BTreeSet::new();
        let mut orders = BTreeSet::new();
        for g in &graphs {
            elements.extend(g.atoms().iter().copied());
            orders.extend(g.bonds().iter().map(|b| b.order));
            if let Some(label) = g.label {
                if label >= num_classes {
                    return Err(ChemError::LabelOutOfRange { label, classes: num_classes });
                }
            }
        }
        Ok(Self {
            graphs,
            num_classes,
            elements: elements.into_iter().collect(),
            bond_orders: orders.into_iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn mean_atom_count(&self) -> f64 {
        if self.graphs.is_empty() {
            return 0.0;
        }
        let total: usize = self.graphs.iter().map(|g| g.atom_count()).sum();
        total as f64 / self.graphs.len() as f64
    }

    /// First `n` graphs, alphabets recomputed.
    pub fn slice(&self, n: usize) -> Dataset {
        let graphs = self.graphs.iter().take(n).cloned().collect();
        Dataset::new(graphs, self.num_classes).expect("labels already checked")
    }
}

#[cfg(test)]
pub(crate) fn el(s: &str) -> Element {
    Element::new(s).unwrap()
}
