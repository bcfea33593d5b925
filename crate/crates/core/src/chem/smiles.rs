//! SMILES subset: organic-subset and bracket atoms, `- = # :` bonds,
//! branches, ring closures (`1`..`9`, `%nn`), lowercase aromatics and `.`.
//!
//! Bracket hydrogen counts and charges are accepted and dropped, since the
//! graph model carries heavy atoms only. Stereo marks and isotopes are rejected.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use super::{check_valence, BondOrder, ChemError, Element, MolecularGraph, SmilesErrorKind, ValenceTable};

const ORGANIC: [&str; 10] = ["Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I"];
const AROMATIC_ORGANIC: [char; 6] = ['b', 'c', 'n', 'o', 'p', 's'];
const AROMATIC_BRACKET: [&str; 8] = ["se", "as", "te", "b", "c", "n", "o", "p"];

#[rustfmt::skip]
const PERIODIC: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh",
    "Fl", "Mc", "Lv", "Ts", "Og",
];

fn err(pos: usize, kind: SmilesErrorKind) -> ChemError {
    ChemError::Smiles { pos, kind }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    graph: MolecularGraph,
    aromatic: Vec<bool>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn rest_starts_with(&self, s: &str) -> bool {
        self.src[self.pos..].starts_with(s.as_bytes())
    }

    /// Returns (element, written-aromatic) or None if no atom starts here.
    fn atom(&mut self) -> Result<Option<(Element, bool)>, ChemError> {
        let Some(c) = self.peek() else { return Ok(None) };
        if c == b'[' {
            return self.bracket_atom().map(Some);
        }
        for sym in ORGANIC {
            if self.rest_starts_with(sym) {
                self.pos += sym.len();
                return Ok(Some((Element::new(sym).expect("static"), false)));
            }
        }
        if AROMATIC_ORGANIC.contains(&(c as char)) {
            self.pos += 1;
            let upper = (c as char).to_ascii_uppercase();
            let mut buf = [0u8; 4];
            return Ok(Some((Element::new(upper.encode_utf8(&mut buf)).expect("static"), true)));
        }
        Ok(None)
    }

    fn bracket_atom(&mut self) -> Result<(Element, bool), ChemError> {
        let start = self.pos;
        self.pos += 1;
        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            return Err(err(self.pos, SmilesErrorKind::Unsupported(self.peek().unwrap() as char)));
        }
        let mut aromatic = false;
        let mut symbol: Option<String> = None;
        for sym in AROMATIC_BRACKET {
            if self.rest_starts_with(sym) {
                self.pos += sym.len();
                let mut s = String::from(&sym[..1]).to_uppercase();
                s.push_str(&sym[1..]);
                symbol = Some(s);
                aromatic = true;
                break;
            }
        }
        if symbol.is_none() {
            let sym_start = self.pos;
            if !self.peek().is_some_and(|c| c.is_ascii_uppercase()) {
                return Err(self.unknown_bracket(start));
            }
            self.pos += 1;
            while self.peek().is_some_and(|c| c.is_ascii_lowercase()) {
                self.pos += 1;
            }
            let mut s = String::from(core::str::from_utf8(&self.src[sym_start..self.pos]).unwrap());
            // synthetic `X<n>` labels round-trip through brackets
            if s == "X" {
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    s.push(self.peek().unwrap() as char);
                    self.pos += 1;
                }
                if s.len() == 1 {
                    return Err(self.unknown_bracket(start));
                }
            } else if !PERIODIC.contains(&s.as_str()) {
                // retry as a one-letter symbol followed by something else, e.g. `[Co]` vs `[CH]`
                self.pos = sym_start + 1;
                s.truncate(1);
                if !PERIODIC.contains(&s.as_str()) {
                    return Err(self.unknown_bracket(start));
                }
            }
            symbol = Some(s);
        }
        if self.peek() == Some(b'H') {
            self.pos += 1;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            while self.peek() == Some(c) || self.peek().is_some_and(|d| d.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        match self.peek() {
            Some(b']') => self.pos += 1,
            Some(b'@') => return Err(err(self.pos, SmilesErrorKind::Unsupported('@'))),
            Some(_) => return Err(self.unknown_bracket(start)),
            None => return Err(err(self.pos, SmilesErrorKind::UnexpectedEnd)),
        }
        let symbol = symbol.unwrap();
        let element = Element::new(&symbol).map_err(|_| self.unknown_bracket(start))?;
        Ok((element, aromatic))
    }

    fn unknown_bracket(&self, start: usize) -> ChemError {
        let end = self.src[start..]
            .iter()
            .position(|&c| c == b']')
            .map_or(self.src.len(), |i| start + i + 1);
        let text = String::from_utf8_lossy_ascii(&self.src[start..end]);
        err(start, SmilesErrorKind::UnknownSymbol(text))
    }

    fn bond_symbol(&mut self) -> Option<BondOrder> {
        let order = match self.peek()? {
            b'-' => BondOrder::Single,
            b'=' => BondOrder::Double,
            b'#' => BondOrder::Triple,
            b':' => BondOrder::Aromatic,
            _ => return None,
        };
        self.pos += 1;
        Some(order)
    }

    fn implicit(&self, a: usize, b: usize) -> BondOrder {
        if self.aromatic[a] && self.aromatic[b] {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn connect(&mut self, a: usize, b: usize, order: BondOrder) -> Result<(), ChemError> {
        let pos = self.pos;
        self.graph.add_bond(a, b, order).map(|_| ()).map_err(|e| match e {
            ChemError::DuplicateBond(..) | ChemError::SelfLoop(_) => {
                err(pos, SmilesErrorKind::UnknownSymbol("repeated bond".into()))
            }
            other => other,
        })
    }

    fn run(mut self) -> Result<MolecularGraph, ChemError> {
        let mut branch_stack: Vec<(usize, usize)> = Vec::new(); // (atom, paren position)
        let mut prev: Option<usize> = None;
        let mut pending: Option<(BondOrder, usize)> = None;
        let mut rings: BTreeMap<u32, (usize, Option<BondOrder>, usize)> = BTreeMap::new();

        while let Some(c) = self.peek() {
            let here = self.pos;
            match c {
                b'(' => {
                    let Some(p) = prev else {
                        return Err(err(here, SmilesErrorKind::UnmatchedParenthesis));
                    };
                    if pending.is_some() {
                        return Err(err(here, SmilesErrorKind::BondWithoutAtom));
                    }
                    branch_stack.push((p, here));
                    self.pos += 1;
                }
                b')' => {
                    let Some((p, _)) = branch_stack.pop() else {
                        return Err(err(here, SmilesErrorKind::UnmatchedParenthesis));
                    };
                    if pending.is_some() {
                        return Err(err(here, SmilesErrorKind::BondWithoutAtom));
                    }
                    prev = Some(p);
                    self.pos += 1;
                }
                b'.' => {
                    if pending.is_some() || !branch_stack.is_empty() {
                        return Err(err(here, SmilesErrorKind::BondWithoutAtom));
                    }
                    prev = None;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if prev.is_none() || pending.is_some() {
                        return Err(err(here, SmilesErrorKind::BondWithoutAtom));
                    }
                    let order = self.bond_symbol().unwrap();
                    pending = Some((order, here));
                }
                b'0'..=b'9' | b'%' => {
                    let Some(p) = prev else {
                        return Err(err(here, SmilesErrorKind::BondWithoutAtom));
                    };
                    let digit = if c == b'%' {
                        let d = self.src.get(self.pos + 1..self.pos + 3);
                        match d {
                            Some(d) if d.iter().all(u8::is_ascii_digit) => {
                                self.pos += 3;
                                ((d[0] - b'0') * 10 + (d[1] - b'0')) as u32
                            }
                            _ => return Err(err(here, SmilesErrorKind::Unsupported('%'))),
                        }
                    } else {
                        self.pos += 1;
                        (c - b'0') as u32
                    };
                    let order = pending.take().map(|(o, _)| o);
                    match rings.remove(&digit) {
                        Some((open, open_order, _)) => {
                            let order = order.or(open_order).unwrap_or_else(|| self.implicit(open, p));
                            self.connect(open, p, order)?;
                        }
                        None => {
                            rings.insert(digit, (p, order, here));
                        }
                    }
                }
                _ => {
                    let Some((element, aromatic)) = self.atom()? else {
                        let ch = self.src[here] as char;
                        return Err(if ch.is_ascii_alphabetic() || ch == '*' {
                            err(here, SmilesErrorKind::UnknownSymbol(ch.into()))
                        } else {
                            err(here, SmilesErrorKind::Unsupported(ch))
                        });
                    };
                    let idx = self.graph.add_atom(element);
                    self.aromatic.push(aromatic);
                    if let Some(p) = prev {
                        let order = pending.take().map(|(o, _)| o).unwrap_or_else(|| self.implicit(p, idx));
                        self.connect(p, idx, order)?;
                    }
                    prev = Some(idx);
                }
            }
        }
        if let Some((_, pos)) = pending {
            return Err(err(pos, SmilesErrorKind::BondWithoutAtom));
        }
        if let Some(&(_, pos)) = branch_stack.last() {
            return Err(err(pos, SmilesErrorKind::UnmatchedParenthesis));
        }
        if let Some((&digit, &(_, _, pos))) = rings.iter().next() {
            return Err(err(pos, SmilesErrorKind::DanglingRingClosure(digit)));
        }
        Ok(self.graph)
    }
}

trait LossyAscii {
    fn from_utf8_lossy_ascii(bytes: &[u8]) -> String;
}

impl LossyAscii for String {
    fn from_utf8_lossy_ascii(bytes: &[u8]) -> String {
        bytes.iter().map(|&b| if b.is_ascii() { b as char } else { '?' }).collect()
    }
}

pub fn parse_smiles(text: &str) -> Result<MolecularGraph, ChemError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(err(0, SmilesErrorKind::UnexpectedEnd));
    }
    Parser { src: text.as_bytes(), pos: 0, graph: MolecularGraph::new(), aromatic: Vec::new() }.run()
}

/// Writes SMILES for a graph that passes [`check_valence`].
pub fn write_smiles(graph: &MolecularGraph, table: &ValenceTable) -> Result<String, ChemError> {
    if !check_valence(graph, table)? {
        return Err(ChemError::InvalidForSmiles);
    }
    Ok(write_smiles_unchecked(graph))
}

/// How an atom is spelled in the output.
fn spelling(graph: &MolecularGraph, atom: usize) -> (String, bool) {
    let el = graph.element(atom);
    let sym = el.as_str();
    let aromatic_bond = graph
        .neighbors(atom)
        .iter()
        .any(|&(_, e)| graph.bond(e).order == BondOrder::Aromatic);
    if aromatic_bond {
        let lower = sym.to_ascii_lowercase();
        if AROMATIC_ORGANIC.iter().any(|&c| lower.len() == 1 && lower.starts_with(c)) {
            return (lower, true);
        }
        if AROMATIC_BRACKET.contains(&lower.as_str()) {
            return (alloc::format!("[{lower}]"), true);
        }
    }
    if ORGANIC.contains(&sym) {
        (sym.into(), false)
    } else {
        (alloc::format!("[{sym}]"), false)
    }
}

/// Depth-first SMILES writer without the validity precondition.
///
/// Disconnected graphs are written as `.`-separated components.
pub fn write_smiles_unchecked(graph: &MolecularGraph) -> String {
    let n = graph.atom_count();
    let spell: Vec<(String, bool)> = (0..n).map(|a| spelling(graph, a)).collect();
    let bond_text = |e: usize| -> &'static str {
        let b = graph.bond(e);
        let both_lower = spell[b.a].1 && spell[b.b].1;
        match (b.order, both_lower) {
            (BondOrder::Aromatic, true) | (BondOrder::Single, false) => "",
            (BondOrder::Single, true) => "-",
            (BondOrder::Double, _) => "=",
            (BondOrder::Triple, _) => "#",
            (BondOrder::Aromatic, false) => ":",
        }
    };

    // Pass 1: DFS tree; non-tree bonds become ring closures.
    let mut visited = vec![false; n];
    let mut tree_bond = vec![false; graph.bond_count()];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);
    let mut roots = Vec::new();
    for root in 0..n {
        if visited[root] {
            continue;
        }
        roots.push(root);
        visited[root] = true;
        // (atom, next neighbour slot)
        let mut frames: Vec<(usize, usize)> = vec![(root, 0)];
        order.push(root);
        while let Some(&mut (v, ref mut slot)) = frames.last_mut() {
            if let Some(&(w, e)) = graph.neighbors(v).get(*slot) {
                *slot += 1;
                if !visited[w] {
                    visited[w] = true;
                    tree_bond[e] = true;
                    children[v].push((w, e));
                    order.push(w);
                    frames.push((w, 0));
                }
            } else {
                frames.pop();
            }
        }
    }
    let mut preorder_index = vec![0usize; n];
    for (i, &a) in order.iter().enumerate() {
        preorder_index[a] = i;
    }
    // ring closures: at each atom, list of (bond, other end); opening happens at the earlier atom
    let mut closures: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for e in 0..graph.bond_count() {
        if tree_bond[e] {
            continue;
        }
        let b = graph.bond(e);
        closures[b.a].push((e, b.b));
        closures[b.b].push((e, b.a));
    }
    for list in &mut closures {
        list.sort_by_key(|&(e, other)| (preorder_index[other], e));
    }

    // Pass 2: emit.
    let mut out = String::new();
    let mut ring_digit: BTreeMap<usize, u32> = BTreeMap::new(); // bond -> digit
    let mut in_use: Vec<bool> = vec![false; 100];
    for (ci, &root) in roots.iter().enumerate() {
        if ci > 0 {
            out.push('.');
        }
        enum Step {
            Enter(usize, Option<usize>),
            Open,
            Close,
        }
        let mut work = vec![Step::Enter(root, None)];
        while let Some(step) = work.pop() {
            match step {
                Step::Close => out.push(')'),
                Step::Enter(v, via) => {
                    if let Some(e) = via {
                        out.push_str(bond_text(e));
                    }
                    out.push_str(&spell[v].0);
                    for &(e, _other) in &closures[v] {
                        if let Some(d) = ring_digit.remove(&e) {
                            // closing side: bond symbol written on the opening side only
                            in_use[d as usize] = false;
                            push_digit(&mut out, d);
                        } else {
                            let d = (1..100).find(|&d| !in_use[d as usize]).expect("ring digits") as u32;
                            in_use[d as usize] = true;
                            ring_digit.insert(e, d);
                            out.push_str(bond_text(e));
                            push_digit(&mut out, d);
                        }
                    }
                    let kids = &children[v];
                    // push in reverse so the first child is emitted first; all but the last branch
                    for (i, &(w, e)) in kids.iter().enumerate().rev() {
                        let last = i + 1 == kids.len();
                        if last {
                            work.push(Step::Enter(w, Some(e)));
                        } else {
                            work.push(Step::Close);
                            work.push(Step::Enter(w, Some(e)));
                            work.push(Step::Open);
                        }
                    }
                }
                Step::Open => out.push('('),
            }
        }
    }
    out
}

fn push_digit(out: &mut String, d: u32) {
    if d < 10 {
        out.push(char::from_digit(d, 10).unwrap());
    } else {
        let _ = write!(out, "%{d:02}");
    }
}
