//! TU graph-benchmark text format: `<NAME>_A.txt`, `_graph_indicator.txt`,
//! `_graph_labels.txt`, `_node_labels.txt` and optionally `_edge_labels.txt`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mage_core::chem::{BondOrder, ChemError, Dataset, Element, MolecularGraph};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TuError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}:{line}: edge ({i}, {j}) has no reverse entry with the same label")]
    Asymmetric { path: PathBuf, line: usize, i: usize, j: usize },
    #[error("{path}: expected {expected} lines, found {found}")]
    LineCount { path: PathBuf, expected: usize, found: usize },
    #[error("{0}")]
    Chem(#[from] ChemError),
}

/// How integer node labels become elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeMap {
    /// the Mutagenicity alphabet
    #[default]
    Mutagenicity,
    /// every label `n` becomes the symbol `X<n>`
    Synthetic,
}

const MUTAGENICITY: [&str; 14] = ["C", "O", "Cl", "H", "N", "F", "Br", "S", "P", "I", "Na", "K", "Li", "Ca"];
const EDGE_ORDERS: [BondOrder; 4] = [BondOrder::Single, BondOrder::Double, BondOrder::Triple, BondOrder::Aromatic];

impl NodeMap {
    pub fn element(self, label: u32) -> Element {
        match self {
            NodeMap::Mutagenicity => match MUTAGENICITY.get(label as usize) {
                Some(s) => Element::new(s).expect("static symbol"),
                None => Element::synthetic(label),
            },
            NodeMap::Synthetic => Element::synthetic(label),
        }
    }

    pub fn label(self, element: Element) -> Option<u32> {
        if element.is_synthetic() {
            return element.as_str()[1..].parse().ok();
        }
        match self {
            NodeMap::Mutagenicity => MUTAGENICITY.iter().position(|s| *s == element.as_str()).map(|p| p as u32),
            NodeMap::Synthetic => None,
        }
    }
}

impl FromStr for NodeMap {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mutagenicity" => Ok(NodeMap::Mutagenicity),
            "synthetic" => Ok(NodeMap::Synthetic),
            _ => Err(format!("unknown node map `{s}` (expected mutagenicity or synthetic)")),
        }
    }
}

/// A parsed TU dataset; class `k` is the `k`-th smallest raw graph label.
#[derive(Debug, Clone, PartialEq)]
pub struct TuDataset {
    pub dataset: Dataset,
    pub raw_labels: Vec<i64>,
}

fn file(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

fn read(path: &Path) -> Result<String, TuError> {
    fs::read_to_string(path).map_err(|source| TuError::Io { path: path.into(), source })
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty())
}

fn ints<T: FromStr>(path: &Path, text: &str) -> Result<Vec<(usize, T)>, TuError> {
    lines(text)
        .map(|(line, l)| {
            let first = l.split(',').next().unwrap_or("").trim();
            first
                .parse()
                .map(|v| (line, v))
                .map_err(|_| TuError::Parse { path: path.into(), line, msg: format!("expected an integer, found `{l}`") })
        })
        .collect()
}

pub fn read_tu(dir: &Path, name: &str, map: NodeMap) -> Result<TuDataset, TuError> {
    let a_path = file(dir, name, "A");
    let gi_path = file(dir, name, "graph_indicator");
    let gl_path = file(dir, name, "graph_labels");
    let nl_path = file(dir, name, "node_labels");
    let el_path = file(dir, name, "edge_labels");

    let indicator: Vec<(usize, usize)> = ints(&gi_path, &read(&gi_path)?)?;
    let graph_labels: Vec<(usize, i64)> = ints(&gl_path, &read(&gl_path)?)?;
    let node_labels: Vec<(usize, u32)> = ints(&nl_path, &read(&nl_path)?)?;
    if node_labels.len() != indicator.len() {
        return Err(TuError::LineCount { path: nl_path, expected: indicator.len(), found: node_labels.len() });
    }
    let num_graphs = graph_labels.len();

    // graph ids are 1-based and non-decreasing over node ids
    let mut graph_of = Vec::with_capacity(indicator.len());
    let mut local = Vec::with_capacity(indicator.len());
    let mut sizes = vec![0usize; num_graphs];
    let mut last = 0;
    for &(line, g) in &indicator {
        if g == 0 || g > num_graphs || g < last {
            return Err(TuError::Parse {
                path: gi_path,
                line,
                msg: format!("graph id {g} out of order or outside 1..={num_graphs}"),
            });
        }
        last = g;
        graph_of.push(g - 1);
        local.push(sizes[g - 1]);
        sizes[g - 1] += 1;
    }

    let a_text = read(&a_path)?;
    let mut arcs: Vec<(usize, usize, usize)> = Vec::new();
    for (line, l) in lines(&a_text) {
        let parts: Vec<&str> = l.split(',').map(str::trim).collect();
        let parsed = match parts.as_slice() {
            [i, j] => i.parse::<usize>().ok().zip(j.parse::<usize>().ok()),
            _ => None,
        };
        let Some((i, j)) = parsed else {
            return Err(TuError::Parse { path: a_path, line, msg: format!("expected `i, j`, found `{l}`") });
        };
        let n = indicator.len();
        if i == 0 || j == 0 || i > n || j > n {
            return Err(TuError::Parse { path: a_path, line, msg: format!("node id outside 1..={n}") });
        }
        if i == j {
            return Err(TuError::Parse { path: a_path, line, msg: format!("self-loop on node {i}") });
        }
        if graph_of[i - 1] != graph_of[j - 1] {
            return Err(TuError::Parse { path: a_path, line, msg: format!("edge ({i}, {j}) joins two graphs") });
        }
        arcs.push((line, i - 1, j - 1));
    }

    let edge_labels: Option<Vec<(usize, usize)>> = if el_path.exists() { Some(ints(&el_path, &read(&el_path)?)?) } else { None };
    if let Some(el) = &edge_labels {
        if el.len() != arcs.len() {
            return Err(TuError::LineCount { path: el_path, expected: arcs.len(), found: el.len() });
        }
    }
    let mut orders = Vec::with_capacity(arcs.len());
    for k in 0..arcs.len() {
        let order = match &edge_labels {
            None => BondOrder::Single,
            Some(el) => {
                let (line, v) = el[k];
                *EDGE_ORDERS.get(v).ok_or_else(|| TuError::Parse {
                    path: el_path.clone(),
                    line,
                    msg: format!("edge label {v} outside 0..=3"),
                })?
            }
        };
        orders.push(order);
    }

    let mut directed: BTreeMap<(usize, usize), BondOrder> = BTreeMap::new();
    for (k, &(line, i, j)) in arcs.iter().enumerate() {
        if directed.insert((i, j), orders[k]).is_some() {
            return Err(TuError::Parse { path: a_path, line, msg: format!("duplicate edge ({}, {})", i + 1, j + 1) });
        }
    }
    for &(line, i, j) in &arcs {
        if directed.get(&(j, i)) != directed.get(&(i, j)) {
            return Err(TuError::Asymmetric { path: a_path, line, i: i + 1, j: j + 1 });
        }
    }

    let distinct: BTreeSet<i64> = graph_labels.iter().map(|&(_, v)| v).collect();
    let raw_labels: Vec<i64> = distinct.into_iter().collect();
    let mut graphs: Vec<MolecularGraph> = graph_labels
        .iter()
        .map(|&(_, v)| MolecularGraph::new().with_label(raw_labels.binary_search(&v).ok()))
        .collect();
    for (node, &(_, label)) in node_labels.iter().enumerate() {
        graphs[graph_of[node]].add_atom(map.element(label));
    }
    for (&(i, j), &order) in &directed {
        if i < j {
            graphs[graph_of[i]].add_bond(local[i], local[j], order)?;
        }
    }
    let dataset = Dataset::new(graphs, raw_labels.len().max(2))?;
    Ok(TuDataset { dataset, raw_labels })
}

/// Writes `dataset` in TU layout; both arc directions are listed.
pub fn write_tu(dir: &Path, name: &str, dataset: &Dataset, map: NodeMap) -> Result<(), TuError> {
    let mut a = String::new();
    let mut el = String::new();
    let mut gi = String::new();
    let mut gl = String::new();
    let mut nl = String::new();
    let mut offset = 1;
    for (g, graph) in dataset.graphs.iter().enumerate() {
        let _ = writeln!(gl, "{}", graph.label.unwrap_or(0));
        for &e in graph.atoms() {
            let label = map.label(e).ok_or_else(|| TuError::Parse {
                path: file(dir, name, "node_labels"),
                line: 0,
                msg: format!("element {e} has no label under {map:?}"),
            })?;
            let _ = writeln!(nl, "{label}");
            let _ = writeln!(gi, "{}", g + 1);
        }
        let mut arcs: Vec<(usize, usize, BondOrder)> = Vec::new();
        for b in graph.bonds() {
            arcs.push((b.a, b.b, b.order));
            arcs.push((b.b, b.a, b.order));
        }
        arcs.sort();
        for (i, j, order) in arcs {
            let _ = writeln!(a, "{}, {}", i + offset, j + offset);
            let _ = writeln!(el, "{}", order.index());
        }
        offset += graph.atom_count();
    }
    fs::create_dir_all(dir).map_err(|source| TuError::Io { path: dir.into(), source })?;
    for (suffix, text) in [("A", a), ("edge_labels", el), ("graph_indicator", gi), ("graph_labels", gl), ("node_labels", nl)] {
        let path = file(dir, name, suffix);
        fs::write(&path, text).map_err(|source| TuError::Io { path, source })?;
    }
    Ok(())
}
