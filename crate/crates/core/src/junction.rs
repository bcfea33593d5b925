//! Motif junction trees: clusters for the class-selected motif instances and
//! for the bonds they leave uncovered, joined by a spanning tree of the
//! cluster intersection graph.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::chem::{canonical_code_with_cap, ChemError, MolecularGraph};
use crate::motif::{MoleculeMotifs, MotifVocabulary, VOCAB_CANON_CAP};
use crate::target::{TargetError, TargetModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JunctionError {
    #[error("molecule has no bonds and no selected motif")]
    EmptyTree,
    #[error("cluster graph is disconnected")]
    Disconnected,
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Target(#[from] TargetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClusterKind {
    /// an instance of a class-selected motif
    Motif,
    /// uncovered bonds lying on cycles, grouped per 2-edge-connected block
    Ring,
    /// one uncovered acyclic bond
    Edge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterNode {
    pub kind: ClusterKind,
    /// sorted host atoms
    pub atoms: Vec<usize>,
    /// sorted host bonds
    pub bonds: Vec<usize>,
    /// vocabulary index for motif clusters
    pub motif: Option<usize>,
    /// canonical code of the cluster subgraph
    pub code: String,
}

impl ClusterNode {
    pub fn subgraph(&self, host: &MolecularGraph) -> MolecularGraph {
        host.subgraph(&self.atoms, &self.bonds).0
    }

    fn sort_key(&self) -> (ClusterKind, &str, &[usize]) {
        (self.kind, &self.code, &self.atoms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeEdge {
    pub a: usize,
    pub b: usize,
    /// sorted shared host atoms
    pub shared: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JunctionTree {
    /// ordered by (kind, code, atoms)
    pub clusters: Vec<ClusterNode>,
    pub edges: Vec<TreeEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpanningTree {
    /// Kruskal on shared-atom counts, ties by cluster order
    #[default]
    MaxWeight,
    /// uniform over spanning trees of the cluster graph (Wilson's algorithm)
    UniformRandom(u64),
}

impl JunctionTree {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn neighbors(&self, c: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|e| if e.a == c { Some(e.b) } else if e.b == c { Some(e.a) } else { None })
            .collect();
        out.sort_unstable();
        out
    }

    /// Node features: φ of every cluster subgraph.
    pub fn features(&self, host: &MolecularGraph, model: &TargetModel) -> Result<Vec<Vec<f64>>, JunctionError> {
        Ok(self
            .clusters
            .iter()
            .map(|c| model.embed(&c.subgraph(host)))
            .collect::<Result<_, _>>()?)
    }

    /// Checks the structural invariants; returns the violated ones by name.
    pub fn violations(&self, host: &MolecularGraph) -> Vec<&'static str> {
        let mut out = Vec::new();
        let n = self.clusters.len();
        if self.edges.len() + 1 != n {
            out.push("edge count");
        }
        let mut atom_hits = vec![0usize; host.atom_count()];
        let mut bond_hits = vec![0usize; host.bond_count()];
        for c in &self.clusters {
            for &a in &c.atoms {
                atom_hits[a] += 1;
            }
            for &b in &c.bonds {
                bond_hits[b] += 1;
            }
            if c.kind == ClusterKind::Edge && c.atoms.len() != 2 {
                out.push("edge cluster size");
            }
            if !c.subgraph(host).is_connected() {
                out.push("cluster connectivity");
            }
        }
        if atom_hits.iter().any(|&h| h == 0) {
            out.push("atom coverage");
        }
        if bond_hits.iter().any(|&h| h != 1) {
            out.push("bond uniqueness");
        }
        for e in &self.edges {
            if e.shared.is_empty() {
                out.push("tree edge overlap");
            }
        }
        if n > 0 && reachable(n, &self.edges, |_| true, 0).len() != n {
            out.push("tree connectivity");
        }
        for atom in 0..host.atom_count() {
            let holders: Vec<usize> = (0..n).filter(|&c| self.clusters[c].atoms.binary_search(&atom).is_ok()).collect();
            if holders.len() > 1 {
                let inside = |c: usize| holders.binary_search(&c).is_ok();
                if reachable(n, &self.edges, inside, holders[0]).len() != holders.len() {
                    out.push("running intersection");
                    break;
                }
            }
        }
        out.dedup();
        out
    }
}

fn reachable(n: usize, edges: &[TreeEdge], allowed: impl Fn(usize) -> bool, start: usize) -> BTreeSet<usize> {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.a].push(e.b);
        adj[e.b].push(e.a);
    }
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if allowed(w) && seen.insert(w) {
                stack.push(w);
            }
        }
    }
    seen
}

/// Builds the junction tree of `host` restricted to the motifs in `selected`.
pub fn decompose_tree(
    host: &MolecularGraph,
    motifs: &MoleculeMotifs,
    vocab: &MotifVocabulary,
    selected: &BTreeSet<usize>,
    spanning: SpanningTree,
) -> Result<JunctionTree, JunctionError> {
    let mut clusters = Vec::new();
    let mut covered = vec![false; host.bond_count()];
    for inst in &motifs.instances {
        if !selected.contains(&inst.motif) {
            continue;
        }
        for &b in &inst.bonds {
            covered[b] = true;
        }
        clusters.push(ClusterNode {
            kind: ClusterKind::Motif,
            atoms: inst.atoms.clone(),
            bonds: inst.bonds.clone(),
            motif: Some(inst.motif),
            code: vocab.motifs[inst.motif].code.clone(),
        });
    }
    let uncovered: Vec<usize> = (0..host.bond_count()).filter(|&b| !covered[b]).collect();
    if !uncovered.is_empty() {
        let all: Vec<usize> = (0..host.atom_count()).collect();
        let (rest, _) = host.subgraph(&all, &uncovered);
        // rest's bond k is host bond uncovered[k]
        let acyclic: BTreeSet<usize> = rest.bridges().into_iter().collect();
        for (k, &b) in uncovered.iter().enumerate() {
            if acyclic.contains(&k) {
                let bond = host.bond(b);
                clusters.push(cluster(host, ClusterKind::Edge, vec![bond.a, bond.b], vec![b])?);
            }
        }
        let cyclic: Vec<usize> = (0..uncovered.len()).filter(|k| !acyclic.contains(k)).collect();
        if !cyclic.is_empty() {
            let (blocks, _) = rest.subgraph(&all, &cyclic);
            for comp in blocks.components() {
                if comp.len() < 2 {
                    continue;
                }
                let set: BTreeSet<usize> = comp.iter().copied().collect();
                let bonds: Vec<usize> = cyclic
                    .iter()
                    .map(|&k| uncovered[k])
                    .filter(|&b| set.contains(&host.bond(b).a))
                    .collect();
                clusters.push(cluster(host, ClusterKind::Ring, comp, bonds)?);
            }
        }
    }
    // a lone atom whose motif was filtered out has nothing to cluster
    if clusters.is_empty() {
        return Err(JunctionError::EmptyTree);
    }
    clusters.sort_by(|x, y| x.sort_key().cmp(&y.sort_key()));

    let n = clusters.len();
    let mut candidates = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let shared = intersect(&clusters[i].atoms, &clusters[j].atoms);
            if !shared.is_empty() {
                candidates.push(TreeEdge { a: i, b: j, shared });
            }
        }
    }
    let edges = match spanning {
        SpanningTree::MaxWeight => {
            // stable sort keeps (i, j) order within equal weights
            candidates.sort_by(|x, y| y.shared.len().cmp(&x.shared.len()));
            kruskal(n, candidates)
        }
        SpanningTree::UniformRandom(seed) => wilson(n, candidates, seed),
    };
    if edges.len() + 1 != n {
        return Err(JunctionError::Disconnected);
    }
    Ok(JunctionTree { clusters, edges })
}

fn cluster(host: &MolecularGraph, kind: ClusterKind, atoms: Vec<usize>, bonds: Vec<usize>) -> Result<ClusterNode, JunctionError> {
    let (sub, _) = host.subgraph(&atoms, &bonds);
    let code = canonical_code_with_cap(&sub, VOCAB_CANON_CAP)?;
    Ok(ClusterNode { kind, atoms, bonds, motif: None, code })
}

fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

fn kruskal(n: usize, sorted: Vec<TreeEdge>) -> Vec<TreeEdge> {
    let mut dsu = Dsu((0..n).collect());
    sorted.into_iter().filter(|e| dsu.union(e.a, e.b)).collect()
}

fn wilson(n: usize, candidates: Vec<TreeEdge>, seed: u64) -> Vec<TreeEdge> {
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, e) in candidates.iter().enumerate() {
        adj[e.a].push(k);
        adj[e.b].push(k);
    }
    if reachable(n, &candidates, |_| true, 0).len() != n {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    let mut next: Vec<Option<usize>> = vec![None; n];
    in_tree[0] = true;
    for start in 1..n {
        let mut v = start;
        while !in_tree[v] {
            let k = adj[v][rng.random_range(0..adj[v].len())];
            next[v] = Some(k);
            let e = &candidates[k];
            v = if e.a == v { e.b } else { e.a };
        }
        let mut v = start;
        while !in_tree[v] {
            in_tree[v] = true;
            let e = &candidates[next[v].unwrap()];
            v = if e.a == v { e.b } else { e.a };
        }
    }
    let mut picked: Vec<usize> = (1..n).filter_map(|v| next[v]).collect();
    // only edges on the final loop-erased paths count
    picked.sort_unstable();
    picked.dedup();
    let mut dsu = Dsu((0..n).collect());
    let mut out: Vec<TreeEdge> = Vec::new();
    for k in picked {
        let e = &candidates[k];
        if dsu.union(e.a, e.b) {
            out.push(e.clone());
        }
    }
    out
}
