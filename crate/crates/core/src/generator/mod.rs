//! Per-class motif junction-tree generator.
//!
//! Label alphabet: the class vocabulary's motifs in vocabulary order, then
//! one generic symbol for every non-motif cluster. Trees are stored in DFS
//! pre-order, so every partial tree seen while decoding is a prefix.

mod decode;
mod train;

pub use decode::{decode_graph_with, Assembler, Assembly, DecodeMode, DecodedTree, SampleRecord};
pub use train::{prepare_corpus, train_generator, Corpus, GeneratorTrace, LossBreakdown, TreeExample};

use alloc::format;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::chem::{BondOrder, ChemError, Element, MolecularGraph};
use crate::junction::{JunctionError, SpanningTree};
use crate::nn::{GcnGraph, NnError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::target::{TargetError, TargetModel};

pub const EDGE_SYMBOL: &str = "EDGE";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("class {0} has no motifs to generate from")]
    EmptyVocabulary(usize),
    #[error("no training molecule is predicted as class {0}")]
    EmptyCorpus(usize),
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("empty tree")]
    EmptyTree,
    #[error("label {0} outside the alphabet")]
    UnknownLabel(usize),
    #[error("no feasible attachment for tree node {0}")]
    Assembly(usize),
    #[error("assembled graph fails the final valence or connectivity check")]
    Infeasible,
    #[error("unknown {kind} `{value}`")]
    UnknownName { kind: &'static str, value: String },
    #[error("bad generator sidecar: {0}")]
    Sidecar(String),
    #[error(transparent)]
    Junction(#[from] JunctionError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    Reconstruction,
    Property,
    #[default]
    Both,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [LossMode::Reconstruction, LossMode::Property, LossMode::Both];

    pub fn uses_reconstruction(self) -> bool {
        self != LossMode::Property
    }

    pub fn uses_property(self) -> bool {
        self != LossMode::Reconstruction
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Reconstruction => "recon",
            LossMode::Property => "property",
            LossMode::Both => "both",
        })
    }
}

impl FromStr for LossMode {
    type Err = GeneratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "recon" | "reconstruction" | "r" => Ok(LossMode::Reconstruction),
            "property" | "p" => Ok(LossMode::Property),
            "both" | "rp" => Ok(LossMode::Both),
            _ => Err(GeneratorError::UnknownName { kind: "loss mode", value: s.into() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub epochs: usize,
    pub lr: f64,
    pub mode: LossMode,
    /// weight of the KL term towards N(0, I); 0 disables it
    pub beta: f64,
    pub max_clusters: usize,
    pub max_children: usize,
    pub max_retries: usize,
    pub spanning: SpanningTree,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            lr: 0.005,
            mode: LossMode::Both,
            beta: 0.0,
            max_clusters: 20,
            max_children: 8,
            max_retries: 10,
            spanning: SpanningTree::MaxWeight,
            seed: 0,
        }
    }
}

/// A label-only tree in DFS pre-order: `parent[k] < k` for every `k > 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTree {
    pub labels: Vec<usize>,
    pub parent: Vec<Option<usize>>,
}

impl LabelTree {
    pub fn single(label: usize) -> Self {
        Self { labels: vec![label], parent: vec![None] }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn children(&self, k: usize) -> Vec<usize> {
        (k + 1..self.len()).filter(|&j| self.parent[j] == Some(k)).collect()
    }

    /// Tree edges among the first `prefix` nodes.
    pub fn edges(&self, prefix: usize) -> Vec<(usize, usize)> {
        (1..prefix.min(self.len())).filter_map(|j| self.parent[j].map(|p| (p, j))).collect()
    }

    /// True when nodes are in DFS pre-order with ascending children.
    pub fn is_preorder(&self) -> bool {
        if self.labels.len() != self.parent.len() || self.parent.first().is_some_and(|p| p.is_some()) {
            return false;
        }
        // node k+1 is a child of k or of some ancestor of k
        let mut path = vec![0usize];
        for k in 1..self.len() {
            let Some(p) = self.parent[k] else { return false };
            while path.last().is_some_and(|&top| top != p) {
                path.pop();
            }
            if path.is_empty() {
                return false;
            }
            path.push(k);
        }
        true
    }
}

/// Class alphabet entry for one motif.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphabetEntry {
    /// index into the dataset-wide motif vocabulary
    pub motif: usize,
    pub code: String,
    pub score: f64,
    pub graph: MolecularGraph,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Ids {
    pub gnn_w: [ParamId; 2],
    pub gnn_b: [ParamId; 2],
    pub tree_mu: (ParamId, ParamId),
    pub tree_ls: (ParamId, ParamId),
    pub graph_mu: (ParamId, ParamId),
    pub graph_ls: (ParamId, ParamId),
    pub comb: (ParamId, ParamId),
    pub pred: (ParamId, ParamId),
    pub comb_l: (ParamId, ParamId),
    pub pred_l: (ParamId, ParamId),
    /// frozen: `labels × d` decoder input features
    pub labels: ParamId,
    /// trainable per-label offset added to those features
    pub label_embed: ParamId,
}

impl Ids {
    fn resolve(store: &ParamStore) -> Result<Self, GeneratorError> {
        let f = |name: &str| store.find(name).ok_or_else(|| GeneratorError::Sidecar(format!("missing parameter {name}")));
        let pair = |stem: &str| -> Result<(ParamId, ParamId), GeneratorError> { Ok((f(&format!("{stem}.w"))?, f(&format!("{stem}.b"))?)) };
        Ok(Self {
            gnn_w: [f("gnn0.w")?, f("gnn1.w")?],
            gnn_b: [f("gnn0.b")?, f("gnn1.b")?],
            tree_mu: pair("tree.mu")?,
            tree_ls: pair("tree.logsigma")?,
            graph_mu: pair("graph.mu")?,
            graph_ls: pair("graph.logsigma")?,
            comb: pair("comb")?,
            pred: pair("pred")?,
            comb_l: pair("comb_l")?,
            pred_l: pair("pred_l")?,
            labels: f("labels.features")?,
            label_embed: f("labels.embed")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    pub class: usize,
    pub config: GeneratorConfig,
    pub alphabet: Vec<AlphabetEntry>,
    /// elements and bond orders seen in edge clusters, for realizing EDGE
    pub edge_elements: Vec<Element>,
    pub edge_orders: Vec<BondOrder>,
    pub params: ParamStore,
    pub(crate) ids: Ids,
}

/// Parameters bound to one tape.
pub(crate) struct Bound {
    gnn_w: [Var; 2],
    gnn_b: [Var; 2],
    tree_mu: (Var, Var),
    tree_ls: (Var, Var),
    graph_mu: (Var, Var),
    graph_ls: (Var, Var),
    comb: (Var, Var),
    pred: (Var, Var),
    comb_l: (Var, Var),
    pred_l: (Var, Var),
    label_embed: Var,
}

impl Bound {
    pub(crate) fn new(store: &ParamStore, ids: &Ids, tape: &mut Tape) -> Self {
        let mut pair = |p: (ParamId, ParamId)| (tape.param(store, p.0), tape.param(store, p.1));
        let tree_mu = pair(ids.tree_mu);
        let tree_ls = pair(ids.tree_ls);
        let graph_mu = pair(ids.graph_mu);
        let graph_ls = pair(ids.graph_ls);
        let comb = pair(ids.comb);
        let pred = pair(ids.pred);
        let comb_l = pair(ids.comb_l);
        let pred_l = pair(ids.pred_l);
        let g0 = pair((ids.gnn_w[0], ids.gnn_b[0]));
        let g1 = pair((ids.gnn_w[1], ids.gnn_b[1]));
        let label_embed = tape.param(store, ids.label_embed);
        Self { gnn_w: [g0.0, g1.0], gnn_b: [g0.1, g1.1], tree_mu, tree_ls, graph_mu, graph_ls, comb, pred, comb_l, pred_l, label_embed }
    }

    /// X' rows: φ(label) + the label's learned offset.
    pub(crate) fn label_inputs(&self, tape: &mut Tape, table: &Tensor, labels: &[usize]) -> Result<Var, GeneratorError> {
        let (l, d) = table.shape();
        let mut rows = Vec::with_capacity(labels.len() * d);
        let mut onehot = Tensor::zeros(labels.len(), l);
        for (r, &label) in labels.iter().enumerate() {
            if label >= l {
                return Err(GeneratorError::UnknownLabel(label));
            }
            rows.extend_from_slice(table.row(label));
            onehot.data_mut()[r * l + label] = 1.0;
        }
        let phi = tape.constant(Tensor::new(labels.len(), d, rows)?);
        let pick = tape.constant(onehot);
        let offset = tape.matmul(pick, self.label_embed)?;
        Ok(tape.add(phi, offset)?)
    }

    fn affine(tape: &mut Tape, x: Var, p: (Var, Var)) -> Result<Var, NnError> {
        let y = tape.matmul(x, p.0)?;
        tape.add_row(y, p.1)
    }

    /// Two GCN layers over a tree with `n` nodes; ReLU between them only.
    pub(crate) fn tree_gnn(&self, tape: &mut Tape, n: usize, edges: &[(usize, usize)], x: Var) -> Result<Var, NnError> {
        let g = Rc::new(GcnGraph::from_edges(n, edges.iter().map(|&(a, b)| (a, b, 0)), 1));
        let h = tape.gcn_layer(g.clone(), x, self.gnn_w[0], Some(self.gnn_b[0]), None)?;
        let h = tape.relu(h);
        tape.gcn_layer(g, h, self.gnn_w[1], Some(self.gnn_b[1]), None)
    }

    fn gaussian(tape: &mut Tape, h: Var, mu: (Var, Var), ls: (Var, Var), noise: Option<&[f64]>) -> Result<(Var, Var, Var), NnError> {
        let m = Self::affine(tape, h, mu)?;
        let s = Self::affine(tape, h, ls)?;
        let z = match noise {
            Some(eps) => {
                let sigma = tape.exp(s);
                let e = tape.constant(Tensor::row_vector(eps.to_vec()));
                let spread = tape.mul(sigma, e)?;
                tape.add(m, spread)?
            }
            None => m,
        };
        Ok((z, m, s))
    }

    /// (z_T, μ_T, logσ_T) from a `1 × d` tree embedding.
    pub(crate) fn tree_latent(&self, tape: &mut Tape, h_t: Var, noise: Option<&[f64]>) -> Result<(Var, Var, Var), NnError> {
        Self::gaussian(tape, h_t, self.tree_mu, self.tree_ls, noise)
    }

    pub(crate) fn graph_latent(&self, tape: &mut Tape, h_g: Var, noise: Option<&[f64]>) -> Result<(Var, Var, Var), NnError> {
        Self::gaussian(tape, h_g, self.graph_mu, self.graph_ls, noise)
    }

    /// PRED(COMB(·)) on rows of `[z, H'_i]`: child-existence logits, `m × 1`.
    pub(crate) fn child_logits(&self, tape: &mut Tape, inputs: Var) -> Result<Var, NnError> {
        let c = Self::affine(tape, inputs, self.comb)?;
        let c = tape.relu(c);
        Self::affine(tape, c, self.pred)
    }

    /// PRED^l(COMB^l(·)) before the softmax: label logits, `m × L`.
    pub(crate) fn label_logits(&self, tape: &mut Tape, inputs: Var) -> Result<Var, NnError> {
        let c = Self::affine(tape, inputs, self.comb_l)?;
        let c = tape.relu(c);
        Self::affine(tape, c, self.pred_l)
    }
}

/// 0.5 Σ (μ² + σ² − 1) − Σ logσ
pub(crate) fn kl_term(tape: &mut Tape, mu: Var, ls: Var) -> Result<Var, NnError> {
    let mu2 = tape.mul(mu, mu)?;
    let two = tape.scale(ls, 2.0);
    let var = tape.exp(two);
    let s = tape.add(mu2, var)?;
    let d = tape.value(mu).cols();
    let half = tape.scale(s, 0.5);
    let half = tape.sum(half);
    let lsum = tape.sum(ls);
    let kl = tape.sub(half, lsum)?;
    let offset = tape.constant(Tensor::scalar(0.5 * d as f64));
    tape.sub(kl, offset)
}

impl GeneratorModel {
    /// Fresh parameters. `label_features` has one row per alphabet entry plus
    /// a final EDGE row.
    pub fn init(
        class: usize,
        dim: usize,
        alphabet: Vec<AlphabetEntry>,
        label_features: Tensor,
        edge_elements: Vec<Element>,
        edge_orders: Vec<BondOrder>,
        config: GeneratorConfig,
    ) -> Result<Self, GeneratorError> {
        if alphabet.is_empty() {
            return Err(GeneratorError::EmptyVocabulary(class));
        }
        let l = alphabet.len() + 1;
        if label_features.shape() != (l, dim) {
            return Err(NnError::Shape { op: "label features", left: label_features.shape(), right: (l, dim) }.into());
        }
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let affine = |params: &mut ParamStore, stem: &str, rows: usize, cols: usize, rng: &mut ChaCha20Rng| {
            params.add(&format!("{stem}.w"), Tensor::glorot(rows, cols, rng));
            params.add(&format!("{stem}.b"), Tensor::zeros(1, cols));
        };
        affine(&mut params, "gnn0", dim, dim, &mut rng);
        affine(&mut params, "gnn1", dim, dim, &mut rng);
        affine(&mut params, "tree.mu", dim, dim, &mut rng);
        affine(&mut params, "tree.logsigma", dim, dim, &mut rng);
        affine(&mut params, "graph.mu", dim, dim, &mut rng);
        affine(&mut params, "graph.logsigma", dim, dim, &mut rng);
        affine(&mut params, "comb", 2 * dim, dim, &mut rng);
        affine(&mut params, "pred", dim, 1, &mut rng);
        affine(&mut params, "comb_l", 2 * dim, dim, &mut rng);
        affine(&mut params, "pred_l", dim, l, &mut rng);
        params.add("labels.embed", Tensor::zeros(l, dim));
        let labels = params.add("labels.features", label_features);
        params.set_trainable(labels, false);
        let ids = Ids::resolve(&params)?;
        Ok(Self { class, config, alphabet, edge_elements, edge_orders, params, ids })
    }

    pub fn dim(&self) -> usize {
        self.params.value(self.ids.labels).cols()
    }

    /// Alphabet size including the EDGE symbol.
    pub fn label_count(&self) -> usize {
        self.alphabet.len() + 1
    }

    pub fn edge_label(&self) -> usize {
        self.alphabet.len()
    }

    pub fn label_name(&self, label: usize) -> &str {
        match self.alphabet.get(label) {
            Some(e) => &e.code,
            None => EDGE_SYMBOL,
        }
    }

    pub fn label_features(&self) -> &Tensor {
        self.params.value(self.ids.labels)
    }

    /// z_G = μ_G + σ_G ⊙ ε; `rng = None` returns μ_G.
    pub fn encode_graph<R: Rng>(&self, target: &TargetModel, graph: &MolecularGraph, rng: Option<&mut R>) -> Result<Vec<f64>, GeneratorError> {
        let h = target.embed(graph)?;
        let noise: Option<Vec<f64>> = rng.map(|r| (0..self.dim()).map(|_| r.sample(StandardNormal)).collect());
        let mut tape = Tape::new();
        let b = Bound::new(&self.params, &self.ids, &mut tape);
        let h = tape.constant(Tensor::row_vector(h));
        let (z, _, _) = b.graph_latent(&mut tape, h, noise.as_deref())?;
        Ok(tape.value(z).data().to_vec())
    }

    /// (h_T, z_T) for a tree whose node features are the rows of `features`;
    /// `rng = None` returns μ_T as z_T.
    pub fn encode_tree<R: Rng>(&self, tree: &LabelTree, features: &Tensor, rng: Option<&mut R>) -> Result<(Vec<f64>, Vec<f64>), GeneratorError> {
        if tree.is_empty() {
            return Err(GeneratorError::EmptyTree);
        }
        let noise: Option<Vec<f64>> = rng.map(|r| (0..self.dim()).map(|_| r.sample(StandardNormal)).collect());
        let mut tape = Tape::new();
        let b = Bound::new(&self.params, &self.ids, &mut tape);
        let x = tape.constant(features.clone());
        let h = b.tree_gnn(&mut tape, tree.len(), &tree.edges(tree.len()), x)?;
        let h_t = tape.mean_rows(h);
        let (z, _, _) = b.tree_latent(&mut tape, h_t, noise.as_deref())?;
        Ok((tape.value(h_t).data().to_vec(), tape.value(z).data().to_vec()))
    }

    /// `key=value` lines describing everything but the parameter values.
    pub fn sidecar(&self) -> String {
        let c = &self.config;
        let mut out = String::from("format=mage-generator 1\n");
        out += &format!("class={}\n", self.class);
        out += &format!("epochs={}\nlr={}\nmode={}\nbeta={}\n", c.epochs, c.lr, c.mode, c.beta);
        out += &format!("max_clusters={}\nmax_children={}\nmax_retries={}\nseed={}\n", c.max_clusters, c.max_children, c.max_retries, c.seed);
        out += &format!(
            "spanning={}\n",
            match c.spanning {
                SpanningTree::MaxWeight => "max_weight".to_string(),
                SpanningTree::UniformRandom(s) => format!("uniform:{s}"),
            }
        );
        let els: Vec<&str> = self.edge_elements.iter().map(|e| e.as_str()).collect();
        out += &format!("edge_elements={}\n", els.join(","));
        let orders: Vec<String> = self.edge_orders.iter().map(|o| o.code_char().to_string()).collect();
        out += &format!("edge_orders={}\n", orders.join(","));
        for e in &self.alphabet {
            out += &format!("motif={} {} {}\n", e.motif, e.score, e.code);
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8], sidecar: &str) -> Result<Self, GeneratorError> {
        let bad = |m: &str| GeneratorError::Sidecar(m.into());
        let mut lines = sidecar.lines();
        if lines.next() != Some("format=mage-generator 1") {
            return Err(bad("missing format line"));
        }
        let mut config = GeneratorConfig::default();
        let mut class = None;
        let mut alphabet = Vec::new();
        let mut edge_elements = Vec::new();
        let mut edge_orders = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
            let num = |v: &str| v.parse::<usize>().map_err(|_| bad(line));
            match k {
                "class" => class = Some(num(v)?),
                "epochs" => config.epochs = num(v)?,
                "lr" => config.lr = v.parse().map_err(|_| bad(line))?,
                "mode" => config.mode = v.parse()?,
                "beta" => config.beta = v.parse().map_err(|_| bad(line))?,
                "max_clusters" => config.max_clusters = num(v)?,
                "max_children" => config.max_children = num(v)?,
                "max_retries" => config.max_retries = num(v)?,
                "seed" => config.seed = v.parse().map_err(|_| bad(line))?,
                "spanning" => {
                    config.spanning = match v.split_once(':') {
                        None if v == "max_weight" => SpanningTree::MaxWeight,
                        Some(("uniform", s)) => SpanningTree::UniformRandom(s.parse().map_err(|_| bad(line))?),
                        _ => return Err(bad(line)),
                    }
                }
                "edge_elements" => {
                    for s in v.split(',').filter(|s| !s.is_empty()) {
                        edge_elements.push(Element::new(s)?);
                    }
                }
                "edge_orders" => {
                    for s in v.split(',').filter(|s| !s.is_empty()) {
                        let c = s.chars().next().ok_or_else(|| bad(line))?;
                        edge_orders.push(BondOrder::from_code_char(c).ok_or_else(|| bad(line))?);
                    }
                }
                "motif" => {
                    let mut parts = v.splitn(3, ' ');
                    let (Some(m), Some(score), Some(code)) = (parts.next(), parts.next(), parts.next()) else {
                        return Err(bad(line));
                    };
                    let graph = MolecularGraph::from_code(code)?;
                    alphabet.push(AlphabetEntry {
                        motif: num(m)?,
                        score: score.parse().map_err(|_| bad(line))?,
                        code: code.into(),
                        graph,
                    });
                }
                _ => return Err(bad(line)),
            }
        }
        let class = class.ok_or_else(|| bad("missing class"))?;
        if alphabet.is_empty() {
            return Err(GeneratorError::EmptyVocabulary(class));
        }
        let params = ParamStore::from_bytes(bytes)?;
        let ids = Ids::resolve(&params)?;
        if params.value(ids.labels).rows() != alphabet.len() + 1 {
            return Err(bad("label feature rows disagree with the alphabet"));
        }
        let mut params = params;
        params.set_trainable(ids.labels, false);
        Ok(Self { class, config, alphabet, edge_elements, edge_orders, params, ids })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use crate::target::TargetConfig;

    pub(crate) fn toy_target(hidden: usize, seed: u64) -> TargetModel {
        let mut elements: Vec<Element> = ["C", "Cl", "N", "O"].iter().map(|s| Element::new(s).unwrap()).collect();
        elements.sort_unstable();
        TargetModel::init(TargetConfig { hidden, seed, ..TargetConfig::default() }, elements, 2)
    }

    pub(crate) fn toy_generator(target: &TargetModel, smiles: &[&str], config: GeneratorConfig) -> GeneratorModel {
        let alphabet: Vec<AlphabetEntry> = smiles
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let graph = parse_smiles(s).unwrap();
                let code = crate::chem::canonical_code(&graph).unwrap();
                AlphabetEntry { motif: i, code: code.clone(), score: 1.0 - 0.1 * i as f64, graph: MolecularGraph::from_code(&code).unwrap() }
            })
            .collect();
        let mut rows: Vec<Vec<f64>> = alphabet.iter().map(|e| target.embed(&e.graph).unwrap()).collect();
        rows.push(target.embed(&parse_smiles("CC").unwrap()).unwrap());
        let features = Tensor::from_rows(&rows).unwrap();
        let c = Element::new("C").unwrap();
        GeneratorModel::init(0, target.hidden(), alphabet, features, vec![c], vec![BondOrder::Single], config).unwrap()
    }

    #[test]
    fn preorder_check() {
        let ok = LabelTree { labels: vec![0; 4], parent: vec![None, Some(0), Some(1), Some(0)] };
        assert!(ok.is_preorder());
        assert_eq!(ok.children(0), vec![1, 3]);
        let bad = LabelTree { labels: vec![0; 4], parent: vec![None, Some(0), Some(0), Some(1)] };
        assert!(!bad.is_preorder());
    }

    #[test]
    fn graph_encoder_reparameterization() {
        let target = toy_target(4, 1);
        let mut gen = toy_generator(&target, &["c1ccccc1"], GeneratorConfig::default());
        let g = parse_smiles("c1ccccc1O").unwrap();
        let mu = gen.encode_graph::<ChaCha20Rng>(&target, &g, None).unwrap();
        let mut r1 = ChaCha20Rng::seed_from_u64(3);
        let mut r2 = ChaCha20Rng::seed_from_u64(3);
        let a = gen.encode_graph(&target, &g, Some(&mut r1)).unwrap();
        assert_eq!(a, gen.encode_graph(&target, &g, Some(&mut r2)).unwrap());
        assert_ne!(a, mu);

        // σ → 0 collapses the sample onto μ
        let (w, b) = gen.ids.graph_ls;
        gen.params.value_mut(w).data_mut().iter_mut().for_each(|v| *v = 0.0);
        gen.params.value_mut(b).data_mut().iter_mut().for_each(|v| *v = -800.0);
        let mut r = ChaCha20Rng::seed_from_u64(9);
        assert_eq!(gen.encode_graph(&target, &g, Some(&mut r)).unwrap(), mu);
    }

    #[test]
    fn graph_encoder_monte_carlo_mean() {
        let target = toy_target(4, 2);
        let gen = toy_generator(&target, &["c1ccccc1"], GeneratorConfig::default());
        let g = parse_smiles("CC(=O)N").unwrap();
        let mu = gen.encode_graph::<ChaCha20Rng>(&target, &g, None).unwrap();
        let h = target.embed(&g).unwrap();
        // σ recomputed independently from the logσ head
        let (w, b) = gen.ids.graph_ls;
        let (w, b) = (gen.params.value(w), gen.params.value(b));
        let sigma: Vec<f64> = (0..4).map(|j| libm::exp((0..4).map(|i| h[i] * w.get(i, j)).sum::<f64>() + b.get(0, j))).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let n = 1000;
        let mut mean = vec![0.0; 4];
        for _ in 0..n {
            let z = gen.encode_graph(&target, &g, Some(&mut rng)).unwrap();
            for j in 0..4 {
                mean[j] += z[j] / n as f64;
            }
        }
        for j in 0..4 {
            assert!((mean[j] - mu[j]).abs() < 4.0 * sigma[j] / libm::sqrt(n as f64), "{j}");
        }
    }

    #[test]
    fn mu_head_gradient_through_reparameterization() {
        let target = toy_target(3, 4);
        let mut gen = toy_generator(&target, &["c1ccccc1"], GeneratorConfig::default());
        let ids = gen.ids.clone();
        let h = target.embed(&parse_smiles("CCO").unwrap()).unwrap();
        let eps = [0.3, -1.2, 0.7];
        let goal = Tensor::row_vector(vec![0.5, -0.5, 1.0]);
        let report = crate::nn::finite_diff_check(&mut gen.params, 1e-4, |tape, store| {
            let b = Bound::new(store, &ids, tape);
            let h = tape.constant(Tensor::row_vector(h.clone()));
            let (z, _, _) = b.graph_latent(tape, h, Some(&eps))?;
            let t = tape.constant(goal.clone());
            tape.mse(z, t)
        })
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn kl_matches_closed_form() {
        let mut tape = Tape::new();
        let mu = tape.constant(Tensor::row_vector(vec![0.5, -1.0]));
        let ls = tape.constant(Tensor::row_vector(vec![0.1, -0.3]));
        let kl = kl_term(&mut tape, mu, ls).unwrap();
        let expect: f64 = [(0.5, 0.1), (-1.0, -0.3)]
            .iter()
            .map(|&(m, s): &(f64, f64)| 0.5 * (m * m + libm::exp(2.0 * s) - 1.0) - s)
            .sum();
        assert!((tape.value(kl).item() - expect).abs() < 1e-12);
        let mut t2 = Tape::new();
        let z = t2.constant(Tensor::zeros(1, 3));
        let kl0 = kl_term(&mut t2, z, z).unwrap();
        assert!(t2.value(kl0).item().abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let target = toy_target(4, 1);
        let gen = toy_generator(&target, &["c1ccccc1", "C1CC1"], GeneratorConfig { mode: LossMode::Property, seed: 7, ..GeneratorConfig::default() });
        let back = GeneratorModel::from_checkpoint(&gen.params.to_bytes(), &gen.sidecar()).unwrap();
        assert_eq!(back, gen);
        assert!(GeneratorModel::from_checkpoint(&gen.params.to_bytes(), "format=other").is_err());
        let trimmed: String = gen.sidecar().lines().filter(|l| !l.starts_with("motif=")).map(|l| format!("{l}\n")).collect();
        assert!(GeneratorModel::from_checkpoint(&gen.params.to_bytes(), &trimmed).is_err());
    }

    #[test]
    fn loss_mode_names() {
        for m in LossMode::ALL {
            assert_eq!(m.to_string().parse::<LossMode>().unwrap(), m);
        }
        assert!("kl".parse::<LossMode>().is_err());
    }
}
