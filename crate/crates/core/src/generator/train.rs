use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use super::{kl_term, AlphabetEntry, Bound, GeneratorConfig, GeneratorError, GeneratorModel, Ids, LabelTree, LossMode};
use crate::chem::{BondOrder, Dataset, Element};
use crate::junction::{decompose_tree, ClusterKind, JunctionError, JunctionTree, SpanningTree};
use crate::motif::MotifVocabulary;
use crate::motif_id::ClassMotifVocabulary;
use crate::nn::{Adam, ParamStore, Tape, Tensor, Var};
use crate::target::{argmax, TargetModel};

/// One training molecule: its junction tree relabelled in DFS pre-order.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeExample {
    pub molecule: usize,
    pub tree: LabelTree,
    /// X_T rows (φ of each cluster subgraph), pre-order
    pub features: Tensor,
    /// h_G = φ(molecule)
    pub h_g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub class: usize,
    pub examples: Vec<TreeExample>,
    /// molecules of the class that produced no tree, with the reason
    pub skipped: Vec<(usize, String)>,
    pub alphabet: Vec<AlphabetEntry>,
    /// alphabet rows then the EDGE row (mean φ over non-motif clusters)
    pub label_features: Tensor,
    pub edge_elements: Vec<Element>,
    pub edge_orders: Vec<BondOrder>,
}

/// Junction trees of every molecule predicted as the vocabulary's class.
pub fn prepare_corpus(
    dataset: &Dataset,
    target: &TargetModel,
    vocab: &MotifVocabulary,
    class_vocab: &ClassMotifVocabulary,
    spanning: SpanningTree,
) -> Result<Corpus, GeneratorError> {
    let class = class_vocab.class;
    if class >= dataset.num_classes {
        return Err(GeneratorError::ClassOutOfRange { class, classes: dataset.num_classes });
    }
    if class_vocab.is_empty() {
        return Err(GeneratorError::EmptyVocabulary(class));
    }
    let alphabet: Vec<AlphabetEntry> = class_vocab
        .entries
        .iter()
        .map(|(m, code, score)| AlphabetEntry { motif: *m, code: code.clone(), score: *score, graph: vocab.motifs[*m].graph.clone() })
        .collect();
    let selected: BTreeSet<usize> = class_vocab.indices().into_iter().collect();
    let position = |m: usize| alphabet.iter().position(|e| e.motif == m);
    let edge_label = alphabet.len();

    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    let mut elements = BTreeSet::new();
    let mut orders = BTreeSet::new();
    let mut edge_sum = vec![0.0; target.hidden()];
    let mut edge_count = 0usize;
    for (i, g) in dataset.graphs.iter().enumerate() {
        if target.predicted_class(g)? != class {
            continue;
        }
        let jt = match decompose_tree(g, &vocab.molecules[i], vocab, &selected, spanning) {
            Ok(t) => t,
            Err(e @ (JunctionError::EmptyTree | JunctionError::Disconnected)) => {
                skipped.push((i, e.to_string()));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let x = jt.features(g, target)?;
        for (c, row) in jt.clusters.iter().zip(&x) {
            if c.kind == ClusterKind::Motif {
                continue;
            }
            edge_count += 1;
            for (s, v) in edge_sum.iter_mut().zip(row) {
                *s += v;
            }
            if c.kind == ClusterKind::Edge {
                let b = g.bond(c.bonds[0]);
                elements.insert(g.element(b.a));
                elements.insert(g.element(b.b));
                orders.insert(b.order);
            }
        }
        let root = root_cluster(&jt, class_vocab);
        let order = preorder(&jt, root);
        let mut slot = vec![0; jt.len()];
        for (k, &c) in order.iter().enumerate() {
            slot[c] = k;
        }
        let mut parent = vec![None; order.len()];
        for e in &jt.edges {
            let (a, b) = (slot[e.a], slot[e.b]);
            let (p, c) = if a < b { (a, b) } else { (b, a) };
            parent[c] = Some(p);
        }
        let labels: Vec<usize> = order
            .iter()
            .map(|&c| jt.clusters[c].motif.and_then(position).unwrap_or(edge_label))
            .collect();
        let rows: Vec<Vec<f64>> = order.iter().map(|&c| x[c].clone()).collect();
        examples.push(TreeExample {
            molecule: i,
            tree: LabelTree { labels, parent },
            features: Tensor::from_rows(&rows)?,
            h_g: target.embed(g)?,
        });
    }
    if examples.is_empty() {
        return Err(GeneratorError::EmptyCorpus(class));
    }
    let mut rows: Vec<Vec<f64>> = alphabet.iter().map(|e| target.embed(&e.graph)).collect::<Result<_, _>>()?;
    rows.push(edge_sum.iter().map(|s| s / edge_count.max(1) as f64).collect());
    Ok(Corpus {
        class,
        examples,
        skipped,
        alphabet,
        label_features: Tensor::from_rows(&rows)?,
        edge_elements: elements.into_iter().collect(),
        edge_orders: orders.into_iter().collect(),
    })
}

/// Highest-scoring motif cluster; cluster order breaks ties, so equal
/// scores fall to the smaller code.
fn root_cluster(jt: &JunctionTree, class_vocab: &ClassMotifVocabulary) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in jt.clusters.iter().enumerate() {
        if let Some(s) = c.motif.and_then(|m| class_vocab.score(m)) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map_or(0, |(i, _)| i)
}

/// DFS from `root`, neighbours in ascending cluster order.
fn preorder(jt: &JunctionTree, root: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(jt.len());
    let mut seen = vec![false; jt.len()];
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        if seen[v] {
            continue;
        }
        seen[v] = true;
        out.push(v);
        for w in jt.neighbors(v).into_iter().rev() {
            if !seen[w] {
                stack.push(w);
            }
        }
    }
    out
}

/// One teacher-forced decision: at `node`, with the first `prefix` nodes
/// built, expand with `child` or stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Step {
    pub prefix: usize,
    pub node: usize,
    pub child: Option<usize>,
}

pub(crate) fn teacher_steps(tree: &LabelTree) -> Vec<Step> {
    let mut steps = Vec::with_capacity(2 * tree.len());
    let children: Vec<Vec<usize>> = (0..tree.len()).map(|k| tree.children(k)).collect();
    let mut next = vec![0usize; tree.len()];
    let mut stack = vec![0usize];
    let mut built = 1;
    while let Some(&i) = stack.last() {
        if let Some(&c) = children[i].get(next[i]) {
            debug_assert_eq!(c, built, "tree is not in pre-order");
            next[i] += 1;
            steps.push(Step { prefix: built, node: i, child: Some(tree.labels[c]) });
            built += 1;
            stack.push(c);
        } else {
            steps.push(Step { prefix: built, node: i, child: None });
            stack.pop();
        }
    }
    steps
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub recon: f64,
    pub property: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add(&mut self, other: &LossBreakdown) {
        self.recon += other.recon;
        self.property += other.property;
        self.kl += other.kl;
        self.total += other.total;
    }

    fn scaled(mut self, k: f64) -> Self {
        self.recon *= k;
        self.property *= k;
        self.kl *= k;
        self.total *= k;
        self
    }
}

pub(crate) struct Forward {
    pub total: Var,
    pub recon: Option<Var>,
    pub property: Option<Var>,
    pub kl: Option<Var>,
    /// child logits per teacher step, label logits for the root then every expansion
    pub child_logits: Option<Var>,
    pub label_logits: Option<Var>,
}

fn add_opt(tape: &mut Tape, acc: Option<Var>, v: Var) -> Result<Option<Var>, GeneratorError> {
    Ok(Some(match acc {
        Some(a) => tape.add(a, v)?,
        None => v,
    }))
}

/// Per-molecule loss: L_R and/or L_P, plus β·KL when β > 0.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward(
    store: &ParamStore,
    ids: &Ids,
    tape: &mut Tape,
    target: &TargetModel,
    class: usize,
    ex: &TreeExample,
    mode: LossMode,
    beta: f64,
    noise: Option<&[f64]>,
) -> Result<Forward, GeneratorError> {
    let tree = &ex.tree;
    let n = tree.len();
    if n == 0 {
        return Err(GeneratorError::EmptyTree);
    }
    let d = ex.features.cols();
    let b = Bound::new(store, ids, tape);
    let x = tape.constant(ex.features.clone());
    let h = b.tree_gnn(tape, n, &tree.edges(n), x)?;
    let h_t = tape.mean_rows(h);
    let (z, mu, ls) = b.tree_latent(tape, h_t, noise)?;

    let mut out = Forward { total: z, recon: None, property: None, kl: None, child_logits: None, label_logits: None };
    let mut total = None;
    if mode.uses_reconstruction() {
        let table = store.value(ids.labels);
        // H' for every prefix; prefix k is the partial tree after k nodes
        let x_all = b.label_inputs(tape, table, &tree.labels)?;
        let mut states = Vec::with_capacity(n);
        for k in 1..=n {
            let rows: Vec<Var> = (0..k).map(|r| tape.row(x_all, r)).collect::<Result<_, _>>()?;
            let xk = tape.stack_rows(&rows)?;
            states.push(b.tree_gnn(tape, k, &tree.edges(k), xk)?);
        }
        let steps = teacher_steps(tree);
        let mut child_rows = Vec::with_capacity(steps.len());
        let mut child_targets = Vec::with_capacity(steps.len());
        let empty = tape.constant(Tensor::zeros(1, d));
        let mut label_rows = vec![empty];
        let mut label_targets = vec![tree.labels[0]];
        for s in &steps {
            let row = tape.row(states[s.prefix - 1], s.node)?;
            child_rows.push(row);
            child_targets.push(if s.child.is_some() { 1.0 } else { 0.0 });
            if let Some(c) = s.child {
                label_rows.push(row);
                label_targets.push(c);
            }
        }
        let labels_total = table.rows();
        let inputs = |tape: &mut Tape, rows: &[Var]| -> Result<Var, GeneratorError> {
            let hs = tape.stack_rows(rows)?;
            let zs = tape.stack_rows(&vec![z; rows.len()])?;
            Ok(tape.concat_cols(zs, hs)?)
        };
        let ci = inputs(tape, &child_rows)?;
        let cl = b.child_logits(tape, ci)?;
        let child_loss = tape.bce_with_logits(cl, &child_targets)?;
        let li = inputs(tape, &label_rows)?;
        let ll = b.label_logits(tape, li)?;
        let mut onehot = Tensor::zeros(label_targets.len(), labels_total);
        for (r, &t) in label_targets.iter().enumerate() {
            onehot.data_mut()[r * labels_total + t] = 1.0;
        }
        let label_loss = tape.soft_cross_entropy(ll, onehot)?;
        let recon = tape.add(child_loss, label_loss)?;
        out.recon = Some(recon);
        out.child_logits = Some(cl);
        out.label_logits = Some(ll);
        total = add_opt(tape, total, recon)?;
    }
    let hg = tape.constant(Tensor::row_vector(ex.h_g.clone()));
    if mode.uses_property() {
        let mse = tape.mse(hg, h_t)?;
        let logits = target.logits_on_tape(tape, h_t, true)?;
        let mut onehot = Tensor::zeros(1, tape.value(logits).cols());
        onehot.data_mut()[class] = 1.0;
        let ce = tape.soft_cross_entropy(logits, onehot)?;
        let property = tape.add(mse, ce)?;
        out.property = Some(property);
        total = add_opt(tape, total, property)?;
    }
    if beta > 0.0 {
        let kt = kl_term(tape, mu, ls)?;
        let (_, gm, gl) = b.graph_latent(tape, hg, None)?;
        let kg = kl_term(tape, gm, gl)?;
        let kl = tape.add(kt, kg)?;
        out.kl = Some(kl);
        let weighted = tape.scale(kl, beta);
        total = add_opt(tape, total, weighted)?;
    }
    out.total = total.expect("every mode contributes a term");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorTrace {
    /// per-epoch means over the corpus, training mode terms only
    pub epochs: Vec<LossBreakdown>,
}

pub fn train_generator(corpus: &Corpus, target: &TargetModel, config: GeneratorConfig) -> Result<(GeneratorModel, GeneratorTrace), GeneratorError> {
    let mut model = GeneratorModel::init(
        corpus.class,
        target.hidden(),
        corpus.alphabet.clone(),
        corpus.label_features.clone(),
        corpus.edge_elements.clone(),
        corpus.edge_orders.clone(),
        config.clone(),
    )?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let adam = Adam::new(config.lr);
    let d = model.dim();
    let mut order: Vec<usize> = (0..corpus.examples.len()).collect();
    let mut trace = GeneratorTrace { epochs: Vec::with_capacity(config.epochs) };
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for &i in &order {
            let noise: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let mut tape = Tape::new();
            let f = forward(&model.params, &model.ids, &mut tape, target, corpus.class, &corpus.examples[i], config.mode, config.beta, Some(&noise))?;
            sum.add(&breakdown(&tape, &f));
            let grads = tape.backward(f.total)?;
            model.params.accumulate(&tape, &grads);
            adam.step(&mut model.params);
        }
        trace.epochs.push(sum.scaled(1.0 / corpus.examples.len() as f64));
    }
    Ok((model, trace))
}

fn breakdown(tape: &Tape, f: &Forward) -> LossBreakdown {
    let v = |x: Option<Var>| x.map_or(0.0, |x| tape.value(x).item());
    LossBreakdown { recon: v(f.recon), property: v(f.property), kl: v(f.kl), total: tape.value(f.total).item() }
}

impl GeneratorModel {
    /// Finite-difference check of the total loss gradient on one example,
    /// with the reparameterization noise fixed.
    pub fn gradient_check(
        &mut self,
        target: &TargetModel,
        ex: &TreeExample,
        mode: LossMode,
        beta: f64,
        noise: &[f64],
        tolerance: f64,
    ) -> Result<crate::nn::GradReport, GeneratorError> {
        let ids = self.ids.clone();
        let class = self.class;
        {
            let mut tape = Tape::new();
            forward(&self.params, &ids, &mut tape, target, class, ex, mode, beta, Some(noise))?;
        }
        let report = crate::nn::finite_diff_check(&mut self.params, tolerance, |tape, store| {
            forward(store, &ids, tape, target, class, ex, mode, beta, Some(noise)).map(|f| f.total).map_err(|e| match e {
                GeneratorError::Nn(n) => n,
                other => unreachable!("inputs validated: {other}"),
            })
        });
        Ok(report?)
    }

    /// Mean L_R + L_P over a corpus with z_T = μ_T, regardless of the
    /// training mode.
    pub fn objective(&self, corpus: &Corpus, target: &TargetModel) -> Result<LossBreakdown, GeneratorError> {
        let mut sum = LossBreakdown::default();
        for ex in &corpus.examples {
            let mut tape = Tape::new();
            let f = forward(&self.params, &self.ids, &mut tape, target, self.class, ex, LossMode::Both, 0.0, None)?;
            sum.add(&breakdown(&tape, &f));
        }
        Ok(sum.scaled(1.0 / corpus.examples.len().max(1) as f64))
    }

    /// Fractions of teacher-forced child decisions and labels predicted
    /// correctly with z_T = μ_T.
    pub fn teacher_forced_accuracy(&self, ex: &TreeExample, target: &TargetModel) -> Result<(f64, f64), GeneratorError> {
        let mut tape = Tape::new();
        let f = forward(&self.params, &self.ids, &mut tape, target, self.class, ex, LossMode::Reconstruction, 0.0, None)?;
        let steps = teacher_steps(&ex.tree);
        let cl = tape.value(f.child_logits.expect("reconstruction mode"));
        let child_ok = steps.iter().enumerate().filter(|(r, s)| (cl.get(*r, 0) >= 0.0) == s.child.is_some()).count();
        let ll = tape.value(f.label_logits.expect("reconstruction mode"));
        let truth: Vec<usize> = core::iter::once(ex.tree.labels[0]).chain(steps.iter().filter_map(|s| s.child)).collect();
        let label_ok = truth.iter().enumerate().filter(|(r, &t)| argmax(ll.row(*r)) == t).count();
        Ok((child_ok as f64 / steps.len() as f64, label_ok as f64 / truth.len() as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::{toy_generator, toy_target};
    use super::*;
    use crate::chem::parse_smiles;
    use crate::motif::{build_vocabulary, Method};
    use crate::motif_id::ClassMotifVocabulary;
    use crate::nn::finite_diff_check;

    fn example(model: &GeneratorModel, target: &TargetModel, tree: LabelTree, smiles: &[&str], host: &str) -> TreeExample {
        let rows: Vec<Vec<f64>> = smiles.iter().map(|s| target.embed(&parse_smiles(s).unwrap()).unwrap()).collect();
        let _ = model;
        TreeExample { molecule: 0, tree, features: Tensor::from_rows(&rows).unwrap(), h_g: target.embed(&parse_smiles(host).unwrap()).unwrap() }
    }

    #[test]
    fn teacher_steps_follow_dfs() {
        // 0 ─ 1 ─ 2, 0 ─ 3
        let tree = LabelTree { labels: vec![5, 6, 7, 8], parent: vec![None, Some(0), Some(1), Some(0)] };
        let s = teacher_steps(&tree);
        let got: Vec<(usize, usize, Option<usize>)> = s.iter().map(|s| (s.prefix, s.node, s.child)).collect();
        assert_eq!(
            got,
            [(1, 0, Some(6)), (2, 1, Some(7)), (3, 2, None), (3, 1, None), (3, 0, Some(8)), (4, 3, None), (4, 0, None)]
        );
        assert_eq!(teacher_steps(&LabelTree::single(0)), [Step { prefix: 1, node: 0, child: None }]);
    }

    #[test]
    fn tree_encoder_matches_straight_line_oracle() {
        let target = toy_target(3, 11);
        let gen = toy_generator(&target, &["c1ccccc1", "C1CC1"], GeneratorConfig::default());
        // path 0 ─ 1 ─ 2
        let tree = LabelTree { labels: vec![0, 2, 1], parent: vec![None, Some(0), Some(1)] };
        let ex = example(&gen, &target, tree.clone(), &["c1ccccc1", "CC", "C1CC1"], "c1ccccc1CC1CC1");
        let (h, z) = gen.encode_tree::<ChaCha20Rng>(&tree, &ex.features, None).unwrap();

        let p = |name: &str| gen.params.value(gen.params.find(name).unwrap()).clone();
        let x: Vec<Vec<f64>> = (0..3).map(|i| ex.features.row(i).to_vec()).collect();
        let deg = [2.0f64, 3.0, 2.0];
        let adj = [(0usize, 1usize), (1, 2)];
        let layer = |h: &[Vec<f64>], w: &Tensor, b: &Tensor, relu: bool| -> Vec<Vec<f64>> {
            let xw: Vec<Vec<f64>> = h.iter().map(|r| (0..3).map(|j| (0..3).map(|k| r[k] * w.get(k, j)).sum()).collect()).collect();
            (0..3)
                .map(|i| {
                    (0..3)
                        .map(|j| {
                            let mut v = xw[i][j] / deg[i];
                            for &(a, c) in &adj {
                                if a == i {
                                    v += xw[c][j] / (deg[i] * deg[c]).sqrt();
                                }
                                if c == i {
                                    v += xw[a][j] / (deg[i] * deg[a]).sqrt();
                                }
                            }
                            let v = v + b.get(0, j);
                            if relu { v.max(0.0) } else { v }
                        })
                        .collect()
                })
                .collect()
        };
        let h1 = layer(&x, &p("gnn0.w"), &p("gnn0.b"), true);
        let h2 = layer(&h1, &p("gnn1.w"), &p("gnn1.b"), false);
        let mean: Vec<f64> = (0..3).map(|j| h2.iter().map(|r| r[j]).sum::<f64>() / 3.0).collect();
        for j in 0..3 {
            assert!((h[j] - mean[j]).abs() < 1e-12);
        }
        let (w, b) = (p("tree.mu.w"), p("tree.mu.b"));
        for j in 0..3 {
            let mu: f64 = (0..3).map(|k| mean[k] * w.get(k, j)).sum::<f64>() + b.get(0, j);
            assert!((z[j] - mu).abs() < 1e-12);
        }

        // cluster-order permutation leaves h_T alone
        let swapped = LabelTree { labels: vec![1, 2, 0], parent: vec![None, Some(0), Some(1)] };
        let rev = example(&gen, &target, swapped.clone(), &["C1CC1", "CC", "c1ccccc1"], "c1ccccc1CC1CC1");
        let (h2, _) = gen.encode_tree::<ChaCha20Rng>(&swapped, &rev.features, None).unwrap();
        for j in 0..3 {
            assert!((h[j] - h2[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_cluster_tree_encoding() {
        let target = toy_target(3, 5);
        let gen = toy_generator(&target, &["c1ccccc1"], GeneratorConfig::default());
        let tree = LabelTree::single(0);
        let ex = example(&gen, &target, tree.clone(), &["c1ccccc1"], "c1ccccc1");
        let (h, _) = gen.encode_tree::<ChaCha20Rng>(&tree, &ex.features, None).unwrap();
        // one node: Â = [1], so the stack is two affine maps with a ReLU between
        let p = |name: &str| gen.params.value(gen.params.find(name).unwrap()).clone();
        let x = ex.features.row(0).to_vec();
        let aff = |v: &[f64], w: &Tensor, b: &Tensor| (0..3).map(|j| (0..3).map(|k| v[k] * w.get(k, j)).sum::<f64>() + b.get(0, j)).collect::<Vec<f64>>();
        let h1: Vec<f64> = aff(&x, &p("gnn0.w"), &p("gnn0.b")).into_iter().map(|v| v.max(0.0)).collect();
        let h2 = aff(&h1, &p("gnn1.w"), &p("gnn1.b"));
        for j in 0..3 {
            assert!((h[j] - h2[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn total_loss_gradcheck_two_clusters() {
        let target = toy_target(3, 13);
        for beta in [0.0, 0.5] {
            let mut gen = toy_generator(&target, &["c1ccccc1", "C1CC1"], GeneratorConfig { seed: 21, ..GeneratorConfig::default() });
            let tree = LabelTree { labels: vec![0, 2], parent: vec![None, Some(0)] };
            let ex = example(&gen, &target, tree, &["c1ccccc1", "CC"], "c1ccccc1C");
            let ids = gen.ids.clone();
            let noise = [0.4, -0.2, 0.9];
            let report = finite_diff_check(&mut gen.params, 1e-4, |tape, store| {
                forward(store, &ids, tape, &target, 1, &ex, LossMode::Both, beta, Some(&noise))
                    .map(|f| f.total)
                    .map_err(|e| match e {
                        GeneratorError::Nn(n) => n,
                        other => panic!("{other}"),
                    })
            })
            .unwrap();
            assert!(report.passed, "beta {beta}: {report:?}");
        }
    }

    fn fixture_corpus(smiles: &[&str]) -> (Dataset, TargetModel, Corpus) {
        let graphs = smiles.iter().map(|s| parse_smiles(s).unwrap().with_label(Some(0))).collect();
        let data = Dataset::new(graphs, 2).unwrap();
        let vocab = build_vocabulary(&data, Method::Bridge).unwrap();
        let mut target = TargetModel::init(crate::target::TargetConfig { hidden: 6, seed: 3, ..Default::default() }, data.elements.clone(), 2);
        // bias the classifier so every molecule is predicted as class 0
        let b2 = target.params.find("mlp.b2").unwrap();
        target.params.value_mut(b2).data_mut()[0] = 50.0;
        let entries = vocab.motifs.iter().enumerate().map(|(i, m)| (i, m.code.clone(), 1.0 / (1 + i) as f64)).collect();
        let cv = ClassMotifVocabulary { class: 0, theta: 0.0, entries };
        let corpus = prepare_corpus(&data, &target, &vocab, &cv, SpanningTree::MaxWeight).unwrap();
        (data, target, corpus)
    }

    #[test]
    fn corpus_trees_are_preorder_and_rooted_at_best_motif() {
        let (data, _, corpus) = fixture_corpus(&["CC1CCCCC1-c1ccccc1", "c1ccccc1CCO", "C1CC1"]);
        assert_eq!(corpus.examples.len(), data.len());
        for ex in &corpus.examples {
            assert!(ex.tree.is_preorder());
            assert_eq!(ex.features.rows(), ex.tree.len());
            assert!(ex.tree.labels[0] < corpus.alphabet.len());
        }
        assert_eq!(corpus.label_features.rows(), corpus.alphabet.len() + 1);
        assert!(corpus.edge_orders.contains(&BondOrder::Single));
    }

    #[test]
    fn overfits_a_single_molecule() {
        let (_, target, corpus) = fixture_corpus(&["CC1CCCCC1-c1ccccc1CCl"]);
        let (gen, trace) = train_generator(&corpus, &target, GeneratorConfig { epochs: 300, lr: 0.01, mode: LossMode::Reconstruction, ..Default::default() }).unwrap();
        let (child, label) = gen.teacher_forced_accuracy(&corpus.examples[0], &target).unwrap();
        assert_eq!((child, label), (1.0, 1.0), "{:?}", trace.epochs.last());
        assert!(trace.epochs.last().unwrap().recon < trace.epochs[0].recon);
        // correct predictions under the true history rebuild the tree exactly
        let ex = &corpus.examples[0];
        let (_, mu) = gen.encode_tree::<ChaCha20Rng>(&ex.tree, &ex.features, None).unwrap();
        let decoded = gen.decode_tree(&mu, crate::generator::DecodeMode::Greedy, &mut ChaCha20Rng::seed_from_u64(0)).unwrap();
        assert_eq!(decoded.tree, ex.tree);
        assert!(!decoded.truncated);
    }

    #[test]
    fn training_is_deterministic() {
        let (_, target, corpus) = fixture_corpus(&["CC1CCCCC1-c1ccccc1", "c1ccccc1CCO"]);
        let cfg = GeneratorConfig { epochs: 3, ..Default::default() };
        let a = train_generator(&corpus, &target, cfg.clone()).unwrap();
        let b = train_generator(&corpus, &target, cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn property_mode_skips_reconstruction() {
        let (_, target, corpus) = fixture_corpus(&["CC1CCCCC1-c1ccccc1"]);
        let (gen, trace) = train_generator(&corpus, &target, GeneratorConfig { epochs: 2, mode: LossMode::Property, ..Default::default() }).unwrap();
        assert!(trace.epochs.iter().all(|e| e.recon == 0.0 && e.property > 0.0));
        let obj = gen.objective(&corpus, &target).unwrap();
        assert!(obj.recon > 0.0 && (obj.total - obj.recon - obj.property).abs() < 1e-9);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let graphs = vec![parse_smiles("c1ccccc1").unwrap().with_label(Some(0))];
        let data = Dataset::new(graphs, 2).unwrap();
        let vocab = build_vocabulary(&data, Method::Bridge).unwrap();
        let mut target = TargetModel::init(crate::target::TargetConfig { hidden: 4, ..Default::default() }, data.elements.clone(), 2);
        let b2 = target.params.find("mlp.b2").unwrap();
        target.params.value_mut(b2).data_mut()[1] = 50.0;
        let cv = ClassMotifVocabulary { class: 0, theta: 0.0, entries: vec![(0, vocab.motifs[0].code.clone(), 1.0)] };
        assert_eq!(prepare_corpus(&data, &target, &vocab, &cv, SpanningTree::MaxWeight), Err(GeneratorError::EmptyCorpus(0)));
    }
}
