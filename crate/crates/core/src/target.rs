//! The classifier under explanation: a three-layer GCN feature extractor
//! with mean pooling, followed by a two-layer MLP head.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::chem::{Dataset, Element, MolecularGraph};
use crate::nn::{kernels, Adam, GcnGraph, NnError, ParamId, ParamStore, Tape, Tensor, Var};

pub const GCN_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TargetError {
    #[error("element {0} is not in the model alphabet")]
    UnknownElement(Element),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("graph {0} has no label")]
    Unlabeled(usize),
    #[error("training labels cover a single class")]
    SingleClass,
    #[error("expected a {expected}-dimensional embedding, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("model sidecar: {0}")]
    Sidecar(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    /// `None` trains on the full dataset per step
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// learn the per-bond-order message gates; frozen at 1 otherwise
    pub learn_gates: bool,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self { hidden: 64, lr: 0.01, epochs: 100, batch_size: None, seed: 0, learn_gates: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ids {
    w: [ParamId; GCN_LAYERS],
    b: [ParamId; GCN_LAYERS],
    gates: [ParamId; GCN_LAYERS],
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct TargetModel {
    pub config: TargetConfig,
    /// one-hot feature alphabet, sorted
    pub elements: Vec<Element>,
    pub num_classes: usize,
    pub params: ParamStore,
    ids: Ids,
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
    pub accuracy: f64,
}

impl TargetModel {
    /// Freshly initialised model (Glorot weights, zero biases, unit gates).
    pub fn init(config: TargetConfig, elements: Vec<Element>, num_classes: usize) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let d = config.hidden;
        let mut params = ParamStore::new();
        let mut layer = |i: usize, fan_in: usize, params: &mut ParamStore| {
            let w = params.add(&format!("gcn{i}.w"), Tensor::glorot(fan_in, d, &mut rng));
            let b = params.add(&format!("gcn{i}.b"), Tensor::zeros(1, d));
            let g = params.add(&format!("gcn{i}.gates"), Tensor::full(1, 4, 1.0));
            params.set_trainable(g, config.learn_gates);
            (w, b, g)
        };
        let l0 = layer(0, elements.len(), &mut params);
        let l1 = layer(1, d, &mut params);
        let l2 = layer(2, d, &mut params);
        let w1 = params.add("mlp.w1", Tensor::glorot(d, d, &mut rng));
        let b1 = params.add("mlp.b1", Tensor::zeros(1, d));
        let w2 = params.add("mlp.w2", Tensor::glorot(d, num_classes, &mut rng));
        let b2 = params.add("mlp.b2", Tensor::zeros(1, num_classes));
        let ids = Ids {
            w: [l0.0, l1.0, l2.0],
            b: [l0.1, l1.1, l2.1],
            gates: [l0.2, l1.2, l2.2],
            w1,
            b1,
            w2,
            b2,
        };
        Self { config, elements, num_classes, params, ids }
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn features(&self, graph: &MolecularGraph) -> Result<Tensor, TargetError> {
        let k = self.elements.len();
        let mut x = Tensor::zeros(graph.atom_count(), k);
        for (i, &el) in graph.atoms().iter().enumerate() {
            let c = self.elements.binary_search(&el).map_err(|_| TargetError::UnknownElement(el))?;
            x.data_mut()[i * k + c] = 1.0;
        }
        Ok(x)
    }

    /// φ: mean-pooled node states after the third layer.
    pub fn embed(&self, graph: &MolecularGraph) -> Result<Vec<f64>, TargetError> {
        let mut h = self.features(graph)?;
        let structure = GcnGraph::from_molecule(graph);
        for l in 0..GCN_LAYERS {
            let xw = kernels::matmul(&h, self.params.value(self.ids.w[l]))?;
            let prop = kernels::gcn_propagate(&structure, &xw, Some(self.params.value(self.ids.gates[l])))?;
            h = kernels::relu(&kernels::add_row(&prop, self.params.value(self.ids.b[l]))?);
        }
        Ok(kernels::mean_rows(&h).into_data())
    }

    pub fn logits(&self, embedding: &[f64]) -> Result<Vec<f64>, TargetError> {
        if embedding.len() != self.hidden() {
            return Err(TargetError::Dimension { expected: self.hidden(), got: embedding.len() });
        }
        let h = Tensor::row_vector(embedding.to_vec());
        let z = kernels::add_row(&kernels::matmul(&h, self.params.value(self.ids.w1))?, self.params.value(self.ids.b1))?;
        let z = kernels::relu(&z);
        let out = kernels::add_row(&kernels::matmul(&z, self.params.value(self.ids.w2))?, self.params.value(self.ids.b2))?;
        Ok(out.into_data())
    }

    /// f: class distribution for an embedding.
    pub fn classify(&self, embedding: &[f64]) -> Result<Vec<f64>, TargetError> {
        let logits = self.logits(embedding)?;
        Ok(kernels::softmax_rows(&Tensor::row_vector(logits)).into_data())
    }

    pub fn predict(&self, graph: &MolecularGraph) -> Result<Vec<f64>, TargetError> {
        self.classify(&self.embed(graph)?)
    }

    pub fn predicted_class(&self, graph: &MolecularGraph) -> Result<usize, TargetError> {
        Ok(argmax(&self.predict(graph)?))
    }

    /// f(φ(G))[r]
    pub fn class_probability(&self, graph: &MolecularGraph, class: usize) -> Result<f64, TargetError> {
        Ok(self.predict(graph)?[class])
    }

    /// φ on a tape. Parameters are bound trainable unless `frozen`.
    pub fn embed_on_tape(&self, tape: &mut Tape, graph: &MolecularGraph, frozen: bool) -> Result<Var, TargetError> {
        self.embed_with(&self.params, tape, graph, frozen)
    }

    /// f's logits on a tape for a `1 × d` embedding variable.
    pub fn logits_on_tape(&self, tape: &mut Tape, h: Var, frozen: bool) -> Result<Var, TargetError> {
        self.logits_with(&self.params, tape, h, frozen)
    }

    /// Training loss of one labelled graph (cross-entropy), trainable binding.
    pub fn loss_on_tape(&self, tape: &mut Tape, graph: &MolecularGraph, label: usize) -> Result<Var, TargetError> {
        self.loss_with(&self.params, tape, graph, label)
    }

    fn embed_with(&self, store: &ParamStore, tape: &mut Tape, graph: &MolecularGraph, frozen: bool) -> Result<Var, TargetError> {
        let bind = |tape: &mut Tape, id| if frozen { tape.frozen(store, id) } else { tape.param(store, id) };
        let mut h = tape.constant(self.features(graph)?);
        let structure = Rc::new(GcnGraph::from_molecule(graph));
        for l in 0..GCN_LAYERS {
            let w = bind(tape, self.ids.w[l]);
            let b = bind(tape, self.ids.b[l]);
            let g = bind(tape, self.ids.gates[l]);
            let z = tape.gcn_layer(structure.clone(), h, w, Some(b), Some(g))?;
            h = tape.relu(z);
        }
        Ok(tape.mean_rows(h))
    }

    fn logits_with(&self, store: &ParamStore, tape: &mut Tape, h: Var, frozen: bool) -> Result<Var, TargetError> {
        let bind = |tape: &mut Tape, id| if frozen { tape.frozen(store, id) } else { tape.param(store, id) };
        let (w1, b1, w2, b2) = (bind(tape, self.ids.w1), bind(tape, self.ids.b1), bind(tape, self.ids.w2), bind(tape, self.ids.b2));
        let z = tape.matmul(h, w1)?;
        let z = tape.add_row(z, b1)?;
        let z = tape.relu(z);
        let out = tape.matmul(z, w2)?;
        Ok(tape.add_row(out, b2)?)
    }

    /// Finite-difference check of the cross-entropy gradient through the
    /// whole GCN stack and MLP head, on one labelled graph.
    pub fn gradient_check(&mut self, graph: &MolecularGraph, label: usize, tolerance: f64) -> Result<crate::nn::GradReport, TargetError> {
        self.features(graph)?;
        if label >= self.num_classes {
            return Err(TargetError::Dimension { expected: self.num_classes, got: label + 1 });
        }
        let mut store = core::mem::take(&mut self.params);
        let report = crate::nn::finite_diff_check(&mut store, tolerance, |tape, s| {
            self.loss_with(s, tape, graph, label).map_err(|e| match e {
                TargetError::Nn(n) => n,
                other => unreachable!("inputs validated: {other}"),
            })
        });
        self.params = store;
        Ok(report?)
    }

    fn loss_with(&self, store: &ParamStore, tape: &mut Tape, graph: &MolecularGraph, label: usize) -> Result<Var, TargetError> {
        let h = self.embed_with(store, tape, graph, false)?;
        let logits = self.logits_with(store, tape, h, false)?;
        let mut onehot = Tensor::zeros(1, self.num_classes);
        onehot.data_mut()[label] = 1.0;
        Ok(tape.soft_cross_entropy(logits, onehot)?)
    }

    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64, TargetError> {
        if dataset.is_empty() {
            return Err(TargetError::EmptyDataset);
        }
        let mut hits = 0;
        for (i, g) in dataset.graphs.iter().enumerate() {
            let label = g.label.ok_or(TargetError::Unlabeled(i))?;
            if self.predicted_class(g)? == label {
                hits += 1;
            }
        }
        Ok(hits as f64 / dataset.len() as f64)
    }

    /// Text sidecar: alphabet, sizes and training config, one `key=value` per line.
    pub fn sidecar(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let elements: Vec<&str> = self.elements.iter().map(|e| e.as_str()).collect();
        let _ = writeln!(out, "format=mage-target 1");
        let _ = writeln!(out, "hidden={}", c.hidden);
        let _ = writeln!(out, "classes={}", self.num_classes);
        let _ = writeln!(out, "elements={}", elements.join(","));
        let _ = writeln!(out, "lr={:?}", c.lr);
        let _ = writeln!(out, "epochs={}", c.epochs);
        let _ = writeln!(out, "batch_size={}", c.batch_size.map_or("full".to_string(), |b| b.to_string()));
        let _ = writeln!(out, "seed={}", c.seed);
        let _ = writeln!(out, "learn_gates={}", c.learn_gates);
        out
    }

    /// Rebuilds a model from checkpoint bytes and its sidecar.
    pub fn from_checkpoint(bytes: &[u8], sidecar: &str) -> Result<Self, TargetError> {
        let kv = parse_sidecar(sidecar)?;
        let get = |k: &str| kv.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str()).ok_or_else(|| TargetError::Sidecar(format!("missing {k}")));
        if get("format")? != "mage-target 1" {
            return Err(TargetError::Sidecar("unsupported format".into()));
        }
        let num = |k: &str| -> Result<usize, TargetError> { get(k)?.parse().map_err(|_| TargetError::Sidecar(format!("bad {k}"))) };
        let elements = get("elements")?;
        let elements = if elements.is_empty() {
            Vec::new()
        } else {
            elements
                .split(',')
                .map(Element::new)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| TargetError::Sidecar("bad elements".into()))?
        };
        let batch = get("batch_size")?;
        let config = TargetConfig {
            hidden: num("hidden")?,
            lr: get("lr")?.parse().map_err(|_| TargetError::Sidecar("bad lr".into()))?,
            epochs: num("epochs")?,
            batch_size: if batch == "full" { None } else { Some(num("batch_size")?) },
            seed: get("seed")?.parse().map_err(|_| TargetError::Sidecar("bad seed".into()))?,
            learn_gates: get("learn_gates")? == "true",
        };
        let mut model = TargetModel::init(config, elements, num("classes")?);
        let stored = ParamStore::from_bytes(bytes)?;
        model.params.load_values(&stored)?;
        Ok(model)
    }
}

fn parse_sidecar(text: &str) -> Result<Vec<(String, String)>, TargetError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().into(), v.trim().into()))
                .ok_or_else(|| TargetError::Sidecar(format!("malformed line `{l}`")))
        })
        .collect()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy training with Adam over a fixed dataset order.
pub fn train_target(dataset: &Dataset, config: TargetConfig) -> Result<(TargetModel, TrainTrace), TargetError> {
    if dataset.is_empty() {
        return Err(TargetError::EmptyDataset);
    }
    let mut labels = Vec::with_capacity(dataset.len());
    for (i, g) in dataset.graphs.iter().enumerate() {
        labels.push(g.label.ok_or(TargetError::Unlabeled(i))?);
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(TargetError::SingleClass);
    }
    let mut model = TargetModel::init(config.clone(), dataset.elements.clone(), dataset.num_classes);
    let adam = Adam::new(config.lr);
    let batch = config.batch_size.unwrap_or(dataset.len()).max(1);
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut total = 0.0;
        for (chunk_graphs, chunk_labels) in dataset.graphs.chunks(batch).zip(labels.chunks(batch)) {
            let scale = 1.0 / chunk_graphs.len() as f64;
            for (g, &y) in chunk_graphs.iter().zip(chunk_labels) {
                let mut tape = Tape::new();
                let loss = model.loss_on_tape(&mut tape, g, y)?;
                let scaled = tape.scale(loss, scale);
                let grads = tape.backward(scaled)?;
                model.params.accumulate(&tape, &grads);
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(NnError::NonFinite("training loss".into()).into());
                }
                total += value;
            }
            adam.step(&mut model.params);
        }
        losses.push(total / dataset.len() as f64);
    }
    let accuracy = model.accuracy(dataset)?;
    Ok((model, TrainTrace { losses, accuracy }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use crate::nn::finite_diff_check;
    use alloc::vec;

    fn toy() -> Dataset {
        // class 1 carries oxygen, class 0 only carbon and nitrogen
        let zero = ["CCCC", "CC(C)C", "C1CCCCC1", "CCNCC", "NCCN", "C1=CC=CC=C1", "CCCCCC", "CNC"];
        let one = ["CCO", "OCCO", "CC(=O)C", "C1CCOC1", "OC1CCCC1", "CCCOC", "O=CC=O", "CO"];
        let mut graphs = Vec::new();
        for s in zero {
            graphs.push(parse_smiles(s).unwrap().with_label(Some(0)));
        }
        for s in one {
            graphs.push(parse_smiles(s).unwrap().with_label(Some(1)));
        }
        Dataset::new(graphs, 2).unwrap()
    }

    fn small(seed: u64) -> TargetConfig {
        TargetConfig { hidden: 8, seed, ..TargetConfig::default() }
    }

    #[test]
    fn embedding_is_permutation_invariant() {
        let data = toy();
        let model = TargetModel::init(small(1), data.elements.clone(), 2);
        let g = parse_smiles("CC(=O)NC1=CC=CC=C1").unwrap();
        let perm: Vec<usize> = (0..g.atom_count()).rev().collect();
        let a = model.embed(&g).unwrap();
        let b = model.embed(&g.permuted(&perm)).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        let c = model.embed(&parse_smiles("C1=CC=C(C=C1)NC(C)=O").unwrap()).unwrap();
        assert!(a.iter().zip(&c).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn single_atom_matches_straight_line_oracle() {
        let data = toy();
        let model = TargetModel::init(small(2), data.elements.clone(), 2);
        let g = parse_smiles("O").unwrap();
        // one node, self loop only: h ← relu(h W + b), starting from one-hot(O)
        let col = data.elements.iter().position(|e| e.as_str() == "O").unwrap();
        let p = &model.params;
        let d = 8;
        let mut h: Vec<f64> = (0..d).map(|j| p.value(model.ids.w[0]).get(col, j)).collect();
        for j in 0..d {
            h[j] = (h[j] + p.value(model.ids.b[0]).data()[j]).max(0.0);
        }
        for l in 1..3 {
            let w = p.value(model.ids.w[l]);
            let mut next = vec![0.0; d];
            for j in 0..d {
                let mut s = p.value(model.ids.b[l]).data()[j];
                for i in 0..d {
                    s += h[i] * w.get(i, j);
                }
                next[j] = s.max(0.0);
            }
            h = next;
        }
        let e = model.embed(&g).unwrap();
        assert!(e.iter().zip(&h).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn classify_is_a_distribution() {
        let data = toy();
        let mut model = TargetModel::init(small(3), data.elements.clone(), 2);
        let p = model.classify(&[0.3, -1.0, 2.0, 0.0, 1.0, 5.0, -2.0, 0.1]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(matches!(model.classify(&[1.0]), Err(TargetError::Dimension { expected: 8, got: 1 })));
        for id in [model.ids.w1, model.ids.b1, model.ids.w2, model.ids.b2] {
            model.params.value_mut(id).data_mut().fill(0.0);
        }
        assert_eq!(model.classify(&[1.0; 8]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn classify_matches_hand_arithmetic() {
        let mut model = TargetModel::init(TargetConfig { hidden: 2, ..small(0) }, vec![crate::chem::el("C")], 2);
        let set = |m: &mut TargetModel, id, rows: &[Vec<f64>]| *m.params.value_mut(id) = Tensor::from_rows(rows).unwrap();
        let ids = model.ids;
        set(&mut model, ids.w1, &[vec![1.0, -1.0], vec![2.0, 0.5]]);
        set(&mut model, ids.b1, &[vec![0.0, 0.25]]);
        set(&mut model, ids.w2, &[vec![1.0, 0.0], vec![0.0, 2.0]]);
        set(&mut model, ids.b2, &[vec![0.5, -0.5]]);
        // h = [1, 1]: z = relu([3, -0.25]) = [3, 0]; logits = [3.5, -0.5]
        let p = model.classify(&[1.0, 1.0]).unwrap();
        let e = libm::exp(4.0);
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn toy_is_separable_and_learned() {
        let data = toy();
        // oracle: logistic regression on element counts reaches zero training error
        let counts: Vec<(Vec<f64>, f64)> = data
            .graphs
            .iter()
            .map(|g| {
                let f = data.elements.iter().map(|e| g.atoms().iter().filter(|a| *a == e).count() as f64).collect();
                (f, g.label.unwrap() as f64)
            })
            .collect();
        let mut w = vec![0.0; data.elements.len() + 1];
        for _ in 0..2000 {
            let mut grad = vec![0.0; w.len()];
            for (x, y) in &counts {
                let z = w[0] + x.iter().zip(&w[1..]).map(|(a, b)| a * b).sum::<f64>();
                let p = kernels::sigmoid_scalar(z);
                grad[0] += p - y;
                for (k, xi) in x.iter().enumerate() {
                    grad[k + 1] += (p - y) * xi;
                }
            }
            for (wi, gi) in w.iter_mut().zip(&grad) {
                *wi -= 0.1 * gi;
            }
        }
        for (x, y) in &counts {
            let z = w[0] + x.iter().zip(&w[1..]).map(|(a, b)| a * b).sum::<f64>();
            assert_eq!((z > 0.0) as u8 as f64, *y);
        }
        let (model, trace) = train_target(&data, TargetConfig { hidden: 16, ..small(4) }).unwrap();
        assert_eq!(trace.losses.len(), 100);
        assert!(trace.losses.iter().all(|l| l.is_finite()));
        assert_eq!(trace.accuracy, 1.0);
        assert_eq!(model.accuracy(&data).unwrap(), 1.0);
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let data = toy();
        let cfg = TargetConfig { epochs: 0, ..small(9) };
        let (model, trace) = train_target(&data, cfg.clone()).unwrap();
        assert!(trace.losses.is_empty());
        let init = TargetModel::init(cfg, data.elements.clone(), 2);
        assert_eq!(model.params.to_bytes(), init.params.to_bytes());
    }

    #[test]
    fn deterministic_training() {
        let data = toy();
        let cfg = TargetConfig { epochs: 5, batch_size: Some(5), ..small(7) };
        let (a, _) = train_target(&data, cfg.clone()).unwrap();
        let (b, _) = train_target(&data, cfg).unwrap();
        assert_eq!(a.params.to_bytes(), b.params.to_bytes());
    }

    #[test]
    fn rejects_bad_training_sets() {
        let one = Dataset::new(vec![parse_smiles("CC").unwrap().with_label(Some(0)); 3], 2).unwrap();
        assert!(matches!(train_target(&one, small(0)), Err(TargetError::SingleClass)));
        let empty = Dataset::new(Vec::new(), 2).unwrap();
        assert!(matches!(train_target(&empty, small(0)), Err(TargetError::EmptyDataset)));
        let model = TargetModel::init(small(0), toy().elements, 2);
        assert!(matches!(model.embed(&parse_smiles("CS").unwrap()), Err(TargetError::UnknownElement(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let data = toy();
        let (model, _) = train_target(&data, TargetConfig { epochs: 3, ..small(5) }).unwrap();
        let back = TargetModel::from_checkpoint(&model.params.to_bytes(), &model.sidecar()).unwrap();
        assert_eq!(back.config, model.config);
        for g in data.graphs.iter().take(10) {
            assert_eq!(model.embed(g).unwrap(), back.embed(g).unwrap());
        }
        let mut bad = model.params.to_bytes();
        bad[3] ^= 0xff;
        assert!(TargetModel::from_checkpoint(&bad, &model.sidecar()).is_err());
        let other = model.sidecar().replace("hidden=8", "hidden=16");
        assert!(TargetModel::from_checkpoint(&model.params.to_bytes(), &other).is_err());
    }

    #[test]
    fn gcn_stack_gradients() {
        let data = toy();
        let mut model = TargetModel::init(TargetConfig { hidden: 4, ..small(6) }, data.elements.clone(), 2);
        let g = parse_smiles("CC(=O)N1CC1").unwrap();
        let mut store = core::mem::take(&mut model.params);
        let report = finite_diff_check(&mut store, 1e-4, |tape, s| Ok(model.loss_with(s, tape, &g, 1).unwrap())).unwrap();
        assert!(report.passed, "{report:?}");
    }
}
