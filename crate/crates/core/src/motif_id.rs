//! Class-wise motif identification.
//!
//! A shared attention operator learns to rebuild each molecule's embedding
//! from its motifs' embeddings. The attention weights, combined with class
//! probabilities, give motif-class scores that are thresholded per class.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::chem::Dataset;
use crate::motif::MotifVocabulary;
use crate::nn::{kernels, Adam, NnError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::target::{TargetError, TargetModel};

pub const DEFAULT_THETA: f64 = 0.10;
/// Score bar of the single-motif classification baseline.
pub const VARIANT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MotifIdError {
    #[error("molecule has no motifs to attend over")]
    EmptyMotifSet,
    #[error("no motif scores above θ = {theta} for class {class}; try a smaller θ")]
    EmptyClassVocabulary { class: usize, theta: f64 },
    #[error("no motif reaches the variant threshold for class {class}")]
    EmptyVariantVocabulary { class: usize },
    #[error("θ must be non-negative, got {0}")]
    NegativeTheta(f64),
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("motif {0} has zero occurrences")]
    ZeroOccurrence(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Scaled dot-product attention with one projection shared by query and keys.
#[derive(Debug, Clone)]
pub struct AttentionOperator {
    pub params: ParamStore,
    w: ParamId,
    dim: usize,
}

impl AttentionOperator {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let w = params.add("attn.w", Tensor::glorot(dim, dim, &mut rng));
        Self { params, w, dim }
    }

    pub fn with_weight(w: Tensor) -> Self {
        assert_eq!(w.rows(), w.cols(), "projection must be square");
        let dim = w.rows();
        let mut params = ParamStore::new();
        let w = params.add("attn.w", w);
        Self { params, w, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight(&self) -> &Tensor {
        self.params.value(self.w)
    }

    /// Returns `(α, h')` for a molecule embedding and its motif embeddings.
    pub fn attend(&self, h_g: &[f64], motifs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), MotifIdError> {
        if motifs.is_empty() {
            return Err(MotifIdError::EmptyMotifSet);
        }
        let hm = self.motif_matrix(motifs, h_g.len())?;
        let w = self.weight();
        let q = kernels::matmul_t(&Tensor::row_vector(h_g.to_vec()), w)?;
        let k = kernels::matmul_t(&hm, w)?;
        let scale = 1.0 / libm::sqrt(self.dim as f64);
        let e = kernels::matmul_t(&q, &k)?.data().iter().map(|x| x * scale).collect();
        let alpha = kernels::softmax_rows(&Tensor::row_vector(e));
        let h = kernels::matmul(&alpha, &hm)?;
        Ok((alpha.into_data(), h.into_data()))
    }

    /// Tape version of [`attend`](Self::attend); returns `(α, h')` variables.
    /// Finite-difference check of the attention loss gradient: soft cross
    /// entropy between f on the attended embedding and f(φ(G)).
    pub fn gradient_check(&mut self, model: &TargetModel, h_g: &[f64], motifs: &[Vec<f64>], tolerance: f64) -> Result<crate::nn::GradReport, MotifIdError> {
        self.attend(h_g, motifs)?;
        let goal = Tensor::row_vector(model.classify(h_g)?);
        let mut store = core::mem::take(&mut self.params);
        let report = crate::nn::finite_diff_check(&mut store, tolerance, |tape, s| {
            let (_, h) = self.attend_on_tape(s, tape, h_g, motifs).map_err(|e| match e {
                MotifIdError::Nn(n) => n,
                other => unreachable!("inputs validated: {other}"),
            })?;
            let logits = model.logits_on_tape(tape, h, true).map_err(|e| match e {
                TargetError::Nn(n) => n,
                other => unreachable!("inputs validated: {other}"),
            })?;
            tape.soft_cross_entropy(logits, goal.clone())
        });
        self.params = store;
        Ok(report?)
    }

    pub fn attend_on_tape(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        h_g: &[f64],
        motifs: &[Vec<f64>],
    ) -> Result<(Var, Var), MotifIdError> {
        if motifs.is_empty() {
            return Err(MotifIdError::EmptyMotifSet);
        }
        let hm = tape.constant(self.motif_matrix(motifs, h_g.len())?);
        let hg = tape.constant(Tensor::row_vector(h_g.to_vec()));
        let w = tape.param(store, self.w);
        let q = tape.matmul_t(hg, w)?;
        let k = tape.matmul_t(hm, w)?;
        let e = tape.matmul_t(q, k)?;
        let e = tape.scale(e, 1.0 / libm::sqrt(self.dim as f64));
        let alpha = tape.softmax(e);
        let h = tape.matmul(alpha, hm)?;
        Ok((alpha, h))
    }

    fn motif_matrix(&self, motifs: &[Vec<f64>], d: usize) -> Result<Tensor, MotifIdError> {
        if d != self.dim || motifs.iter().any(|m| m.len() != d) {
            return Err(MotifIdError::Shape(alloc::format!("embeddings must have dimension {}", self.dim)));
        }
        Ok(Tensor::from_rows(motifs)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// P rows from f(h') (true) or from f(h_G) (false)
    pub p_from_reconstruction: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { lr: 0.01, epochs: 50, seed: 0, p_from_reconstruction: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrices {
    /// V × |G|: attention of motif p in molecule k, 0 when absent
    pub smm: Tensor,
    /// |G| × C class probabilities
    pub p: Tensor,
    /// molecules containing each motif
    pub occurrence: Vec<usize>,
    /// molecules with an empty motif set, left as zero columns and rows
    pub excluded: Vec<usize>,
}

/// Precomputed embeddings shared by training and scoring.
struct Inputs {
    h_g: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    h_m: Vec<Vec<f64>>,
}

fn inputs(dataset: &Dataset, model: &TargetModel, vocab: &MotifVocabulary) -> Result<Inputs, MotifIdError> {
    let mut h_g = Vec::with_capacity(dataset.len());
    let mut targets = Vec::with_capacity(dataset.len());
    for g in &dataset.graphs {
        let h = model.embed(g)?;
        targets.push(model.classify(&h)?);
        h_g.push(h);
    }
    let h_m = vocab.motifs.iter().map(|m| model.embed(&m.graph)).collect::<Result<_, _>>()?;
    Ok(Inputs { h_g, targets, h_m })
}

fn motif_rows(inputs: &Inputs, set: &[usize]) -> Vec<Vec<f64>> {
    set.iter().map(|&m| inputs.h_m[m].clone()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// summed loss per epoch, recorded before that epoch's update
    pub losses: Vec<f64>,
    pub final_loss: f64,
}

/// Trains the shared operator on Σ_i CE(f(h_G), f(h')) with φ and f frozen,
/// then fills the score matrices from the trained operator.
pub fn train_attention(
    dataset: &Dataset,
    model: &TargetModel,
    vocab: &MotifVocabulary,
    config: &AttentionConfig,
) -> Result<(AttentionOperator, ScoreMatrices, AttentionTrace), MotifIdError> {
    let data = inputs(dataset, model, vocab)?;
    let mut op = AttentionOperator::new(model.hidden(), config.seed);
    let adam = Adam::new(config.lr);
    let mut losses = Vec::with_capacity(config.epochs);
    let mut store = core::mem::take(&mut op.params);
    for _ in 0..config.epochs {
        let mut total = 0.0;
        for k in 0..dataset.len() {
            let set = vocab.motif_set(k);
            if set.is_empty() {
                continue;
            }
            let mut tape = Tape::new();
            let loss = molecule_loss(&op, &store, &mut tape, model, &data, k, set)?;
            total += tape.value(loss).item();
            let grads = tape.backward(loss)?;
            store.accumulate(&tape, &grads);
        }
        adam.step(&mut store);
        losses.push(total);
    }
    op.params = store;
    let matrices = score_matrices(dataset, model, vocab, &op, config.p_from_reconstruction)?;
    let final_loss = reconstruction_loss(model, vocab, &op, &data)?;
    Ok((op, matrices, AttentionTrace { losses, final_loss }))
}

fn molecule_loss(
    op: &AttentionOperator,
    store: &ParamStore,
    tape: &mut Tape,
    model: &TargetModel,
    data: &Inputs,
    k: usize,
    set: &[usize],
) -> Result<Var, MotifIdError> {
    let (_, h) = op.attend_on_tape(store, tape, &data.h_g[k], &motif_rows(data, set))?;
    let logits = model.logits_on_tape(tape, h, true)?;
    Ok(tape.soft_cross_entropy(logits, Tensor::row_vector(data.targets[k].clone()))?)
}

fn reconstruction_loss(model: &TargetModel, vocab: &MotifVocabulary, op: &AttentionOperator, data: &Inputs) -> Result<f64, MotifIdError> {
    let mut total = 0.0;
    for k in 0..data.h_g.len() {
        let set = vocab.motif_set(k);
        if set.is_empty() {
            continue;
        }
        let (_, h) = op.attend(&data.h_g[k], &motif_rows(data, set))?;
        let logp = kernels::log_softmax_rows(&Tensor::row_vector(model.logits(&h)?));
        total -= kernels::dot(logp.data(), &data.targets[k]);
    }
    Ok(total)
}

/// Attention scores and class probabilities for every molecule.
pub fn score_matrices(
    dataset: &Dataset,
    model: &TargetModel,
    vocab: &MotifVocabulary,
    op: &AttentionOperator,
    p_from_reconstruction: bool,
) -> Result<ScoreMatrices, MotifIdError> {
    let data = inputs(dataset, model, vocab)?;
    let (v, n, c) = (vocab.len(), dataset.len(), model.num_classes);
    let mut smm = Tensor::zeros(v, n);
    let mut p = Tensor::zeros(n, c);
    let mut excluded = Vec::new();
    for k in 0..n {
        let set = vocab.motif_set(k);
        if set.is_empty() {
            excluded.push(k);
            continue;
        }
        let (alpha, h) = op.attend(&data.h_g[k], &motif_rows(&data, set))?;
        for (&m, &a) in set.iter().zip(&alpha) {
            smm.data_mut()[m * n + k] = a;
        }
        let probs = if p_from_reconstruction { model.classify(&h)? } else { data.targets[k].clone() };
        p.data_mut()[k * c..(k + 1) * c].copy_from_slice(&probs);
    }
    let occurrence = vocab.motifs.iter().map(|m| m.occurrence).collect();
    Ok(ScoreMatrices { smm, p, occurrence, excluded })
}

/// `S^cm = S^mm · P`, each motif row divided by its occurrence count.
pub fn compute_class_scores(m: &ScoreMatrices) -> Result<Tensor, MotifIdError> {
    if m.occurrence.len() != m.smm.rows() {
        return Err(MotifIdError::Shape("occurrence length differs from S^mm rows".into()));
    }
    let mut scm = kernels::matmul(&m.smm, &m.p)?;
    let c = scm.cols();
    for (row, &occ) in m.occurrence.iter().enumerate() {
        if occ == 0 {
            return Err(MotifIdError::ZeroOccurrence(row));
        }
        for x in &mut scm.data_mut()[row * c..(row + 1) * c] {
            *x /= occ as f64;
        }
    }
    Ok(scm)
}

/// Motifs selected for one class, ordered by score descending then code.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMotifVocabulary {
    pub class: usize,
    pub theta: f64,
    /// (vocabulary index, code, score)
    pub entries: Vec<(usize, String, f64)>,
}

impl ClassMotifVocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, motif: usize) -> bool {
        self.entries.iter().any(|e| e.0 == motif)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn score(&self, motif: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == motif).map(|e| e.2)
    }
}

fn select(vocab: &MotifVocabulary, class: usize, theta: f64, scores: impl Iterator<Item = f64>) -> ClassMotifVocabulary {
    let mut entries: Vec<(usize, String, f64)> = scores
        .enumerate()
        .filter(|&(_, s)| s > theta)
        .map(|(i, s)| (i, vocab.motifs[i].code.clone(), s))
        .collect();
    entries.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.1.cmp(&b.1)));
    ClassMotifVocabulary { class, theta, entries }
}

/// Keeps motifs whose class-`class` score exceeds θ.
pub fn filter_motifs(
    scm: &Tensor,
    vocab: &MotifVocabulary,
    theta: f64,
    class: usize,
) -> Result<ClassMotifVocabulary, MotifIdError> {
    if !(theta >= 0.0) {
        return Err(MotifIdError::NegativeTheta(theta));
    }
    if class >= scm.cols() {
        return Err(MotifIdError::ClassOutOfRange { class, classes: scm.cols() });
    }
    if scm.rows() != vocab.len() {
        return Err(MotifIdError::Shape("S^cm rows differ from vocabulary size".into()));
    }
    let out = select(vocab, class, theta, (0..scm.rows()).map(|i| scm.get(i, class)));
    if out.is_empty() {
        return Err(MotifIdError::EmptyClassVocabulary { class, theta });
    }
    Ok(out)
}

/// Baseline selection: classify every motif alone and keep f(φ(m))[r] > 0.9.
pub fn variant_vocabulary(model: &TargetModel, vocab: &MotifVocabulary, class: usize) -> Result<ClassMotifVocabulary, MotifIdError> {
    if class >= model.num_classes {
        return Err(MotifIdError::ClassOutOfRange { class, classes: model.num_classes });
    }
    let scores = vocab
        .motifs
        .iter()
        .map(|m| model.class_probability(&m.graph, class))
        .collect::<Result<Vec<_>, _>>()?;
    let out = select(vocab, class, VARIANT_THRESHOLD, scores.into_iter());
    if out.is_empty() {
        return Err(MotifIdError::EmptyVariantVocabulary { class });
    }
    Ok(out)
}
