//! Explanation metrics: validity, average class probability and novelty.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::chem::{canonical_code_with_cap, check_valence, ChemError, MolecularGraph, ValenceTable};
use crate::generator::SampleRecord;
use crate::motif::{MotifVocabulary, VOCAB_CANON_CAP};
use crate::motif_id::{variant_vocabulary, ClassMotifVocabulary, MotifIdError};
use crate::target::{TargetError, TargetModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    MotifId(#[from] MotifIdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdMode {
    #[default]
    Population,
    /// Bessel-corrected; one sample gives 0
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validity {
    pub attempted: usize,
    pub valid: usize,
    /// attempts that produced no graph
    pub failures: usize,
    /// valid / attempted
    pub strict: f64,
    /// valid / attempts that produced a graph
    pub conditional: f64,
}

/// Valence-valid and connected.
pub fn is_valid(graph: &MolecularGraph, table: &ValenceTable) -> Result<bool, EvalError> {
    Ok(graph.atom_count() > 0 && graph.is_connected() && check_valence(graph, table)?)
}

pub fn validity(samples: &[Option<&MolecularGraph>], table: &ValenceTable) -> Result<Validity, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut valid = 0;
    let mut failures = 0;
    for s in samples {
        match s {
            Some(g) if is_valid(g, table)? => valid += 1,
            Some(_) => {}
            None => failures += 1,
        }
    }
    let attempted = samples.len();
    let produced = attempted - failures;
    Ok(Validity {
        attempted,
        valid,
        failures,
        strict: valid as f64 / attempted as f64,
        conditional: if produced == 0 { 0.0 } else { valid as f64 / produced as f64 },
    })
}

/// Mean and standard deviation of f(φ(G))[class].
pub fn average_probability(graphs: &[&MolecularGraph], target: &TargetModel, class: usize, std: StdMode) -> Result<(f64, f64), EvalError> {
    if graphs.is_empty() {
        return Err(EvalError::Empty);
    }
    let probs: Vec<f64> = graphs.iter().map(|g| target.class_probability(g, class)).collect::<Result<_, _>>()?;
    Ok(mean_std(&probs, std))
}

pub fn mean_std(values: &[f64], std: StdMode) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let denom = match std {
        StdMode::Population => n,
        StdMode::Sample if values.len() > 1 => n - 1.0,
        StdMode::Sample => return (mean, 0.0),
    };
    (mean, libm::sqrt(ss / denom))
}

pub fn code_set<'a>(graphs: impl IntoIterator<Item = &'a MolecularGraph>) -> Result<BTreeSet<String>, EvalError> {
    Ok(graphs
        .into_iter()
        .map(|g| canonical_code_with_cap(g, VOCAB_CANON_CAP))
        .collect::<Result<_, _>>()?)
}

/// Fraction of samples not isomorphic to any training graph; 1 for no samples.
pub fn novelty(samples: &[&MolecularGraph], training: &BTreeSet<String>) -> Result<f64, EvalError> {
    if samples.is_empty() {
        return Ok(1.0);
    }
    let mut novel = 0;
    for g in samples {
        if !training.contains(&canonical_code_with_cap(g, VOCAB_CANON_CAP)?) {
            novel += 1;
        }
    }
    Ok(novel as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub class: usize,
    pub samples: usize,
    pub failures: usize,
    pub strict_validity: f64,
    pub conditional_validity: f64,
    /// over valid samples; NaN when there are none
    pub prob_mean: f64,
    pub prob_std: f64,
    pub novelty: f64,
    pub seed: u64,
    pub config_digest: String,
}

pub fn evaluate_samples(
    records: &[SampleRecord],
    target: &TargetModel,
    class: usize,
    training: &BTreeSet<String>,
    seed: u64,
    config_digest: &str,
) -> Result<MetricsReport, EvalError> {
    let table = ValenceTable::default();
    let graphs: Vec<Option<&MolecularGraph>> = records.iter().map(|r| r.graph.as_ref()).collect();
    let v = validity(&graphs, &table)?;
    let mut valid = Vec::with_capacity(v.valid);
    for g in graphs.iter().flatten() {
        if is_valid(g, &table)? {
            valid.push(*g);
        }
    }
    let (prob_mean, prob_std) = if valid.is_empty() { (f64::NAN, f64::NAN) } else { average_probability(&valid, target, class, StdMode::Population)? };
    Ok(MetricsReport {
        class,
        samples: records.len(),
        failures: v.failures,
        strict_validity: v.strict,
        conditional_validity: v.conditional,
        prob_mean,
        prob_std,
        novelty: novelty(&valid, training)?,
        seed,
        config_digest: config_digest.into(),
    })
}

/// Motif selection baseline: each motif scored alone by the target model.
pub fn variant_pipeline(target: &TargetModel, vocab: &MotifVocabulary, class: usize) -> Result<ClassMotifVocabulary, EvalError> {
    Ok(variant_vocabulary(target, vocab, class)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{parse_smiles, Dataset, Element};
    use crate::motif::{build_vocabulary, Method};
    use crate::motif_id::{compute_class_scores, filter_motifs, score_matrices, AttentionOperator};
    use crate::nn::Tensor;
    use crate::target::TargetConfig;
    use alloc::vec;
    use proptest::prelude::*;

    fn graphs(smiles: &[&str]) -> Vec<MolecularGraph> {
        smiles.iter().map(|s| parse_smiles(s).unwrap()).collect()
    }

    #[test]
    fn validity_counts() {
        let t = ValenceTable::default();
        let gs = graphs(&["CCO"; 10]);
        let all: Vec<Option<&MolecularGraph>> = gs.iter().map(Some).collect();
        let v = validity(&all, &t).unwrap();
        assert_eq!((v.strict, v.conditional, v.failures), (1.0, 1.0, 0));

        let mut bad = MolecularGraph::new();
        let c = bad.add_atom(Element::new("C").unwrap());
        for _ in 0..5 {
            let h = bad.add_atom(Element::new("Cl").unwrap());
            bad.add_bond(c, h, crate::chem::BondOrder::Single).unwrap();
        }
        let split = graphs(&["C.C"]);
        let v = validity(&[Some(&bad), Some(&split[0]), None, None], &t).unwrap();
        assert_eq!((v.valid, v.failures, v.strict, v.conditional), (0, 2, 0.0, 0.0));
        let v = validity(&[Some(&gs[0]), None], &t).unwrap();
        assert_eq!((v.strict, v.conditional), (0.5, 1.0));
        assert_eq!(validity(&[], &t), Err(EvalError::Empty));
    }

    fn uniform_target(elements: Vec<Element>, classes: usize) -> TargetModel {
        let mut m = TargetModel::init(TargetConfig { hidden: 4, ..TargetConfig::default() }, elements, classes);
        let w2 = m.params.find("mlp.w2").unwrap();
        m.params.value_mut(w2).data_mut().iter_mut().for_each(|v| *v = 0.0);
        m
    }

    #[test]
    fn uniform_model_probability() {
        let gs = graphs(&["CCO", "c1ccccc1", "CN"]);
        let els = Dataset::new(gs.clone(), 3).unwrap().elements;
        let m = uniform_target(els, 3);
        let refs: Vec<&MolecularGraph> = gs.iter().collect();
        let (mean, std) = average_probability(&refs, &m, 1, StdMode::Population).unwrap();
        assert!((mean - 1.0 / 3.0).abs() < 1e-12 && std < 1e-12);
        let (_, s) = average_probability(&refs[..1], &m, 0, StdMode::Sample).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn std_conventions() {
        let (m, p) = mean_std(&[1.0, 3.0], StdMode::Population);
        let (_, s) = mean_std(&[1.0, 3.0], StdMode::Sample);
        assert_eq!((m, p), (2.0, 1.0));
        assert!((s - libm::sqrt(2.0)).abs() < 1e-15);
    }

    #[test]
    fn novelty_extremes() {
        let train = graphs(&["CCO", "c1ccccc1"]);
        let codes = code_set(&train).unwrap();
        // a relabelled copy is still a copy
        let copy = train[0].permuted(&[2, 1, 0]);
        assert_eq!(novelty(&[&copy, &train[1]], &codes).unwrap(), 0.0);
        let fresh = graphs(&["CCN", "C1CC1"]);
        assert_eq!(novelty(&fresh.iter().collect::<Vec<_>>(), &codes).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn probability_ignores_order(seed in 0u64..50, rot in 0usize..5) {
            let gs = graphs(&["CCO", "c1ccccc1", "CN", "OC=O", "C1CC1N"]);
            let els = Dataset::new(gs.clone(), 2).unwrap().elements;
            let m = TargetModel::init(TargetConfig { hidden: 4, seed, ..TargetConfig::default() }, els, 2);
            let mut refs: Vec<&MolecularGraph> = gs.iter().collect();
            let (a, sa) = average_probability(&refs, &m, 0, StdMode::Population).unwrap();
            refs.rotate_left(rot);
            refs.reverse();
            let (b, sb) = average_probability(&refs, &m, 0, StdMode::Population).unwrap();
            prop_assert!((a - b).abs() < 1e-12 && (sa - sb).abs() < 1e-12);
        }

        #[test]
        fn novelty_shrinks_as_training_grows(k in 0usize..6) {
            let pool = graphs(&["CCO", "CCN", "C1CC1", "c1ccccc1", "CC=O", "OCCO"]);
            let samples: Vec<&MolecularGraph> = pool.iter().collect();
            let small = code_set(&pool[..k]).unwrap();
            let large = code_set(&pool[..(k + 1).min(pool.len())]).unwrap();
            prop_assert!(novelty(&samples, &large).unwrap() <= novelty(&samples, &small).unwrap());
        }
    }

    /// Target whose class-1 logit grows with the oxygen signal in φ.
    /// Hidden unit 0 carries O, unit 1 carries C.
    fn oxygen_target(elements: Vec<Element>, k_weight: f64, bias: f64) -> TargetModel {
        let mut m = TargetModel::init(TargetConfig { hidden: 4, ..TargetConfig::default() }, elements.clone(), 2);
        let set = |m: &mut TargetModel, name: &str, t: Tensor| {
            let id = m.params.find(name).unwrap();
            *m.params.value_mut(id) = t;
        };
        let mut w0 = Tensor::zeros(elements.len(), 4);
        for (i, e) in elements.iter().enumerate() {
            match e.as_str() {
                "O" => w0.data_mut()[i * 4] = 1.0,
                "C" => w0.data_mut()[i * 4 + 1] = 1.0,
                _ => {}
            }
        }
        set(&mut m, "gcn0.w", w0);
        set(&mut m, "gcn1.w", Tensor::identity(4));
        set(&mut m, "gcn2.w", Tensor::identity(4));
        set(&mut m, "mlp.w1", Tensor::identity(4));
        let mut w2 = Tensor::zeros(4, 2);
        w2.data_mut()[1] = k_weight;
        set(&mut m, "mlp.w2", w2);
        set(&mut m, "mlp.b2", Tensor::row_vector(vec![0.0, bias]));
        m
    }

    #[test]
    fn variant_keeps_only_confident_motifs() {
        let data = Dataset::new(graphs(&["C1CCCCC1CCO", "C1CCCCC1CCO"]).into_iter().map(|g| g.with_label(Some(0))).collect(), 2).unwrap();
        let vocab = build_vocabulary(&data, Method::Bridge).unwrap();
        let co = vocab.lookup(&crate::chem::canonical_code(&parse_smiles("CO").unwrap()).unwrap()).unwrap();
        // tune the bias so CO lands at 0.95
        let probe = oxygen_target(data.elements.clone(), 10.0, 0.0);
        let a = probe.embed(&vocab.motifs[co].graph).unwrap()[0];
        let bias = libm::log(0.95 / 0.05) - 10.0 * a;
        let m = oxygen_target(data.elements.clone(), 10.0, bias);
        let direct: Vec<f64> = vocab.motifs.iter().map(|x| m.class_probability(&x.graph, 1).unwrap()).collect();
        assert!((direct[co] - 0.95).abs() < 1e-9);
        let v = variant_pipeline(&m, &vocab, 1).unwrap();
        let expect: Vec<usize> = (0..vocab.len()).filter(|&i| direct[i] > 0.9).collect();
        assert_eq!(v.indices(), expect);
        assert_eq!(v.indices(), vec![co]);

        // uniform classifier: 1/2 < 0.9 everywhere
        let u = uniform_target(data.elements.clone(), 2);
        assert!(matches!(variant_pipeline(&u, &vocab, 0), Err(EvalError::MotifId(MotifIdError::EmptyVariantVocabulary { .. }))));
    }

    #[test]
    fn variant_and_attention_vocabularies_differ() {
        let data = Dataset::new(graphs(&["C1CCCCC1CCO", "C1CCCCC1CCCO", "C1CCCCC1"]).into_iter().map(|g| g.with_label(Some(0))).collect(), 2).unwrap();
        let vocab = build_vocabulary(&data, Method::Bridge).unwrap();
        let probe = oxygen_target(data.elements.clone(), 10.0, 0.0);
        let co = vocab.lookup(&crate::chem::canonical_code(&parse_smiles("CO").unwrap()).unwrap()).unwrap();
        let a = probe.embed(&vocab.motifs[co].graph).unwrap()[0];
        let m = oxygen_target(data.elements.clone(), 10.0, libm::log(0.95 / 0.05) - 10.0 * a);
        // sharp attention towards carbon-heavy motifs
        let mut w = Tensor::identity(4);
        w.data_mut().iter_mut().for_each(|v| *v *= 10.0);
        let op = AttentionOperator::with_weight(w);
        let scm = compute_class_scores(&score_matrices(&data, &m, &vocab, &op, false).unwrap()).unwrap();
        let mage: BTreeSet<usize> = filter_motifs(&scm, &vocab, 0.10, 1).unwrap().indices().into_iter().collect();
        let variant: BTreeSet<usize> = variant_pipeline(&m, &vocab, 1).unwrap().indices().into_iter().collect();
        assert!(variant.contains(&co));
        assert!(!mage.contains(&co));
        assert_ne!(mage, variant);
    }
}
