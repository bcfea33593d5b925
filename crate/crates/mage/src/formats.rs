//! Text artifacts: dataset files, vocabulary and score tables, sample records,
//! graph text, metrics and report tables.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};
use mage_core::chem::{
    canonical_code_with_cap, parse_smiles, write_smiles, write_smiles_unchecked, BondOrder, Dataset, Element, MolecularGraph,
    ValenceTable,
};
use mage_core::eval::MetricsReport;
use mage_core::generator::SampleRecord;
use mage_core::junction::{ClusterKind, JunctionTree};
use mage_core::motif::{MotifVocabulary, VOCAB_CANON_CAP};
use mage_core::motif_id::ClassMotifVocabulary;
use mage_core::nn::Tensor;
use serde::{Deserialize, Serialize};

pub const DATASET_HEADER: &str = "MAGE-DATASET 1";

/// `MAGE-DATASET 1`, then `classes <C>`, then one `<label|-> <SMILES>` per line.
pub fn write_dataset(ds: &Dataset) -> String {
    let mut out = format!("{DATASET_HEADER}\nclasses {}\n", ds.num_classes);
    for g in &ds.graphs {
        let label = g.label.map_or("-".to_string(), |l| l.to_string());
        let _ = writeln!(out, "{label} {}", write_smiles_unchecked(g));
    }
    out
}

pub fn read_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, l)) if l.trim() == DATASET_HEADER => {}
        _ => bail!("line 1: expected `{DATASET_HEADER}`"),
    }
    let classes = match lines.next() {
        Some((i, l)) => l
            .trim()
            .strip_prefix("classes ")
            .and_then(|c| c.trim().parse::<usize>().ok())
            .ok_or_else(|| anyhow!("line {}: expected `classes <C>`", i + 1))?,
        None => bail!("missing `classes` line"),
    };
    let mut graphs = Vec::new();
    for (i, l) in lines {
        let (label, smiles) = l.trim().split_once(char::is_whitespace).ok_or_else(|| anyhow!("line {}: expected `<label> <SMILES>`", i + 1))?;
        let label = if label == "-" { None } else { Some(label.parse::<usize>().with_context(|| format!("line {}: bad label", i + 1))?) };
        let g = parse_smiles(smiles.trim()).with_context(|| format!("line {}", i + 1))?;
        graphs.push(g.with_label(label));
    }
    Ok(Dataset::new(graphs, classes)?)
}

/// Motif table: index, canonical code, occurrence count and SMILES.
pub fn vocabulary_tsv(vocab: &MotifVocabulary) -> String {
    let mut out = String::from("index\toccurrence\tsmiles\tcode\n");
    for (i, m) in vocab.motifs.iter().enumerate() {
        let _ = writeln!(out, "{i}\t{}\t{}\t{}", m.occurrence, write_smiles_unchecked(&m.graph), m.code);
    }
    out
}

/// S^cm as a motif × class table.
pub fn scores_tsv(scm: &Tensor, vocab: &MotifVocabulary) -> String {
    let mut out = String::from("index");
    for c in 0..scm.cols() {
        let _ = write!(out, "\tclass{c}");
    }
    out.push_str("\tcode\n");
    for i in 0..scm.rows() {
        let _ = write!(out, "{i}");
        for c in 0..scm.cols() {
            let _ = write!(out, "\t{}", scm.get(i, c));
        }
        let _ = writeln!(out, "\t{}", vocab.motifs[i].code);
    }
    out
}

/// Inverse of [`scores_tsv`]: the matrix and the motif code of each row.
pub fn read_scores_tsv(text: &str) -> Result<(Tensor, Vec<String>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| anyhow!("empty score table"))?;
    let classes = header.split('\t').filter(|h| h.starts_with("class")).count();
    let mut data = Vec::new();
    let mut codes = Vec::new();
    for (k, l) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() != classes + 2 || f[0].parse::<usize>().ok() != Some(k) {
            bail!("line {}: expected index {k} and {classes} scores", k + 2);
        }
        for v in &f[1..=classes] {
            data.push(v.parse::<f64>().with_context(|| format!("line {}", k + 2))?);
        }
        codes.push(f[classes + 1].to_string());
    }
    Ok((Tensor::new(codes.len(), classes, data)?, codes))
}

pub fn class_vocabulary_tsv(cv: &ClassMotifVocabulary) -> String {
    let mut out = format!("# class {} theta {}\nindex\tscore\tcode\n", cv.class, cv.theta);
    for (i, code, s) in &cv.entries {
        let _ = writeln!(out, "{i}\t{s}\t{code}");
    }
    out
}

pub fn read_class_vocabulary(text: &str) -> Result<ClassMotifVocabulary> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| anyhow!("empty class vocabulary"))?;
    let parts: Vec<&str> = head.split_whitespace().collect();
    let (class, theta) = match parts.as_slice() {
        ["#", "class", c, "theta", t] => (c.parse()?, t.parse()?),
        _ => bail!("line 1: expected `# class <r> theta <θ>`"),
    };
    if lines.next() != Some("index\tscore\tcode") {
        bail!("line 2: expected column header");
    }
    let mut entries = Vec::new();
    for (k, l) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = l.splitn(3, '\t').collect();
        let [i, s, code] = f.as_slice() else { bail!("line {}: expected 3 columns", k + 3) };
        entries.push((i.parse()?, code.to_string(), s.parse()?));
    }
    Ok(ClassMotifVocabulary { class, theta, entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub atoms: Vec<String>,
    /// `(a, b, order name)`
    pub bonds: Vec<(usize, usize, String)>,
}

impl GraphRecord {
    pub fn from_graph(g: &MolecularGraph) -> Self {
        Self {
            atoms: g.atoms().iter().map(|e| e.as_str().to_string()).collect(),
            bonds: g.bonds().iter().map(|b| (b.a, b.b, b.order.name().to_string())).collect(),
        }
    }

    pub fn to_graph(&self) -> Result<MolecularGraph> {
        let mut g = MolecularGraph::new();
        for a in &self.atoms {
            g.add_atom(Element::new(a)?);
        }
        for (a, b, o) in &self.bonds {
            g.add_bond(*a, *b, o.parse::<BondOrder>()?)?;
        }
        Ok(g)
    }
}

/// One line of a samples JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLine {
    pub class: usize,
    pub index: usize,
    pub smiles: Option<String>,
    pub code: Option<String>,
    /// target-model probability of `class`
    pub probability: Option<f64>,
    pub graph: Option<GraphRecord>,
    pub labels: Vec<String>,
    pub tree_size: usize,
    pub retries: usize,
    pub truncated: bool,
    pub failure: Option<String>,
}

impl SampleLine {
    pub fn from_record(class: usize, r: &SampleRecord) -> Result<Self> {
        let table = ValenceTable::default();
        let (smiles, code) = match &r.graph {
            Some(g) => (
                Some(write_smiles(g, &table).unwrap_or_else(|_| write_smiles_unchecked(g))),
                Some(canonical_code_with_cap(g, VOCAB_CANON_CAP)?),
            ),
            None => (None, None),
        };
        Ok(Self {
            class,
            index: r.index,
            smiles,
            code,
            probability: r.score,
            graph: r.graph.as_ref().map(GraphRecord::from_graph),
            labels: r.labels.clone(),
            tree_size: r.tree_size,
            retries: r.retries,
            truncated: r.truncated,
            failure: r.failure.clone(),
        })
    }

    pub fn to_graph(&self) -> Result<Option<MolecularGraph>> {
        self.graph.as_ref().map(GraphRecord::to_graph).transpose()
    }

    pub fn to_record(&self) -> Result<SampleRecord> {
        Ok(SampleRecord {
            index: self.index,
            graph: self.to_graph()?,
            score: self.probability,
            labels: self.labels.clone(),
            tree_size: self.tree_size,
            retries: self.retries,
            truncated: self.truncated,
            failure: self.failure.clone(),
        })
    }
}

pub fn write_samples_jsonl(lines: &[SampleLine]) -> Result<String> {
    let mut out = String::new();
    for l in lines {
        out += &serde_json::to_string(l)?;
        out.push('\n');
    }
    Ok(out)
}

pub fn read_samples_jsonl(text: &str) -> Result<Vec<SampleLine>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("line {}", i + 1)))
        .collect()
}

pub const SMILES_HEADER: &str = "#class\tindex\tsmiles";

/// Only samples that assembled; failures are listed in the JSONL records.
pub fn samples_smiles(lines: &[SampleLine]) -> String {
    let mut out = format!("{SMILES_HEADER}\n");
    for l in lines {
        if let Some(s) = &l.smiles {
            let _ = writeln!(out, "{}\t{}\t{s}", l.class, l.index);
        }
    }
    out
}

pub fn read_samples_smiles(text: &str) -> Result<Vec<(usize, usize, MolecularGraph)>> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty()) {
        let f: Vec<&str> = l.split('\t').collect();
        let [c, k, s] = f.as_slice() else { bail!("line {}: expected 3 columns", i + 1) };
        out.push((c.parse()?, k.parse()?, parse_smiles(s).with_context(|| format!("line {}", i + 1))?));
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "class,index,valid,probability,tree_size,retries,truncated,smiles,failure";

pub fn samples_csv(lines: &[SampleLine]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for l in lines {
        let quote = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            l.class,
            l.index,
            l.graph.is_some(),
            l.probability.map_or(String::new(), |p| p.to_string()),
            l.tree_size,
            l.retries,
            l.truncated,
            l.smiles.as_deref().map_or(String::new(), quote),
            l.failure.as_deref().map_or(String::new(), quote),
        );
    }
    out
}

/// Graphviz-style graph text with one node per atom and one edge per bond.
pub fn graph_dot(name: &str, g: &MolecularGraph) -> String {
    let mut out = format!("graph \"{name}\" {{\n");
    for (i, e) in g.atoms().iter().enumerate() {
        let _ = writeln!(out, "  {i} [element=\"{e}\"];");
    }
    for b in g.bonds() {
        let _ = writeln!(out, "  {} -- {} [order=\"{}\"];", b.a, b.b, b.order.name());
    }
    out.push_str("}\n");
    out
}

/// Reads every graph block written by [`graph_dot`].
pub fn read_graph_dot(text: &str) -> Result<Vec<(String, MolecularGraph)>> {
    let mut out = Vec::new();
    let mut current: Option<(String, MolecularGraph)> = None;
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        let err = || anyhow!("line {}: cannot parse `{l}`", i + 1);
        if l.is_empty() || l.starts_with("//") {
            continue;
        }
        if let Some(rest) = l.strip_prefix("graph ") {
            let name = rest.trim_end_matches('{').trim().trim_matches('"').to_string();
            current = Some((name, MolecularGraph::new()));
        } else if l == "}" {
            out.push(current.take().ok_or_else(err)?);
        } else {
            let (_, g) = current.as_mut().ok_or_else(err)?;
            let attr = |key: &str| l.split_once(&format!("{key}=\"")).and_then(|(_, r)| r.split_once('"')).map(|(v, _)| v.to_string());
            if let Some((a, rest)) = l.split_once(" -- ") {
                let b = rest.split_whitespace().next().ok_or_else(err)?;
                let order: BondOrder = attr("order").ok_or_else(err)?.parse()?;
                g.add_bond(a.parse()?, b.parse()?, order)?;
            } else {
                let id: usize = l.split_whitespace().next().ok_or_else(err)?.parse()?;
                if id != g.atom_count() {
                    bail!("line {}: node ids must be consecutive", i + 1);
                }
                g.add_atom(Element::new(&attr("element").ok_or_else(err)?)?);
            }
        }
    }
    if current.is_some() {
        bail!("unterminated graph block");
    }
    Ok(out)
}

/// Junction tree as graph text: clusters as nodes, shared atoms on edges.
pub fn junction_dot(name: &str, host: &MolecularGraph, tree: &JunctionTree) -> String {
    let mut out = format!("graph \"{name}\" {{\n");
    for (i, c) in tree.clusters.iter().enumerate() {
        let kind = match c.kind {
            ClusterKind::Motif => "motif",
            ClusterKind::Ring => "ring",
            ClusterKind::Edge => "edge",
        };
        let smiles = write_smiles_unchecked(&c.subgraph(host));
        let _ = writeln!(out, "  {i} [kind=\"{kind}\", smiles=\"{smiles}\", atoms=\"{:?}\"];", c.atoms);
    }
    for e in &tree.edges {
        let _ = writeln!(out, "  {} -- {} [shared=\"{:?}\"];", e.a, e.b, e.shared);
    }
    out.push_str("}\n");
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    pub class: usize,
    pub samples: usize,
    pub failures: usize,
    pub strict_validity: f64,
    pub conditional_validity: f64,
    pub prob_mean: Option<f64>,
    pub prob_std: Option<f64>,
    pub novelty: f64,
    pub seed: u64,
    pub config_digest: String,
}

impl From<&MetricsReport> for MetricsJson {
    fn from(m: &MetricsReport) -> Self {
        let finite = |x: f64| x.is_finite().then_some(x);
        Self {
            class: m.class,
            samples: m.samples,
            failures: m.failures,
            strict_validity: m.strict_validity,
            conditional_validity: m.conditional_validity,
            prob_mean: finite(m.prob_mean),
            prob_std: finite(m.prob_std),
            novelty: m.novelty,
            seed: m.seed,
            config_digest: m.config_digest.clone(),
        }
    }
}

/// Column-aligned table with a rule under the header.
pub fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for row in std::iter::once(header).chain(rows.iter().map(|r| r.as_slice())) {
        for (c, cell) in row.iter().enumerate().take(cols) {
            width[c] = width[c].max(cell.chars().count());
        }
    }
    let line = |row: &[String]| {
        let cells: Vec<String> = (0..cols)
            .map(|c| {
                let cell = row.get(c).map_or("", |s| s.as_str());
                format!("{cell:<w$}", w = width[c])
            })
            .collect();
        format!("| {} |\n", cells.join(" | "))
    };
    let mut out = line(header);
    let rule: Vec<String> = width.iter().map(|&w| "-".repeat(w)).collect();
    out += &format!("|-{}-|\n", rule.join("-|-"));
    for r in rows {
        out += &line(r);
    }
    out
}

pub fn mean_pm_std(mean: f64, std: f64) -> String {
    if mean.is_finite() {
        format!("{mean:.4} ± {std:.4}")
    } else {
        "n/a".into()
    }
}

fn label_header(first: &str, classes: usize) -> Vec<String> {
    std::iter::once(first.to_string()).chain((0..classes).map(|c| format!("Label {c}"))).collect()
}

/// Per-class average probability per model, with a row average.
pub fn probability_table(dataset: &str, rows: &[(String, Vec<(f64, f64)>)]) -> String {
    let classes = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let mut header = vec!["Dataset".to_string()];
    header.extend(label_header("Model", classes));
    header.push("Average".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(model, cells)| {
            let mut r = vec![dataset.to_string(), model.clone()];
            r.extend(cells.iter().map(|&(m, s)| mean_pm_std(m, s)));
            let avg = cells.iter().map(|c| c.0).sum::<f64>() / cells.len().max(1) as f64;
            r.push(if avg.is_finite() { format!("{avg:.4}") } else { "n/a".into() });
            r
        })
        .collect();
    render_table(&header, &body)
}

/// Validity per class for every model.
pub fn validity_table(dataset: &str, rows: &[(String, Vec<MetricsReport>)]) -> String {
    let classes = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let mut header = vec!["Dataset".to_string()];
    header.extend(label_header("Model", classes));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(model, reports)| {
            let mut r = vec![dataset.to_string(), model.clone()];
            r.extend(reports.iter().map(|m| format!("{:.2} ({} failed, conditional {:.2})", m.strict_validity, m.failures, m.conditional_validity)));
            r
        })
        .collect();
    render_table(&header, &body)
}

/// Loss-function rows against per-class probability.
pub fn ablation_table(rows: &[(String, Vec<(f64, f64)>)]) -> String {
    let classes = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let header = label_header("Loss function", classes);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, cells)| std::iter::once(name.clone()).chain(cells.iter().map(|&(m, s)| mean_pm_std(m, s))).collect())
        .collect();
    render_table(&header, &body)
}

/// θ columns; the probability row is omitted when no generator was run.
pub fn theta_table(thetas: &[f64], counts: &[usize], probability: Option<&[(f64, f64)]>) -> String {
    let header: Vec<String> = std::iter::once(String::new()).chain(thetas.iter().map(|t| format!("θ = {t}"))).collect();
    let mut body = vec![std::iter::once("# Selected Motifs".to_string()).chain(counts.iter().map(|c| c.to_string())).collect::<Vec<_>>()];
    if let Some(p) = probability {
        body.push(std::iter::once("Average Probability".to_string()).chain(p.iter().map(|&(m, s)| mean_pm_std(m, s))).collect());
    }
    render_table(&header, &body)
}

pub fn novelty_table(dataset: &str, novelty: &[f64]) -> String {
    let header: Vec<String> = std::iter::once("Dataset".to_string()).chain((0..novelty.len()).map(|c| format!("Novelty of Label {c}"))).collect();
    let row: Vec<String> = std::iter::once(dataset.to_string()).chain(novelty.iter().map(|n| format!("{n:.4}"))).collect();
    render_table(&header, &[row])
}

/// Canonical codes of every graph, for novelty and round-trip checks.
pub fn codes<'a>(graphs: impl IntoIterator<Item = &'a MolecularGraph>) -> Result<BTreeSet<String>> {
    graphs.into_iter().map(|g| Ok(canonical_code_with_cap(g, VOCAB_CANON_CAP)?)).collect()
}
