//! Stage runner. Expensive stages (target training, attention scoring,
//! generator training, sampling) are cached under
//! `<output>/cache/<stage>-<digest>/`, where the digest covers the stage's
//! own config section and the digests of its inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use mage_core::chem::{Dataset, MolecularGraph};
use mage_core::eval::{evaluate_samples, variant_pipeline, MetricsReport};
use mage_core::generator::{prepare_corpus, train_generator, GeneratorModel, LossMode};
use mage_core::motif::{build_vocabulary, MotifVocabulary};
use mage_core::motif_id::{compute_class_scores, filter_motifs, train_attention, ClassMotifVocabulary};
use mage_core::nn::Tensor;
use mage_core::target::{train_target, TargetModel};
use serde::{Deserialize, Serialize};

use crate::config::{digest_of, section_digest, DatasetKind, PipelineConfig};
use crate::formats::{self, SampleLine};
use crate::surrogate::surrogate_dataset;
use crate::tu::read_tu;

/// Bumped when a stage's artifact layout or semantics change.
pub const STAGE_VERSIONS: [(&str, u32); 7] = [
    ("load-dataset", 1),
    ("train-gnn", 1),
    ("extract-motifs", 1),
    ("identify-motifs", 1),
    ("train-generator", 1),
    ("sample", 1),
    ("evaluate", 1),
];

fn version(stage: &str) -> u32 {
    STAGE_VERSIONS.iter().find(|(s, _)| *s == stage).map_or(0, |s| s.1)
}

/// Where a class vocabulary comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabSource {
    /// attention scores filtered at θ
    Mage,
    /// each motif classified alone, kept above 0.9
    Variant,
}

impl VocabSource {
    pub fn name(self) -> &'static str {
        match self {
            VocabSource::Mage => "mage",
            VocabSource::Variant => "variant",
        }
    }
}

/// One generator run: which vocabulary, which θ, which loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub class: usize,
    pub source: VocabSource,
    pub theta: f64,
    pub mode: LossMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub version: u32,
    pub key: String,
    pub digest: String,
    pub cached: bool,
    pub ok: bool,
    pub error: Option<String>,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_digest: String,
    pub config: String,
    pub seeds: BTreeMap<String, u64>,
    pub stage_versions: BTreeMap<String, u32>,
    pub stages: Vec<StageRecord>,
    pub ok: bool,
    pub error: Option<String>,
}

pub struct LoadedDataset {
    pub dataset: Dataset,
    pub digest: String,
    pub training_codes: std::collections::BTreeSet<String>,
}

pub struct Scores {
    pub scm: Tensor,
    pub digest: String,
}

pub struct TrainedGenerator {
    pub model: GeneratorModel,
    pub digest: String,
    pub examples: usize,
    pub skipped: usize,
    pub losses: Vec<f64>,
}

pub struct Samples {
    pub lines: Vec<SampleLine>,
    pub digest: String,
    /// wall-clock sampling time when the samples were drawn
    pub ms_per_sample: Option<f64>,
}

/// Everything measured for one class under one [`RunSpec`].
pub struct ClassRun {
    pub spec: RunSpec,
    pub vocabulary: ClassMotifVocabulary,
    pub generator: Rc<TrainedGenerator>,
    pub samples: Rc<Samples>,
    pub metrics: MetricsReport,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub root: PathBuf,
    pub quiet: bool,
    pub stages: Vec<StageRecord>,
    dataset: Option<Rc<LoadedDataset>>,
    target: Option<(Rc<TargetModel>, String)>,
    vocab: Option<(Rc<MotifVocabulary>, String)>,
    scores: Option<Rc<Scores>>,
    generators: BTreeMap<String, Rc<TrainedGenerator>>,
    samples: BTreeMap<String, Rc<Samples>>,
}

#[derive(Serialize, Deserialize)]
struct TargetTrace {
    losses: Vec<f64>,
    accuracy: f64,
}

#[derive(Serialize, Deserialize)]
struct GeneratorTraceFile {
    examples: usize,
    skipped: usize,
    losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Timing {
    ms_per_sample: f64,
}

fn short(digest: &str) -> &str {
    &digest[..16]
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Order-sensitive fingerprint of every atom, bond and label.
fn dataset_digest(ds: &Dataset) -> String {
    let mut text = format!("classes {}\n", ds.num_classes);
    for g in &ds.graphs {
        text += &format!("{:?}|", g.label);
        for e in g.atoms() {
            text += e.as_str();
            text.push(',');
        }
        text.push('|');
        for b in g.bonds() {
            text += &format!("{}-{}{},", b.a, b.b, b.order.code_char());
        }
        text.push('\n');
    }
    digest_of(&["dataset", &text])
}

pub fn load_dataset(config: &PipelineConfig) -> Result<Dataset> {
    let d = &config.dataset;
    let ds = match d.kind {
        DatasetKind::Surrogate => surrogate_dataset(d.graphs, d.seed, d.hydrogens),
        DatasetKind::Tu => {
            let path = d.path.as_deref().ok_or_else(|| anyhow!("dataset.path is required"))?;
            read_tu(path, &d.name, config.node_map()?)?.dataset
        }
        DatasetKind::Text => {
            let path = d.path.as_deref().ok_or_else(|| anyhow!("dataset.path is required"))?;
            formats::read_dataset(&read_text(path)?)?
        }
    };
    Ok(match d.limit {
        Some(n) if n < ds.len() => ds.slice(n),
        _ => ds,
    })
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let root = config.output_root();
        Ok(Self {
            config,
            root,
            quiet: false,
            stages: Vec::new(),
            dataset: None,
            target: None,
            vocab: None,
            scores: None,
            generators: BTreeMap::new(),
            samples: BTreeMap::new(),
        })
    }

    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn cache_dir(&self, stage: &str, digest: &str) -> PathBuf {
        self.root.join("cache").join(format!("{stage}-{}", short(digest)))
    }

    /// Runs `body` as stage `stage`, recording its outcome in the manifest.
    fn stage<T>(&mut self, stage: &str, key: &str, digest: &str, cached: bool, body: impl FnOnce(&mut Self) -> Result<(T, Vec<PathBuf>)>) -> Result<T> {
        let outcome = body(self);
        let (ok, error, artifacts, value) = match outcome {
            Ok((v, artifacts)) => (true, None, artifacts, Ok(v)),
            Err(e) => (false, Some(format!("{e:#}")), Vec::new(), Err(e)),
        };
        self.stages.push(StageRecord {
            stage: stage.into(),
            version: version(stage),
            key: key.into(),
            digest: digest.into(),
            cached,
            ok,
            error,
            artifacts,
        });
        value.with_context(|| format!("stage `{stage}` ({key}) failed"))
    }

    pub fn dataset(&mut self) -> Result<Rc<LoadedDataset>> {
        if let Some(d) = &self.dataset {
            return Ok(d.clone());
        }
        let config = self.config.clone();
        let loaded = self.stage("load-dataset", "dataset", "", false, |_| {
            let dataset = load_dataset(&config)?;
            if dataset.is_empty() {
                bail!("dataset is empty");
            }
            let digest = dataset_digest(&dataset);
            let training_codes = formats::codes(&dataset.graphs)?;
            Ok((LoadedDataset { dataset, digest, training_codes }, Vec::new()))
        })?;
        if let Some(rec) = self.stages.last_mut() {
            rec.digest = loaded.digest.clone();
        }
        self.log(format!(
            "dataset: {} graphs, {} classes, mean {:.2} atoms",
            loaded.dataset.len(),
            loaded.dataset.num_classes,
            loaded.dataset.mean_atom_count()
        ));
        let rc = Rc::new(loaded);
        self.dataset = Some(rc.clone());
        Ok(rc)
    }

    pub fn target_digest(&mut self) -> Result<String> {
        let ds = self.dataset()?;
        Ok(digest_of(&["train-gnn", &version("train-gnn").to_string(), &ds.digest, &section_digest("target", &self.config.target)]))
    }

    pub fn target(&mut self) -> Result<(Rc<TargetModel>, String)> {
        if let Some(t) = &self.target {
            return Ok(t.clone());
        }
        let ds = self.dataset()?;
        let digest = self.target_digest()?;
        let dir = self.cache_dir("train-gnn", &digest);
        let (ckpt, sidecar, trace_path) = (dir.join("target.ckpt"), dir.join("target.sidecar"), dir.join("trace.json"));
        let cached = ckpt.exists() && sidecar.exists() && trace_path.exists();
        let config = self.config.target_config();
        let (model, trace) = self.stage("train-gnn", "target", &digest, cached, |_| {
            let (model, trace) = if cached {
                let bytes = fs::read(&ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
                let model = TargetModel::from_checkpoint(&bytes, &read_text(&sidecar)?)?;
                (model, serde_json::from_str::<TargetTrace>(&read_text(&trace_path)?)?)
            } else {
                let (model, t) = train_target(&ds.dataset, config)?;
                write(&ckpt, model.params.to_bytes())?;
                write(&sidecar, model.sidecar())?;
                let trace = TargetTrace { losses: t.losses, accuracy: t.accuracy };
                write(&trace_path, serde_json::to_string_pretty(&trace)?)?;
                (model, trace)
            };
            Ok(((model, trace), vec![ckpt.clone(), sidecar.clone(), trace_path.clone()]))
        })?;
        let every = (trace.losses.len() / 10).max(1);
        for (e, l) in trace.losses.iter().enumerate() {
            if e % every == 0 || e + 1 == trace.losses.len() {
                self.log(format!("train-gnn epoch {e:>4} loss {l:.6}"));
            }
        }
        self.log(format!("train-gnn training accuracy {:.4}{}", trace.accuracy, if cached { " (cached)" } else { "" }));
        let out = (Rc::new(model), digest);
        self.target = Some(out.clone());
        Ok(out)
    }

    pub fn target_accuracy(&mut self) -> Result<f64> {
        let (model, _) = self.target()?;
        let ds = self.dataset()?;
        Ok(model.accuracy(&ds.dataset)?)
    }

    pub fn vocabulary(&mut self) -> Result<(Rc<MotifVocabulary>, String)> {
        if let Some(v) = &self.vocab {
            return Ok(v.clone());
        }
        let ds = self.dataset()?;
        let method = self.config.method()?;
        let digest = digest_of(&["extract-motifs", &version("extract-motifs").to_string(), &ds.digest, &method.to_string()]);
        let path = self.cache_dir("extract-motifs", &digest).join("vocabulary.tsv");
        let vocab = self.stage("extract-motifs", "vocabulary", &digest, false, |_| {
            let vocab = build_vocabulary(&ds.dataset, method)?;
            if !path.exists() {
                write(&path, formats::vocabulary_tsv(&vocab))?;
            }
            Ok((vocab, vec![path.clone()]))
        })?;
        self.log(format!("extract-motifs: {} motifs ({method})", vocab.len()));
        let out = (Rc::new(vocab), digest);
        self.vocab = Some(out.clone());
        Ok(out)
    }

    /// S^cm from the trained attention operator.
    pub fn scores(&mut self) -> Result<Rc<Scores>> {
        if let Some(s) = &self.scores {
            return Ok(s.clone());
        }
        let ds = self.dataset()?;
        let (target, target_digest) = self.target()?;
        let (vocab, vocab_digest) = self.vocabulary()?;
        let attention = self.config.attention_config();
        let digest = digest_of(&[
            "identify-motifs",
            &version("identify-motifs").to_string(),
            &target_digest,
            &vocab_digest,
            &format!("{attention:?}"),
        ]);
        let dir = self.cache_dir("identify-motifs", &digest);
        let (scores_path, trace_path) = (dir.join("scores.tsv"), dir.join("attention_trace.json"));
        let cached = scores_path.exists();
        let scm = self.stage("identify-motifs", "scores", &digest, cached, |_| {
            let scm = if cached {
                let (scm, codes) = formats::read_scores_tsv(&read_text(&scores_path)?)?;
                if codes.len() != vocab.len() || codes.iter().zip(&vocab.motifs).any(|(c, m)| *c != m.code) {
                    bail!("{} does not match the motif vocabulary", scores_path.display());
                }
                scm
            } else {
                let (_, matrices, trace) = train_attention(&ds.dataset, &target, &vocab, &attention)?;
                let scm = compute_class_scores(&matrices)?;
                write(&trace_path, serde_json::to_string_pretty(&trace.losses)?)?;
                write(&scores_path, formats::scores_tsv(&scm, &vocab))?;
                scm
            };
            Ok((scm, vec![scores_path.clone()]))
        })?;
        let out = Rc::new(Scores { scm, digest });
        self.scores = Some(out.clone());
        Ok(out)
    }

    pub fn classes(&mut self) -> Result<Vec<usize>> {
        let c = self.dataset()?.dataset.num_classes;
        if self.config.motifs.classes.is_empty() {
            return Ok((0..c).collect());
        }
        for &k in &self.config.motifs.classes {
            if k >= c {
                bail!("class {k} out of range for {c} classes");
            }
        }
        Ok(self.config.motifs.classes.clone())
    }

    pub fn class_vocabulary(&mut self, class: usize, source: VocabSource, theta: f64) -> Result<(ClassMotifVocabulary, String)> {
        let (vocab, vocab_digest) = self.vocabulary()?;
        match source {
            VocabSource::Mage => {
                let scores = self.scores()?;
                let cv = filter_motifs(&scores.scm, &vocab, theta, class)?;
                Ok((cv, digest_of(&["mage", &scores.digest, &format!("{class} {theta:?}")])))
            }
            VocabSource::Variant => {
                let (target, target_digest) = self.target()?;
                let cv = variant_pipeline(&target, &vocab, class)?;
                Ok((cv, digest_of(&["variant", &target_digest, &vocab_digest, &class.to_string()])))
            }
        }
    }

    fn class_vocabulary_stage(&mut self, spec: &RunSpec) -> Result<(ClassMotifVocabulary, String)> {
        let key = format!("class {} {} θ={}", spec.class, spec.source.name(), spec.theta);
        let result = self.class_vocabulary(spec.class, spec.source, spec.theta);
        if let Err(e) = &result {
            self.stages.push(StageRecord {
                stage: "identify-motifs".into(),
                version: version("identify-motifs"),
                key: key.clone(),
                digest: String::new(),
                cached: false,
                ok: false,
                error: Some(format!("{e:#}")),
                artifacts: Vec::new(),
            });
        }
        result.with_context(|| format!("stage `identify-motifs` ({key}) failed"))
    }

    pub fn generator(&mut self, spec: &RunSpec) -> Result<(ClassMotifVocabulary, Rc<TrainedGenerator>)> {
        let (cv, cv_digest) = self.class_vocabulary_stage(spec)?;
        let mut gconf = self.config.generator_config()?;
        gconf.mode = spec.mode;
        let digest = digest_of(&[
            "train-generator",
            &version("train-generator").to_string(),
            &cv_digest,
            &self.vocabulary()?.1,
            &format!("{gconf:?}"),
        ]);
        if let Some(g) = self.generators.get(&digest) {
            return Ok((cv, g.clone()));
        }
        let ds = self.dataset()?;
        let (target, _) = self.target()?;
        let (vocab, _) = self.vocabulary()?;
        let dir = self.cache_dir("train-generator", &digest);
        let (ckpt, sidecar, trace_path, vocab_path) =
            (dir.join("generator.ckpt"), dir.join("generator.sidecar"), dir.join("trace.json"), dir.join("class_vocabulary.tsv"));
        let cached = ckpt.exists() && sidecar.exists() && trace_path.exists();
        let key = format!("class {} {} {} θ={}", spec.class, spec.source.name(), spec.mode, spec.theta);
        let trained = self.stage("train-generator", &key, &digest, cached, |_| {
            let trained = if cached {
                let bytes = fs::read(&ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
                let model = GeneratorModel::from_checkpoint(&bytes, &read_text(&sidecar)?)?;
                let t: GeneratorTraceFile = serde_json::from_str(&read_text(&trace_path)?)?;
                TrainedGenerator { model, digest: digest.clone(), examples: t.examples, skipped: t.skipped, losses: t.losses }
            } else {
                let corpus = prepare_corpus(&ds.dataset, &target, &vocab, &cv, gconf.spanning)?;
                let (model, trace) = train_generator(&corpus, &target, gconf.clone())?;
                let t = GeneratorTraceFile {
                    examples: corpus.examples.len(),
                    skipped: corpus.skipped.len(),
                    losses: trace.epochs.iter().map(|e| e.total).collect(),
                };
                write(&vocab_path, formats::class_vocabulary_tsv(&cv))?;
                write(&ckpt, model.params.to_bytes())?;
                write(&sidecar, model.sidecar())?;
                write(&trace_path, serde_json::to_string_pretty(&t)?)?;
                TrainedGenerator { model, digest: digest.clone(), examples: t.examples, skipped: t.skipped, losses: t.losses }
            };
            Ok((trained, vec![ckpt.clone(), sidecar.clone(), trace_path.clone()]))
        })?;
        self.log(format!(
            "train-generator {key}: {} motifs, {} trees ({} skipped), final loss {:.6}{}",
            cv.len(),
            trained.examples,
            trained.skipped,
            trained.losses.last().copied().unwrap_or(f64::NAN),
            if cached { " (cached)" } else { "" }
        ));
        let rc = Rc::new(trained);
        self.generators.insert(digest, rc.clone());
        Ok((cv, rc))
    }

    pub fn samples(&mut self, spec: &RunSpec) -> Result<(ClassMotifVocabulary, Rc<TrainedGenerator>, Rc<Samples>)> {
        let (cv, generator) = self.generator(spec)?;
        let s = self.config.sampling.clone();
        let digest = digest_of(&[
            "sample",
            &version("sample").to_string(),
            &generator.digest,
            &format!("{} {} {}", s.num_samples, s.decode, s.seed),
        ]);
        if let Some(x) = self.samples.get(&digest) {
            return Ok((cv, generator, x.clone()));
        }
        let (target, _) = self.target()?;
        let dir = self.cache_dir("sample", &digest);
        let (path, timing_path) = (dir.join("samples.jsonl"), dir.join("timing.json"));
        let cached = path.exists();
        let (n, decode, seed) = (s.num_samples, self.config.decode_mode()?, s.seed);
        let key = format!("class {} {} {} θ={}", spec.class, spec.source.name(), spec.mode, spec.theta);
        let samples = self.stage("sample", &key, &digest, cached, |_| {
            let samples = if cached {
                let lines = formats::read_samples_jsonl(&read_text(&path)?)?;
                let ms = fs::read_to_string(&timing_path).ok().and_then(|t| serde_json::from_str::<Timing>(&t).ok()).map(|t| t.ms_per_sample);
                Samples { lines, digest: digest.clone(), ms_per_sample: ms }
            } else {
                let start = Instant::now();
                let records = generator.model.sample_explanations(&target, n, decode, seed)?;
                let ms = start.elapsed().as_secs_f64() * 1e3 / n.max(1) as f64;
                let lines = records.iter().map(|r| SampleLine::from_record(spec.class, r)).collect::<Result<Vec<_>>>()?;
                write(&path, formats::write_samples_jsonl(&lines)?)?;
                write(&timing_path, serde_json::to_string(&Timing { ms_per_sample: ms })?)?;
                Samples { lines, digest: digest.clone(), ms_per_sample: Some(ms) }
            };
            Ok((samples, vec![path.clone()]))
        })?;
        let rc = Rc::new(samples);
        self.samples.insert(digest, rc.clone());
        Ok((cv, generator, rc))
    }

    pub fn evaluate_lines(&mut self, class: usize, lines: &[SampleLine]) -> Result<MetricsReport> {
        let ds = self.dataset()?;
        let (target, _) = self.target()?;
        let digest = self.config.digest();
        let seed = self.config.sampling.seed;
        self.stage("evaluate", &format!("class {class}"), "", false, |_| {
            let records = lines.iter().map(SampleLine::to_record).collect::<Result<Vec<_>>>()?;
            Ok((evaluate_samples(&records, &target, class, &ds.training_codes, seed, &digest)?, Vec::new()))
        })
    }

    pub fn run_class(&mut self, spec: RunSpec) -> Result<ClassRun> {
        let (vocabulary, generator, samples) = self.samples(&spec)?;
        let metrics = self.evaluate_lines(spec.class, &samples.lines)?;
        Ok(ClassRun { spec, vocabulary, generator, samples, metrics })
    }

    pub fn default_spec(&self, class: usize) -> Result<RunSpec> {
        Ok(RunSpec { class, source: VocabSource::Mage, theta: self.config.motifs.theta, mode: self.config.loss_mode()? })
    }

    pub fn manifest(&self, command: &str, error: Option<&anyhow::Error>) -> Manifest {
        let c = &self.config;
        let seeds = BTreeMap::from([
            ("dataset".to_string(), c.dataset.seed),
            ("target".to_string(), c.target.seed),
            ("attention".to_string(), c.motifs.attention_seed),
            ("generator".to_string(), c.generator.seed),
            ("sampling".to_string(), c.sampling.seed),
        ]);
        Manifest {
            command: command.into(),
            config_digest: c.digest(),
            config: c.to_toml(),
            seeds,
            stage_versions: STAGE_VERSIONS.iter().map(|(s, v)| (s.to_string(), *v)).collect(),
            stages: self.stages.clone(),
            ok: error.is_none() && self.stages.iter().all(|s| s.ok),
            error: error.map(|e| format!("{e:#}")),
        }
    }

    pub fn write_manifest(&self, command: &str, error: Option<&anyhow::Error>) -> Result<PathBuf> {
        let path = self.root.join("manifest.json");
        write(&path, serde_json::to_string_pretty(&self.manifest(command, error))?)?;
        Ok(path)
    }

    /// Best assembled samples by probability, ties to the lower index.
    pub fn top_samples(lines: &[SampleLine], k: usize) -> Vec<(&SampleLine, MolecularGraph)> {
        let mut ok: Vec<(&SampleLine, MolecularGraph)> = lines.iter().filter_map(|l| l.to_graph().ok().flatten().map(|g| (l, g))).collect();
        ok.sort_by(|a, b| b.0.probability.unwrap_or(0.0).total_cmp(&a.0.probability.unwrap_or(0.0)).then(a.0.index.cmp(&b.0.index)));
        ok.truncate(k);
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(root: &Path) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.output = Some(root.to_path_buf());
        c.dataset.graphs = 40;
        c.target.epochs = 20;
        c.motifs.attention_epochs = 5;
        c.generator.epochs = 2;
        c.sampling.num_samples = 5;
        c
    }

    #[test]
    fn stages_are_cached_by_digest() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config(dir.path());
        let mut p = Pipeline::new(config.clone()).unwrap();
        p.quiet = true;
        let spec = p.default_spec(0).unwrap();
        let first = p.run_class(spec).unwrap();
        assert!(p.stages.iter().all(|s| s.ok && !s.cached));

        let mut q = Pipeline::new(config).unwrap();
        q.quiet = true;
        let second = q.run_class(spec).unwrap();
        let cached: Vec<&str> = q.stages.iter().filter(|s| s.cached).map(|s| s.stage.as_str()).collect();
        assert_eq!(cached, ["train-gnn", "identify-motifs", "train-generator", "sample"]);
        assert_eq!(first.samples.lines, second.samples.lines);
        assert_eq!(first.metrics, second.metrics);
    }

    #[test]
    fn failures_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = small_config(dir.path());
        config.motifs.theta = 1e9;
        let mut p = Pipeline::new(config).unwrap();
        p.quiet = true;
        let spec = p.default_spec(0).unwrap();
        let err = p.run_class(spec).err().unwrap();
        assert!(format!("{err:#}").contains("stage `identify-motifs`"), "{err:#}");
        let m = p.manifest("explain", Some(&err));
        assert!(!m.ok);
        assert!(m.stages.iter().any(|s| s.stage == "train-gnn" && s.ok));
    }
}
