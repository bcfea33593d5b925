//! Subcommand bodies. Each writes its artifacts under `<output>/<command>/`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mage_core::generator::LossMode;
use mage_core::motif_id::filter_motifs;

use crate::formats::{self, MetricsJson, SampleLine};
use crate::pipeline::{ClassRun, Pipeline, RunSpec, VocabSource};

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(p: &Pipeline, command: &str) -> PathBuf {
    p.root.join(command)
}

fn dataset_name(p: &Pipeline) -> String {
    match p.config.dataset.kind {
        crate::config::DatasetKind::Surrogate => "Surrogate".into(),
        _ => p.config.dataset.name.clone(),
    }
}

pub fn train_gnn(p: &mut Pipeline) -> Result<PathBuf> {
    let (model, _) = p.target()?;
    let dir = out_dir(p, "train-gnn");
    let ckpt = dir.join("target.ckpt");
    write(&ckpt, model.params.to_bytes())?;
    write(&dir.join("target.sidecar"), model.sidecar())?;
    Ok(ckpt)
}

pub fn extract_motifs(p: &mut Pipeline) -> Result<PathBuf> {
    let (vocab, _) = p.vocabulary()?;
    let path = out_dir(p, "extract-motifs").join("vocabulary.tsv");
    write(&path, formats::vocabulary_tsv(&vocab))?;
    Ok(path)
}

/// Selected-motif counts for the configured classes at each θ.
pub fn theta_counts(p: &mut Pipeline, thetas: &[f64]) -> Result<Vec<Vec<usize>>> {
    let (vocab, _) = p.vocabulary()?;
    let scores = p.scores()?;
    let classes = p.classes()?;
    thetas
        .iter()
        .map(|&t| {
            classes
                .iter()
                .map(|&c| match filter_motifs(&scores.scm, &vocab, t, c) {
                    Ok(cv) => Ok(cv.len()),
                    Err(mage_core::motif_id::MotifIdError::EmptyClassVocabulary { .. }) => Ok(0),
                    Err(e) => Err(e.into()),
                })
                .collect()
        })
        .collect()
}

pub fn identify_motifs(p: &mut Pipeline, theta_sweep: &[f64]) -> Result<PathBuf> {
    let (vocab, _) = p.vocabulary()?;
    let scores = p.scores()?;
    let dir = out_dir(p, "identify-motifs");
    write(&dir.join("scores.tsv"), formats::scores_tsv(&scores.scm, &vocab))?;
    let theta = p.config.motifs.theta;
    for class in p.classes()? {
        let (cv, _) = p.class_vocabulary(class, VocabSource::Mage, theta)?;
        write(&dir.join(format!("class{class}.tsv")), formats::class_vocabulary_tsv(&cv))?;
        eprintln_unless(p, format!("identify-motifs class {class}: {} motifs above θ = {theta}", cv.len()));
    }
    if !theta_sweep.is_empty() {
        let counts = theta_counts(p, theta_sweep)?;
        let mut text = String::new();
        for (k, class) in p.classes()?.into_iter().enumerate() {
            let row: Vec<usize> = counts.iter().map(|c| c[k]).collect();
            text += &format!("class {class}\n{}\n", formats::theta_table(theta_sweep, &row, None));
        }
        write(&dir.join("theta.txt"), &text)?;
        eprintln_unless(p, text);
    }
    Ok(dir)
}

fn eprintln_unless(p: &Pipeline, msg: impl AsRef<str>) {
    if !p.quiet {
        eprintln!("{}", msg.as_ref());
    }
}

pub fn train_generator(p: &mut Pipeline) -> Result<PathBuf> {
    let dir = out_dir(p, "train-generator");
    for class in p.classes()? {
        let spec = p.default_spec(class)?;
        let (cv, g) = p.generator(&spec)?;
        write(&dir.join(format!("class{class}.ckpt")), g.model.params.to_bytes())?;
        write(&dir.join(format!("class{class}.sidecar")), g.model.sidecar())?;
        write(&dir.join(format!("class{class}_vocabulary.tsv")), formats::class_vocabulary_tsv(&cv))?;
        let every = (g.losses.len() / 10).max(1);
        for (e, l) in g.losses.iter().enumerate() {
            if e % every == 0 || e + 1 == g.losses.len() {
                eprintln_unless(p, format!("train-generator class {class} epoch {e:>3} loss {l:.6}"));
            }
        }
    }
    Ok(dir)
}

pub fn sample(p: &mut Pipeline) -> Result<PathBuf> {
    let dir = out_dir(p, "sample");
    for class in p.classes()? {
        let spec = p.default_spec(class)?;
        let (_, _, s) = p.samples(&spec)?;
        write(&dir.join(format!("class{class}.jsonl")), formats::write_samples_jsonl(&s.lines)?)?;
        write(&dir.join(format!("class{class}.smi")), formats::samples_smiles(&s.lines))?;
    }
    Ok(dir)
}

/// Metrics for sample files, or for the pipeline's own samples when none are given.
pub fn evaluate(p: &mut Pipeline, inputs: &[PathBuf]) -> Result<Vec<MetricsJson>> {
    let mut groups: Vec<(usize, Vec<SampleLine>)> = Vec::new();
    if inputs.is_empty() {
        for class in p.classes()? {
            let spec = p.default_spec(class)?;
            let (_, _, s) = p.samples(&spec)?;
            groups.push((class, s.lines.clone()));
        }
    } else {
        for path in inputs {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            for line in formats::read_samples_jsonl(&text).with_context(|| format!("in {}", path.display()))? {
                match groups.iter_mut().find(|(c, _)| *c == line.class) {
                    Some((_, v)) => v.push(line),
                    None => groups.push((line.class, vec![line])),
                }
            }
        }
        groups.sort_by_key(|g| g.0);
    }
    let mut reports = Vec::new();
    let mut all = Vec::new();
    for (class, lines) in &groups {
        reports.push(p.evaluate_lines(*class, lines)?);
        all.extend(lines.iter().cloned());
    }
    let dir = out_dir(p, "evaluate");
    let json: Vec<MetricsJson> = reports.iter().map(MetricsJson::from).collect();
    write(&dir.join("metrics.json"), serde_json::to_string_pretty(&json)? + "\n")?;
    let name = dataset_name(p);
    let cells = reports.iter().map(|m| (m.prob_mean, m.prob_std)).collect();
    let mut text = formats::validity_table(&name, &[("MAGE".into(), reports.clone())]);
    text += "\n";
    text += &formats::probability_table(&name, &[("MAGE".into(), cells)]);
    text += "\n";
    text += &formats::novelty_table(&name, &reports.iter().map(|m| m.novelty).collect::<Vec<_>>());
    write(&dir.join("metrics.txt"), &text)?;
    write(&dir.join("samples.csv"), formats::samples_csv(&all))?;
    eprintln_unless(p, &text);
    Ok(json)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExplainOptions {
    /// also run the single-motif classification baseline
    pub variant: bool,
    /// also train with each of the three loss modes
    pub ablation: bool,
    /// θ values for the selected-motif study
    pub theta_sweep: Vec<f64>,
}

pub struct ExplainReport {
    pub runs: Vec<ClassRun>,
    pub variant: Vec<ClassRun>,
    pub ablation: Vec<(LossMode, Vec<ClassRun>)>,
    pub sweep: Vec<(f64, Vec<usize>, Vec<ClassRun>)>,
    /// per class, mean sampling time of the main runs
    pub ms_per_sample: Vec<Option<f64>>,
}

fn class_runs(p: &mut Pipeline, classes: &[usize], f: impl Fn(usize) -> RunSpec) -> Result<Vec<ClassRun>> {
    classes.iter().map(|&c| p.run_class(f(c))).collect()
}

fn cells(runs: &[ClassRun]) -> Vec<(f64, f64)> {
    runs.iter().map(|r| (r.metrics.prob_mean, r.metrics.prob_std)).collect()
}

/// extract → identify → train → sample → evaluate for every class.
pub fn explain(p: &mut Pipeline, opts: &ExplainOptions) -> Result<ExplainReport> {
    let classes = p.classes()?;
    let theta = p.config.motifs.theta;
    let mode = p.config.loss_mode()?;
    let name = dataset_name(p);
    let dir = out_dir(p, "explain");
    let runs = class_runs(p, &classes, |class| RunSpec { class, source: VocabSource::Mage, theta, mode })?;
    let top_k = p.config.sampling.top_k;
    for run in &runs {
        let class = run.spec.class;
        let cdir = dir.join(format!("class{class}"));
        write(&cdir.join("samples.jsonl"), formats::write_samples_jsonl(&run.samples.lines)?)?;
        write(&cdir.join("samples.smi"), formats::samples_smiles(&run.samples.lines))?;
        write(&cdir.join("samples.csv"), formats::samples_csv(&run.samples.lines))?;
        write(&cdir.join("vocabulary.tsv"), formats::class_vocabulary_tsv(&run.vocabulary))?;
        for (rank, (line, g)) in Pipeline::top_samples(&run.samples.lines, top_k).into_iter().enumerate() {
            write(&cdir.join(format!("top{}.dot", rank + 1)), formats::graph_dot(&format!("class{class}_sample{}", line.index), &g))?;
        }
    }
    let mut report = String::new();
    let mut model_rows = vec![("MAGE".to_string(), cells(&runs))];
    let mut validity_rows = vec![("MAGE".to_string(), runs.iter().map(|r| r.metrics.clone()).collect::<Vec<_>>())];

    let mut variant = Vec::new();
    if opts.variant {
        variant = class_runs(p, &classes, |class| RunSpec { class, source: VocabSource::Variant, theta, mode })?;
        model_rows.insert(0, ("Variant".into(), cells(&variant)));
        validity_rows.insert(0, ("Variant".into(), variant.iter().map(|r| r.metrics.clone()).collect()));
    }
    report += &formats::validity_table(&name, &validity_rows);
    report += "\n";
    report += &formats::probability_table(&name, &model_rows);
    report += "\n";
    report += &formats::novelty_table(&name, &runs.iter().map(|r| r.metrics.novelty).collect::<Vec<_>>());

    let mut ablation = Vec::new();
    if opts.ablation {
        for m in LossMode::ALL {
            let r = class_runs(p, &classes, |class| RunSpec { class, source: VocabSource::Mage, theta, mode: m })?;
            ablation.push((m, r));
        }
        let rows: Vec<(String, Vec<(f64, f64)>)> = ablation
            .iter()
            .map(|(m, r)| {
                let label = match m {
                    LossMode::Reconstruction => "L_R",
                    LossMode::Property => "L_P",
                    LossMode::Both => "L_R + L_P",
                };
                (label.to_string(), cells(r))
            })
            .collect();
        report += "\n";
        report += &formats::ablation_table(&rows);
    }

    let mut sweep = Vec::new();
    if !opts.theta_sweep.is_empty() {
        let counts = theta_counts(p, &opts.theta_sweep)?;
        for (&t, c) in opts.theta_sweep.iter().zip(counts) {
            let r = class_runs(p, &classes, |class| RunSpec { class, source: VocabSource::Mage, theta: t, mode })?;
            sweep.push((t, c, r));
        }
        for (k, class) in classes.iter().enumerate() {
            let row: Vec<usize> = sweep.iter().map(|s| s.1[k]).collect();
            let probs: Vec<(f64, f64)> = sweep.iter().map(|s| (s.2[k].metrics.prob_mean, s.2[k].metrics.prob_std)).collect();
            report += &format!("\nclass {class}\n");
            report += &formats::theta_table(&opts.theta_sweep, &row, Some(&probs));
        }
    }

    let json: Vec<MetricsJson> = runs.iter().map(|r| MetricsJson::from(&r.metrics)).collect();
    write(&dir.join("metrics.json"), serde_json::to_string_pretty(&json)? + "\n")?;
    write(&dir.join("report.txt"), &report)?;
    let ms_per_sample: Vec<Option<f64>> = runs.iter().map(|r| r.samples.ms_per_sample).collect();
    let timing: String = runs
        .iter()
        .map(|r| format!("class {} ms/sample {}\n", r.spec.class, r.samples.ms_per_sample.map_or("n/a".into(), |m| format!("{m:.3}"))))
        .collect();
    write(&dir.join("timing.txt"), &timing)?;
    eprintln_unless(p, &report);
    Ok(ExplainReport { runs, variant, ablation, sweep, ms_per_sample })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Smiles,
    Dot,
    Jsonl,
    Csv,
}

impl std::str::FromStr for ExportFormat {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "smiles" => ExportFormat::Smiles,
            "dot" | "graph" => ExportFormat::Dot,
            "jsonl" | "records" => ExportFormat::Jsonl,
            "csv" => ExportFormat::Csv,
            _ => bail!("unknown export format `{s}` (expected smiles, dot, jsonl or csv)"),
        })
    }
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Smiles => "smi",
            ExportFormat::Dot => "dot",
            ExportFormat::Jsonl => "jsonl",
            ExportFormat::Csv => "csv",
        }
    }
}

/// Converts a samples JSONL file; output is `<out>/<input stem>.<ext>`.
pub fn export(input: &Path, format: ExportFormat, out: &Path) -> Result<PathBuf> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let lines = formats::read_samples_jsonl(&text).with_context(|| format!("in {}", input.display()))?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("samples");
    let path = out.join(format!("{stem}.{}", format.extension()));
    let body = match format {
        ExportFormat::Smiles => formats::samples_smiles(&lines),
        ExportFormat::Jsonl => formats::write_samples_jsonl(&lines)?,
        ExportFormat::Csv => formats::samples_csv(&lines),
        ExportFormat::Dot => {
            let mut s = String::from("// mage samples\n");
            for l in &lines {
                if let Some(g) = l.to_graph()? {
                    s += &formats::graph_dot(&format!("class{}_sample{}", l.class, l.index), &g);
                }
            }
            s
        }
    };
    write(&path, body)?;
    Ok(path)
}
