use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mage::commands::{self, ExplainOptions, ExportFormat};
use mage::config::{PipelineConfig, OUTPUT_ROOT_ENV};
use mage::pipeline::Pipeline;

/// Motif-based model-level explanations for molecular graph classifiers.
#[derive(Parser)]
#[command(name = "mage", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML pipeline config; defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// sets the target, attention, generator and sampling seeds
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// class to explain; repeat for several (default: all)
    #[arg(long = "class", global = true)]
    classes: Vec<usize>,
    #[arg(long, global = true)]
    num_samples: Option<usize>,
    /// motif extraction: bridge or rings_and_bonds
    #[arg(long, global = true)]
    method: Option<String>,
    /// generator loss: recon, property or both
    #[arg(long, global = true)]
    mode: Option<String>,
    /// tree decoding: stochastic or greedy
    #[arg(long, global = true)]
    decode: Option<String>,
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    output: Option<PathBuf>,
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the target GCN classifier and save its checkpoint
    TrainGnn,
    /// Decompose every molecule and write the motif vocabulary
    ExtractMotifs,
    /// Train the attention operator and write class motif scores
    IdentifyMotifs {
        /// comma-separated θ values for the selected-motif table
        #[arg(long, value_delimiter = ',')]
        theta_sweep: Vec<f64>,
    },
    /// Train one junction-tree generator per class
    TrainGenerator,
    /// Sample explanations from each class generator
    Sample,
    /// Compute validity, average probability and novelty
    Evaluate {
        /// samples JSONL files; the pipeline's own samples when omitted
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
    },
    /// Run every stage for every class and write reports
    Explain {
        /// also run the single-motif classification baseline
        #[arg(long)]
        variant: bool,
        /// also train with each loss mode
        #[arg(long)]
        ablation: bool,
        #[arg(long, value_delimiter = ',')]
        theta_sweep: Vec<f64>,
    },
    /// Convert a samples JSONL file to smiles, dot, jsonl or csv
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        format: ExportFormat,
        /// output directory (default: <output>/export)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::TrainGnn => "train-gnn",
        Command::ExtractMotifs => "extract-motifs",
        Command::IdentifyMotifs { .. } => "identify-motifs",
        Command::TrainGenerator => "train-generator",
        Command::Sample => "sample",
        Command::Evaluate { .. } => "evaluate",
        Command::Explain { .. } => "explain",
        Command::Export { .. } => "export",
    }
}

fn build_config(c: &Common) -> Result<PipelineConfig> {
    let mut config = match &c.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        config.reseed(s);
    }
    if let Some(t) = c.theta {
        config.motifs.theta = t;
    }
    if !c.classes.is_empty() {
        config.motifs.classes = c.classes.clone();
    }
    if let Some(n) = c.num_samples {
        config.sampling.num_samples = n;
    }
    if let Some(m) = &c.method {
        config.motifs.method = m.clone();
    }
    if let Some(m) = &c.mode {
        config.generator.mode = m.clone();
    }
    if let Some(d) = &c.decode {
        config.sampling.decode = d.clone();
    }
    if let Some(o) = &c.output {
        config.output = Some(o.clone());
    }
    config.validate()?;
    Ok(config)
}

fn run(p: &mut Pipeline, command: Command) -> Result<()> {
    match command {
        Command::TrainGnn => {
            let path = commands::train_gnn(p)?;
            println!("{}", path.display());
        }
        Command::ExtractMotifs => println!("{}", commands::extract_motifs(p)?.display()),
        Command::IdentifyMotifs { theta_sweep } => println!("{}", commands::identify_motifs(p, &theta_sweep)?.display()),
        Command::TrainGenerator => println!("{}", commands::train_generator(p)?.display()),
        Command::Sample => println!("{}", commands::sample(p)?.display()),
        Command::Evaluate { inputs } => {
            commands::evaluate(p, &inputs)?;
            println!("{}", p.root.join("evaluate").display());
        }
        Command::Explain { variant, ablation, theta_sweep } => {
            commands::explain(p, &ExplainOptions { variant, ablation, theta_sweep })?;
            println!("{}", p.root.join("explain").display());
        }
        Command::Export { input, format, out } => {
            let out = out.unwrap_or_else(|| p.root.join("export"));
            println!("{}", commands::export(&input, format, &out)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = cli.common;
    let name = command_name(&cli.command);
    let config = match build_config(&common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let mut pipeline = match Pipeline::new(config) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    pipeline.quiet = common.quiet;
    let result = run(&mut pipeline, cli.command);
    let manifest = pipeline.write_manifest(name, result.as_ref().err());
    match (result, manifest) {
        (Ok(()), Ok(_)) if pipeline.stages.iter().all(|s| s.ok) => ExitCode::SUCCESS,
        (Ok(()), Ok(_)) => {
            eprintln!("error: a stage failed; see {}", pipeline.root.join("manifest.json").display());
            ExitCode::FAILURE
        }
        (Err(e), _) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
        (Ok(()), Err(e)) => {
            eprintln!("error: writing manifest: {e:#}");
            ExitCode::FAILURE
        }
    }
}
