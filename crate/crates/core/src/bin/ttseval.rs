use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ttseval::pipeline::{self, PipelineError, RunConfig};

/// Speech-synthesis quality evaluation: rating standardization, augmentation,
/// preference and MOS model training, metrics, and release gating.
#[derive(Parser)]
#[command(name = "ttseval", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config setting; may be repeated. Overrides win over the config file.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-rater z-scoring of a ratings CSV.
    Standardize,
    /// Compute utterance embeddings for the manifest.
    Featurize,
    /// Apply an augmentation recipe (JSON lines) to manifest clips.
    Augment,
    /// Split by text and generate preference pairs.
    Pairs,
    /// Train and evaluate the pairwise preference model.
    TrainSbs,
    /// Train and evaluate the stacked MOS predictor.
    TrainMos,
    /// Score a prediction,target[,group] CSV.
    Evaluate,
    /// Release gate; exits 0 on pass, 1 on fail, 2 on error.
    Gate {
        /// mos_threshold or sbs_winrate.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn load_config(common: &Common, command: &Command) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let mut overrides = common.set.clone();
    if let Some(d) = &common.output_dir {
        overrides.push(format!("output_dir={}", d.display()));
    }
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Command::Gate { mode, threshold } = command {
        if let Some(m) = mode {
            overrides.push(format!("gate.mode={m}"));
        }
        if let Some(t) = threshold {
            overrides.push(format!("gate.threshold={t}"));
        }
    }
    cfg.apply_overrides(&overrides)?;
    Ok(cfg)
}

fn json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default()
}

fn run(cli: &Cli) -> Result<bool, PipelineError> {
    let cfg = load_config(&cli.common, &cli.command)?;
    match &cli.command {
        Command::Standardize => println!("{}", json(&pipeline::cmd_standardize(&cfg)?)),
        Command::Featurize => {
            let emb = pipeline::cmd_featurize(&cfg)?;
            println!("featurized {} clips into {}", emb.len(), cfg.output_dir.join("features.tsv").display());
        }
        Command::Augment => {
            let rows = pipeline::cmd_augment(&cfg)?;
            println!("wrote {} augmented clips", rows.len());
        }
        Command::Pairs => {
            let sets = pipeline::cmd_pairs(&cfg)?;
            println!("train pairs: {}\ntest pairs: {}", sets.train.len(), sets.test.len());
        }
        Command::TrainSbs => println!("{}", json(&pipeline::cmd_pipeline_train_sbs(&cfg)?)),
        Command::TrainMos => println!("{}", json(&pipeline::cmd_pipeline_train_mos(&cfg)?)),
        Command::Evaluate => {
            let r = pipeline::cmd_evaluate(&cfg)?;
            print!("{}", r.utterance.to_text());
            if let Some(g) = &r.group {
                println!("# group-level");
                print!("{}", g.to_text());
            }
        }
        Command::Gate { .. } => {
            let r = pipeline::cmd_gate(&cfg)?;
            for c in &r.clips {
                println!("{}\t{:.6}", c.clip_id, c.score);
            }
            println!(
                "{} {:?} statistic={:.6} threshold={:.6} n={}",
                if r.passed { "PASS" } else { "FAIL" },
                r.mode,
                r.statistic,
                r.threshold,
                r.n_comparisons
            );
            return Ok(r.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TTSEVAL_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(2)
        }
    }
}
