//! `contactnet`: rescoring, assessment, clustering and training of
//! docking models from a JSON pipeline configuration.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or runtime error,
//! 4 failed verification (gradient check).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand, ValueEnum};
use contactnet::par;
use contactnet::pipeline::{self, PipelineConfig};
use contactnet::synth::{write_case_fixture, CaseFixture};
use contactnet::tensor::Precision;
use contactnet::Error;

#[derive(Parser)]
#[command(name = "contactnet", version, about = "Rescore docking models with a contact-based graph-attention network")]
struct Cli {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for training and sampling; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Inference precision.
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Write per-residue feature sidecars for every configured component.
    Featurize,
    /// Score the top-K models of every case with the network.
    Score {
        /// Model weights; overrides the configuration.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Assess every model against its native and summarise Top-N success.
    Assess,
    /// Write score-versus-iRMSD funnel tables.
    Funnel,
    /// Cluster scored models by interface RMSD.
    Cluster {
        /// Clustering radius in Å.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train the network.
    Train {
        /// Resume from a checkpoint's weights file.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Where to write the final weights.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check the network's analytic gradients against finite differences.
    Gradcheck {
        /// Weights to check at; a fresh initialisation otherwise.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Coordinates sampled per parameter tensor.
        #[arg(long, default_value_t = 16)]
        max_coords: usize,
    },
    /// Write a synthetic demonstration dataset and a configuration for it.
    Demo {
        /// Target directory.
        dir: PathBuf,
        #[arg(long, default_value_t = 2)]
        cases: usize,
        #[arg(long, default_value_t = 50)]
        decoys: usize,
        #[arg(long, default_value_t = 60)]
        receptor_len: usize,
        #[arg(long, default_value_t = 40)]
        ligand_len: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(3, pipeline::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => {
            let mut c = PipelineConfig::default();
            c.resolve(&std::env::current_dir().context("reading the working directory")?)?;
            c
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.training.optimizer.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Some(p) = cli.precision {
        cfg.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    if let Command::Demo {
        dir,
        cases,
        decoys,
        receptor_len,
        ligand_len,
    } = &cli.command
    {
        return demo(dir, *cases, *decoys, *receptor_len, *ligand_len, cli.seed.unwrap_or(0));
    }
    let mut cfg = load_config(&cli)?;
    let workers = cfg.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    par::with_workers(workers, move || execute(&cli.command, &mut cfg))
}

fn execute(command: &Command, cfg: &mut PipelineConfig) -> anyhow::Result<u8> {
    match command {
        Command::Featurize => {
            let written = pipeline::cmd_featurize(cfg)?;
            println!("wrote {} feature files under {}", written.len(), cfg.output_dir.join("features").display());
        }
        Command::Score { weights, top_k } => {
            if let Some(w) = weights {
                cfg.weights = Some(w.clone());
            }
            if let Some(k) = top_k {
                cfg.top_k_rescore = *k;
            }
            cfg.validate()?;
            let w = pipeline::load_configured_weights(cfg)?;
            let s = pipeline::cmd_score(cfg, &w)?;
            println!("scored {}, passed through {}, skipped {}", s.scored, s.unscored, s.skipped);
        }
        Command::Assess => {
            let s = pipeline::cmd_assess(cfg)?;
            for (col, summary) in &s.columns {
                let rates: Vec<String> = summary.success.iter().map(|(k, v)| format!("{k} {v:.3}")).collect();
                println!("{col} ({} cases): {}", summary.cases, rates.join(", "));
            }
        }
        Command::Funnel => {
            let written = pipeline::cmd_funnel(cfg)?;
            println!("wrote {} funnel tables", written.len());
        }
        Command::Cluster { threshold } => {
            if let Some(t) = threshold {
                cfg.cluster_threshold = *t;
            }
            cfg.validate()?;
            let s = pipeline::cmd_cluster(cfg)?;
            for (case, n) in &s.clusters {
                println!("{case}: {n} clusters");
            }
            if let (Some(b), Some(a)) = (&s.before, &s.after) {
                for (k, v) in &b.success {
                    println!("{k}: {v:.3} before, {:.3} after clustering", a.success[k]);
                }
            }
        }
        Command::Train { resume, output } => {
            if let Some(r) = resume {
                cfg.training.resume = Some(r.clone());
            }
            if let Some(o) = output {
                cfg.training.output = Some(o.clone());
            }
            cfg.validate()?;
            let r = pipeline::cmd_train(cfg)?;
            println!(
                "trained on {} positives and {} negatives; best epoch {}, final loss {:.4}, training accuracy {:.3}",
                r.positives, r.negatives, r.best_epoch, r.final_loss, r.train_accuracy
            );
            println!("weights: {}", r.weights_path.display());
        }
        Command::Gradcheck { weights, max_coords } => {
            let w = match weights {
                Some(p) => Some(contactnet::network::load_weights(p)?),
                None => None,
            };
            let out = pipeline::network_gradcheck(&cfg.training.hyper, w.as_ref(), cfg.seed, *max_coords)?;
            println!(
                "{} contacts, {} coordinates checked, {} excluded at kinks, max relative error {:.3e}",
                out.contacts,
                out.report.checked(),
                out.report.excluded(),
                out.report.max_rel_error
            );
            if !out.passed {
                eprintln!("gradient check failed: tolerance {:.0e}", pipeline::GRADCHECK_TOLERANCE);
                return Ok(4);
            }
        }
        Command::Demo { .. } => unreachable!("handled before configuration is loaded"),
    }
    Ok(0)
}

fn demo(dir: &std::path::Path, cases: usize, decoys: usize, receptor_len: usize, ligand_len: usize, seed: u64) -> anyhow::Result<u8> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let dir = &std::path::absolute(dir)?;
    let mut specs = Vec::with_capacity(cases);
    for c in 0..cases {
        let f = CaseFixture {
            receptor_len,
            ligand_len,
            ..CaseFixture::new(format!("case{:02}", c + 1), decoys, seed + c as u64)
        };
        specs.push(write_case_fixture(&dir.join("data"), &f)?);
    }
    // Untrained weights, so that every command runs out of the box.
    let weights = dir.join("untrained.cnwt");
    let hyper = contactnet::network::HyperParams::default();
    contactnet::network::save_weights(&weights, &contactnet::network::init_weights(&hyper, seed)?)?;
    let cfg = PipelineConfig {
        output_dir: PathBuf::from("out"),
        weights: Some(weights),
        cases: specs,
        ..Default::default()
    };
    let path = dir.join("config.json");
    let text = serde_json::to_string_pretty(&cfg)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} cases with {decoys} models each; configuration at {}", cases, path.display());
    Ok(0)
}
