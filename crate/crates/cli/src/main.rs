//! `lxl`: dataset generation, training, explanation, atlas analysis and serving.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lxl_core::atlas::{export_scatter, pairwise_separation, radial_positions, Atlas2D, EmbeddingSet};
use lxl_core::dataset::{class_index, write_dataset, CLASS_NAMES};
use lxl_core::explain::{explain, instance_seed};
use lxl_core::models::{train_classifier, train_pgaae};
use lxl_core::run::{self, RunConfig};
use lxl_core::LxlError;
use serde_json::json;

#[derive(Parser)]
#[command(name = "lxl", version, about = "Latent-space explanations for a synthetic lesion classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic dataset generation.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train the black-box classifier or the autoencoder.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Explain one dataset instance.
    Explain(ExplainArgs),
    /// Project the encoded dataset to 2D and measure class-pair separation.
    Atlas(AtlasArgs),
    /// Serve the REST API.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Write a seeded synthetic dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        per_class: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 28)]
        extent: usize,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON run configuration; `seed` is required.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum TrainCommand {
    Classifier(TrainArgs),
    Aae(TrainArgs),
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    instance: String,
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "DATA_DIR", default_value = "data")]
    data: PathBuf,
    /// Explainer parameters come from this run configuration when given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to a hash of the instance id, as used by the service.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AtlasArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    models: PathBuf,
    /// Two class names, e.g. MEL,BKL.
    #[arg(long)]
    pair: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "MODEL_DIR", default_value = "models")]
    models: PathBuf,
    #[arg(long, env = "DATA_DIR", default_value = "data")]
    data: PathBuf,
    #[arg(long, env = "CACHE_DIR", default_value = "cache")]
    cache: PathBuf,
}

fn config_or_standard(path: Option<&Path>) -> lxl_core::Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::standard(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_pair(pair: &str) -> lxl_core::Result<(usize, usize)> {
    let names: Vec<&str> = pair.split(',').map(str::trim).collect();
    let lookup = |n: &str| {
        class_index(n).ok_or_else(|| LxlError::Config(format!("unknown class `{n}`; expected one of {}", CLASS_NAMES.join(","))))
    };
    match names.as_slice() {
        [a, b] => Ok((lookup(a)?, lookup(b)?)),
        _ => Err(LxlError::Config(format!("--pair takes two class names, got `{pair}`"))),
    }
}

/// Fails before any work is done when `out` cannot be a checkpoint file.
fn check_checkpoint_path(out: &Path) -> lxl_core::Result<()> {
    if out.is_dir() {
        return Err(LxlError::Config(format!("--out {} is a directory; expected a checkpoint file path", out.display())));
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> lxl_core::Result<()> {
    let mut w = run::create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

fn run(cli: Cli) -> lxl_core::Result<()> {
    match cli.command {
        Command::Dataset(DatasetCommand::Gen {
            out,
            per_class,
            seed,
            extent,
        }) => {
            let data = lxl_core::dataset::generate_synthetic(per_class as usize, extent, seed)?;
            let manifest = write_dataset(&out, &data, json!({"per_class": per_class, "seed": seed, "extent": extent}))?;
            println!("wrote {} images to {} (content {})", data.len(), out.display(), manifest.content_hash);
        }
        Command::Train(TrainCommand::Classifier(a)) => {
            check_checkpoint_path(&a.out)?;
            let cfg = config_or_standard(Some(&a.config))?;
            let (train, held_out) = cfg.split(&run::load_dataset(&a.data)?)?;
            let (model, report) = train_classifier(&train, Some(&held_out), &cfg.classifier, cfg.model_seed())?;
            model.save(run::create(&a.out)?)?;
            report.write_jsonl(run::create(&run::report_path(&a.out))?)?;
            let acc = report.final_epoch().and_then(|e| e.balanced_accuracy).unwrap_or(f64::NAN);
            println!("final balanced accuracy {acc:.4}");
        }
        Command::Train(TrainCommand::Aae(a)) => {
            check_checkpoint_path(&a.out)?;
            let cfg = config_or_standard(Some(&a.config))?;
            let (train, held_out) = cfg.split(&run::load_dataset(&a.data)?)?;
            let (model, report) = train_pgaae(&train, Some(&held_out), &cfg.schedule, &cfg.aae, cfg.model_seed())?;
            model.save(run::create(&a.out)?)?;
            report.write_jsonl(run::create(&run::report_path(&a.out))?)?;
            if let Some(last) = report.stages.last() {
                let rmse: Vec<String> = last.per_class_rmse.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
                println!("per-class RMSE {}", rmse.join(" "));
            }
        }
        Command::Explain(a) => {
            let cfg = config_or_standard(a.config.as_deref())?;
            let (b, aae) = run::load_models(&a.models)?;
            let data = run::load_dataset(&a.data)?;
            let item = data
                .get(&a.instance)
                .ok_or_else(|| LxlError::Config(format!("instance `{}` is not in {}", a.instance, a.data.display())))?;
            let seed = a.seed.unwrap_or_else(|| instance_seed(&item.id));
            let e = explain(&item.image, &b, &aae, &cfg.explainer, seed)?;
            let mut w = run::create(&a.out)?;
            std::io::Write::write_all(&mut w, e.to_json()?.as_bytes())?;
            std::io::Write::flush(&mut w)?;
            println!(
                "{} explained as {} with {} exemplars, fidelity {:.3}",
                item.id,
                CLASS_NAMES[e.anchor_label],
                e.exemplars.len(),
                e.fidelity
            );
        }
        Command::Atlas(a) => {
            let (ca, cb) = parse_pair(&a.pair)?;
            let cfg = config_or_standard(a.config.as_deref())?;
            let (_, aae) = run::load_models(&a.models)?;
            let data = run::load_dataset(&a.data)?;
            let e = EmbeddingSet::encode(&aae, &data)?;
            let atlas = Atlas2D::from_embeddings(&e, &cfg.atlas.mds)?;
            std::fs::create_dir_all(&a.out)?;
            export_scatter(&atlas, &a.out.join("atlas.csv"), &a.out.join("atlas.svg"))?;
            let report = pairwise_separation(&e, ca, cb, &cfg.atlas)?;
            let radial: std::collections::BTreeMap<&str, f64> =
                radial_positions(&atlas).into_iter().map(|(l, r)| (CLASS_NAMES[l], r)).collect();
            write_json(&a.out.join("separation.json"), &report)?;
            write_json(&a.out.join("radial.json"), &radial)?;
            println!("{}/{} held-out accuracy {:.4}", report.class_names[0], report.class_names[1], report.accuracy);
        }
        Command::Serve(a) => {
            let config = lxl_service::ServiceConfig {
                models: a.models,
                data: a.data,
                cache: a.cache,
                ..lxl_service::ServiceConfig::default()
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(lxl_service::serve(config, a.port))?;
        }
    }
    Ok(())
}

fn exit_code(e: &LxlError) -> u8 {
    if e.is_infeasible() {
        3
    } else if matches!(e, LxlError::Config(_)) {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.stage() {
                Some(stage) => eprintln!("error [{stage}]: {e}"),
                None => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
