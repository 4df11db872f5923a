//! `textnet`: generate synthetic data, train, run inference and evaluate.
//!
//! Exit status is 0 on success, 1 on usage or configuration errors and 2 on
//! data errors or a diverged training run.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{ArgGroup, Parser, Subcommand};
use log::info;
use textnet_core::eval::{format_prediction, parse_lexicon, parse_predictions};
use textnet_core::infer::infer_with;
use textnet_core::synth::{read_index, read_ppm, render_sample, write_dataset};
use textnet_core::train::{load_model, LogRow};
use textnet_core::{end_to_end_score, Error, RunConfig, Trainer};

#[derive(Parser)]
#[command(name = "textnet", version, about = "Irregular scene text detection and recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Gen {
        #[arg(long)]
        count: usize,
        /// Run configuration; its data.* keys drive rendering.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override a configuration key, e.g. `--set data.seed=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train a model; writes config, loss log and checkpoint into `--out`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Detect and read text in one image or every image of a dataset.
    #[command(group(ArgGroup::new("input").required(true).args(["image", "dataset"])))]
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        /// Dataset directory or index file.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Where to write `key=value` lines; printed after the table when
        /// absent.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", path.display()))
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            RunConfig::parse(&read(p)?)?
        }
        None => RunConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("override {o:?} is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gen(count: usize, config: Option<&Path>, out: &Path, overrides: &[String]) -> anyhow::Result<()> {
    let mut cfg = load_config(config, overrides)?;
    cfg.data.count = count;
    let samples = (0..count as u64)
        .map(|i| render_sample(&cfg.data.synth, i))
        .collect::<Result<Vec<_>, _>>()?;
    write_dataset(out, &samples)?;
    let words: usize = samples.iter().map(|s| s.instances.len()).sum();
    println!("wrote {count} images with {words} words to {}", out.display());
    Ok(())
}

fn train(config: &Path, out: &Path, overrides: &[String]) -> anyhow::Result<()> {
    let cfg = load_config(Some(config), overrides)?;
    let total = cfg.total_steps();
    let mut trainer = Trainer::from_config(cfg)?;
    info!("training {} images for {total} steps", trainer.data.len());
    let every = (total / 20).max(1);
    let report = |row: &LogRow| {
        if (row.step + 1) % every == 0 || row.step + 1 == total {
            info!(
                "step {} [{}] L_det {:.4} L_reg {:.4} L {:.4}",
                row.step + 1,
                row.stage,
                row.loss.det,
                row.loss.reg,
                row.loss.total
            );
        }
    };
    let rows = trainer.run(Some(out), report)?;
    if let Some(last) = rows.last() {
        println!(
            "trained {} steps, final L {:.4}; checkpoint in {}",
            trainer.step(),
            last.loss.total,
            out.display()
        );
    }
    Ok(())
}

fn infer(checkpoint: &Path, image: Option<&Path>, dataset: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let (cfg, net, store) = load_model(checkpoint)?;
    let inputs: Vec<(String, PathBuf)> = match (image, dataset) {
        (Some(p), _) => {
            let name = p
                .file_name()
                .ok_or_else(|| Error::Usage(format!("{} is not a file", p.display())))?
                .to_string_lossy()
                .into_owned();
            vec![(name, p.to_path_buf())]
        }
        (None, Some(dir)) => read_index(dir)?
            .into_iter()
            .map(|(name, _)| {
                let path = dir.join(&name);
                (name, path)
            })
            .collect(),
        (None, None) => return Err(anyhow!(Error::Usage("one of --image or --dataset is required".into()))),
    };
    let mut lines = String::new();
    let mut found = 0;
    for (name, path) in &inputs {
        let img = read_ppm(path)?;
        let dets = infer_with(&net, &store, &img, &cfg)?;
        found += dets.len();
        let quads: Vec<_> = dets.iter().map(|d| d.quad).collect();
        let texts: Vec<_> = dets.iter().map(|d| d.text.clone()).collect();
        lines.push_str(&format_prediction(name, &quads, &texts));
        lines.push('\n');
    }
    fs::write(out, lines)
        .map_err(Error::from)
        .with_context(|| format!("writing {}", out.display()))?;
    println!("{found} detections in {} images written to {}", inputs.len(), out.display());
    Ok(())
}

fn eval(pred: &Path, gt: &Path, lexicon: Option<&Path>, report: Option<&Path>) -> anyhow::Result<()> {
    let preds = parse_predictions(&read(pred)?)?;
    let truth = read_index(gt)?;
    let lex = match lexicon {
        Some(p) => Some(parse_lexicon(&read(p)?)),
        None => None,
    };
    let result = end_to_end_score(&preds, &truth, lex.as_deref())?;
    println!("{result}");
    let kv = result.to_key_values();
    match report {
        Some(p) => fs::write(p, kv)
            .map_err(Error::from)
            .with_context(|| format!("writing {}", p.display()))?,
        None => print!("{kv}"),
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if e.is_data_error() => 2,
        Some(Error::NonFinite(_)) => 2,
        Some(_) => 1,
        None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Gen {
            count,
            config,
            out,
            overrides,
        } => gen(*count, config.as_deref(), out, overrides),
        Command::Train { config, out, overrides } => train(config, out, overrides),
        Command::Infer {
            checkpoint,
            image,
            dataset,
            out,
        } => infer(checkpoint, image.as_deref(), dataset.as_deref(), out),
        Command::Eval {
            pred,
            gt,
            lexicon,
            report,
        } => eval(pred, gt, lexicon.as_deref(), report.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
