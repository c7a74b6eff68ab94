//! Pipeline CLI: thin dispatch onto the library. Each subcommand maps to one
//! stage; `experiment` runs them all from a config file.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use framewalk::degrade::CategoryLabel;
use framewalk::harness::checkpoint::{read_checkpoint, write_checkpoint};
use framewalk::harness::config::ExperimentConfig;
use framewalk::harness::experiment::{infer_split, run_experiment};
use framewalk::harness::manifest::parse_manifest;
use framewalk::harness::report::{emit_report, parse_report_csv, ReportFormat};
use framewalk::harness::synth::{gen_clean_images, synth_dataset};
use framewalk::metrics::{evaluate_items, EvalItem, SsimParams};
use framewalk::model::ModelConfig;
use framewalk::sampler::SamplerConfig;
use framewalk::tensor::Element;
use framewalk::trainer::{build_schedule, trace_to_csv, train_drift_corrector, train_run, TrainRunConfig};

#[derive(Parser)]
#[command(name = "framewalk", version, about = "Image restoration as progressive trajectory generation")]
struct Cli {
    /// Override the config seed (default: the config's value, or 42).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Numeric precision for training and inference.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    /// Worker thread count (0 = one per core). Results are identical for
    /// any value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a degraded dataset from procedural clean images.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        per_category: usize,
        /// Comma-separated category names, or `all`.
        #[arg(long, default_value = "all")]
        categories: String,
        #[arg(long, default_value_t = 64)]
        source_count: usize,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
    },
    /// Train the base model on a manifest using a config's model/schedule.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the drift-correction model against a base checkpoint.
    TrainCorrector {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `warm` (from the base weights) or `fresh`.
        #[arg(long, default_value = "warm")]
        init: String,
    },
    /// Run restoration over a manifest and write prediction images.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corrector: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 5.0)]
        guidance: f64,
        #[arg(long, default_value_t = 5.0)]
        shift: f64,
        #[arg(long, default_value_t = 2048)]
        resize_limit: usize,
    },
    /// Score predictions against a manifest's ground truth.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of `pred_NNNN.png` files in manifest order.
        #[arg(long)]
        preds: PathBuf,
        /// Output base path; writes `<out>.csv` and `<out>.md`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-emit a report CSV in another format.
    Report {
        #[arg(long)]
        from: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full experiment config (synth, train, correct, infer, eval).
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let threads = cli.threads;
    let run = move || -> Result<()> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .context("building the worker pool")?;
        pool.install(|| dispatch(cli))
    };
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, per_category, categories, source_count, image_size } => {
            let cats: Vec<CategoryLabel> = if categories == "all" {
                CategoryLabel::all().collect()
            } else {
                categories
                    .split(',')
                    .map(|c| CategoryLabel::parse(c.trim()))
                    .collect::<framewalk::Result<_>>()?
            };
            let seed = cli.seed.unwrap_or(42);
            let sources = gen_clean_images(source_count, image_size, seed);
            let manifest = synth_dataset(&sources, &cats, per_category, seed, &out)?;
            println!("wrote {} pairs under {}", manifest.len(), out.display());
            Ok(())
        }
        Command::Train { config, manifest, out } => match cli.precision {
            Precision::F32 => train_cmd::<f32>(&config, &manifest, &out, cli.seed),
            Precision::F64 => train_cmd::<f64>(&config, &manifest, &out, cli.seed),
        },
        Command::TrainCorrector { config, base, manifest, out, init } => {
            let init = framewalk::trainer::CorrectorInit::parse(&init)?;
            match cli.precision {
                Precision::F32 => corrector_cmd::<f32>(&config, &base, &manifest, &out, cli.seed, init),
                Precision::F64 => corrector_cmd::<f64>(&config, &base, &manifest, &out, cli.seed, init),
            }
        }
        Command::Infer { checkpoint, corrector, manifest, out, steps, guidance, shift, resize_limit } => {
            match cli.precision {
                Precision::F32 => infer_cmd::<f32>(
                    &checkpoint, corrector.as_deref(), &manifest, &out, steps, guidance, shift, resize_limit, cli.seed,
                ),
                Precision::F64 => infer_cmd::<f64>(
                    &checkpoint, corrector.as_deref(), &manifest, &out, steps, guidance, shift, resize_limit, cli.seed,
                ),
            }
        }
        Command::Eval { manifest, preds, out } => eval_cmd(&manifest, &preds, &out),
        Command::Report { from, format, out } => {
            let text = fs::read_to_string(&from).with_context(|| from.display().to_string())?;
            let report = parse_report_csv(&text)?;
            emit_report(&report, ReportFormat::parse(&format)?, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Experiment { config, out } => {
            let text = fs::read_to_string(&config).with_context(|| config.display().to_string())?;
            let mut parsed = ExperimentConfig::parse(&text)?;
            if let Some(seed) = cli.seed {
                parsed.seed = seed;
            }
            let results = match cli.precision {
                Precision::F32 => run_experiment::<f32>(&parsed, &out)?,
                Precision::F64 => run_experiment::<f64>(&parsed, &out)?,
            };
            for r in &results {
                let label = r
                    .sweep
                    .as_ref()
                    .map(|(a, v)| format!("{a}={v}: "))
                    .unwrap_or_default();
                println!(
                    "{label}input {:.2} dB -> output {:.2} dB (base {:.2} dB), SSIM {:.4}",
                    r.input_psnr, r.output_psnr, r.base_psnr, r.output_ssim
                );
            }
            Ok(())
        }
    }
}

/// Build the training config from an experiment file's model/schedule
/// sections (sweeps are not allowed here; use `experiment` for those).
fn load_train_config(path: &PathBuf, seed_override: Option<u64>) -> Result<(ExperimentConfig, TrainRunConfig)> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let mut parsed = ExperimentConfig::parse(&text)?;
    if let Some(seed) = seed_override {
        parsed.seed = seed;
    }
    let variants = parsed.variants()?;
    if variants.len() != 1 {
        bail!("`train` needs a single-variant config; run `experiment` for sweeps");
    }
    let v = &variants[0];
    let train = TrainRunConfig {
        schedule: build_schedule(&v.resolutions, parsed.schedule.epochs, parsed.schedule.allow_decreasing)?,
        interval_count: v.frames - 1,
        model: ModelConfig { frame_count: v.frames, ..parsed.model },
        optimizer: parsed.schedule.optimizer,
        seed: parsed.seed,
        batch_size: parsed.schedule.batch_size,
        steps_per_epoch: parsed.schedule.steps_per_epoch,
        stage_mode: parsed.schedule.stage_mode,
    };
    Ok((parsed, train))
}

fn train_cmd<E: Element>(config: &PathBuf, manifest: &PathBuf, out: &PathBuf, seed: Option<u64>) -> Result<()> {
    let (_, train_config) = load_train_config(config, seed)?;
    let pairs = parse_manifest(manifest)?.load_pairs()?;
    let (model, trace) = train_run::<E>(&train_config, &pairs)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("trace.csv"), trace_to_csv(&trace))?;
    write_checkpoint(&model, train_config.seed, train_config.total_steps() as u64, None, out.join("checkpoint.ckpt"))?;
    println!(
        "trained {} steps, final loss {:.6}; checkpoint at {}",
        trace.len(),
        trace.last().map(|r| r.loss).unwrap_or(f64::NAN),
        out.join("checkpoint.ckpt").display()
    );
    Ok(())
}

fn corrector_cmd<E: Element>(
    config: &PathBuf,
    base: &PathBuf,
    manifest: &PathBuf,
    out: &PathBuf,
    seed: Option<u64>,
    init: framewalk::trainer::CorrectorInit,
) -> Result<()> {
    let (parsed, mut train_config) = load_train_config(config, seed)?;
    let base_model = read_checkpoint(base)?.model::<E>();
    train_config.interval_count = framewalk::clip::DRIFT_INTERVALS;
    train_config.model.frame_count = framewalk::clip::DRIFT_INTERVALS + 1;
    train_config.seed = train_config.seed.wrapping_add(1);
    let resolutions: Vec<usize> = train_config.schedule.stages.iter().map(|s| s.resolution).collect();
    train_config.schedule =
        build_schedule(&resolutions, parsed.schedule.corrector_epochs, parsed.schedule.allow_decreasing)?;
    train_config.steps_per_epoch = parsed.schedule.corrector_steps_per_epoch;
    let sampler = SamplerConfig {
        steps: parsed.sampler.steps,
        guidance_scale: parsed.sampler.guidance,
        shift: parsed.sampler.shift,
        mode: base_model.config.mode,
    };
    let pairs = parse_manifest(manifest)?.load_pairs()?;
    let (corrector, trace) = train_drift_corrector::<E>(&base_model, &sampler, &train_config, &pairs, init)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("corrector_trace.csv"), trace_to_csv(&trace))?;
    write_checkpoint(&corrector, train_config.seed, train_config.total_steps() as u64, None, out.join("corrector.ckpt"))?;
    println!("corrector checkpoint at {}", out.join("corrector.ckpt").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn infer_cmd<E: Element>(
    checkpoint: &PathBuf,
    corrector: Option<&std::path::Path>,
    manifest: &PathBuf,
    out: &PathBuf,
    steps: usize,
    guidance: f64,
    shift: f64,
    resize_limit: usize,
    seed: Option<u64>,
) -> Result<()> {
    let base = read_checkpoint(checkpoint)?;
    let base_model = base.model::<E>();
    let corrector_model = corrector.map(read_checkpoint).transpose()?.map(|c| c.model::<E>());
    let sampler = SamplerConfig { steps, guidance_scale: guidance, shift, mode: base_model.config.mode };
    let manifest = parse_manifest(manifest)?;
    fs::create_dir_all(out)?;
    let preds = infer_split(
        &base_model,
        corrector_model.as_ref(),
        &sampler,
        &manifest,
        resize_limit,
        seed.unwrap_or(base.seed),
        out,
    )?;
    let final_dir = if preds.corrected.is_some() { out.join("preds") } else { out.join("preds_base") };
    println!("wrote {} predictions under {}", preds.base.len(), final_dir.display());
    Ok(())
}

fn eval_cmd(manifest: &PathBuf, preds: &PathBuf, out: &PathBuf) -> Result<()> {
    let manifest = parse_manifest(manifest)?;
    let mut missing = Vec::new();
    let mut items = Vec::with_capacity(manifest.len());
    for (i, entry) in manifest.entries.iter().enumerate() {
        let pred_path = preds.join(format!("pred_{i:04}.png"));
        if !pred_path.exists() {
            missing.push(pred_path.display().to_string());
            continue;
        }
        items.push(EvalItem { category: entry.category, gt_path: manifest.hq_abs(entry), pred_path });
    }
    if !missing.is_empty() {
        bail!("missing predictions:\n  {}", missing.join("\n  "));
    }
    let report = evaluate_items(&items, &SsimParams::default())?;
    let csv = out.with_extension("csv");
    let md = out.with_extension("md");
    emit_report(&report, ReportFormat::Csv, &csv)?;
    emit_report(&report, ReportFormat::Markdown, &md)?;
    println!(
        "overall PSNR {:.2} dB, SSIM {:.4}; wrote {} and {}",
        report.overall_psnr,
        report.overall_ssim,
        csv.display(),
        md.display()
    );
    Ok(())
}
