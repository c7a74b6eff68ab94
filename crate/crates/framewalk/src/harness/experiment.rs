//! End-to-end experiment runner: synthesize data, train (with optional drift
//! corrector), run inference over the held-out split, score it, and emit
//! reports plus plot data. Sweeps run one variant per subdirectory and add a
//! combined plot CSV at the root.
//!
//! Every artifact directory gets a `provenance.txt` (config hash, seed, crate
//! version) sufficient to re-run exactly; an `INCOMPLETE` marker file exists
//! while a run is in flight and is removed on success.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::clip::DRIFT_INTERVALS;
use crate::error::{Error, Result};
use crate::harness::checkpoint::write_checkpoint;
use crate::harness::config::{CorrectorSplit, DatasetConfig, ExperimentConfig, ExperimentVariant};
use crate::harness::manifest::{parse_manifest, Manifest};
use crate::harness::report::{emit_report, report_to_csv, ReportFormat};
use crate::harness::synth::{gen_clean_images, synth_dataset};
use crate::image::io::{read_image, write_image};
use crate::image::{resize, ImageBuffer};
use crate::metrics::{apply_resize_policy, evaluate_items, EvalItem, EvalReport, SsimParams};
use crate::model::{ModelConfig, ModelParams};
use crate::sampler::{sample_clip, SamplerConfig};
use crate::tensor::Element;
use crate::trainer::{
    build_schedule, trace_to_csv, train_drift_corrector, train_run, TrainPair, TrainRunConfig,
};

/// Seed salt separating the held-out split from training data.
pub const EVAL_SEED_SALT: u64 = 1_000_003;
/// Seed salt for per-image inference randomness.
pub const INFER_SEED_SALT: u64 = 7_777_777;

pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

/// Summary of one resolved variant run.
#[derive(Clone, Debug)]
pub struct VariantResult {
    pub dir: PathBuf,
    pub sweep: Option<(String, String)>,
    /// PSNR/SSIM of the pipeline's final output (corrector applied when
    /// configured).
    pub output_psnr: f64,
    pub output_ssim: f64,
    /// Base-model output scores, before drift correction.
    pub base_psnr: f64,
    pub base_ssim: f64,
    /// Degraded-input scores, the no-op baseline.
    pub input_psnr: f64,
    pub input_ssim: f64,
}

pub fn config_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_provenance(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    let body = format!(
        "config_sha256={}\nseed={}\nversion={}\n",
        config_hash(&config.raw_text),
        config.seed,
        env!("CARGO_PKG_VERSION"),
    );
    fs::write(dir.join("provenance.txt"), body)
        .map_err(|e| Error::io(dir.join("provenance.txt").display().to_string(), e))
}

/// Run every variant of an experiment config under `out_dir`.
pub fn run_experiment<E: Element>(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<VariantResult>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    fs::write(out_dir.join(INCOMPLETE_MARKER), "run in progress\n")
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    fs::write(out_dir.join("config.cfg"), &config.raw_text)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    write_provenance(out_dir, config)?;

    let variants = config.variants()?;
    let sweeping = variants.len() > 1;
    let mut results = Vec::new();
    for variant in &variants {
        let dir = match (&variant.sweep, sweeping) {
            (Some((axis, value)), true) => out_dir.join(format!("{axis}_{value}")),
            _ => out_dir.to_path_buf(),
        };
        results.push(run_variant::<E>(config, variant, &dir)?);
    }

    if sweeping {
        let mut plot = String::from("axis,value,psnr,ssim\n");
        for r in &results {
            let (axis, value) = r.sweep.clone().expect("sweep variants carry labels");
            plot.push_str(&format!(
                "{axis},{value},{},{}\n",
                crate::harness::report::fmt_fixed(r.output_psnr, 2),
                crate::harness::report::fmt_fixed(r.output_ssim, 4)
            ));
        }
        fs::write(out_dir.join("plot.csv"), plot)
            .map_err(|e| Error::io(out_dir.join("plot.csv").display().to_string(), e))?;
    }
    // single-variant runs share the marker path with their variant, which
    // has already cleared it
    let marker = out_dir.join(INCOMPLETE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    }
    Ok(results)
}

fn run_variant<E: Element>(
    config: &ExperimentConfig,
    variant: &ExperimentVariant,
    dir: &Path,
) -> Result<VariantResult> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    fs::write(dir.join(INCOMPLETE_MARKER), "run in progress\n")
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_provenance(dir, config)?;

    // ── data ─────────────────────────────────────────────────────────
    let (train_manifest, eval_manifest) = match &config.dataset {
        DatasetConfig::Synthetic { source_count, image_size, categories, eval_per_category, .. } => {
            let train_sources = gen_clean_images(*source_count, *image_size, config.seed);
            let train = synth_dataset(
                &train_sources,
                categories,
                variant.train_per_category,
                config.seed,
                &dir.join("train_data"),
            )
            .map_err(|e| e.in_stage("synth"))?;
            let eval_seed = config.seed.wrapping_add(EVAL_SEED_SALT);
            let eval_sources = gen_clean_images((*source_count).max(8), *image_size, eval_seed);
            let eval = synth_dataset(
                &eval_sources,
                categories,
                *eval_per_category,
                eval_seed,
                &dir.join("eval_data"),
            )
            .map_err(|e| e.in_stage("synth"))?;
            (train, eval)
        }
        DatasetConfig::Manifests { train, eval } => (
            parse_manifest(train).map_err(|e| e.in_stage("synth"))?,
            parse_manifest(eval).map_err(|e| e.in_stage("synth"))?,
        ),
    };
    let all_pairs = train_manifest.load_pairs().map_err(|e| e.in_stage("train"))?;
    // disjoint corrector split holds every 5th pair back from base training
    let (pairs, corrector_pairs): (Vec<TrainPair>, Vec<TrainPair>) =
        match (config.schedule.corrector, config.schedule.corrector_split) {
            (true, CorrectorSplit::Disjoint) => {
                let base = all_pairs
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % 5 != 0)
                    .map(|(_, p)| p.clone())
                    .collect();
                let corr = all_pairs
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % 5 == 0)
                    .map(|(_, p)| p.clone())
                    .collect();
                (base, corr)
            }
            _ => (all_pairs.clone(), all_pairs),
        };

    // ── base training ────────────────────────────────────────────────
    let train_config = TrainRunConfig {
        schedule: build_schedule(&variant.resolutions, config.schedule.epochs, config.schedule.allow_decreasing)?,
        interval_count: variant.frames - 1,
        model: ModelConfig { frame_count: variant.frames, ..config.model },
        optimizer: config.schedule.optimizer,
        seed: config.seed,
        batch_size: config.schedule.batch_size,
        steps_per_epoch: config.schedule.steps_per_epoch,
        stage_mode: config.schedule.stage_mode,
    };
    let (base_model, trace) = train_run::<E>(&train_config, &pairs)?;
    fs::write(dir.join("trace.csv"), trace_to_csv(&trace))
        .map_err(|e| Error::io(dir.join("trace.csv").display().to_string(), e))?;
    write_checkpoint(&base_model, config.seed, train_config.total_steps() as u64, None, dir.join("checkpoint.ckpt"))?;

    let sampler_config = SamplerConfig {
        steps: config.sampler.steps,
        guidance_scale: config.sampler.guidance,
        shift: config.sampler.shift,
        mode: config.model.mode,
    };

    // ── drift corrector ──────────────────────────────────────────────
    let corrector: Option<ModelParams<E>> = if config.schedule.corrector {
        let corrector_config = TrainRunConfig {
            schedule: build_schedule(
                &variant.resolutions,
                config.schedule.corrector_epochs,
                config.schedule.allow_decreasing,
            )?,
            interval_count: DRIFT_INTERVALS,
            model: ModelConfig { frame_count: DRIFT_INTERVALS + 1, ..config.model },
            optimizer: config.schedule.optimizer,
            // fresh stream so the corrector is not a weight-for-weight twin
            seed: config.seed.wrapping_add(1),
            batch_size: config.schedule.batch_size,
            steps_per_epoch: config.schedule.corrector_steps_per_epoch,
            stage_mode: config.schedule.stage_mode,
        };
        let (corrector, ctrace) =
            train_drift_corrector::<E>(
            &base_model,
            &sampler_config,
            &corrector_config,
            &corrector_pairs,
            config.schedule.corrector_init,
        )?;
        fs::write(dir.join("corrector_trace.csv"), trace_to_csv(&ctrace))
            .map_err(|e| Error::io(dir.join("corrector_trace.csv").display().to_string(), e))?;
        write_checkpoint(
            &corrector,
            corrector_config.seed,
            corrector_config.total_steps() as u64,
            None,
            dir.join("corrector.ckpt"),
        )?;
        Some(corrector)
    } else {
        None
    };

    // ── inference over the held-out split ────────────────────────────
    let apply_corrector = config.eval.apply_corrector && corrector.is_some();
    let preds = infer_split(
        &base_model,
        corrector.as_ref().filter(|_| apply_corrector),
        &sampler_config,
        &eval_manifest,
        config.eval.resize_limit,
        config.seed,
        dir,
    )
    .map_err(|e| e.in_stage("infer"))?;

    // ── metrics and reports ──────────────────────────────────────────
    let score = |pred_paths: &[PathBuf]| -> Result<EvalReport> {
        let items: Vec<EvalItem> = eval_manifest
            .entries
            .iter()
            .zip(pred_paths)
            .map(|(e, p)| EvalItem {
                category: e.category,
                gt_path: eval_manifest.hq_abs(e),
                pred_path: p.clone(),
            })
            .collect();
        let mut report = evaluate_items(&items, &SsimParams::default())?;
        report.checkpoint_id = config_hash(&config.raw_text)[..16].to_string();
        report.dataset_id = format!("seed{}", config.seed);
        Ok(report)
    };
    let input_paths: Vec<PathBuf> = eval_manifest.entries.iter().map(|e| eval_manifest.lq_abs(e)).collect();
    let input_report = score(&input_paths).map_err(|e| e.in_stage("eval"))?;
    let base_report = score(&preds.base).map_err(|e| e.in_stage("eval"))?;
    let output_report = match &preds.corrected {
        Some(paths) => score(paths).map_err(|e| e.in_stage("eval"))?,
        None => base_report.clone(),
    };

    emit_report(&output_report, ReportFormat::Csv, dir.join("report.csv"))?;
    emit_report(&output_report, ReportFormat::Markdown, dir.join("report.md"))?;
    emit_report(&base_report, ReportFormat::Csv, dir.join("report_base.csv"))?;
    emit_report(&input_report, ReportFormat::Csv, dir.join("report_input.csv"))?;
    // single-variant runs still get a tiny plot row for convenience
    let _ = report_to_csv(&output_report)?;

    fs::remove_file(dir.join(INCOMPLETE_MARKER))
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    Ok(VariantResult {
        dir: dir.to_path_buf(),
        sweep: variant.sweep.clone(),
        output_psnr: output_report.overall_psnr,
        output_ssim: output_report.overall_ssim,
        base_psnr: base_report.overall_psnr,
        base_ssim: base_report.overall_ssim,
        input_psnr: input_report.overall_psnr,
        input_ssim: input_report.overall_ssim,
    })
}

/// Prediction files written by [`infer_split`], in manifest order.
pub struct Predictions {
    pub base: Vec<PathBuf>,
    pub corrected: Option<Vec<PathBuf>>,
}

/// Run inference over a manifest: restore each anchor to patch-divisible
/// dimensions, sample the trajectory (optionally refining the last frame
/// with the drift corrector), and map outputs back to the entry's original
/// dimensions. Writes `preds_base/pred_NNNN.png` (and `preds/` when a
/// corrector is given) under `dir`.
pub fn infer_split<E: Element>(
    base: &ModelParams<E>,
    corrector: Option<&ModelParams<E>>,
    sampler_config: &SamplerConfig,
    manifest: &Manifest,
    resize_limit: usize,
    seed: u64,
    dir: &Path,
) -> Result<Predictions> {
    let base_dir = dir.join("preds_base");
    fs::create_dir_all(&base_dir).map_err(|e| Error::io(base_dir.display().to_string(), e))?;
    let corr_dir = dir.join("preds");
    if corrector.is_some() {
        fs::create_dir_all(&corr_dir).map_err(|e| Error::io(corr_dir.display().to_string(), e))?;
    }
    let patch = base.config.patch_size;

    let outputs: Result<Vec<(ImageBuffer, Option<ImageBuffer>)>> = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let lq = read_image(manifest.lq_abs(entry))?;
            let (working, restore) = apply_resize_policy(&lq, resize_limit)?;
            let (dh, dw) = (round_up(working.height(), patch), round_up(working.width(), patch));
            let divisible =
                if (dh, dw) == working.dims() { working.clone() } else { resize(&working, dh, dw)? };

            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64) ^ INFER_SEED_SALT);
            let clip = sample_clip(base, &divisible, sampler_config, &mut rng)?;
            let mut base_out = clip.last().clone();

            let corrected = match corrector {
                Some(c) => {
                    let cclip = sample_clip(c, &base_out, sampler_config, &mut rng)?;
                    Some(finish(cclip.last(), working.dims(), &restore)?)
                }
                None => None,
            };
            base_out = finish(&base_out, working.dims(), &restore)?;
            Ok((base_out, corrected))
        })
        .collect();
    let outputs = outputs?;

    let mut base_paths = Vec::with_capacity(outputs.len());
    let mut corr_paths = Vec::with_capacity(outputs.len());
    for (i, (base_out, corrected)) in outputs.iter().enumerate() {
        let bp = base_dir.join(format!("pred_{i:04}.png"));
        write_image(base_out, &bp)?;
        base_paths.push(bp);
        if let Some(c) = corrected {
            let cp = corr_dir.join(format!("pred_{i:04}.png"));
            write_image(c, &cp)?;
            corr_paths.push(cp);
        }
    }
    Ok(Predictions {
        base: base_paths,
        corrected: corrector.is_some().then_some(corr_paths),
    })
}

fn round_up(v: usize, multiple: usize) -> usize {
    v.div_ceil(multiple) * multiple
}

fn finish(
    frame: &ImageBuffer,
    working_dims: (usize, usize),
    restore: &crate::metrics::RestoreTransform,
) -> Result<ImageBuffer> {
    let at_working =
        if frame.dims() == working_dims { frame.clone() } else { resize(frame, working_dims.0, working_dims.1)? };
    restore.apply(&at_working)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY_EXPERIMENT: &str = "\
[dataset]
seed = 5
source_count = 6
image_size = 16
categories = Blur, Noise
train_per_category = 4
eval_per_category = 2

[model]
patch_size = 4
embed_dim = 16
layers = 1
heads = 2
frames = 3
image_size = 16
mode = regress
condition_dropout = 0.0
mlp_ratio = 2

[schedule]
resolutions = 8,16
epochs = 2
steps_per_epoch = 4
batch_size = 2
base_lr = 0.002
warmup_steps = 4
corrector = true
corrector_epochs = 2
corrector_steps_per_epoch = 2

[sampler]
steps = 4

[eval]
";

    #[test]
    fn tiny_experiment_produces_all_artifacts() {
        let config = ExperimentConfig::parse(TINY_EXPERIMENT).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let results = run_experiment::<f32>(&config, dir.path()).unwrap();
        assert_eq!(results.len(), 1);
        for f in [
            "provenance.txt",
            "config.cfg",
            "trace.csv",
            "checkpoint.ckpt",
            "corrector.ckpt",
            "corrector_trace.csv",
            "report.csv",
            "report.md",
            "report_base.csv",
            "report_input.csv",
            "train_data/manifest.tsv",
            "eval_data/manifest.tsv",
        ] {
            assert!(dir.path().join(f).exists(), "missing {f}");
        }
        assert!(!dir.path().join(INCOMPLETE_MARKER).exists());
        let r = &results[0];
        assert!(r.output_psnr.is_finite() && r.input_psnr.is_finite());
        // four eval entries: two categories x two each
        let preds: Vec<_> = fs::read_dir(dir.path().join("preds")).unwrap().collect();
        assert_eq!(preds.len(), 4);
    }

    #[test]
    fn sweep_writes_variant_dirs_and_plot() {
        let text = TINY_EXPERIMENT.replace("frames = 3", "frames = 2,3");
        let config = ExperimentConfig::parse(&text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let results = run_experiment::<f32>(&config, dir.path()).unwrap();
        assert_eq!(results.len(), 2);
        assert!(dir.path().join("frames_2/report.csv").exists());
        assert!(dir.path().join("frames_3/report.csv").exists());
        let plot = fs::read_to_string(dir.path().join("plot.csv")).unwrap();
        assert!(plot.starts_with("axis,value,psnr,ssim\n"));
        assert_eq!(plot.lines().count(), 3);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let config = ExperimentConfig::parse(TINY_EXPERIMENT).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        run_experiment::<f32>(&config, d1.path()).unwrap();
        run_experiment::<f32>(&config, d2.path()).unwrap();
        let collect = |root: &Path| {
            let mut files = Vec::new();
            collect_files(root, root, &mut files);
            files.sort();
            files
        };
        let f1 = collect(d1.path());
        let f2 = collect(d2.path());
        assert_eq!(
            f1.iter().map(|(p, _)| p).collect::<Vec<_>>(),
            f2.iter().map(|(p, _)| p).collect::<Vec<_>>()
        );
        for ((p1, b1), (_, b2)) in f1.iter().zip(&f2) {
            assert_eq!(b1, b2, "file {} differs between runs", p1.display());
        }
    }

    fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                collect_files(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
}
