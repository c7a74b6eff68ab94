//! Cross-stage integration: the CLI round trip and training-dynamics
//! properties that span modules.

use std::fs;
use std::path::Path;
use std::process::Command;

use framewalk::degrade::CategoryLabel;
use framewalk::harness::synth::gen_clean_images;
use framewalk::model::{ModelConfig, ModelMode};
use framewalk::optim::OptimizerConfig;
use framewalk::trainer::{build_schedule, train_run, StageDataMode, TrainPair, TrainRunConfig};

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_framewalk"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn framewalk");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const CLI_CONFIG: &str = "\
[dataset]
seed = 9
source_count = 6
image_size = 16
categories = Blur, Noise
train_per_category = 3
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
steps_per_epoch = 3
batch_size = 2
base_lr = 0.002
warmup_steps = 3
corrector_epochs = 2
corrector_steps_per_epoch = 2

[sampler]
steps = 4

[eval]
";

#[test]
fn cli_stage_by_stage_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config_path = root.join("run.cfg");
    fs::write(&config_path, CLI_CONFIG).unwrap();

    // synth two small splits
    run_ok(cli().args([
        "--seed", "9", "synth",
        "--out", root.join("train").to_str().unwrap(),
        "--per-category", "3",
        "--categories", "Blur,Noise",
        "--source-count", "6",
        "--image-size", "16",
    ]));
    run_ok(cli().args([
        "--seed", "1009", "synth",
        "--out", root.join("eval").to_str().unwrap(),
        "--per-category", "2",
        "--categories", "Blur,Noise",
        "--source-count", "6",
        "--image-size", "16",
    ]));
    let train_manifest = root.join("train/manifest.tsv");
    let eval_manifest = root.join("eval/manifest.tsv");
    assert!(train_manifest.exists());
    assert!(eval_manifest.exists());

    // train, then the corrector
    run_ok(cli().args([
        "train",
        "--config", config_path.to_str().unwrap(),
        "--manifest", train_manifest.to_str().unwrap(),
        "--out", root.join("base").to_str().unwrap(),
    ]));
    assert!(root.join("base/checkpoint.ckpt").exists());
    assert!(root.join("base/trace.csv").exists());

    run_ok(cli().args([
        "train-corrector",
        "--config", config_path.to_str().unwrap(),
        "--base", root.join("base/checkpoint.ckpt").to_str().unwrap(),
        "--manifest", train_manifest.to_str().unwrap(),
        "--out", root.join("corr").to_str().unwrap(),
    ]));
    assert!(root.join("corr/corrector.ckpt").exists());

    // infer with the corrector, then score
    run_ok(cli().args([
        "infer",
        "--checkpoint", root.join("base/checkpoint.ckpt").to_str().unwrap(),
        "--corrector", root.join("corr/corrector.ckpt").to_str().unwrap(),
        "--manifest", eval_manifest.to_str().unwrap(),
        "--out", root.join("preds").to_str().unwrap(),
        "--steps", "4",
    ]));
    let eval_out = run_ok(cli().args([
        "eval",
        "--manifest", eval_manifest.to_str().unwrap(),
        "--preds", root.join("preds/preds").to_str().unwrap(),
        "--out", root.join("report").to_str().unwrap(),
    ]));
    assert!(eval_out.contains("overall PSNR"));
    assert!(root.join("report.csv").exists());
    assert!(root.join("report.md").exists());

    // re-emit markdown from the CSV
    run_ok(cli().args([
        "report",
        "--from", root.join("report.csv").to_str().unwrap(),
        "--format", "markdown",
        "--out", root.join("report2.md").to_str().unwrap(),
    ]));
    let md = fs::read_to_string(root.join("report2.md")).unwrap();
    assert!(md.starts_with("| Metric | Blur | Noise |"));
}

#[test]
fn cli_eval_reports_missing_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    run_ok(cli().args([
        "--seed", "3", "synth",
        "--out", root.join("eval").to_str().unwrap(),
        "--per-category", "2",
        "--categories", "Haze",
        "--source-count", "2",
        "--image-size", "16",
    ]));
    fs::create_dir_all(root.join("empty")).unwrap();
    let out = cli()
        .args([
            "eval",
            "--manifest", root.join("eval/manifest.tsv").to_str().unwrap(),
            "--preds", root.join("empty").to_str().unwrap(),
            "--out", root.join("r").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing predictions"), "{err}");
    assert!(err.contains("pred_0000.png"), "{err}");
}

/// Training-dynamics property: the loss trace smoothed over 50-step windows
/// is non-increasing from the first to the last window on the standard toy
/// data, for the majority of 3 seeds.
#[test]
fn smoothed_loss_decreases_majority_of_seeds() {
    let sources = gen_clean_images(12, 16, 77);
    let pairs: Vec<TrainPair> = sources
        .iter()
        .enumerate()
        .map(|(i, hq)| {
            let lq = framewalk::degrade::gaussian_blur(hq, 1.0 + (i % 3) as f32 * 0.5).unwrap();
            TrainPair { category: CategoryLabel::parse("Blur").unwrap(), lq, hq: hq.clone() }
        })
        .collect();
    let mut wins = 0;
    for seed in [1u64, 2, 3] {
        let config = TrainRunConfig {
            schedule: build_schedule(&[8, 16], 2, false).unwrap(),
            interval_count: 2,
            model: ModelConfig {
                patch_size: 4,
                embed_dim: 32,
                layers: 2,
                heads: 4,
                frame_count: 3,
                image_size: 16,
                channels: 3,
                mode: ModelMode::Regress,
                condition_dropout_prob: 0.0,
                mlp_ratio: 2,
            },
            optimizer: OptimizerConfig { base_lr: 3e-3, warmup_steps: 20, ..Default::default() },
            seed,
            batch_size: 2,
            steps_per_epoch: 75,
            stage_mode: StageDataMode::ResizeCrop,
        };
        let (_, trace) = train_run::<f32>(&config, &pairs).unwrap();
        let window = 50;
        let first: f64 = trace[..window].iter().map(|r| r.loss).sum::<f64>() / window as f64;
        let last: f64 =
            trace[trace.len() - window..].iter().map(|r| r.loss).sum::<f64>() / window as f64;
        if last <= first {
            wins += 1;
        }
    }
    assert!(wins >= 2, "smoothed loss decreased for only {wins} of 3 seeds");
}

#[test]
fn f64_verification_precision_runs_end_to_end() {
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/smoke.cfg")).unwrap();
    let config = framewalk::harness::config::ExperimentConfig::parse(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let results = framewalk::harness::experiment::run_experiment::<f64>(&config, dir.path()).unwrap();
    assert_eq!(results.len(), 1);
    assert!(results[0].output_psnr.is_finite());
    // checkpoints are always serialized as f32 regardless of run precision
    let ckpt = framewalk::harness::checkpoint::read_checkpoint(dir.path().join("checkpoint.ckpt")).unwrap();
    assert_eq!(ckpt.params.len(), framewalk::model::param_layout(&ckpt.config).len());
}

#[test]
fn incomplete_marker_survives_a_failed_run() {
    // an experiment aborted mid-flight leaves the INCOMPLETE marker behind
    let dir = tempfile::tempdir().unwrap();
    let bad = CLI_CONFIG.replace("resolutions = 8,16", "resolutions = 8,10");
    // 12 is not divisible by the patch size, so training must fail after
    // synthesis has already written artifacts
    let config_path = dir.path().join("bad.cfg");
    fs::write(&config_path, bad).unwrap();
    let out = cli()
        .args([
            "experiment",
            "--config", config_path.to_str().unwrap(),
            "--out", dir.path().join("run").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(marker_exists(dir.path().join("run").as_path()));
}

fn marker_exists(run_dir: &Path) -> bool {
    run_dir.join("INCOMPLETE").exists()
}
