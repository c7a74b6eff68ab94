//! Progressive curriculum training over pseudo-temporal clips, plus training
//! of the drift-correction model.
//!
//! Determinism contract: batch indices are drawn sequentially from a run
//! RNG seeded by the config seed; each drawn sample gets its own RNG seeded
//! by `seed ^ global_sample_index`, consumed in a fixed order (crop offsets,
//! condition dropout, then flow tau/noise). Per-item losses and gradients are
//! computed in parallel but reduced in sample order, so results are
//! bit-identical for any worker count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::clip::{build_drift_clip, build_pseudo_clip, PseudoClip, DRIFT_INTERVALS};
use crate::degrade::CategoryLabel;
use crate::error::{Error, Result};
use crate::image::{crop, down_up, draw_crop_offsets, resize_shorter_side, ImageBuffer};
use crate::model::{init_model, ModelConfig, ModelParams};
use crate::optim::{clip_grad_norm, OptimizerConfig, OptimizerState};
use crate::sampler::{sample_clip, SamplerConfig};
use crate::tensor::Element;

/// One curriculum stage: train at `resolution` for `epochs` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CurriculumStage {
    pub resolution: usize,
    pub epochs: usize,
}

/// Ordered stages with strictly increasing resolutions (unless explicitly
/// built for the decreasing-schedule ablation).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CurriculumSchedule {
    pub stages: Vec<CurriculumStage>,
    pub total_epochs: usize,
}

/// Split `total_epochs` evenly across the resolutions; the remainder goes to
/// earlier stages first. Non-increasing resolution lists are rejected unless
/// `allow_decreasing` is set (the decreasing-schedule ablation).
pub fn build_schedule(
    resolutions: &[usize],
    total_epochs: usize,
    allow_decreasing: bool,
) -> Result<CurriculumSchedule> {
    if resolutions.is_empty() {
        return Err(Error::InvalidArgument("schedule needs at least one resolution".into()));
    }
    if total_epochs < resolutions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} epochs cannot cover {} stages",
            total_epochs,
            resolutions.len()
        )));
    }
    if !allow_decreasing && resolutions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!(
            "resolutions must be strictly increasing, got {resolutions:?} \
             (pass allow_decreasing for the ablation)"
        )));
    }
    let n = resolutions.len();
    let per = total_epochs / n;
    let rem = total_epochs % n;
    let stages = resolutions
        .iter()
        .enumerate()
        .map(|(i, &resolution)| CurriculumStage {
            resolution,
            epochs: per + usize::from(i < rem),
        })
        .collect();
    Ok(CurriculumSchedule { stages, total_epochs })
}

/// How stage resolution is realized on the training pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageDataMode {
    /// Resize the shorter side to r, then randomly crop r x r (the staged
    /// training protocol; the default).
    ResizeCrop,
    /// Push both endpoints through the down-then-up resolution band
    /// degradation at r, keeping original dimensions.
    DownUp,
}

impl StageDataMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "resize_crop" => Ok(StageDataMode::ResizeCrop),
            "down_up" => Ok(StageDataMode::DownUp),
            other => Err(Error::InvalidArgument(format!("unknown stage mode `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            StageDataMode::ResizeCrop => "resize_crop",
            StageDataMode::DownUp => "down_up",
        }
    }
}

/// Full configuration of one training run.
#[derive(Clone, Debug)]
pub struct TrainRunConfig {
    pub schedule: CurriculumSchedule,
    /// Frame interval count T (clips have T + 1 frames).
    pub interval_count: usize,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub stage_mode: StageDataMode,
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.interval_count < 1 {
            return Err(Error::InvalidArgument("interval count T must be >= 1".into()));
        }
        if self.interval_count + 1 != self.model.frame_count {
            return Err(Error::InvalidArgument(format!(
                "T = {} implies {} frames but the model expects {}",
                self.interval_count,
                self.interval_count + 1,
                self.model.frame_count
            )));
        }
        if self.batch_size < 1 || self.steps_per_epoch < 1 {
            return Err(Error::InvalidArgument("batch size and steps per epoch must be >= 1".into()));
        }
        for stage in &self.schedule.stages {
            if stage.resolution % self.model.patch_size != 0 {
                return Err(Error::InvalidArgument(format!(
                    "stage resolution {} not divisible by patch size {}",
                    stage.resolution, self.model.patch_size
                )));
            }
        }
        Ok(())
    }

    /// Total optimizer steps the schedule implies.
    pub fn total_steps(&self) -> usize {
        self.schedule.total_epochs * self.steps_per_epoch
    }
}

/// A paired training example.
#[derive(Clone, Debug)]
pub struct TrainPair {
    pub category: CategoryLabel,
    pub lq: ImageBuffer,
    pub hq: ImageBuffer,
}

/// One loss-trace row; serialized as CSV `step,stage,resolution,loss,lr`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub stage: usize,
    pub resolution: usize,
    pub loss: f64,
    pub lr: f64,
}

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("step,stage,resolution,loss,lr\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.step, r.stage, r.resolution, r.loss, r.lr));
    }
    out
}

/// Train a fresh model under the staged curriculum. Returns the final
/// parameters and the per-step loss trace; bit-deterministic given the
/// config, the pairs, and the seed.
pub fn train_run<E: Element>(
    config: &TrainRunConfig,
    pairs: &[TrainPair],
) -> Result<(ModelParams<E>, Vec<TraceRow>)> {
    train_run_from(config, pairs, None)
}

/// [`train_run`] with optional starting weights (used by warm-started
/// corrector training).
pub fn train_run_from<E: Element>(
    config: &TrainRunConfig,
    pairs: &[TrainPair],
    initial: Option<ModelParams<E>>,
) -> Result<(ModelParams<E>, Vec<TraceRow>)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("training requires at least one pair".into()));
    }
    for (i, pair) in pairs.iter().enumerate() {
        if pair.lq.dims() != pair.hq.dims() || pair.lq.channels() != pair.hq.channels() {
            return Err(Error::InvalidArgument(format!("pair {i}: LQ/HQ dimensions differ")));
        }
    }
    let mut model = match initial {
        Some(m) => {
            if m.config != config.model {
                return Err(Error::InvalidArgument(
                    "initial weights were built for a different model config".into(),
                ));
            }
            m
        }
        None => init_model::<E>(config.model, config.seed)?,
    };
    let mut opt = OptimizerState::new(config.optimizer, &model.params);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = Vec::with_capacity(config.total_steps());
    let mut global_step = 0usize;
    let mut sample_counter = 0u64;

    for (stage_idx, stage) in config.schedule.stages.iter().enumerate() {
        for _ in 0..stage.epochs {
            for _ in 0..config.steps_per_epoch {
                // batch indices come from the sequential run RNG
                let batch: Vec<(usize, u64)> = (0..config.batch_size)
                    .map(|_| {
                        let pair_idx = batch_rng.gen_range(0..pairs.len());
                        let item_seed = config.seed ^ sample_counter;
                        sample_counter += 1;
                        (pair_idx, item_seed)
                    })
                    .collect();

                let items: Result<Vec<(f64, crate::model::Gradients<E>)>> = batch
                    .par_iter()
                    .map(|&(pair_idx, item_seed)| {
                        let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
                        let clip = prepare_clip(
                            &pairs[pair_idx],
                            stage.resolution,
                            config.interval_count,
                            config.stage_mode,
                            config.model.image_size,
                            &mut rng,
                        )?;
                        let loss = model.training_loss(&clip, &mut rng)?;
                        let value = loss.value;
                        let grads = loss.backward()?;
                        Ok((value, grads))
                    })
                    .collect();
                let items = items.map_err(|e| e.in_stage("train"))?;

                // ordered reduction keeps results identical across thread counts
                let inv_b = 1.0 / config.batch_size as f64;
                let mut mean_loss = 0.0f64;
                model.params.clear_grads();
                for (value, grads) in &items {
                    mean_loss += value * inv_b;
                    for (pi, g) in grads.per_param.iter().enumerate() {
                        model.params.accumulate_grad(pi, g, crate::tensor::scalar(inv_b));
                    }
                }
                if !mean_loss.is_finite() {
                    return Err(Error::NonFinite { op: "train_run loss" }.in_stage("train"));
                }

                clip_grad_norm(&mut model.params, config.optimizer.max_grad_norm)
                    .map_err(|e| e.in_stage("train"))?;
                let lr = opt.lr_at_step(global_step as u64);
                opt.step(&mut model.params, lr).map_err(|e| e.in_stage("train"))?;

                trace.push(TraceRow {
                    step: global_step,
                    stage: stage_idx,
                    resolution: stage.resolution,
                    loss: mean_loss,
                    lr,
                });
                global_step += 1;
            }
        }
    }
    debug_assert_eq!(global_step, config.total_steps());
    debug_assert_eq!(opt.step_count(), config.total_steps() as u64);
    Ok((model, trace))
}

/// Stage-resolution data path for one sampled pair.
fn prepare_clip(
    pair: &TrainPair,
    resolution: usize,
    interval_count: usize,
    mode: StageDataMode,
    image_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PseudoClip> {
    match mode {
        StageDataMode::ResizeCrop => {
            let lq = resize_shorter_side(&pair.lq, resolution)?;
            let hq = resize_shorter_side(&pair.hq, resolution)?;
            let (row, col) = draw_crop_offsets(lq.dims(), resolution, rng)?;
            let lq = crop(&lq, row, col, resolution, resolution)?;
            let hq = crop(&hq, row, col, resolution, resolution)?;
            build_pseudo_clip(&lq, &hq, interval_count)
        }
        StageDataMode::DownUp => {
            if pair.lq.dims() != (image_size, image_size) {
                return Err(Error::InvalidArgument(format!(
                    "down_up stage mode trains at native size: pair is {:?}, model expects {}",
                    pair.lq.dims(),
                    image_size
                )));
            }
            let lq = down_up(&pair.lq, resolution.min(pair.lq.shorter_side()))?;
            let hq = down_up(&pair.hq, resolution.min(pair.hq.shorter_side()))?;
            build_pseudo_clip(&lq, &hq, interval_count)
        }
    }
}

/// How the drift corrector's weights start out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrectorInit {
    /// Independent seeded initialization.
    Fresh,
    /// Start from the trained base weights (the shared-backbone analogue:
    /// at full scale both models begin from the same pretrained network).
    /// Temporal embeddings are linearly resampled to the drift-clip length.
    WarmStart,
}

impl CorrectorInit {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fresh" => Ok(CorrectorInit::Fresh),
            "warm" => Ok(CorrectorInit::WarmStart),
            other => Err(Error::InvalidArgument(format!("unknown corrector init `{other}`"))),
        }
    }
}

/// Train the drift-correction model: sample the base model on every training
/// pair, build short drift clips from (base output, ground truth), and train
/// a model of the same architecture on them.
///
/// Base outputs for pair i are sampled with an RNG seeded by
/// `config.seed ^ i`; the returned corrector expects drift clips of
/// [`DRIFT_INTERVALS`] + 1 frames.
pub fn train_drift_corrector<E: Element>(
    base: &ModelParams<E>,
    base_sampler: &SamplerConfig,
    config: &TrainRunConfig,
    pairs: &[TrainPair],
    init: CorrectorInit,
) -> Result<(ModelParams<E>, Vec<TraceRow>)> {
    if config.interval_count != DRIFT_INTERVALS {
        return Err(Error::InvalidArgument(format!(
            "drift corrector trains on K = {DRIFT_INTERVALS} interval clips, config says {}",
            config.interval_count
        )));
    }
    let outputs: Result<Vec<ImageBuffer>> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ i as u64);
            let clip = sample_clip(base, &pair.lq, base_sampler, &mut rng)?;
            Ok(clip.last().clone())
        })
        .collect();
    let outputs = outputs.map_err(|e| e.in_stage("drift-correction"))?;

    let degenerate = outputs.iter().zip(pairs).all(|(out, pair)| *out == pair.hq);
    if degenerate {
        eprintln!("warning: base outputs equal ground truth everywhere; corrector will learn the identity");
    }
    let drift_pairs: Vec<TrainPair> = outputs
        .into_iter()
        .zip(pairs)
        .map(|(out, pair)| TrainPair { category: pair.category, lq: out, hq: pair.hq.clone() })
        .collect();
    // sanity: drift clips anchor on the base output exactly
    debug_assert!(build_drift_clip(&drift_pairs[0].lq, &drift_pairs[0].hq, DRIFT_INTERVALS).is_ok());
    let warm_start = match init {
        CorrectorInit::Fresh => None,
        CorrectorInit::WarmStart => Some(warm_start_params(base, &config.model)?),
    };
    train_run_from(config, &drift_pairs, warm_start).map_err(|e| e.in_stage("drift-correction"))
}

/// Transfer base weights onto a corrector-shaped parameter set. All tensors
/// match except the temporal embedding table, which is resampled linearly
/// along the frame axis (exact row reuse when the alpha grids align, e.g.
/// 9 -> 5 frames).
fn warm_start_params<E: Element>(
    base: &ModelParams<E>,
    target_config: &ModelConfig,
) -> Result<ModelParams<E>> {
    let mut model = init_model::<E>(*target_config, 0)?;
    for (dst, src) in model.params.iter_mut().zip(base.params.iter()) {
        if dst.name != src.name {
            return Err(Error::InvalidArgument(format!(
                "architectures diverge at `{}` vs `{}`",
                dst.name, src.name
            )));
        }
        if dst.name == "pos_embed.temporal" {
            dst.value = resample_rows(&src.value, target_config.frame_count)?;
        } else {
            if dst.value.shape() != src.value.shape() {
                return Err(Error::InvalidArgument(format!(
                    "warm start shape mismatch for `{}`: {:?} vs {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
    }
    Ok(model)
}

/// Linear row resampling over the leading axis at matched endpoints.
fn resample_rows<E: Element>(table: &crate::tensor::Tensor<E>, rows_out: usize) -> Result<crate::tensor::Tensor<E>> {
    let rows_in = table.shape()[0];
    let d = table.shape()[1];
    let src = table.data();
    let mut data = Vec::with_capacity(rows_out * d);
    for r in 0..rows_out {
        let pos = if rows_out == 1 { 0.0 } else { r as f64 * (rows_in - 1) as f64 / (rows_out - 1) as f64 };
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(rows_in - 1);
        let w = crate::tensor::scalar::<E>(pos - lo as f64);
        for c in 0..d {
            let a = src[lo * d + c];
            let b = src[hi * d + c];
            data.push(a + w * (b - a));
        }
    }
    crate::tensor::Tensor::new(vec![rows_out, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelMode;

    fn toy_pairs(n: usize, size: usize, seed: u64) -> Vec<TrainPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let data: Vec<f32> =
                    (0..size * size * 3).map(|_| rng.gen_range(0.0f32..1.0)).collect();
                let hq = ImageBuffer::new(size, size, 3, data).unwrap();
                let lq = crate::degrade::gaussian_blur(&hq, 1.0).unwrap();
                TrainPair { category: CategoryLabel::parse("Blur").unwrap(), lq, hq }
            })
            .collect()
    }

    fn tiny_train_config(resolutions: &[usize], epochs: usize, steps_per_epoch: usize) -> TrainRunConfig {
        TrainRunConfig {
            schedule: build_schedule(resolutions, epochs, false).unwrap(),
            interval_count: 2,
            model: ModelConfig {
                patch_size: 4,
                embed_dim: 32,
                layers: 2,
                heads: 4,
                frame_count: 3,
                image_size: 8,
                channels: 3,
                mode: ModelMode::Regress,
                condition_dropout_prob: 0.0,
                mlp_ratio: 2,
            },
            optimizer: OptimizerConfig { base_lr: 1e-2, warmup_steps: 10, weight_decay: 0.0, ..Default::default() },
            seed: 7,
            batch_size: 2,
            steps_per_epoch,
            stage_mode: StageDataMode::ResizeCrop,
        }
    }

    #[test]
    fn schedule_splits_evenly() {
        let s = build_schedule(&[512, 720, 960], 300, false).unwrap();
        assert_eq!(s.stages.iter().map(|st| st.epochs).collect::<Vec<_>>(), vec![100, 100, 100]);
        assert_eq!(s.total_epochs, 300);
    }

    #[test]
    fn schedule_remainder_goes_to_earlier_stages() {
        let s = build_schedule(&[16, 24, 32], 10, false).unwrap();
        assert_eq!(s.stages.iter().map(|st| st.epochs).collect::<Vec<_>>(), vec![4, 3, 3]);
    }

    #[test]
    fn schedule_single_stage() {
        let s = build_schedule(&[32], 5, false).unwrap();
        assert_eq!(s.stages, vec![CurriculumStage { resolution: 32, epochs: 5 }]);
    }

    #[test]
    fn schedule_rejects_non_increasing_without_flag() {
        assert!(build_schedule(&[720, 512], 10, false).is_err());
        assert!(build_schedule(&[16, 16], 10, false).is_err());
        let s = build_schedule(&[24, 16], 10, true).unwrap();
        assert_eq!(s.stages[0].resolution, 24);
    }

    #[test]
    fn overfit_single_pair_under_schedule() {
        let pairs = toy_pairs(1, 8, 3);
        let config = tiny_train_config(&[8], 1, 200);
        let (_, trace) = train_run::<f32>(&config, &pairs).unwrap();
        assert!(trace.last().unwrap().loss < 1e-3, "final loss {}", trace.last().unwrap().loss);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let pairs = toy_pairs(3, 8, 4);
        let config = tiny_train_config(&[4, 8], 2, 5);
        let (m1, t1) = train_run::<f32>(&config, &pairs).unwrap();
        let (m2, t2) = train_run::<f32>(&config, &pairs).unwrap();
        assert_eq!(t1, t2);
        for (a, b) in m1.params.iter().zip(m2.params.iter()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn trace_structure_matches_schedule() {
        let pairs = toy_pairs(2, 8, 5);
        let config = tiny_train_config(&[4, 8], 3, 4);
        let (_, trace) = train_run::<f32>(&config, &pairs).unwrap();
        assert_eq!(trace.len(), config.total_steps());
        // stage resolution is non-decreasing and boundaries are logged
        let mut last_res = 0;
        for row in &trace {
            assert!(row.resolution >= last_res);
            last_res = row.resolution;
        }
        assert_eq!(trace.iter().filter(|r| r.stage == 0).count(), 2 * 4);
        assert_eq!(trace.iter().filter(|r| r.stage == 1).count(), 1 * 4);
        // lr follows the warmup schedule
        assert_eq!(trace[0].lr, 0.0);
        assert!(trace.last().unwrap().lr > trace[0].lr);
        // csv round trip shape
        let csv = trace_to_csv(&trace);
        assert_eq!(csv.lines().count(), trace.len() + 1);
        assert!(csv.starts_with("step,stage,resolution,loss,lr\n"));
    }

    #[test]
    fn down_up_stage_mode_trains() {
        let pairs = toy_pairs(2, 8, 6);
        let mut config = tiny_train_config(&[4, 8], 2, 3);
        config.stage_mode = StageDataMode::DownUp;
        let (_, trace) = train_run::<f32>(&config, &pairs).unwrap();
        assert_eq!(trace.len(), config.total_steps());
    }

    #[test]
    fn corrector_near_identity_when_base_is_perfect() {
        // overfit the base on one pair so its output is essentially HQ
        let pairs = toy_pairs(1, 8, 8);
        let base_config = tiny_train_config(&[8], 1, 300);
        let (base, _) = train_run::<f32>(&base_config, &pairs).unwrap();
        let sampler = SamplerConfig { mode: ModelMode::Regress, ..Default::default() };

        let mut cc = tiny_train_config(&[8], 1, 150);
        cc.interval_count = DRIFT_INTERVALS;
        cc.model.frame_count = DRIFT_INTERVALS + 1;
        let (corrector, _) =
            train_drift_corrector::<f32>(&base, &sampler, &cc, &pairs, CorrectorInit::Fresh).unwrap();

        // applying the corrector to a held-out near-HQ input barely moves it
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base_out = sample_clip(&base, &pairs[0].lq, &sampler, &mut rng).unwrap();
        let corrected = sample_clip(&corrector, base_out.last(), &sampler, &mut rng).unwrap();
        let mae: f64 = corrected
            .last()
            .pixels()
            .iter()
            .zip(base_out.last().pixels())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / base_out.last().pixels().len() as f64;
        assert!(mae < 1e-2, "corrector moved a near-perfect input by {mae}");
    }

    #[test]
    fn corrector_is_deterministic() {
        let pairs = toy_pairs(2, 8, 9);
        let base_config = tiny_train_config(&[8], 1, 20);
        let (base, _) = train_run::<f32>(&base_config, &pairs).unwrap();
        let sampler = SamplerConfig { mode: ModelMode::Regress, ..Default::default() };
        let mut cc = tiny_train_config(&[8], 1, 20);
        cc.interval_count = DRIFT_INTERVALS;
        cc.model.frame_count = DRIFT_INTERVALS + 1;
        let (c1, t1) =
            train_drift_corrector::<f32>(&base, &sampler, &cc, &pairs, CorrectorInit::WarmStart).unwrap();
        let (c2, t2) =
            train_drift_corrector::<f32>(&base, &sampler, &cc, &pairs, CorrectorInit::WarmStart).unwrap();
        assert_eq!(t1, t2);
        for (a, b) in c1.params.iter().zip(c2.params.iter()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn config_validation_catches_mismatches() {
        let mut config = tiny_train_config(&[8], 1, 1);
        config.interval_count = 5; // frame_count says 3
        assert!(config.validate().is_err());
        let mut config = tiny_train_config(&[8], 1, 1);
        config.schedule.stages[0].resolution = 6; // not divisible by patch 4
        assert!(config.validate().is_err());
        let config = tiny_train_config(&[8], 1, 1);
        assert!(train_run::<f32>(&config, &[]).is_err());
    }
}
