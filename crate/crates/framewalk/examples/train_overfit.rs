//! Overfit the trajectory model on a single pair: the loss must collapse
//! within a couple hundred steps, and the sampled last frame must land on
//! the clean target.
//!
//! ```bash
//! cargo run --release --example train_overfit
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use framewalk::degrade::{gaussian_blur, CategoryLabel};
use framewalk::harness::synth::gen_clean_images;
use framewalk::metrics::psnr;
use framewalk::model::{ModelConfig, ModelMode};
use framewalk::optim::OptimizerConfig;
use framewalk::sampler::{sample_clip, SamplerConfig};
use framewalk::trainer::{build_schedule, train_run, StageDataMode, TrainPair, TrainRunConfig};

fn main() -> framewalk::Result<()> {
    let hq = gen_clean_images(1, 16, 11).remove(0);
    let lq = gaussian_blur(&hq, 1.5)?;
    let pair = TrainPair { category: CategoryLabel::parse("Blur")?, lq: lq.clone(), hq: hq.clone() };

    let config = TrainRunConfig {
        schedule: build_schedule(&[16], 1, false)?,
        interval_count: 4,
        model: ModelConfig {
            embed_dim: 32,
            layers: 2,
            frame_count: 5,
            image_size: 16,
            condition_dropout_prob: 0.0,
            mlp_ratio: 2,
            ..ModelConfig::default()
        },
        optimizer: OptimizerConfig { base_lr: 1e-2, warmup_steps: 10, weight_decay: 0.0, ..Default::default() },
        seed: 1,
        batch_size: 1,
        steps_per_epoch: 250,
        stage_mode: StageDataMode::ResizeCrop,
    };
    let (model, trace) = train_run::<f32>(&config, &[pair])?;
    for row in trace.iter().step_by(50) {
        println!("step {:>4}  loss {:.6}", row.step, row.loss);
    }
    println!("final loss: {:.2e}", trace.last().unwrap().loss);

    let sampler = SamplerConfig { mode: ModelMode::Regress, ..Default::default() };
    let out = sample_clip(&model, &lq, &sampler, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("input  PSNR: {:6.2} dB", psnr(&hq, &lq)?);
    println!("output PSNR: {:6.2} dB", psnr(&hq, out.last())?);
    Ok(())
}
