//! Guided sampling mechanics: the shifted time grid, classifier-free
//! guidance identities, and flow integration from noise, written out as a
//! frame sequence under `trajectory_out/`.
//!
//! ```bash
//! cargo run --release --example sample_trajectory
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use framewalk::degrade::{gaussian_blur, CategoryLabel};
use framewalk::harness::synth::gen_clean_images;
use framewalk::image::io::write_image;
use framewalk::model::ModelMode;
use framewalk::optim::OptimizerConfig;
use framewalk::sampler::{cfg_combine, sample_clip, shift_timesteps, SamplerConfig};
use framewalk::trainer::{build_schedule, train_run, StageDataMode, TrainPair, TrainRunConfig};
use framewalk::Tensor;

fn main() -> framewalk::Result<()> {
    // the shift = 5 reparameterization concentrates late-trajectory steps
    let uniform: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let shifted = shift_timesteps(&uniform, 5.0)?;
    println!("uniform grid: {uniform:.3?}");
    println!("shifted grid: {shifted:.3?}");

    // guidance: g = 0 is the unconditional branch, g = 1 the conditional one
    let u = Tensor::<f32>::from_f64(vec![2], &[0.0, 0.2])?;
    let c = Tensor::<f32>::from_f64(vec![2], &[1.0, 0.4])?;
    for g in [0.0, 1.0, 5.0] {
        println!("cfg g={g}: {:?}", cfg_combine(&u, &c, g)?.data());
    }

    // train a small flow model on a handful of blur pairs, then sample
    let pairs: Vec<TrainPair> = gen_clean_images(8, 16, 21)
        .into_iter()
        .map(|hq| {
            let lq = gaussian_blur(&hq, 1.2).expect("valid sigma");
            TrainPair { category: CategoryLabel::parse("Blur").unwrap(), lq, hq }
        })
        .collect();
    let config = TrainRunConfig {
        schedule: build_schedule(&[8, 16], 8, false)?,
        interval_count: 4,
        model: framewalk::model::ModelConfig {
            embed_dim: 32,
            layers: 2,
            frame_count: 5,
            image_size: 16,
            mode: ModelMode::Flow,
            mlp_ratio: 2,
            ..Default::default()
        },
        optimizer: OptimizerConfig { base_lr: 2e-3, warmup_steps: 50, ..Default::default() },
        seed: 3,
        batch_size: 4,
        steps_per_epoch: 50,
        stage_mode: StageDataMode::ResizeCrop,
    };
    println!("\ntraining a 5-frame flow model ({} params)...", config.model.param_count());
    let (model, trace) = train_run::<f32>(&config, &pairs)?;
    println!("final velocity-matching loss: {:.4}", trace.last().unwrap().loss);

    let sampler = SamplerConfig { steps: 50, guidance_scale: 5.0, shift: 5.0, mode: ModelMode::Flow };
    let clip = sample_clip(&model, &pairs[0].lq, &sampler, &mut ChaCha8Rng::seed_from_u64(1))?;
    let dir = std::path::Path::new("trajectory_out");
    std::fs::create_dir_all(dir).expect("create output dir");
    for (t, frame) in clip.frames.iter().enumerate() {
        write_image(frame, dir.join(format!("f{t:03}.png")))?;
    }
    println!("wrote the sampled trajectory under {}", dir.display());
    Ok(())
}
