//! Inference-time trajectory generation: timestep shifting, classifier-free
//! guidance, and first-order Euler integration of the learned velocity field.
//! The final frame of the returned clip is the restoration output.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::clip::{alpha_schedule, ClipKind, PseudoClip};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::model::{tokens_to_frames, FlowInput, ModelMode, ModelParams};
use crate::tensor::{scalar, Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance_scale: f64,
    pub shift: f64,
    pub mode: ModelMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 50, guidance_scale: 5.0, shift: 5.0, mode: ModelMode::Regress }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::InvalidArgument("sampler needs at least one step".into()));
        }
        if self.guidance_scale < 0.0 {
            return Err(Error::InvalidArgument("guidance scale must be >= 0".into()));
        }
        if self.shift <= 0.0 {
            return Err(Error::InvalidArgument("timestep shift must be > 0".into()));
        }
        Ok(())
    }
}

/// Monotone reparameterization t' = s*t / (1 + (s-1)*t). Fixes 0 and 1 and
/// preserves order for any s > 0.
pub fn shift_timesteps(uniform_ts: &[f64], shift: f64) -> Result<Vec<f64>> {
    if shift <= 0.0 {
        return Err(Error::InvalidArgument(format!("shift must be > 0, got {shift}")));
    }
    Ok(uniform_ts.iter().map(|&t| shift * t / (1.0 + (shift - 1.0) * t)).collect())
}

/// The shifted integration grid: steps+1 points from 0 to 1.
pub fn sampling_grid(steps: usize, shift: f64) -> Result<Vec<f64>> {
    let uniform: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
    shift_timesteps(&uniform, shift)
}

/// Classifier-free guidance: u + g * (c - u), elementwise.
pub fn cfg_combine<E: Element>(uncond: &Tensor<E>, cond: &Tensor<E>, guidance: f64) -> Result<Tensor<E>> {
    if uncond.shape() != cond.shape() {
        return Err(Error::ShapeMismatch {
            op: "cfg_combine",
            detail: format!("{:?} vs {:?}", uncond.shape(), cond.shape()),
        });
    }
    let g: E = scalar(guidance);
    let data: Vec<E> =
        uncond.data().iter().zip(cond.data()).map(|(&u, &c)| u + g * (c - u)).collect();
    Tensor::new(uncond.shape().to_vec(), data)
}

/// First-order Euler integration of a velocity field along a time grid.
/// Exposed separately so synthetic velocity fields can drive it in tests.
pub fn integrate_flow<E, F>(x0: Tensor<E>, grid: &[f64], mut velocity: F) -> Result<Tensor<E>>
where
    E: Element,
    F: FnMut(&Tensor<E>, f64) -> Result<Tensor<E>>,
{
    if grid.len() < 2 {
        return Err(Error::InvalidArgument("integration grid needs >= 2 points".into()));
    }
    let mut x = x0;
    for w in grid.windows(2) {
        let (tau, next) = (w[0], w[1]);
        let v = velocity(&x, tau)?;
        if v.shape() != x.shape() {
            return Err(Error::ShapeMismatch {
                op: "integrate_flow",
                detail: format!("velocity {:?} vs state {:?}", v.shape(), x.shape()),
            });
        }
        let dt: E = scalar(next - tau);
        let data: Vec<E> = x.data().iter().zip(v.data()).map(|(&xi, &vi)| xi + dt * vi).collect();
        x = Tensor::new(x.shape().to_vec(), data)
            .map_err(|_| Error::NonFinite { op: "integrate_flow" })?;
    }
    Ok(x)
}

/// Generate the restoration trajectory for an anchor image.
///
/// Flow mode starts from a seeded Gaussian noise clip and integrates the
/// guided velocity along the shifted grid; regress mode is a single forward
/// pass (the step count is ignored). Frames are clamped to [0, 1] at the end
/// only.
pub fn sample_clip<E: Element>(
    model: &ModelParams<E>,
    anchor: &ImageBuffer,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PseudoClip> {
    config.validate()?;
    if config.mode != model.config.mode {
        return Err(Error::InvalidArgument(format!(
            "sampler mode {} does not match model mode {}",
            config.mode.as_str(),
            model.config.mode.as_str()
        )));
    }
    let cfg = &model.config;
    let p = cfg.patch_size;
    let (h, w) = anchor.dims();
    if h % p != 0 || w % p != 0 {
        return Err(Error::ShapeMismatch {
            op: "sample_clip",
            detail: format!("anchor {}x{} not divisible by patch {}", h, w, p),
        });
    }
    let (gh, gw) = (h / p, w / p);
    let frames = cfg.frame_count;
    let alphas = alpha_schedule(frames - 1)?;

    let tokens = match cfg.mode {
        ModelMode::Regress => model.forward(anchor, false, None)?,
        ModelMode::Flow => {
            let normal = Normal::new(0.0f64, 1.0).expect("valid stddev");
            let n = frames * gh * gw * cfg.patch_dim();
            let noise: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
            let x0 = Tensor::from_f64(vec![frames * gh * gw, cfg.patch_dim()], &noise)?;
            let grid = sampling_grid(config.steps, config.shift)?;
            integrate_flow(x0, &grid, |x, tau| {
                let cond = model.forward(anchor, false, Some(FlowInput { noisy_tokens: x, tau }))?;
                let uncond = model.forward(anchor, true, Some(FlowInput { noisy_tokens: x, tau }))?;
                cfg_combine(&uncond, &cond, config.guidance_scale)
            })?
        }
    };
    let frames = tokens_to_frames(&tokens, frames, gh, gw, p, cfg.channels)?;
    PseudoClip::from_frames(frames, alphas, ClipKind::Base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clip::build_pseudo_clip;
    use crate::model::{init_model, ModelConfig};
    use crate::optim::{clip_grad_norm, OptimizerConfig, OptimizerState};
    use rand::{Rng, SeedableRng};

    fn random_image(n: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..n * n * 3).map(|_| rng.gen_range(0.0f32..1.0)).collect();
        ImageBuffer::new(n, n, 3, data).unwrap()
    }

    fn tiny_config(mode: ModelMode) -> ModelConfig {
        ModelConfig {
            patch_size: 4,
            embed_dim: 32,
            layers: 2,
            heads: 4,
            frame_count: 3,
            image_size: 8,
            channels: 3,
            mode,
            condition_dropout_prob: 0.1,
            mlp_ratio: 2,
        }
    }

    #[test]
    fn shift_identity_at_one() {
        let ts = vec![0.0, 0.1, 0.33, 0.5, 0.9, 1.0];
        let out = shift_timesteps(&ts, 1.0).unwrap();
        for (a, b) in out.iter().zip(&ts) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn shift_fixes_endpoints_and_preserves_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let s = rng.gen_range(0.1..10.0);
            let mut ts: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
            ts.push(0.0);
            ts.push(1.0);
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let out = shift_timesteps(&ts, s).unwrap();
            assert_eq!(out[0], 0.0);
            assert_eq!(*out.last().unwrap(), 1.0);
            for w in out.windows(2) {
                assert!(w[1] >= w[0]);
            }
        }
        assert!(shift_timesteps(&[0.5], 0.0).is_err());
    }

    #[test]
    fn shift_five_at_half() {
        let out = shift_timesteps(&[0.5], 5.0).unwrap();
        assert!((out[0] - 2.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cfg_identities() {
        let u = Tensor::<f64>::new(vec![3], vec![0.0, 1.0, -2.0]).unwrap();
        let c = Tensor::<f64>::new(vec![3], vec![1.0, 3.0, 2.0]).unwrap();
        assert_eq!(cfg_combine(&u, &c, 1.0).unwrap().data(), c.data());
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap().data(), u.data());
        // u = 0, c = 1, g = 5 -> 5
        let z = Tensor::<f64>::zeros(vec![1]);
        let o = Tensor::<f64>::new(vec![1], vec![1.0]).unwrap();
        assert_eq!(cfg_combine(&z, &o, 5.0).unwrap().data(), &[5.0]);
    }

    #[test]
    fn cfg_is_affine_in_guidance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = Tensor::<f64>::new(vec![16], (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let c = Tensor::<f64>::new(vec![16], (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (g1, g2) = (2.0, 6.0);
        let a = cfg_combine(&u, &c, g1).unwrap();
        let b = cfg_combine(&u, &c, g2).unwrap();
        let mid = cfg_combine(&u, &c, (g1 + g2) / 2.0).unwrap();
        for i in 0..16 {
            assert!((mid.data()[i] - (a.data()[i] + b.data()[i]) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_velocity_error_shrinks_with_steps() {
        // v(tau) = 2*tau*(target - x0) has exact flow x0 + tau^2*(target - x0);
        // the left-endpoint Euler error decays with the step count
        let x0 = Tensor::<f64>::new(vec![4], vec![0.0, 1.0, -0.5, 2.0]).unwrap();
        let target = Tensor::<f64>::new(vec![4], vec![1.0, -1.0, 0.5, 0.0]).unwrap();
        let field = |x0: &Tensor<f64>, target: &Tensor<f64>| {
            let dir: Vec<f64> = target.data().iter().zip(x0.data()).map(|(&t, &x)| t - x).collect();
            move |_x: &Tensor<f64>, tau: f64| {
                Tensor::new(vec![4], dir.iter().map(|&d| 2.0 * tau * d).collect::<Vec<_>>())
            }
        };
        let err_at = |steps: usize| {
            let grid = sampling_grid(steps, 5.0).unwrap();
            let xf = integrate_flow(x0.clone(), &grid, field(&x0, &target)).unwrap();
            xf.data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        let coarse = err_at(5);
        let fine = err_at(50);
        assert!(fine < coarse, "error at 50 steps {fine} !< error at 5 steps {coarse}");
        // exact Euler error factor is sum(dt_i^2) over the shifted grid:
        // 0.3743 at 5 steps, 0.04128 at 50, times max |target - x0| = 2
        assert!((coarse - 0.7485).abs() < 1e-3);
        assert!((fine - 0.08256).abs() < 1e-4);
    }

    #[test]
    fn regress_sampling_recovers_overfit_target() {
        // overfit one pair, then the sampled last frame must sit near HQ
        let mut model = init_model::<f32>(
            ModelConfig { condition_dropout_prob: 0.0, ..tiny_config(ModelMode::Regress) },
            2,
        )
        .unwrap();
        let lq = random_image(8, 60);
        let hq = random_image(8, 61);
        let clip = build_pseudo_clip(&lq, &hq, 2).unwrap();
        let oc = OptimizerConfig { base_lr: 1e-2, warmup_steps: 10, weight_decay: 0.0, ..Default::default() };
        let mut opt = OptimizerState::new(oc, &model.params);
        for step in 0..300 {
            let mut rng = ChaCha8Rng::seed_from_u64(step);
            let loss = model.training_loss(&clip, &mut rng).unwrap();
            let grads = loss.backward().unwrap();
            model.params.clear_grads();
            for (i, g) in grads.per_param.iter().enumerate() {
                model.params.accumulate_grad(i, g, 1.0);
            }
            clip_grad_norm(&mut model.params, oc.max_grad_norm).unwrap();
            let lr = opt.lr_at_step(opt.step_count());
            opt.step(&mut model.params, lr).unwrap();
        }
        let config = SamplerConfig { mode: ModelMode::Regress, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = sample_clip(&model, &lq, &config, &mut rng).unwrap();
        let mae: f64 = out
            .last()
            .pixels()
            .iter()
            .zip(hq.pixels())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / hq.pixels().len() as f64;
        assert!(mae < 1e-2, "mae {mae}");
        assert_eq!(out.frames.len(), 3);
    }

    #[test]
    fn regress_mode_ignores_steps_flow_mode_does_not() {
        let anchor = random_image(8, 70);
        let reg = init_model::<f32>(tiny_config(ModelMode::Regress), 3).unwrap();
        let mut c = SamplerConfig { mode: ModelMode::Regress, ..Default::default() };
        let a = sample_clip(&reg, &anchor, &c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        c.steps = 25;
        let b = sample_clip(&reg, &anchor, &c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);

        // flow model with a non-zero head so the velocity depends on x
        let mut flow = init_model::<f32>(tiny_config(ModelMode::Flow), 3).unwrap();
        for p in flow.params.iter_mut() {
            if p.name.starts_with("head.") {
                let numel = p.value.numel();
                let shape = p.value.shape().to_vec();
                let data: Vec<f32> = (0..numel).map(|i| ((i % 11) as f32 - 5.0) * 0.02).collect();
                p.value = Tensor::new(shape, data).unwrap();
            }
        }
        let mut fc = SamplerConfig { mode: ModelMode::Flow, steps: 8, ..Default::default() };
        let a = sample_clip(&flow, &anchor, &fc, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        fc.steps = 4;
        let b = sample_clip(&flow, &anchor, &fc, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn sampling_is_seed_deterministic_and_in_range() {
        let model = init_model::<f32>(tiny_config(ModelMode::Flow), 4).unwrap();
        let anchor = random_image(8, 80);
        let config = SamplerConfig { mode: ModelMode::Flow, steps: 6, ..Default::default() };
        let a = sample_clip(&model, &anchor, &config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_clip(&model, &anchor, &config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        for f in &a.frames {
            assert!(f.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn non_finite_velocity_is_an_error_not_silence() {
        // a geometrically exploding field overflows within a few steps; the
        // integrator must surface the non-finite state instead of clamping
        let x0 = Tensor::<f64>::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap();
        let grid = sampling_grid(8, 1.0).unwrap();
        let err = integrate_flow(x0, &grid, |x, _tau| {
            Tensor::new(vec![3], x.data().iter().map(|&v| v * 1e200).collect::<Vec<_>>())
        })
        .unwrap_err();
        assert!(matches!(err, crate::error::Error::NonFinite { .. }));
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let model = init_model::<f32>(tiny_config(ModelMode::Regress), 4).unwrap();
        let config = SamplerConfig { mode: ModelMode::Flow, ..Default::default() };
        let anchor = random_image(8, 90);
        assert!(sample_clip(&model, &anchor, &config, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
