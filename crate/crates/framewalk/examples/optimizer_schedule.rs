//! The training configuration in action: warmup-then-constant learning rate,
//! global gradient clipping at 0.05, and AdamW steps with decoupled decay.
//!
//! ```bash
//! cargo run --release --example optimizer_schedule
//! ```

use framewalk::{clip_grad_norm, OptimizerConfig, OptimizerState, ParamSet, Tensor};

fn main() -> framewalk::Result<()> {
    let config = OptimizerConfig::default();
    println!("defaults: lr {} | wd {} | eps {} | warmup {} | max grad norm {}",
        config.base_lr, config.weight_decay, config.epsilon, config.warmup_steps, config.max_grad_norm);

    println!("\nwarmup curve (lr multiplier ramps linearly over {} steps):", config.warmup_steps);
    let mut params: ParamSet<f64> = ParamSet::new();
    params.push("w", Tensor::from_f64(vec![2], &[1.0, -0.5])?);
    let mut opt = OptimizerState::new(config, &params);
    for step in [0u64, 25, 50, 100, 500] {
        println!("  step {step:>4}: lr = {:.2e}", opt.lr_at_step(step));
    }

    // a gradient well over the 0.05 cap gets rescaled globally
    params.set_grad(0, vec![3.0, 4.0]); // norm 5
    let scale = clip_grad_norm(&mut params, config.max_grad_norm)?;
    println!("\nclip: norm 5 -> scale {scale} (grads now {:?})", params.get(0).grad.as_ref().unwrap());

    for step in 0..5u64 {
        let lr = opt.lr_at_step(opt.step_count());
        opt.step(&mut params, lr)?;
        println!("after step {}: w = {:?}", step + 1, params.get(0).value.data());
        params.set_grad(0, vec![0.03, -0.04]);
    }
    Ok(())
}
