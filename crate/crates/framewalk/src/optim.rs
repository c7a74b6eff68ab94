//! AdamW with decoupled weight decay, linear-warmup-then-constant learning
//! rate, and global gradient-norm clipping.
//!
//! Defaults mirror the training configuration this lab reproduces: base lr
//! 2e-5 with 100 warmup steps, weight decay 3e-2, epsilon 1e-10, max grad
//! norm 0.05. Betas (0.9, 0.999) are the standard Adam defaults. Clipping is
//! applied before the optimizer step.

use crate::error::{Error, Result};
use crate::tensor::{scalar, Element, Tensor};

/// A named trainable tensor with an optional gradient buffer.
#[derive(Clone, Debug)]
pub struct Param<E> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Option<Vec<E>>,
}

/// Ordered collection of named parameters. Order is the registration order
/// and is part of every deterministic contract (checkpoints, clipping).
#[derive(Clone, Debug, Default)]
pub struct ParamSet<E> {
    params: Vec<Param<E>>,
}

impl<E: Element> ParamSet<E> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<E>) {
        let name = name.into();
        debug_assert!(
            !self.params.iter().any(|p| p.name == name),
            "duplicate parameter name {name}"
        );
        self.params.push(Param { name, value, grad: None });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<E>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<E>> {
        self.params.iter_mut()
    }

    pub fn get(&self, idx: usize) -> &Param<E> {
        &self.params[idx]
    }

    pub fn set_grad(&mut self, idx: usize, grad: Vec<E>) {
        debug_assert_eq!(grad.len(), self.params[idx].value.numel());
        self.params[idx].grad = Some(grad);
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Add `delta * scale` into the gradient buffer of parameter `idx`.
    pub fn accumulate_grad(&mut self, idx: usize, delta: &[E], scale: E) {
        let p = &mut self.params[idx];
        let g = p.grad.get_or_insert_with(|| vec![E::zero(); p.value.numel()]);
        for (gi, &d) in g.iter_mut().zip(delta) {
            *gi = *gi + d * scale;
        }
    }

    pub fn cast<T: Element>(&self) -> ParamSet<T> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), grad: None })
                .collect(),
        }
    }
}

/// Optimizer hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
    pub warmup_steps: u64,
    pub max_grad_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            base_lr: 2e-5,
            weight_decay: 3e-2,
            epsilon: 1e-10,
            warmup_steps: 100,
            max_grad_norm: 0.05,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

/// AdamW state: first/second moment accumulators for exactly the registered
/// parameter set, plus the applied-step counter.
pub struct OptimizerState<E> {
    pub config: OptimizerConfig,
    step_count: u64,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
}

impl<E: Element> OptimizerState<E> {
    pub fn new(config: OptimizerConfig, params: &ParamSet<E>) -> Self {
        let m = params.iter().map(|p| vec![E::zero(); p.value.numel()]).collect();
        let v = params.iter().map(|p| vec![E::zero(); p.value.numel()]).collect();
        Self { config, step_count: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// `constant_with_warmup`: lr = base_lr * min(1, step / warmup_steps),
    /// constant at base_lr afterwards.
    pub fn lr_at_step(&self, step: u64) -> f64 {
        lr_at_step(self.config.base_lr, self.config.warmup_steps, step)
    }

    /// One AdamW update with decoupled weight decay:
    /// `p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
    ///
    /// Gradients must be populated (and clipped by the caller); `lr` comes
    /// from [`OptimizerState::lr_at_step`].
    pub fn step(&mut self, params: &mut ParamSet<E>, lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer state tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        let t = self.step_count + 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(t as i32);
        let bias2 = 1.0 - c.beta2.powi(t as i32);
        let (b1, b2): (E, E) = (scalar(c.beta1), scalar(c.beta2));
        let (ob1, ob2): (E, E) = (scalar(1.0 - c.beta1), scalar(1.0 - c.beta2));
        let (inv_bias1, inv_bias2): (E, E) = (scalar(1.0 / bias1), scalar(1.0 / bias2));
        let eps: E = scalar(c.epsilon);
        let lr_e: E = scalar(lr);
        let wd: E = scalar(c.weight_decay);

        for (pi, p) in params.iter_mut().enumerate() {
            let grad = p.grad.as_ref().ok_or_else(|| Error::MissingGrad(p.name.clone()))?;
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            for (i, val) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = b1 * m[i] + ob1 * g;
                v[i] = b2 * v[i] + ob2 * g * g;
                let m_hat = m[i] * inv_bias1;
                let v_hat = v[i] * inv_bias2;
                *val = *val - lr_e * (m_hat / (v_hat.sqrt() + eps) + wd * *val);
                if !val.is_finite() {
                    return Err(Error::NonFinite { op: "adamw_step" });
                }
            }
        }
        self.step_count += 1;
        Ok(())
    }
}

/// Learning rate under the warmup-then-constant schedule.
pub fn lr_at_step(base_lr: f64, warmup_steps: u64, step: u64) -> f64 {
    if warmup_steps == 0 || step >= warmup_steps {
        base_lr
    } else {
        base_lr * step as f64 / warmup_steps as f64
    }
}

/// Scale all gradients so the global L2 norm does not exceed `max_norm`.
/// Returns the applied scale (1.0 when no clipping was needed). The norm is
/// accumulated in f64 in parameter-registration order.
pub fn clip_grad_norm<E: Element>(params: &mut ParamSet<E>, max_norm: f64) -> Result<f64> {
    let mut sq = 0.0f64;
    for p in params.iter() {
        let grad = p.grad.as_ref().ok_or_else(|| Error::MissingGrad(p.name.clone()))?;
        for &g in grad {
            let g = g.to_f64().unwrap();
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "clip_grad_norm" });
            }
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm <= max_norm {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    let scale_e: E = scalar(scale);
    for p in params.iter_mut() {
        for g in p.grad.as_mut().unwrap() {
            *g = *g * scale_e;
        }
    }
    Ok(scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(value: f64, grad: Option<f64>) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.push("p", Tensor::scalar_value(value));
        ps.iter_mut().next().unwrap().grad = grad.map(|g| vec![g]);
        ps
    }

    #[test]
    fn paper_defaults() {
        let c = OptimizerConfig::default();
        assert_eq!(c.base_lr, 2e-5);
        assert_eq!(c.weight_decay, 3e-2);
        assert_eq!(c.epsilon, 1e-10);
        assert_eq!(c.warmup_steps, 100);
        assert_eq!(c.max_grad_norm, 0.05);
        assert_eq!((c.beta1, c.beta2), (0.9, 0.999));
    }

    #[test]
    fn warmup_schedule() {
        assert_eq!(lr_at_step(2e-5, 100, 0), 0.0);
        assert_eq!(lr_at_step(2e-5, 100, 100), 2e-5);
        assert_eq!(lr_at_step(2e-5, 100, 50), 1e-5);
        assert_eq!(lr_at_step(2e-5, 100, 10_000), 2e-5);
        // non-decreasing through warmup, constant after
        let mut last = -1.0;
        for s in 0..=200 {
            let lr = lr_at_step(2e-5, 100, s);
            assert!(lr >= last);
            last = lr;
        }
    }

    #[test]
    fn clip_under_threshold_is_identity() {
        let mut ps = single_param(1.0, Some(0.01));
        let scale = clip_grad_norm(&mut ps, 0.05).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(ps.get(0).grad.as_ref().unwrap()[0], 0.01);
    }

    #[test]
    fn clip_scales_by_ratio() {
        // grads (0.06, 0.08) have norm 0.1; max 0.05 gives scale 0.5
        let mut ps = ParamSet::new();
        ps.push("a", Tensor::scalar_value(0.0f64));
        ps.push("b", Tensor::scalar_value(0.0f64));
        ps.set_grad(0, vec![0.06]);
        ps.set_grad(1, vec![0.08]);
        let scale = clip_grad_norm(&mut ps, 0.05).unwrap();
        assert!((scale - 0.5).abs() < 1e-12);
        assert!((ps.get(0).grad.as_ref().unwrap()[0] - 0.03).abs() < 1e-12);
    }

    #[test]
    fn clip_zero_grads_unchanged() {
        let mut ps = single_param(1.0, Some(0.0));
        assert_eq!(clip_grad_norm(&mut ps, 0.05).unwrap(), 1.0);
        assert_eq!(ps.get(0).grad.as_ref().unwrap()[0], 0.0);
    }

    #[test]
    fn clip_is_idempotent() {
        // dyadic grads and a dyadic max_norm make the clipped norm exact,
        // so a second application must be a bit-level no-op
        let mut ps = ParamSet::new();
        ps.push("a", Tensor::zeros(vec![2]));
        ps.set_grad(0, vec![0.09375, 0.125]); // norm 0.15625
        clip_grad_norm(&mut ps, 0.078125).unwrap();
        let once = ps.get(0).grad.clone().unwrap();
        let scale = clip_grad_norm(&mut ps, 0.078125).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(ps.get(0).grad.clone().unwrap(), once);
    }

    #[test]
    fn clip_rejects_non_finite() {
        let mut ps = single_param(1.0, Some(f64::NAN));
        assert!(matches!(clip_grad_norm(&mut ps, 0.05), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn adamw_zero_grad_zero_decay_is_identity() {
        let mut ps = single_param(1.5, Some(0.0));
        let config = OptimizerConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = OptimizerState::new(config, &ps);
        opt.step(&mut ps, 2e-5).unwrap();
        assert_eq!(ps.get(0).value.data()[0], 1.5);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn adamw_pure_decay_term() {
        // grad 0, wd 3e-2, lr 2e-5, p = 1: p' = 1 - 2e-5 * 3e-2 = 0.9999994
        let mut ps = single_param(1.0, Some(0.0));
        let mut opt = OptimizerState::new(OptimizerConfig::default(), &ps);
        opt.step(&mut ps, 2e-5).unwrap();
        assert!((ps.get(0).value.data()[0] - 0.9999994).abs() < 1e-12);
    }

    #[test]
    fn adamw_first_step_unit_gradient() {
        // m_hat = v_hat = 1 on the first step, so p moves by about -lr
        let mut ps = single_param(0.0, Some(1.0));
        let mut opt = OptimizerState::new(OptimizerConfig::default(), &ps);
        opt.step(&mut ps, 2e-5).unwrap();
        assert!((ps.get(0).value.data()[0] + 2e-5).abs() < 1e-12);
    }

    #[test]
    fn adamw_missing_grad_is_an_error() {
        let mut ps = single_param(0.0, None);
        let mut opt = OptimizerState::new(OptimizerConfig::default(), &ps);
        assert!(matches!(opt.step(&mut ps, 1e-3), Err(Error::MissingGrad(_))));
    }

    #[test]
    fn adamw_steps_are_deterministic() {
        let run = || {
            let mut ps = single_param(1.0, Some(0.25));
            let mut opt = OptimizerState::new(OptimizerConfig::default(), &ps);
            for _ in 0..10 {
                opt.step(&mut ps, 1e-3).unwrap();
            }
            ps.get(0).value.data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
