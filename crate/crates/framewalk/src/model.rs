//! Toy conditional spatio-temporal transformer: given an anchor frame (and a
//! time signal), predict all clip frames jointly (regress mode) or the clip's
//! velocity field (flow mode).
//!
//! Frames are patchified into tokens; the model runs full attention over all
//! (frame, patch) tokens, so the per-frame readout of the trained regressor
//! realizes the conditional prediction for each time index. Condition dropout
//! zeroes the anchor tokens during training, enabling classifier-free
//! guidance at inference.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::clip::PseudoClip;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::image::ImageBuffer;
use crate::optim::ParamSet;
use crate::tensor::{scalar, Element, Tensor};

/// Prediction target the network is trained for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelMode {
    /// Directly regress clip frames from the anchor.
    Regress,
    /// Predict the velocity of the noise-to-clip flow.
    Flow,
}

impl ModelMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelMode::Regress => "regress",
            ModelMode::Flow => "flow",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "regress" => Ok(ModelMode::Regress),
            "flow" => Ok(ModelMode::Flow),
            other => Err(Error::InvalidArgument(format!("unknown model mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// T + 1: clip length in frames.
    pub frame_count: usize,
    /// Native training crop size; other patch-divisible sizes are handled by
    /// resampling the spatial position table.
    pub image_size: usize,
    pub channels: usize,
    pub mode: ModelMode,
    pub condition_dropout_prob: f64,
    pub mlp_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 4,
            embed_dim: 64,
            layers: 4,
            heads: 4,
            frame_count: 9,
            image_size: 32,
            channels: 3,
            mode: ModelMode::Regress,
            condition_dropout_prob: 0.1,
            mlp_ratio: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::InvalidArgument(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.frame_count < 2 {
            return Err(Error::InvalidArgument("frame_count must be >= 2".into()));
        }
        if self.layers == 0 || self.mlp_ratio == 0 {
            return Err(Error::InvalidArgument("layers and mlp_ratio must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.condition_dropout_prob) {
            return Err(Error::InvalidArgument("condition_dropout_prob must be in [0, 1]".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidArgument("channels must be 1 or 3".into()));
        }
        Ok(())
    }

    /// Patch token feature width: p^2 * C.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// Input width of the patch embedding (anchor, plus the noisy frame in
    /// flow mode).
    pub fn input_dim(&self) -> usize {
        match self.mode {
            ModelMode::Regress => self.patch_dim(),
            ModelMode::Flow => 2 * self.patch_dim(),
        }
    }

    /// Native patch-grid side length.
    pub fn native_grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Closed-form parameter count for this architecture.
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let r = self.mlp_ratio;
        let pmax = self.native_grid() * self.native_grid();
        let embed = self.input_dim() * d + d;
        let pos = pmax * d + self.frame_count * d;
        let time = match self.mode {
            ModelMode::Regress => 0,
            ModelMode::Flow => 2 * (d * d + d),
        };
        let layer = 2 * (2 * d)          // two layer norms
            + 4 * (d * d + d)            // q, k, v, o projections
            + (d * (r * d) + r * d)      // mlp in
            + ((r * d) * d + d); // mlp out
        let head = 2 * d + d * self.patch_dim() + self.patch_dim();
        embed + pos + time + self.layers * layer + head
    }
}

/// Named parameter tensors for one model.
#[derive(Clone)]
pub struct ModelParams<E> {
    pub config: ModelConfig,
    pub params: ParamSet<E>,
}

/// How a parameter tensor is filled at initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    /// N(0, 0.02^2) draws.
    Normal,
    Zero,
    One,
}

/// The full parameter layout (name, shape, init) in registration order; the
/// single source of truth shared by initialization and checkpoint I/O.
pub fn param_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, InitKind)> {
    let d = config.embed_dim;
    let mut layout = vec![
        ("patch_embed.weight".to_string(), vec![config.input_dim(), d], InitKind::Normal),
        ("patch_embed.bias".to_string(), vec![d], InitKind::Zero),
        (
            "pos_embed.spatial".to_string(),
            vec![config.native_grid() * config.native_grid(), d],
            InitKind::Normal,
        ),
        ("pos_embed.temporal".to_string(), vec![config.frame_count, d], InitKind::Normal),
    ];
    if config.mode == ModelMode::Flow {
        layout.push(("time_embed.fc1.weight".into(), vec![d, d], InitKind::Normal));
        layout.push(("time_embed.fc1.bias".into(), vec![d], InitKind::Zero));
        layout.push(("time_embed.fc2.weight".into(), vec![d, d], InitKind::Normal));
        layout.push(("time_embed.fc2.bias".into(), vec![d], InitKind::Zero));
    }
    for l in 0..config.layers {
        layout.push((format!("layers.{l}.ln1.gamma"), vec![d], InitKind::One));
        layout.push((format!("layers.{l}.ln1.beta"), vec![d], InitKind::Zero));
        for proj in ["q", "k", "v", "o"] {
            layout.push((format!("layers.{l}.attn.w{proj}"), vec![d, d], InitKind::Normal));
            layout.push((format!("layers.{l}.attn.b{proj}"), vec![d], InitKind::Zero));
        }
        layout.push((format!("layers.{l}.ln2.gamma"), vec![d], InitKind::One));
        layout.push((format!("layers.{l}.ln2.beta"), vec![d], InitKind::Zero));
        layout.push((format!("layers.{l}.mlp.fc1.weight"), vec![d, config.mlp_ratio * d], InitKind::Normal));
        layout.push((format!("layers.{l}.mlp.fc1.bias"), vec![config.mlp_ratio * d], InitKind::Zero));
        layout.push((format!("layers.{l}.mlp.fc2.weight"), vec![config.mlp_ratio * d, d], InitKind::Normal));
        layout.push((format!("layers.{l}.mlp.fc2.bias"), vec![d], InitKind::Zero));
    }
    layout.push(("final_ln.gamma".into(), vec![d], InitKind::One));
    layout.push(("final_ln.beta".into(), vec![d], InitKind::Zero));
    // zero head: the initial prediction is the zero tensor
    layout.push(("head.weight".into(), vec![d, config.patch_dim()], InitKind::Zero));
    layout.push(("head.bias".into(), vec![config.patch_dim()], InitKind::Zero));
    layout
}

/// Initialization: projection weights and position tables ~ N(0, 0.02^2),
/// biases zero, layer-norm scales one, and the output head all zeros so the
/// initial prediction is the zero tensor. Deterministic given the seed;
/// tensors are drawn in registration order.
pub fn init_model<E: Element>(config: ModelConfig, seed: u64) -> Result<ModelParams<E>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 0.02).expect("valid stddev");
    let mut ps = ParamSet::new();
    for (name, shape, kind) in param_layout(&config) {
        let numel: usize = shape.iter().product();
        let tensor = match kind {
            InitKind::Normal => {
                let data: Vec<E> = (0..numel).map(|_| scalar(normal.sample(&mut rng))).collect();
                Tensor::new(shape, data).expect("finite init")
            }
            InitKind::Zero => Tensor::zeros(shape),
            InitKind::One => Tensor::full(shape, E::one()),
        };
        ps.push(name, tensor);
    }
    debug_assert_eq!(ps.total_elements(), config.param_count());
    Ok(ModelParams { config, params: ps })
}

// ── patch layout ────────────────────────────────────────────────────────
//
// Token order is frame-major, then row-major over the patch grid; patch
// content is row-major (y, x, c).

/// Image -> [P, p^2*C] token matrix.
pub fn patchify<E: Element>(img: &ImageBuffer, patch: usize) -> Result<Tensor<E>> {
    let (h, w) = img.dims();
    if h % patch != 0 || w % patch != 0 {
        return Err(Error::ShapeMismatch {
            op: "patchify",
            detail: format!("{}x{} not divisible by patch {}", h, w, patch),
        });
    }
    let (gh, gw) = (h / patch, w / patch);
    let c = img.channels();
    let mut data = Vec::with_capacity(gh * gw * patch * patch * c);
    for py in 0..gh {
        for px in 0..gw {
            for y in 0..patch {
                for x in 0..patch {
                    for ch in 0..c {
                        data.push(scalar(img.get(py * patch + y, px * patch + x, ch) as f64));
                    }
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, patch * patch * c], data)
}

/// Clip frames -> [F*P, p^2*C] token matrix (frame-major).
pub fn patchify_frames<E: Element>(frames: &[ImageBuffer], patch: usize) -> Result<Tensor<E>> {
    let per_frame: Vec<Tensor<E>> = frames.iter().map(|f| patchify(f, patch)).collect::<Result<_>>()?;
    let (p, dim) = (per_frame[0].shape()[0], per_frame[0].shape()[1]);
    let mut data = Vec::with_capacity(frames.len() * p * dim);
    for t in &per_frame {
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![frames.len() * p, dim], data)
}

/// One frame's token rows -> image, clamped into [0, 1].
pub fn unpatchify_frame<E: Element>(
    tokens: &[E],
    grid_h: usize,
    grid_w: usize,
    patch: usize,
    channels: usize,
) -> Result<ImageBuffer> {
    let dim = patch * patch * channels;
    if tokens.len() != grid_h * grid_w * dim {
        return Err(Error::ShapeMismatch {
            op: "unpatchify",
            detail: format!("{} values for {}x{} grid", tokens.len(), grid_h, grid_w),
        });
    }
    let (h, w) = (grid_h * patch, grid_w * patch);
    let mut data = vec![0.0f32; h * w * channels];
    for py in 0..grid_h {
        for px in 0..grid_w {
            let tok = &tokens[(py * grid_w + px) * dim..(py * grid_w + px + 1) * dim];
            for y in 0..patch {
                for x in 0..patch {
                    for ch in 0..channels {
                        data[((py * patch + y) * w + px * patch + x) * channels + ch] =
                            tok[(y * patch + x) * channels + ch].to_f64().unwrap() as f32;
                    }
                }
            }
        }
    }
    ImageBuffer::from_raw_clamped(h, w, channels, &data)
}

/// Split a [F*P, dim] prediction into clip frames.
pub fn tokens_to_frames<E: Element>(
    tokens: &Tensor<E>,
    frames: usize,
    grid_h: usize,
    grid_w: usize,
    patch: usize,
    channels: usize,
) -> Result<Vec<ImageBuffer>> {
    let per = grid_h * grid_w * patch * patch * channels;
    (0..frames)
        .map(|t| unpatchify_frame(&tokens.data()[t * per..(t + 1) * per], grid_h, grid_w, patch, channels))
        .collect()
}

/// Sinusoidal embedding of the flow time tau in [0, 1].
fn tau_embedding<E: Element>(tau: f64, dim: usize) -> Tensor<E> {
    let half = dim / 2;
    let mut data = vec![E::zero(); dim];
    for i in 0..half {
        let freq = (10_000.0f64).powf(-(i as f64) / half as f64);
        let arg = tau * 1000.0 * freq;
        data[i] = scalar(arg.sin());
        data[half + i] = scalar(arg.cos());
    }
    Tensor::new(vec![1, dim], data).expect("finite embedding")
}

/// Bilinear resampling matrix from the native pos-embed grid to the active
/// grid (half-pixel centers); identity when the grids match.
fn pos_interp_matrix<E: Element>(native: usize, gh: usize, gw: usize) -> Tensor<E> {
    let mut data = vec![E::zero(); gh * gw * native * native];
    for ty in 0..gh {
        let fy = ((ty as f64 + 0.5) * native as f64 / gh as f64 - 0.5).clamp(0.0, (native - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(native - 1);
        let wy = fy - y0 as f64;
        for tx in 0..gw {
            let fx = ((tx as f64 + 0.5) * native as f64 / gw as f64 - 0.5).clamp(0.0, (native - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(native - 1);
            let wx = fx - x0 as f64;
            let row = (ty * gw + tx) * native * native;
            let mut add = |sy: usize, sx: usize, w: f64| {
                let idx = row + sy * native + sx;
                data[idx] = data[idx] + scalar(w);
            };
            add(y0, x0, (1.0 - wy) * (1.0 - wx));
            add(y0, x1, (1.0 - wy) * wx);
            add(y1, x0, wy * (1.0 - wx));
            add(y1, x1, wy * wx);
        }
    }
    Tensor::new(vec![gh * gw, native * native], data).expect("finite interp weights")
}

/// Flow-mode extra inputs to [`ModelParams::forward`].
pub struct FlowInput<'a, E> {
    /// Noisy clip in token layout [F*P, p^2*C].
    pub noisy_tokens: &'a Tensor<E>,
    pub tau: f64,
}

/// Forward output plus the recorded graph, kept so training can backward.
pub struct TrainingLoss<E: Element> {
    pub value: f64,
    graph: Graph<E>,
    loss: NodeId,
    param_nodes: Vec<NodeId>,
}

/// Per-parameter gradients in registration order.
pub struct Gradients<E> {
    pub per_param: Vec<Vec<E>>,
}

impl<E: Element> TrainingLoss<E> {
    /// Consume the recorded graph and return gradients for every parameter.
    pub fn backward(mut self) -> Result<Gradients<E>> {
        self.graph.backward(self.loss)?;
        let per_param = self
            .param_nodes
            .iter()
            .map(|&id| {
                self.graph
                    .take_grad(id)
                    .unwrap_or_else(|| vec![E::zero(); self.graph.value(id).numel()])
            })
            .collect();
        Ok(Gradients { per_param })
    }
}

impl<E: Element> ModelParams<E> {
    /// Look up a parameter node index by name (registration order).
    fn idx(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
    }

    /// Run the network. `drop_condition` zeroes the anchor tokens (the
    /// training-time condition dropout and the unconditional guidance
    /// branch). Returns predictions in token layout [F*P, p^2*C].
    pub fn forward(
        &self,
        anchor: &ImageBuffer,
        drop_condition: bool,
        flow: Option<FlowInput<'_, E>>,
    ) -> Result<Tensor<E>> {
        let (mut graph, out, _) = self.build_graph(anchor, drop_condition, flow, false)?;
        Ok(graph.take_value(out))
    }

    /// Eq.-style training objective: MSE between predicted and target frames
    /// (regress) or between predicted and target velocity (flow). Consumes
    /// randomness for condition dropout and, in flow mode, for tau and the
    /// noise sample, in that order.
    pub fn training_loss(&self, clip: &PseudoClip, rng: &mut ChaCha8Rng) -> Result<TrainingLoss<E>> {
        let cfg = &self.config;
        if clip.frames.len() != cfg.frame_count {
            return Err(Error::ShapeMismatch {
                op: "training_loss",
                detail: format!("clip has {} frames, model expects {}", clip.frames.len(), cfg.frame_count),
            });
        }
        let drop = rng.gen::<f64>() < cfg.condition_dropout_prob;
        let anchor = clip.first().clone();
        let targets = patchify_frames::<E>(&clip.frames, cfg.patch_size)?;

        match cfg.mode {
            ModelMode::Regress => {
                let (mut graph, out, param_nodes) = self.build_graph(&anchor, drop, None, true)?;
                let target = graph.leaf(targets, false);
                let loss = graph.mse(out, target)?;
                let value = graph.value(loss).item()?.to_f64().unwrap();
                Ok(TrainingLoss { value, graph, loss, param_nodes })
            }
            ModelMode::Flow => {
                let tau = rng.gen::<f64>();
                let normal = Normal::new(0.0f64, 1.0).expect("valid stddev");
                let noise: Vec<f64> = (0..targets.numel()).map(|_| normal.sample(rng)).collect();
                // x_tau = (1 - tau) * eps + tau * x1; target velocity x1 - eps
                let mut noisy = Vec::with_capacity(targets.numel());
                let mut velocity = Vec::with_capacity(targets.numel());
                for (&x1, &eps) in targets.data().iter().zip(&noise) {
                    let x1 = x1.to_f64().unwrap();
                    noisy.push((1.0 - tau) * eps + tau * x1);
                    velocity.push(x1 - eps);
                }
                let shape = targets.shape().to_vec();
                let noisy = Tensor::from_f64(shape.clone(), &noisy)?;
                let velocity = Tensor::from_f64(shape, &velocity)?;
                let (mut graph, out, param_nodes) =
                    self.build_graph(&anchor, drop, Some(FlowInput { noisy_tokens: &noisy, tau }), true)?;
                let target = graph.leaf(velocity, false);
                let loss = graph.mse(out, target)?;
                let value = graph.value(loss).item()?.to_f64().unwrap();
                Ok(TrainingLoss { value, graph, loss, param_nodes })
            }
        }
    }

    /// Record the full forward pass on a fresh graph. Returns the graph, the
    /// output node, and the parameter leaf nodes in registration order.
    fn build_graph(
        &self,
        anchor: &ImageBuffer,
        drop_condition: bool,
        flow: Option<FlowInput<'_, E>>,
        requires_grad: bool,
    ) -> Result<(Graph<E>, NodeId, Vec<NodeId>)> {
        let cfg = &self.config;
        cfg.validate()?;
        if anchor.channels() != cfg.channels {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!("anchor has {} channels, model expects {}", anchor.channels(), cfg.channels),
            });
        }
        match (cfg.mode, &flow) {
            (ModelMode::Flow, None) => {
                return Err(Error::InvalidArgument("flow mode requires noisy tokens and tau".into()))
            }
            (ModelMode::Regress, Some(_)) => {
                return Err(Error::InvalidArgument("regress mode takes no flow input".into()))
            }
            _ => {}
        }
        let (h, w) = anchor.dims();
        let p = cfg.patch_size;
        if h % p != 0 || w % p != 0 {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!("anchor {}x{} not divisible by patch {}", h, w, p),
            });
        }
        let (gh, gw) = (h / p, w / p);
        let tokens_per_frame = gh * gw;
        let f = cfg.frame_count;
        let d = cfg.embed_dim;

        let mut g = Graph::new();
        let param_nodes: Vec<NodeId> =
            self.params.iter().map(|pr| g.leaf(pr.value.clone(), requires_grad)).collect();
        let pn = |name: &str| param_nodes[self.idx(name)];

        // anchor tokens (zeroed when the condition is dropped)
        let anchor_tokens = if drop_condition {
            Tensor::zeros(vec![tokens_per_frame, cfg.patch_dim()])
        } else {
            patchify::<E>(anchor, p)?
        };
        let anchor_tok = g.leaf(anchor_tokens, false);

        // spatial positions, resampled when the active grid differs
        let native = cfg.native_grid();
        let spos_param = pn("pos_embed.spatial");
        let spos = if (gh, gw) == (native, native) {
            spos_param
        } else {
            let m = g.leaf(pos_interp_matrix::<E>(native, gh, gw), false);
            g.matmul(m, spos_param)?
        };

        // per-frame embeddings -> concatenated [F*P, d] token matrix
        let wpe = pn("patch_embed.weight");
        let bpe = pn("patch_embed.bias");
        let temporal = pn("pos_embed.temporal");
        let mut frame_tokens = Vec::with_capacity(f);
        let regress_embed = match cfg.mode {
            ModelMode::Regress => {
                let e = g.matmul(anchor_tok, wpe)?;
                let e = g.broadcast_add(e, bpe)?;
                Some(g.add(e, spos)?)
            }
            ModelMode::Flow => None,
        };
        for t in 0..f {
            let base = match (&flow, regress_embed) {
                (None, Some(embed)) => embed,
                (Some(fi), _) => {
                    if fi.noisy_tokens.shape() != [f * tokens_per_frame, cfg.patch_dim()] {
                        return Err(Error::ShapeMismatch {
                            op: "forward",
                            detail: format!(
                                "noisy tokens {:?}, expected [{}, {}]",
                                fi.noisy_tokens.shape(),
                                f * tokens_per_frame,
                                cfg.patch_dim()
                            ),
                        });
                    }
                    let start = t * tokens_per_frame * cfg.patch_dim();
                    let end = (t + 1) * tokens_per_frame * cfg.patch_dim();
                    let noisy_t = Tensor::new(
                        vec![tokens_per_frame, cfg.patch_dim()],
                        fi.noisy_tokens.data()[start..end].to_vec(),
                    )?;
                    let noisy_leaf = g.leaf(noisy_t, false);
                    let cat = g.concat(&[anchor_tok, noisy_leaf], 1)?;
                    let e = g.matmul(cat, wpe)?;
                    let e = g.broadcast_add(e, bpe)?;
                    g.add(e, spos)?
                }
                (None, None) => unreachable!("regress embed exists in regress mode"),
            };
            // add this frame's temporal embedding row via a one-hot product
            let mut onehot = vec![E::zero(); f];
            onehot[t] = E::one();
            let oh = g.leaf(Tensor::new(vec![1, f], onehot)?, false);
            let row = g.matmul(oh, temporal)?;
            let row = g.reshape(row, vec![d])?;
            frame_tokens.push(g.broadcast_add(base, row)?);
        }
        let mut x = g.concat(&frame_tokens, 0)?;

        // flow-time conditioning on all tokens
        if let Some(fi) = &flow {
            let feat = g.leaf(tau_embedding::<E>(fi.tau, d), false);
            let t1 = g.matmul(feat, pn("time_embed.fc1.weight"))?;
            let t1 = g.broadcast_add(t1, pn("time_embed.fc1.bias"))?;
            let t1 = g.gelu(t1)?;
            let t2 = g.matmul(t1, pn("time_embed.fc2.weight"))?;
            let t2 = g.broadcast_add(t2, pn("time_embed.fc2.bias"))?;
            let t2 = g.reshape(t2, vec![d])?;
            x = g.broadcast_add(x, t2)?;
        }

        // transformer stack
        let n = f * tokens_per_frame;
        let heads = cfg.heads;
        let hd = d / heads;
        for l in 0..cfg.layers {
            let name = |s: &str| format!("layers.{l}.{s}");
            let h1 = g.layer_norm(x, pn(&name("ln1.gamma")), pn(&name("ln1.beta")), 1e-5)?;
            let q = g.matmul(h1, pn(&name("attn.wq")))?;
            let q = g.broadcast_add(q, pn(&name("attn.bq")))?;
            let k = g.matmul(h1, pn(&name("attn.wk")))?;
            let k = g.broadcast_add(k, pn(&name("attn.bk")))?;
            let v = g.matmul(h1, pn(&name("attn.wv")))?;
            let v = g.broadcast_add(v, pn(&name("attn.bv")))?;
            let qh = g.reshape(q, vec![n, heads, hd])?;
            let qh = g.permute(qh, &[1, 0, 2])?;
            let kt = g.reshape(k, vec![n, heads, hd])?;
            let kt = g.permute(kt, &[1, 2, 0])?;
            let vh = g.reshape(v, vec![n, heads, hd])?;
            let vh = g.permute(vh, &[1, 0, 2])?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, 1.0 / (hd as f64).sqrt())?;
            let attn = g.softmax(scores)?;
            let ctx = g.matmul(attn, vh)?;
            let ctx = g.permute(ctx, &[1, 0, 2])?;
            let ctx = g.reshape(ctx, vec![n, d])?;
            let o = g.matmul(ctx, pn(&name("attn.wo")))?;
            let o = g.broadcast_add(o, pn(&name("attn.bo")))?;
            x = g.add(x, o)?;

            let h2 = g.layer_norm(x, pn(&name("ln2.gamma")), pn(&name("ln2.beta")), 1e-5)?;
            let m = g.matmul(h2, pn(&name("mlp.fc1.weight")))?;
            let m = g.broadcast_add(m, pn(&name("mlp.fc1.bias")))?;
            let m = g.gelu(m)?;
            let m = g.matmul(m, pn(&name("mlp.fc2.weight")))?;
            let m = g.broadcast_add(m, pn(&name("mlp.fc2.bias")))?;
            x = g.add(x, m)?;
        }

        let x = g.layer_norm(x, pn("final_ln.gamma"), pn("final_ln.beta"), 1e-5)?;
        let out = g.matmul(x, pn("head.weight"))?;
        let out = g.broadcast_add(out, pn("head.bias"))?;
        Ok((g, out, param_nodes))
    }
}

/// Finite-difference error of the full training loss w.r.t. every parameter,
/// in f64: the gradient-correctness oracle for whole-model verification.
pub fn model_loss_fd_error(model: &ModelParams<f64>, clip: &PseudoClip, loss_seed: u64, h: f64) -> f64 {
    fn set_param(model: &mut ModelParams<f64>, pi: usize, ci: usize, v: f64) {
        for (i, p) in model.params.iter_mut().enumerate() {
            if i == pi {
                p.value.data_mut()[ci] = v;
            }
        }
    }
    let loss_of = |m: &ModelParams<f64>| {
        let mut rng = ChaCha8Rng::seed_from_u64(loss_seed);
        m.training_loss(clip, &mut rng).unwrap().value
    };
    let mut rng = ChaCha8Rng::seed_from_u64(loss_seed);
    let grads = model.training_loss(clip, &mut rng).unwrap().backward().unwrap();
    let mut max_rel = 0.0f64;
    let mut work = model.clone();
    for pi in 0..model.params.len() {
        for ci in 0..model.params.get(pi).value.numel() {
            let orig = model.params.get(pi).value.data()[ci];
            set_param(&mut work, pi, ci, orig + h);
            let plus = loss_of(&work);
            set_param(&mut work, pi, ci, orig - h);
            let minus = loss_of(&work);
            set_param(&mut work, pi, ci, orig);
            let fd = (plus - minus) / (2.0 * h);
            let an = grads.per_param[pi][ci];
            let rel = (an - fd).abs() / (an.abs() + 1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    max_rel
}
