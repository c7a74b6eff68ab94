//! Experiment configuration: flat sectioned `key = value` text with the
//! sections `dataset`, `model`, `schedule`, `sampler`, `eval`. Unknown
//! sections or keys are rejected before any work starts.
//!
//! Exactly one axis may carry multiple values to define a sweep:
//! `frames = 4,8,16` (model), `resolutions = 16,24,32; 16` (schedule,
//! alternatives split on `;`), or `train_per_category = 10,50` (dataset).

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::degrade::CategoryLabel;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelMode};
use crate::optim::OptimizerConfig;
use crate::trainer::{CorrectorInit, StageDataMode};

#[derive(Clone, Debug)]
pub enum DatasetConfig {
    Synthetic {
        source_count: usize,
        image_size: usize,
        categories: Vec<CategoryLabel>,
        train_per_category: Vec<usize>,
        eval_per_category: usize,
    },
    Manifests { train: PathBuf, eval: PathBuf },
}

#[derive(Clone, Debug)]
pub struct ScheduleSettings {
    /// Sweep alternatives; each inner list is one schedule.
    pub resolutions: Vec<Vec<usize>>,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub stage_mode: StageDataMode,
    pub allow_decreasing: bool,
    pub corrector: bool,
    pub corrector_epochs: usize,
    pub corrector_steps_per_epoch: usize,
    /// `shared`: the corrector reuses the base model's training pairs (the
    /// default). `disjoint`: every 5th pair is held back from base training
    /// and used only for the corrector.
    pub corrector_split: CorrectorSplit,
    /// `warm` starts the corrector from the trained base weights (both
    /// models share one backbone at full scale); `fresh` re-initializes.
    pub corrector_init: CorrectorInit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrectorSplit {
    Shared,
    Disjoint,
}

impl CorrectorSplit {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(CorrectorSplit::Shared),
            "disjoint" => Ok(CorrectorSplit::Disjoint),
            other => Err(Error::Config(format!("unknown corrector_split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SamplerSettings {
    pub steps: usize,
    pub guidance: f64,
    pub shift: f64,
}

#[derive(Clone, Debug)]
pub struct EvalSettings {
    pub apply_corrector: bool,
    pub resize_limit: usize,
}

/// Parsed experiment file, before sweep resolution.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub raw_text: String,
    pub seed: u64,
    pub dataset: DatasetConfig,
    /// Template model config; `frame_count` is overwritten per variant.
    pub model: ModelConfig,
    pub frames: Vec<usize>,
    pub schedule: ScheduleSettings,
    pub sampler: SamplerSettings,
    pub eval: EvalSettings,
}

/// One fully-resolved run.
#[derive(Clone, Debug)]
pub struct ExperimentVariant {
    /// (axis, value) when this run belongs to a sweep.
    pub sweep: Option<(String, String)>,
    pub frames: usize,
    pub resolutions: Vec<usize>,
    pub train_per_category: usize,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim().to_string();
                if !["dataset", "model", "schedule", "sampler", "eval"].contains(&name.as_str()) {
                    return Err(Error::Config(format!("line {line_no}: unknown section [{name}]")));
                }
                sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {line_no}: expected `key = value`, got `{line}`"))
            })?;
            let section = current
                .clone()
                .ok_or_else(|| Error::Config(format!("line {line_no}: key before any [section]")))?;
            let prev = sections
                .get_mut(&section)
                .unwrap()
                .insert(k.trim().to_string(), v.trim().to_string());
            if prev.is_some() {
                return Err(Error::Config(format!("line {line_no}: duplicate key `{}`", k.trim())));
            }
        }

        let mut ds = Section::new("dataset", sections.remove("dataset").unwrap_or_default());
        let mut md = Section::new("model", sections.remove("model").unwrap_or_default());
        let mut sc = Section::new("schedule", sections.remove("schedule").unwrap_or_default());
        let mut sp = Section::new("sampler", sections.remove("sampler").unwrap_or_default());
        let mut ev = Section::new("eval", sections.remove("eval").unwrap_or_default());

        let seed = ds.parse_or("seed", 42u64)?;
        let kind = ds.take("kind").unwrap_or_else(|| "synthetic".into());
        let dataset = match kind.as_str() {
            "synthetic" => DatasetConfig::Synthetic {
                source_count: ds.parse_or("source_count", 64)?,
                image_size: ds.parse_or("image_size", 32)?,
                categories: parse_categories(&ds.take("categories").unwrap_or_else(|| "all".into()))?,
                train_per_category: parse_usize_list(&ds.take("train_per_category").unwrap_or_else(|| "50".into()))?,
                eval_per_category: ds.parse_or("eval_per_category", 5)?,
            },
            "manifest" => DatasetConfig::Manifests {
                train: PathBuf::from(ds.require("train_manifest")?),
                eval: PathBuf::from(ds.require("eval_manifest")?),
            },
            other => return Err(Error::Config(format!("dataset kind `{other}` unknown"))),
        };

        let frames = parse_usize_list(&md.take("frames").unwrap_or_else(|| "9".into()))?;
        if frames.iter().any(|&f| f < 2) {
            return Err(Error::Config("frames must be >= 2".into()));
        }
        let model = ModelConfig {
            patch_size: md.parse_or("patch_size", 4)?,
            embed_dim: md.parse_or("embed_dim", 64)?,
            layers: md.parse_or("layers", 4)?,
            heads: md.parse_or("heads", 4)?,
            frame_count: frames[0],
            image_size: md.parse_or("image_size", 32)?,
            channels: md.parse_or("channels", 3)?,
            mode: ModelMode::parse(&md.take("mode").unwrap_or_else(|| "regress".into()))?,
            condition_dropout_prob: md.parse_or("condition_dropout", 0.1)?,
            mlp_ratio: md.parse_or("mlp_ratio", 4)?,
        };

        let resolutions = parse_resolution_alternatives(
            &sc.take("resolutions").unwrap_or_else(|| "16,24,32".into()),
        )?;
        let optimizer = OptimizerConfig {
            base_lr: sc.parse_or("base_lr", OptimizerConfig::default().base_lr)?,
            weight_decay: sc.parse_or("weight_decay", OptimizerConfig::default().weight_decay)?,
            epsilon: sc.parse_or("epsilon", OptimizerConfig::default().epsilon)?,
            warmup_steps: sc.parse_or("warmup_steps", OptimizerConfig::default().warmup_steps)?,
            max_grad_norm: sc.parse_or("max_grad_norm", OptimizerConfig::default().max_grad_norm)?,
            beta1: sc.parse_or("beta1", OptimizerConfig::default().beta1)?,
            beta2: sc.parse_or("beta2", OptimizerConfig::default().beta2)?,
        };
        let schedule = ScheduleSettings {
            resolutions,
            epochs: sc.parse_or("epochs", 30)?,
            steps_per_epoch: sc.parse_or("steps_per_epoch", 50)?,
            batch_size: sc.parse_or("batch_size", 4)?,
            optimizer,
            stage_mode: StageDataMode::parse(&sc.take("stage_mode").unwrap_or_else(|| "resize_crop".into()))?,
            allow_decreasing: sc.parse_or("allow_decreasing", false)?,
            corrector: sc.parse_or("corrector", false)?,
            corrector_epochs: sc.parse_or("corrector_epochs", 10)?,
            corrector_steps_per_epoch: sc.parse_or("corrector_steps_per_epoch", 30)?,
            corrector_split: CorrectorSplit::parse(
                &sc.take("corrector_split").unwrap_or_else(|| "shared".into()),
            )?,
            corrector_init: CorrectorInit::parse(
                &sc.take("corrector_init").unwrap_or_else(|| "warm".into()),
            )?,
        };

        let sampler = SamplerSettings {
            steps: sp.parse_or("steps", 50)?,
            guidance: sp.parse_or("guidance", 5.0)?,
            shift: sp.parse_or("shift", 5.0)?,
        };
        let eval = EvalSettings {
            apply_corrector: ev.parse_or("apply_corrector", true)?,
            resize_limit: ev.parse_or("resize_limit", crate::metrics::RESIZE_LIMIT)?,
        };

        for s in [ds, md, sc, sp, ev] {
            s.finish()?;
        }

        let config = ExperimentConfig {
            raw_text: text.to_string(),
            seed,
            dataset,
            model,
            frames,
            schedule,
            sampler,
            eval,
        };
        config.variants()?; // validate the sweep shape eagerly
        Ok(config)
    }

    /// Resolve sweep axes into concrete runs. At most one axis may sweep.
    pub fn variants(&self) -> Result<Vec<ExperimentVariant>> {
        let per_cat = match &self.dataset {
            DatasetConfig::Synthetic { train_per_category, .. } => train_per_category.clone(),
            DatasetConfig::Manifests { .. } => vec![0],
        };
        let mut axes = 0;
        for swept in [self.frames.len() > 1, self.schedule.resolutions.len() > 1, per_cat.len() > 1] {
            axes += usize::from(swept);
        }
        if axes > 1 {
            return Err(Error::Config("at most one axis may sweep (frames, resolutions, or train_per_category)".into()));
        }
        let mut out = Vec::new();
        if self.frames.len() > 1 {
            for &f in &self.frames {
                out.push(ExperimentVariant {
                    sweep: Some(("frames".into(), f.to_string())),
                    frames: f,
                    resolutions: self.schedule.resolutions[0].clone(),
                    train_per_category: per_cat[0],
                });
            }
        } else if self.schedule.resolutions.len() > 1 {
            for rs in &self.schedule.resolutions {
                let label = rs.iter().map(ToString::to_string).collect::<Vec<_>>().join("+");
                out.push(ExperimentVariant {
                    sweep: Some(("resolutions".into(), label)),
                    frames: self.frames[0],
                    resolutions: rs.clone(),
                    train_per_category: per_cat[0],
                });
            }
        } else if per_cat.len() > 1 {
            for &n in &per_cat {
                out.push(ExperimentVariant {
                    sweep: Some(("train_per_category".into(), n.to_string())),
                    frames: self.frames[0],
                    resolutions: self.schedule.resolutions[0].clone(),
                    train_per_category: n,
                });
            }
        } else {
            out.push(ExperimentVariant {
                sweep: None,
                frames: self.frames[0],
                resolutions: self.schedule.resolutions[0].clone(),
                train_per_category: per_cat[0],
            });
        }
        Ok(out)
    }
}

struct Section {
    name: &'static str,
    map: BTreeMap<String, String>,
}

impl Section {
    fn new(name: &'static str, map: BTreeMap<String, String>) -> Self {
        Self { name, map }
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| Error::Config(format!("[{}] missing required key `{key}`", self.name)))
    }

    fn parse_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::Config(format!("[{}] bad value `{v}` for `{key}`", self.name))
            }),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.map.keys().next() {
            return Err(Error::Config(format!("[{}] unknown key `{key}`", self.name)));
        }
        Ok(())
    }
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    let out: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("bad integer `{p}`"))))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Config("empty integer list".into()));
    }
    Ok(out)
}

fn parse_resolution_alternatives(s: &str) -> Result<Vec<Vec<usize>>> {
    s.split(';').map(|alt| parse_usize_list(alt.trim())).collect()
}

fn parse_categories(s: &str) -> Result<Vec<CategoryLabel>> {
    if s == "all" {
        return Ok(CategoryLabel::all().collect());
    }
    s.split(',').map(|p| CategoryLabel::parse(p.trim())).collect()
}
