//! Training configuration and its flat `key = value` file format.
//!
//! One assignment per line; `#` starts a comment; unknown keys are errors.
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `mode` | `3d`, `video` or `mixed:<p>` (a step is video with probability `p`) | `3d` |
//! | `steps` | optimiser steps | 20000 |
//! | `batch` | scenes per step | 1 |
//! | `views` | views per training scene `V` | 12 |
//! | `lr` | peak learning rate | 3e-4 |
//! | `weight_decay` | decoupled weight decay | 0.01 |
//! | `beta1`, `beta2`, `adam_eps` | moment decay rates and denominator epsilon | 0.9, 0.95, 1e-8 |
//! | `warmup` | linear warm-up steps | 500 |
//! | `min_lr_ratio` | cosine floor as a fraction of `lr` | 0.1 |
//! | `grad_clip` | global gradient-norm clip (0 disables) | 1.0 |
//! | `sampler` | `uniform`, `logit-normal`, `mode` or `mode:<s>` | `mode:0.8` |
//! | `shift` | shift modulation σ | 3 |
//! | `cfg_dropout` | probability of hiding all references | 0.1 |
//! | `seed` | master seed | 0 |
//! | `scenes` | synthetic training scenes (seeds `0..scenes`) | 1000 |
//! | `res` | image resolution (square) | 32 |
//! | `data_dir` | load training samples from a dataset directory instead | unset |
//! | `out` | output directory for checkpoints and CSVs | unset |
//! | `eval_every`, `checkpoint_every` | cadences in steps (0 disables) | 1000, 5000 |
//! | `eval_scenes`, `eval_refs` | held-out scenes and references for periodic evaluation | 8, 5 |
//! | `schedule`, `sample_steps`, `cfg_scale` | inference settings for evaluation | `linear-quadratic`, 25, 1.5 |
//! | `resume` | continue from `<out>/latest.ckpt` when present | false |
//! | `layers`, `hidden`, `q_heads`, `kv_heads`, `window`, `registers`, `patch`, `ffn_hidden`, `value_transform` | architecture | toy model |

use std::path::{Path, PathBuf};

use crate::flow::{SamplerFamily, SamplerSpec, ScheduleKind};
use crate::net::{default_ffn_hidden, ModelConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainMode {
    ThreeD,
    Video,
    /// Each step draws a video batch with probability `video_ratio`.
    Mixed { video_ratio: f64 },
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "3d" => Ok(Self::ThreeD),
            "video" => Ok(Self::Video),
            _ => {
                let ratio = lower
                    .strip_prefix("mixed:")
                    .or_else(|| lower.strip_prefix("mixed="))
                    .and_then(|r| r.parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown mode {s:?} (3d, video or mixed:<ratio>)")))?;
                Ok(Self::Mixed { video_ratio: ratio })
            }
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::ThreeD => write!(f, "3d"),
            Self::Video => write!(f, "video"),
            Self::Mixed { video_ratio } => write!(f, "mixed:{video_ratio}"),
        }
    }
}

/// Parses `uniform`, `logit-normal`, `mode` or `mode:<scale>`.
pub fn parse_sampler_family(s: &str) -> Result<SamplerFamily> {
    let lower = s.trim().to_ascii_lowercase().replace('_', "-");
    match lower.as_str() {
        "uniform" => Ok(SamplerFamily::Uniform),
        "logit-normal" | "logitnormal" | "lognorm" => Ok(SamplerFamily::LogitNormal),
        "mode" => Ok(SamplerFamily::Mode { scale: 0.8 }),
        _ => lower
            .strip_prefix("mode:")
            .and_then(|x| x.parse::<f64>().ok())
            .map(|scale| SamplerFamily::Mode { scale })
            .ok_or_else(|| Error::invalid(format!("unknown sampler {s:?}"))),
    }
}

pub fn format_sampler_family(f: SamplerFamily) -> String {
    match f {
        SamplerFamily::Uniform => "uniform".into(),
        SamplerFamily::LogitNormal => "logit-normal".into(),
        SamplerFamily::Mode { scale } => format!("mode:{scale}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub steps: u64,
    pub batch: usize,
    pub views: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub warmup: u64,
    pub min_lr_ratio: f64,
    pub grad_clip: f64,
    pub sampler: SamplerSpec,
    pub cfg_dropout: f64,
    pub seed: u64,
    pub scenes: usize,
    pub res: usize,
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub eval_scenes: usize,
    pub eval_refs: usize,
    pub schedule: ScheduleKind,
    pub sample_steps: usize,
    pub cfg_scale: f64,
    pub resume: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::ThreeD,
            steps: 20_000,
            batch: 1,
            views: 12,
            lr: 3e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            warmup: 500,
            min_lr_ratio: 0.1,
            grad_clip: 1.0,
            sampler: SamplerSpec::default(),
            cfg_dropout: 0.1,
            seed: 0,
            scenes: 1000,
            res: 32,
            data_dir: None,
            out: None,
            eval_every: 1000,
            checkpoint_every: 5000,
            eval_scenes: 8,
            eval_refs: 5,
            schedule: ScheduleKind::LinearQuadratic,
            sample_steps: 25,
            cfg_scale: 1.5,
            resume: false,
            model: ModelConfig::toy(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {value:?}")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::invalid(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl TrainConfig {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "mode" => self.mode = value.parse()?,
            "steps" => self.steps = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "views" => self.views = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "warmup" => self.warmup = num(key, value)?,
            "min_lr_ratio" => self.min_lr_ratio = num(key, value)?,
            "grad_clip" => self.grad_clip = num(key, value)?,
            "sampler" => self.sampler.family = parse_sampler_family(value)?,
            "shift" => self.sampler.shift = num(key, value)?,
            "cfg_dropout" => self.cfg_dropout = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "scenes" => self.scenes = num(key, value)?,
            "res" => self.res = num(key, value)?,
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "eval_every" => self.eval_every = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "eval_scenes" => self.eval_scenes = num(key, value)?,
            "eval_refs" => self.eval_refs = num(key, value)?,
            "schedule" => self.schedule = value.parse()?,
            "sample_steps" => self.sample_steps = num(key, value)?,
            "cfg_scale" => self.cfg_scale = num(key, value)?,
            "resume" => self.resume = flag(key, value)?,
            "layers" => m.layers = num(key, value)?,
            "hidden" => {
                m.hidden = num(key, value)?;
                m.ffn_hidden = default_ffn_hidden(m.hidden);
            }
            "q_heads" => m.q_heads = num(key, value)?,
            "kv_heads" => m.kv_heads = num(key, value)?,
            "window" => m.window = num(key, value)?,
            "registers" => m.registers = num(key, value)?,
            "patch" => m.patch = num(key, value)?,
            "ffn_hidden" => m.ffn_hidden = num(key, value)?,
            "value_transform" => m.value_transform = flag(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// The network configuration implied by the image resolution.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut m = self.model.clone();
        if m.patch == 0 || !self.res.is_multiple_of(m.patch) {
            return Err(Error::invalid(format!("resolution {} not divisible by patch {}", self.res, m.patch)));
        }
        m.grid_h = self.res / m.patch;
        m.grid_w = self.res / m.patch;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.batch == 0 {
            return bad("batch must be ≥ 1".into());
        }
        if self.views < 2 {
            return bad(format!("views must be ≥ 2, got {}", self.views));
        }
        if let TrainMode::Mixed { video_ratio } = self.mode {
            if !(video_ratio > 0.0 && video_ratio < 1.0) {
                return bad(format!("mixed ratio {video_ratio} outside (0, 1)"));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return bad("lr and weight_decay must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("betas must lie in [0, 1) and adam_eps be positive".into());
        }
        if !(0.0..=1.0).contains(&self.cfg_dropout) || !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return bad("cfg_dropout and min_lr_ratio must lie in [0, 1]".into());
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be non-negative".into());
        }
        if self.scenes == 0 && self.data_dir.is_none() {
            return bad("scenes must be ≥ 1".into());
        }
        if self.sample_steps < 2 {
            return bad("sample_steps must be ≥ 2".into());
        }
        if self.eval_refs == 0 || self.eval_refs + 1 > self.views {
            return bad(format!("eval_refs {} needs 1 ≤ n < views {}", self.eval_refs, self.views));
        }
        self.sampler.validate()?;
        self.model_config()?;
        Ok(())
    }

    /// Serialises every key, suitable for [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut lines = vec![
            format!("mode = {}", self.mode),
            format!("steps = {}", self.steps),
            format!("batch = {}", self.batch),
            format!("views = {}", self.views),
            format!("lr = {}", self.lr),
            format!("weight_decay = {}", self.weight_decay),
            format!("beta1 = {}", self.beta1),
            format!("beta2 = {}", self.beta2),
            format!("adam_eps = {}", self.adam_eps),
            format!("warmup = {}", self.warmup),
            format!("min_lr_ratio = {}", self.min_lr_ratio),
            format!("grad_clip = {}", self.grad_clip),
            format!("sampler = {}", format_sampler_family(self.sampler.family)),
            format!("shift = {}", self.sampler.shift),
            format!("cfg_dropout = {}", self.cfg_dropout),
            format!("seed = {}", self.seed),
            format!("scenes = {}", self.scenes),
            format!("res = {}", self.res),
        ];
        if let Some(d) = &self.data_dir {
            lines.push(format!("data_dir = {}", d.display()));
        }
        if let Some(d) = &self.out {
            lines.push(format!("out = {}", d.display()));
        }
        lines.extend([
            format!("eval_every = {}", self.eval_every),
            format!("checkpoint_every = {}", self.checkpoint_every),
            format!("eval_scenes = {}", self.eval_scenes),
            format!("eval_refs = {}", self.eval_refs),
            format!("schedule = {}", schedule_name(self.schedule)),
            format!("sample_steps = {}", self.sample_steps),
            format!("cfg_scale = {}", self.cfg_scale),
            format!("resume = {}", self.resume),
            format!("layers = {}", m.layers),
            format!("hidden = {}", m.hidden),
            format!("q_heads = {}", m.q_heads),
            format!("kv_heads = {}", m.kv_heads),
            format!("window = {}", m.window),
            format!("registers = {}", m.registers),
            format!("patch = {}", m.patch),
            format!("ffn_hidden = {}", m.ffn_hidden),
            format!("value_transform = {}", m.value_transform),
        ]);
        lines.join("\n") + "\n"
    }
}

pub fn schedule_name(k: ScheduleKind) -> &'static str {
    match k {
        ScheduleKind::Linspace => "linspace",
        ScheduleKind::Trailing => "trailing",
        ScheduleKind::LinearQuadratic => "linear-quadratic",
    }
}
