//! Training loop for video pre-training, 3D training and mixed schedules.
//!
//! One step, for each scene of the batch:
//!
//! 1. draw a scene, a reference/target split and a random view mask;
//! 2. draw one timestep for the whole scene and noise the target views;
//! 3. drop hidden views, run the network and take the masked velocity loss
//!    over the visible targets;
//! 4. average gradients over the batch, clip, and apply an AdamW update.
//!
//! Randomness for step `s` comes from a ChaCha8 stream `s` of the master
//! seed, so a resumed run replays exactly the draws an uninterrupted run
//! would make.

mod config;
mod eval;
mod optim;

pub use config::{format_sampler_family, parse_sampler_family, schedule_name, TrainConfig, TrainMode};
pub use eval::{eval_csv, evaluate, nearest_reference, EvalOptions, EvalRow, EVAL_CSV_HEADER};
pub use optim::{clip_grad_norm, learning_rate, AdamW, AdamWConfig};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::evalkit::ThroughputMeter;
use crate::flow::{masked_velocity_loss, sample_t, GenerateOptions, Schedule};
use crate::net::checkpoint::Checkpoint;
use crate::net::gradcheck::token_mask;
use crate::net::{backward, forward, patchify, ModelParams, Network, Role, SceneInputs};
use crate::synth::{make_3d_sample, make_video_sample, Dataset, Sample, SampleMode};
use crate::views::sample_view_batch;
use crate::{Error, Result};

/// Seeds of held-out evaluation scenes start here; training scenes use
/// `0..scenes`.
pub const EVAL_SEED_BASE: u64 = 1_000_000;

pub const METRICS_CSV_HEADER: &str = "step,loss,psnr,ssim,throughput,lr";
pub const LOSSES_CSV_HEADER: &str = "step,loss,t,lr";

/// Where training scenes come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Rendered on demand from seeds `0..scenes`.
    Synthetic { scenes: usize, views: usize, res: usize },
    /// Pre-generated samples held in memory.
    Loaded { three_d: Vec<Sample>, video: Vec<Sample> },
}

impl DataSource {
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        let Some(dir) = &cfg.data_dir else {
            return Ok(Self::Synthetic {
                scenes: cfg.scenes,
                views: cfg.views,
                res: cfg.res,
            });
        };
        let samples = Dataset::open(dir)?.load_all()?;
        let (three_d, video): (Vec<_>, Vec<_>) = samples.into_iter().partition(|s| s.mode == SampleMode::ThreeD);
        for s in three_d.iter().chain(&video) {
            if s.views() != cfg.views || s.images[0].height != cfg.res || s.images[0].width != cfg.res {
                return Err(Error::Dataset(format!(
                    "sample {} is {} views at {}×{}, config wants {} at {}²",
                    s.seed,
                    s.views(),
                    s.images[0].height,
                    s.images[0].width,
                    cfg.views,
                    cfg.res
                )));
            }
        }
        Ok(Self::Loaded { three_d, video })
    }

    fn draw<R: Rng + ?Sized>(&self, mode: SampleMode, rng: &mut R) -> Result<Sample> {
        match self {
            Self::Synthetic { scenes, views, res } => {
                let seed = rng.random_range(0..*scenes as u64);
                match mode {
                    SampleMode::ThreeD => make_3d_sample(seed, *views, *res),
                    SampleMode::Video => make_video_sample(seed, *views, *res),
                }
            }
            Self::Loaded { three_d, video } => {
                let pool = if mode == SampleMode::ThreeD { three_d } else { video };
                if pool.is_empty() {
                    return Err(Error::Dataset(format!("no {mode:?} samples loaded")));
                }
                Ok(pool[rng.random_range(0..pool.len())].clone())
            }
        }
    }
}

/// Held-out scenes for evaluation, rendered from [`EVAL_SEED_BASE`].
pub fn eval_samples(mode: SampleMode, count: usize, views: usize, res: usize) -> Result<Vec<Sample>> {
    (0..count as u64)
        .map(|i| match mode {
            SampleMode::ThreeD => make_3d_sample(EVAL_SEED_BASE + i, views, res),
            SampleMode::Video => make_video_sample(EVAL_SEED_BASE + i, views, res),
        })
        .collect()
}

/// Outcome of one optimiser step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    /// Timestep of the first scene in the batch.
    pub t: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub mode: SampleMode,
}

/// Loss and gradient of one training scene, accumulated into `grads` with
/// weight `scale`.
#[allow(clippy::too_many_arguments)]
pub fn scene_loss_and_grad<R: Rng + ?Sized>(
    params: &ModelParams<f32>,
    sample: &Sample,
    cfg: &TrainConfig,
    scale: f32,
    grads: &mut [f32],
    rng: &mut R,
) -> Result<(f64, f64)> {
    let mc = &params.config;
    let views = sample.views();
    let vb = sample_view_batch(sample.seed, views, cfg.cfg_dropout, rng)?;
    let t = sample_t(&cfg.sampler, rng);
    let (mut patches, _, _) = patchify::<f32, f32>(&sample.images, mc.patch)?;
    let w = mc.tokens_per_view() * mc.patch_dim();
    let mut velocity = vec![0.0f32; patches.len()];
    let tf = t as f32;
    for v in 0..views {
        if vb.roles[v] != Role::Target {
            continue;
        }
        for i in v * w..(v + 1) * w {
            let eps: f32 = rng.sample(StandardNormal);
            let z = patches[i];
            velocity[i] = eps - z;
            patches[i] = (1.0 - tf) * z + tf * eps;
        }
    }
    let mut inputs = SceneInputs::new(mc, patches, sample.attrs()?, vb.roles.clone())?;
    inputs.hidden = vb.mask.hidden.clone();

    let compact = inputs.compact(mc);
    let keep: Vec<usize> = (0..views).filter(|&v| !inputs.hidden[v]).collect();
    let mut target = Vec::with_capacity(keep.len() * w);
    for &v in &keep {
        target.extend_from_slice(&velocity[v * w..(v + 1) * w]);
    }
    let (out, cache) = forward(params, &compact, tf, None)?;
    let mask = token_mask(&compact, mc.tokens_per_view());
    let (loss, mut dout) = masked_velocity_loss(&out, &target, &mask, mc.patch_dim())?;
    if !loss.is_finite() {
        return Ok((loss, t));
    }
    dout.iter_mut().for_each(|g| *g *= scale);
    backward(params, &compact, &cache, &dout, grads)?;
    Ok((loss, t))
}

/// The full mutable state of a run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub params: ModelParams<f32>,
    pub opt: AdamW,
    /// Steps completed.
    pub step: u64,
    pub data: DataSource,
    pub history: Vec<StepReport>,
}

impl Trainer {
    /// Fresh parameters initialised from the master seed.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = ModelParams::init(&cfg.model_config()?, cfg.seed)?;
        Self::with_params(cfg, params)
    }

    /// Starts from given parameters with a fresh optimiser and step 0.
    pub fn with_params(cfg: TrainConfig, params: ModelParams<f32>) -> Result<Self> {
        cfg.validate()?;
        let want = cfg.model_config()?;
        if params.config != want {
            return Err(Error::invalid(format!(
                "parameters were built for {:?}, run expects {want:?}",
                params.config
            )));
        }
        let opt = AdamW::new(adam_config(&cfg), params.len());
        Ok(Self {
            data: DataSource::from_config(&cfg)?,
            cfg,
            params,
            opt,
            step: 0,
            history: Vec::new(),
        })
    }

    /// Restores parameters, moments and the step counter.
    pub fn from_checkpoint(cfg: TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        let mut params = ModelParams::zeros(&ckpt.config)?;
        if ckpt.params.len() != params.len() {
            return Err(Error::Checkpoint("parameter count does not match its config".into()));
        }
        params.data = ckpt.params;
        let mut tr = Self::with_params(cfg, params)?;
        tr.step = ckpt.step;
        if let Some((m, v)) = ckpt.moments {
            tr.opt = AdamW::from_moments(adam_config(&tr.cfg), m, v, ckpt.step)?;
        }
        Ok(tr)
    }

    /// `<out>/latest.ckpt` when resuming is requested and it exists,
    /// otherwise a fresh run.
    pub fn start(cfg: TrainConfig) -> Result<Self> {
        if cfg.resume {
            if let Some(path) = cfg.out.as_ref().map(|d| d.join("latest.ckpt")).filter(|p| p.exists()) {
                return Self::from_checkpoint(cfg, Checkpoint::load(&path)?);
            }
        }
        Self::new(cfg)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.params.config.clone(),
            step: self.step,
            params: self.params.data.clone(),
            moments: Some((self.opt.m.clone(), self.opt.v.clone())),
        }
    }

    pub fn network(&self) -> Network<f32> {
        Network::new(self.params.clone())
    }

    fn step_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(self.step);
        rng
    }

    /// One optimiser step. A non-finite loss leaves the parameters
    /// untouched, dumps them to `<out>/nonfinite_step{N}.ckpt` when an output
    /// directory is configured, and returns [`Error::NonFiniteLoss`].
    pub fn train_step(&mut self) -> Result<StepReport> {
        let mut rng = self.step_rng();
        let mode = match self.cfg.mode {
            TrainMode::ThreeD => SampleMode::ThreeD,
            TrainMode::Video => SampleMode::Video,
            TrainMode::Mixed { video_ratio } => {
                if rng.random::<f64>() < video_ratio {
                    SampleMode::Video
                } else {
                    SampleMode::ThreeD
                }
            }
        };
        let mut grads = vec![0.0f32; self.params.len()];
        let scale = 1.0 / self.cfg.batch as f32;
        let mut loss = 0.0;
        let mut first_t = 0.0;
        for b in 0..self.cfg.batch {
            let sample = self.data.draw(mode, &mut rng)?;
            let (l, t) = scene_loss_and_grad(&self.params, &sample, &self.cfg, scale, &mut grads, &mut rng)?;
            if b == 0 {
                first_t = t;
            }
            loss += l / self.cfg.batch as f64;
        }
        if !loss.is_finite() {
            let dump = self.dump_state().ok().flatten();
            return Err(Error::NonFiniteLoss {
                step: self.step,
                loss,
                dump,
            });
        }
        let grad_norm = clip_grad_norm(&mut grads, self.cfg.grad_clip);
        let lr = learning_rate(self.step, self.cfg.steps, self.cfg.warmup, self.cfg.lr, self.cfg.min_lr_ratio);
        self.opt.update(&mut self.params.data, &grads, lr)?;
        let report = StepReport {
            step: self.step,
            loss,
            t: first_t,
            lr,
            grad_norm,
            mode,
        };
        self.step += 1;
        self.history.push(report);
        Ok(report)
    }

    fn dump_state(&self) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.cfg.out else { return Ok(None) };
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("nonfinite_step{}.ckpt", self.step));
        self.checkpoint().save(&path)?;
        Ok(Some(path))
    }

    /// Generation settings used by periodic evaluation.
    pub fn generate_options(&self) -> Result<GenerateOptions> {
        Ok(GenerateOptions {
            schedule: Schedule::build(self.cfg.schedule, self.cfg.sample_steps)?,
            cfg_scale: self.cfg.cfg_scale,
            autoregressive: None,
        })
    }

    /// Mean PSNR/SSIM on `samples` with `eval_refs` references.
    pub fn evaluate_on(&self, samples: &[Sample]) -> Result<EvalRow> {
        let opts = EvalOptions {
            targets: 2.min(self.cfg.views - self.cfg.eval_refs),
            generate: self.generate_options()?,
            seed: self.cfg.seed,
        };
        let rows = evaluate(&self.network(), samples, &[self.cfg.eval_refs], &opts)?;
        Ok(rows.into_iter().next().expect("one n_ref requested"))
    }

    /// Trains until `cfg.steps`, writing CSVs and checkpoints under `cfg.out`
    /// and calling `on_step` after every step.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepReport)) -> Result<()> {
        let out = self.cfg.out.clone();
        if let Some(dir) = &out {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("train.cfg"), self.cfg.to_text())?;
        }
        let mut metrics = out.as_ref().map(|d| CsvLog::open(&d.join("metrics.csv"), METRICS_CSV_HEADER)).transpose()?;
        let mut losses = out.as_ref().map(|d| CsvLog::open(&d.join("losses.csv"), LOSSES_CSV_HEADER)).transpose()?;
        let eval_mode = match self.cfg.mode {
            TrainMode::Video => SampleMode::Video,
            _ => SampleMode::ThreeD,
        };
        let held_out = if self.cfg.eval_every > 0 && self.cfg.eval_scenes > 0 {
            eval_samples(eval_mode, self.cfg.eval_scenes, self.cfg.views, self.cfg.res)?
        } else {
            Vec::new()
        };
        let mut meter = ThroughputMeter::new(1);
        let mut window_loss = (0.0, 0usize);
        while self.step < self.cfg.steps {
            let started = Instant::now();
            let rep = self.train_step()?;
            meter.record(self.cfg.batch, started.elapsed());
            window_loss.0 += rep.loss;
            window_loss.1 += 1;
            if let Some(log) = losses.as_mut() {
                log.row(&format!("{},{},{},{}", rep.step, rep.loss, rep.t, rep.lr))?;
            }
            on_step(&rep);
            let done = self.step;
            let last = done == self.cfg.steps;
            if !held_out.is_empty() && (done.is_multiple_of(self.cfg.eval_every) || last) {
                let row = self.evaluate_on(&held_out)?;
                let rate = meter.rate().unwrap_or(f64::NAN);
                if let Some(log) = metrics.as_mut() {
                    log.row(&format!(
                        "{done},{},{},{},{rate},{}",
                        window_loss.0 / window_loss.1 as f64,
                        row.psnr,
                        row.ssim,
                        rep.lr
                    ))?;
                }
                meter.reset_window();
                window_loss = (0.0, 0);
            }
            if let Some(dir) = &out {
                if self.cfg.checkpoint_every > 0 && done.is_multiple_of(self.cfg.checkpoint_every) {
                    self.checkpoint().save(&dir.join(format!("ckpt_{done}.ckpt")))?;
                }
                if last || (self.cfg.checkpoint_every > 0 && done.is_multiple_of(self.cfg.checkpoint_every)) {
                    self.checkpoint().save(&dir.join("latest.ckpt"))?;
                }
            }
        }
        Ok(())
    }
}

fn adam_config(cfg: &TrainConfig) -> AdamWConfig {
    AdamWConfig {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
        weight_decay: cfg.weight_decay,
    }
}

/// Append-only CSV writer that writes the header for new files.
struct CsvLog {
    file: fs::File,
}

impl CsvLog {
    fn open(path: &Path, header: &str) -> Result<Self> {
        let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
        let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(file, "{header}")?;
        }
        Ok(Self { file })
    }

    fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.file, "{line}")?;
        Ok(())
    }
}

/// Result of [`pretrain_then_finetune`].
#[derive(Debug, Clone)]
pub struct TwoStageRun {
    pub params: ModelParams<f32>,
    pub video_losses: Vec<f64>,
    pub three_d_losses: Vec<f64>,
}

/// Video pre-training followed by 3D training of the same network. The
/// parameters pass between stages through a serialised checkpoint; the
/// second stage starts a fresh optimiser.
pub fn pretrain_then_finetune(
    cfg_video: &TrainConfig,
    cfg_3d: &TrainConfig,
    mut on_step: impl FnMut(&str, &StepReport),
) -> Result<TwoStageRun> {
    if cfg_video.model_config()? != cfg_3d.model_config()? {
        return Err(Error::invalid("video and 3D stages must share the network configuration"));
    }
    if cfg_video.mode != TrainMode::Video || cfg_3d.mode != TrainMode::ThreeD {
        return Err(Error::invalid("stage modes must be video then 3d"));
    }
    let mut video = Trainer::new(cfg_video.clone())?;
    video.run(|r| on_step("video", r))?;
    let bytes = video.checkpoint().to_bytes()?;
    let restored = Checkpoint::from_bytes(&bytes)?;
    let mut params = ModelParams::zeros(&restored.config)?;
    params.data = restored.params;
    let mut second = Trainer::with_params(cfg_3d.clone(), params)?;
    second.run(|r| on_step("3d", r))?;
    Ok(TwoStageRun {
        params: second.params,
        video_losses: video.history.iter().map(|r| r.loss).collect(),
        three_d_losses: second.history.iter().map(|r| r.loss).collect(),
    })
}

/// Paired-run efficiency: the first step at which `pretrained` reaches the
/// final loss of `fresh`, and `fresh.len() / that step`. Losses are
/// smoothed with a trailing mean over `window` steps first.
pub fn efficiency_ratio(fresh: &[f64], pretrained: &[f64], window: usize) -> Option<(usize, f64)> {
    let smooth = |xs: &[f64]| -> Vec<f64> {
        let w = window.max(1);
        (0..xs.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect()
    };
    let f = smooth(fresh);
    let p = smooth(pretrained);
    let goal = *f.last()?;
    let hit = p.iter().position(|&x| x <= goal)? + 1;
    Some((hit, fresh.len() as f64 / hit as f64))
}
