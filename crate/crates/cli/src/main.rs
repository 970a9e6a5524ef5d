//! `kaleido`: dataset generation, training, rendering, evaluation, the
//! activation probe and sampler visualisation.
//!
//! Exit codes: 0 success, 1 error, 2 usage error, 3 training aborted on a
//! non-finite loss.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kaleido::evalkit::{probe_activations, ActivationStats};
use kaleido::flow::{density, generate, sample_t, GenerateOptions, SamplerSpec, Schedule, ScheduleKind};
use kaleido::geometry::PoseSet;
use kaleido::image::Image;
use kaleido::net::checkpoint::Checkpoint;
use kaleido::net::{patchify, ModelParams, Network, Role, SceneInputs, ViewAttr};
use kaleido::synth::{Dataset, DatasetMode, Sample};
use kaleido::trainer::{
    eval_csv, eval_samples, evaluate, parse_sampler_family, EvalOptions, TrainConfig, Trainer,
};
use kaleido::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EXIT_NONFINITE: u8 = 3;

#[derive(Parser)]
#[command(name = "kaleido", version, about = "Pose-conditioned rectified-flow view synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset into a directory of sample files.
    GenData(GenDataArgs),
    /// Train a model; writes checkpoints, metrics.csv and losses.csv.
    Train(TrainArgs),
    /// Synthesise target views from reference images and poses.
    Render(RenderArgs),
    /// Per-n_ref PSNR/SSIM table on a held-out dataset.
    Eval(EvalArgs),
    /// Per-layer activation magnitude statistics.
    Probe(ProbeArgs),
    /// Empirical and analytic timestep densities of a sampler.
    SamplerViz(SamplerVizArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// `3d` or `video`.
    #[arg(long, default_value = "3d")]
    mode: String,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 12)]
    views: usize,
    #[arg(long, default_value_t = 32)]
    res: usize,
    /// First scene seed; held-out sets conventionally start at 1000000.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (default: `$KALEIDO_CACHE/<mode>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also export every sample as PPM/PNG views plus `poses.txt`.
    #[arg(long)]
    export: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// `3d`, `video` or `mixed:<ratio>`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    registers: Option<usize>,
    /// `uniform`, `logit-normal`, `mode` or `mode:<scale>`.
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    shift: Option<f64>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    cfg_scale: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from `<out>/latest.ckpt`.
    #[arg(long)]
    resume: bool,
    /// Start from the weights of this checkpoint with a fresh optimiser at step 0.
    #[arg(long, conflicts_with = "resume")]
    init: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SamplingArgs {
    /// `linspace`, `trailing` or `linear-quadratic`.
    #[arg(long, default_value = "linear-quadratic")]
    schedule: String,
    /// Number of Euler steps.
    #[arg(long, default_value_t = 25)]
    sample_steps: usize,
    #[arg(long, default_value_t = 1.5)]
    cfg_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SamplingArgs {
    fn options(&self, autoregressive: Option<usize>) -> Result<GenerateOptions> {
        let kind: ScheduleKind = self.schedule.parse()?;
        Ok(GenerateOptions {
            schedule: Schedule::build(kind, self.sample_steps)?,
            cfg_scale: self.cfg_scale,
            autoregressive,
        })
    }
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of reference `*.ppm` images (sorted by name) and a
    /// `poses.txt` with one pose per image.
    #[arg(long)]
    refs: PathBuf,
    /// Use only the first N reference images.
    #[arg(long)]
    num_refs: Option<usize>,
    /// Target camera poses, one per line.
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Generate targets in chunks of this size, each conditioned on the
    /// previous chunks.
    #[arg(long)]
    autoregressive: Option<usize>,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory (default: `$KALEIDO_CACHE/eval`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated reference counts.
    #[arg(long, default_value = "1,2,3,5,10", value_delimiter = ',')]
    n_ref: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    targets: usize,
    /// Use only the first N scenes.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Args)]
struct ProbeArgs {
    /// Trained checkpoint; omitted means a fresh model from `--config`/`--seed`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    registers: Option<usize>,
    /// Held-out scenes to probe (statistics are merged by maximum).
    #[arg(long, default_value_t = 4)]
    scenes: usize,
    #[arg(long, default_value_t = 3)]
    refs: usize,
    #[arg(long, default_value_t = 0.5)]
    t: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SamplerVizArgs {
    #[arg(long, default_value = "mode:0.8")]
    sampler: String,
    #[arg(long, default_value_t = 3.0)]
    shift: f64,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long, default_value_t = 200_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cache_dir() -> PathBuf {
    std::env::var_os("KALEIDO_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("kaleido-cache"))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_network(path: &Path) -> Result<Network<f32>> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let mut params = ModelParams::zeros(&ckpt.config)?;
    if params.len() != ckpt.params.len() {
        bail!("checkpoint parameter count does not match its configuration");
    }
    params.data = ckpt.params;
    Ok(Network::new(params))
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mode: DatasetMode = a.mode.parse()?;
    let out = a.out.unwrap_or_else(|| cache_dir().join(a.mode.to_ascii_lowercase()));
    let ds = Dataset::generate(&out, mode, a.count, a.seed, a.views, a.res)?;
    if a.export {
        for i in 0..ds.len() {
            let s = ds.get(i)?;
            let dir = out.join(format!("export_{i:06}"));
            s.export_images(&dir, true)?;
            s.poses.write(&dir.join("poses.txt"))?;
        }
    }
    eprintln!("wrote {} samples to {}", ds.len(), out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let mut set = |k: &str, v: Option<String>| -> Result<()> {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
        Ok(())
    };
    set("seed", a.seed.map(|x| x.to_string()))?;
    set("steps", a.steps.map(|x| x.to_string()))?;
    set("mode", a.mode)?;
    set("window", a.window.map(|x| x.to_string()))?;
    set("registers", a.registers.map(|x| x.to_string()))?;
    set("sampler", a.sampler)?;
    set("shift", a.shift.map(|x| x.to_string()))?;
    set("schedule", a.schedule)?;
    set("cfg_scale", a.cfg_scale.map(|x| x.to_string()))?;
    set("out", a.out.map(|p| p.display().to_string()))?;
    if a.resume {
        set("resume", Some("true".into()))?;
    }
    for kv in &a.set {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if cfg.out.is_none() {
        cfg.out = Some(PathBuf::from("runs/latest"));
    }
    let mut trainer = match &a.init {
        Some(path) => {
            let mut ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            ckpt.step = 0;
            ckpt.moments = None;
            Trainer::from_checkpoint(cfg, ckpt)?
        }
        None => Trainer::start(cfg)?,
    };
    let total = trainer.cfg.steps;
    let first = trainer.step;
    trainer.run(|r| {
        if r.step == first || (r.step + 1) % 100 == 0 || r.step + 1 == total {
            eprintln!("step {:>6}/{total} loss {:.5} lr {:.2e}", r.step + 1, r.loss, r.lr);
        }
    })?;
    eprintln!(
        "finished at step {}; checkpoints in {}",
        trainer.step,
        trainer.cfg.out.as_ref().expect("set above").display()
    );
    Ok(())
}

fn read_refs(dir: &Path, limit: Option<usize>) -> Result<(Vec<Image<f32>>, PoseSet)> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    files.sort();
    let poses = PoseSet::read(&dir.join("poses.txt"))?;
    if poses.len() != files.len() {
        bail!(
            "{} has {} images but {} poses",
            dir.display(),
            files.len(),
            poses.len()
        );
    }
    let n = limit.unwrap_or(files.len()).min(files.len());
    let images = files[..n].iter().map(|p| Image::read_ppm(p)).collect::<kaleido::Result<Vec<_>>>()?;
    Ok((images, PoseSet::new(poses.poses[..n].to_vec())))
}

fn render(a: RenderArgs) -> Result<()> {
    let net = load_network(&a.checkpoint)?;
    let (refs, ref_poses) = read_refs(&a.refs, a.num_refs)?;
    let targets = PoseSet::read(&a.poses)?;
    if targets.is_empty() {
        return Err(Error::EmptyTargets.into());
    }
    let all = PoseSet::new(ref_poses.poses.iter().chain(&targets.poses).copied().collect()).normalize_translations()?;
    let attrs: Vec<ViewAttr> = all.poses.iter().map(|&p| ViewAttr::Pose(p)).collect();
    let (ref_attrs, tgt_attrs) = attrs.split_at(refs.len());
    let opts = a.sampling.options(a.autoregressive)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.sampling.seed);
    let images = generate(&net, &refs, ref_attrs, tgt_attrs, &opts, &mut rng)?;
    fs::create_dir_all(&a.out)?;
    for (k, img) in images.iter().enumerate() {
        img.write_ppm(&a.out.join(format!("target_{k:03}.ppm")))?;
        img.write_png(&a.out.join(format!("target_{k:03}.png")))?;
    }
    eprintln!("wrote {} images to {}", images.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let net = load_network(&a.checkpoint)?;
    let dir = a.data.clone().unwrap_or_else(|| cache_dir().join("eval"));
    let ds = Dataset::open(&dir)?;
    let n = a.limit.unwrap_or(ds.len()).min(ds.len());
    let samples = (0..n).map(|i| ds.get(i)).collect::<kaleido::Result<Vec<Sample>>>()?;
    let opts = EvalOptions {
        targets: a.targets,
        generate: a.sampling.options(None)?,
        seed: a.sampling.seed,
    };
    let rows = evaluate(&net, &samples, &a.n_ref, &opts)?;
    write_output(a.out.as_deref(), &eval_csv(&rows))
}

fn probe(a: ProbeArgs) -> Result<()> {
    let params = match &a.checkpoint {
        Some(p) => load_network(p)?.params,
        None => {
            let mut cfg = match &a.config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            if let Some(w) = a.window {
                cfg.set("window", &w.to_string())?;
            }
            if let Some(r) = a.registers {
                cfg.set("registers", &r.to_string())?;
            }
            ModelParams::init(&cfg.model_config()?, a.seed)?
        }
    };
    let mc = params.config.clone();
    let (res, _) = mc.image_size();
    let views = (a.refs + 2).max(2);
    let samples = eval_samples(kaleido::synth::SampleMode::ThreeD, a.scenes.max(1), views, res)?;
    let mut stats = ActivationStats { layers: Vec::new() };
    for s in &samples {
        let (patches, _, _) = patchify::<f32, f32>(&s.images, mc.patch)?;
        let roles = (0..views).map(|v| if v < a.refs { Role::Reference } else { Role::Target }).collect();
        let inputs = SceneInputs::new(&mc, patches, s.attrs()?, roles)?;
        stats.max_merge(&probe_activations(&params, &inputs, a.t as f32)?);
    }
    write_output(a.out.as_deref(), &stats.to_csv())
}

fn sampler_viz(a: SamplerVizArgs) -> Result<()> {
    if a.bins == 0 || a.samples == 0 {
        bail!("bins and samples must be positive");
    }
    let spec = SamplerSpec::new(parse_sampler_family(&a.sampler)?, a.shift)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut hist = vec![0usize; a.bins];
    for _ in 0..a.samples {
        let t = sample_t(&spec, &mut rng);
        hist[((t * a.bins as f64) as usize).min(a.bins - 1)] += 1;
    }
    let mut csv = String::from("t,density,empirical\n");
    let width = 1.0 / a.bins as f64;
    for (b, &c) in hist.iter().enumerate() {
        let t = (b as f64 + 0.5) * width;
        writeln!(csv, "{t},{},{}", density(&spec, t), c as f64 / (a.samples as f64 * width))?;
    }
    write_output(a.out.as_deref(), &csv)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::Probe(a) => probe(a),
        Command::SamplerViz(a) => sampler_viz(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if matches!(e.downcast_ref::<Error>(), Some(Error::NonFiniteLoss { .. })) {
                ExitCode::from(EXIT_NONFINITE)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
