//! One test per acceptance criterion. Each prints a `criterion N: PASS|FAIL`
//! line straight to stderr (visible even when output is captured) and then
//! asserts, so an unmet criterion fails the suite.
//!
//! Criteria 9 and 10 score the long toy runs whose logs live under
//! `artifacts/` (produced by `scripts/toy_runs.sh`).

#![allow(clippy::needless_range_loop)]

mod common;

use std::f64::consts::TAU;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use kaleido::encoding::{gta_attention, AttrExtra, GeomAttr, LayoutKind, RepLayout};
use kaleido::flow::{
    generate, interpolate, masked_velocity_loss, modulate, modulate_inverse, sample_t, velocity_target,
    GenerateOptions, OracleVelocity, SamplerFamily, SamplerSpec, Schedule, ScheduleKind,
};
use kaleido::geometry::CameraPose;
use kaleido::image::Image;
use kaleido::net::attention::{attention_forward, AttnContext, AttnKind, AttnWeights, TokenReps};
use kaleido::net::gradcheck::grad_check;
use kaleido::net::{embed_unembed_path, patchify, predict, ModelConfig, ModelParams, Role, ViewAttr};
use kaleido::trainer::{efficiency_ratio, Trainer, TrainConfig};
use kaleido::views::sample_num_refs;
use rand::Rng;

fn report(n: usize, ok: bool, detail: &str) {
    let line = format!("criterion {n}: {} ({detail})\n", if ok { "PASS" } else { "FAIL" });
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(ok, "criterion {n} failed: {detail}");
}

fn random_geom_attr<R: Rng>(rng: &mut R) -> GeomAttr {
    GeomAttr {
        theta_h: rng.random::<f64>() * TAU,
        theta_w: rng.random::<f64>() * TAU,
        extra: AttrExtra::Pose(CameraPose::random(rng, 2.0)),
    }
}

fn max_nested_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| max_abs_diff(x, y)).fold(0.0, f64::max)
}

#[test]
fn c01_relative_invariance() {
    let started = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for set in 0..100 {
        let head_dim = [8, 16, 24][set % 3];
        let layout = RepLayout::new(head_dim, LayoutKind::TemporalOr3D, 8, 8).unwrap();
        let n = r.random_range(2..12);
        let vt = set % 4 != 3;
        let q: Vec<Vec<f64>> = (0..n).map(|_| gaussian(head_dim, &mut r)).collect();
        let k: Vec<Vec<f64>> = (0..n).map(|_| gaussian(head_dim, &mut r)).collect();
        let v: Vec<Vec<f64>> = (0..n).map(|_| gaussian(head_dim, &mut r)).collect();
        let attrs: Vec<GeomAttr> = (0..n).map(|_| random_geom_attr(&mut r)).collect();
        let g0 = random_geom_attr(&mut r);
        let moved: Vec<GeomAttr> = attrs.iter().map(|a| g0.compose(a).unwrap()).collect();
        let (s0, o0) = gta_attention(&q, &k, &v, &attrs, &layout, vt).unwrap();
        let (s1, o1) = gta_attention(&q, &k, &v, &moved, &layout, vt).unwrap();
        worst = worst.max(max_nested_diff(&s0, &s1)).max(max_nested_diff(&o0, &o1));
    }

    // The same property through the whole network: a common rigid motion of
    // every camera leaves the prediction unchanged.
    let cfg = ModelConfig::tiny(3);
    let params = ModelParams::<f64>::init_dense(&cfg, 7, 1.0).unwrap();
    let mut net_worst: f64 = 0.0;
    for case in 0..5 {
        let inputs = random_inputs::<f64, _>(&cfg, 4, 1 + case % 3, false, &mut r);
        let g = CameraPose::random(&mut r, 2.0);
        let mut moved = inputs.clone();
        for a in &mut moved.attrs {
            if let ViewAttr::Pose(p) = a {
                *p = g.compose(p);
            }
        }
        let a = predict(&params, &inputs, 0.4).unwrap();
        let b = predict(&params, &moved, 0.4).unwrap();
        net_worst = net_worst.max(max_abs_diff(&a, &b));
    }
    let secs = started.elapsed().as_secs_f64();
    report(
        1,
        worst <= 1e-6 && net_worst <= 1e-6 && secs < 10.0,
        &format!("max attention diff {worst:.2e}, network diff {net_worst:.2e}, {secs:.2}s"),
    );
}

/// Dense cross-view attention written out directly: every visible query
/// sees every allowed key of every view plus the registers.
#[allow(clippy::too_many_arguments)]
fn dense_attention(
    cfg: &ModelConfig,
    views: usize,
    attrs: &[ViewAttr],
    roles: &[Role],
    hidden: &[bool],
    w: &AttnWeights<'_, f64>,
    u: &[f64],
) -> Vec<f64> {
    use kaleido::encoding::{rep_matrix, Apply};
    let layout = RepLayout::new(cfg.head_dim(), LayoutKind::TemporalOr3D, cfg.grid_h, cfg.grid_w).unwrap();
    let s = cfg.tokens_per_view();
    let t = views * s;
    let (dm, d, hq, hkv, nr) = (cfg.hidden, cfg.head_dim(), cfg.q_heads, cfg.kv_heads, cfg.registers);
    let reps: Vec<_> = (0..t)
        .map(|tok| {
            let (v, p) = (tok / s, tok % s);
            rep_matrix(&attrs[v].token_attr(p / cfg.grid_w, p % cfg.grid_w, cfg.grid_h, cfg.grid_w).unwrap(), &layout).unwrap()
        })
        .collect();
    let proj = |m: &[f64], rows: usize, tok: usize| -> Vec<f64> {
        (0..rows).map(|o| (0..dm).map(|i| m[o * dm + i] * u[tok * dm + i]).sum()).collect()
    };
    let mut o = vec![0.0; t * hq * d];
    for qt in 0..t {
        let qv = qt / s;
        if hidden[qv] {
            continue;
        }
        let q_all = proj(w.wq, hq * d, qt);
        for h in 0..hq {
            let g = h / (hq / hkv);
            let q_raw = q_all[h * d..(h + 1) * d].to_vec();
            let mut q = q_raw.clone();
            reps[qt].apply(Apply::InverseTranspose, &mut q);
            let mut scores = Vec::new();
            let mut values = Vec::new();
            for kt in 0..t {
                let kv = kt / s;
                if hidden[kv] || !(roles[qv] == Role::Target || roles[kv] == Role::Reference) {
                    continue;
                }
                let mut k = proj(w.wk, hkv * d, kt)[g * d..(g + 1) * d].to_vec();
                let mut v = proj(w.wv, hkv * d, kt)[g * d..(g + 1) * d].to_vec();
                reps[kt].apply(Apply::Forward, &mut k);
                if cfg.value_transform {
                    reps[kt].apply(Apply::Forward, &mut v);
                }
                scores.push(q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt());
                values.push(v);
            }
            let n_keys = scores.len();
            for r in 0..nr {
                let rk = &w.reg_k[r * hkv * d + g * d..r * hkv * d + (g + 1) * d];
                scores.push(q_raw.iter().zip(rk).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt());
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut acc = vec![0.0; d];
            for (j, v) in values.iter().enumerate() {
                for c in 0..d {
                    acc[c] += e[j] / z * v[c];
                }
            }
            if cfg.value_transform {
                reps[qt].apply(Apply::Inverse, &mut acc);
            }
            for r in 0..nr {
                let rv = &w.reg_v[r * hkv * d + g * d..r * hkv * d + (g + 1) * d];
                for c in 0..d {
                    acc[c] += e[n_keys + r] / z * rv[c];
                }
            }
            o[qt * hq * d + h * d..qt * hq * d + (h + 1) * d].copy_from_slice(&acc);
        }
    }
    let qd = hq * d;
    let mut y = vec![0.0; t * dm];
    for tok in 0..t {
        for out in 0..dm {
            y[tok * dm + out] = (0..qd).map(|i| w.wo[out * qd + i] * o[tok * qd + i]).sum();
        }
    }
    y
}

#[test]
fn c02_window_equals_dense() {
    let mut r = rng(202);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for grid in 1..=8usize {
        for views in [1usize, 2, 4, 6] {
            let mut cfg = ModelConfig::tiny(grid);
            cfg.hidden = 32;
            cfg.q_heads = 2;
            cfg.kv_heads = if cases % 2 == 0 { 1 } else { 2 };
            cfg.registers = cases % 3;
            cfg.value_transform = cases % 4 != 1;
            let window = 2 * grid;
            cfg.window = window;
            let video = cases % 2 == 1;
            let attrs = random_attrs(views, video, &mut r);
            let roles: Vec<Role> = (0..views).map(|v| if v % 2 == 0 { Role::Reference } else { Role::Target }).collect();
            let mut hidden = vec![false; views];
            if views > 2 {
                hidden[r.random_range(0..views)] = true;
            }
            let (d, dm) = (cfg.head_dim(), cfg.hidden);
            let (qd, kvd) = (cfg.q_heads * d, cfg.kv_heads * d);
            let wq = gaussian(qd * dm, &mut r).iter().map(|x| x * 0.3).collect::<Vec<_>>();
            let wk = gaussian(kvd * dm, &mut r).iter().map(|x| x * 0.3).collect::<Vec<_>>();
            let wv = gaussian(kvd * dm, &mut r);
            let wo = gaussian(dm * qd, &mut r);
            let reg_k = gaussian(cfg.registers * kvd, &mut r);
            let reg_v = gaussian(cfg.registers * kvd, &mut r);
            let weights = AttnWeights {
                wq: &wq,
                wk: &wk,
                wv: &wv,
                wo: &wo,
                reg_k: &reg_k,
                reg_v: &reg_v,
            };
            let u = gaussian(views * cfg.tokens_per_view() * dm, &mut r);
            let reps = TokenReps::<f64>::temporal(&cfg, &attrs).unwrap();
            let ctx = AttnContext {
                kind: AttnKind::Temporal { window },
                views,
                grid_h: grid,
                grid_w: grid,
                hidden_dim: dm,
                q_heads: cfg.q_heads,
                kv_heads: cfg.kv_heads,
                head_dim: d,
                registers: cfg.registers,
                value_transform: cfg.value_transform,
                reps: &reps,
                roles: &roles,
                hidden: &hidden,
            };
            let (y, _) = attention_forward(&ctx, &weights, &u);
            let dense = dense_attention(&cfg, views, &attrs, &roles, &hidden, &weights, &u);
            worst = worst.max(max_abs_diff(&y, &dense));
            cases += 1;
        }
    }
    report(2, worst <= 1e-6, &format!("{cases} cases up to 8×8 and V=6, max diff {worst:.2e}"));
}

#[test]
fn c03_mask_equals_remove() {
    let mut r = rng(303);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let mut cfg = ModelConfig::tiny(2 + case % 3);
        cfg.registers = case % 3;
        cfg.window = 1 + case % 3;
        cfg.value_transform = case % 5 != 0;
        let params = ModelParams::<f64>::init_dense(&cfg, case as u64, 1.0).unwrap();
        let views = r.random_range(3..7);
        let refs = r.random_range(2..views);
        let mut inputs = random_inputs::<f64, _>(&cfg, views, refs, case % 2 == 1, &mut r);
        let drop = r.random_range(0..refs);
        inputs.hidden[drop] = true;
        let t = 0.1 + 0.8 * r.random::<f64>();
        let full_t = predict(&params, &inputs, t).unwrap();
        let removed = inputs.compact(&cfg);
        let small = predict(&params, &removed, t).unwrap();
        let w = cfg.tokens_per_view() * cfg.patch_dim();
        let kept: Vec<usize> = (0..views).filter(|&v| v != drop).collect();
        for (k, &v) in kept.iter().enumerate() {
            worst = worst.max(max_abs_diff(&full_t[v * w..(v + 1) * w], &small[k * w..(k + 1) * w]));
        }
    }
    report(3, worst <= 1e-6, &format!("50 cases, max diff {worst:.2e}"));
}

#[test]
fn c04_sampler_distribution() {
    let mut r = rng(404);
    let n = 1_000_000;
    let mut worst: f64 = 0.0;
    for sigma in [1.0, 3.0, 5.0] {
        let spec = SamplerSpec::new(SamplerFamily::Uniform, sigma).unwrap();
        let mut xs: Vec<f64> = (0..n).map(|_| sample_t(&spec, &mut r)).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let cdf = modulate_inverse(x, sigma).unwrap();
            ks = ks.max((cdf - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - cdf).abs());
        }
        worst = worst.max(ks);
    }
    let m = modulate(0.5, 3.0).unwrap();
    report(4, worst < 0.01 && m == 0.75, &format!("max KS {worst:.5}, modulate(0.5, 3) = {m}"));
}

#[test]
fn c05_exponential_view_sampler() {
    let mut r = rng(505);
    let draws = 100_000;
    let mut counts = [0usize; 12];
    for _ in 0..draws {
        counts[sample_num_refs(12, &mut r).unwrap()] += 1;
    }
    let ratios: Vec<f64> = (1..=9).map(|n| counts[n + 1] as f64 / counts[n] as f64).collect();
    let ok = ratios.iter().all(|x| (0.45..=0.55).contains(x));
    let shown: Vec<String> = ratios.iter().map(|x| format!("{x:.3}")).collect();
    report(5, ok, &format!("ratios n=1..9: [{}]", shown.join(", ")));
}

#[test]
fn c06_gradient_check() {
    let started = Instant::now();
    let cfg = gradcheck_config();
    assert_eq!((cfg.layers, cfg.hidden, cfg.window, cfg.registers), (2, 64, 2, 1));
    let params = ModelParams::<f64>::init_dense(&cfg, 61, 0.8).unwrap();
    let mut r = rng(6);
    let mut inputs = random_inputs::<f64, _>(&cfg, 4, 2, false, &mut r);
    inputs.hidden[1] = true;
    let target = gaussian(inputs.patches.len(), &mut r);
    let rep = grad_check(&params, &inputs, 0.42, &target, 400, 1e-4, 17).unwrap();
    let secs = started.elapsed().as_secs_f64();
    report(
        6,
        rep.max_relative_error < 1e-4 && secs < 120.0,
        &format!("{} parameters, max relative error {:.2e}, {secs:.1}s", rep.checked, rep.max_relative_error),
    );
}

#[test]
fn c07_oracle_generation_is_exact() {
    let mut cfg = ModelConfig::tiny(4);
    cfg.patch = 2;
    let mut r = rng(707);
    let views = 5;
    let images: Vec<Image<f64>> = (0..views)
        .map(|_| {
            let data = (0..8 * 8 * 3).map(|_| r.random_range(-1.0..1.0)).collect();
            Image::from_vec(8, 8, 3, data).unwrap()
        })
        .collect();
    let attrs = random_attrs(views, false, &mut r);
    let targets = (2..views)
        .map(|v| (attrs[v], patchify::<f64, f64>(&images[v..v + 1], 2).unwrap().0))
        .collect();
    let oracle = OracleVelocity { config: cfg, targets };
    let mut worst: f64 = 0.0;
    for kind in [ScheduleKind::Linspace, ScheduleKind::Trailing, ScheduleKind::LinearQuadratic] {
        for steps in [2, 7, 25, 50] {
            for (cfg_scale, ar) in [(1.0, None), (1.5, None), (3.0, Some(1))] {
                let opts = GenerateOptions {
                    schedule: Schedule::build(kind, steps).unwrap(),
                    cfg_scale,
                    autoregressive: ar,
                };
                let out = generate(&oracle, &images[..2], &attrs[..2], &attrs[2..], &opts, &mut r).unwrap();
                for (g, truth) in out.iter().zip(&images[2..]) {
                    worst = worst.max(max_abs_diff(&g.data, &truth.data));
                }
            }
        }
    }
    let z = gaussian(64, &mut r);
    let eps = gaussian(64, &mut r);
    let at0 = interpolate(&z, &eps, 0.0).unwrap();
    let at1 = interpolate(&z, &eps, 1.0).unwrap();
    let v = velocity_target(&z, &eps).unwrap();
    let endpoints = at0 == z && at1 == eps && v.iter().zip(&z).zip(&eps).all(|((v, z), e)| *v == e - z);
    report(7, worst <= 1e-9 && endpoints, &format!("max error {worst:.2e} over 3 schedules, endpoints exact: {endpoints}"));
}

#[test]
fn c08_flow_model_identities() {
    let mut bit_exact = true;
    for (grid, video) in [(2, false), (3, true), (4, false)] {
        let cfg = ModelConfig::tiny(grid);
        let params = ModelParams::<f64>::init(&cfg, grid as u64).unwrap();
        let inputs = random_inputs::<f64, _>(&cfg, 4, 2, video, &mut rng(grid as u64));
        for t in [0.0, 0.3, 0.999] {
            bit_exact &= predict(&params, &inputs, t).unwrap() == embed_unembed_path(&params, &inputs).unwrap();
        }
        let params32 = ModelParams::<f32>::init(&cfg, grid as u64).unwrap();
        let inputs32 = random_inputs::<f32, _>(&cfg, 4, 2, video, &mut rng(grid as u64));
        bit_exact &= predict(&params32, &inputs32, 0.5).unwrap() == embed_unembed_path(&params32, &inputs32).unwrap();
    }

    // Loss masks out reference tokens: any prediction there changes nothing.
    let mut r = rng(808);
    let width = 12;
    let views = 5;
    let roles = [Role::Reference, Role::Target, Role::Reference, Role::Target, Role::Target];
    let mask: Vec<bool> = roles.iter().map(|&x| x == Role::Target).collect();
    let tokens_per_view = 4;
    let token_mask: Vec<bool> = mask.iter().flat_map(|&m| std::iter::repeat_n(m, tokens_per_view)).collect();
    let n = views * tokens_per_view * width;
    let pred = gaussian(n, &mut r);
    let target = gaussian(n, &mut r);
    let (loss, grad) = masked_velocity_loss(&pred, &target, &token_mask, width).unwrap();
    let mut other = pred.clone();
    for (tok, m) in token_mask.iter().enumerate() {
        if !m {
            other[tok * width..(tok + 1) * width].iter_mut().for_each(|x| *x += 100.0);
        }
    }
    let (loss2, _) = masked_velocity_loss(&other, &target, &token_mask, width).unwrap();
    let ref_grad_zero = token_mask
        .iter()
        .enumerate()
        .filter(|(_, m)| !**m)
        .all(|(tok, _)| grad[tok * width..(tok + 1) * width].iter().all(|&g| g == 0.0));
    let ok = bit_exact && loss == loss2 && ref_grad_zero;
    report(
        8,
        ok,
        &format!(
            "AdaLN-Zero bit-exact: {bit_exact}, loss unchanged by reference predictions: {}, reference grads zero: {ref_grad_zero}",
            loss == loss2
        ),
    );
}

fn artifacts() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../artifacts")
}

fn read_csv(path: &Path) -> Option<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).ok()?;
    let mut lines = text.lines();
    let header = lines.next()?.split(',').map(str::to_owned).collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|x| x.trim().parse::<f64>().unwrap_or(f64::NAN)).collect())
        .collect();
    Some((header, rows))
}

fn column(header: &[String], rows: &[Vec<f64>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("column {name} missing"));
    rows.iter().map(|r| r[i]).collect()
}

#[test]
fn c09_toy_training_beats_baseline() {
    let path = artifacts().join("toy3d/eval.csv");
    let Some((header, rows)) = read_csv(&path) else {
        report(9, false, &format!("{} missing; run scripts/toy_runs.sh", path.display()));
        return;
    };
    let n_ref = column(&header, &rows, "n_ref");
    let psnr = column(&header, &rows, "psnr");
    let base = column(&header, &rows, "baseline_psnr");
    let scenes = column(&header, &rows, "scenes");
    let at = |k: f64| n_ref.iter().position(|&x| x == k);
    let (Some(i1), Some(i3), Some(i5)) = (at(1.0), at(3.0), at(5.0)) else {
        report(9, false, "eval.csv lacks rows for n_ref 1, 3 and 5");
        return;
    };
    let margin = psnr[i5] - base[i5];
    let monotone = psnr[i1] <= psnr[i3] && psnr[i3] <= psnr[i5];
    let ok = scenes[i5] >= 50.0 && margin >= 2.0 && monotone;
    report(
        9,
        ok,
        &format!(
            "{} scenes; PSNR n_ref 1/3/5 = {:.2}/{:.2}/{:.2} dB, baseline at 5 = {:.2} dB, margin {margin:.2} dB",
            scenes[i5], psnr[i1], psnr[i3], psnr[i5], base[i5]
        ),
    );
}

#[test]
fn c10_video_pretraining_efficiency() {
    let fresh = read_csv(&artifacts().join("toy3d/losses.csv"));
    let tuned = read_csv(&artifacts().join("pretrain/finetune_losses.csv"));
    let video = read_csv(&artifacts().join("pretrain/video_losses.csv"));
    let (Some((fh, fr)), Some((th, tr)), Some((vh, vr))) = (fresh, tuned, video) else {
        report(10, false, "paired-run losses missing; run scripts/toy_runs.sh");
        return;
    };
    let fresh = column(&fh, &fr, "loss");
    let tuned = column(&th, &tr, "loss");
    let video_steps = column(&vh, &vr, "loss").len();
    let complete = fresh.len() == 20_000 && tuned.len() == 10_000 && video_steps == 10_000;
    let detail = match efficiency_ratio(&fresh, &tuned, 500) {
        Some((step, ratio)) => format!(
            "pre-trained 3D stage reaches the fresh final loss at step {step}; ratio {ratio:.2}× (reported, not asserted)"
        ),
        None => "pre-trained 3D stage never reaches the fresh final loss within 10k steps (reported, not asserted)".into(),
    };
    report(10, complete, &format!("runs {}/{video_steps}+{}; {detail}", fresh.len(), tuned.len()));
}

fn determinism_run(dir: &Path) -> (Vec<u8>, Vec<u8>) {
    let mut cfg = TrainConfig::default();
    for (k, v) in [
        ("steps", "4"),
        ("views", "4"),
        ("res", "8"),
        ("layers", "1"),
        ("hidden", "32"),
        ("q_heads", "2"),
        ("kv_heads", "1"),
        ("scenes", "3"),
        ("eval_every", "0"),
        ("eval_refs", "2"),
        ("checkpoint_every", "2"),
        ("seed", "11"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.out = Some(dir.to_path_buf());
    let mut tr = Trainer::new(cfg).unwrap();
    tr.run(|_| {}).unwrap();
    let ckpt = std::fs::read(dir.join("ckpt_4.ckpt")).unwrap();
    let sample = kaleido::synth::make_3d_sample(kaleido::trainer::EVAL_SEED_BASE, 4, 8).unwrap();
    let attrs = sample.attrs().unwrap();
    let opts = GenerateOptions {
        schedule: Schedule::build(ScheduleKind::LinearQuadratic, 6).unwrap(),
        ..GenerateOptions::default()
    };
    let mut r = rng(5);
    let out = generate(&tr.network(), &sample.images[..2], &attrs[..2], &attrs[2..], &opts, &mut r).unwrap();
    let ppm = dir.join("render.ppm");
    out[0].write_ppm(&ppm).unwrap();
    (ckpt, std::fs::read(ppm).unwrap())
}

#[test]
fn c11_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ca, pa) = determinism_run(a.path());
    let (cb, pb) = determinism_run(b.path());
    report(
        11,
        ca == cb && pa == pb,
        &format!("checkpoints identical: {} ({} bytes), PPMs identical: {}", ca == cb, ca.len(), pa == pb),
    );
}
