//! Held-out evaluation: generate the last views of each scene from its first
//! `n_ref` views and score them against the renders.
//!
//! With `V` views per scene and `T` targets, targets are views `V−T..V` and
//! the references are views `0..n_ref`, so every `n_ref` is scored on the
//! same targets with the same initial noise. The baseline copies the
//! reference whose camera centre (or frame index) is nearest each target.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::evalkit::{psnr, ssim};
use crate::flow::{generate, GenerateOptions, VelocityModel};
use crate::geometry::{norm3, sub3};
use crate::image::Image;
use crate::net::ViewAttr;
use crate::synth::Sample;
use crate::{Error, Result};

pub const EVAL_CSV_HEADER: &str = "n_ref,psnr,ssim,baseline_psnr,baseline_ssim,scenes";

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub targets: usize,
    pub generate: GenerateOptions,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            targets: 2,
            generate: GenerateOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub n_ref: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
    pub scenes: usize,
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from(EVAL_CSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.n_ref, r.psnr, r.ssim, r.baseline_psnr, r.baseline_ssim, r.scenes
        )
        .expect("writing to a String");
    }
    s
}

/// Index into `refs` of the reference nearest to `target`.
pub fn nearest_reference(refs: &[ViewAttr], target: &ViewAttr) -> Result<usize> {
    let dist = |a: &ViewAttr| -> Result<f64> {
        match (a, target) {
            (ViewAttr::Pose(p), ViewAttr::Pose(q)) => Ok(norm3(&sub3(&p.translation(), &q.translation()))),
            (ViewAttr::Frame { index: i, .. }, ViewAttr::Frame { index: j, .. }) => Ok((*i as f64 - *j as f64).abs()),
            _ => Err(Error::shape("references and target mix pose and frame attributes")),
        }
    };
    let mut best = (0, f64::INFINITY);
    for (k, r) in refs.iter().enumerate() {
        let d = dist(r)?;
        if d < best.1 {
            best = (k, d);
        }
    }
    if refs.is_empty() {
        return Err(Error::invalid("no references"));
    }
    Ok(best.0)
}

/// Per-`n_ref` mean PSNR/SSIM of generated targets and of the baseline.
pub fn evaluate<M: VelocityModel<f32> + ?Sized>(
    model: &M,
    samples: &[Sample],
    n_refs: &[usize],
    opts: &EvalOptions,
) -> Result<Vec<EvalRow>> {
    if samples.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    if opts.targets == 0 {
        return Err(Error::EmptyTargets);
    }
    let mut rows = Vec::with_capacity(n_refs.len());
    for &n_ref in n_refs {
        let mut acc = [0.0f64; 4];
        let mut count = 0usize;
        for (si, s) in samples.iter().enumerate() {
            let v = s.views();
            if n_ref == 0 || n_ref + opts.targets > v {
                return Err(Error::invalid(format!(
                    "n_ref {n_ref} with {} targets needs more than {v} views",
                    opts.targets
                )));
            }
            let ref_idx: Vec<usize> = (0..n_ref).collect();
            let tgt_idx: Vec<usize> = (v - opts.targets..v).collect();
            let all: Vec<usize> = ref_idx.iter().chain(&tgt_idx).copied().collect();
            let attrs = s.attrs_of(&all)?;
            let (ref_attrs, tgt_attrs) = attrs.split_at(n_ref);
            let refs: Vec<Image<f32>> = ref_idx.iter().map(|&i| s.images[i].clone()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(si as u64);
            let generated = generate(model, &refs, ref_attrs, tgt_attrs, &opts.generate, &mut rng)?;
            for (k, (&ti, img)) in tgt_idx.iter().zip(&generated).enumerate() {
                let truth = &s.images[ti];
                let near = &refs[nearest_reference(ref_attrs, &tgt_attrs[k])?];
                acc[0] += psnr(img, truth)?;
                acc[1] += ssim(img, truth)?;
                acc[2] += psnr(near, truth)?;
                acc[3] += ssim(near, truth)?;
                count += 1;
            }
        }
        let n = count as f64;
        rows.push(EvalRow {
            n_ref,
            psnr: acc[0] / n,
            ssim: acc[1] / n,
            baseline_psnr: acc[2] / n,
            baseline_ssim: acc[3] / n,
            scenes: samples.len(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::OracleVelocity;
    use crate::net::{patchify, ModelConfig};
    use crate::synth::make_3d_sample;

    #[test]
    fn oracle_model_scores_perfectly() {
        let s = make_3d_sample(2, 5, 16).unwrap();
        let mut cfg = ModelConfig::tiny(8);
        cfg.patch = 2;
        let attrs = s.attrs().unwrap();
        let targets = (3..5)
            .map(|v| (attrs[v], patchify::<f32, f32>(&s.images[v..v + 1], 2).unwrap().0))
            .collect();
        let oracle = OracleVelocity { config: cfg, targets };
        let rows = evaluate(&oracle, std::slice::from_ref(&s), &[1, 3], &EvalOptions::default()).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.psnr > 60.0, "{r:?}");
            assert!(r.baseline_psnr < r.psnr);
        }
        assert_eq!(eval_csv(&rows).lines().count(), 3);
        assert!(evaluate(&oracle, &[], &[1], &EvalOptions::default()).is_err());
    }

    #[test]
    fn nearest_reference_by_frame() {
        let refs: Vec<ViewAttr> = [0, 4, 9].iter().map(|&i| ViewAttr::Frame { index: i, count: 12 }).collect();
        assert_eq!(nearest_reference(&refs, &ViewAttr::Frame { index: 10, count: 12 }).unwrap(), 2);
        assert_eq!(nearest_reference(&refs, &ViewAttr::Frame { index: 3, count: 12 }).unwrap(), 1);
    }
}
