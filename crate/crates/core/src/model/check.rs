use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{loss_and_grad, FusionConfig, FusionParams};
use crate::alignment::AlignedSample;
use crate::error::Result;
use crate::label::Label;
use crate::numerics::{grad_check, GradCheckReport, ParamVector, Tensor2};

pub(crate) fn rand_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor2 {
    Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape matches data")
}

/// A random padded sample with features in [-1, 1]. Each stream keeps a
/// random valid prefix with occasional holes; the first row is always valid.
pub fn random_sample(rng: &mut impl Rng, d: usize, max_len: usize) -> AlignedSample {
    let n_a = rng.random_range(1..=max_len);
    let n_t = rng.random_range(1..=max_len);
    let mut audio = rand_matrix(rng, max_len, d);
    let mut text = rand_matrix(rng, max_len, d);
    let mut mask_audio: Vec<bool> = (0..max_len).map(|i| i < n_a && rng.random_bool(0.8)).collect();
    let mut mask_text: Vec<bool> = (0..max_len).map(|i| i < n_t && rng.random_bool(0.8)).collect();
    mask_audio[0] = true;
    mask_text[0] = true;
    for i in 0..max_len {
        if !mask_audio[i] {
            audio.row_mut(i).fill(0.0);
        }
        if !mask_text[i] {
            text.row_mut(i).fill(0.0);
        }
    }
    let label = if rng.random_bool(0.5) { Label::Ad } else { Label::Cn };
    AlignedSample { audio, text, mask_audio, mask_text, label, speaker_id: "s".into() }
}

/// Finite-difference check of the analytic gradient on a random sample and
/// random initial parameters drawn from `seed`.
pub fn gradient_check(cfg: &FusionConfig, seed: u64, tol: f64) -> Result<GradCheckReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = random_sample(&mut rng, cfg.hidden_dim, cfg.max_len);
    let params = FusionParams::init(cfg, seed);
    let f = |pv: &ParamVector| {
        FusionParams::load(pv, cfg)
            .and_then(|p| loss_and_grad(&sample, &p, cfg))
            .unwrap_or_else(|_| (f64::NAN, ParamVector::zeros(pv.len())))
    };
    Ok(grad_check(f, &params.flatten(cfg), tol))
}
