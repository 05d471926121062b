use super::{FusionConfig, FusionParams, Modality};
use crate::alignment::AlignedSample;
use crate::error::{Error, Result};
use crate::numerics::ops::{linear, sigmoid, softmax};
use crate::numerics::Tensor2;

#[derive(Debug, Clone)]
pub(crate) struct AttnTrace {
    pub q: Tensor2,
    pub k: Tensor2,
    pub v: Tensor2,
    /// Per head, `n_query × n_key`.
    pub probs: Vec<Tensor2>,
    pub concat: Tensor2,
    pub out: Tensor2,
}

#[derive(Debug, Clone)]
pub(crate) struct GateTrace {
    pub g: Tensor2,
    pub h: Tensor2,
}

#[derive(Debug, Clone)]
pub(crate) struct FfnTrace {
    pub u: Tensor2,
    pub out: Tensor2,
}

#[derive(Debug, Clone)]
pub(crate) struct PoolTrace {
    pub alpha: Vec<f64>,
    pub weights: Vec<f64>,
    pub pooled: Vec<f64>,
}

/// Intermediates of one forward pass, consumed by [`super::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub(crate) modality: Modality,
    pub(crate) hidden_dim: usize,
    pub(crate) heads: usize,
    pub(crate) audio: Tensor2,
    pub(crate) text: Tensor2,
    pub(crate) attn: Option<AttnTrace>,
    pub(crate) gate: Option<GateTrace>,
    pub(crate) ffn: Option<FfnTrace>,
    pub(crate) pool_input: Tensor2,
    pub(crate) pool: PoolTrace,
    pub(crate) mlp_act: Vec<f64>,
    pub(crate) logits: Vec<f64>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Per-head attention weights over the unmasked text tokens.
    pub fn attention_weights(&self) -> Option<&[Tensor2]> {
        self.attn.as_ref().map(|a| a.probs.as_slice())
    }

    pub fn attended(&self) -> Option<&Tensor2> {
        self.attn.as_ref().map(|a| &a.out)
    }

    pub fn gate(&self) -> Option<&Tensor2> {
        self.gate.as_ref().map(|g| &g.g)
    }

    pub fn blended(&self) -> Option<&Tensor2> {
        self.gate.as_ref().map(|g| &g.h)
    }

    pub fn pooling_scores(&self) -> &[f64] {
        &self.pool.alpha
    }

    pub fn pooling_weights(&self) -> &[f64] {
        &self.pool.weights
    }

    pub fn pooled(&self) -> &[f64] {
        &self.pool.pooled
    }
}

fn check_width(t: &Tensor2, d: usize, what: &str) -> Result<()> {
    if t.cols() != d {
        return Err(Error::DimensionMismatch(format!("{what} has width {}, expected {d}", t.cols())));
    }
    Ok(())
}

pub(crate) fn attn_forward(
    a: &Tensor2,
    t: &Tensor2,
    mask_t: &[bool],
    params: &FusionParams,
    cfg: &FusionConfig,
) -> Result<AttnTrace> {
    let d = cfg.hidden_dim;
    check_width(a, d, "audio")?;
    check_width(t, d, "text")?;
    if mask_t.len() != t.rows() {
        return Err(Error::LengthMismatch { expected: t.rows(), got: mask_t.len() });
    }
    if !mask_t.iter().any(|&m| m) {
        return Err(Error::EmptySupport);
    }
    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let q = a.matmul_t(&params.w_q)?;
    let k = t.matmul_t(&params.w_k)?;
    let v = t.matmul_t(&params.w_v)?;
    let mut concat = Tensor2::zeros(a.rows(), d);
    let mut probs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = q.col_block(h * dk, dk);
        let kh = k.col_block(h * dk, dk);
        let vh = v.col_block(h * dk, dk);
        let mut p = qh.matmul_t(&kh)?;
        for r in 0..p.rows() {
            let scores: Vec<f64> = p.row(r).iter().map(|s| s * scale).collect();
            let row = softmax(&scores, mask_t)?;
            p.row_mut(r).copy_from_slice(&row);
        }
        concat.set_col_block(h * dk, &p.matmul(&vh)?);
        probs.push(p);
    }
    let out = concat.matmul_t(&params.w_o)?;
    Ok(AttnTrace { q, k, v, probs, concat, out })
}

/// Multi-head attention with audio rows as queries and text rows as keys and
/// values. Masked text positions receive zero weight.
pub fn cross_attention(
    a: &Tensor2,
    t: &Tensor2,
    mask_t: &[bool],
    params: &FusionParams,
    cfg: &FusionConfig,
) -> Result<Tensor2> {
    attn_forward(a, t, mask_t, params, cfg).map(|tr| tr.out)
}

pub(crate) fn gate_forward(a: &Tensor2, h_att: &Tensor2, params: &FusionParams) -> Result<GateTrace> {
    if a.shape() != h_att.shape() {
        return Err(Error::DimensionMismatch(format!(
            "gate operands {:?} vs {:?}",
            a.shape(),
            h_att.shape()
        )));
    }
    let g = linear(h_att, &params.w_g, &params.b_g)?.map(sigmoid);
    let mut h = Tensor2::zeros(a.rows(), a.cols());
    for ((o, &gi), (&x, &y)) in
        h.data_mut().iter_mut().zip(g.data()).zip(h_att.data().iter().zip(a.data()))
    {
        *o = gi * x + (1.0 - gi) * y;
    }
    Ok(GateTrace { g, h })
}

/// `H = G ⊙ H_att + (1 − G) ⊙ A` with `G = σ(H_att W_gᵀ + b_g)`.
pub fn gate_blend(a: &Tensor2, h_att: &Tensor2, params: &FusionParams) -> Result<Tensor2> {
    gate_forward(a, h_att, params).map(|g| g.h)
}

pub(crate) fn ffn_forward(h: &Tensor2, params: &FusionParams) -> Result<Option<FfnTrace>> {
    let Some(f) = &params.ffn else { return Ok(None) };
    let u = linear(h, &f.w1, &f.b1)?.map(f64::tanh);
    let mut out = linear(&u, &f.w2, &f.b2)?;
    out.add_assign(h);
    Ok(Some(FfnTrace { u, out }))
}

pub(crate) fn pool_forward(h: &Tensor2, mask: &[bool], params: &FusionParams) -> Result<PoolTrace> {
    if mask.len() != h.rows() {
        return Err(Error::LengthMismatch { expected: h.rows(), got: mask.len() });
    }
    if h.cols() != params.w_a.len() {
        return Err(Error::DimensionMismatch(format!(
            "pooling input width {} vs {}",
            h.cols(),
            params.w_a.len()
        )));
    }
    let alpha: Vec<f64> = (0..h.rows())
        .map(|i| h.row(i).iter().zip(&params.w_a).map(|(x, w)| x * w).sum::<f64>() + params.b_a)
        .collect();
    let weights = softmax(&alpha, mask)?;
    let mut pooled = vec![0.0; h.cols()];
    for (i, &w) in weights.iter().enumerate() {
        if !mask[i] {
            continue;
        }
        for (p, &x) in pooled.iter_mut().zip(h.row(i)) {
            *p += w * x;
        }
    }
    Ok(PoolTrace { alpha, weights, pooled })
}

/// `h = Σ_i softmax(α)_i H_i` with `α_i = W_a · H_i + b_a` over unmasked rows.
pub fn attention_pool(h: &Tensor2, mask: &[bool], params: &FusionParams) -> Result<Vec<f64>> {
    pool_forward(h, mask, params).map(|p| p.pooled)
}

fn unmasked(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

/// Full forward pass. Masked rows are dropped up front; attention carries no
/// positional information, so this matches evaluating on the padded input.
pub fn forward(
    sample: &AlignedSample,
    params: &FusionParams,
    cfg: &FusionConfig,
) -> Result<(Vec<f64>, ForwardTrace)> {
    if !params.matches(cfg) {
        return Err(Error::DimensionMismatch("parameters do not match model config".into()));
    }
    let d = cfg.hidden_dim;
    check_width(&sample.audio, d, "audio")?;
    check_width(&sample.text, d, "text")?;
    if sample.mask_audio.len() != sample.audio.rows() || sample.mask_text.len() != sample.text.rows() {
        return Err(Error::DimensionMismatch("mask length differs from sequence length".into()));
    }
    let audio = sample.audio.select_rows(&unmasked(&sample.mask_audio));
    let text = sample.text.select_rows(&unmasked(&sample.mask_text));

    let (attn, gate, stream) = match cfg.modality {
        Modality::Both => {
            if audio.rows() == 0 || text.rows() == 0 {
                return Err(Error::EmptySupport);
            }
            let attn = attn_forward(&audio, &text, &vec![true; text.rows()], params, cfg)?;
            let gate = gate_forward(&audio, &attn.out, params)?;
            let h = gate.h.clone();
            (Some(attn), Some(gate), h)
        }
        Modality::Audio => (None, None, audio.clone()),
        Modality::Text => (None, None, text.clone()),
    };
    if stream.rows() == 0 {
        return Err(Error::EmptySupport);
    }
    let ffn = ffn_forward(&stream, params)?;
    let pool_input = ffn.as_ref().map_or(stream, |f| f.out.clone());
    let pool = pool_forward(&pool_input, &vec![true; pool_input.rows()], params)?;

    let hrow = Tensor2::from_vec(1, d, pool.pooled.clone())?;
    let mlp_act = linear(&hrow, &params.mlp_w1, &params.mlp_b1)?.map(f64::tanh);
    let logits = linear(&mlp_act, &params.mlp_w2, &params.mlp_b2)?.into_data();

    let trace = ForwardTrace {
        modality: cfg.modality,
        hidden_dim: d,
        heads: cfg.heads,
        audio,
        text,
        attn,
        gate,
        ffn,
        pool_input,
        pool,
        mlp_act: mlp_act.into_data(),
        logits: logits.clone(),
    };
    Ok((logits, trace))
}

/// Arg-max class index.
pub fn predict(sample: &AlignedSample, params: &FusionParams, cfg: &FusionConfig) -> Result<usize> {
    let (logits, _) = forward(sample, params, cfg)?;
    Ok(argmax(&logits))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
