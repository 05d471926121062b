use rayon::prelude::*;

use super::forward::{forward, ForwardTrace};
use super::{FusionConfig, FusionParams, Modality};
use crate::alignment::AlignedSample;
use crate::error::{Error, Result};
use crate::numerics::ops::{cross_entropy, softmax_all};
use crate::numerics::{ParamVector, Tensor2};

fn col_sums(t: &Tensor2) -> Vec<f64> {
    let mut out = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (o, &x) in out.iter_mut().zip(t.row(r)) {
            *o += x;
        }
    }
    out
}

/// Gradient of the cross-entropy loss of `trace` w.r.t. every parameter.
pub fn backward(trace: &ForwardTrace, label: usize, params: &FusionParams) -> Result<FusionParams> {
    let d = trace.hidden_dim;
    let classes = params.mlp_b2.len();
    if label >= classes {
        return Err(Error::InvalidLabel(label));
    }
    if params.w_a.len() != d
        || trace.logits.len() != classes
        || trace.mlp_act.len() != params.mlp_b1.len()
        || trace.ffn.is_some() != params.ffn.is_some()
    {
        return Err(Error::DimensionMismatch("stale trace: shapes differ from parameters".into()));
    }
    let mut grad = params.clone();
    zero(&mut grad);

    // logits = W2 a1 + b2
    let mut dlogits = softmax_all(&trace.logits);
    dlogits[label] -= 1.0;
    let a1 = &trace.mlp_act;
    for (c, &dl) in dlogits.iter().enumerate() {
        grad.mlp_b2[c] = dl;
        for (g, &a) in grad.mlp_w2.row_mut(c).iter_mut().zip(a1) {
            *g = dl * a;
        }
    }
    // a1 = tanh(W1 h + b1)
    let mut dz1 = vec![0.0; a1.len()];
    for (j, dz) in dz1.iter_mut().enumerate() {
        let da: f64 = (0..classes).map(|c| params.mlp_w2.get(c, j) * dlogits[c]).sum();
        *dz = da * (1.0 - a1[j] * a1[j]);
    }
    let pooled = &trace.pool.pooled;
    let mut dpooled = vec![0.0; d];
    for (j, &dz) in dz1.iter().enumerate() {
        grad.mlp_b1[j] = dz;
        for (g, &x) in grad.mlp_w1.row_mut(j).iter_mut().zip(pooled) {
            *g = dz * x;
        }
        for (dp, &w) in dpooled.iter_mut().zip(params.mlp_w1.row(j)) {
            *dp += dz * w;
        }
    }

    // attention pooling
    let hin = &trace.pool_input;
    let w = &trace.pool.weights;
    let pooled_dot: f64 = pooled.iter().zip(&dpooled).map(|(a, b)| a * b).sum();
    let mut dh = Tensor2::zeros(hin.rows(), d);
    for i in 0..hin.rows() {
        let row_dot: f64 = hin.row(i).iter().zip(&dpooled).map(|(a, b)| a * b).sum();
        let dalpha = w[i] * (row_dot - pooled_dot);
        grad.b_a += dalpha;
        for (g, &x) in grad.w_a.iter_mut().zip(hin.row(i)) {
            *g += dalpha * x;
        }
        for ((o, &dp), &wa) in dh.row_mut(i).iter_mut().zip(&dpooled).zip(&params.w_a) {
            *o = w[i] * dp + dalpha * wa;
        }
    }

    // optional feed-forward sublayer
    if let (Some(ft), Some(f), Some(gf)) = (&trace.ffn, &params.ffn, grad.ffn.as_mut()) {
        let stream = match trace.modality {
            Modality::Both => &trace.gate.as_ref().expect("gate trace").h,
            Modality::Audio => &trace.audio,
            Modality::Text => &trace.text,
        };
        gf.w2 = dh.t_matmul(&ft.u)?;
        gf.b2 = col_sums(&dh);
        let mut dzf = dh.matmul(&f.w2)?;
        for (z, &u) in dzf.data_mut().iter_mut().zip(ft.u.data()) {
            *z *= 1.0 - u * u;
        }
        gf.w1 = dzf.t_matmul(stream)?;
        gf.b1 = col_sums(&dzf);
        dh.add_assign(&dzf.matmul(&f.w1)?);
    }

    if trace.modality != Modality::Both {
        return Ok(grad);
    }
    let attn = trace.attn.as_ref().expect("attention trace");
    let gate = trace.gate.as_ref().expect("gate trace");
    let a = &trace.audio;
    let t = &trace.text;
    let h_att = &attn.out;

    // H = G ⊙ H_att + (1 − G) ⊙ A,  G = σ(H_att W_gᵀ + b_g)
    let mut dz = Tensor2::zeros(a.rows(), d);
    let mut dh_att = Tensor2::zeros(a.rows(), d);
    for idx in 0..dz.data().len() {
        let g = gate.g.data()[idx];
        let dhv = dh.data()[idx];
        let dg = dhv * (h_att.data()[idx] - a.data()[idx]);
        dz.data_mut()[idx] = dg * g * (1.0 - g);
        dh_att.data_mut()[idx] = dhv * g;
    }
    grad.w_g = dz.t_matmul(h_att)?;
    grad.b_g = col_sums(&dz);
    dh_att.add_assign(&dz.matmul(&params.w_g)?);

    // H_att = concat(heads) W_Oᵀ
    grad.w_o = dh_att.t_matmul(&attn.concat)?;
    let dconcat = dh_att.matmul(&params.w_o)?;

    let dk = d / trace.heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut dq = Tensor2::zeros(attn.q.rows(), d);
    let mut dkm = Tensor2::zeros(attn.k.rows(), d);
    let mut dv = Tensor2::zeros(attn.v.rows(), d);
    for (h, p) in attn.probs.iter().enumerate() {
        let qh = attn.q.col_block(h * dk, dk);
        let kh = attn.k.col_block(h * dk, dk);
        let vh = attn.v.col_block(h * dk, dk);
        let doh = dconcat.col_block(h * dk, dk);
        let dp = doh.matmul_t(&vh)?;
        dv.set_col_block(h * dk, &p.t_matmul(&doh)?);
        let mut ds = Tensor2::zeros(p.rows(), p.cols());
        for r in 0..p.rows() {
            let prow = p.row(r);
            let dprow = dp.row(r);
            let inner: f64 = prow.iter().zip(dprow).map(|(a, b)| a * b).sum();
            for ((o, &pv), &dpv) in ds.row_mut(r).iter_mut().zip(prow).zip(dprow) {
                *o = pv * (dpv - inner) * scale;
            }
        }
        dq.set_col_block(h * dk, &ds.matmul(&kh)?);
        dkm.set_col_block(h * dk, &ds.t_matmul(&qh)?);
    }
    grad.w_q = dq.t_matmul(a)?;
    grad.w_k = dkm.t_matmul(t)?;
    grad.w_v = dv.t_matmul(t)?;
    Ok(grad)
}

fn zero(p: &mut FusionParams) {
    for t in [&mut p.w_q, &mut p.w_k, &mut p.w_v, &mut p.w_o, &mut p.w_g, &mut p.mlp_w1, &mut p.mlp_w2] {
        t.data_mut().fill(0.0);
    }
    p.b_g.fill(0.0);
    p.w_a.fill(0.0);
    p.b_a = 0.0;
    p.mlp_b1.fill(0.0);
    p.mlp_b2.fill(0.0);
    if let Some(f) = p.ffn.as_mut() {
        f.w1.data_mut().fill(0.0);
        f.w2.data_mut().fill(0.0);
        f.b1.fill(0.0);
        f.b2.fill(0.0);
    }
}

/// Cross-entropy loss and its flat gradient for one sample.
pub fn loss_and_grad(
    sample: &AlignedSample,
    params: &FusionParams,
    cfg: &FusionConfig,
) -> Result<(f64, ParamVector)> {
    let (logits, trace) = forward(sample, params, cfg)?;
    let label = sample.label.index();
    let loss = cross_entropy(&logits, label)?;
    let grad = backward(&trace, label, params)?;
    Ok((loss, grad.flatten(cfg)))
}

/// Mean loss and mean gradient over `samples`. Per-sample work may run in
/// parallel; the reduction is always in ascending sample order.
pub fn batch_loss_grad(
    samples: &[&AlignedSample],
    params: &FusionParams,
    cfg: &FusionConfig,
) -> Result<(f64, ParamVector)> {
    if samples.is_empty() {
        return Err(Error::EmptySequence);
    }
    let per: Vec<Result<(f64, ParamVector)>> =
        samples.par_iter().map(|s| loss_and_grad(s, params, cfg)).collect();
    let mut total_loss = 0.0;
    let mut total = ParamVector::zeros(super::param_count(cfg));
    for r in per {
        let (l, g) = r?;
        total_loss += l;
        total.add_scaled(&g, 1.0)?;
    }
    let n = samples.len() as f64;
    for v in &mut total.values {
        *v /= n;
    }
    total.segments = super::layout(cfg);
    Ok((total_loss / n, total))
}
