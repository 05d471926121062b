use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Softmax over the entries where `mask` is true; masked entries are exactly zero.
pub fn softmax(v: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if v.len() != mask.len() {
        return Err(Error::LengthMismatch { expected: v.len(), got: mask.len() });
    }
    let max = v
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    let mut out: Vec<f64> = v
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { (x - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    for o in &mut out {
        *o /= z;
    }
    Ok(out)
}

/// Softmax with every entry in the support.
pub fn softmax_all(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for o in &mut out {
        *o /= z;
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `X Wᵀ + b`, with `b` broadcast over rows.
pub fn linear(x: &Tensor2, w: &Tensor2, b: &[f64]) -> Result<Tensor2> {
    if b.len() != w.rows() {
        return Err(Error::DimensionMismatch(format!(
            "bias of length {} for {} outputs",
            b.len(),
            w.rows()
        )));
    }
    let mut out = x.matmul_t(w)?;
    for r in 0..out.rows() {
        for (o, &bi) in out.row_mut(r).iter_mut().zip(b) {
            *o += bi;
        }
    }
    Ok(out)
}

/// `-log softmax(logits)[label]`, computed with log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::InvalidLabel(label));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}
