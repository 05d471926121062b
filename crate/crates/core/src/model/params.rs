use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FusionConfig;
use crate::error::{Error, Result};
use crate::numerics::paramvec::Segment;
use crate::numerics::{ParamVector, Tensor2};

/// Optional post-gate feed-forward sublayer, `H + tanh(H F1ᵀ + c1) F2ᵀ + c2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub w1: Tensor2,
    pub b1: Vec<f64>,
    pub w2: Tensor2,
    pub b2: Vec<f64>,
}

/// Trainable parameters of the fusion classifier. Gradients use the same type.
///
/// Weight matrices are stored `out × in` and applied as `X Wᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub w_q: Tensor2,
    pub w_k: Tensor2,
    pub w_v: Tensor2,
    pub w_o: Tensor2,
    pub w_g: Tensor2,
    pub b_g: Vec<f64>,
    pub w_a: Vec<f64>,
    pub b_a: f64,
    pub mlp_w1: Tensor2,
    pub mlp_b1: Vec<f64>,
    pub mlp_w2: Tensor2,
    pub mlp_b2: Vec<f64>,
    pub ffn: Option<FeedForward>,
}

/// Canonical flat ordering of all parameters:
/// `W_Q, W_K, W_V, W_O, W_g, b_g, W_a, b_a, MLP W1, MLP b1, MLP W2, MLP b2`,
/// followed by `FFN W1, FFN b1, FFN W2, FFN b2` when the feed-forward
/// sublayer is enabled. Matrices are flattened row-major.
pub fn layout(cfg: &FusionConfig) -> Vec<Segment> {
    let d = cfg.hidden_dim;
    let m = cfg.mlp_hidden;
    let c = cfg.classes;
    let seg = |name: &str, rows, cols| Segment { name: name.to_string(), rows, cols };
    let mut out = vec![
        seg("w_q", d, d),
        seg("w_k", d, d),
        seg("w_v", d, d),
        seg("w_o", d, d),
        seg("w_g", d, d),
        seg("b_g", 1, d),
        seg("w_a", 1, d),
        seg("b_a", 1, 1),
        seg("mlp_w1", m, d),
        seg("mlp_b1", 1, m),
        seg("mlp_w2", c, m),
        seg("mlp_b2", 1, c),
    ];
    if cfg.include_ffn {
        let f = cfg.ffn_dim();
        out.extend([seg("ffn_w1", f, d), seg("ffn_b1", 1, f), seg("ffn_w2", d, f), seg("ffn_b2", 1, d)]);
    }
    out
}

/// Closed-form parameter count: `5d² + 2d + 1 + m(d + 1) + c(m + 1)`,
/// plus `2fd + f + d` with the feed-forward sublayer.
pub fn param_count(cfg: &FusionConfig) -> usize {
    let d = cfg.hidden_dim;
    let m = cfg.mlp_hidden;
    let c = cfg.classes;
    let base = 5 * d * d + 2 * d + 1 + m * (d + 1) + c * (m + 1);
    if cfg.include_ffn {
        let f = cfg.ffn_dim();
        base + 2 * f * d + f + d
    } else {
        base
    }
}

impl FusionParams {
    pub fn zeros(cfg: &FusionConfig) -> Self {
        let d = cfg.hidden_dim;
        let m = cfg.mlp_hidden;
        let c = cfg.classes;
        Self {
            w_q: Tensor2::zeros(d, d),
            w_k: Tensor2::zeros(d, d),
            w_v: Tensor2::zeros(d, d),
            w_o: Tensor2::zeros(d, d),
            w_g: Tensor2::zeros(d, d),
            b_g: vec![0.0; d],
            w_a: vec![0.0; d],
            b_a: 0.0,
            mlp_w1: Tensor2::zeros(m, d),
            mlp_b1: vec![0.0; m],
            mlp_w2: Tensor2::zeros(c, m),
            mlp_b2: vec![0.0; c],
            ffn: cfg.include_ffn.then(|| {
                let f = cfg.ffn_dim();
                FeedForward {
                    w1: Tensor2::zeros(f, d),
                    b1: vec![0.0; f],
                    w2: Tensor2::zeros(d, f),
                    b2: vec![0.0; d],
                }
            }),
        }
    }

    /// Fan-in uniform initialization `U(−1/√fan_in, 1/√fan_in)` for weights, zero biases.
    pub fn init(cfg: &FusionConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(cfg);
        let mut fill = |t: &mut Tensor2| {
            let bound = 1.0 / (t.cols() as f64).sqrt();
            for v in t.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(&mut p.w_q);
        fill(&mut p.w_k);
        fill(&mut p.w_v);
        fill(&mut p.w_o);
        fill(&mut p.w_g);
        let mut wa = Tensor2::zeros(1, cfg.hidden_dim);
        fill(&mut wa);
        p.w_a = wa.into_data();
        fill(&mut p.mlp_w1);
        fill(&mut p.mlp_w2);
        if let Some(ffn) = p.ffn.as_mut() {
            fill(&mut ffn.w1);
            fill(&mut ffn.w2);
        }
        p
    }

    fn parts(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![
            self.w_q.data(),
            self.w_k.data(),
            self.w_v.data(),
            self.w_o.data(),
            self.w_g.data(),
            &self.b_g,
            &self.w_a,
            std::slice::from_ref(&self.b_a),
            self.mlp_w1.data(),
            &self.mlp_b1,
            self.mlp_w2.data(),
            &self.mlp_b2,
        ];
        if let Some(f) = &self.ffn {
            v.extend([f.w1.data(), &f.b1[..], f.w2.data(), &f.b2[..]]);
        }
        v
    }

    fn parts_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            self.w_q.data_mut(),
            self.w_k.data_mut(),
            self.w_v.data_mut(),
            self.w_o.data_mut(),
            self.w_g.data_mut(),
            &mut self.b_g,
            &mut self.w_a,
            std::slice::from_mut(&mut self.b_a),
            self.mlp_w1.data_mut(),
            &mut self.mlp_b1,
            self.mlp_w2.data_mut(),
            &mut self.mlp_b2,
        ];
        if let Some(f) = self.ffn.as_mut() {
            v.extend([f.w1.data_mut(), &mut f.b1[..], f.w2.data_mut(), &mut f.b2[..]]);
        }
        v
    }

    pub fn num_params(&self) -> usize {
        self.parts().iter().map(|p| p.len()).sum()
    }

    /// Flatten into the canonical ordering (see [`layout`]).
    pub fn flatten(&self, cfg: &FusionConfig) -> ParamVector {
        let mut values = Vec::with_capacity(self.num_params());
        for p in self.parts() {
            values.extend_from_slice(p);
        }
        ParamVector { values, segments: layout(cfg) }
    }

    pub fn load(pv: &ParamVector, cfg: &FusionConfig) -> Result<Self> {
        let expected = param_count(cfg);
        if pv.len() != expected {
            return Err(Error::LengthMismatch { expected, got: pv.len() });
        }
        let mut p = Self::zeros(cfg);
        let mut offset = 0;
        for part in p.parts_mut() {
            let n = part.len();
            part.copy_from_slice(&pv.values[offset..offset + n]);
            offset += n;
        }
        Ok(p)
    }

    /// True when every tensor has the shape `cfg` implies.
    pub fn matches(&self, cfg: &FusionConfig) -> bool {
        let lay = layout(cfg);
        let parts = self.parts();
        lay.len() == parts.len() && lay.iter().zip(parts).all(|(s, p)| s.len() == p.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FusionConfig {
        FusionConfig { hidden_dim: 8, heads: 2, max_len: 4, mlp_hidden: 4, classes: 2, ..Default::default() }
    }

    #[test]
    fn count_by_shape_enumeration() {
        let cfg = small();
        // enumerate every tensor shape independently of param_count
        let by_hand = 4 * (8 * 8) + 8 * 8 + 8 + 8 + 1 + 4 * 8 + 4 + 2 * 4 + 2;
        assert_eq!(by_hand, 383);
        assert_eq!(param_count(&cfg), by_hand);
        assert_eq!(FusionParams::zeros(&cfg).flatten(&cfg).len(), by_hand);
        let seg_total: usize = layout(&cfg).iter().map(Segment::len).sum();
        assert_eq!(seg_total, by_hand);

        let ffn = FusionConfig { include_ffn: true, ..cfg };
        let f = ffn.ffn_dim();
        assert_eq!(param_count(&ffn), by_hand + f * 8 + f + 8 * f + 8);
        assert_eq!(FusionParams::zeros(&ffn).num_params(), param_count(&ffn));
    }

    #[test]
    fn flatten_load_is_identity() {
        for include_ffn in [false, true] {
            let cfg = FusionConfig { include_ffn, ..small() };
            let p = FusionParams::init(&cfg, 7);
            let back = FusionParams::load(&p.flatten(&cfg), &cfg).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn load_rejects_wrong_length() {
        let cfg = small();
        let err = FusionParams::load(&ParamVector::zeros(10), &cfg).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { expected: 383, got: 10 }));
    }

    #[test]
    fn init_bounds_and_biases() {
        let cfg = small();
        let p = FusionParams::init(&cfg, 1);
        let bound = 1.0 / 8f64.sqrt();
        assert!(p.w_q.data().iter().all(|v| v.abs() <= bound));
        let bound2 = 1.0 / 4f64.sqrt();
        assert!(p.mlp_w2.data().iter().all(|v| v.abs() <= bound2));
        assert!(p.b_g.iter().all(|&v| v == 0.0));
        assert_eq!(p.b_a, 0.0);
        assert_eq!(FusionParams::init(&cfg, 1), p);
        assert_ne!(FusionParams::init(&cfg, 2), p);
    }
}
