//! Parameterised building blocks shared by the tagger and the ADIFF network.

use rand::Rng;

use crate::tensor::{Graph, ParamGroup, ParamId, ParamStore, Result, Scalar, Tensor, Var};

/// Large negative additive mask value; finite so masked rows never produce NaN.
const MASKED: f64 = -1e9;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), group, Tensor::randn(&[fan_in, fan_out], std, rng));
        let b = store.add(format!("{name}.b"), group, Tensor::zeros(&[fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let w = g.param(self.w)?;
        let b = g.param(self.b)?;
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, group: ParamGroup, dim: usize) -> Self {
        let gain = store.add(format!("{name}.g"), group, Tensor::full(&[dim], S::one()));
        let bias = store.add(format!("{name}.b"), group, Tensor::zeros(&[dim]));
        Self { gain, bias }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let gain = g.param(self.gain)?;
        let bias = g.param(self.bias)?;
        g.layer_norm(x, gain, bias)
    }
}

/// Pre-LN transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Block {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        group: ParamGroup,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "dim {dim} not divisible by {heads} heads");
        let std = 0.02;
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), group, dim),
            qkv: Linear::new(store, &format!("{name}.qkv"), group, dim, 3 * dim, std, rng),
            proj: Linear::new(store, &format!("{name}.proj"), group, dim, dim, std, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), group, dim),
            fc: Linear::new(store, &format!("{name}.fc"), group, dim, 4 * dim, std, rng),
            out: Linear::new(store, &format!("{name}.out"), group, 4 * dim, dim, std, rng),
            heads,
            dim,
        }
    }

    /// `mask`, when given, is an additive `[T, T]` constant.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var, mask: Option<Var>) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let a = self.attention(g, h, mask)?;
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, x)?;
        let h = self.fc.forward(g, h)?;
        let h = g.gelu(h);
        let h = self.out.forward(g, h)?;
        g.add(x, h)
    }

    fn attention<S: Scalar>(&self, g: &mut Graph<S>, x: Var, mask: Option<Var>) -> Result<Var> {
        let d = self.dim;
        let dh = d / self.heads;
        let qkv = self.qkv.forward(g, x)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = g.slice_cols(qkv, h * dh, (h + 1) * dh)?;
            let k = g.slice_cols(qkv, d + h * dh, d + (h + 1) * dh)?;
            let v = g.slice_cols(qkv, 2 * d + h * dh, 2 * d + (h + 1) * dh)?;
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let mut scores = g.scale(scores, scale);
            if let Some(m) = mask {
                scores = g.add(scores, m)?;
            }
            let p = g.softmax(scores)?;
            outs.push(g.matmul(p, v)?);
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.proj.forward(g, merged)
    }
}

/// Stack of blocks followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
}

impl Transformer {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        group: ParamGroup,
        depth: usize,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        let blocks = (0..depth).map(|i| Block::new(store, &format!("{name}.{i}"), group, dim, heads, rng)).collect();
        Self { blocks, ln_f: LayerNorm::new(store, &format!("{name}.ln_f"), group, dim) }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, mut x: Var, mask: Option<Var>) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(g, x, mask)?;
        }
        self.ln_f.forward(g, x)
    }
}

/// Additive causal mask: row `i` may attend to columns `0..=i`.
pub fn causal_mask<S: Scalar>(t: usize) -> Tensor<S> {
    let mut m = Tensor::zeros(&[t, t]);
    let masked = S::from_f64(MASKED);
    for i in 0..t {
        for j in i + 1..t {
            m.data_mut()[i * t + j] = masked;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::GroupSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn block_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let t = Transformer::new(&mut store, "t", ParamGroup::Beta, 2, 8, 2, &mut rng);
        let mut g = Graph::with_params(&store, GroupSet::EMPTY);
        let x = g.constant(Tensor::randn(&[5, 8], 1.0, &mut rng));
        let m = g.constant(causal_mask(5));
        let y = t.forward(&mut g, x, Some(m)).unwrap();
        assert_eq!(g.shape(y), &[5, 8]);
    }

    #[test]
    fn causal_mask_shape() {
        let m = causal_mask::<f64>(3);
        assert_eq!(m.data()[1], MASKED);
        assert_eq!(m.data()[3], 0.0);
        assert_eq!(m.data()[8], 0.0);
    }
}
