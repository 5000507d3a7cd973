//! Parameterized building blocks shared by the encoder, adapter and LM.

use rand::Rng;

use super::{Graph, KeyRange, ParamId, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let weight = store.normal(&format!("{name}.weight"), d_in, d_out, (1.0 / d_in as f64).sqrt(), rng);
        let bias = bias.then(|| store.constant(&format!("{name}.bias"), 1, d_out, 0.0));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.constant(&format!("{name}.gain"), 1, d, 1.0),
            bias: store.constant(&format!("{name}.bias"), 1, d, 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Two linear layers with a GELU in between.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, hidden: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), d, hidden, true, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, d_out, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.up.forward(g, store, x);
        let h = g.gelu(h);
        self.down.forward(g, store, h)
    }
}

/// Multi-head attention with separate query and key/value streams.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, d_kv: usize, heads: usize, rng: &mut impl Rng) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.query"), d, d, false, rng),
            key: Linear::new(store, &format!("{name}.key"), d_kv, d, false, rng),
            value: Linear::new(store, &format!("{name}.value"), d_kv, d, false, rng),
            out: Linear::new(store, &format!("{name}.out"), d, d, true, rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, kv: Var, ranges: Vec<KeyRange>) -> Var {
        let q = self.query.forward(g, store, x);
        let k = self.key.forward(g, store, kv);
        let v = self.value.forward(g, store, kv);
        let a = g.attention(q, k, v, ranges, self.heads);
        self.out.forward(g, store, a)
    }
}

/// Pre-norm transformer block over a packed sequence; `ranges` restricts each
/// row's self-attention.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, ffn_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, d, heads, rng),
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, ffn_dim, d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, ranges: Vec<KeyRange>) -> Var {
        let h = self.ln_attn.forward(g, store, x);
        let a = self.attn.forward(g, store, h, h, ranges);
        let x = g.add(x, a);
        let h = self.ln_ffn.forward(g, store, x);
        let f = self.ffn.forward(g, store, h);
        g.add(x, f)
    }
}
