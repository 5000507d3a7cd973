//! Adapters from encoder frames to LM-space embeddings: the dynamic-window
//! query former, its fixed-window baseline and a per-frame MLP.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compute::layers::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::backbone::sinusoid_table;
use crate::compute::{Graph, KeyRange, ParamId, ParamStore, Tensor2D, Var};
use crate::error::{Error, Result};
use crate::windowing::fixed_windows;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterMode {
    /// One output per alignment window.
    AlignFormer,
    /// Consecutive chunks of `k` frames.
    FixedWindow(usize),
    /// One output per frame.
    Mlp,
}

impl AdapterMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "alignformer" => Ok(Self::AlignFormer),
            "mlp" => Ok(Self::Mlp),
            other => match other.strip_prefix("fixed_window:").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Ok(Self::FixedWindow(k)),
                _ => Err(Error::Config(format!("unknown adapter mode {other:?} (alignformer, fixed_window:K, mlp)"))),
            },
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::AlignFormer => "alignformer".into(),
            Self::FixedWindow(k) => format!("fixed_window:{k}"),
            Self::Mlp => "mlp".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub encoder_dim: usize,
    pub llm_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub mode: AdapterMode,
    /// Add a sinusoidal within-window position to the attended frames.
    pub window_positions: bool,
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::Config("adapter needs at least one block".into()));
        }
        if self.n_heads == 0 || self.encoder_dim % self.n_heads != 0 {
            return Err(Error::Config(format!("{} heads do not divide encoder_dim {}", self.n_heads, self.encoder_dim)));
        }
        if let AdapterMode::FixedWindow(0) = self.mode {
            return Err(Error::Config("fixed window size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct QueryBlock {
    ln_q: LayerNorm,
    attn: MultiHeadAttention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

#[derive(Clone, Debug)]
enum Body {
    Query { query: ParamId, ln_kv: LayerNorm, blocks: Vec<QueryBlock>, ln_out: LayerNorm, proj: Linear },
    Mlp(FeedForward),
}

/// Parameters live under `adapter.*`.
#[derive(Clone, Debug)]
pub struct Adapter {
    pub cfg: AdapterConfig,
    body: Body,
}

impl Adapter {
    pub fn new(cfg: AdapterConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.encoder_dim;
        let body = if cfg.mode == AdapterMode::Mlp {
            Body::Mlp(FeedForward::new(store, "adapter.mlp", d, cfg.ffn_dim, cfg.llm_dim, rng))
        } else {
            let query = store.normal("adapter.query", 1, d, 1.0, rng);
            let ln_kv = LayerNorm::new(store, "adapter.ln_kv", d);
            let blocks = (0..cfg.n_blocks)
                .map(|b| QueryBlock {
                    ln_q: LayerNorm::new(store, &format!("adapter.block{b}.ln_q"), d),
                    attn: MultiHeadAttention::new(store, &format!("adapter.block{b}.attn"), d, d, cfg.n_heads, rng),
                    ln_ffn: LayerNorm::new(store, &format!("adapter.block{b}.ln_ffn"), d),
                    ffn: FeedForward::new(store, &format!("adapter.block{b}.ffn"), d, cfg.ffn_dim, d, rng),
                })
                .collect();
            let ln_out = LayerNorm::new(store, "adapter.ln_out", d);
            let proj = Linear::new(store, "adapter.proj", d, cfg.llm_dim, true, rng);
            Body::Query { query, ln_kv, blocks, ln_out, proj }
        };
        Ok(Self { cfg, body })
    }

    /// Window layout for an utterance of `frames` encoder frames under a
    /// frame-driven mode; `None` for the alignment-driven mode.
    pub fn static_windows(&self, frames: usize) -> Option<Vec<KeyRange>> {
        match self.cfg.mode {
            AdapterMode::AlignFormer => None,
            AdapterMode::FixedWindow(k) => Some(fixed_windows(frames, k)),
            AdapterMode::Mlp => Some((0..frames).map(|t| (t, t + 1)).collect()),
        }
    }

    /// One output row per window. `windows` hold absolute row ranges into the
    /// packed `enc`; for the MLP mode each window must be a single frame.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, enc: Var, windows: &[KeyRange]) -> Result<Var> {
        let rows = g.value(enc).rows();
        if let Some(&(lo, hi)) = windows.iter().find(|&&(lo, hi)| lo > hi || hi > rows) {
            return Err(Error::Dimension(format!("window {lo}..{hi} outside {rows} encoder rows")));
        }
        let (query, ln_kv, blocks, ln_out, proj) = match &self.body {
            Body::Mlp(mlp) => {
                if windows.iter().any(|&(lo, hi)| hi != lo + 1) {
                    return Err(Error::Input("mlp adapter takes single-frame windows".into()));
                }
                let ids: Vec<usize> = windows.iter().map(|w| w.0).collect();
                let x = g.gather_rows(enc, &ids);
                return Ok(mlp.forward(g, store, x));
            }
            Body::Query { query, ln_kv, blocks, ln_out, proj } => (*query, ln_kv, blocks, ln_out, proj),
        };
        let mut kv = ln_kv.forward(g, store, enc);
        if self.cfg.window_positions {
            let mut pos = Tensor2D::zeros(rows, self.cfg.encoder_dim);
            for &(lo, hi) in windows {
                let s = sinusoid_table(hi - lo, self.cfg.encoder_dim);
                for t in lo..hi {
                    pos.row_mut(t).copy_from_slice(s.row(t - lo));
                }
            }
            let p = g.input(pos, false);
            kv = g.add(kv, p);
        }
        let q = g.param(store, query);
        let mut x = g.gather_rows(q, &vec![0; windows.len()]);
        for b in blocks {
            let h = b.ln_q.forward(g, store, x);
            let a = b.attn.forward(g, store, h, kv, windows.to_vec());
            x = g.add(x, a);
            let h = b.ln_ffn.forward(g, store, x);
            let f = b.ffn.forward(g, store, h);
            x = g.add(x, f);
        }
        let x = ln_out.forward(g, store, x);
        Ok(proj.forward(g, store, x))
    }
}
