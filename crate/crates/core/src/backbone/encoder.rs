use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::compute::layers::{LayerNorm, Linear, TransformerBlock};
use crate::compute::{Graph, KeyRange, ParamStore, Tensor2D, Var};
use crate::ctc::LogProbMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub subsample_factor: usize,
    pub n_layers: usize,
    pub d_enc: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub ctc_vocab: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subsample_factor == 0 || self.d_enc == 0 || self.n_heads == 0 || self.d_enc % self.n_heads != 0 {
            return Err(Error::Config(format!("invalid encoder shape {self:?}")));
        }
        if self.ctc_vocab < 2 {
            return Err(Error::Config("ctc vocabulary needs a blank and a token".into()));
        }
        Ok(())
    }
}

/// Frame-stacking subsampler (a convolution with kernel = stride = factor),
/// bidirectional transformer layers and a CTC head. Parameters live under
/// `encoder.*` and `ctc_head.*`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    subsample: Linear,
    blocks: Vec<TransformerBlock>,
    ln_f: LayerNorm,
    ctc_head: Linear,
}

/// Packed encoder outputs for a batch of utterances.
#[derive(Clone, Debug)]
pub struct EncoderBatch {
    /// All utterances' frames stacked, `Σ T_i × d_enc`.
    pub enc: Var,
    /// Row-wise log-softmax of the CTC head, `Σ T_i × V`.
    pub logp: Var,
    /// `(first row, T_i)` per utterance.
    pub spans: Vec<(usize, usize)>,
}

impl EncoderBatch {
    pub fn utterance_logp(&self, g: &Graph, i: usize) -> Result<LogProbMatrix> {
        let (start, len) = self.spans[i];
        LogProbMatrix::new(g.value(self.logp).rows_slice(start, start + len))
    }
}

pub fn sinusoid_table(len: usize, d: usize) -> Tensor2D {
    let mut t = Tensor2D::zeros(len, d);
    for p in 0..len {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = p as f64 * rate;
            t.set(p, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let subsample = Linear::new(store, "encoder.subsample", cfg.input_dim * cfg.subsample_factor, cfg.d_enc, true, rng);
        let blocks = (0..cfg.n_layers)
            .map(|l| TransformerBlock::new(store, &format!("encoder.block{l}"), cfg.d_enc, cfg.n_heads, cfg.ffn_dim, rng))
            .collect();
        let ln_f = LayerNorm::new(store, "encoder.ln_f", cfg.d_enc);
        let ctc_head = Linear::new(store, "ctc_head", cfg.d_enc, cfg.ctc_vocab, true, rng);
        Ok(Self { cfg, subsample, blocks, ln_f, ctc_head })
    }

    /// Replace the CTC head with fresh random values.
    pub fn reinit_ctc_head(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let std = (1.0 / self.cfg.d_enc as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std");
        for x in store.get_mut(self.ctc_head.weight).value.data_mut() {
            *x = normal.sample(rng);
        }
        if let Some(b) = self.ctc_head.bias {
            store.get_mut(b).value.scale_assign(0.0);
        }
    }

    /// `floor(frames / factor)`, rejecting inputs that produce no frame.
    pub fn output_frames(&self, input_frames: usize) -> Result<usize> {
        let t = input_frames / self.cfg.subsample_factor;
        if t == 0 {
            return Err(Error::Input(format!(
                "{input_frames} input frames is shorter than the subsampling factor {}",
                self.cfg.subsample_factor
            )));
        }
        Ok(t)
    }

    fn stack(&self, feats: &Tensor2D) -> Result<Tensor2D> {
        if feats.cols() != self.cfg.input_dim {
            return Err(Error::Dimension(format!("features have {} dims, encoder expects {}", feats.cols(), self.cfg.input_dim)));
        }
        let f = self.cfg.subsample_factor;
        let t = self.output_frames(feats.rows())?;
        let width = f * feats.cols();
        Tensor2D::new(t, width, feats.data()[..t * width].to_vec())
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, feats: &[&Tensor2D]) -> Result<EncoderBatch> {
        if feats.is_empty() {
            return Err(Error::Input("empty encoder batch".into()));
        }
        let mut stacked_rows = Vec::new();
        let mut pos_rows = Vec::new();
        let mut spans = Vec::with_capacity(feats.len());
        let mut ranges: Vec<KeyRange> = Vec::new();
        let mut start = 0;
        for f in feats {
            let s = self.stack(f)?;
            let t = s.rows();
            stacked_rows.extend_from_slice(s.data());
            pos_rows.extend_from_slice(sinusoid_table(t, self.cfg.d_enc).data());
            ranges.extend(std::iter::repeat((start, start + t)).take(t));
            spans.push((start, t));
            start += t;
        }
        let width = self.cfg.input_dim * self.cfg.subsample_factor;
        let x = g.input(Tensor2D::new(start, width, stacked_rows)?, false);
        let pos = g.input(Tensor2D::new(start, self.cfg.d_enc, pos_rows)?, false);
        let mut h = self.subsample.forward(g, store, x);
        h = g.add(h, pos);
        for block in &self.blocks {
            h = block.forward(g, store, h, ranges.clone());
        }
        let enc = self.ln_f.forward(g, store, h);
        let logits = self.ctc_head.forward(g, store, enc);
        let logp = g.log_softmax_rows(logits);
        Ok(EncoderBatch { enc, logp, spans })
    }
}
