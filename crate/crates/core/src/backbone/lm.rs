use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::sinusoid_table;
use super::prompt::{PromptAssembly, Slot};
use super::tokenizer::END;
use crate::compute::layers::{LayerNorm, Linear, TransformerBlock};
use crate::compute::{Graph, KeyRange, ParamId, ParamStore, Tensor2D, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub context: usize,
    /// Learned position table instead of fixed sinusoids.
    pub learned_positions: bool,
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 || self.context == 0 || self.vocab == 0 {
            return Err(Error::Config(format!("invalid LM shape {self:?}")));
        }
        Ok(())
    }
}

/// Decoder-only LM under the `lm.*` namespace.
#[derive(Clone, Debug)]
pub struct LanguageModel {
    pub cfg: LmConfig,
    pub tok_emb: ParamId,
    /// Learned table, or `None` for fixed sinusoids.
    pos_emb: Option<ParamId>,
    blocks: Vec<TransformerBlock>,
    ln_f: LayerNorm,
    head: Linear,
}

/// A packed forward pass over a batch of assemblies.
pub struct LmOutput {
    pub logits: Var,
    /// First packed row of each sequence.
    pub starts: Vec<usize>,
}

impl LanguageModel {
    pub fn new(cfg: LmConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let tok_emb = store.normal("lm.tok_emb", cfg.vocab, cfg.d_model, 0.5, rng);
        let pos_emb = cfg.learned_positions.then(|| store.normal("lm.pos_emb", cfg.context, cfg.d_model, 0.1, rng));
        let blocks = (0..cfg.n_layers)
            .map(|l| TransformerBlock::new(store, &format!("lm.block{l}"), cfg.d_model, cfg.n_heads, cfg.ffn_dim, rng))
            .collect();
        let ln_f = LayerNorm::new(store, "lm.ln_f", cfg.d_model);
        let head = Linear::new(store, "lm.head", cfg.d_model, cfg.vocab, true, rng);
        Ok(Self { cfg, tok_emb, pos_emb, blocks, ln_f, head })
    }

    /// Input embeddings of the packed batch. `audio[k]` supplies the rows of
    /// audio source `k`; `offsets[i]` shifts the positions of sequence `i`.
    pub fn embed(&self, g: &mut Graph, store: &ParamStore, batch: &[PromptAssembly], audio: &[Var], offsets: &[usize]) -> Result<Var> {
        let mut token_ids = Vec::new();
        let mut audio_base = Vec::with_capacity(audio.len());
        let mut positions = Vec::new();
        for (i, a) in batch.iter().enumerate() {
            let off = offsets.get(i).copied().unwrap_or(0);
            if a.len() + off > self.cfg.context {
                return Err(Error::Input(format!("sequence of {} (offset {off}) exceeds context {}", a.len(), self.cfg.context)));
            }
            positions.extend(off..off + a.len());
            token_ids.extend(a.slots.iter().filter_map(|s| match s {
                Slot::Token(id) => Some(*id),
                Slot::Audio { .. } => None,
            }));
        }
        if let Some(&bad) = token_ids.iter().find(|&&id| id >= self.cfg.vocab) {
            return Err(Error::Input(format!("token id {bad} outside vocabulary {}", self.cfg.vocab)));
        }
        let mut parts = Vec::with_capacity(audio.len() + 1);
        let mut next = 0;
        if !token_ids.is_empty() {
            let table = g.param(store, self.tok_emb);
            parts.push(g.gather_rows(table, &token_ids));
            next = token_ids.len();
        }
        for &a in audio {
            audio_base.push(next);
            next += g.value(a).rows();
            parts.push(a);
        }
        let mut tok_cursor = 0;
        let mut order = Vec::with_capacity(positions.len());
        for a in batch {
            for s in &a.slots {
                match *s {
                    Slot::Token(_) => {
                        order.push(tok_cursor);
                        tok_cursor += 1;
                    }
                    Slot::Audio { source, row } => {
                        let src = audio.get(source).ok_or_else(|| Error::Input(format!("audio source {source} missing")))?;
                        if row >= g.value(*src).rows() {
                            return Err(Error::Input(format!("audio source {source} has no row {row}")));
                        }
                        order.push(audio_base[source] + row);
                    }
                }
            }
        }
        let pool = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) };
        let x = g.gather_rows(pool, &order);
        let pos = match self.pos_emb {
            Some(id) => {
                let table = g.param(store, id);
                g.gather_rows(table, &positions)
            }
            None => {
                let table = sinusoid_table(self.cfg.context, self.cfg.d_model);
                let mut rows = Tensor2D::zeros(positions.len(), self.cfg.d_model);
                for (r, &p) in positions.iter().enumerate() {
                    rows.row_mut(r).copy_from_slice(table.row(p));
                }
                g.input(rows, false)
            }
        };
        Ok(g.add(x, pos))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, batch: &[PromptAssembly], audio: &[Var], offsets: &[usize]) -> Result<LmOutput> {
        let mut h = self.embed(g, store, batch, audio, offsets)?;
        let mut ranges: Vec<KeyRange> = Vec::new();
        let mut starts = Vec::with_capacity(batch.len());
        let mut start = 0;
        for a in batch {
            starts.push(start);
            ranges.extend((0..a.len()).map(|i| (start, start + i + 1)));
            start += a.len();
        }
        for block in &self.blocks {
            h = block.forward(g, store, h, ranges.clone());
        }
        let h = self.ln_f.forward(g, store, h);
        Ok(LmOutput { logits: self.head.forward(g, store, h), starts })
    }

    /// Mean next-token cross-entropy over all response positions in the batch.
    pub fn ntp_loss(&self, g: &mut Graph, store: &ParamStore, batch: &[PromptAssembly], audio: &[Var], offsets: &[usize]) -> Result<Var> {
        if !batch.iter().any(PromptAssembly::has_response) {
            return Err(Error::Input("no response positions in batch".into()));
        }
        let out = self.forward(g, store, batch, audio, offsets)?;
        let mut targets = Vec::new();
        let mut mask = Vec::new();
        for a in batch {
            for p in 0..a.len() {
                // Row p predicts slot p + 1.
                match (a.slots.get(p + 1), a.loss_mask.get(p + 1)) {
                    (Some(Slot::Token(id)), Some(true)) => {
                        targets.push(*id);
                        mask.push(true);
                    }
                    _ => {
                        targets.push(0);
                        mask.push(false);
                    }
                }
            }
        }
        Ok(g.cross_entropy(out.logits, &targets, &mask))
    }

    /// Greedy decoding of every prefix until the end marker or `max_tokens`.
    /// The full forward pass is recomputed per step.
    pub fn generate(&self, store: &ParamStore, prefixes: &[PromptAssembly], audio: &[Tensor2D], max_tokens: usize) -> Result<Vec<Vec<usize>>> {
        let mut seqs: Vec<PromptAssembly> = prefixes.to_vec();
        let mut outputs = vec![Vec::new(); seqs.len()];
        let mut live: Vec<usize> = (0..seqs.len()).collect();
        for _ in 0..max_tokens {
            live.retain(|&i| seqs[i].len() < self.cfg.context);
            if live.is_empty() {
                break;
            }
            let mut g = Graph::new();
            let audio_vars: Vec<Var> = audio.iter().map(|a| g.input(a.clone(), false)).collect();
            let batch: Vec<PromptAssembly> = live.iter().map(|&i| seqs[i].clone()).collect();
            let out = self.forward(&mut g, store, &batch, &audio_vars, &[])?;
            let logits = g.value(out.logits);
            let mut still = Vec::with_capacity(live.len());
            for (k, &i) in live.iter().enumerate() {
                let row = logits.row(out.starts[k] + batch[k].len() - 1);
                let next = argmax(row);
                seqs[i].push_token(next, true);
                if next != END {
                    outputs[i].push(next);
                    still.push(i);
                }
            }
            live = still;
        }
        Ok(outputs)
    }

    /// Rows of the (input) token embedding table.
    pub fn token_embeddings(&self, store: &ParamStore, ids: &[usize]) -> Tensor2D {
        let table = &store.get(self.tok_emb).value;
        let mut out = Tensor2D::zeros(ids.len(), table.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(table.row(id));
        }
        out
    }
}

/// Lowest index among maximal entries.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}
