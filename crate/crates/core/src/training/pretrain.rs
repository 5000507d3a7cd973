//! Stand-alone stages: text pretraining of the LM and CTC-only pretraining of
//! the encoder.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schedule::lr_at;
use crate::backbone::PromptAssembly;
use crate::compute::{AdamW, Graph};
use crate::config::KvConfig;
use crate::ctc::{ctc_greedy_path, ctc_loss_node};
use crate::error::{Error, Result};
use crate::model::SpeechLlm;
use crate::synthdata::TaskSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl StageConfig {
    pub fn apply(&mut self, kv: &KvConfig, prefix: &str) -> Result<()> {
        kv.read(&format!("{prefix}.steps"), &mut self.steps)?;
        kv.read(&format!("{prefix}.batch_size"), &mut self.batch_size)?;
        kv.read(&format!("{prefix}.peak_lr"), &mut self.peak_lr)?;
        kv.read(&format!("{prefix}.warmup_steps"), &mut self.warmup_steps)?;
        kv.read(&format!("{prefix}.weight_decay"), &mut self.weight_decay)?;
        kv.read(&format!("{prefix}.seed"), &mut self.seed)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps == 0 || self.warmup_steps >= self.steps {
            return Err(Error::Config(format!("stage needs steps > warmup_steps and batch_size > 0: {self:?}")));
        }
        Ok(())
    }
}

/// Per-step scalar reported to the caller's logger.
pub type StepLog<'a> = &'a mut dyn FnMut(usize, f64);

fn check_finite(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { step, detail: format!("loss became {loss}") })
    }
}

/// Train the `lm.*` parameters on text-only samples. Each sequence is placed
/// at a random position offset so that every position of the context is seen.
pub fn pretrain_lm(model: &mut SpeechLlm, corpus: &[TaskSample], cfg: &StageConfig, log: StepLog) -> Result<()> {
    cfg.validate()?;
    let assemblies: Vec<PromptAssembly> = corpus.iter().map(|s| model.text_assembly(s, true)).collect::<Result<_>>()?;
    let context = model.cfg.lm_context;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut order: Vec<usize> = (0..assemblies.len()).collect();
    let mut cursor = order.len();
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        let mut offsets = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let a = &assemblies[order[cursor]];
            cursor += 1;
            offsets.push(rng.gen_range(0..=context - a.len()));
            batch.push(a.clone());
        }
        let mut g = Graph::new();
        let loss = model.lm.ntp_loss(&mut g, &model.store, &batch, &[], &offsets)?;
        let value = g.value(loss).item();
        check_finite(step, value)?;
        let grads = g.backward(loss);
        g.accumulate_param_grads(&grads, &mut model.store);
        opt.step(&mut model.store, lr_at(step, cfg.warmup_steps, cfg.steps, cfg.peak_lr));
        log(step, value);
    }
    Ok(())
}

/// Exact-match rate of greedy text-only answers, overall and per task.
pub fn text_exact_match(model: &SpeechLlm, samples: &[TaskSample], batch_size: usize) -> Result<(f64, BTreeMap<String, f64>)> {
    if samples.is_empty() {
        return Err(Error::Input("empty evaluation set".into()));
    }
    let mut per_task: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for chunk in samples.chunks(batch_size.max(1)) {
        let prefixes: Vec<PromptAssembly> = chunk.iter().map(|s| model.text_assembly(s, false)).collect::<Result<_>>()?;
        let outs = model.lm.generate(&model.store, &prefixes, &[], 12)?;
        for (s, out) in chunk.iter().zip(outs) {
            let e = per_task.entry(s.task.as_str().to_string()).or_default();
            e.0 += 1;
            e.1 += usize::from(model.tokenizer.decode(&out) == s.reference_answer);
        }
    }
    let hits: usize = per_task.values().map(|v| v.1).sum();
    let rates = per_task.into_iter().map(|(k, (n, h))| (k, h as f64 / n as f64)).collect();
    Ok((hits as f64 / samples.len() as f64, rates))
}

/// Train `encoder.*` and `ctc_head.*` with the CTC loss alone on rendered
/// content.
pub fn pretrain_encoder(model: &mut SpeechLlm, corpus: &[TaskSample], cfg: &StageConfig, log: StepLog) -> Result<()> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.weight_decay);
    model.store.set_trainable("lm.", false);
    for step in 0..cfg.steps {
        let picks: Vec<&TaskSample> = (0..cfg.batch_size).map(|_| &corpus[rng.gen_range(0..corpus.len())]).collect();
        let feats = picks.iter().map(|s| model.content_features(s)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = feats.iter().collect();
        let mut g = Graph::new();
        let out = model.encoder.forward(&mut g, &model.store, &refs)?;
        let mut terms = Vec::with_capacity(picks.len());
        for (i, s) in picks.iter().enumerate() {
            let (start, len) = out.spans[i];
            let target = model.ctc_target(&s.audio_tokens)?;
            let lp = g.slice_rows(out.logp, start, start + len);
            let node = ctc_loss_node(&mut g, lp, &target)?;
            terms.push((node, 1.0 / (picks.len() * target.len()) as f64));
        }
        let loss = g.linear_combination(&terms);
        let value = g.value(loss).item();
        check_finite(step, value)?;
        let grads = g.backward(loss);
        g.accumulate_param_grads(&grads, &mut model.store);
        opt.step(&mut model.store, lr_at(step, cfg.warmup_steps, cfg.steps, cfg.peak_lr));
        log(step, value);
    }
    model.store.set_trainable("lm.", true);
    Ok(())
}

/// Token error rate of greedy CTC decoding against the content.
pub fn ctc_token_error(model: &SpeechLlm, samples: &[TaskSample]) -> Result<f64> {
    let (mut errors, mut total) = (0usize, 0usize);
    for chunk in samples.chunks(32) {
        let feats = chunk.iter().map(|s| model.content_features(s)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = feats.iter().collect();
        let mut g = Graph::new();
        let out = model.encoder.forward(&mut g, &model.store, &refs)?;
        for (i, s) in chunk.iter().enumerate() {
            let hyp = ctc_greedy_path(&out.utterance_logp(&g, i)?).collapse();
            let target = model.ctc_target(&s.audio_tokens)?;
            errors += crate::ifr::edit_distance(hyp.tokens(), target.tokens());
            total += target.len();
        }
    }
    Ok(errors as f64 / total.max(1) as f64)
}
