//! Alignment training of the adapter (and encoder) against the frozen LM, and
//! evaluation of the resulting speech-LLM.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{alignment_schedule, greedy_probability, lr_at, AlignmentPolicy};
use crate::adapter::AdapterMode;
use crate::backbone::{assemble_prompt, PromptAssembly, Segment};
use crate::compute::{AdamW, Graph, KeyRange, Tensor2D, Var};
use crate::config::KvConfig;
use crate::ctc::{ctc_forced_align, ctc_greedy_path, ctc_loss_node, AlignmentMode, TargetSequence};
use crate::error::{Error, Result};
use crate::ifr::{asr_token_error, compute_ifr, cosine_report, CosineReport, EvalResult, IfrReport};
use crate::model::SpeechLlm;
use crate::synthdata::{InstructionSource, PromptOrder, TaskSample};
use crate::windowing::{path_to_windows, WindowSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PresetId {
    E1,
    E2,
    E3,
    E4,
    #[serde(rename = "qformer_baseline")]
    QformerBaseline,
    #[serde(rename = "mlp_baseline")]
    MlpBaseline,
    #[serde(rename = "alignformer")]
    AlignFormer,
}

impl PresetId {
    pub const ALL: [PresetId; 7] =
        [Self::E1, Self::E2, Self::E3, Self::E4, Self::QformerBaseline, Self::MlpBaseline, Self::AlignFormer];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::E1 => "E1",
            Self::E2 => "E2",
            Self::E3 => "E3",
            Self::E4 => "E4",
            Self::QformerBaseline => "qformer_baseline",
            Self::MlpBaseline => "mlp_baseline",
            Self::AlignFormer => "alignformer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            let valid: Vec<&str> = Self::ALL.iter().map(|p| p.as_str()).collect();
            Error::Config(format!("unknown preset {s:?}; valid presets: {}", valid.join(", ")))
        })
    }
}

/// Experiment grid entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPreset {
    pub id: PresetId,
    pub order: PromptOrder,
    pub instruction_source: InstructionSource,
    pub adapter: AdapterMode,
    /// Default CTC weight of the preset.
    pub lambda_ctc: f64,
}

impl ExperimentPreset {
    /// `order` overrides the default order of the adapter presets; the audio
    /// position presets have a fixed order.
    pub fn new(id: PresetId, order: Option<PromptOrder>) -> Result<Self> {
        use InstructionSource::*;
        use PromptOrder::*;
        let (default_order, source, adapter, lambda_ctc, fixed) = match id {
            PresetId::E1 => (AudioFirst, Text, AdapterMode::Mlp, 0.0, true),
            PresetId::E2 => (InstructionFirst, Text, AdapterMode::Mlp, 0.0, true),
            PresetId::E3 => (InstructionFirst, RenderedAudio, AdapterMode::Mlp, 0.0, true),
            PresetId::E4 => (InstructionFirst, RenderedAudioX5, AdapterMode::Mlp, 0.0, true),
            PresetId::MlpBaseline => (AudioFirst, Text, AdapterMode::Mlp, 0.0, false),
            PresetId::QformerBaseline => (AudioFirst, Text, AdapterMode::FixedWindow(4), 0.0, false),
            PresetId::AlignFormer => (AudioFirst, Text, AdapterMode::AlignFormer, 0.3, false),
        };
        let order = match order {
            Some(o) if fixed && o != default_order => {
                return Err(Error::Config(format!("preset {} always uses {}", id.as_str(), default_order.as_str())))
            }
            Some(o) => o,
            None => default_order,
        };
        Ok(Self { id, order, instruction_source: source, adapter, lambda_ctc })
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.id.as_str(), self.order.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtcInit {
    Pretrained,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub batch_size: usize,
    /// `None` uses the preset's weight.
    pub lambda_ctc: Option<f64>,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub alignment_mode: AlignmentPolicy,
    pub p_greedy_max: f64,
    pub ctc_init: CtcInit,
    pub train_encoder: bool,
    pub n_train: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 1500,
            batch_size: 16,
            lambda_ctc: None,
            peak_lr: 2e-3,
            warmup_steps: 75,
            weight_decay: 0.01,
            alignment_mode: AlignmentPolicy::Mixed,
            p_greedy_max: 0.5,
            ctc_init: CtcInit::Pretrained,
            train_encoder: true,
            n_train: 4000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn apply(&mut self, kv: &KvConfig) -> Result<()> {
        kv.read("train.total_steps", &mut self.total_steps)?;
        kv.read("train.batch_size", &mut self.batch_size)?;
        kv.read_with("train.lambda_ctc", &mut self.lambda_ctc, |s| {
            s.parse::<f64>().map(Some).map_err(|e| Error::Config(e.to_string()))
        })?;
        kv.read("train.peak_lr", &mut self.peak_lr)?;
        kv.read("train.warmup_steps", &mut self.warmup_steps)?;
        kv.read("train.weight_decay", &mut self.weight_decay)?;
        kv.read_with("train.alignment_mode", &mut self.alignment_mode, AlignmentPolicy::parse)?;
        kv.read("train.p_greedy_max", &mut self.p_greedy_max)?;
        kv.read_with("train.ctc_init", &mut self.ctc_init, |s| match s {
            "pretrained" => Ok(CtcInit::Pretrained),
            "random" => Ok(CtcInit::Random),
            other => Err(Error::Config(format!("unknown ctc_init {other:?}"))),
        })?;
        kv.read("train.train_encoder", &mut self.train_encoder)?;
        kv.read("train.n_train", &mut self.n_train)?;
        kv.read("train.seed", &mut self.seed)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_ctc.is_some_and(|l| l < 0.0) {
            return Err(Error::Config("lambda_ctc must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.p_greedy_max) {
            return Err(Error::Config("p_greedy_max must lie in [0, 1]".into()));
        }
        if self.warmup_steps >= self.total_steps || self.batch_size == 0 || self.n_train == 0 {
            return Err(Error::Config("need warmup_steps < total_steps and positive batch_size, n_train".into()));
        }
        Ok(())
    }

    pub fn lambda(&self, preset: &ExperimentPreset) -> f64 {
        self.lambda_ctc.unwrap_or(preset.lambda_ctc)
    }
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub lr: f64,
    pub ntp_loss: f64,
    pub ctc_loss: f64,
    pub combined: f64,
    pub p_greedy: f64,
    /// Share of batch utterances whose greedy path has as many tokens as the target.
    pub alignment_m_agreement: f64,
}

pub const METRICS_HEADER: &str = "step,lr,ntp_loss,ctc_loss,combined,p_greedy,alignment_m_agreement";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.6},{:.6}\n",
            r.step, r.lr, r.ntp_loss, r.ctc_loss, r.combined, r.p_greedy, r.alignment_m_agreement
        ));
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub metrics: Vec<MetricRow>,
    /// Samples left out of the NTP loss because their alignment was empty.
    pub skipped_empty_alignment: usize,
}

/// Encoded audio of one batch: adapter rows plus where each utterance's rows
/// start and how many there are.
struct AudioBatch {
    rows: Option<Var>,
    segments: Vec<(usize, usize)>,
    ctc_terms: Vec<(Var, f64)>,
    agreement: f64,
}

/// Speech inputs of a sample: the content utterance and, for spoken
/// instructions, the instruction utterance.
fn utterances(model: &SpeechLlm, sample: &TaskSample, spoken_instruction: bool) -> Result<Vec<(Tensor2D, TargetSequence)>> {
    let mut out = vec![(model.content_features(sample)?, model.ctc_target(&sample.audio_tokens)?)];
    if spoken_instruction {
        out.push((model.instruction_features(sample)?, model.ctc_target(&sample.instruction_text)?));
    }
    Ok(out)
}

/// Encoder + alignment + adapter over a list of utterances.
fn encode_audio(
    model: &SpeechLlm,
    g: &mut Graph,
    utts: &[(Tensor2D, TargetSequence)],
    mode: AlignmentMode,
    ctc_weight: f64,
) -> Result<AudioBatch> {
    let adapter = model.adapter()?;
    let feats: Vec<&Tensor2D> = utts.iter().map(|u| &u.0).collect();
    let enc = model.encoder.forward(g, &model.store, &feats)?;
    let mut windows: Vec<KeyRange> = Vec::new();
    let mut segments = Vec::with_capacity(utts.len());
    let mut ctc_terms = Vec::new();
    let mut agree = 0usize;
    for (i, (_, target)) in utts.iter().enumerate() {
        let (start, len) = enc.spans[i];
        let logp = enc.utterance_logp(g, i)?;
        let greedy = ctc_greedy_path(&logp);
        agree += usize::from(greedy.collapse().len() == target.len());
        if ctc_weight > 0.0 {
            let lp = g.slice_rows(enc.logp, start, start + len);
            let node = ctc_loss_node(g, lp, target)?;
            ctc_terms.push((node, ctc_weight / target.len() as f64));
        }
        let local: Vec<KeyRange> = match adapter.static_windows(len) {
            Some(w) => w,
            None => {
                let path = match mode {
                    AlignmentMode::Greedy => greedy,
                    AlignmentMode::Forced => ctc_forced_align(&logp, target)?,
                };
                let spec: WindowSpec = path_to_windows(&path);
                spec.key_ranges(0)
            }
        };
        segments.push((windows.len(), local.len()));
        windows.extend(local.into_iter().map(|(lo, hi)| (start + lo, start + hi)));
    }
    let rows = if windows.is_empty() { None } else { Some(adapter.forward(g, &model.store, enc.enc, &windows)?) };
    Ok(AudioBatch { rows, segments, ctc_terms, agreement: agree as f64 / utts.len() as f64 })
}

fn audio_segment((start, rows): (usize, usize)) -> Segment {
    Segment::Audio { source: 0, start, rows }
}

/// Adapter training against the frozen LM. The LM stays bit-identical.
pub fn train_alignment(
    model: &mut SpeechLlm,
    preset: &ExperimentPreset,
    cfg: &TrainConfig,
    corpus: &[TaskSample],
    log: &mut dyn FnMut(&MetricRow),
) -> Result<TrainSummary> {
    cfg.validate()?;
    model.adapter()?;
    let lambda = cfg.lambda(preset);
    let spoken_instruction = preset.instruction_source.is_audio();
    model.store.set_trainable("lm.", false);
    model.store.set_trainable("encoder.", cfg.train_encoder);
    model.store.set_trainable("ctc_head.", cfg.train_encoder || lambda > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa1f0);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut cursor = order.len();
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut summary = TrainSummary::default();
    for step in 0..cfg.total_steps {
        let mode = alignment_schedule(step, cfg.total_steps, cfg.alignment_mode, cfg.p_greedy_max, &mut rng);
        let mut picks = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picks.push(&corpus[order[cursor]]);
            cursor += 1;
        }
        let mut utts = Vec::new();
        for s in &picks {
            utts.extend(utterances(model, s, spoken_instruction)?);
        }
        let mut g = Graph::new();
        let audio = encode_audio(model, &mut g, &utts, mode, lambda)?;
        let per = if spoken_instruction { 2 } else { 1 };
        let mut batch: Vec<PromptAssembly> = Vec::with_capacity(picks.len());
        for (k, s) in picks.iter().enumerate() {
            let content = audio.segments[k * per];
            if content.1 == 0 || (spoken_instruction && audio.segments[k * per + 1].1 == 0) {
                summary.skipped_empty_alignment += 1;
                continue;
            }
            let instruction =
                if spoken_instruction { audio_segment(audio.segments[k * per + 1]) } else { Segment::Text(model.encode(&s.instruction_text)?) };
            let response = model.encode(&s.reference_answer)?;
            batch.push(assemble_prompt(preset.order, &audio_segment(content), &instruction, &response, model.tokenizer.separator(), model.cfg.lm_context)?);
        }
        let ntp = match (audio.rows, batch.is_empty()) {
            (Some(rows), false) => Some(model.lm.ntp_loss(&mut g, &model.store, &batch, &[rows], &[])?),
            _ => None,
        };
        let ntp_value = ntp.map_or(0.0, |v| g.value(v).item());
        let ctc_value: f64 = audio.ctc_terms.iter().map(|&(v, c)| c * g.value(v).item()).sum::<f64>() / picks.len() as f64;
        let mut terms: Vec<(Var, f64)> = audio.ctc_terms.iter().map(|&(v, c)| (v, c / picks.len() as f64)).collect();
        if let Some(v) = ntp {
            terms.push((v, 1.0));
        }
        let raw_ctc = if lambda > 0.0 { ctc_value / lambda } else { 0.0 };
        let combined = super::schedule::combined_loss(ntp_value, raw_ctc, lambda)
            .map_err(|_| Error::Diverged { step, detail: format!("ntp={ntp_value} ctc={raw_ctc}") })?;
        let lr = lr_at(step, cfg.warmup_steps, cfg.total_steps, cfg.peak_lr);
        if !terms.is_empty() {
            let loss = g.linear_combination(&terms);
            let grads = g.backward(loss);
            g.accumulate_param_grads(&grads, &mut model.store);
            opt.step(&mut model.store, lr);
        }
        let row = MetricRow {
            step,
            lr,
            ntp_loss: ntp_value,
            ctc_loss: raw_ctc,
            combined,
            p_greedy: greedy_probability(step, cfg.total_steps, cfg.alignment_mode, cfg.p_greedy_max),
            alignment_m_agreement: audio.agreement,
        };
        log(&row);
        summary.metrics.push(row);
    }
    Ok(summary)
}

/// How prompts are laid out at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalTemplate {
    pub order: PromptOrder,
    pub spoken_instruction: bool,
}

/// Greedy-alignment inference over `samples`, returning decoded responses.
pub fn generate_responses(model: &SpeechLlm, samples: &[TaskSample], template: EvalTemplate, batch_size: usize) -> Result<Vec<EvalResult>> {
    let mut results = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let mut utts = Vec::new();
        for s in chunk {
            utts.extend(utterances(model, s, template.spoken_instruction)?);
        }
        let mut g = Graph::new();
        let audio = encode_audio(model, &mut g, &utts, AlignmentMode::Greedy, 0.0)?;
        let rows = audio.rows.map(|v| g.value(v).clone()).unwrap_or_else(|| Tensor2D::zeros(0, model.cfg.lm_d_model));
        let per = if template.spoken_instruction { 2 } else { 1 };
        let mut prefixes = Vec::with_capacity(chunk.len());
        for (k, s) in chunk.iter().enumerate() {
            let instruction = if template.spoken_instruction {
                audio_segment(audio.segments[k * per + 1])
            } else {
                Segment::Text(model.encode(&s.instruction_text)?)
            };
            // An empty alignment simply contributes no audio rows.
            prefixes.push(assemble_prompt(
                template.order,
                &audio_segment(audio.segments[k * per]),
                &instruction,
                &[],
                model.tokenizer.separator(),
                model.cfg.lm_context,
            )?);
        }
        let outs = model.lm.generate(&model.store, &prefixes, &[rows], 12)?;
        for (s, out) in chunk.iter().zip(outs) {
            results.push(EvalResult {
                id: s.id.clone(),
                task: s.task,
                response: model.tokenizer.decode(&out),
                reference: s.reference_answer.clone(),
            });
        }
    }
    Ok(results)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ifr: IfrReport,
    pub asr_token_error: f64,
    pub n_asr: usize,
}

/// Zero-shot IFR with the instruction-first text template, plus ASR token
/// error with the training template.
pub fn evaluate(
    model: &SpeechLlm,
    preset: &ExperimentPreset,
    zeroshot: &[TaskSample],
    asr: &[TaskSample],
    alphabet_threshold: f64,
) -> Result<(EvalReport, Vec<EvalResult>)> {
    let zs_template = EvalTemplate { order: PromptOrder::InstructionFirst, spoken_instruction: false };
    let mut results = generate_responses(model, zeroshot, zs_template, 64)?;
    let ifr = compute_ifr(zeroshot, &results, alphabet_threshold)?;
    let asr_template = EvalTemplate { order: preset.order, spoken_instruction: preset.instruction_source.is_audio() };
    let asr_results = generate_responses(model, asr, asr_template, 64)?;
    let asr_token_error = asr_token_error(&asr_results)?;
    results.extend(asr_results);
    Ok((EvalReport { ifr, asr_token_error, n_asr: asr.len() }, results))
}

/// Cosine similarity between forced-alignment adapter rows and the LM's
/// embeddings of the transcript tokens.
pub fn embedding_cosine(model: &SpeechLlm, samples: &[TaskSample]) -> Result<CosineReport> {
    let mut pairs = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        let utts: Vec<_> = chunk.iter().map(|s| utterances(model, s, false).map(|mut u| u.remove(0))).collect::<Result<_>>()?;
        let mut g = Graph::new();
        let audio = encode_audio(model, &mut g, &utts, AlignmentMode::Forced, 0.0)?;
        let Some(rows) = audio.rows else { continue };
        let rows = g.value(rows);
        for (k, s) in chunk.iter().enumerate() {
            let (start, n) = audio.segments[k];
            let ids = model.encode(&s.audio_tokens)?;
            if n != ids.len() {
                continue;
            }
            pairs.push((rows.rows_slice(start, start + n), model.lm.token_embeddings(&model.store, &ids)));
        }
    }
    cosine_report(&pairs)
}
