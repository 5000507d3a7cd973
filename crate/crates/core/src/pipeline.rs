//! Artifact-level stages: dataset generation, pretraining, adapter training,
//! evaluation and table assembly. Each stage reads and writes plain files in
//! a directory so the command-line tool and the tests share one code path.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};


use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::AdapterMode;
use crate::backbone::Tokenizer;
use crate::compute::{Checkpoint, Graph};
use crate::ctc::{ctc_forced_align, ctc_greedy_path, AlignmentMode};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::ifr::{parse_csv, report_rows, rows_to_csv, rows_to_text, CosineReport, EvalResult, TableRow, DEFAULT_ALPHABET_THRESHOLD};
use crate::windowing::{format_window_line, path_to_windows};
use crate::model::{header_model, ModelConfig, SpeechLlm};
use crate::synthdata::{
    gen_alignment_corpus, gen_pretrain_corpus, gen_zeroshot_eval, read_f32_blob, read_jsonl, render_speech, write_f32_blob, write_jsonl,
    DatasetRecord, FeatureRef, InstructionSource, PromptOrder, Task, TaskSample,
};
use crate::training::{
    ctc_token_error, embedding_cosine, evaluate, metrics_csv, pretrain_encoder, pretrain_lm, text_exact_match, train_alignment, CtcInit,
    EvalReport, ExperimentPreset, PresetId, StageConfig, TrainConfig,
};

pub const LM_CHECKPOINT: &str = "lm.ckpt";
pub const ENCODER_CHECKPOINT: &str = "encoder.ckpt";
pub const MODEL_CHECKPOINT: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Corpus sizes and the generation seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub seed: u64,
    pub n_pretrain: usize,
    pub n_text_eval: usize,
    pub n_align: usize,
    pub n_zeroshot: usize,
    pub n_asr_eval: usize,
    /// Write features as f32 blobs instead of re-rendering from seeds.
    pub feature_blobs: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { seed: 1, n_pretrain: 20000, n_text_eval: 500, n_align: 4000, n_zeroshot: 150, n_asr_eval: 100, feature_blobs: false }
    }
}

/// Everything a pipeline run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub lm_stage: StageConfig,
    /// Copies of the multiple-choice samples in the LM corpus.
    pub lm_hard_task_copies: usize,
    pub encoder_stage: StageConfig,
    pub train: TrainConfig,
    pub exact_match_gate: f64,
    pub alphabet_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            data: DataConfig::default(),
            lm_stage: StageConfig { steps: 3500, batch_size: 32, peak_lr: 3e-3, warmup_steps: 175, weight_decay: 0.01, seed: 3 },
            lm_hard_task_copies: 2,
            encoder_stage: StageConfig { steps: 2000, batch_size: 16, peak_lr: 3e-3, warmup_steps: 100, weight_decay: 0.01, seed: 5 },
            train: TrainConfig::default(),
            exact_match_gate: 0.95,
            alphabet_threshold: DEFAULT_ALPHABET_THRESHOLD,
        }
    }
}

impl PipelineConfig {
    /// Defaults overridden by `kv`; unknown keys are an error.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut c = Self::default();
        c.model.apply(kv)?;
        let d = &mut c.data;
        kv.read("data.seed", &mut d.seed)?;
        kv.read("data.n_pretrain", &mut d.n_pretrain)?;
        kv.read("data.n_text_eval", &mut d.n_text_eval)?;
        kv.read("data.n_align", &mut d.n_align)?;
        kv.read("data.n_zeroshot", &mut d.n_zeroshot)?;
        kv.read("data.n_asr_eval", &mut d.n_asr_eval)?;
        kv.read("data.feature_blobs", &mut d.feature_blobs)?;
        c.lm_stage.apply(kv, "pretrain.lm")?;
        kv.read("pretrain.lm.hard_task_copies", &mut c.lm_hard_task_copies)?;
        c.encoder_stage.apply(kv, "pretrain.encoder")?;
        c.train.apply(kv)?;
        kv.read("eval.exact_match_gate", &mut c.exact_match_gate)?;
        kv.read("eval.alphabet_threshold", &mut c.alphabet_threshold)?;
        kv.finish()?;
        if c.lm_hard_task_copies == 0 {
            return Err(Error::Config("pretrain.lm.hard_task_copies must be at least 1".into()));
        }
        Ok(c)
    }

    /// Every setting under the key it is read from, so that the output
    /// parses back into the same config.
    pub fn to_kv_pairs(&self) -> Vec<(String, String)> {
        let m = &self.model;
        let r = &m.render;
        let t = &self.train;
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("render.frames_lo", r.frames_per_token.0.to_string());
        put("render.frames_hi", r.frames_per_token.1.to_string());
        put("render.feature_dim", r.feature_dim.to_string());
        put("render.noise_std", r.noise_std.to_string());
        put("render.speaker_offset_std", r.speaker_offset_std.to_string());
        put("render.prototype_seed", r.prototype_seed.to_string());
        put("encoder.subsample_factor", m.subsample_factor.to_string());
        put("encoder.layers", m.enc_layers.to_string());
        put("encoder.d_enc", m.d_enc.to_string());
        put("encoder.heads", m.enc_heads.to_string());
        put("encoder.ffn", m.enc_ffn.to_string());
        put("lm.d_model", m.lm_d_model.to_string());
        put("lm.layers", m.lm_layers.to_string());
        put("lm.heads", m.lm_heads.to_string());
        put("lm.ffn", m.lm_ffn.to_string());
        put("lm.context", m.lm_context.to_string());
        put("lm.learned_positions", m.lm_learned_positions.to_string());
        put("adapter.blocks", m.adapter_blocks.to_string());
        put("adapter.heads", m.adapter_heads.to_string());
        put("adapter.ffn", m.adapter_ffn.to_string());
        put("adapter.window_positions", m.adapter_window_positions.to_string());
        let d = &self.data;
        put("data.seed", d.seed.to_string());
        put("data.n_pretrain", d.n_pretrain.to_string());
        put("data.n_text_eval", d.n_text_eval.to_string());
        put("data.n_align", d.n_align.to_string());
        put("data.n_zeroshot", d.n_zeroshot.to_string());
        put("data.n_asr_eval", d.n_asr_eval.to_string());
        put("data.feature_blobs", d.feature_blobs.to_string());
        for (prefix, st) in [("pretrain.lm", &self.lm_stage), ("pretrain.encoder", &self.encoder_stage)] {
            put(&format!("{prefix}.steps"), st.steps.to_string());
            put(&format!("{prefix}.batch_size"), st.batch_size.to_string());
            put(&format!("{prefix}.peak_lr"), st.peak_lr.to_string());
            put(&format!("{prefix}.warmup_steps"), st.warmup_steps.to_string());
            put(&format!("{prefix}.weight_decay"), st.weight_decay.to_string());
            put(&format!("{prefix}.seed"), st.seed.to_string());
        }
        put("pretrain.lm.hard_task_copies", self.lm_hard_task_copies.to_string());
        put("train.total_steps", t.total_steps.to_string());
        put("train.batch_size", t.batch_size.to_string());
        if let Some(l) = t.lambda_ctc {
            put("train.lambda_ctc", l.to_string());
        }
        put("train.peak_lr", t.peak_lr.to_string());
        put("train.warmup_steps", t.warmup_steps.to_string());
        put("train.weight_decay", t.weight_decay.to_string());
        put("train.alignment_mode", t.alignment_mode.as_str().to_string());
        put("train.p_greedy_max", t.p_greedy_max.to_string());
        put("train.ctc_init", match t.ctc_init {
            CtcInit::Pretrained => "pretrained".to_string(),
            CtcInit::Random => "random".to_string(),
        });
        put("train.train_encoder", t.train_encoder.to_string());
        put("train.n_train", t.n_train.to_string());
        put("train.seed", t.seed.to_string());
        put("eval.exact_match_gate", self.exact_match_gate.to_string());
        put("eval.alphabet_threshold", self.alphabet_threshold.to_string());
        out
    }

    pub fn to_kv_text(&self) -> String {
        self.to_kv_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Name of the alignment-corpus file for an order/source pair.
pub fn align_split(order: PromptOrder, source: InstructionSource) -> String {
    format!("align_{}_{}", order.as_str(), source.as_str())
}

/// Name of the ASR evaluation file for an order/source pair.
pub fn asr_split(order: PromptOrder, source: InstructionSource) -> String {
    format!("asr_eval_{}_{}", order.as_str(), source.as_str())
}

/// The order/source pairs that have alignment and ASR splits.
pub const ALIGN_VARIANTS: [(PromptOrder, InstructionSource); 4] = [
    (PromptOrder::AudioFirst, InstructionSource::Text),
    (PromptOrder::InstructionFirst, InstructionSource::Text),
    (PromptOrder::InstructionFirst, InstructionSource::RenderedAudio),
    (PromptOrder::InstructionFirst, InstructionSource::RenderedAudioX5),
];

fn split_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.jsonl"))
}

fn write_split(dir: &Path, name: &str, samples: &[TaskSample], cfg: &PipelineConfig, with_audio: bool) -> Result<()> {
    let tok = Tokenizer::standard();
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let features = if !with_audio {
            FeatureRef::None
        } else {
            let r = render_speech(&tok.encode_text(&s.audio_tokens)?, &cfg.model.render, s.render_seed)?;
            if cfg.data.feature_blobs {
                let rel = format!("features/{name}/{}.f32", s.id);
                let path = dir.join(&rel);
                fs::create_dir_all(path.parent().expect("blob path has a parent"))?;
                write_f32_blob(&path, &r.features)?;
                FeatureRef::Blob { path: rel }
            } else {
                FeatureRef::Inline { frames_per_token: r.frames_per_token }
            }
        };
        records.push(DatasetRecord { sample: s.clone(), features });
    }
    write_jsonl(&split_path(dir, name), &records)
}

/// Read a split, checking that stored feature descriptions agree with what
/// the renderer produces under `cfg`.
pub fn load_split(dir: &Path, name: &str, cfg: &ModelConfig) -> Result<Vec<TaskSample>> {
    let path = split_path(dir, name);
    if !path.exists() {
        return Err(Error::Input(format!("missing dataset split {}", path.display())));
    }
    let tok = Tokenizer::standard();
    let records: Vec<DatasetRecord> = read_jsonl(&path)?;
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let check = || -> Result<crate::synthdata::Rendered> {
            render_speech(&tok.encode_text(&rec.sample.audio_tokens)?, &cfg.render, rec.sample.render_seed)
        };
        match &rec.features {
            FeatureRef::None => {}
            FeatureRef::Inline { frames_per_token } => {
                if &check()?.frames_per_token != frames_per_token {
                    return Err(Error::Input(format!("{}: frame counts of {} disagree with the render settings", path.display(), rec.sample.id)));
                }
            }
            FeatureRef::Blob { path: rel } => {
                let stored = read_f32_blob(&dir.join(rel))?;
                let fresh = check()?.features;
                let same = stored.shape() == fresh.shape()
                    && stored.data().iter().zip(fresh.data()).all(|(a, b)| (a - b).abs() <= 1e-6 * (1.0 + b.abs()));
                if !same {
                    return Err(Error::Input(format!("{rel}: features disagree with the render settings")));
                }
            }
        }
        out.push(rec.sample);
    }
    Ok(out)
}

/// Write every split into `dir`. Returns split names with their sizes.
pub fn generate_datasets(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<(String, usize)>> {
    fs::create_dir_all(dir)?;
    let d = &cfg.data;
    let mut written = Vec::new();
    let mut put = |name: String, samples: Vec<TaskSample>, audio: bool| -> Result<()> {
        write_split(dir, &name, &samples, cfg, audio)?;
        written.push((name, samples.len()));
        Ok(())
    };
    put("pretrain".into(), gen_pretrain_corpus(d.n_pretrain, d.seed)?, false)?;
    put("text_eval".into(), gen_pretrain_corpus(d.n_text_eval, d.seed.wrapping_add(1))?, false)?;
    for (k, &(order, source)) in ALIGN_VARIANTS.iter().enumerate() {
        let k = k as u64;
        put(align_split(order, source), gen_alignment_corpus(d.n_align, order, source, d.seed.wrapping_add(10 + k))?, true)?;
        put(asr_split(order, source), gen_alignment_corpus(d.n_asr_eval, order, source, d.seed.wrapping_add(20 + k))?, true)?;
    }
    put("zeroshot_eval".into(), gen_zeroshot_eval(d.n_zeroshot, d.seed.wrapping_add(30))?, true)?;
    Ok(written)
}

/// The LM corpus with the multiple-choice samples repeated.
pub fn weighted_lm_corpus(corpus: Vec<TaskSample>, hard_copies: usize) -> Vec<TaskSample> {
    let mut out = Vec::with_capacity(corpus.len() * 2);
    for s in corpus {
        let k = if matches!(s.task, Task::McClassify | Task::CountMc) { hard_copies } else { 1 };
        out.extend(std::iter::repeat(s).take(k));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub exact_match: f64,
    pub per_task_exact_match: BTreeMap<String, f64>,
    pub gate: f64,
    pub gate_passed: bool,
    pub encoder_ctc_token_error: f64,
    pub lm_checksum: String,
    pub lm_seconds: f64,
    pub encoder_seconds: f64,
}

/// Text pretraining of the LM followed by CTC pretraining of the encoder.
/// Writes both checkpoints and the report; the caller decides what a failed
/// gate means.
pub fn run_pretrain(cfg: &PipelineConfig, data_dir: &Path, out_dir: &Path) -> Result<PretrainReport> {
    fs::create_dir_all(out_dir)?;
    let tok = Tokenizer::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.lm_stage.seed);
    let mut model = SpeechLlm::new(cfg.model.clone(), tok, None, &mut rng)?;
    let corpus = weighted_lm_corpus(load_split(data_dir, "pretrain", &cfg.model)?, cfg.lm_hard_task_copies);
    let held_out = load_split(data_dir, "text_eval", &cfg.model)?;

    let t = Instant::now();
    let mut window = 0.0;
    pretrain_lm(&mut model, &corpus, &cfg.lm_stage, &mut |step, loss| {
        window += loss;
        if (step + 1) % 500 == 0 {
            info!("lm step {} loss {:.4}", step + 1, window / 500.0);
            window = 0.0;
        }
    })?;
    let lm_seconds = t.elapsed().as_secs_f64();
    let (exact_match, per_task_exact_match) = text_exact_match(&model, &held_out, 64)?;
    info!("lm exact match {exact_match:.4} ({lm_seconds:.0}s)");

    let mut enc_corpus = Vec::new();
    for &(order, source) in &ALIGN_VARIANTS[..2] {
        enc_corpus.extend(load_split(data_dir, &align_split(order, source), &cfg.model)?);
    }
    let t = Instant::now();
    pretrain_encoder(&mut model, &enc_corpus, &cfg.encoder_stage, &mut |step, loss| {
        if (step + 1) % 100 == 0 {
            info!("encoder step {} ctc {:.4}", step + 1, loss);
        }
    })?;
    let encoder_seconds = t.elapsed().as_secs_f64();
    let asr_eval = load_split(data_dir, &asr_split(PromptOrder::InstructionFirst, InstructionSource::Text), &cfg.model)?;
    let encoder_ctc_token_error = ctc_token_error(&model, &asr_eval)?;
    info!("encoder ctc token error {encoder_ctc_token_error:.4} ({encoder_seconds:.0}s)");

    model.checkpoint(&["lm."]).save(&out_dir.join(LM_CHECKPOINT))?;
    model.checkpoint(&["encoder.", "ctc_head."]).save(&out_dir.join(ENCODER_CHECKPOINT))?;
    let report = PretrainReport {
        gate_passed: exact_match >= cfg.exact_match_gate,
        exact_match,
        per_task_exact_match,
        gate: cfg.exact_match_gate,
        encoder_ctc_token_error,
        lm_checksum: model.store.checksum("lm."),
        lm_seconds,
        encoder_seconds,
    };
    fs::write(out_dir.join("pretrain_report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Identity of a trained run, stored next to its checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub preset: PresetId,
    pub order: PromptOrder,
    pub instruction_source: InstructionSource,
    pub adapter: String,
    pub lambda_ctc: f64,
    pub label: String,
    pub seed: u64,
    pub train: TrainConfig,
    pub lm_checksum: String,
    pub skipped_empty_alignment: usize,
    pub seconds: f64,
}

impl RunInfo {
    pub fn preset(&self) -> Result<ExperimentPreset> {
        let mut p = ExperimentPreset::new(self.preset, Some(self.order)).or_else(|_| ExperimentPreset::new(self.preset, None))?;
        p.lambda_ctc = self.lambda_ctc;
        Ok(p)
    }

    /// Row label in result tables.
    pub fn table_label(&self) -> String {
        format!("{}#s{}", self.label, self.seed)
    }
}

fn read_run_info(run_dir: &Path) -> Result<RunInfo> {
    Ok(serde_json::from_str(&fs::read_to_string(run_dir.join("run.json"))?)?)
}

/// Load the pretrained components into a fresh model carrying an adapter.
pub fn assemble_model(cfg: &PipelineConfig, mode: AdapterMode, pretrained_dir: &Path, seed: u64) -> Result<SpeechLlm> {
    let lm = Checkpoint::load(&pretrained_dir.join(LM_CHECKPOINT))?;
    let (model_cfg, tok) = header_model(&lm)?;
    if model_cfg != cfg.model {
        return Err(Error::Config("pretrained checkpoints were built with a different model config".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0ada_97e7);
    let mut model = SpeechLlm::new(model_cfg, tok, Some(mode), &mut rng)?;
    model.load_component(&lm, "lm.")?;
    let enc = Checkpoint::load(&pretrained_dir.join(ENCODER_CHECKPOINT))?;
    model.load_component(&enc, "encoder.")?;
    model.load_component(&enc, "ctc_head.")?;
    if cfg.train.ctc_init == CtcInit::Random {
        model.encoder.reinit_ctc_head(&mut model.store, &mut rng);
    }
    Ok(model)
}

/// Train one preset's adapter against the frozen LM and save the run.
pub fn run_train(cfg: &PipelineConfig, preset: &ExperimentPreset, data_dir: &Path, pretrained_dir: &Path, out_dir: &Path) -> Result<RunInfo> {
    fs::create_dir_all(out_dir)?;
    let mut model = assemble_model(cfg, preset.adapter, pretrained_dir, cfg.train.seed)?;
    let all = load_split(data_dir, &align_split(preset.order, preset.instruction_source), &cfg.model)?;
    if all.len() < cfg.train.n_train {
        return Err(Error::Config(format!("train.n_train = {} but the split holds {} samples", cfg.train.n_train, all.len())));
    }
    let corpus = &all[..cfg.train.n_train];
    let lm_before = model.store.checksum("lm.");
    let t = Instant::now();
    let label = preset.label();
    let summary = train_alignment(&mut model, preset, &cfg.train, corpus, &mut |row| {
        if (row.step + 1) % 100 == 0 {
            info!("{label} step {} ntp {:.4} ctc {:.4}", row.step + 1, row.ntp_loss, row.ctc_loss);
        }
    })?;
    let lm_checksum = model.store.checksum("lm.");
    if lm_checksum != lm_before {
        return Err(Error::Checkpoint("frozen LM parameters changed during adapter training".into()));
    }
    model.checkpoint(&[]).save(&out_dir.join(MODEL_CHECKPOINT))?;
    fs::write(out_dir.join(METRICS_FILE), metrics_csv(&summary.metrics))?;
    let info = RunInfo {
        preset: preset.id,
        order: preset.order,
        instruction_source: preset.instruction_source,
        adapter: preset.adapter.label(),
        lambda_ctc: cfg.train.lambda(preset),
        label,
        seed: cfg.train.seed,
        train: cfg.train.clone(),
        lm_checksum,
        skipped_empty_alignment: summary.skipped_empty_alignment,
        seconds: t.elapsed().as_secs_f64(),
    };
    fs::write(out_dir.join("run.json"), serde_json::to_string_pretty(&info)?)?;
    Ok(info)
}

/// Load a trained run's model.
pub fn load_run(run_dir: &Path) -> Result<(RunInfo, SpeechLlm)> {
    let info = read_run_info(run_dir)?;
    let ck = Checkpoint::load(&run_dir.join(MODEL_CHECKPOINT))?;
    let (model_cfg, tok) = header_model(&ck)?;
    let mode = AdapterMode::parse(&info.adapter)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = SpeechLlm::new(model_cfg, tok, Some(mode), &mut rng)?;
    for prefix in ["lm.", "encoder.", "ctc_head.", "adapter."] {
        model.load_component(&ck, prefix)?;
    }
    if model.store.checksum("lm.") != info.lm_checksum {
        return Err(Error::Checkpoint("run checkpoint LM does not match the recorded checksum".into()));
    }
    Ok((info, model))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEvaluation {
    pub label: String,
    pub report: EvalReport,
    /// Only defined for adapters that emit one row per token.
    pub cosine: Option<CosineReport>,
    pub rows: Vec<TableRow>,
}

/// Zero-shot IFR and ASR error of a trained run; writes the result table,
/// the responses and the detector traces into `out_dir`.
pub fn run_eval(cfg: &PipelineConfig, run_dir: &Path, data_dir: &Path, out_dir: &Path) -> Result<RunEvaluation> {
    fs::create_dir_all(out_dir)?;
    let (info, model) = load_run(run_dir)?;
    let preset = info.preset()?;
    let zeroshot = load_split(data_dir, "zeroshot_eval", &model.cfg)?;
    let asr = load_split(data_dir, &asr_split(preset.order, preset.instruction_source), &model.cfg)?;
    let (report, responses) = evaluate(&model, &preset, &zeroshot, &asr, cfg.alphabet_threshold)?;
    let cosine = match preset.adapter {
        AdapterMode::AlignFormer => Some(embedding_cosine(&model, &asr)?),
        _ => None,
    };
    let rows = report_rows(&info.table_label(), &report.ifr, Some((report.asr_token_error, report.n_asr)));
    fs::write(out_dir.join(RESULTS_FILE), rows_to_csv(&rows))?;
    write_jsonl(&out_dir.join("responses.jsonl"), &responses)?;
    write_jsonl(&out_dir.join("traces.jsonl"), &report.ifr.traces)?;
    let eval = RunEvaluation { label: info.table_label(), report, cosine, rows };
    fs::write(out_dir.join("eval.json"), serde_json::to_string_pretty(&eval)?)?;
    Ok(eval)
}

/// CTC alignment paths and the windows derived from them for the content
/// utterances of a split. Returns `(paths, windows)` text, one line per
/// utterance in the [`AlignmentPath::to_line`] and
/// [`crate::windowing::format_window_line`] formats.
pub fn dump_alignment(run_dir: &Path, data_dir: &Path, split: &str, mode: AlignmentMode, limit: usize) -> Result<(String, String)> {
    let (_, model) = load_run(run_dir)?;
    let samples = load_split(data_dir, split, &model.cfg)?;
    let (mut paths, mut windows) = (String::new(), String::new());
    for s in samples.iter().take(limit) {
        let feats = model.content_features(s)?;
        let mut g = Graph::new();
        let enc = model.encoder.forward(&mut g, &model.store, &[&feats])?;
        let logp = enc.utterance_logp(&g, 0)?;
        let path = match mode {
            AlignmentMode::Greedy => ctc_greedy_path(&logp),
            AlignmentMode::Forced => ctc_forced_align(&logp, &model.ctc_target(&s.audio_tokens)?)?,
        };
        paths.push_str(&path.to_line(&s.id));
        paths.push('\n');
        windows.push_str(&format_window_line(&s.id, &path_to_windows(&path)));
        windows.push('\n');
    }
    Ok((paths, windows))
}

/// Per-run rows plus mean rows over runs sharing a label (seed suffix
/// removed).
pub fn assemble_tables(result_files: &[PathBuf]) -> Result<Vec<TableRow>> {
    let mut rows = Vec::new();
    for f in result_files {
        rows.extend(parse_csv(&fs::read_to_string(f)?)?);
    }
    let mut groups: BTreeMap<(String, String, String), Vec<&TableRow>> = BTreeMap::new();
    for r in &rows {
        let base = r.preset.split('#').next().unwrap_or(&r.preset).to_string();
        groups.entry((base, r.task.clone(), r.metric_name.clone())).or_default().push(r);
    }
    let mut means = Vec::new();
    for ((preset, task, metric_name), members) in groups {
        let mean = |f: &dyn Fn(&TableRow) -> Option<f64>| {
            let vals: Vec<f64> = members.iter().filter_map(|r| f(r)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let followed: Vec<usize> = members.iter().filter_map(|r| r.n_followed).collect();
        means.push(TableRow {
            preset: format!("{preset}#mean"),
            task,
            metric_name,
            metric_value: mean(&|r| r.metric_value),
            ifr: mean(&|r| r.ifr),
            n_total: members.iter().map(|r| r.n_total).sum(),
            n_followed: (!followed.is_empty()).then(|| followed.iter().sum()),
        });
    }
    rows.extend(means);
    Ok(rows)
}

/// Write `tables.csv` and `tables.txt`.
pub fn write_tables(rows: &[TableRow], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("tables.csv"), rows_to_csv(rows))?;
    fs::write(out_dir.join("tables.txt"), rows_to_text(rows))?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Provenance record written into every artifact directory as flat
/// `key = value` text.
#[derive(Clone, Debug)]
pub struct Manifest {
    entries: Vec<(String, String)>,
    started: u64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl Manifest {
    pub fn new(command: &str, config_path: Option<&Path>, seed: u64, threads: usize, config: &PipelineConfig) -> Self {
        let mut m = Self { entries: Vec::new(), started: unix_now() };
        m.set("command", command);
        m.set("config_path", config_path.map_or("<defaults>".to_string(), |p| p.display().to_string()));
        m.set("seed", seed);
        m.set("threads", threads);
        m.set("code_version", env!("CARGO_PKG_VERSION"));
        for (k, v) in config.to_kv_pairs() {
            m.set(&format!("config.{k}"), v);
        }
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn add_input_file(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.set(&format!("input.{}", path.display()), digest);
        Ok(())
    }

    /// Hash every regular file directly inside `dir`.
    pub fn add_input_dir(&mut self, dir: &Path) -> Result<()> {
        for (name, digest) in hash_dir(dir)? {
            self.set(&format!("input.{}", dir.join(name).display()), digest);
        }
        Ok(())
    }

    /// Hash the outputs in `dir` and write the manifest there.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.set("output_dir", dir.display());
        self.set("started_unix", self.started);
        self.set("finished_unix", unix_now());
        for (name, digest) in hash_dir(dir)? {
            self.set(&format!("output.{name}"), digest);
        }
        let text: String = self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

/// SHA-256 of every regular file directly inside `dir` except the manifest,
/// sorted by name.
pub fn hash_dir(dir: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if p.is_file() && name != MANIFEST_FILE {
            out.push((name, sha256_file(&p)?));
        }
    }
    out.sort();
    Ok(out)
}

/// Responses written by [`run_eval`].
pub fn read_responses(eval_dir: &Path) -> Result<Vec<EvalResult>> {
    read_jsonl(&eval_dir.join("responses.jsonl"))
}
