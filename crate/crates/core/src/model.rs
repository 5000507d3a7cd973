//! The assembled speech-LLM: tokenizer, encoder, adapter and LM sharing one
//! parameter store, plus the data plumbing from samples to LM inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{Adapter, AdapterConfig, AdapterMode};
use crate::backbone::{assemble_prompt, Encoder, EncoderConfig, LanguageModel, LmConfig, PromptAssembly, Segment, Tokenizer};
use crate::compute::{Checkpoint, ParamStore, Tensor2D};
use crate::config::KvConfig;
use crate::ctc::TargetSequence;
use crate::error::{Error, Result};
use crate::synthdata::{render_speech, RenderSpec, TaskSample};

/// Shapes of every component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub render: RenderSpec,
    pub subsample_factor: usize,
    pub enc_layers: usize,
    pub d_enc: usize,
    pub enc_heads: usize,
    pub enc_ffn: usize,
    pub lm_d_model: usize,
    pub lm_layers: usize,
    pub lm_heads: usize,
    pub lm_ffn: usize,
    pub lm_context: usize,
    pub lm_learned_positions: bool,
    pub adapter_blocks: usize,
    pub adapter_heads: usize,
    pub adapter_ffn: usize,
    pub adapter_window_positions: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            render: RenderSpec::default(),
            subsample_factor: 4,
            enc_layers: 1,
            d_enc: 32,
            enc_heads: 2,
            enc_ffn: 64,
            lm_d_model: 64,
            lm_layers: 3,
            lm_heads: 4,
            lm_ffn: 128,
            lm_context: 96,
            lm_learned_positions: false,
            adapter_blocks: 2,
            adapter_heads: 2,
            adapter_ffn: 64,
            adapter_window_positions: false,
        }
    }
}

impl ModelConfig {
    pub fn apply(&mut self, kv: &KvConfig) -> Result<()> {
        let r = &mut self.render;
        kv.read("render.frames_lo", &mut r.frames_per_token.0)?;
        kv.read("render.frames_hi", &mut r.frames_per_token.1)?;
        kv.read("render.feature_dim", &mut r.feature_dim)?;
        kv.read("render.noise_std", &mut r.noise_std)?;
        kv.read("render.speaker_offset_std", &mut r.speaker_offset_std)?;
        kv.read("render.prototype_seed", &mut r.prototype_seed)?;
        r.validate()?;
        kv.read("encoder.subsample_factor", &mut self.subsample_factor)?;
        kv.read("encoder.layers", &mut self.enc_layers)?;
        kv.read("encoder.d_enc", &mut self.d_enc)?;
        kv.read("encoder.heads", &mut self.enc_heads)?;
        kv.read("encoder.ffn", &mut self.enc_ffn)?;
        kv.read("lm.d_model", &mut self.lm_d_model)?;
        kv.read("lm.layers", &mut self.lm_layers)?;
        kv.read("lm.heads", &mut self.lm_heads)?;
        kv.read("lm.ffn", &mut self.lm_ffn)?;
        kv.read("lm.context", &mut self.lm_context)?;
        kv.read("lm.learned_positions", &mut self.lm_learned_positions)?;
        kv.read("adapter.blocks", &mut self.adapter_blocks)?;
        kv.read("adapter.heads", &mut self.adapter_heads)?;
        kv.read("adapter.ffn", &mut self.adapter_ffn)?;
        kv.read("adapter.window_positions", &mut self.adapter_window_positions)?;
        Ok(())
    }

    pub fn encoder_config(&self, tok: &Tokenizer) -> EncoderConfig {
        EncoderConfig {
            input_dim: self.render.feature_dim,
            subsample_factor: self.subsample_factor,
            n_layers: self.enc_layers,
            d_enc: self.d_enc,
            n_heads: self.enc_heads,
            ffn_dim: self.enc_ffn,
            ctc_vocab: tok.ctc_vocab(),
        }
    }

    pub fn lm_config(&self, tok: &Tokenizer) -> LmConfig {
        LmConfig {
            vocab: tok.len(),
            d_model: self.lm_d_model,
            n_layers: self.lm_layers,
            n_heads: self.lm_heads,
            ffn_dim: self.lm_ffn,
            context: self.lm_context,
            learned_positions: self.lm_learned_positions,
        }
    }

    pub fn adapter_config(&self, mode: AdapterMode) -> AdapterConfig {
        AdapterConfig {
            encoder_dim: self.d_enc,
            llm_dim: self.lm_d_model,
            n_blocks: self.adapter_blocks,
            n_heads: self.adapter_heads,
            ffn_dim: self.adapter_ffn,
            mode,
            window_positions: self.adapter_window_positions,
        }
    }
}

/// Header keys shared by every checkpoint.
pub const HEADER_MODEL: &str = "model_config";
pub const HEADER_TOKENIZER: &str = "tokenizer";

pub fn checkpoint_with_header(store: &ParamStore, prefixes: &[&str], cfg: &ModelConfig, tok: &Tokenizer) -> Checkpoint {
    let mut ck = Checkpoint::from_store(store, prefixes);
    ck.header.insert(HEADER_MODEL.into(), serde_json::to_string(cfg).expect("config serializes"));
    ck.header.insert(HEADER_TOKENIZER.into(), tok.to_json());
    ck
}

pub fn header_model(ck: &Checkpoint) -> Result<(ModelConfig, Tokenizer)> {
    let cfg: ModelConfig = serde_json::from_str(ck.header_value(HEADER_MODEL)?)?;
    let tok = Tokenizer::from_json(ck.header_value(HEADER_TOKENIZER)?)?;
    Ok((cfg, tok))
}

/// Components that have been instantiated in a store.
pub struct SpeechLlm {
    pub cfg: ModelConfig,
    pub tokenizer: Tokenizer,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub lm: LanguageModel,
    pub adapter: Option<Adapter>,
}

impl SpeechLlm {
    pub fn new(cfg: ModelConfig, tokenizer: Tokenizer, mode: Option<AdapterMode>, rng: &mut impl Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = Encoder::new(cfg.encoder_config(&tokenizer), &mut store, rng)?;
        let lm = LanguageModel::new(cfg.lm_config(&tokenizer), &mut store, rng)?;
        let adapter = mode.map(|m| Adapter::new(cfg.adapter_config(m), &mut store, rng)).transpose()?;
        Ok(Self { cfg, tokenizer, store, encoder, lm, adapter })
    }

    pub fn adapter(&self) -> Result<&Adapter> {
        self.adapter.as_ref().ok_or_else(|| Error::Input("model has no adapter".into()))
    }

    pub fn checkpoint(&self, prefixes: &[&str]) -> Checkpoint {
        checkpoint_with_header(&self.store, prefixes, &self.cfg, &self.tokenizer)
    }

    /// Load `prefix` parameters from `ck`, checking that the model shapes and
    /// vocabulary agree.
    pub fn load_component(&mut self, ck: &Checkpoint, prefix: &str) -> Result<usize> {
        let (_, tok) = header_model(ck)?;
        if tok != self.tokenizer {
            return Err(Error::Checkpoint("checkpoint tokenizer differs from the model's".into()));
        }
        let n = ck.load_into(&mut self.store, prefix)?;
        if n == 0 {
            return Err(Error::Checkpoint(format!("checkpoint has no {prefix}* parameters")));
        }
        Ok(n)
    }

    /// LM token ids of an instruction or response string.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        self.tokenizer.encode_text(text)
    }

    /// CTC target of a spoken string.
    pub fn ctc_target(&self, text: &str) -> Result<TargetSequence> {
        let ids = self.encode(text)?;
        Ok(TargetSequence(ids.iter().map(|&i| self.tokenizer.lm_to_ctc(i).expect("non-special symbol")).collect()))
    }

    /// Rendered features of the sample content.
    pub fn content_features(&self, sample: &TaskSample) -> Result<Tensor2D> {
        Ok(render_speech(&self.encode(&sample.audio_tokens)?, &self.cfg.render, sample.render_seed)?.features)
    }

    /// Rendered features of the spoken instruction (distinct seed stream).
    pub fn instruction_features(&self, sample: &TaskSample) -> Result<Tensor2D> {
        let seed = sample.render_seed ^ 0x5bd1_e995_0000_0001;
        Ok(render_speech(&self.encode(&sample.instruction_text)?, &self.cfg.render, seed)?.features)
    }

    /// Text-only assembly: the content enters as text tokens.
    pub fn text_assembly(&self, sample: &TaskSample, with_response: bool) -> Result<PromptAssembly> {
        let content = Segment::Text(self.encode(&sample.audio_tokens)?);
        let instruction = Segment::Text(self.encode(&sample.instruction_text)?);
        let response = if with_response { self.encode(&sample.reference_answer)? } else { Vec::new() };
        assemble_prompt(sample.order, &content, &instruction, &response, self.tokenizer.separator(), self.cfg.lm_context)
    }
}
