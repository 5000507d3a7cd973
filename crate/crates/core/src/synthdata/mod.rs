//! Deterministic synthetic corpora: token strings rendered to "speech"
//! features, ASR-only alignment data, text pretraining data and held-out
//! zero-shot tasks.

mod io;
mod render;
mod tasks;
pub mod world;

pub use io::{read_f32_blob, read_jsonl, write_f32_blob, write_jsonl, DatasetRecord, FeatureRef};
pub use render::{prototype, render_speech, RenderSpec, Rendered};
pub use tasks::{
    gen_alignment_corpus, gen_pretrain_corpus, gen_zeroshot_eval, make_sample, verify_sample, InstructionSource, PromptOrder, Task,
    TaskSample,
};
