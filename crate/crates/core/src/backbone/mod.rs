//! Speech encoder with a CTC head, the decoder-only LM, its tokenizer and the
//! chat-template prompt assembly.

mod encoder;
mod lm;
mod prompt;
pub mod tokenizer;

pub use encoder::{sinusoid_table, Encoder, EncoderBatch, EncoderConfig};
pub use lm::{argmax, LanguageModel, LmConfig, LmOutput};
pub use prompt::{assemble_prompt, PromptAssembly, Segment, Slot};
pub use tokenizer::Tokenizer;
