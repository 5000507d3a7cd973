//! Training stages: LM text pretraining, encoder CTC pretraining and the
//! combined alignment objective with its schedules.

mod pretrain;
mod run;
mod schedule;

pub use pretrain::{ctc_token_error, pretrain_encoder, pretrain_lm, text_exact_match, StageConfig, StepLog};
pub use run::{
    embedding_cosine, evaluate, generate_responses, metrics_csv, train_alignment, CtcInit, EvalReport, EvalTemplate, ExperimentPreset,
    MetricRow, PresetId, TrainConfig, TrainSummary, METRICS_HEADER,
};
pub use schedule::{alignment_schedule, combined_loss, greedy_probability, lr_at, AlignmentPolicy};
