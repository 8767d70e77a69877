//! End-to-end translation, query repair and few-shot dataset synthesis.

mod config;
mod refine;
mod synth;
mod translate;

pub use config::{Mode, Models, OracleMode, Paths, PipelineConfig};
pub use refine::{nearest_name, query_refine, Refinement, Repair, RepairKind};
pub use synth::{
    parse_teacher_reply, split_dataset, synthesize_fsdb, Discarded, FailedBatch, SynthesisOptions,
    SynthesisReport, TeacherPair,
};
pub use translate::{
    CallRecord, PromptRecord, Role, StageTiming, Translation, TranslationFailure, TranslationTrace,
    Translator,
};
