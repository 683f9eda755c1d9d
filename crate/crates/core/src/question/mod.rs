//! Question instances: assembly from a solve and its distractors, prompt
//! rendering, JSON lines serialization, dataset generation and validation.

mod assemble;
pub mod dataset;
mod instance;
mod render;
mod validate;

pub use assemble::{assemble_question, round_weight, AssemblyContext, DISPLAY_SUM_TOL, DISPLAY_MARGIN};
pub use dataset::{
    generate_dataset, generate_from_config, CellSpec, DatasetConfig, DistractorDefaults, GeneratedDataset, Manifest, ManifestCell,
    Window, MANIFEST_FILE, QUESTIONS_FILE,
};
pub use instance::{
    read_questions, write_questions, Choice, ChoiceMeta, ConstraintCategory, QuestionInstance, QuestionMetadata,
};
pub use render::{constraint_text, render_prompt};
pub use validate::{validate_dataset, CellTally, QuestionFailure, ValidationReport};
