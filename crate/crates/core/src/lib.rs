//! Taxonomy-based labeling of unified-diff hunks with a two-stage model
//! pipeline: a labeler assigns change types per hunk, a refiner links
//! related hunks and extracts rename/retype attributes.

pub mod diff;
pub mod evaluation;
pub mod labeler;
pub mod llm;
pub mod par;
pub mod pipeline;
pub mod prompting;
pub mod refiner;
pub mod taxonomy;

pub use diff::{parse_patch, PatchBundle};
pub use evaluation::{evaluate, EvaluationReport};
pub use labeler::{run_labeler, LabelerRun};
pub use llm::{Backend, LlmClient};
pub use pipeline::{run_pipeline, PipelineOptions};
pub use prompting::{LabelerMode, PromptTemplates};
pub use refiner::run_refiner;
pub use taxonomy::{LabelType, LabelingInstance, LabelingSet};
