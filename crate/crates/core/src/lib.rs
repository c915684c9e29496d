//! Traffic-scene captioning pipeline around a vision-language model:
//! relevant-view selection, bounding-box visual prompts, instruction-dataset
//! assembly, sequential-question inference against a chat endpoint, caption
//! metrics, and a small block-expansion demonstrator.

pub mod block_expansion;
pub mod config;
pub mod corpus;
pub mod geometry;
pub mod metrics;
pub mod orchestrator;
pub mod pipeline;
pub mod qa_builder;
pub mod view_selection;
pub mod visual_prompting;

pub use config::PipelineConfig;
pub use pipeline::{run_all, run_stage, PipelineError, RunOptions, Stage, StageReport};
