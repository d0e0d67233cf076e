//! Propaganda technique detection as multi-label classification over news
//! articles, driven by prompted or fine-tuned language models.
//!
//! The crate is organised as a pipeline:
//!
//! * [`techniques`] owns the closed 14-label taxonomy and label normalization.
//! * [`corpus`] loads articles and span annotations and produces splits.
//! * [`prompting`] renders instructions, estimates tokens and plans chunks.
//! * [`gateway`] talks to completion endpoints (live, replay, mock) and
//!   exports fine-tune datasets.
//! * [`parsing`] turns completions into label sets and anomaly findings.
//! * [`evaluation`] computes micro metrics and compares to published figures.
//! * [`report`] renders metric tables.
//! * [`runner`] ties everything together for the command line.
//!
//! Data-parallel loops go through [`exec::Execution`]; with the `parallel`
//! feature disabled every path runs sequentially.

pub mod corpus;
pub mod evaluation;
pub mod exec;
pub mod gateway;
pub mod parsing;
pub mod prompting;
pub mod report;
pub mod runner;
pub mod techniques;

pub use corpus::{Article, GoldLabels, SpanAnnotation, SplitAssignment};
pub use evaluation::{ConfusionCounts, MetricReport};
pub use exec::Execution;
pub use parsing::{Anomaly, AnomalyKind, ParsedCompletion};
pub use prompting::{ChunkPlan, PromptPattern, RenderedPrompt, TokenBudget};
pub use techniques::{Technique, TechniqueCard};
