//! Scores research impact case studies with a chat-completion LLM under
//! fixed prompt strategies and input variants, repeats the sampling per
//! case, and evaluates the aggregated scores against published
//! departmental score profiles: weighted GPAs, Pearson correlations
//! with Fisher z confidence intervals, departmental aggregation,
//! convergence curves, and per-discipline comparisons.

pub mod config;
pub mod corpus;
pub mod llm;
pub mod prompts;
pub mod report;
pub mod scoring;
pub mod stats;

pub use corpus::{DepartmentKey, EvaluationDataset, ImpactCaseStudy, ScoreProfile};
pub use llm::{Client, CompletionRequest, CompletionResponse, MockBackend, MockConfig};
pub use prompts::{build_user_prompt, system_prompt, InputVariant, PromptStrategy};
pub use scoring::{aggregate, parse_score, score_case, AggregateScore, ScoreRecord};
pub use stats::{
    case_level_correlations, convergence_curve, correlation_ci, department_level_correlations,
    pearson, uoa_score_comparison, weighted_gpa, CorrelationResult, UoaComparison,
};
