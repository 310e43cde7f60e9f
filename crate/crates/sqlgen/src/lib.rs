//! SQL generation over routed schemata: prompt strategies, a
//! chat-completions client, and execution-accuracy evaluation.

pub mod ex;
pub mod exec;
pub mod llm;
pub mod prompt;

pub use ex::{evaluate_ex, generate, CandidateSource, ExOptions, ExReport, Generation, GenerationRecord};
pub use exec::{execution_match, ExecError};
pub use llm::{ChatConfig, ChatMessage, ChatModel, Completion, HttpChatModel, LlmError, Usage};
pub use prompt::{
    build_best_prompt, build_cot_prompts, build_multi_prompt, candidate, complete_sql, PromptError, PromptStrategy,
    StrategyKind,
};
