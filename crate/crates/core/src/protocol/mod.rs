//! Agent step grammar, action validation and prompt rendering.

mod action;
mod dcp_text;
mod parse;
mod prompt;
pub(crate) use prompt::fill as fill_placeholders;
pub mod templates;

pub use action::{validate_action, InvalidAction, ToolKind, ValidatedAction};
pub use dcp_text::{parse_dcp, render_dcp, ConsolidationParseError, DcpFields};
pub use parse::{
    escape_value, parse_agent_step, parse_trace, render_step, render_trace, AgentStep, StepKind, ACTION, ACTION_INPUT,
    FINAL_DIAGNOSIS, OBSERVATION, THOUGHT,
};
pub use prompt::{
    render_clinician_orders, render_compaction_prompt, render_consolidation_prompt, render_diagnostic_prompt,
    render_full_information_prompt, render_intermediate_steps, render_scratchpad, ConsolidationInput, HistoryItem,
    ModelProfile, ModelProfiles, ProfileError, PromptBundle, NO_CLINICIAN_ORDERS, NO_FINAL_DIAGNOSIS,
};
