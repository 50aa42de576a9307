//! Fixed prompt and rubric texts shipped with the crate.

/// System prompt for explanation generation.
pub const GENERATION_SYSTEM_PROMPT: &str = include_str!("../assets/llm_system_prompt.txt");
/// Judge prompt for the 1..5 information-density score.
pub const DENSITY_RUBRIC: &str = include_str!("../assets/density_rubric.txt");
/// Annotator task instructions.
pub const TASK_INSTRUCTIONS: &str = include_str!("../assets/task_instructions.txt");
/// Playback volume notice shown to annotators.
pub const LOUD_NOTICE: &str = include_str!("../assets/loud_notice.txt");
/// Rating dimensions with their five-level descriptions, as JSON.
pub const RATING_RUBRIC_JSON: &str = include_str!("../assets/rating_rubric.json");
