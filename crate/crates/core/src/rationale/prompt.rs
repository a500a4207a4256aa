//! Zero-shot holistic scoring prompt.

use serde::{Deserialize, Serialize};

use super::RationaleError;
use crate::corpus::EssayRecord;

pub const ROLE_LINE: &str =
    "You are an experienced essay grader. Score the following essay holistically using the provided rubric.";

const BASE_INSTRUCTIONS: [&str; 5] = [
    "Read the passage, prompt, and student essay carefully",
    "Evaluate the essay holistically against the rubric",
    "Assign ONE score from 0 to 4",
    "Provide a detailed rationale explaining why this score was assigned",
    "Reference specific elements from the essay in your rationale but do not repeat the rubric",
];

const SUCCINCTNESS_INSTRUCTIONS: [&str; 4] = [
    "Keep the rationale focused and avoid unnecessary verbosity",
    "Use direct, clear language without excessive elaboration",
    "Focus on the key strengths and weaknesses that determined the score",
    "Each rationale should Not be more than 512 tokens",
];

const RESPONSE_FORMAT: &str = "Please respond in the following format:\n\n\
SCORE: [0-4]\n\n\
RATIONALE: [Detailed explanation of why this score was assigned, with specific references to the essay content and how it aligns with the rubric criteria]";

/// Prompt 6 writing task.
pub const PROMPT6_WRITING_PROMPT: &str = "Based on the excerpt, describe the obstacles the builders of the Empire State Building faced in attempting to allow dirigibles to dock there. Support your answer with relevant and specific information from the excerpt.";

/// Prompt 6 holistic rubric, highest score first.
pub const PROMPT6_RUBRIC: &str = "\
4: The response is a clear, complete, and accurate description of the obstacles the builders of the Empire State Building faced in attempting to allow dirigibles to dock there. The response includes relevant and specific information from the excerpt.
3: The response is a mostly clear, complete, and accurate description of the obstacles the builders of the Empire State Building faced in attempting to allow dirigibles to dock there. The response includes relevant but often general information from the excerpt.
2: The response is a partial description of the obstacles the builders of the Empire State Building faced in attempting to allow dirigibles to dock there. The response includes limited information from the excerpt and may include misinterpretations.
1: The response is a minimal description of the obstacles the builders of the Empire State Building faced in attempting to allow dirigibles to dock there. The response includes little or no information from the excerpt and may include misinterpretations. OR The response relates minimally to the task.
0: The response is totally incorrect or irrelevant, or contains insufficient evidence to demonstrate comprehension.";

/// Prompt 6 answer key used as scoring notes.
pub const PROMPT6_SCORING_NOTES: &str = "\
The obstacles to dirigible docking include:
1. Building a mast on top of the building
2. Meeting with engineers and dirigible engineers
3. Transmitting the stress of the dirigible all the way down the building; the frame had to be shored up to the tune of $60,000
4. Housing the winches and other docking equipment
5. Dealing with flammable gases
6. Handling the violent air currents at the top of the building
7. Confronting laws banning airships from the area
8. Getting close enough to the building without puncturing
Other explanations will be accepted if supported by relevant evidence from the text.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub generator_id: String,
    pub temperature: f64,
    pub passage: String,
    pub writing_prompt: String,
    pub rubric_text: String,
    #[serde(default)]
    pub scoring_notes: Option<String>,
    #[serde(default)]
    pub succinctness_addendum: bool,
}

/// 0.2 for GPT-4.1 generators, 1.0 for everything else.
pub fn default_temperature(generator_id: &str) -> f64 {
    if generator_id.contains("4.1") {
        0.2
    } else {
        1.0
    }
}

impl PromptConfig {
    /// Prompt 6 setup for a generator. GPT-4.1 gets the scoring notes, other
    /// generators get the succinctness instructions instead.
    pub fn prompt6(generator_id: &str, passage: impl Into<String>) -> Self {
        let is_41 = generator_id.contains("4.1");
        Self {
            generator_id: generator_id.to_string(),
            temperature: default_temperature(generator_id),
            passage: passage.into(),
            writing_prompt: PROMPT6_WRITING_PROMPT.to_string(),
            rubric_text: PROMPT6_RUBRIC.to_string(),
            scoring_notes: is_41.then(|| PROMPT6_SCORING_NOTES.to_string()),
            succinctness_addendum: !is_41,
        }
    }

    pub fn validate(&self) -> Result<(), RationaleError> {
        for (name, v) in [
            ("generator_id", &self.generator_id),
            ("passage", &self.passage),
            ("writing_prompt", &self.writing_prompt),
            ("rubric_text", &self.rubric_text),
        ] {
            if v.trim().is_empty() {
                return Err(RationaleError::Config(format!("{name} is empty")));
            }
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(RationaleError::Config(format!("temperature {} must be >= 0", self.temperature)));
        }
        Ok(())
    }
}

pub fn build_prompt(essay: &EssayRecord, config: &PromptConfig) -> Result<String, RationaleError> {
    if essay.text.trim().is_empty() {
        return Err(RationaleError::EmptyEssay(essay.essay_id));
    }
    config.validate()?;

    let mut out = String::new();
    out.push_str("TASK\n\n");
    out.push_str(ROLE_LINE);
    out.push_str("\n\nREADING PASSAGE:\n\n");
    out.push_str(config.passage.trim());
    out.push_str("\n\nESSAY PROMPT:\n\n");
    out.push_str(config.writing_prompt.trim());
    out.push_str("\n\nSTUDENT ESSAY:\n\n");
    out.push_str(essay.text.trim());
    out.push_str("\n\nSCORING RUBRIC (Holistic - Single Score from 0 to 4):\n\n");
    out.push_str(config.rubric_text.trim());
    out.push_str("\n\nINSTRUCTIONS:\n\n");

    let mut instructions: Vec<&str> = BASE_INSTRUCTIONS.to_vec();
    if config.succinctness_addendum {
        instructions.extend(SUCCINCTNESS_INSTRUCTIONS);
    }
    for (i, line) in instructions.iter().enumerate() {
        out.push_str(&format!("{}. {line}\n", i + 1));
    }
    if let Some(notes) = config.scoring_notes.as_deref().filter(|n| !n.trim().is_empty()) {
        out.push_str("\nSCORING NOTES:\n\n");
        out.push_str(notes.trim());
        out.push('\n');
    }
    out.push('\n');
    out.push_str(RESPONSE_FORMAT);
    out.push('\n');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn essay(text: &str) -> EssayRecord {
        EssayRecord::new(7, 6, text, 2, 3)
    }

    fn minimal() -> PromptConfig {
        PromptConfig {
            generator_id: "gpt-test".into(),
            temperature: 1.0,
            passage: "P".into(),
            writing_prompt: "Q".into(),
            rubric_text: "R".into(),
            scoring_notes: None,
            succinctness_addendum: false,
        }
    }

    #[test]
    fn section_order() {
        let p = build_prompt(&essay("the mast"), &PromptConfig::prompt6("gpt-4.1", "passage text")).unwrap();
        let at = |s: &str| p.find(s).unwrap_or_else(|| panic!("missing {s}"));
        let order = [
            "TASK",
            ROLE_LINE,
            "READING PASSAGE:",
            "passage text",
            "ESSAY PROMPT:",
            "STUDENT ESSAY:",
            "the mast",
            "SCORING RUBRIC",
            "INSTRUCTIONS:",
            "5. Reference specific",
            "SCORING NOTES:",
            "SCORE: [0-4]",
            "RATIONALE:",
        ];
        for pair in order.windows(2) {
            assert!(at(pair[0]) < at(pair[1]), "{} before {}", pair[0], pair[1]);
        }
        assert!(p.trim_end().lines().last().unwrap().starts_with("RATIONALE:"));
    }

    #[test]
    fn addendum_iff_flag() {
        let mut c = minimal();
        let without = build_prompt(&essay("x"), &c).unwrap();
        assert!(!without.contains("Each rationale should Not be more than 512 tokens"));
        c.succinctness_addendum = true;
        let with = build_prompt(&essay("x"), &c).unwrap();
        assert!(with.contains("9. Each rationale should Not be more than 512 tokens"));
    }

    #[test]
    fn notes_iff_present() {
        let mut c = minimal();
        assert!(!build_prompt(&essay("x"), &c).unwrap().contains("dirigible docking"));
        c.scoring_notes = Some(PROMPT6_SCORING_NOTES.into());
        let p = build_prompt(&essay("x"), &c).unwrap();
        assert!(p.contains("The obstacles to dirigible docking include:"));
        assert!(p.contains("8. Getting close enough to the building without puncturing"));
    }

    #[test]
    fn placeholders_appear_once() {
        let p = build_prompt(&essay("E"), &minimal()).unwrap();
        for field in ["P", "Q", "R", "E"] {
            assert_eq!(p.lines().filter(|l| *l == field).count(), 1, "{field}");
        }
    }

    #[test]
    fn empty_essay_is_rejected() {
        assert!(matches!(build_prompt(&essay("  \n"), &minimal()), Err(RationaleError::EmptyEssay(7))));
        let mut c = minimal();
        c.rubric_text = String::new();
        assert!(matches!(build_prompt(&essay("x"), &c), Err(RationaleError::Config(_))));
    }

    #[test]
    fn generator_presets() {
        let a = PromptConfig::prompt6("gpt-4.1", "p");
        assert_eq!(a.temperature, 0.2);
        assert!(a.scoring_notes.is_some() && !a.succinctness_addendum);
        let b = PromptConfig::prompt6("gpt-5", "p");
        assert_eq!(b.temperature, 1.0);
        assert!(b.scoring_notes.is_none() && b.succinctness_addendum);
    }
}
