//! Chat-model interface for rule generation, selection, mutation, and
//! repair. Every call site goes through [`PromptRequest`] so the offline
//! mock adapter can key fixtures on a canonical request hash, and response
//! parsing is grammar-per-template with soft failure.

pub mod http;
pub mod mock;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{short_hash, RuleAction};

pub use http::{HttpAdapter, Transport};
pub use mock::MockAdapter;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("response did not match the {template} grammar: {reason}")]
    Parse { template: String, reason: String },
    #[error("missing fixture for {template} request {hash} (expected at {path})")]
    MissingFixture { template: String, hash: String, path: PathBuf },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// The eight prompt roles of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    BoundaryExtractImplicit,
    FeatureIdentify,
    SoRuleGen,
    BoRuleGen,
    FeatureSelect,
    RuleSelect,
    Mutate,
    Repair,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::BoundaryExtractImplicit,
        TemplateId::FeatureIdentify,
        TemplateId::SoRuleGen,
        TemplateId::BoRuleGen,
        TemplateId::FeatureSelect,
        TemplateId::RuleSelect,
        TemplateId::Mutate,
        TemplateId::Repair,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateId::BoundaryExtractImplicit => "boundary_extract_implicit",
            TemplateId::FeatureIdentify => "feature_identify",
            TemplateId::SoRuleGen => "so_rule_gen",
            TemplateId::BoRuleGen => "bo_rule_gen",
            TemplateId::FeatureSelect => "feature_select",
            TemplateId::RuleSelect => "rule_select",
            TemplateId::Mutate => "mutate",
            TemplateId::Repair => "repair",
        }
    }

    pub fn required_slots(&self) -> &'static [&'static str] {
        match self {
            TemplateId::BoundaryExtractImplicit => &["chunk"],
            TemplateId::FeatureIdentify => &["snippet"],
            TemplateId::SoRuleGen => &["feature"],
            TemplateId::BoRuleGen => &["feature", "condition", "so_rules"],
            TemplateId::FeatureSelect => &["program", "features"],
            TemplateId::RuleSelect => &["program", "feature", "rules"],
            TemplateId::Mutate => &["program", "rule"],
            TemplateId::Repair => &["program", "stderr"],
        }
    }

    /// Renders the prompt text for a filled request.
    pub fn render(&self, slots: &BTreeMap<String, String>) -> String {
        let s = |k: &str| slots.get(k).map(String::as_str).unwrap_or_default();
        match self {
            TemplateId::BoundaryExtractImplicit => format!(
                "Below is a chunk of compiler or executor source code. Does it contain \
                 implicit boundary-condition handling, such as type casts, bounds checks, \
                 or overflow guards? Answer `yes` or `no` on the first line; if yes, name \
                 the construct on the second line.\n\n{}",
                s("chunk")
            ),
            TemplateId::FeatureIdentify => format!(
                "The following compiler code block guards a boundary condition. List the \
                 Solidity language features whose use could reach this code, one feature \
                 per line, lowercase.\n\n{}",
                s("snippet")
            ),
            TemplateId::SoRuleGen => format!(
                "You generate mutation rules for the Solidity language feature `{}`. \
                 First consider the feature's mutation points (field types, visibility, \
                 declaration location, and so on). Then output one rule per line in the \
                 form `<action>: <description>` where <action> is one of insert, \
                 increase, replace, modify, clear. Output only rule lines.",
                s("feature")
            ),
            TemplateId::BoRuleGen => format!(
                "Feature: `{}`.\nBoundary condition from compiler source:\n{}\n\n\
                 Existing syntax-oriented rules:\n{}\n\nFirst analyze how a program \
                 using this feature can trigger the boundary condition. Then either \
                 select an existing rule or synthesize a new one based on them, so that \
                 mutated programs steer into the condition. Output one rule per line as \
                 `<action>: <description>`.",
                s("feature"),
                s("condition"),
                s("so_rules")
            ),
            TemplateId::FeatureSelect => format!(
                "Program:\n{}\n\nKnown features:\n{}\n\nList the features from the \
                 known list that are present in the program, one per line, most \
                 prominent first.",
                s("program"),
                s("features")
            ),
            TemplateId::RuleSelect => format!(
                "Program:\n{}\n\nFeature: `{}`.\nCandidate rules (id: description):\n{}\n\n\
                 Reply with the id of the single most promising rule on one line.",
                s("program"),
                s("feature"),
                s("rules")
            ),
            TemplateId::Mutate => format!(
                "Apply this mutation rule to the Solidity program below: {}\n\n\
                 Program:\n{}\n\nOutput only the complete mutated Solidity program.",
                s("rule"),
                s("program")
            ),
            TemplateId::Repair => format!(
                "The following Solidity program fails to compile. Compiler error:\n{}\n\n\
                 Program:\n{}\n\nOutput only the repaired Solidity program.",
                s("stderr"),
                s("program")
            ),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fully specified model call. Temperature and seed are always explicit
/// so runs are reproducible and fixture keys are stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub template_id: TemplateId,
    pub slots: BTreeMap<String, String>,
    pub temperature: f64,
    pub seed: u64,
}

impl PromptRequest {
    pub fn new(
        template_id: TemplateId,
        slots: BTreeMap<String, String>,
        temperature: f64,
        seed: u64,
    ) -> Result<Self, LlmError> {
        if !(0.0..=1.0).contains(&temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {temperature} outside [0, 1]"
            )));
        }
        for slot in template_id.required_slots() {
            if !slots.contains_key(*slot) {
                return Err(LlmError::InvalidRequest(format!(
                    "template {template_id} missing slot `{slot}`"
                )));
            }
        }
        Ok(Self { template_id, slots, temperature, seed })
    }

    pub fn prompt_text(&self) -> String {
        self.template_id.render(&self.slots)
    }

    /// Canonical request hash: template, temperature, seed, and sorted
    /// slots, each length-framed. Identical requests hash identically.
    pub fn fixture_hash(&self) -> String {
        let temperature = format!("{:.4}", self.temperature);
        let seed = self.seed.to_string();
        let mut parts: Vec<&[u8]> = vec![
            self.template_id.as_str().as_bytes(),
            temperature.as_bytes(),
            seed.as_bytes(),
        ];
        for (key, value) in &self.slots {
            parts.push(key.as_bytes());
            parts.push(value.as_bytes());
        }
        short_hash(&parts)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Structured payload recovered from a completion, when the template's
/// grammar matched.
#[derive(Debug, Clone, PartialEq)]
pub enum ParsedPayload {
    /// `<action>: <description>` lines (rule generation templates).
    Rules(Vec<(RuleAction, String)>),
    /// One name per line (feature identify/select).
    Features(Vec<String>),
    /// Single-line choice (rule_select).
    Choice(String),
    /// A whole program (mutate/repair), code fences stripped.
    Program(String),
    /// First-line yes/no (boundary_extract_implicit).
    YesNo(bool),
}

#[derive(Debug, Clone)]
pub struct ModelResponse {
    pub text: String,
    pub parsed: Option<ParsedPayload>,
    pub usage: TokenUsage,
}

pub trait ChatModel: Send + Sync {
    fn complete(&self, req: &PromptRequest) -> Result<ModelResponse, LlmError>;
}

/// An adapter bound to the sampling parameters of one pipeline role.
/// Temperature and seed are fixed per role, which keeps request hashes —
/// and therefore fixture sets — enumerable.
#[derive(Clone)]
pub struct LlmRole {
    pub adapter: std::sync::Arc<dyn ChatModel>,
    pub temperature: f64,
    pub seed: u64,
}

impl LlmRole {
    pub fn new(adapter: std::sync::Arc<dyn ChatModel>, temperature: f64, seed: u64) -> Self {
        Self { adapter, temperature, seed }
    }

    /// Builds the canonical request for this role; fixture authors go
    /// through the same path so hashes always line up.
    pub fn request(
        &self,
        template: TemplateId,
        slots: BTreeMap<String, String>,
    ) -> Result<PromptRequest, LlmError> {
        PromptRequest::new(template, slots, self.temperature, self.seed)
    }

    pub fn complete(
        &self,
        template: TemplateId,
        slots: BTreeMap<String, String>,
    ) -> Result<ModelResponse, LlmError> {
        self.adapter.complete(&self.request(template, slots)?)
    }
}

/// Per-template role table with a default: looks up the adapter serving
/// each pipeline role.
#[derive(Clone)]
pub struct RoleSet {
    default: LlmRole,
    overrides: BTreeMap<TemplateId, LlmRole>,
}

impl RoleSet {
    pub fn uniform(role: LlmRole) -> Self {
        Self { default: role, overrides: BTreeMap::new() }
    }

    pub fn with_override(mut self, template: TemplateId, role: LlmRole) -> Self {
        self.overrides.insert(template, role);
        self
    }

    pub fn role(&self, template: TemplateId) -> &LlmRole {
        self.overrides.get(&template).unwrap_or(&self.default)
    }

    pub fn request(
        &self,
        template: TemplateId,
        slots: BTreeMap<String, String>,
    ) -> Result<PromptRequest, LlmError> {
        self.role(template).request(template, slots)
    }

    pub fn complete(
        &self,
        template: TemplateId,
        slots: BTreeMap<String, String>,
    ) -> Result<ModelResponse, LlmError> {
        self.role(template).complete(template, slots)
    }
}

/// Applies the template's response grammar. Returns `None` when the text
/// doesn't match at all; rule templates additionally report how many lines
/// were skipped as malformed.
pub fn parse_response(template: TemplateId, text: &str) -> (Option<ParsedPayload>, usize) {
    match template {
        TemplateId::SoRuleGen | TemplateId::BoRuleGen => match parse_rules(text) {
            Ok((rules, skipped)) => (Some(ParsedPayload::Rules(rules)), skipped),
            Err(_) => (None, text.lines().filter(|l| !l.trim().is_empty()).count()),
        },
        TemplateId::FeatureIdentify | TemplateId::FeatureSelect => {
            let features: Vec<String> = text
                .lines()
                .map(strip_enumeration)
                .filter(|l| !l.is_empty())
                .map(|l| l.to_lowercase())
                .collect();
            if features.is_empty() {
                (None, 0)
            } else {
                (Some(ParsedPayload::Features(features)), 0)
            }
        }
        TemplateId::RuleSelect => {
            let choice = text.lines().map(strip_enumeration).find(|l| !l.is_empty());
            match choice {
                Some(c) => (Some(ParsedPayload::Choice(c.to_string())), 0),
                None => (None, 0),
            }
        }
        TemplateId::Mutate | TemplateId::Repair => {
            let program = strip_code_fences(text);
            if program.trim().is_empty() {
                (None, 0)
            } else {
                (Some(ParsedPayload::Program(program)), 0)
            }
        }
        TemplateId::BoundaryExtractImplicit => {
            let first = text.lines().map(str::trim).find(|l| !l.is_empty());
            match first.map(str::to_lowercase).as_deref() {
                Some(l) if l.starts_with("yes") => (Some(ParsedPayload::YesNo(true)), 0),
                Some(l) if l.starts_with("no") => (Some(ParsedPayload::YesNo(false)), 0),
                _ => (None, 0),
            }
        }
    }
}

/// Parses `<action>: <description>` lines. Malformed lines are skipped and
/// counted; an entirely unparsable text is an error.
pub fn parse_rules(text: &str) -> Result<(Vec<(RuleAction, String)>, usize), LlmError> {
    let mut rules = Vec::new();
    let mut skipped = 0usize;
    for line in text.lines() {
        let line = strip_enumeration(line);
        if line.is_empty() {
            continue;
        }
        let Some((action, description)) = line.split_once(':') else {
            skipped += 1;
            continue;
        };
        let description = description.trim();
        match RuleAction::parse(action) {
            Ok(action) if !description.is_empty() => rules.push((action, description.to_string())),
            _ => skipped += 1,
        }
    }
    if rules.is_empty() {
        return Err(LlmError::Parse {
            template: "rule list".into(),
            reason: format!("no `<action>: <description>` lines in {} lines", skipped),
        });
    }
    Ok((rules, skipped))
}

/// Drops leading `1.` / `2)` / `-` / `*` list markers.
fn strip_enumeration(line: &str) -> &str {
    let line = line.trim();
    let line = line
        .strip_prefix(|c: char| c.is_ascii_digit())
        .map(|rest| rest.trim_start_matches(|c: char| c.is_ascii_digit()))
        .and_then(|rest| rest.strip_prefix(['.', ')']))
        .unwrap_or(line);
    line.trim_start_matches(['-', '*']).trim()
}

/// Removes a surrounding markdown code fence if present.
fn strip_code_fences(text: &str) -> String {
    let trimmed = text.trim();
    if !trimmed.starts_with("```") {
        return trimmed.to_string();
    }
    let mut lines: Vec<&str> = trimmed.lines().collect();
    lines.remove(0);
    if lines.last().is_some_and(|l| l.trim().starts_with("```")) {
        lines.pop();
    }
    lines.join("\n")
}

/// Word-count proxy so mock responses report stable, deterministic usage.
pub(crate) fn approximate_usage(prompt: &str, completion: &str) -> TokenUsage {
    TokenUsage {
        prompt_tokens: prompt.split_whitespace().count() as u64,
        completion_tokens: completion.split_whitespace().count() as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slots(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn request_validates_slots_and_temperature() {
        let ok = PromptRequest::new(TemplateId::Mutate, slots(&[("program", "x"), ("rule", "y")]), 0.2, 7);
        assert!(ok.is_ok());
        let missing = PromptRequest::new(TemplateId::Mutate, slots(&[("program", "x")]), 0.2, 7);
        assert!(matches!(missing, Err(LlmError::InvalidRequest(_))));
        let hot = PromptRequest::new(TemplateId::Mutate, slots(&[("program", "x"), ("rule", "y")]), 1.5, 7);
        assert!(matches!(hot, Err(LlmError::InvalidRequest(_))));
    }

    #[test]
    fn fixture_hash_is_stable_and_input_sensitive() {
        let a = PromptRequest::new(TemplateId::Mutate, slots(&[("program", "p"), ("rule", "r")]), 0.2, 7)
            .unwrap();
        let b = PromptRequest::new(TemplateId::Mutate, slots(&[("program", "p"), ("rule", "r")]), 0.2, 7)
            .unwrap();
        assert_eq!(a.fixture_hash(), b.fixture_hash());

        let other_seed =
            PromptRequest::new(TemplateId::Mutate, slots(&[("program", "p"), ("rule", "r")]), 0.2, 8)
                .unwrap();
        assert_ne!(a.fixture_hash(), other_seed.fixture_hash());

        let other_slot =
            PromptRequest::new(TemplateId::Mutate, slots(&[("program", "q"), ("rule", "r")]), 0.2, 7)
                .unwrap();
        assert_ne!(a.fixture_hash(), other_slot.fixture_hash());
    }

    // Grammar applied by hand: one action line parses to one rule.
    #[test]
    fn parse_rules_single_line() {
        let (rules, skipped) =
            parse_rules("insert: add a user-defined value type field to the struct").unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(rules.len(), 1);
        assert_eq!(rules[0].0, RuleAction::Insert);
        assert_eq!(rules[0].1, "add a user-defined value type field to the struct");
    }

    #[test]
    fn parse_rules_skips_malformed_lines() {
        let text = "1. insert: add a field\n2. replace: swap the type\nnot a rule line\nclear: remove visibility\n";
        let (rules, skipped) = parse_rules(text).unwrap();
        assert_eq!(rules.len(), 3);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn parse_rules_rejects_empty_and_unknown_actions() {
        assert!(parse_rules("").is_err());
        assert!(parse_rules("delete: not in the action set").is_err());
    }

    #[test]
    fn response_grammars_per_template() {
        let (p, _) = parse_response(TemplateId::FeatureIdentify, "Struct\nfixed-size array\n");
        assert_eq!(
            p,
            Some(ParsedPayload::Features(vec!["struct".into(), "fixed-size array".into()]))
        );

        let (p, _) = parse_response(TemplateId::RuleSelect, "\n  so-abc123\n");
        assert_eq!(p, Some(ParsedPayload::Choice("so-abc123".into())));

        let (p, _) = parse_response(TemplateId::Mutate, "```solidity\ncontract C {}\n```");
        assert_eq!(p, Some(ParsedPayload::Program("contract C {}".into())));

        let (p, _) = parse_response(TemplateId::BoundaryExtractImplicit, "Yes, a type cast.\n");
        assert_eq!(p, Some(ParsedPayload::YesNo(true)));
        let (p, _) = parse_response(TemplateId::BoundaryExtractImplicit, "no\n");
        assert_eq!(p, Some(ParsedPayload::YesNo(false)));
        let (p, _) = parse_response(TemplateId::BoundaryExtractImplicit, "maybe\n");
        assert_eq!(p, None);
    }

    #[test]
    fn rendered_prompts_contain_all_slot_values() {
        for template in TemplateId::ALL {
            let filled: BTreeMap<String, String> = template
                .required_slots()
                .iter()
                .map(|s| (s.to_string(), format!("<{s}-value>")))
                .collect();
            let prompt = template.render(&filled);
            for slot in template.required_slots() {
                assert!(
                    prompt.contains(&format!("<{slot}-value>")),
                    "{template} prompt drops slot {slot}"
                );
            }
        }
    }

    #[test]
    fn template_ids_serialize_to_directory_names() {
        let json = serde_json::to_string(&TemplateId::BoundaryExtractImplicit).unwrap();
        assert_eq!(json, "\"boundary_extract_implicit\"");
        let back: TemplateId = serde_json::from_str("\"so_rule_gen\"").unwrap();
        assert_eq!(back, TemplateId::SoRuleGen);
    }
}
