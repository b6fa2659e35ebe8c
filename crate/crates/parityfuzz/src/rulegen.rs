//! Mutation-rule catalog production: scan compiler/executor source trees
//! for boundary conditions, identify the language features that can reach
//! them, generate syntax-oriented rules per feature and boundary-oriented
//! rules per (feature, condition) pair, and assemble a stable catalog.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::warn;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{LlmError, ParsedPayload, RoleSet, TemplateId};
use crate::types::{
    BoundaryCondition, DomainError, FeatureTag, MutationRule, RuleKind, TriggerKind,
};

#[derive(Debug, Error)]
pub enum RulegenError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("walk: {0}")]
    Walk(#[from] walkdir::Error),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("catalog: {0}")]
    Catalog(String),
}

/// Tunables for the source-tree scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryScanConfig {
    /// Identifiers whose appearance marks an explicit boundary condition.
    pub identifiers: Vec<String>,
    /// Context lines kept above and below a matched line.
    pub context_lines: usize,
    /// Source-file extensions scanned (compiler codebases span Rust, C++
    /// and D).
    pub extensions: Vec<String>,
    /// Window size for implicit-boundary chunking.
    pub window_lines: usize,
    /// Overlap between consecutive windows so a condition is never split.
    pub window_overlap: usize,
}

impl Default for BoundaryScanConfig {
    fn default() -> Self {
        Self {
            identifiers: ["error", "panic", "unimplemented", "unreachable", "assert"]
                .into_iter()
                .map(String::from)
                .collect(),
            context_lines: 15,
            extensions: ["rs", "cpp", "cc", "cxx", "h", "hpp", "d"]
                .into_iter()
                .map(String::from)
                .collect(),
            window_lines: 120,
            window_overlap: 20,
        }
    }
}

impl BoundaryScanConfig {
    fn identifier_regex(&self) -> Result<Regex, RulegenError> {
        let alternatives: Vec<String> =
            self.identifiers.iter().map(|i| regex::escape(i)).collect();
        Regex::new(&format!(r"(?i)\b(?:{})\b", alternatives.join("|")))
            .map_err(|e| RulegenError::Catalog(format!("bad identifier set: {e}")))
    }

    fn wants_extension(&self, path: &Path) -> bool {
        path.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|ext| self.extensions.iter().any(|want| want.eq_ignore_ascii_case(ext)))
    }
}

fn trigger_for(identifier: &str) -> TriggerKind {
    match identifier.to_lowercase().as_str() {
        "error" | "panic" => TriggerKind::ErrorHandling,
        "unimplemented" => TriggerKind::Unimplemented,
        "unreachable" => TriggerKind::ValidityCheck,
        "assert" => TriggerKind::Assertion,
        _ => TriggerKind::ErrorHandling,
    }
}

/// Walks the files under `root` in path order, skipping extensions outside
/// the configured set; unreadable files are warned about and skipped.
fn source_files(
    root: &Path,
    config: &BoundaryScanConfig,
) -> Result<Vec<(PathBuf, String)>, RulegenError> {
    if !root.exists() {
        return Err(RulegenError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("source root {} does not exist", root.display()),
        )));
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry?;
        if !entry.file_type().is_file() || !config.wants_extension(entry.path()) {
            continue;
        }
        match std::fs::read_to_string(entry.path()) {
            Ok(text) => {
                let rel = entry
                    .path()
                    .strip_prefix(root)
                    .unwrap_or(entry.path())
                    .to_string_lossy()
                    .replace('\\', "/");
                files.push((PathBuf::from(rel), text));
            }
            Err(err) => warn!("skipping unreadable {}: {err}", entry.path().display()),
        }
    }
    Ok(files)
}

/// Lexical scan for explicit boundary markers. Matching is deliberately
/// over-approximate (comments and strings count); each matched line
/// becomes a snippet of the line plus `context_lines` of context, and
/// overlapping snippets within a file merge into one condition.
pub fn extract_explicit_boundaries(
    source_root: &Path,
    config: &BoundaryScanConfig,
) -> Result<Vec<BoundaryCondition>, RulegenError> {
    let regex = config.identifier_regex()?;
    let mut conditions = Vec::new();
    for (rel_path, text) in source_files(source_root, config)? {
        let lines: Vec<&str> = text.lines().collect();
        // (window start, window end exclusive, identifiers in hit order)
        let mut blocks: Vec<(usize, usize, Vec<String>)> = Vec::new();
        for (index, line) in lines.iter().enumerate() {
            let hits: Vec<String> =
                regex.find_iter(line).map(|m| m.as_str().to_lowercase()).collect();
            if hits.is_empty() {
                continue;
            }
            let start = index.saturating_sub(config.context_lines);
            let end = (index + config.context_lines + 1).min(lines.len());
            match blocks.last_mut() {
                Some((_, last_end, idents)) if start <= *last_end => {
                    *last_end = end.max(*last_end);
                    for hit in hits {
                        if !idents.contains(&hit) {
                            idents.push(hit);
                        }
                    }
                }
                _ => {
                    let mut idents = Vec::new();
                    for hit in hits {
                        if !idents.contains(&hit) {
                            idents.push(hit);
                        }
                    }
                    blocks.push((start, end, idents));
                }
            }
        }
        for (start, end, idents) in blocks {
            let snippet = lines[start..end].join("\n");
            let trigger = trigger_for(&idents[0]);
            conditions.push(BoundaryCondition::new(
                rel_path.to_string_lossy().into_owned(),
                snippet,
                trigger,
                idents,
            )?);
        }
    }
    Ok(conditions)
}

fn chunk_lines(text: &str, window: usize, overlap: usize) -> Vec<String> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.is_empty() {
        return Vec::new();
    }
    let window = window.max(1);
    let step = window.saturating_sub(overlap).max(1);
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + window).min(lines.len());
        chunks.push(lines[start..end].join("\n"));
        if end == lines.len() {
            break;
        }
        start += step;
    }
    chunks
}

/// Model-assisted scan for implicit boundary handling (casts, bounds and
/// overflow checks). Transport failures skip the chunk and keep partial
/// results; a missing mock fixture stays a hard error.
pub fn extract_implicit_boundaries(
    source_root: &Path,
    config: &BoundaryScanConfig,
    roles: &RoleSet,
) -> Result<(Vec<BoundaryCondition>, Vec<String>), RulegenError> {
    let mut conditions = Vec::new();
    let mut warnings = Vec::new();
    for (rel_path, text) in source_files(source_root, config)? {
        for chunk in chunk_lines(&text, config.window_lines, config.window_overlap) {
            let slots: BTreeMap<String, String> =
                [("chunk".to_string(), chunk.clone())].into_iter().collect();
            let response = match roles.complete(TemplateId::BoundaryExtractImplicit, slots) {
                Ok(response) => response,
                Err(err @ LlmError::Transport { .. }) => {
                    let message = format!("implicit scan of {}: {err}", rel_path.display());
                    warn!("{message}");
                    warnings.push(message);
                    continue;
                }
                Err(err) => return Err(err.into()),
            };
            match response.parsed {
                Some(ParsedPayload::YesNo(true)) => {
                    conditions.push(BoundaryCondition::new(
                        rel_path.to_string_lossy().into_owned(),
                        chunk,
                        TriggerKind::Implicit,
                        Vec::new(),
                    )?);
                }
                Some(ParsedPayload::YesNo(false)) => {}
                _ => {
                    let message =
                        format!("implicit scan of {}: unparsable answer", rel_path.display());
                    warn!("{message}");
                    warnings.push(message);
                }
            }
        }
    }
    Ok((conditions, warnings))
}

/// Synonym folding applied after tag normalization, so near-duplicate
/// feature spellings collapse into one vocabulary entry.
fn alias_table() -> &'static BTreeMap<&'static str, &'static str> {
    static TABLE: std::sync::OnceLock<BTreeMap<&'static str, &'static str>> =
        std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        BTreeMap::from([
            ("structs", "struct"),
            ("struct type", "struct"),
            ("struct types", "struct"),
            ("mappings", "mapping"),
            ("arrays", "array"),
            ("fixed size array", "fixed-size array"),
            ("fixed size arrays", "fixed-size array"),
            ("fixed-size arrays", "fixed-size array"),
            ("static array", "fixed-size array"),
            ("static arrays", "fixed-size array"),
            ("dynamic arrays", "dynamic array"),
            ("dynamic-size array", "dynamic array"),
            ("enums", "enum"),
            ("interfaces", "interface"),
            ("libraries", "library"),
            ("functions", "function"),
            ("internal functions", "internal function"),
            ("external functions", "external function"),
            ("modifiers", "modifier"),
            ("function modifier", "modifier"),
            ("user defined value type", "user-defined value type"),
            ("user defined value types", "user-defined value type"),
            ("user-defined value types", "user-defined value type"),
            ("delegate call", "delegatecall"),
            ("delegate-call", "delegatecall"),
            ("delete", "delete-operation"),
            ("delete operation", "delete-operation"),
            ("delete statement", "delete-operation"),
            ("inline assembly", "assembly"),
            ("constructors", "constructor"),
            ("events", "event"),
        ])
    })
}

/// Normalizes one raw feature spelling into its canonical tag.
pub fn canonical_feature(raw: &str) -> Result<FeatureTag, DomainError> {
    let normalized = FeatureTag::normalize(raw);
    let folded = alias_table().get(normalized.as_str()).copied().unwrap_or(&normalized);
    FeatureTag::new(folded)
}

/// Asks the feature_identify role which language features can reach the
/// condition; unknown features are admitted into the vocabulary. An
/// unparsable response degrades to an empty list with a warning.
pub fn identify_features(
    cond: &BoundaryCondition,
    roles: &RoleSet,
) -> Result<Vec<FeatureTag>, RulegenError> {
    let slots: BTreeMap<String, String> =
        [("snippet".to_string(), cond.snippet.clone())].into_iter().collect();
    let response = roles.complete(TemplateId::FeatureIdentify, slots)?;
    let Some(ParsedPayload::Features(raw)) = response.parsed else {
        warn!("feature_identify for {} returned no parsable features", cond.id);
        return Ok(Vec::new());
    };
    let mut seen = BTreeSet::new();
    let mut features = Vec::new();
    for name in raw {
        match canonical_feature(&name) {
            Ok(tag) => {
                if seen.insert(tag.clone()) {
                    features.push(tag);
                }
            }
            Err(_) => warn!("discarding unusable feature spelling `{name}`"),
        }
    }
    Ok(features)
}

fn collect_rules(
    kind: RuleKind,
    feature: &FeatureTag,
    origin: &str,
    parsed: Vec<(crate::types::RuleAction, String)>,
) -> Vec<MutationRule> {
    let mut seen = BTreeSet::new();
    let mut rules = Vec::new();
    for (action, description) in parsed {
        let key = (action, crate::types::normalize_ws(&description).to_lowercase());
        if seen.insert(key) {
            rules.push(MutationRule::new(kind, feature.clone(), action, description, origin));
        }
    }
    rules
}

/// Generates syntax-oriented rules for one feature. Lines with actions
/// outside the closed five-action set were already dropped by the
/// response grammar; duplicates collapse here.
pub fn gen_syntax_rules(
    feature: &FeatureTag,
    roles: &RoleSet,
) -> Result<Vec<MutationRule>, RulegenError> {
    let slots: BTreeMap<String, String> =
        [("feature".to_string(), feature.to_string())].into_iter().collect();
    let response = roles.complete(TemplateId::SoRuleGen, slots)?;
    match response.parsed {
        Some(ParsedPayload::Rules(parsed)) => Ok(collect_rules(
            RuleKind::SyntaxOriented,
            feature,
            &format!("feature:{feature}"),
            parsed,
        )),
        _ => {
            warn!("so_rule_gen for `{feature}` produced no parsable rules");
            Ok(Vec::new())
        }
    }
}

/// Generates boundary-oriented rules for exactly one (condition, feature)
/// pair, with the feature's syntax-oriented rules as reference material.
pub fn gen_boundary_rules(
    cond: &BoundaryCondition,
    feature: &FeatureTag,
    so_rules: &[MutationRule],
    roles: &RoleSet,
) -> Result<Vec<MutationRule>, RulegenError> {
    if let Some(stray) = so_rules.iter().find(|r| &r.feature != feature) {
        return Err(RulegenError::Precondition(format!(
            "reference rule {} belongs to feature `{}`, not `{feature}`",
            stray.id, stray.feature
        )));
    }
    let listing: String = so_rules
        .iter()
        .map(|r| format!("{}: {}\n", r.action.as_str(), r.description))
        .collect();
    let slots: BTreeMap<String, String> = [
        ("feature".to_string(), feature.to_string()),
        ("condition".to_string(), cond.snippet.clone()),
        ("so_rules".to_string(), listing),
    ]
    .into_iter()
    .collect();
    let response = roles.complete(TemplateId::BoRuleGen, slots)?;
    match response.parsed {
        Some(ParsedPayload::Rules(parsed)) => {
            Ok(collect_rules(RuleKind::BoundaryOriented, feature, &cond.id, parsed))
        }
        _ => {
            warn!("bo_rule_gen for `{feature}` / {} produced no parsable rules", cond.id);
            Ok(Vec::new())
        }
    }
}

pub const CATALOG_VERSION: u32 = 1;

/// The rule catalog document: feature vocabulary, extracted conditions,
/// and rules ordered by (feature, kind, id) so each feature group reads
/// as its SO list followed by its BO list, and re-runs diff cleanly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCatalog {
    pub catalog_version: u32,
    pub features: Vec<FeatureTag>,
    pub conditions: Vec<BoundaryCondition>,
    pub rules: Vec<MutationRule>,
}

impl RuleCatalog {
    pub fn build(
        features: Vec<FeatureTag>,
        conditions: Vec<BoundaryCondition>,
        rules: Vec<MutationRule>,
    ) -> Result<Self, DomainError> {
        let mut features: Vec<FeatureTag> =
            features.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        features.sort();

        let mut by_id: BTreeMap<String, BoundaryCondition> =
            conditions.into_iter().map(|c| (c.id.clone(), c)).collect();
        let conditions: Vec<BoundaryCondition> = std::mem::take(&mut by_id).into_values().collect();

        let mut rules_by_id: BTreeMap<String, MutationRule> =
            rules.into_iter().map(|r| (r.id.clone(), r)).collect();
        let mut rules: Vec<MutationRule> = std::mem::take(&mut rules_by_id).into_values().collect();
        rules.sort_by(|a, b| {
            a.feature.cmp(&b.feature).then(a.kind.cmp(&b.kind)).then(a.id.cmp(&b.id))
        });

        let catalog = Self { catalog_version: CATALOG_VERSION, features, conditions, rules };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.catalog_version != CATALOG_VERSION {
            return Err(DomainError::InvalidCatalog(format!(
                "unsupported catalog_version {}",
                self.catalog_version
            )));
        }
        let features: BTreeSet<&FeatureTag> = self.features.iter().collect();
        let condition_ids: BTreeSet<&str> =
            self.conditions.iter().map(|c| c.id.as_str()).collect();
        for rule in &self.rules {
            if !features.contains(&rule.feature) {
                return Err(DomainError::InvalidCatalog(format!(
                    "rule {} references unknown feature `{}`",
                    rule.id, rule.feature
                )));
            }
            if rule.kind == RuleKind::BoundaryOriented && !condition_ids.contains(rule.origin.as_str())
            {
                return Err(DomainError::InvalidCatalog(format!(
                    "rule {} origin `{}` is not an extracted condition",
                    rule.id, rule.origin
                )));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// All rules under one feature, SO group first (catalog order).
    pub fn rules_for(&self, feature: &FeatureTag) -> Vec<&MutationRule> {
        self.rules.iter().filter(|r| &r.feature == feature).collect()
    }

    pub fn so_rules_for(&self, feature: &FeatureTag) -> Vec<&MutationRule> {
        self.rules
            .iter()
            .filter(|r| &r.feature == feature && r.kind == RuleKind::SyntaxOriented)
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), RulegenError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| RulegenError::Catalog(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RulegenError> {
        let text = std::fs::read_to_string(path)?;
        let catalog: Self =
            serde_json::from_str(&text).map_err(|e| RulegenError::Catalog(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }
}

/// Output of the full three-step pipeline plus accumulated warnings.
pub struct PipelineOutput {
    pub catalog: RuleCatalog,
    pub warnings: Vec<String>,
}

/// Runs extraction, feature identification, and both rule-generation
/// steps over the given source roots.
pub fn run_pipeline(
    source_roots: &[PathBuf],
    config: &BoundaryScanConfig,
    roles: &RoleSet,
    explicit_only: bool,
) -> Result<PipelineOutput, RulegenError> {
    let mut warnings = Vec::new();
    let mut conditions: Vec<BoundaryCondition> = Vec::new();
    let mut seen_conditions = BTreeSet::new();
    for root in source_roots {
        for cond in extract_explicit_boundaries(root, config)? {
            if seen_conditions.insert(cond.id.clone()) {
                conditions.push(cond);
            }
        }
        if !explicit_only {
            let (implicit, mut notes) = extract_implicit_boundaries(root, config, roles)?;
            warnings.append(&mut notes);
            for cond in implicit {
                if seen_conditions.insert(cond.id.clone()) {
                    conditions.push(cond);
                }
            }
        }
    }

    let mut vocabulary: BTreeSet<FeatureTag> = BTreeSet::new();
    let mut features_per_condition: Vec<(usize, Vec<FeatureTag>)> = Vec::new();
    for (index, cond) in conditions.iter().enumerate() {
        let features = identify_features(cond, roles)?;
        if features.is_empty() {
            warnings.push(format!("no features identified for condition {}", cond.id));
        }
        vocabulary.extend(features.iter().cloned());
        features_per_condition.push((index, features));
    }

    let mut so_by_feature: BTreeMap<FeatureTag, Vec<MutationRule>> = BTreeMap::new();
    for feature in &vocabulary {
        let rules = gen_syntax_rules(feature, roles)?;
        if rules.is_empty() {
            warnings.push(format!("no syntax-oriented rules for feature `{feature}`"));
        }
        so_by_feature.insert(feature.clone(), rules);
    }

    let mut rules: Vec<MutationRule> =
        so_by_feature.values().flat_map(|v| v.iter().cloned()).collect();
    for (index, features) in &features_per_condition {
        let cond = &conditions[*index];
        for feature in features {
            let so_rules = so_by_feature.get(feature).map(Vec::as_slice).unwrap_or(&[]);
            rules.extend(gen_boundary_rules(cond, feature, so_rules, roles)?);
        }
    }

    let catalog =
        RuleCatalog::build(vocabulary.into_iter().collect(), conditions, rules)?;
    Ok(PipelineOutput { catalog, warnings })
}
