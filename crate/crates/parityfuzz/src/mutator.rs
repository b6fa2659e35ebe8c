//! The fine-grained mutation stage: pick a feature present in the seed,
//! pick a rule under it, apply the rule through the mutate role, and
//! repair baseline compile failures for a bounded number of rounds.

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use thiserror::Error;

use crate::llm::{LlmError, ParsedPayload, RoleSet, TemplateId};
use crate::policy::{PolicyError, SelectionStrategy};
use crate::rulegen::{canonical_feature, RuleCatalog};
use crate::toolchain::{CompileArtifacts, HarnessError, Toolchain};
use crate::types::{DomainError, FeatureTag, MutationRule, SeedProgram};

#[derive(Debug, Error)]
pub enum MutatorError {
    #[error("catalog has no features")]
    EmptyCatalog,
    #[error("feature `{0}` has no rules in the catalog")]
    NoRules(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Asks the feature_select role which catalog features the program
/// contains and returns the first answer that exists in the catalog.
/// Unusable answers (unknown features, transport failure) fall back to a
/// uniform draw over the catalog, so a feature is always produced; only
/// broken adapter wiring (e.g. a missing fixture) is an error.
pub fn select_feature(
    program: &SeedProgram,
    catalog: &RuleCatalog,
    roles: &RoleSet,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureTag, MutatorError> {
    if catalog.features.is_empty() {
        return Err(MutatorError::EmptyCatalog);
    }
    let listing: String = catalog.features.iter().map(|f| format!("{f}\n")).collect();
    let slots: BTreeMap<String, String> = [
        ("program".to_string(), program.source.clone()),
        ("features".to_string(), listing),
    ]
    .into_iter()
    .collect();

    match roles.complete(TemplateId::FeatureSelect, slots) {
        Ok(response) => {
            if let Some(ParsedPayload::Features(answers)) = response.parsed {
                for answer in &answers {
                    if let Ok(tag) = canonical_feature(answer) {
                        if catalog.features.contains(&tag) {
                            return Ok(tag);
                        }
                    }
                }
                warn!(
                    "feature_select for {} answered only unknown features {answers:?}; \
                     falling back to a uniform draw",
                    program.id
                );
            } else {
                warn!("feature_select for {} was unparsable; falling back", program.id);
            }
        }
        Err(err @ LlmError::Transport { .. }) => {
            warn!("feature_select for {}: {err}; falling back", program.id);
        }
        Err(err) => return Err(err.into()),
    }

    let index = rng.random_range(0..catalog.features.len());
    Ok(catalog.features[index].clone())
}

/// Picks one rule from the feature's catalog group via the configured
/// selection strategy.
pub fn select_rule(
    feature: &FeatureTag,
    program: &SeedProgram,
    catalog: &RuleCatalog,
    strategy: &mut dyn SelectionStrategy,
    rng_seed: u64,
) -> Result<MutationRule, MutatorError> {
    let candidates: Vec<MutationRule> =
        catalog.rules_for(feature).into_iter().cloned().collect();
    if candidates.is_empty() {
        return Err(MutatorError::NoRules(feature.to_string()));
    }
    let picked = strategy.select(feature, &candidates, program, rng_seed)?;
    candidates
        .into_iter()
        .find(|r| r.id == picked)
        .ok_or_else(|| MutatorError::NoRules(feature.to_string()))
}

/// Cheap sanity gate: the text must contain a Solidity unit keyword.
/// The baseline compiler remains the real validator.
fn plausible_solidity(text: &str) -> bool {
    static UNIT: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    UNIT.get_or_init(|| Regex::new(r"\b(?:contract|interface|library)\b").unwrap())
        .is_match(text)
}

/// Applies `rule` to `program` through the mutate role. Returns `None`
/// when no usable variant came back this round: implausible output, a
/// byte-identical echo of the parent, or a transport failure.
pub fn mutate(
    program: &SeedProgram,
    rule: &MutationRule,
    roles: &RoleSet,
) -> Result<Option<SeedProgram>, MutatorError> {
    let slots: BTreeMap<String, String> = [
        ("program".to_string(), program.source.clone()),
        ("rule".to_string(), format!("{}: {}", rule.action.as_str(), rule.description)),
    ]
    .into_iter()
    .collect();
    let response = match roles.complete(TemplateId::Mutate, slots) {
        Ok(response) => response,
        Err(err @ LlmError::Transport { .. }) => {
            warn!("mutate of {} with {}: {err}; no mutation this round", program.id, rule.id);
            return Ok(None);
        }
        Err(err) => return Err(err.into()),
    };
    let Some(ParsedPayload::Program(text)) = response.parsed else {
        warn!("mutate of {} produced no program text", program.id);
        return Ok(None);
    };
    if !plausible_solidity(&text) {
        warn!("mutate of {} produced implausible output; discarded", program.id);
        return Ok(None);
    }
    if text.trim() == program.source.trim() {
        return Ok(None);
    }
    Ok(Some(SeedProgram::variant_of(program, text)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepairStatus {
    Compiles,
    GaveUp,
}

#[derive(Debug)]
pub struct RepairOutcome {
    pub program: SeedProgram,
    pub status: RepairStatus,
    pub rounds_used: u32,
    /// The final baseline compile, reusable by the caller without another
    /// compiler invocation.
    pub artifacts: CompileArtifacts,
}

/// Compile-repair loop against the baseline toolchain: at most
/// `max_rounds` repair prompts, each fed the current compile stderr. The
/// final variant is returned even when it still fails — a baseline
/// failure remains eligible for differential compile comparison.
pub fn repair(
    program: SeedProgram,
    baseline: &dyn Toolchain,
    roles: &RoleSet,
    max_rounds: u32,
) -> Result<RepairOutcome, MutatorError> {
    let mut current = program;
    let mut artifacts = baseline.compile(&current)?;
    if artifacts.outcome.is_success() {
        return Ok(RepairOutcome {
            program: current,
            status: RepairStatus::Compiles,
            rounds_used: 0,
            artifacts,
        });
    }

    for round in 1..=max_rounds {
        let slots: BTreeMap<String, String> = [
            ("program".to_string(), current.source.clone()),
            ("stderr".to_string(), artifacts.outcome.stderr.clone()),
        ]
        .into_iter()
        .collect();
        match roles.complete(TemplateId::Repair, slots) {
            Ok(response) => {
                if let Some(ParsedPayload::Program(text)) = response.parsed {
                    if plausible_solidity(&text) && text.trim() != current.source.trim() {
                        current = SeedProgram::variant_of(&current, text)?;
                        artifacts = baseline.compile(&current)?;
                        if artifacts.outcome.is_success() {
                            return Ok(RepairOutcome {
                                program: current,
                                status: RepairStatus::Compiles,
                                rounds_used: round,
                                artifacts,
                            });
                        }
                        continue;
                    }
                }
                warn!("repair round {round} for {} produced no usable program", current.id);
            }
            Err(err @ LlmError::Transport { .. }) => {
                warn!("repair round {round} for {}: {err}; round skipped", current.id);
            }
            Err(err) => return Err(err.into()),
        }
    }

    Ok(RepairOutcome {
        program: current,
        status: RepairStatus::GaveUp,
        rounds_used: max_rounds,
        artifacts,
    })
}
