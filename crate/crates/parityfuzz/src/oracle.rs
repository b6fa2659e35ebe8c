//! Differential detection: compare the baseline toolchain's outcomes with
//! each other toolchain, classify EMI/CSI/ESI/EOI, honor per-target
//! comparison restrictions, and flag documented design differences as
//! false positives without dropping them from storage.

use std::collections::BTreeSet;
use std::path::Path;

use log::{debug, warn};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::types::{
    CompileOutcome, CompileStatus, DomainError, ExecOutcome, InconsistencyClass,
    InconsistencyRecord, OutcomeSnapshot, SeedProgram, ToolchainId,
};
use crate::value::canonical_equal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EsiDirection {
    Both,
    OnlyBaselineFails,
}

pub use crate::toolchain::CompatLevel;

/// Per-toolchain comparison restrictions. The two flags are fully
/// determined by the compat level; they stay explicit so serialized
/// policies are self-describing and validated on load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonPolicy {
    pub toolchain: ToolchainId,
    pub compat: CompatLevel,
    pub csi_requires_unclear_error: bool,
    pub esi_direction: EsiDirection,
}

impl ComparisonPolicy {
    /// Full-strength comparison for toolchains highly compatible with the
    /// baseline: every CSI direction and every ESI direction counts.
    pub fn high(toolchain: ToolchainId) -> Self {
        Self {
            toolchain,
            compat: CompatLevel::High,
            csi_requires_unclear_error: false,
            esi_direction: EsiDirection::Both,
        }
    }

    /// Restricted comparison for partially compatible toolchains: CSI only
    /// when the other side's diagnostic is unclear, ESI only when the
    /// baseline side fails.
    pub fn limited(toolchain: ToolchainId) -> Self {
        Self {
            toolchain,
            compat: CompatLevel::Limited,
            csi_requires_unclear_error: true,
            esi_direction: EsiDirection::OnlyBaselineFails,
        }
    }

    pub fn for_compat(toolchain: ToolchainId, compat: CompatLevel) -> Self {
        match compat {
            CompatLevel::High => Self::high(toolchain),
            CompatLevel::Limited => Self::limited(toolchain),
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let consistent = match self.compat {
            CompatLevel::High => {
                !self.csi_requires_unclear_error && self.esi_direction == EsiDirection::Both
            }
            CompatLevel::Limited => {
                self.csi_requires_unclear_error
                    && self.esi_direction == EsiDirection::OnlyBaselineFails
            }
        };
        if consistent {
            Ok(())
        } else {
            Err(DomainError::InvalidPolicy(format!(
                "restrictions do not match compat level for {}",
                self.toolchain.name
            )))
        }
    }
}

/// How an FP pattern inspects the program source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "pattern")]
pub enum FpMatcherSpec {
    Substring(String),
    Regex(String),
}

/// One documented design difference, matched against program source. A
/// pattern with an empty `toolchain.version` applies to every version of
/// that toolchain, so pattern files survive compiler upgrades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpPattern {
    pub id: String,
    pub toolchain: ToolchainId,
    pub matcher: FpMatcherSpec,
    /// Citation into the toolchain's documented-differences page.
    pub note: String,
    pub applies_to: BTreeSet<InconsistencyClass>,
}

impl FpPattern {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.applies_to.is_empty() {
            return Err(DomainError::InvalidPolicy(format!(
                "fp pattern {} has an empty applies_to set",
                self.id
            )));
        }
        if let FpMatcherSpec::Regex(pattern) = &self.matcher {
            Regex::new(pattern).map_err(|e| {
                DomainError::InvalidPolicy(format!("fp pattern {}: bad regex: {e}", self.id))
            })?;
        }
        Ok(())
    }
}

struct CompiledFp {
    pattern: FpPattern,
    regex: Option<Regex>,
}

/// A validated, precompiled pattern set.
pub struct FpMatcher {
    compiled: Vec<CompiledFp>,
}

impl FpMatcher {
    pub fn new(patterns: Vec<FpPattern>) -> Result<Self, DomainError> {
        let mut compiled = Vec::with_capacity(patterns.len());
        for pattern in patterns {
            pattern.validate()?;
            let regex = match &pattern.matcher {
                FpMatcherSpec::Regex(r) => Some(Regex::new(r).expect("validated regex")),
                FpMatcherSpec::Substring(_) => None,
            };
            compiled.push(CompiledFp { pattern, regex });
        }
        Ok(Self { compiled })
    }

    pub fn empty() -> Self {
        Self { compiled: Vec::new() }
    }

    /// Loads a JSON array of patterns.
    pub fn from_file(path: &Path) -> Result<Self, DomainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DomainError::InvalidPolicy(format!("{}: {e}", path.display())))?;
        let patterns: Vec<FpPattern> = serde_json::from_str(&text)
            .map_err(|e| DomainError::InvalidPolicy(format!("{}: {e}", path.display())))?;
        Self::new(patterns)
    }

    pub fn patterns(&self) -> impl Iterator<Item = &FpPattern> {
        self.compiled.iter().map(|c| &c.pattern)
    }

    /// First pattern that applies to this record, if any.
    pub fn matching(&self, rec: &InconsistencyRecord) -> Option<&FpPattern> {
        self.compiled
            .iter()
            .find(|c| {
                let tc = &c.pattern.toolchain;
                tc.name == rec.other.name
                    && (tc.version.is_empty() || tc.version == rec.other.version)
                    && c.pattern.applies_to.contains(&rec.class)
                    && match (&c.pattern.matcher, &c.regex) {
                        (FpMatcherSpec::Substring(s), _) => rec.program.source.contains(s),
                        (FpMatcherSpec::Regex(_), Some(re)) => re.is_match(&rec.program.source),
                        (FpMatcherSpec::Regex(_), None) => false,
                    }
            })
            .map(|c| &c.pattern)
    }
}

/// Classifies a compile-outcome pair. `None` means the pair is consistent
/// (or suppressed by policy).
pub fn compare_compilation(
    baseline: &CompileOutcome,
    other: &CompileOutcome,
    policy: &ComparisonPolicy,
    program: &SeedProgram,
) -> Option<InconsistencyRecord> {
    let record = |class| {
        InconsistencyRecord::new(
            class,
            program.clone(),
            OutcomeSnapshot::Compile(baseline.clone()),
            OutcomeSnapshot::Compile(other.clone()),
        )
        .expect("outcome pair satisfies the class invariant")
    };

    match (baseline.is_success(), other.is_success()) {
        (true, true) => None,
        (false, false) => {
            if baseline.clear_error != other.clear_error {
                Some(record(InconsistencyClass::Emi))
            } else {
                None
            }
        }
        (true, false) => {
            // A crash or timeout on the other side is always worth a CSI
            // record; the unclear-error restriction only guards ordinary
            // failures of partially compatible toolchains.
            let forced = matches!(other.status, CompileStatus::Crash | CompileStatus::Timeout);
            if !forced && policy.csi_requires_unclear_error && other.clear_error {
                debug!(
                    "suppressing CSI for {}: clear diagnostic under limited policy",
                    other.toolchain.name
                );
                None
            } else {
                Some(record(InconsistencyClass::Csi))
            }
        }
        (false, true) => Some(record(InconsistencyClass::Csi)),
    }
}

/// Classifies an execution-outcome pair. Callers must only invoke this
/// when both toolchains compiled the program successfully.
pub fn compare_execution(
    baseline: &ExecOutcome,
    other: &ExecOutcome,
    policy: &ComparisonPolicy,
    program: &SeedProgram,
) -> Option<InconsistencyRecord> {
    let record = |class| {
        InconsistencyRecord::new(
            class,
            program.clone(),
            OutcomeSnapshot::Exec(baseline.clone()),
            OutcomeSnapshot::Exec(other.clone()),
        )
        .expect("outcome pair satisfies the class invariant")
    };

    match (baseline.is_success(), other.is_success()) {
        (false, false) => None,
        (true, false) => {
            if policy.esi_direction == EsiDirection::OnlyBaselineFails {
                debug!(
                    "suppressing ESI for {}: other-side failure under limited policy",
                    other.toolchain.name
                );
                None
            } else {
                Some(record(InconsistencyClass::Esi))
            }
        }
        (false, true) => Some(record(InconsistencyClass::Esi)),
        (true, true) => match (&baseline.decoded, &other.decoded) {
            (Some(b), Some(o)) if !canonical_equal(b, o) => Some(record(InconsistencyClass::Eoi)),
            (Some(_), Some(_)) => None,
            _ => {
                debug!(
                    "program {} vs {} is EOI-incomparable: undecoded side",
                    program.id, other.toolchain.name
                );
                None
            }
        },
    }
}

/// Sets `fp_filtered` when a documented-difference pattern covers the
/// record; everything else about the record is left untouched.
pub fn filter_false_positive(
    mut rec: InconsistencyRecord,
    patterns: &FpMatcher,
) -> InconsistencyRecord {
    if let Some(pattern) = patterns.matching(&rec) {
        debug!("record {} filtered by fp pattern {}", rec.id, pattern.id);
        rec.fp_filtered = true;
    }
    rec
}

/// Compile and (optional) execute outcomes from one toolchain for one
/// program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolchainRun {
    pub compile: CompileOutcome,
    pub exec: Option<ExecOutcome>,
}

/// One non-baseline toolchain's run plus its comparison configuration.
#[derive(Debug, Clone)]
pub struct ComparisonTarget {
    pub run: ToolchainRun,
    pub policy: ComparisonPolicy,
    /// Classes this toolchain can be compared on at all (its support
    /// matrix); classes outside the set are never recorded for it.
    pub supports: BTreeSet<InconsistencyClass>,
}

/// Runs the full comparison for one program: baseline against every
/// target, compile stage then execution stage, FP filtering, dedup within
/// the result, and a deterministic (toolchain name, class) ordering.
pub fn detect_all(
    program: &SeedProgram,
    baseline: &ToolchainRun,
    targets: &[ComparisonTarget],
    patterns: &FpMatcher,
) -> Vec<InconsistencyRecord> {
    let mut records = Vec::new();
    for target in targets {
        if let Err(err) = target.policy.validate() {
            warn!("skipping target with invalid policy: {err}");
            continue;
        }
        if let Some(rec) =
            compare_compilation(&baseline.compile, &target.run.compile, &target.policy, program)
        {
            if target.supports.contains(&rec.class) {
                records.push(rec);
            }
        }
        let exec_supported = target.supports.contains(&InconsistencyClass::Esi)
            || target.supports.contains(&InconsistencyClass::Eoi);
        if baseline.compile.is_success() && target.run.compile.is_success() && exec_supported {
            if let (Some(base_exec), Some(other_exec)) = (&baseline.exec, &target.run.exec) {
                if let Some(rec) =
                    compare_execution(base_exec, other_exec, &target.policy, program)
                {
                    if target.supports.contains(&rec.class) {
                        records.push(rec);
                    }
                }
            }
        }
    }

    let mut seen = BTreeSet::new();
    let mut records: Vec<InconsistencyRecord> = records
        .into_iter()
        .map(|rec| filter_false_positive(rec, patterns))
        .filter(|rec| seen.insert(rec.dedup_key.clone()))
        .collect();
    records.sort_by(|a, b| a.other.name.cmp(&b.other.name).then(a.class.cmp(&b.class)));
    records
}
