//! Shared domain types: seed programs, mutation rules, toolchain outcomes,
//! and classified inconsistency records.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::value::CanonicalValue;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("program source is empty")]
    EmptySource,
    #[error("invalid outcome: {0}")]
    InvalidOutcome(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid coverage counts: covered={covered} total={total}")]
    InvalidCoverage { covered: u64, total: u64 },
    #[error("invalid feature name `{0}`")]
    InvalidFeature(String),
    #[error("unknown rule action `{0}`")]
    UnknownAction(String),
    #[error("invalid boundary condition: {0}")]
    InvalidCondition(String),
    #[error("invalid comparison policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid rule catalog: {0}")]
    InvalidCatalog(String),
}

/// Hex digest over the concatenation of `parts`, truncated to 16 chars.
pub(crate) fn short_hash(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    hex::encode(&digest[..8])
}

/// Identifies one compiler/executor pairing.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ToolchainId {
    pub name: String,
    pub version: String,
}

impl ToolchainId {
    pub const KNOWN_NAMES: [&'static str; 6] =
        ["solc", "revive", "zksolc", "solang", "sold", "solar"];

    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Self {
        Self { name: name.into(), version: version.into() }
    }

    /// Known compiler names plus the `mock:<label>` namespace.
    pub fn is_known_name(name: &str) -> bool {
        Self::KNOWN_NAMES.contains(&name) || name.strip_prefix("mock:").is_some_and(|l| !l.is_empty())
    }
}

impl fmt::Display for ToolchainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.name, self.version)
    }
}

/// A language-feature label, lowercase, e.g. `struct` or `fixed-size array`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureTag(String);

impl FeatureTag {
    pub fn new(name: &str) -> Result<Self, DomainError> {
        let normalized = Self::normalize(name);
        if normalized.is_empty() {
            return Err(DomainError::InvalidFeature(name.to_string()));
        }
        Ok(FeatureTag(normalized))
    }

    /// Lowercases and collapses internal whitespace.
    pub fn normalize(name: &str) -> String {
        name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FeatureTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Contract/function pair a program is executed through.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryPoint {
    pub contract: String,
    pub function: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSnapshot {
    pub covered: u64,
    pub total: u64,
    pub ratio: f64,
}

impl CoverageSnapshot {
    pub fn new(covered: u64, total: u64) -> Result<Self, DomainError> {
        if covered > total || total == 0 {
            return Err(DomainError::InvalidCoverage { covered, total });
        }
        Ok(Self { covered, total, ratio: covered as f64 / total as f64 })
    }
}

/// A Solidity source unit plus fuzzing metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedProgram {
    pub id: String,
    pub source: String,
    pub parent_id: Option<String>,
    pub features: BTreeSet<FeatureTag>,
    pub coverage: Option<CoverageSnapshot>,
    pub entry: Option<EntryPoint>,
}

impl SeedProgram {
    /// Builds a root seed; the id is derived from the source content.
    pub fn new(source: impl Into<String>) -> Result<Self, DomainError> {
        let source = source.into();
        if source.is_empty() {
            return Err(DomainError::EmptySource);
        }
        let id = format!("p-{}", short_hash(&[source.as_bytes()]));
        Ok(Self { id, source, parent_id: None, features: BTreeSet::new(), coverage: None, entry: None })
    }

    /// Builds a mutation of `parent` with lineage recorded.
    pub fn variant_of(parent: &SeedProgram, source: impl Into<String>) -> Result<Self, DomainError> {
        let mut program = Self::new(source)?;
        program.parent_id = Some(parent.id.clone());
        program.features = parent.features.clone();
        program.entry = parent.entry.clone();
        Ok(program)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    SyntaxOriented,
    BoundaryOriented,
}

/// The closed five-action mutation vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    Insert,
    Increase,
    Replace,
    Modify,
    Clear,
}

impl RuleAction {
    pub fn parse(s: &str) -> Result<Self, DomainError> {
        match s.trim().to_lowercase().as_str() {
            "insert" => Ok(RuleAction::Insert),
            "increase" => Ok(RuleAction::Increase),
            "replace" => Ok(RuleAction::Replace),
            "modify" => Ok(RuleAction::Modify),
            "clear" => Ok(RuleAction::Clear),
            other => Err(DomainError::UnknownAction(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RuleAction::Insert => "insert",
            RuleAction::Increase => "increase",
            RuleAction::Replace => "replace",
            RuleAction::Modify => "modify",
            RuleAction::Clear => "clear",
        }
    }
}

/// A categorized mutation rule carrying exactly one feature label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationRule {
    pub id: String,
    pub kind: RuleKind,
    pub feature: FeatureTag,
    pub action: RuleAction,
    pub description: String,
    pub origin: String,
}

impl MutationRule {
    pub fn new(
        kind: RuleKind,
        feature: FeatureTag,
        action: RuleAction,
        description: impl Into<String>,
        origin: impl Into<String>,
    ) -> Self {
        let description = description.into();
        let origin = origin.into();
        let prefix = match kind {
            RuleKind::SyntaxOriented => "so",
            RuleKind::BoundaryOriented => "bo",
        };
        let id = format!(
            "{prefix}-{}",
            short_hash(&[
                feature.as_str().as_bytes(),
                action.as_str().as_bytes(),
                normalize_ws(&description).as_bytes(),
                origin.as_bytes(),
            ])
        );
        Self { id, kind, feature, action, description, origin }
    }
}

pub(crate) fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    ErrorHandling,
    Unimplemented,
    ValidityCheck,
    Assertion,
    Implicit,
}

/// A code block in a compiler/executor source tree that signals exceptional
/// or unsupported handling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub id: String,
    pub source_path: String,
    pub snippet: String,
    pub trigger_kind: TriggerKind,
    pub identifiers_hit: Vec<String>,
}

impl BoundaryCondition {
    pub fn new(
        source_path: impl Into<String>,
        snippet: impl Into<String>,
        trigger_kind: TriggerKind,
        identifiers_hit: Vec<String>,
    ) -> Result<Self, DomainError> {
        let source_path = source_path.into();
        let snippet = snippet.into();
        if snippet.is_empty() {
            return Err(DomainError::InvalidCondition("snippet is empty".into()));
        }
        let implicit = trigger_kind == TriggerKind::Implicit;
        if implicit != identifiers_hit.is_empty() {
            return Err(DomainError::InvalidCondition(
                "trigger_kind=implicit iff identifiers_hit is empty".into(),
            ));
        }
        let id = format!(
            "bc-{}",
            short_hash(&[source_path.as_bytes(), snippet.as_bytes()])
        );
        Ok(Self { id, source_path, snippet, trigger_kind, identifiers_hit })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompileStatus {
    Success,
    Failure,
    Timeout,
    Crash,
}

/// The raw result of one toolchain's compile step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileOutcome {
    pub toolchain: ToolchainId,
    pub status: CompileStatus,
    #[serde(with = "opt_hex_bytes")]
    pub bytecode: Option<Vec<u8>>,
    pub stderr: String,
    pub clear_error: bool,
    pub duration_ms: u64,
}

impl CompileOutcome {
    pub fn success(toolchain: ToolchainId, bytecode: Vec<u8>, stderr: String, duration_ms: u64) -> Self {
        debug_assert!(!bytecode.is_empty(), "success requires non-empty bytecode");
        let clear_error = crate::toolchain::classify_error_clarity(&stderr);
        Self { toolchain, status: CompileStatus::Success, bytecode: Some(bytecode), stderr, clear_error, duration_ms }
    }

    pub fn failed(toolchain: ToolchainId, status: CompileStatus, stderr: String, duration_ms: u64) -> Self {
        debug_assert!(status != CompileStatus::Success);
        // A crash is never considered a clear diagnostic.
        let clear_error = status != CompileStatus::Crash
            && crate::toolchain::classify_error_clarity(&stderr);
        Self { toolchain, status, bytecode: None, stderr, clear_error, duration_ms }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        match (self.status, &self.bytecode) {
            (CompileStatus::Success, Some(b)) if !b.is_empty() => Ok(()),
            (CompileStatus::Success, _) => Err(DomainError::InvalidOutcome(
                "success requires non-empty bytecode".into(),
            )),
            (_, None) => Ok(()),
            (_, Some(_)) => Err(DomainError::InvalidOutcome(
                "non-success outcome must not carry bytecode".into(),
            )),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == CompileStatus::Success
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecStatus {
    Success,
    Revert,
    Failure,
    Timeout,
}

/// The raw result of one toolchain's execute step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub toolchain: ToolchainId,
    pub status: ExecStatus,
    #[serde(with = "opt_hex_bytes")]
    pub raw_output: Option<Vec<u8>>,
    pub decoded: Option<CanonicalValue>,
    pub stderr: String,
    pub duration_ms: u64,
}

impl ExecOutcome {
    pub fn success(toolchain: ToolchainId, raw_output: Vec<u8>, stderr: String, duration_ms: u64) -> Self {
        Self { toolchain, status: ExecStatus::Success, raw_output: Some(raw_output), decoded: None, stderr, duration_ms }
    }

    pub fn failed(toolchain: ToolchainId, status: ExecStatus, stderr: String, duration_ms: u64) -> Self {
        debug_assert!(status != ExecStatus::Success);
        Self { toolchain, status, raw_output: None, decoded: None, stderr, duration_ms }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.status == ExecStatus::Success && self.raw_output.is_none() {
            return Err(DomainError::InvalidOutcome("success requires raw_output".into()));
        }
        Ok(())
    }

    pub fn is_success(&self) -> bool {
        self.status == ExecStatus::Success
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InconsistencyClass {
    #[serde(rename = "EMI")]
    Emi,
    #[serde(rename = "CSI")]
    Csi,
    #[serde(rename = "ESI")]
    Esi,
    #[serde(rename = "EOI")]
    Eoi,
}

impl InconsistencyClass {
    pub const ALL: [InconsistencyClass; 4] = [
        InconsistencyClass::Emi,
        InconsistencyClass::Csi,
        InconsistencyClass::Esi,
        InconsistencyClass::Eoi,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            InconsistencyClass::Emi => "EMI",
            InconsistencyClass::Csi => "CSI",
            InconsistencyClass::Esi => "ESI",
            InconsistencyClass::Eoi => "EOI",
        }
    }
}

impl fmt::Display for InconsistencyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One side of a classified finding: the phase outcome it was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeSnapshot {
    Compile(CompileOutcome),
    Exec(ExecOutcome),
}

impl OutcomeSnapshot {
    fn toolchain(&self) -> &ToolchainId {
        match self {
            OutcomeSnapshot::Compile(o) => &o.toolchain,
            OutcomeSnapshot::Exec(o) => &o.toolchain,
        }
    }
}

/// A classified, dedup-keyed finding with its reproduction payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyRecord {
    pub id: String,
    pub class: InconsistencyClass,
    pub baseline: ToolchainId,
    pub other: ToolchainId,
    pub program: SeedProgram,
    pub baseline_outcome: OutcomeSnapshot,
    pub other_outcome: OutcomeSnapshot,
    pub fp_filtered: bool,
    pub dedup_key: String,
}

impl InconsistencyRecord {
    /// Validates the class invariants and derives the id and dedup key.
    pub fn new(
        class: InconsistencyClass,
        program: SeedProgram,
        baseline_outcome: OutcomeSnapshot,
        other_outcome: OutcomeSnapshot,
    ) -> Result<Self, DomainError> {
        check_class_invariants(class, &baseline_outcome, &other_outcome)?;
        let baseline = baseline_outcome.toolchain().clone();
        let other = other_outcome.toolchain().clone();
        let mut record = Self {
            id: String::new(),
            class,
            baseline,
            other,
            program,
            baseline_outcome,
            other_outcome,
            fp_filtered: false,
            dedup_key: String::new(),
        };
        record.dedup_key = dedup_key(&record);
        record.id = format!(
            "f-{}",
            short_hash(&[
                record.class.as_str().as_bytes(),
                record.baseline.name.as_bytes(),
                record.other.name.as_bytes(),
                record.program.source.as_bytes(),
            ])
        );
        Ok(record)
    }
}

fn check_class_invariants(
    class: InconsistencyClass,
    baseline: &OutcomeSnapshot,
    other: &OutcomeSnapshot,
) -> Result<(), DomainError> {
    use OutcomeSnapshot::{Compile, Exec};
    let fail = |msg: &str| Err(DomainError::InvalidRecord(format!("{class}: {msg}")));
    match (class, baseline, other) {
        (InconsistencyClass::Emi, Compile(b), Compile(o)) => {
            if b.is_success() || o.is_success() {
                return fail("both outcomes must be compile failures");
            }
            if b.clear_error == o.clear_error {
                return fail("clear_error flags must differ");
            }
            Ok(())
        }
        (InconsistencyClass::Csi, Compile(b), Compile(o)) => {
            if b.is_success() == o.is_success() {
                return fail("exactly one compile outcome must succeed");
            }
            Ok(())
        }
        (InconsistencyClass::Esi, Exec(b), Exec(o)) => {
            if b.is_success() == o.is_success() {
                return fail("exactly one execution must succeed");
            }
            Ok(())
        }
        (InconsistencyClass::Eoi, Exec(b), Exec(o)) => {
            if !b.is_success() || !o.is_success() {
                return fail("both executions must succeed");
            }
            match (&b.decoded, &o.decoded) {
                (Some(vb), Some(vo)) => {
                    if crate::value::canonical_equal(vb, vo) {
                        fail("decoded values must be structurally unequal")
                    } else {
                        Ok(())
                    }
                }
                _ => fail("both decoded values must be present"),
            }
        }
        (InconsistencyClass::Emi | InconsistencyClass::Csi, _, _) => {
            fail("requires a pair of compile outcomes")
        }
        (InconsistencyClass::Esi | InconsistencyClass::Eoi, _, _) => {
            fail("requires a pair of execution outcomes")
        }
    }
}

/// Stable key grouping repeated manifestations of one underlying finding.
///
/// Key = class, baseline name, other name, and a per-class discriminator:
/// the failing side's first stderr line (EMI/CSI, with paths, locations and
/// hex blobs rewritten), the failing status plus that line (ESI), or the
/// decoded type-shape pair (EOI).
pub fn dedup_key(rec: &InconsistencyRecord) -> String {
    let discriminator = match (rec.class, &rec.baseline_outcome, &rec.other_outcome) {
        (InconsistencyClass::Emi, OutcomeSnapshot::Compile(b), OutcomeSnapshot::Compile(o)) => {
            // The unclear side carries the message that makes this an EMI.
            let unclear = if b.clear_error { o } else { b };
            strip_discriminator(first_line(&unclear.stderr))
        }
        (InconsistencyClass::Csi, OutcomeSnapshot::Compile(b), OutcomeSnapshot::Compile(o)) => {
            let failing = if b.is_success() { o } else { b };
            strip_discriminator(first_line(&failing.stderr))
        }
        (InconsistencyClass::Esi, OutcomeSnapshot::Exec(b), OutcomeSnapshot::Exec(o)) => {
            let failing = if b.is_success() { o } else { b };
            let status = serde_json::to_string(&failing.status).expect("status to json");
            format!("{}|{}", status.trim_matches('"'), strip_discriminator(first_line(&failing.stderr)))
        }
        (InconsistencyClass::Eoi, OutcomeSnapshot::Exec(b), OutcomeSnapshot::Exec(o)) => {
            let bs = b.decoded.as_ref().map(|v| v.shape()).unwrap_or_default();
            let os = o.decoded.as_ref().map(|v| v.shape()).unwrap_or_default();
            format!("{bs}|{os}")
        }
        // A record constructed through `new` cannot reach these arms.
        _ => String::from("invalid"),
    };
    format!(
        "{}|{}|{}|{}",
        rec.class.as_str(),
        rec.baseline.name,
        rec.other.name,
        discriminator
    )
}

fn first_line(s: &str) -> &str {
    s.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("")
}

/// Rewrites volatile fragments (hex blobs, paths, line/column numbers) so
/// that repeated triggers of one failure collapse to one key.
pub fn strip_discriminator(line: &str) -> String {
    static HEX: OnceLock<Regex> = OnceLock::new();
    static PATH: OnceLock<Regex> = OnceLock::new();
    static COLON_LOC: OnceLock<Regex> = OnceLock::new();
    static PAREN_LOC: OnceLock<Regex> = OnceLock::new();
    static WORD_LOC: OnceLock<Regex> = OnceLock::new();

    let hex_re = HEX.get_or_init(|| Regex::new(r"0x[0-9a-fA-F]+").unwrap());
    let path_re = PATH.get_or_init(|| Regex::new(r"/[\w.+\-]+(?:/[\w.+\-]+)*").unwrap());
    let colon_re = COLON_LOC.get_or_init(|| Regex::new(r"(?::\d+)+").unwrap());
    let paren_re = PAREN_LOC.get_or_init(|| Regex::new(r"\(\d+(?:,\d+)?\)").unwrap());
    let word_re = WORD_LOC.get_or_init(|| Regex::new(r"(?i)\b(line|column)\s+\d+").unwrap());

    let s = hex_re.replace_all(line, "<hex>");
    let s = path_re.replace_all(&s, "<path>");
    let s = colon_re.replace_all(&s, "");
    let s = paren_re.replace_all(&s, "(<loc>)");
    let s = word_re.replace_all(&s, "$1 <n>");
    normalize_ws(&s)
}

mod opt_hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(bytes) => s.serialize_some(&format!("0x{}", hex::encode(bytes))),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let raw: Option<String> = Option::deserialize(d)?;
        match raw {
            None => Ok(None),
            Some(s) => {
                let s = s.strip_prefix("0x").unwrap_or(&s);
                hex::decode(s).map(Some).map_err(serde::de::Error::custom)
            }
        }
    }
}
