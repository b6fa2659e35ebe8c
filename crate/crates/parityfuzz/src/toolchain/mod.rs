//! Toolchain abstraction: a uniform compile/execute interface over real
//! compiler binaries and scripted mock toolchains, plus the registry that
//! wires a baseline and comparison set together from JSON.

pub mod mock;
pub mod subprocess;

use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{CompileOutcome, ExecOutcome, SeedProgram, ToolchainId};

pub use mock::{BehaviorRule, BehaviorScript, CompileTemplate, ExecTemplate, MockToolchain, SourceMatcher};
pub use subprocess::SubprocessToolchain;

/// Infrastructure failure while driving a toolchain. Distinct from a
/// program-level compile/execute failure: a harness error aborts the
/// iteration instead of being classified as an inconsistency.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("failed to spawn `{cmd}`: {source}")]
    Spawn { cmd: String, source: std::io::Error },
    #[error("i/o failure during toolchain run: {0}")]
    Io(#[from] std::io::Error),
    #[error("scripted harness failure: {0}")]
    Mock(String),
    #[error("invalid behavior script: {0}")]
    Script(String),
    #[error("invalid toolchain registry: {0}")]
    Registry(String),
}

/// Which wire format a toolchain's executor emits for return values.
/// `None` marks toolchains without an execution harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputCodec {
    Abi,
    Borsh,
    None,
}

/// How far a toolchain's language support overlaps the baseline, which in
/// turn decides how aggressively outcomes may be compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompatLevel {
    High,
    Limited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolchainKind {
    Subprocess,
    Mock,
}

/// Static description of one toolchain, as loaded from the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolchainSpec {
    pub id: ToolchainId,
    pub kind: ToolchainKind,
    pub output_encoding: OutputCodec,
    pub compat: CompatLevel,
    /// Which inconsistency classes this toolchain can participate in.
    /// Toolchains without an execution harness are capped at {EMI, CSI}.
    pub supports: std::collections::BTreeSet<crate::types::InconsistencyClass>,
    #[serde(default)]
    pub timeout_ms: u64,
}

impl ToolchainSpec {
    /// A fully capable mock spec: ABI-encoded output, high compat, all
    /// four classes supported.
    pub fn mock(id: ToolchainId) -> Self {
        Self {
            id,
            kind: ToolchainKind::Mock,
            output_encoding: OutputCodec::Abi,
            compat: CompatLevel::High,
            supports: crate::types::InconsistencyClass::ALL.into_iter().collect(),
            timeout_ms: 2_000,
        }
    }
}

/// Compile result plus any artifacts needed downstream (ABI JSON when the
/// compiler emits one; used for output-type inference).
#[derive(Debug, Clone)]
pub struct CompileArtifacts {
    pub outcome: CompileOutcome,
    pub abi: Option<serde_json::Value>,
}

pub trait Toolchain: Send + Sync {
    fn spec(&self) -> &ToolchainSpec;

    fn compile(&self, program: &SeedProgram) -> Result<CompileArtifacts, HarnessError>;

    /// Runs the program's entry function against previously compiled
    /// artifacts. Callers only invoke this after a successful compile.
    fn execute(
        &self,
        program: &SeedProgram,
        artifacts: &CompileArtifacts,
    ) -> Result<ExecOutcome, HarnessError>;
}

impl fmt::Debug for dyn Toolchain + '_ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Toolchain({})", self.spec().id)
    }
}

/// Decides whether a compile failure comes with an actionable diagnostic:
/// there must be an error-marker line (`error:`, `Error:`, `TypeError:`,
/// `error[E123]:`, ...) and a source location anywhere in the output
/// (`file.sol:3`, `--> file.sol:3:5`, `line 7`, or a `:line:col` pair).
/// A bare crash backtrace satisfies neither requirement.
pub fn classify_error_clarity(stderr: &str) -> bool {
    static ERROR_LINE: OnceLock<Regex> = OnceLock::new();
    static LOCATION: OnceLock<Regex> = OnceLock::new();
    let error_re = ERROR_LINE
        .get_or_init(|| Regex::new(r"(?i)^\s*(?:\S+:\s*)*\w*error(?:\[[^\]]+\])?\s*:").unwrap());
    let location_re = LOCATION.get_or_init(|| {
        Regex::new(r"(?i)\S+\.sol[:(]\d+|-->\s*\S+:\d+|\bline\s+\d+|:\d+:\d+").unwrap()
    });
    let has_error_line = stderr.lines().any(|l| error_re.is_match(l));
    has_error_line && location_re.is_match(stderr)
}

/// Registry file: the baseline toolchain plus the comparison set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryFile {
    pub baseline: String,
    pub toolchains: Vec<ToolchainEntry>,
}

fn default_timeout_ms() -> u64 {
    2000
}

fn default_supports() -> std::collections::BTreeSet<crate::types::InconsistencyClass> {
    crate::types::InconsistencyClass::ALL.into_iter().collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolchainEntry {
    pub name: String,
    pub version: String,
    pub kind: ToolchainKind,
    pub output_encoding: OutputCodec,
    pub compat: CompatLevel,
    /// Compile command template, placeholders `{input}` and `{outdir}`.
    #[serde(default)]
    pub compile: Vec<String>,
    /// Execute command template, placeholders `{bytecode_or_source}`,
    /// `{contract}` and `{function}`.
    #[serde(default)]
    pub execute: Vec<String>,
    #[serde(default = "default_supports")]
    pub supports: std::collections::BTreeSet<crate::types::InconsistencyClass>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub script: Option<BehaviorScript>,
}

/// A validated, instantiated toolchain set.
#[derive(Debug)]
pub struct Registry {
    pub baseline: Box<dyn Toolchain>,
    pub others: Vec<Box<dyn Toolchain>>,
}

impl Registry {
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Registry(format!("cannot read {}: {e}", path.display()))
        })?;
        let file: RegistryFile = serde_json::from_str(&raw)
            .map_err(|e| HarnessError::Registry(format!("{}: {e}", path.display())))?;
        Self::from_spec(file)
    }

    pub fn from_spec(file: RegistryFile) -> Result<Self, HarnessError> {
        if file.toolchains.is_empty() {
            return Err(HarnessError::Registry("no toolchains declared".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut baseline = None;
        let mut others = Vec::new();
        for entry in file.toolchains {
            if !ToolchainId::is_known_name(&entry.name) {
                return Err(HarnessError::Registry(format!("unknown toolchain `{}`", entry.name)));
            }
            if !seen.insert(entry.name.clone()) {
                return Err(HarnessError::Registry(format!("duplicate toolchain `{}`", entry.name)));
            }
            let is_baseline = entry.name == file.baseline;
            let built = build_toolchain(entry)?;
            if is_baseline {
                baseline = Some(built);
            } else {
                others.push(built);
            }
        }
        let baseline = baseline.ok_or_else(|| {
            HarnessError::Registry(format!("baseline `{}` not in toolchain list", file.baseline))
        })?;
        if others.is_empty() {
            return Err(HarnessError::Registry("need at least one non-baseline toolchain".into()));
        }
        Ok(Registry { baseline, others })
    }
}

fn build_toolchain(entry: ToolchainEntry) -> Result<Box<dyn Toolchain>, HarnessError> {
    use crate::types::InconsistencyClass::{Eoi, Esi};
    let has_exec = match entry.kind {
        ToolchainKind::Subprocess => !entry.execute.is_empty(),
        ToolchainKind::Mock => true,
    };
    if !has_exec && (entry.supports.contains(&Esi) || entry.supports.contains(&Eoi)) {
        return Err(HarnessError::Registry(format!(
            "toolchain `{}` has no execute command but claims ESI/EOI support",
            entry.name
        )));
    }
    if entry.output_encoding == OutputCodec::None
        && (entry.supports.contains(&Esi) || entry.supports.contains(&Eoi))
        && entry.kind == ToolchainKind::Subprocess
    {
        return Err(HarnessError::Registry(format!(
            "toolchain `{}` needs an output encoding for ESI/EOI support",
            entry.name
        )));
    }
    let spec = ToolchainSpec {
        id: ToolchainId::new(entry.name.clone(), entry.version.clone()),
        kind: entry.kind,
        output_encoding: entry.output_encoding,
        compat: entry.compat,
        supports: entry.supports,
        timeout_ms: entry.timeout_ms,
    };
    match entry.kind {
        ToolchainKind::Mock => {
            let script = entry.script.ok_or_else(|| {
                HarnessError::Script(format!("mock toolchain `{}` has no script", entry.name))
            })?;
            Ok(Box::new(MockToolchain::new(spec, script)?))
        }
        ToolchainKind::Subprocess => {
            if entry.compile.is_empty() {
                return Err(HarnessError::Registry(format!(
                    "subprocess toolchain `{}` has no compile command",
                    entry.name
                )));
            }
            Ok(Box::new(SubprocessToolchain::new(spec, entry.compile, entry.execute)))
        }
    }
}
