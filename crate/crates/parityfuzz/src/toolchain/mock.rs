//! Scripted in-process toolchains for deterministic testing. A behavior
//! script maps source-text predicates to canned compile/execute outcomes;
//! the first matching rule wins, with per-phase fallback defaults.

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{CompileArtifacts, HarnessError, Toolchain, ToolchainSpec};
use crate::types::{
    short_hash, CompileOutcome, CompileStatus, ExecOutcome, ExecStatus, SeedProgram,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMatcher {
    Substring(String),
    Regex(String),
}

impl SourceMatcher {
    fn matches(&self, source: &str, compiled: &[Option<Regex>], index: usize) -> bool {
        match self {
            SourceMatcher::Substring(s) => source.contains(s),
            SourceMatcher::Regex(_) => {
                compiled[index].as_ref().is_some_and(|re| re.is_match(source))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompileTemplate {
    pub status: CompileStatus,
    #[serde(default)]
    pub stderr: String,
    /// Hex bytecode for successful compiles; derived from the source hash
    /// when omitted so distinct programs get distinct bytecode.
    #[serde(default)]
    pub bytecode_hex: Option<String>,
    /// Optional ABI artifact the mock "emits" alongside the bytecode.
    #[serde(default)]
    pub abi: Option<serde_json::Value>,
    /// Simulates an infrastructure failure instead of a compile outcome.
    #[serde(default)]
    pub harness_error: Option<String>,
}

impl Default for CompileTemplate {
    fn default() -> Self {
        Self {
            status: CompileStatus::Success,
            stderr: String::new(),
            bytecode_hex: None,
            abi: None,
            harness_error: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecTemplate {
    pub status: ExecStatus,
    /// Hex-encoded raw return payload for successful executions.
    #[serde(default)]
    pub stdout_hex: Option<String>,
    #[serde(default)]
    pub stderr: String,
    #[serde(default)]
    pub harness_error: Option<String>,
}

impl Default for ExecTemplate {
    fn default() -> Self {
        Self {
            status: ExecStatus::Success,
            stdout_hex: None,
            stderr: String::new(),
            harness_error: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BehaviorRule {
    #[serde(rename = "match")]
    pub matcher: SourceMatcher,
    #[serde(default)]
    pub compile: Option<CompileTemplate>,
    #[serde(default)]
    pub exec: Option<ExecTemplate>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BehaviorScript {
    #[serde(default)]
    pub default_compile: CompileTemplate,
    #[serde(default)]
    pub default_exec: ExecTemplate,
    #[serde(default)]
    pub rules: Vec<BehaviorRule>,
}

pub struct MockToolchain {
    spec: ToolchainSpec,
    script: BehaviorScript,
    compiled_regexes: Vec<Option<Regex>>,
}

impl MockToolchain {
    pub fn new(spec: ToolchainSpec, script: BehaviorScript) -> Result<Self, HarnessError> {
        let compiled_regexes = script
            .rules
            .iter()
            .map(|rule| match &rule.matcher {
                SourceMatcher::Regex(pattern) => Regex::new(pattern)
                    .map(Some)
                    .map_err(|e| HarnessError::Script(format!("bad regex `{pattern}`: {e}"))),
                SourceMatcher::Substring(_) => Ok(None),
            })
            .collect::<Result<Vec<_>, _>>()?;
        for template in script.rules.iter().filter_map(|r| r.compile.as_ref()) {
            if let Some(hex_str) = &template.bytecode_hex {
                hex::decode(hex_str)
                    .map_err(|e| HarnessError::Script(format!("bad bytecode hex: {e}")))?;
            }
        }
        Ok(Self { spec, script, compiled_regexes })
    }

    fn compile_template(&self, source: &str) -> &CompileTemplate {
        self.script
            .rules
            .iter()
            .enumerate()
            .find(|(i, rule)| {
                rule.compile.is_some() && rule.matcher.matches(source, &self.compiled_regexes, *i)
            })
            .and_then(|(_, rule)| rule.compile.as_ref())
            .unwrap_or(&self.script.default_compile)
    }

    fn exec_template(&self, source: &str) -> &ExecTemplate {
        self.script
            .rules
            .iter()
            .enumerate()
            .find(|(i, rule)| {
                rule.exec.is_some() && rule.matcher.matches(source, &self.compiled_regexes, *i)
            })
            .and_then(|(_, rule)| rule.exec.as_ref())
            .unwrap_or(&self.script.default_exec)
    }
}

impl Toolchain for MockToolchain {
    fn spec(&self) -> &ToolchainSpec {
        &self.spec
    }

    fn compile(&self, program: &SeedProgram) -> Result<CompileArtifacts, HarnessError> {
        let template = self.compile_template(&program.source);
        if let Some(msg) = &template.harness_error {
            return Err(HarnessError::Mock(msg.clone()));
        }
        let outcome = match template.status {
            CompileStatus::Success => {
                let bytecode = match &template.bytecode_hex {
                    Some(h) => hex::decode(h).expect("validated at construction"),
                    None => hex::decode(short_hash(&[program.source.as_bytes()]))
                        .expect("hash is hex"),
                };
                CompileOutcome::success(self.spec.id.clone(), bytecode, template.stderr.clone(), 0)
            }
            status => {
                CompileOutcome::failed(self.spec.id.clone(), status, template.stderr.clone(), 0)
            }
        };
        Ok(CompileArtifacts { outcome, abi: template.abi.clone() })
    }

    fn execute(
        &self,
        program: &SeedProgram,
        _artifacts: &CompileArtifacts,
    ) -> Result<ExecOutcome, HarnessError> {
        let template = self.exec_template(&program.source);
        if let Some(msg) = &template.harness_error {
            return Err(HarnessError::Mock(msg.clone()));
        }
        let outcome = match template.status {
            ExecStatus::Success => {
                let raw = match &template.stdout_hex {
                    Some(h) => hex::decode(h)
                        .map_err(|e| HarnessError::Script(format!("bad stdout hex: {e}")))?,
                    None => Vec::new(),
                };
                ExecOutcome::success(self.spec.id.clone(), raw, template.stderr.clone(), 0)
            }
            status => {
                ExecOutcome::failed(self.spec.id.clone(), status, template.stderr.clone(), 0)
            }
        };
        Ok(outcome)
    }
}
