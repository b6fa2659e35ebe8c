//! Campaign orchestration: corpus ingestion, the fuzzing loop
//! (seed → feature → rule → mutate → repair → detect → reward), durable
//! state under a campaign directory, and finding replay.
//!
//! Determinism contract: with the same config, corpus, catalog, fixtures
//! and toolchain scripts, two runs produce byte-identical event logs. All
//! randomness flows from one seeded generator, collections iterate in
//! sorted or insertion order, and each iteration consumes a fixed number
//! of draws from the root generator.

pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, BorshType};
use crate::llm::http::HttpAdapter;
use crate::llm::mock::MockAdapter;
use crate::llm::{LlmError, LlmRole, RoleSet, TemplateId};
use crate::mutator::{self, MutatorError};
use crate::oracle::{detect_all, ComparisonPolicy, ComparisonTarget, FpMatcher, ToolchainRun};
use crate::policy::{
    reward, BanditPolicy, BanditStrategy, CoverageProvider, ExternalCoverageProvider,
    LlmSelectStrategy, NullCoverageProvider, PolicyError, RewardInput, SelectionStrategy,
    TokenCoverageProvider,
};
use crate::rulegen::{RuleCatalog, RulegenError};
use crate::solsrc;
use crate::toolchain::{
    CompileArtifacts, HarnessError, OutputCodec, Registry, Toolchain,
};
use crate::types::{
    CompileStatus, DomainError, ExecStatus, InconsistencyClass, InconsistencyRecord, SeedProgram,
    ToolchainId,
};

pub const ENV_TOOLCHAINS: &str = "PARITYFUZZ_TOOLCHAINS";
pub const ENV_FIXTURES: &str = "PARITYFUZZ_FIXTURES";

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("config error: {0}")]
    Config(String),
    #[error("corpus directory `{0}` has no usable .sol seeds")]
    EmptyCorpus(String),
    #[error("no stored artifact for finding `{0}`")]
    MissingArtifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Rulegen(#[from] RulegenError),
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdapterConfig {
    /// Fixture-backed adapter; every request must have a committed fixture.
    Mock { fixtures_dir: PathBuf },
    /// Live OpenAI-style chat endpoint. The API key is read from the
    /// environment variable named by `api_key_env`, never from the config.
    Http {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
    },
}

fn default_max_retries() -> u32 {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleConfig {
    pub adapter: AdapterConfig,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Model roles: one default plus optional per-template overrides, so e.g.
/// `mutate` can run hotter than `feature_select`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    pub default: RoleConfig,
    #[serde(default)]
    pub overrides: BTreeMap<TemplateId, RoleConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SelectionConfig {
    Bandit {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_eta")]
        eta: f64,
        #[serde(default = "default_min_weight")]
        min_weight: f64,
    },
    Llm,
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_eta() -> f64 {
    0.3
}

fn default_min_weight() -> f64 {
    1e-3
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig::Bandit {
            epsilon: default_epsilon(),
            eta: default_eta(),
            min_weight: default_min_weight(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoverageConfig {
    #[default]
    TokenProxy,
    Null,
    External {
        command: Vec<String>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub corpus_dir: PathBuf,
    pub catalog_path: PathBuf,
    pub toolchains_path: PathBuf,
    #[serde(default)]
    pub fp_patterns_path: Option<PathBuf>,
    pub state_dir: PathBuf,
    pub max_iterations: u64,
    /// Optional wall-clock budget; iterations stop early once exceeded.
    /// Leave unset for reproducible event logs.
    #[serde(default)]
    pub max_duration_ms: Option<u64>,
    pub rng_seed: u64,
    #[serde(default = "default_repair_rounds")]
    pub max_repair_rounds: u32,
    #[serde(default)]
    pub coverage: CoverageConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    pub llm: LlmConfig,
    /// Upper bound on concurrently benched comparison toolchains.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_repair_rounds() -> u32 {
    3
}

fn default_parallelism() -> usize {
    1
}

impl CampaignConfig {
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| CampaignError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: CampaignConfig = serde_json::from_str(&raw)
            .map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))?;
        // Relative paths resolve against the config file's directory, so a
        // campaign directory can be checked out and run from anywhere.
        if let Some(base) = path.parent() {
            config.resolve_relative_to(base);
        }
        config.validate()?;
        Ok(config)
    }

    fn resolve_relative_to(&mut self, base: &Path) {
        for p in [
            &mut self.corpus_dir,
            &mut self.catalog_path,
            &mut self.toolchains_path,
            &mut self.state_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        if let Some(p) = self.fp_patterns_path.as_mut() {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        self.llm.resolve_relative_to(base);
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.max_iterations == 0 {
            return Err(CampaignError::Config("max_iterations must be positive".into()));
        }
        if self.parallelism == 0 {
            return Err(CampaignError::Config("parallelism must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies `PARITYFUZZ_TOOLCHAINS` (registry path) and
    /// `PARITYFUZZ_FIXTURES` (mock fixture root) from the environment.
    pub fn apply_env(&mut self) {
        let toolchains = std::env::var(ENV_TOOLCHAINS).ok().map(PathBuf::from);
        let fixtures = std::env::var(ENV_FIXTURES).ok().map(PathBuf::from);
        self.apply_overrides(toolchains, fixtures);
    }

    pub fn apply_overrides(&mut self, toolchains: Option<PathBuf>, fixtures: Option<PathBuf>) {
        if let Some(path) = toolchains {
            self.toolchains_path = path;
        }
        if let Some(root) = fixtures {
            self.llm.override_fixture_roots(&root);
        }
    }
}

impl LlmConfig {
    fn resolve_relative_to(&mut self, base: &Path) {
        self.default.resolve_relative_to(base);
        for role in self.overrides.values_mut() {
            role.resolve_relative_to(base);
        }
    }

    fn override_fixture_roots(&mut self, root: &Path) {
        self.default.override_fixture_root(root);
        for role in self.overrides.values_mut() {
            role.override_fixture_root(root);
        }
    }
}

impl RoleConfig {
    fn resolve_relative_to(&mut self, base: &Path) {
        if let AdapterConfig::Mock { fixtures_dir } = &mut self.adapter {
            if fixtures_dir.is_relative() {
                *fixtures_dir = base.join(&fixtures_dir);
            }
        }
    }

    fn override_fixture_root(&mut self, root: &Path) {
        if let AdapterConfig::Mock { fixtures_dir } = &mut self.adapter {
            *fixtures_dir = root.to_path_buf();
        }
    }

    fn build(&self) -> Result<LlmRole, CampaignError> {
        if !(0.0..=1.0).contains(&self.temperature) || !self.temperature.is_finite() {
            return Err(CampaignError::Config(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        let adapter: std::sync::Arc<dyn crate::llm::ChatModel> = match &self.adapter {
            AdapterConfig::Mock { fixtures_dir } => {
                std::sync::Arc::new(MockAdapter::new(fixtures_dir.clone()))
            }
            AdapterConfig::Http { endpoint, model, api_key_env, max_retries } => {
                let api_key = api_key_env.as_ref().and_then(|var| std::env::var(var).ok());
                std::sync::Arc::new(HttpAdapter::new(
                    endpoint.clone(),
                    model.clone(),
                    api_key,
                    *max_retries,
                ))
            }
        };
        Ok(LlmRole::new(adapter, self.temperature, self.seed))
    }
}

pub fn build_roles(config: &LlmConfig) -> Result<RoleSet, CampaignError> {
    let mut roles = RoleSet::uniform(config.default.build()?);
    for (template, role) in &config.overrides {
        roles = roles.with_override(*template, role.build()?);
    }
    Ok(roles)
}

fn build_strategy(
    config: &SelectionConfig,
    roles: &RoleSet,
) -> Result<Box<dyn SelectionStrategy>, CampaignError> {
    match config {
        SelectionConfig::Bandit { epsilon, eta, min_weight } => {
            let policy = BanditPolicy::with_min_weight(*epsilon, *eta, *min_weight)
                .map_err(|e| CampaignError::Config(e.to_string()))?;
            Ok(Box::new(BanditStrategy::new(policy)))
        }
        SelectionConfig::Llm => {
            let role = roles.role(TemplateId::RuleSelect);
            Ok(Box::new(LlmSelectStrategy::new(role.adapter.clone(), role.temperature, role.seed)))
        }
    }
}

fn build_coverage(config: &CoverageConfig) -> Box<dyn CoverageProvider> {
    match config {
        CoverageConfig::TokenProxy => Box::new(TokenCoverageProvider),
        CoverageConfig::Null => Box::new(NullCoverageProvider),
        CoverageConfig::External { command } => {
            Box::new(ExternalCoverageProvider { command: command.clone() })
        }
    }
}

// ---------------------------------------------------------------------------
// Durable state

/// One line of `events.jsonl`. Field order is part of the determinism
/// contract — two identical runs must serialize identical bytes.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EventRecord {
    pub iteration: u64,
    pub seed: String,
    pub feature: Option<String>,
    pub rule: Option<String>,
    pub reward: Option<f64>,
    pub findings: Vec<String>,
    pub admitted: bool,
    pub variant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl EventRecord {
    fn start(iteration: u64, seed: &str) -> Self {
        Self {
            iteration,
            seed: seed.to_string(),
            feature: None,
            rule: None,
            reward: None,
            findings: Vec::new(),
            admitted: false,
            variant: None,
            note: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct CampaignStats {
    pub seeds: u64,
    pub seeds_compiling: u64,
    pub seed_findings: u64,
    pub variants_generated: u64,
    pub variants_admitted: u64,
    pub baseline_compile_success: u64,
    pub skipped_iterations: u64,
    pub genuine_findings: u64,
    pub filtered_findings: u64,
    pub per_class: BTreeMap<InconsistencyClass, u64>,
}

/// Campaign metadata persisted next to the event log; `replay` and
/// `report` recover everything they need from here plus the artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaFile {
    pub rng_seed: u64,
    pub max_iterations: u64,
    pub corpus_dir: PathBuf,
    pub catalog_path: PathBuf,
    pub toolchains_path: PathBuf,
    pub fp_patterns_path: Option<PathBuf>,
    pub baseline: ToolchainId,
    pub others: Vec<ToolchainId>,
    pub selection: String,
    pub coverage: String,
}

#[derive(Debug)]
pub struct CampaignSummary {
    pub iterations: u64,
    pub findings: Vec<InconsistencyRecord>,
    pub stats: CampaignStats,
}

impl CampaignSummary {
    /// True when at least one unfiltered finding was recorded — drives the
    /// CLI's exit code for CI gating.
    pub fn has_genuine_findings(&self) -> bool {
        self.stats.genuine_findings > 0
    }
}

struct CampaignState {
    corpus: BTreeMap<String, SeedProgram>,
    /// Insertion order; the uniform seed pick indexes into this.
    order: Vec<String>,
    seen_keys: BTreeSet<String>,
    findings: Vec<InconsistencyRecord>,
    stats: CampaignStats,
}

impl CampaignState {
    fn new() -> Self {
        Self {
            corpus: BTreeMap::new(),
            order: Vec::new(),
            seen_keys: BTreeSet::new(),
            findings: Vec::new(),
            stats: CampaignStats::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Bench helpers (shared by the run loop, ingest pre-checks, and replay)

/// Runs one toolchain end to end: compile (or reuse a precompiled result),
/// then execute + decode when the toolchain and program support it.
fn bench_toolchain(
    program: &SeedProgram,
    toolchain: &dyn Toolchain,
    precompiled: Option<CompileArtifacts>,
) -> Result<ToolchainRun, HarnessError> {
    let artifacts = match precompiled {
        Some(a) => a,
        None => toolchain.compile(program)?,
    };
    let spec = toolchain.spec();
    let wants_exec = spec.supports.contains(&InconsistencyClass::Esi)
        || spec.supports.contains(&InconsistencyClass::Eoi);
    let mut exec = None;
    if artifacts.outcome.status == CompileStatus::Success && program.entry.is_some() && wants_exec {
        match toolchain.execute(program, &artifacts) {
            Ok(mut outcome) => {
                decode_output(program, artifacts.abi.as_ref(), spec.output_encoding, &mut outcome);
                exec = Some(outcome);
            }
            Err(err) => {
                log::warn!("{}: execute harness failure on {}: {err}", spec.id, program.id);
            }
        }
    }
    Ok(ToolchainRun { compile: artifacts.outcome, exec })
}

/// Decodes a successful execution's raw output into a canonical value.
/// A single return value is unwrapped; multiple returns become a tuple.
/// Undecodable output is left as `None` — the oracle then treats the
/// execution as incomparable rather than guessing.
fn decode_output(
    program: &SeedProgram,
    abi: Option<&serde_json::Value>,
    encoding: OutputCodec,
    outcome: &mut crate::types::ExecOutcome,
) {
    if outcome.status != ExecStatus::Success || encoding == OutputCodec::None {
        return;
    }
    let Some(raw) = outcome.raw_output.clone() else {
        return;
    };
    let types = match codec::infer_output_types(&program.source, abi) {
        Ok(types) => types,
        Err(err) => {
            log::debug!("{}: no decodable signature: {err}", program.id);
            return;
        }
    };
    let decoded = match encoding {
        OutputCodec::Abi => codec::decode_abi(&raw, &types),
        OutputCodec::Borsh => {
            let borsh_types: Vec<BorshType> = types.iter().map(BorshType::from).collect();
            codec::decode_borsh(&raw, &borsh_types)
        }
        OutputCodec::None => unreachable!("filtered above"),
    };
    match decoded {
        Ok(mut values) => {
            outcome.decoded = Some(if values.len() == 1 {
                values.remove(0)
            } else {
                crate::value::CanonicalValue::Tuple(values)
            });
        }
        Err(err) => {
            log::warn!("{}: undecodable output from {}: {err}", program.id, outcome.toolchain);
        }
    }
}

/// Benches every comparison toolchain, dropping any whose harness fails.
/// Work is spread over at most `parallelism` threads; results keep the
/// registry's toolchain order regardless of scheduling.
fn bench_targets(
    program: &SeedProgram,
    others: &[Box<dyn Toolchain>],
    parallelism: usize,
) -> Vec<ComparisonTarget> {
    let runs: Vec<Option<ToolchainRun>> = if parallelism <= 1 || others.len() <= 1 {
        others.iter().map(|tc| bench_one(program, tc.as_ref())).collect()
    } else {
        let mut runs = Vec::with_capacity(others.len());
        for chunk in others.chunks(parallelism) {
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|tc| scope.spawn(|| bench_one(program, tc.as_ref())))
                    .collect();
                for handle in handles {
                    runs.push(handle.join().expect("bench thread panicked"));
                }
            });
        }
        runs
    };
    others
        .iter()
        .zip(runs)
        .filter_map(|(tc, run)| {
            let spec = tc.spec();
            Some(ComparisonTarget {
                run: run?,
                policy: ComparisonPolicy::for_compat(spec.id.clone(), spec.compat),
                supports: spec.supports.clone(),
            })
        })
        .collect()
}

fn bench_one(program: &SeedProgram, toolchain: &dyn Toolchain) -> Option<ToolchainRun> {
    match bench_toolchain(program, toolchain, None) {
        Ok(run) => Some(run),
        Err(err) => {
            log::warn!(
                "{}: harness failure on {}, excluded this round: {err}",
                toolchain.spec().id,
                program.id
            );
            None
        }
    }
}

// ---------------------------------------------------------------------------
// The campaign itself

pub struct Campaign {
    config: CampaignConfig,
    registry: Registry,
    catalog: RuleCatalog,
    roles: RoleSet,
    strategy: Box<dyn SelectionStrategy>,
    coverage: Box<dyn CoverageProvider>,
    fp: FpMatcher,
    rng: ChaCha8Rng,
    state: CampaignState,
}

impl Campaign {
    pub fn new(config: CampaignConfig) -> Result<Self, CampaignError> {
        config.validate()?;
        let registry = Registry::from_file(&config.toolchains_path)?;
        let catalog = RuleCatalog::load(&config.catalog_path)?;
        if catalog.rules.is_empty() {
            return Err(CampaignError::Config(format!(
                "catalog {} has no rules",
                config.catalog_path.display()
            )));
        }
        let roles = build_roles(&config.llm)?;
        let strategy = build_strategy(&config.selection, &roles)?;
        let coverage = build_coverage(&config.coverage);
        let fp = match &config.fp_patterns_path {
            Some(path) => FpMatcher::from_file(path)?,
            None => FpMatcher::empty(),
        };
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        Ok(Self {
            config,
            registry,
            catalog,
            roles,
            strategy,
            coverage,
            fp,
            rng,
            state: CampaignState::new(),
        })
    }

    fn state_path(&self, name: &str) -> PathBuf {
        self.config.state_dir.join(name)
    }

    /// Loads every `.sol` under the corpus directory. Each seed gets its
    /// entry point inferred (first public/external zero-argument function)
    /// and is pre-benched across all toolchains so that inconsistencies the
    /// seed itself already triggers are never attributed to a mutation.
    fn ingest_corpus(&mut self) -> Result<(), CampaignError> {
        let dir = self.config.corpus_dir.clone();
        let listing = fs::read_dir(&dir).map_err(|e| {
            CampaignError::Config(format!("corpus dir {}: {e}", dir.display()))
        })?;
        let mut paths: Vec<PathBuf> = listing
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "sol"))
            .collect();
        paths.sort();
        for path in &paths {
            let source = match fs::read_to_string(path) {
                Ok(source) => source,
                Err(err) => {
                    log::warn!("skipping unreadable seed {}: {err}", path.display());
                    continue;
                }
            };
            let mut seed = match SeedProgram::new(source) {
                Ok(seed) => seed,
                Err(err) => {
                    log::warn!("skipping seed {}: {err}", path.display());
                    continue;
                }
            };
            seed.entry = solsrc::infer_entry(&seed.source).map(|sig| sig.entry);
            if seed.entry.is_none() {
                log::info!(
                    "seed {} has no zero-argument entry; compile-compared only",
                    seed.id
                );
            }
            if self.state.corpus.contains_key(&seed.id) {
                log::warn!("duplicate seed content at {}, keeping first copy", path.display());
                continue;
            }
            self.prescreen_seed(&seed)?;
            self.state.order.push(seed.id.clone());
            self.state.corpus.insert(seed.id.clone(), seed);
            self.state.stats.seeds += 1;
        }
        if self.state.corpus.is_empty() {
            return Err(CampaignError::EmptyCorpus(dir.display().to_string()));
        }
        Ok(())
    }

    /// Benches a seed before it enters the pool and registers any dedup
    /// keys it already triggers, so later findings are only counted when
    /// the mutation introduced them (novelty gate).
    fn prescreen_seed(&mut self, seed: &SeedProgram) -> Result<(), CampaignError> {
        let baseline_run = match bench_toolchain(seed, self.registry.baseline.as_ref(), None) {
            Ok(run) => run,
            Err(err) => {
                log::warn!("seed {}: baseline harness failure at ingest: {err}", seed.id);
                return Ok(());
            }
        };
        if baseline_run.compile.status == CompileStatus::Success {
            self.state.stats.seeds_compiling += 1;
        }
        let targets = bench_targets(seed, &self.registry.others, self.config.parallelism);
        let records = detect_all(seed, &baseline_run, &targets, &self.fp);
        for record in records {
            if self.state.seen_keys.insert(record.dedup_key.clone()) {
                self.state.stats.seed_findings += 1;
                log::info!(
                    "seed {} already triggers {} against {}; suppressed for novelty",
                    seed.id,
                    record.class,
                    record.other.name
                );
            }
        }
        Ok(())
    }

    fn write_meta(&self) -> Result<(), CampaignError> {
        let meta = MetaFile {
            rng_seed: self.config.rng_seed,
            max_iterations: self.config.max_iterations,
            corpus_dir: self.config.corpus_dir.clone(),
            catalog_path: self.config.catalog_path.clone(),
            toolchains_path: self.config.toolchains_path.clone(),
            fp_patterns_path: self.config.fp_patterns_path.clone(),
            baseline: self.registry.baseline.spec().id.clone(),
            others: self.registry.others.iter().map(|t| t.spec().id.clone()).collect(),
            selection: self.strategy.name().to_string(),
            coverage: self.coverage.name().to_string(),
        };
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        fs::write(self.state_path("meta.json"), text + "\n")?;
        Ok(())
    }

    /// Runs the full campaign: ingest, then up to `max_iterations` mutation
    /// rounds, appending one event-log line per round. Individual rounds
    /// that fail (toolchain crash, unparsable model output) are logged and
    /// skipped; only configuration and I/O problems abort the campaign.
    pub fn run(&mut self) -> Result<CampaignSummary, CampaignError> {
        fs::create_dir_all(&self.config.state_dir)?;
        fs::create_dir_all(self.state_path("artifacts"))?;
        fs::create_dir_all(self.state_path("corpus"))?;
        self.ingest_corpus()?;
        self.write_meta()?;
        // A fresh run replaces any previous logs in this state directory.
        let mut events = fs::File::create(self.state_path("events.jsonl"))?;
        let mut findings_log = fs::File::create(self.state_path("findings.jsonl"))?;

        let started = Instant::now();
        let budget = self.config.max_duration_ms.map(Duration::from_millis);
        let mut iterations = 0;
        for iteration in 0..self.config.max_iterations {
            if let Some(limit) = budget {
                if started.elapsed() >= limit {
                    log::info!("wall-clock budget reached after {iterations} iterations");
                    break;
                }
            }
            let event = self.run_iteration(iteration, &mut findings_log)?;
            let line = serde_json::to_string(&event).expect("event serializes");
            writeln!(events, "{line}")?;
            iterations += 1;
        }
        events.flush()?;
        findings_log.flush()?;

        let snapshot = serde_json::json!({
            "strategy": self.strategy.name(),
            "state": self.strategy.snapshot(),
        });
        fs::write(
            self.state_path("policy.json"),
            serde_json::to_string_pretty(&snapshot).expect("snapshot serializes") + "\n",
        )?;

        Ok(CampaignSummary {
            iterations,
            findings: self.state.findings.clone(),
            stats: self.state.stats.clone(),
        })
    }

    fn run_iteration(
        &mut self,
        iteration: u64,
        findings_log: &mut fs::File,
    ) -> Result<EventRecord, CampaignError> {
        // Fixed draw pattern per iteration: seed index, feature sub-seed,
        // rule seed. Sub-generators keep the root stream's consumption
        // constant no matter which code path an iteration takes.
        let pick = self.rng.random_range(0..self.state.order.len());
        let feature_seed = self.rng.random::<u64>();
        let rule_seed = self.rng.random::<u64>();
        let seed_id = self.state.order[pick].clone();
        let seed = self.state.corpus[&seed_id].clone();
        let mut event = EventRecord::start(iteration, &seed_id);

        let mut feature_rng = ChaCha8Rng::seed_from_u64(feature_seed);
        let feature =
            match mutator::select_feature(&seed, &self.catalog, &self.roles, &mut feature_rng) {
                Ok(feature) => feature,
                Err(err) => return self.skip(event, err),
            };
        event.feature = Some(feature.to_string());

        let rule = match mutator::select_rule(
            &feature,
            &seed,
            &self.catalog,
            self.strategy.as_mut(),
            rule_seed,
        ) {
            Ok(rule) => rule,
            Err(err) => return self.skip(event, err),
        };
        event.rule = Some(rule.id.clone());

        let variant = match mutator::mutate(&seed, &rule, &self.roles) {
            Ok(variant) => variant,
            Err(err) => return self.skip(event, err),
        };
        let Some(variant) = variant else {
            event.note = Some("no usable mutation".into());
            return Ok(event);
        };
        self.state.stats.variants_generated += 1;

        let repaired = match mutator::repair(
            variant,
            self.registry.baseline.as_ref(),
            &self.roles,
            self.config.max_repair_rounds,
        ) {
            Ok(outcome) => outcome,
            // A baseline harness crash is an infrastructure failure: the
            // variant is dropped, never admitted or compared.
            Err(err) => return self.skip(event, err),
        };
        let mut program = repaired.program;
        // The mutation may have added, removed, or renamed functions;
        // re-infer the entry point from the final source.
        program.entry = solsrc::infer_entry(&program.source).map(|sig| sig.entry);
        event.variant = Some(program.id.clone());

        let baseline_run = match bench_toolchain(
            &program,
            self.registry.baseline.as_ref(),
            Some(repaired.artifacts),
        ) {
            Ok(run) => run,
            Err(err) => return self.skip(event, MutatorError::Harness(err)),
        };
        let targets = bench_targets(&program, &self.registry.others, self.config.parallelism);
        let records = detect_all(&program, &baseline_run, &targets, &self.fp);

        for record in &records {
            if !self.state.seen_keys.insert(record.dedup_key.clone()) {
                continue;
            }
            self.persist_finding(record, findings_log)?;
            if record.fp_filtered {
                self.state.stats.filtered_findings += 1;
            } else {
                self.state.stats.genuine_findings += 1;
                *self.state.stats.per_class.entry(record.class).or_insert(0) += 1;
            }
            event.findings.push(record.id.clone());
            self.state.findings.push(record.clone());
        }

        let baseline_compiled = baseline_run.compile.status == CompileStatus::Success;
        if baseline_compiled {
            self.state.stats.baseline_compile_success += 1;
        }
        let (cov_before, cov_after) = if baseline_compiled {
            match (self.coverage.coverage(&seed), self.coverage.coverage(&program)) {
                (Ok(before), Ok(after)) => (Some(before), Some(after)),
                _ => (None, None),
            }
        } else {
            (None, None)
        };
        let input =
            RewardInput { records: records.clone(), baseline_compiled, cov_before, cov_after };
        let value = reward(&input);
        event.reward = Some(value);
        if let Err(err) = self.strategy.observe(&feature, &rule.id, value) {
            log::warn!("reward update failed for {}: {err}", rule.id);
        }

        // Admission: compilable variants rejoin the pool, and so does any
        // variant that surfaced a genuine inconsistency.
        let genuine = records.iter().any(|r| !r.fp_filtered);
        if baseline_compiled || genuine {
            self.admit(program)?;
            event.admitted = true;
        }
        Ok(event)
    }

    /// Converts a per-iteration failure into a skipped event, or escalates
    /// it when the problem is configuration rather than this round's luck.
    fn skip(
        &mut self,
        mut event: EventRecord,
        err: MutatorError,
    ) -> Result<EventRecord, CampaignError> {
        match err {
            MutatorError::Llm(e @ LlmError::MissingFixture { .. }) => Err(CampaignError::Llm(e)),
            MutatorError::Llm(e @ LlmError::InvalidRequest(_)) => Err(CampaignError::Llm(e)),
            MutatorError::Llm(e @ LlmError::Io(_)) => Err(CampaignError::Llm(e)),
            MutatorError::Policy(PolicyError::Llm(e @ LlmError::MissingFixture { .. })) => {
                Err(CampaignError::Llm(e))
            }
            MutatorError::EmptyCatalog => {
                Err(CampaignError::Config("catalog has no features".into()))
            }
            other => {
                log::warn!("iteration {} skipped: {other}", event.iteration);
                self.state.stats.skipped_iterations += 1;
                event.note = Some(other.to_string());
                Ok(event)
            }
        }
    }

    fn persist_finding(
        &self,
        record: &InconsistencyRecord,
        findings_log: &mut fs::File,
    ) -> Result<(), CampaignError> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(findings_log, "{line}")?;
        let dir = self.state_path("artifacts").join(&record.id);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("program.sol"), &record.program.source)?;
        fs::write(
            dir.join("record.json"),
            serde_json::to_string_pretty(record).expect("record serializes") + "\n",
        )?;
        Ok(())
    }

    fn admit(&mut self, program: SeedProgram) -> Result<(), CampaignError> {
        if self.state.corpus.contains_key(&program.id) {
            return Ok(());
        }
        fs::write(
            self.state_path("corpus").join(format!("{}.sol", program.id)),
            &program.source,
        )?;
        self.state.stats.variants_admitted += 1;
        self.state.order.push(program.id.clone());
        self.state.corpus.insert(program.id.clone(), program);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Replay

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ReplayVerdict {
    /// The stored program still manifests the same class against the same
    /// toolchain pair.
    Reproduced { class: InconsistencyClass },
    /// The run completed but the class did not re-manifest — the finding
    /// is flaky (or the toolchain behavior changed since it was recorded).
    Flaky { expected: InconsistencyClass, observed: Option<InconsistencyClass> },
}

/// Re-runs a stored finding against the current toolchain registry and
/// checks whether the same inconsistency class re-manifests.
pub fn replay(state_dir: &Path, finding_id: &str) -> Result<ReplayVerdict, CampaignError> {
    let meta_raw = fs::read_to_string(state_dir.join("meta.json")).map_err(|e| {
        CampaignError::Config(format!("{} has no campaign metadata: {e}", state_dir.display()))
    })?;
    let meta: MetaFile = serde_json::from_str(&meta_raw)
        .map_err(|e| CampaignError::Config(format!("corrupt meta.json: {e}")))?;
    let record_path = state_dir.join("artifacts").join(finding_id).join("record.json");
    if !record_path.exists() {
        return Err(CampaignError::MissingArtifact(finding_id.to_string()));
    }
    let record: InconsistencyRecord = serde_json::from_str(&fs::read_to_string(&record_path)?)
        .map_err(|e| CampaignError::Config(format!("corrupt record.json: {e}")))?;

    let registry = Registry::from_file(&meta.toolchains_path)?;
    let fp = match &meta.fp_patterns_path {
        Some(path) => FpMatcher::from_file(path)?,
        None => FpMatcher::empty(),
    };
    if registry.baseline.spec().id.name != record.baseline.name {
        return Err(CampaignError::Config(format!(
            "registry baseline `{}` does not match recorded baseline `{}`",
            registry.baseline.spec().id.name,
            record.baseline.name
        )));
    }
    let other = registry
        .others
        .iter()
        .find(|tc| tc.spec().id.name == record.other.name)
        .ok_or_else(|| {
            CampaignError::Config(format!(
                "toolchain `{}` missing from current registry",
                record.other.name
            ))
        })?;

    let baseline_run = bench_toolchain(&record.program, registry.baseline.as_ref(), None)?;
    let targets = bench_targets(&record.program, std::slice::from_ref(other), 1);
    let records = detect_all(&record.program, &baseline_run, &targets, &fp);
    let reproduced = records
        .iter()
        .any(|r| r.class == record.class && r.other.name == record.other.name);
    if reproduced {
        Ok(ReplayVerdict::Reproduced { class: record.class })
    } else {
        Ok(ReplayVerdict::Flaky {
            expected: record.class,
            observed: records.first().map(|r| r.class),
        })
    }
}
