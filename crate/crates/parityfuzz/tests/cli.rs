//! End-to-end tests for the `parityfuzz` binary: catalog generation,
//! campaign runs, replay, report rendering, environment overrides, and
//! the exit-code contract (0 clean, 1 findings, 2 config/infra errors).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use tempfile::TempDir;

use parityfuzz::campaign::{
    build_roles, AdapterConfig, CampaignConfig, CoverageConfig, LlmConfig, RoleConfig,
    SelectionConfig, ENV_FIXTURES, ENV_TOOLCHAINS,
};
use parityfuzz::llm::mock::MockAdapter;
use parityfuzz::llm::{LlmRole, RoleSet, TemplateId};
use parityfuzz::rulegen::{extract_explicit_boundaries, BoundaryScanConfig, RuleCatalog};
use parityfuzz::types::{FeatureTag, InconsistencyRecord, MutationRule, RuleAction, RuleKind};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_parityfuzz"));
    // Isolate from any ambient overrides; tests opt in explicitly.
    cmd.env_remove(ENV_TOOLCHAINS).env_remove(ENV_FIXTURES);
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code (killed by signal?)")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

// ---------------------------------------------------------------------------
// Campaign scenario shared by the fuzz/replay/report tests: one seed, one
// rule, a mock `solang` that (optionally) rejects `unchecked` blocks.
// ---------------------------------------------------------------------------

const SEED_SOURCE: &str = "contract Counter {\n    uint256 total;\n    function bump() public returns (uint256) {\n        total = total + 1;\n        return total;\n    }\n}\n";

// No trailing newline: mutation payloads are trimmed when parsed, and the
// fixture bytes must equal the stored variant source exactly.
const VARIANT_SOURCE: &str = "contract Counter {\n    uint256 total;\n    function bump() public returns (uint256) {\n        unchecked { total = total + 1; }\n        return total;\n    }\n}";

fn arithmetic_rule() -> MutationRule {
    MutationRule::new(
        RuleKind::SyntaxOriented,
        FeatureTag::new("arithmetic").unwrap(),
        RuleAction::Insert,
        "wrap a state update in an unchecked block",
        "feature:arithmetic",
    )
}

fn registry_json(reject_unchecked: bool) -> serde_json::Value {
    let solang_rules = if reject_unchecked {
        serde_json::json!([{
            "match": {"substring": "unchecked"},
            "compile": {
                "status": "failure",
                "stderr": "input.sol:4:9: error: unchecked blocks not supported\n"
            }
        }])
    } else {
        serde_json::json!([])
    };
    serde_json::json!({
        "baseline": "solc",
        "toolchains": [
            {
                "name": "solc", "version": "0.8.26", "kind": "mock",
                "output_encoding": "abi", "compat": "high",
                "supports": ["EMI", "CSI"],
                "script": {"default_compile": {"status": "success"}}
            },
            {
                "name": "solang", "version": "0.3.3", "kind": "mock",
                "output_encoding": "abi", "compat": "high",
                "supports": ["EMI", "CSI"],
                "script": {
                    "default_compile": {"status": "success"},
                    "rules": solang_rules
                }
            }
        ]
    })
}

/// Writes corpus, catalog, registry, fixtures, and a config file under
/// `root`, returning the config path. All paths in the config are
/// absolute, so the state can be inspected after the process exits.
fn write_campaign_env(root: &Path, reject_unchecked: bool, iterations: u64) -> PathBuf {
    fs::create_dir_all(root.join("corpus")).unwrap();
    fs::write(root.join("corpus/seed.sol"), SEED_SOURCE).unwrap();
    let rule = arithmetic_rule();
    let catalog = RuleCatalog::build(
        vec![FeatureTag::new("arithmetic").unwrap()],
        Vec::new(),
        vec![rule.clone()],
    )
    .unwrap();
    catalog.save(&root.join("catalog.json")).unwrap();
    fs::write(
        root.join("toolchains.json"),
        serde_json::to_string_pretty(&registry_json(reject_unchecked)).unwrap(),
    )
    .unwrap();

    let config = CampaignConfig {
        corpus_dir: root.join("corpus"),
        catalog_path: root.join("catalog.json"),
        toolchains_path: root.join("toolchains.json"),
        fp_patterns_path: None,
        state_dir: root.join("state"),
        max_iterations: iterations,
        max_duration_ms: None,
        rng_seed: 11,
        max_repair_rounds: 3,
        coverage: CoverageConfig::TokenProxy,
        selection: SelectionConfig::default(),
        llm: LlmConfig {
            default: RoleConfig {
                adapter: AdapterConfig::Mock { fixtures_dir: root.join("fixtures") },
                temperature: 0.0,
                seed: 1,
            },
            overrides: BTreeMap::new(),
        },
        parallelism: 1,
    };

    let roles = build_roles(&config.llm).unwrap();
    let fixtures = root.join("fixtures");
    write_feature_select(&roles, &fixtures, &catalog, SEED_SOURCE, "arithmetic\n");
    write_feature_select(&roles, &fixtures, &catalog, VARIANT_SOURCE, "arithmetic\n");
    write_mutate(&roles, &fixtures, &rule, SEED_SOURCE, VARIANT_SOURCE);
    // The admitted variant echoes itself back -> discarded as a non-mutation.
    write_mutate(&roles, &fixtures, &rule, VARIANT_SOURCE, VARIANT_SOURCE);

    let config_path = root.join("config.json");
    fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    config_path
}

fn write_feature_select(
    roles: &RoleSet,
    fixtures: &Path,
    catalog: &RuleCatalog,
    source: &str,
    answer: &str,
) {
    let listing: String = catalog.features.iter().map(|f| format!("{f}\n")).collect();
    let slots: BTreeMap<String, String> =
        [("program".to_string(), source.to_string()), ("features".to_string(), listing)]
            .into_iter()
            .collect();
    let req = roles.request(TemplateId::FeatureSelect, slots).unwrap();
    MockAdapter::write_fixture(fixtures, &req, answer).unwrap();
}

fn write_mutate(roles: &RoleSet, fixtures: &Path, rule: &MutationRule, source: &str, answer: &str) {
    let slots: BTreeMap<String, String> = [
        ("program".to_string(), source.to_string()),
        ("rule".to_string(), format!("{}: {}", rule.action.as_str(), rule.description)),
    ]
    .into_iter()
    .collect();
    let req = roles.request(TemplateId::Mutate, slots).unwrap();
    MockAdapter::write_fixture(fixtures, &req, answer).unwrap();
}

fn first_finding(state: &Path) -> InconsistencyRecord {
    let raw = fs::read_to_string(state.join("findings.jsonl")).unwrap();
    serde_json::from_str(raw.lines().next().expect("at least one finding")).unwrap()
}

// ---------------------------------------------------------------------------
// fuzz
// ---------------------------------------------------------------------------

#[test]
fn fuzz_reports_findings_and_exits_one() {
    let dir = TempDir::new().unwrap();
    let config = write_campaign_env(dir.path(), true, 4);

    let out = run(bin().arg("fuzz").arg("--config").arg(&config));
    assert_eq!(code(&out), 1, "stdout:\n{}\nstderr:\n{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("findings: 1 genuine"), "unexpected summary:\n{text}");
    assert!(text.contains("solc vs solang: CSI"), "unexpected summary:\n{text}");

    let events = fs::read_to_string(dir.path().join("state/events.jsonl")).unwrap();
    assert_eq!(events.lines().count(), 4, "one event line per iteration");
}

#[test]
fn fuzz_without_findings_exits_zero() {
    let dir = TempDir::new().unwrap();
    let config = write_campaign_env(dir.path(), false, 4);

    let out = run(bin().arg("fuzz").arg("--config").arg(&config));
    assert_eq!(code(&out), 0, "stderr:\n{}", stderr(&out));
    assert!(stdout(&out).contains("findings: 0 genuine"));
}

#[test]
fn fuzz_flags_override_iterations_and_seed() {
    let dir = TempDir::new().unwrap();
    let config = write_campaign_env(dir.path(), false, 50);

    let out = run(bin()
        .arg("fuzz")
        .arg("--config")
        .arg(&config)
        .args(["--iterations", "2", "--seed", "5"]));
    assert_eq!(code(&out), 0, "stderr:\n{}", stderr(&out));
    let events = fs::read_to_string(dir.path().join("state/events.jsonl")).unwrap();
    assert_eq!(events.lines().count(), 2, "--iterations must cap the loop");
}

#[test]
fn fuzz_with_missing_config_exits_two() {
    let out = run(bin().arg("fuzz").args(["--config", "/nonexistent/campaign.json"]));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("error:"), "stderr:\n{}", stderr(&out));
}

#[test]
fn fuzz_with_malformed_config_exits_two() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, "{\"corpus_dir\": 42}").unwrap();
    let out = run(bin().arg("fuzz").arg("--config").arg(&path));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("error:"));
}

// ---------------------------------------------------------------------------
// environment overrides
// ---------------------------------------------------------------------------

#[test]
fn toolchains_env_var_overrides_config() {
    let dir = TempDir::new().unwrap();
    let config = write_campaign_env(dir.path(), true, 4);
    // A permissive registry elsewhere: the override must defuse the CSI.
    let alt = dir.path().join("alt-toolchains.json");
    fs::write(&alt, serde_json::to_string_pretty(&registry_json(false)).unwrap()).unwrap();

    let out = run(bin().arg("fuzz").arg("--config").arg(&config).env(ENV_TOOLCHAINS, &alt));
    assert_eq!(code(&out), 0, "stderr:\n{}", stderr(&out));
    assert!(stdout(&out).contains("findings: 0 genuine"));
}

#[test]
fn fixtures_env_var_overrides_config() {
    let dir = TempDir::new().unwrap();
    let config = write_campaign_env(dir.path(), true, 4);
    let empty = dir.path().join("empty-fixtures");
    fs::create_dir_all(&empty).unwrap();

    // Pointing the adapter at an empty fixture root must surface as an
    // infrastructure error, proving the override took effect.
    let out = run(bin().arg("fuzz").arg("--config").arg(&config).env(ENV_FIXTURES, &empty));
    assert_eq!(code(&out), 2, "stdout:\n{}", stdout(&out));
    assert!(stderr(&out).contains("error:"));
}

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

#[test]
fn replay_reproduces_then_reports_flaky_after_registry_change() {
    let dir = TempDir::new().unwrap();
    let config = write_campaign_env(dir.path(), true, 4);
    let state = dir.path().join("state");

    assert_eq!(code(&run(bin().arg("fuzz").arg("--config").arg(&config))), 1);
    let finding = first_finding(&state);

    let out = run(bin().arg("replay").arg(&finding.id).arg("--state").arg(&state));
    assert_eq!(code(&out), 1, "stderr:\n{}", stderr(&out));
    assert!(stdout(&out).contains(&format!("{}: reproduced (CSI)", finding.id)));

    // Neuter the registry the campaign recorded in its metadata: the same
    // program now compiles on both sides, so the finding is flaky.
    fs::write(
        dir.path().join("toolchains.json"),
        serde_json::to_string_pretty(&registry_json(false)).unwrap(),
    )
    .unwrap();
    let out = run(bin().arg("replay").arg(&finding.id).arg("--state").arg(&state));
    assert_eq!(code(&out), 0, "stderr:\n{}", stderr(&out));
    assert!(stdout(&out).contains("flaky"));

    let out = run(bin().arg("replay").arg("f-doesnotexist").arg("--state").arg(&state));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("f-doesnotexist"));
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[test]
fn report_renders_markdown_and_json() {
    let dir = TempDir::new().unwrap();
    let config = write_campaign_env(dir.path(), true, 4);
    let state = dir.path().join("state");
    assert_eq!(code(&run(bin().arg("fuzz").arg("--config").arg(&config))), 1);

    let out = run(bin().arg("report").arg("--state").arg(&state));
    assert_eq!(code(&out), 1, "stderr:\n{}", stderr(&out));
    let md = stdout(&out);
    assert!(md.contains("| toolchain | EMI | CSI | ESI | EOI | total |"), "markdown:\n{md}");
    assert!(md.contains("| solang 0.3.3 | 0 | 1 | 0 | 0 | 1 |"), "markdown:\n{md}");

    let out = run(bin().arg("report").arg("--state").arg(&state).args(["--format", "json"]));
    assert_eq!(code(&out), 1);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["total"], 1);
    assert_eq!(report["matrix"]["solang 0.3.3"]["CSI"], 1);
}

#[test]
fn report_on_clean_state_exits_zero() {
    let dir = TempDir::new().unwrap();
    let config = write_campaign_env(dir.path(), false, 4);
    let state = dir.path().join("state");
    assert_eq!(code(&run(bin().arg("fuzz").arg("--config").arg(&config))), 0);

    let out = run(bin().arg("report").arg("--state").arg(&state));
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("| **total** | 0 | 0 | 0 | 0 | 0 |"));
}

#[test]
fn report_without_state_exits_two() {
    let out = run(bin().arg("report").args(["--state", "/nonexistent/state"]));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("error:"));
}

// ---------------------------------------------------------------------------
// gen-rules
// ---------------------------------------------------------------------------

/// Builds a tiny compiler source tree with one explicit boundary and the
/// fixtures covering the pipeline's three model calls for it, mirroring
/// the role wiring the CLI uses (temperature 0.0, request seed 0).
fn write_rulegen_env(root: &Path) -> (PathBuf, PathBuf) {
    let src_root = root.join("compiler-src");
    fs::create_dir_all(src_root.join("src")).unwrap();
    let mut lines: Vec<String> = (0..40).map(|i| format!("let x{i} = {i};")).collect();
    lines[20] = "        _ => unimplemented!(),".to_string();
    fs::write(src_root.join("src/lower.rs"), lines.join("\n")).unwrap();

    let conditions =
        extract_explicit_boundaries(&src_root, &BoundaryScanConfig::default()).unwrap();
    assert_eq!(conditions.len(), 1, "scenario expects exactly one boundary");
    let snippet = conditions[0].snippet.clone();

    let fixtures = root.join("fixtures");
    let roles = RoleSet::uniform(LlmRole::new(Arc::new(MockAdapter::new(fixtures.clone())), 0.0, 0));

    let identify: BTreeMap<String, String> =
        [("snippet".to_string(), snippet.clone())].into_iter().collect();
    let req = roles.request(TemplateId::FeatureIdentify, identify).unwrap();
    MockAdapter::write_fixture(&fixtures, &req, "struct\n").unwrap();

    let so_answer = "insert: add a struct field of user-defined value type\nreplace: swap adjacent struct member declarations\n";
    let so: BTreeMap<String, String> =
        [("feature".to_string(), "struct".to_string())].into_iter().collect();
    let req = roles.request(TemplateId::SoRuleGen, so).unwrap();
    MockAdapter::write_fixture(&fixtures, &req, so_answer).unwrap();

    // The boundary-oriented request quotes the syntax-oriented rules back
    // in response order, which reconstructs the answer above verbatim.
    let bo: BTreeMap<String, String> = [
        ("feature".to_string(), "struct".to_string()),
        ("condition".to_string(), snippet),
        ("so_rules".to_string(), so_answer.to_string()),
    ]
    .into_iter()
    .collect();
    let req = roles.request(TemplateId::BoRuleGen, bo).unwrap();
    MockAdapter::write_fixture(&fixtures, &req, "modify: reorder struct members near the packing boundary\n")
        .unwrap();

    (src_root, fixtures)
}

#[test]
fn gen_rules_writes_a_catalog_from_fixture_answers() {
    let dir = TempDir::new().unwrap();
    let (src_root, fixtures) = write_rulegen_env(dir.path());
    let out_path = dir.path().join("catalog.json");

    let out = run(bin()
        .arg("gen-rules")
        .arg("--source")
        .arg(&src_root)
        .arg("--out")
        .arg(&out_path)
        .arg("--explicit-only")
        .arg("--fixtures")
        .arg(&fixtures));
    assert_eq!(code(&out), 0, "stderr:\n{}", stderr(&out));
    assert!(stdout(&out).contains("1 features, 1 conditions, 3 rules"), "stdout:\n{}", stdout(&out));

    let catalog = RuleCatalog::load(&out_path).unwrap();
    assert_eq!(catalog.features, vec![FeatureTag::new("struct").unwrap()]);
    assert_eq!(catalog.conditions.len(), 1);
    assert_eq!(catalog.rules.len(), 3);
    // Two syntax-oriented rules followed by one boundary-oriented rule
    // whose origin is the extracted condition.
    assert_eq!(
        catalog.rules.iter().filter(|r| r.kind == RuleKind::SyntaxOriented).count(),
        2
    );
    let bo = catalog.rules.iter().find(|r| r.kind == RuleKind::BoundaryOriented).unwrap();
    assert_eq!(bo.origin, catalog.conditions[0].id);
    assert_eq!(bo.description, "reorder struct members near the packing boundary");
}

#[test]
fn gen_rules_without_adapter_exits_two() {
    let dir = TempDir::new().unwrap();
    let (src_root, _) = write_rulegen_env(dir.path());
    let out = run(bin()
        .arg("gen-rules")
        .arg("--source")
        .arg(&src_root)
        .arg("--out")
        .arg(dir.path().join("catalog.json")));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains(ENV_FIXTURES), "stderr:\n{}", stderr(&out));
}

#[test]
fn gen_rules_reads_fixtures_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let (src_root, fixtures) = write_rulegen_env(dir.path());
    let out_path = dir.path().join("catalog.json");

    let out = run(bin()
        .arg("gen-rules")
        .arg("--source")
        .arg(&src_root)
        .arg("--out")
        .arg(&out_path)
        .arg("--explicit-only")
        .env(ENV_FIXTURES, &fixtures));
    assert_eq!(code(&out), 0, "stderr:\n{}", stderr(&out));
    assert!(out_path.exists());
}
