//! `parityfuzz` CLI: rule-catalog generation, campaign runs, finding
//! replay, and report rendering.
//!
//! Exit codes: 0 clean, 1 findings present (for CI gating), 2 on
//! configuration or infrastructure errors.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use parityfuzz::campaign::report::{self, ReportFormat};
use parityfuzz::campaign::{
    replay, Campaign, CampaignConfig, CampaignSummary, ReplayVerdict, ENV_FIXTURES,
};
use parityfuzz::llm::mock::MockAdapter;
use parityfuzz::llm::{LlmRole, RoleSet};
use parityfuzz::rulegen::{run_pipeline, BoundaryScanConfig};
use parityfuzz::types::InconsistencyClass;

#[derive(Parser)]
#[command(
    name = "parityfuzz",
    version,
    about = "Cross-compiler differential fuzzing for Solidity toolchains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive a mutation-rule catalog from compiler source trees.
    GenRules {
        /// Source tree root to scan; repeat for multiple roots.
        #[arg(long = "source", required = true, num_args = 1)]
        sources: Vec<PathBuf>,
        /// Where to write the catalog JSON.
        #[arg(long)]
        out: PathBuf,
        /// Skip the model-assisted implicit-boundary scan.
        #[arg(long)]
        explicit_only: bool,
        /// Fixture directory backing the model adapter; defaults to
        /// $PARITYFUZZ_FIXTURES.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Sampling temperature recorded in every model request.
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        /// Model-request seed recorded in every model request.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a fuzzing campaign from a config file.
    Fuzz {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured iteration budget.
        #[arg(long)]
        iterations: Option<u64>,
        /// Override the configured RNG seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run a stored finding against the current toolchains.
    Replay {
        /// Finding id, as printed by `fuzz` and stored under artifacts/.
        finding_id: String,
        /// Campaign state directory.
        #[arg(long, default_value = "state")]
        state: PathBuf,
    },
    /// Render the findings report for a campaign state directory.
    Report {
        #[arg(long)]
        state: PathBuf,
        /// Output format: json or md.
        #[arg(long, default_value = "md")]
        format: ReportFormat,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenRules { sources, out, explicit_only, fixtures, temperature, seed } => {
            let fixtures = fixtures
                .or_else(|| std::env::var(ENV_FIXTURES).ok().map(PathBuf::from))
                .ok_or_else(|| {
                    anyhow::anyhow!(
                        "gen-rules needs a model adapter: pass --fixtures or set {ENV_FIXTURES}"
                    )
                })?;
            let roles =
                RoleSet::uniform(LlmRole::new(Arc::new(MockAdapter::new(fixtures)), temperature, seed));
            let output =
                run_pipeline(&sources, &BoundaryScanConfig::default(), &roles, explicit_only)?;
            for warning in &output.warnings {
                log::warn!("{warning}");
            }
            output.catalog.save(&out)?;
            println!(
                "catalog written to {}: {} features, {} conditions, {} rules",
                out.display(),
                output.catalog.features.len(),
                output.catalog.conditions.len(),
                output.catalog.rules.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Fuzz { config, iterations, seed } => {
            let mut config = CampaignConfig::load(&config)?;
            config.apply_env();
            if let Some(n) = iterations {
                config.max_iterations = n;
            }
            if let Some(s) = seed {
                config.rng_seed = s;
            }
            config.validate()?;
            let state_dir = config.state_dir.clone();
            let mut campaign = Campaign::new(config)?;
            let summary = campaign.run()?;
            print_summary(&summary, &state_dir);
            if summary.has_genuine_findings() {
                Ok(ExitCode::from(1))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Replay { finding_id, state } => match replay(&state, &finding_id)? {
            ReplayVerdict::Reproduced { class } => {
                println!("{finding_id}: reproduced ({class})");
                Ok(ExitCode::from(1))
            }
            ReplayVerdict::Flaky { expected, observed } => {
                match observed {
                    Some(class) => {
                        println!("{finding_id}: flaky (expected {expected}, observed {class})")
                    }
                    None => println!("{finding_id}: flaky (expected {expected}, no inconsistency)"),
                }
                Ok(ExitCode::SUCCESS)
            }
        },
        Command::Report { state, format } => {
            let records = report::load_findings(&state)?;
            let built = report::build_report(&records);
            let doc = match format {
                ReportFormat::Json => {
                    serde_json::to_string_pretty(&built).expect("report serializes") + "\n"
                }
                ReportFormat::Markdown => built.to_markdown(),
            };
            print!("{doc}");
            if built.total > 0 {
                Ok(ExitCode::from(1))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
    }
}

fn print_summary(summary: &CampaignSummary, state_dir: &std::path::Path) {
    println!(
        "{} iterations, {} variants generated, {} admitted",
        summary.iterations, summary.stats.variants_generated, summary.stats.variants_admitted
    );
    let per_class: Vec<String> = InconsistencyClass::ALL
        .iter()
        .map(|class| {
            format!("{class} {}", summary.stats.per_class.get(class).copied().unwrap_or(0))
        })
        .collect();
    println!(
        "findings: {} genuine ({}), {} filtered",
        summary.stats.genuine_findings,
        per_class.join(", "),
        summary.stats.filtered_findings
    );
    for finding in &summary.findings {
        if !finding.fp_filtered {
            println!("  {} {} vs {}: {}", finding.id, finding.baseline.name, finding.other.name, finding.class);
        }
    }
    println!("state written to {}", state_dir.display());
}
