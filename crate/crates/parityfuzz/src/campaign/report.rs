//! Finding reports: a per-toolchain × per-class matrix with totals,
//! rendered as JSON or markdown from a campaign state directory. Records
//! suppressed by false-positive patterns are listed separately so that
//! documented differences stay visible without polluting the matrix.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::types::{InconsistencyClass, InconsistencyRecord};

use super::CampaignError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}` (expected json or md)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FilteredEntry {
    pub id: String,
    pub class: InconsistencyClass,
    pub toolchain: String,
    pub dedup_key: String,
}

/// Aggregated findings: `matrix[toolchain][class]` counts unfiltered
/// records only; every filtered record is listed under `filtered`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Report {
    pub matrix: BTreeMap<String, BTreeMap<InconsistencyClass, u64>>,
    pub class_totals: BTreeMap<InconsistencyClass, u64>,
    pub total: u64,
    pub filtered: Vec<FilteredEntry>,
}

fn toolchain_label(record: &InconsistencyRecord) -> String {
    if record.other.version.is_empty() {
        record.other.name.clone()
    } else {
        format!("{} {}", record.other.name, record.other.version)
    }
}

pub fn build_report(records: &[InconsistencyRecord]) -> Report {
    let mut matrix: BTreeMap<String, BTreeMap<InconsistencyClass, u64>> = BTreeMap::new();
    let mut class_totals: BTreeMap<InconsistencyClass, u64> = BTreeMap::new();
    let mut total = 0;
    let mut filtered = Vec::new();
    for record in records {
        if record.fp_filtered {
            filtered.push(FilteredEntry {
                id: record.id.clone(),
                class: record.class,
                toolchain: toolchain_label(record),
                dedup_key: record.dedup_key.clone(),
            });
            continue;
        }
        let row = matrix.entry(toolchain_label(record)).or_default();
        *row.entry(record.class).or_insert(0) += 1;
        *class_totals.entry(record.class).or_insert(0) += 1;
        total += 1;
    }
    // Every row carries all four classes so the table shape is stable.
    for row in matrix.values_mut() {
        for class in InconsistencyClass::ALL {
            row.entry(class).or_insert(0);
        }
    }
    for class in InconsistencyClass::ALL {
        class_totals.entry(class).or_insert(0);
    }
    Report { matrix, class_totals, total, filtered }
}

/// Reads every record from a campaign's `findings.jsonl`.
pub fn load_findings(state_dir: &Path) -> Result<Vec<InconsistencyRecord>, CampaignError> {
    let path = state_dir.join("findings.jsonl");
    let raw = fs::read_to_string(&path).map_err(|e| {
        CampaignError::Config(format!("{} has no findings log: {e}", state_dir.display()))
    })?;
    let mut records = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: InconsistencyRecord = serde_json::from_str(line).map_err(|e| {
            CampaignError::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Builds and renders the report for a state directory.
pub fn render(state_dir: &Path, format: ReportFormat) -> Result<String, CampaignError> {
    let records = load_findings(state_dir)?;
    let report = build_report(&records);
    Ok(match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
        }
        ReportFormat::Markdown => report.to_markdown(),
    })
}

impl Report {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Findings\n\n");
        out.push_str("| toolchain | EMI | CSI | ESI | EOI | total |\n");
        out.push_str("|---|---:|---:|---:|---:|---:|\n");
        for (toolchain, row) in &self.matrix {
            let row_total: u64 = row.values().sum();
            out.push_str(&format!(
                "| {toolchain} | {} | {} | {} | {} | {row_total} |\n",
                row[&InconsistencyClass::Emi],
                row[&InconsistencyClass::Csi],
                row[&InconsistencyClass::Esi],
                row[&InconsistencyClass::Eoi],
            ));
        }
        out.push_str(&format!(
            "| **total** | {} | {} | {} | {} | {} |\n",
            self.class_totals[&InconsistencyClass::Emi],
            self.class_totals[&InconsistencyClass::Csi],
            self.class_totals[&InconsistencyClass::Esi],
            self.class_totals[&InconsistencyClass::Eoi],
            self.total,
        ));
        out.push_str("\n## Filtered (documented differences)\n\n");
        if self.filtered.is_empty() {
            out.push_str("none\n");
        } else {
            for entry in &self.filtered {
                out.push_str(&format!(
                    "- `{}` {} on {} — key `{}`\n",
                    entry.id, entry.class, entry.toolchain, entry.dedup_key
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{
        CompileOutcome, CompileStatus, OutcomeSnapshot, SeedProgram, ToolchainId,
    };

    fn record(
        other: &str,
        version: &str,
        class: InconsistencyClass,
        source: &str,
        filtered: bool,
    ) -> InconsistencyRecord {
        let program = SeedProgram::new(source).unwrap();
        let baseline = ToolchainId::new("solc", "0.8.26");
        let target = ToolchainId::new(other, version);
        let (base_out, other_out) = match class {
            InconsistencyClass::Csi => (
                OutcomeSnapshot::Compile(CompileOutcome::success(
                    baseline,
                    vec![0x60],
                    String::new(),
                    3,
                )),
                OutcomeSnapshot::Compile(CompileOutcome::failed(
                    target,
                    CompileStatus::Failure,
                    "boom\n".into(),
                    3,
                )),
            ),
            InconsistencyClass::Emi => (
                OutcomeSnapshot::Compile(CompileOutcome::failed(
                    baseline,
                    CompileStatus::Failure,
                    "Error: bad\n --> input.sol:1:1\n".into(),
                    3,
                )),
                OutcomeSnapshot::Compile(CompileOutcome::failed(
                    target,
                    CompileStatus::Crash,
                    "segfault\n".into(),
                    3,
                )),
            ),
            other => panic!("unsupported class in this helper: {other}"),
        };
        let mut rec = InconsistencyRecord::new(class, program, base_out, other_out).unwrap();
        rec.fp_filtered = filtered;
        rec
    }

    #[test]
    fn matrix_counts_by_toolchain_and_class() {
        let records = vec![
            record("solang", "0.3.3", InconsistencyClass::Csi, "contract A {}", false),
            record("solang", "0.3.3", InconsistencyClass::Emi, "contract B {}", false),
            record("revive", "0.1.0", InconsistencyClass::Csi, "contract C {}", false),
            record("revive", "0.1.0", InconsistencyClass::Csi, "contract D {}", true),
        ];
        let report = build_report(&records);
        assert_eq!(report.total, 3);
        assert_eq!(report.matrix["solang 0.3.3"][&InconsistencyClass::Csi], 1);
        assert_eq!(report.matrix["solang 0.3.3"][&InconsistencyClass::Emi], 1);
        assert_eq!(report.matrix["solang 0.3.3"][&InconsistencyClass::Eoi], 0);
        assert_eq!(report.matrix["revive 0.1.0"][&InconsistencyClass::Csi], 1);
        assert_eq!(report.class_totals[&InconsistencyClass::Csi], 2);
        assert_eq!(report.filtered.len(), 1);
        assert_eq!(report.filtered[0].toolchain, "revive 0.1.0");
    }

    #[test]
    fn markdown_has_rows_totals_and_filtered_section() {
        let records = vec![
            record("solang", "0.3.3", InconsistencyClass::Csi, "contract A {}", false),
            record("zksolc", "1.5.0", InconsistencyClass::Csi, "contract E {}", true),
        ];
        let md = build_report(&records).to_markdown();
        assert!(md.contains("| toolchain | EMI | CSI | ESI | EOI | total |"));
        assert!(md.contains("| solang 0.3.3 | 0 | 1 | 0 | 0 | 1 |"));
        assert!(md.contains("| **total** | 0 | 1 | 0 | 0 | 1 |"));
        assert!(md.contains("## Filtered"));
        assert!(md.contains("zksolc 1.5.0"));
    }

    #[test]
    fn markdown_with_no_findings_is_explicit() {
        let report = build_report(&[]);
        let md = report.to_markdown();
        assert_eq!(report.total, 0);
        assert!(md.contains("none"));
    }

    #[test]
    fn json_rendering_is_parseable() {
        let records =
            vec![record("solang", "0.3.3", InconsistencyClass::Csi, "contract A {}", false)];
        let report = build_report(&records);
        let value = serde_json::to_value(&report).unwrap();
        assert_eq!(value["total"], 1);
        assert_eq!(value["matrix"]["solang 0.3.3"]["CSI"], 1);
        assert_eq!(value["class_totals"]["EOI"], 0);
        assert!(value["filtered"].as_array().unwrap().is_empty());
    }

    #[test]
    fn report_format_parses() {
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert_eq!("md".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert_eq!("markdown".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
