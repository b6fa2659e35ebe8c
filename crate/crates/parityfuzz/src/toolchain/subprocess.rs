//! Drives real compiler/executor binaries. Commands are argv templates
//! with `{input}`/`{outdir}` (compile) and `{bytecode_or_source}`/
//! `{contract}`/`{function}` (execute) placeholders, run under a
//! kill-on-expiry timeout.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::{CompileArtifacts, HarnessError, Toolchain, ToolchainSpec};
use crate::types::{CompileOutcome, CompileStatus, ExecOutcome, ExecStatus, SeedProgram};

pub struct SubprocessToolchain {
    spec: ToolchainSpec,
    compile_cmd: Vec<String>,
    execute_cmd: Vec<String>,
}

impl SubprocessToolchain {
    pub fn new(spec: ToolchainSpec, compile_cmd: Vec<String>, execute_cmd: Vec<String>) -> Self {
        Self { spec, compile_cmd, execute_cmd }
    }

    fn timeout(&self) -> Duration {
        Duration::from_millis(self.spec.timeout_ms.max(1))
    }
}

impl Toolchain for SubprocessToolchain {
    fn spec(&self) -> &ToolchainSpec {
        &self.spec
    }

    fn compile(&self, program: &SeedProgram) -> Result<CompileArtifacts, HarnessError> {
        let workspace = tempfile::tempdir()?;
        let input = workspace.path().join("input.sol");
        let output_dir = workspace.path().join("out");
        std::fs::create_dir_all(&output_dir)?;
        std::fs::write(&input, &program.source)?;

        let argv = fill_template(
            &self.compile_cmd,
            &[
                ("input", &input.to_string_lossy()),
                ("outdir", &output_dir.to_string_lossy()),
            ],
        );
        let result = run_with_timeout(command(&argv), self.timeout())?;
        let id = self.spec.id.clone();

        if result.timed_out {
            let outcome =
                CompileOutcome::failed(id, CompileStatus::Timeout, result.stderr, result.duration_ms);
            return Ok(CompileArtifacts { outcome, abi: None });
        }
        let outcome = match result.status {
            None => CompileOutcome::failed(id, CompileStatus::Crash, result.stderr, result.duration_ms),
            Some(0) => match find_bytecode(&output_dir, &result.stdout) {
                Some(bytecode) => {
                    let abi = find_abi(&output_dir);
                    let outcome =
                        CompileOutcome::success(id, bytecode, result.stderr, result.duration_ms);
                    return Ok(CompileArtifacts { outcome, abi });
                }
                None => CompileOutcome::failed(
                    id,
                    CompileStatus::Failure,
                    format!("{}\n(no bytecode artifact produced)", result.stderr),
                    result.duration_ms,
                ),
            },
            Some(code) => {
                // Rust toolchains exit 101 on panic; treat that as a crash.
                let status = if code == 101 && result.stderr.to_lowercase().contains("panic") {
                    CompileStatus::Crash
                } else {
                    CompileStatus::Failure
                };
                CompileOutcome::failed(id, status, result.stderr, result.duration_ms)
            }
        };
        Ok(CompileArtifacts { outcome, abi: None })
    }

    fn execute(
        &self,
        program: &SeedProgram,
        artifacts: &CompileArtifacts,
    ) -> Result<ExecOutcome, HarnessError> {
        let workspace = tempfile::tempdir()?;
        let input = workspace.path().join("input.sol");
        std::fs::write(&input, &program.source)?;
        // Executors differ in what they consume: EVM-style runners take the
        // compiled bytecode, source-level harnesses re-read the file.
        let bytecode_or_source = match &artifacts.outcome.bytecode {
            Some(bytecode) => {
                let path = workspace.path().join("bytecode.bin");
                std::fs::write(&path, hex::encode(bytecode))?;
                path
            }
            None => input.clone(),
        };
        let entry = program.entry.clone().unwrap_or_else(|| crate::types::EntryPoint {
            contract: String::new(),
            function: String::new(),
        });

        let argv = fill_template(
            &self.execute_cmd,
            &[
                ("input", &input.to_string_lossy()),
                ("bytecode_or_source", &bytecode_or_source.to_string_lossy()),
                ("contract", &entry.contract),
                ("function", &entry.function),
            ],
        );
        let result = run_with_timeout(command(&argv), self.timeout())?;
        let id = self.spec.id.clone();

        if result.timed_out {
            return Ok(ExecOutcome::failed(id, ExecStatus::Timeout, result.stderr, result.duration_ms));
        }
        Ok(match result.status {
            Some(0) => {
                let raw = parse_output_payload(&result.stdout);
                ExecOutcome::success(id, raw, result.stderr, result.duration_ms)
            }
            _ => {
                let text = format!("{}{}", String::from_utf8_lossy(&result.stdout), result.stderr);
                let status = if text.to_lowercase().contains("revert") {
                    ExecStatus::Revert
                } else {
                    ExecStatus::Failure
                };
                ExecOutcome::failed(id, status, result.stderr, result.duration_ms)
            }
        })
    }
}

fn command(argv: &[String]) -> Command {
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..]);
    cmd
}

fn fill_template(template: &[String], vars: &[(&str, &str)]) -> Vec<String> {
    template
        .iter()
        .map(|arg| {
            let mut filled = arg.clone();
            for (key, value) in vars {
                filled = filled.replace(&format!("{{{key}}}"), value);
            }
            filled
        })
        .collect()
}

/// Locates compiled bytecode: an artifact file in the output directory
/// (hex text for `.bin`, raw bytes otherwise), falling back to a hex blob
/// on stdout (solc prints there without `-o`).
fn find_bytecode(output_dir: &Path, stdout: &[u8]) -> Option<Vec<u8>> {
    let mut entries: Vec<_> = walkdir::WalkDir::new(output_dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .collect();
    entries.sort();
    for preferred_ext in ["bin", "polkavm", "contract", "wasm", "so"] {
        for path in &entries {
            if path.extension().is_some_and(|e| e == preferred_ext) {
                let data = std::fs::read(path).ok()?;
                let bytecode = if preferred_ext == "bin" {
                    decode_hex_text(&data)?
                } else {
                    data
                };
                if !bytecode.is_empty() {
                    return Some(bytecode);
                }
            }
        }
    }
    let text = String::from_utf8_lossy(stdout);
    text.lines()
        .rev()
        .map(str::trim)
        .filter_map(|l| {
            let l = l.strip_prefix("0x").unwrap_or(l);
            (!l.is_empty()).then(|| hex::decode(l).ok()).flatten()
        })
        .next()
}

fn decode_hex_text(data: &[u8]) -> Option<Vec<u8>> {
    let text = String::from_utf8_lossy(data);
    let cleaned: String = text.split_whitespace().collect();
    let cleaned = cleaned.strip_prefix("0x").unwrap_or(&cleaned);
    hex::decode(cleaned).ok()
}

fn find_abi(output_dir: &Path) -> Option<serde_json::Value> {
    let mut entries: Vec<_> = walkdir::WalkDir::new(output_dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .collect();
    entries.sort();
    for path in entries {
        let is_abi = path.extension().is_some_and(|e| e == "abi" || e == "json");
        if !is_abi {
            continue;
        }
        let Ok(text) = std::fs::read_to_string(&path) else { continue };
        let Ok(value) = serde_json::from_str::<serde_json::Value>(&text) else { continue };
        if value.is_array() {
            return Some(value);
        }
        if let Some(abi) = value.get("abi") {
            return Some(abi.clone());
        }
    }
    None
}

/// Executor stdout is expected to be a hex payload; fall back to the raw
/// bytes when it isn't.
fn parse_output_payload(stdout: &[u8]) -> Vec<u8> {
    let text = String::from_utf8_lossy(stdout);
    let trimmed = text.trim();
    let candidate = trimmed.strip_prefix("0x").unwrap_or(trimmed);
    match hex::decode(candidate) {
        Ok(bytes) => bytes,
        Err(_) => trimmed.as_bytes().to_vec(),
    }
}

/// Kills the child and, on unix, its entire process group.
fn kill_process_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    unsafe {
        // Negative pid addresses the process group created at spawn time.
        libc::kill(-(child.id() as i32), libc::SIGKILL);
    }
    let _ = child.kill();
}

#[derive(Debug)]
pub(crate) struct CommandResult {
    pub status: Option<i32>,
    pub stdout: Vec<u8>,
    pub stderr: String,
    pub timed_out: bool,
    pub duration_ms: u64,
}

/// Runs a command, killing it when `timeout` expires. Output pipes are
/// drained on separate threads so a chatty child can't deadlock the wait.
pub(crate) fn run_with_timeout(
    mut cmd: Command,
    timeout: Duration,
) -> Result<CommandResult, HarnessError> {
    let start = Instant::now();
    cmd.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        // Own process group, so a timeout kill also reaches grandchildren
        // (e.g. a wrapper script's compiler invocation) that would otherwise
        // keep our output pipes open and stall the reader threads.
        cmd.process_group(0);
    }
    let description = format!("{cmd:?}");
    let mut child = cmd
        .spawn()
        .map_err(|source| HarnessError::Spawn { cmd: description, source })?;

    let mut stdout_pipe = child.stdout.take().expect("stdout piped");
    let mut stderr_pipe = child.stderr.take().expect("stderr piped");
    let stdout_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stdout_pipe.read_to_end(&mut buf);
        buf
    });
    let stderr_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr_pipe.read_to_end(&mut buf);
        buf
    });

    let mut timed_out = false;
    let status = loop {
        match child.try_wait()? {
            Some(status) => break Some(status),
            None if start.elapsed() >= timeout => {
                kill_process_tree(&mut child);
                let _ = child.wait();
                timed_out = true;
                break None;
            }
            None => std::thread::sleep(Duration::from_millis(5)),
        }
    };

    let stdout = stdout_reader.join().unwrap_or_default();
    let stderr = stderr_reader.join().unwrap_or_default();
    Ok(CommandResult {
        status: status.and_then(|s| s.code()),
        stdout,
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
        timed_out,
        duration_ms: start.elapsed().as_millis() as u64,
    })
}
