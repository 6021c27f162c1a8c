use super::{CompletionRequest, KnowledgeSource, SharedSource};
use crate::error::SourceError;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

/// A fenced block the tool loop may execute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBlock {
    pub language: String,
    pub code: String,
}

const PYTHON_TAGS: &[&str] = &["python", "python3", "py"];
const SHELL_TAGS: &[&str] = &["bash", "sh", "shell", "zsh"];

/// First fenced block tagged with an executable language. Blocks tagged
/// otherwise (or untagged) are prose and are skipped.
pub fn extract_code_block(text: &str) -> Option<CodeBlock> {
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let Some(tag) = line.trim_start().strip_prefix("```") else { continue };
        let language = tag.trim().to_ascii_lowercase();
        let mut body = Vec::new();
        let mut closed = false;
        for inner in lines.by_ref() {
            if inner.trim_start().starts_with("```") {
                closed = true;
                break;
            }
            body.push(inner);
        }
        let executable = PYTHON_TAGS.contains(&language.as_str()) || SHELL_TAGS.contains(&language.as_str());
        if closed && executable {
            return Some(CodeBlock { language, code: body.join("\n") });
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxConfig {
    pub python: String,
    pub wall_clock_ms: u64,
    pub memory_bytes: u64,
    /// Run the child in fresh user and network namespaces. If the kernel
    /// refuses, execution is denied rather than run with network access.
    pub isolate_network: bool,
    /// Captured bytes per stream. Excess is dropped.
    pub max_output_bytes: usize,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            python: "python3".into(),
            wall_clock_ms: 10_000,
            memory_bytes: 256 * 1024 * 1024,
            isolate_network: true,
            max_output_bytes: 64 * 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandboxOutput {
    pub stdout: String,
    pub stderr: String,
    pub exit_code: Option<i32>,
}

impl SandboxOutput {
    /// Text fed back to the model.
    pub fn render(&self) -> String {
        let mut out = self.stdout.trim_end().to_string();
        if !self.stderr.trim().is_empty() {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str("[stderr]\n");
            out.push_str(self.stderr.trim_end());
        }
        out
    }
}

/// Runs a python block in a throwaway directory with a cleared environment,
/// an address-space cap, a CPU cap and a wall-clock deadline.
pub fn run_sandboxed(block: &CodeBlock, config: &SandboxConfig) -> Result<SandboxOutput, SourceError> {
    if !PYTHON_TAGS.contains(&block.language.as_str()) {
        return Err(SourceError::SandboxDenied(format!("language {:?} is not permitted", block.language)));
    }
    let dir = tempfile::tempdir().map_err(|e| SourceError::SandboxDenied(format!("tempdir: {e}")))?;
    let script = dir.path().join("main.py");
    std::fs::write(&script, &block.code).map_err(|e| SourceError::SandboxDenied(format!("write script: {e}")))?;

    let mut cmd = Command::new(&config.python);
    cmd.arg("-I")
        .arg(&script)
        .current_dir(dir.path())
        .env_clear()
        .env("PATH", "/usr/bin:/bin")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    confine(&mut cmd, config);

    let mut child = cmd.spawn().map_err(|e| SourceError::SandboxDenied(format!("spawn: {e}")))?;
    let cap = config.max_output_bytes;
    let stdout = child.stdout.take().map(|s| drain(s, cap));
    let stderr = child.stderr.take().map(|s| drain(s, cap));

    let deadline = Instant::now() + Duration::from_millis(config.wall_clock_ms);
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                child.kill().ok();
                child.wait().ok();
                return Err(SourceError::SandboxTimeout);
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(SourceError::SandboxDenied(format!("wait: {e}"))),
        }
    };
    let join = |h: Option<std::thread::JoinHandle<String>>| h.map(|h| h.join().unwrap_or_default()).unwrap_or_default();
    let out = SandboxOutput { stdout: join(stdout), stderr: join(stderr), exit_code: status.code() };
    if killed_by_cpu_limit(&status) {
        return Err(SourceError::SandboxTimeout);
    }
    Ok(out)
}

fn drain<R: Read + Send + 'static>(mut r: R, cap: usize) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        while let Ok(n) = r.read(&mut buf) {
            if n == 0 {
                break;
            }
            let room = cap.saturating_sub(kept.len());
            kept.extend_from_slice(&buf[..n.min(room)]);
        }
        String::from_utf8_lossy(&kept).into_owned()
    })
}

#[cfg(unix)]
fn confine(cmd: &mut Command, config: &SandboxConfig) {
    use std::os::unix::process::CommandExt;
    let mem = config.memory_bytes as libc::rlim_t;
    let cpu = (config.wall_clock_ms / 1000 + 1) as libc::rlim_t;
    let isolate = config.isolate_network;
    // SAFETY: the closure only issues async-signal-safe syscalls.
    unsafe {
        cmd.pre_exec(move || {
            let set = |res, v: libc::rlim_t| {
                let lim = libc::rlimit { rlim_cur: v, rlim_max: v };
                if libc::setrlimit(res, &lim) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
                Ok(())
            };
            set(libc::RLIMIT_AS, mem)?;
            set(libc::RLIMIT_CPU, cpu)?;
            if isolate && libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET) != 0 {
                return Err(std::io::Error::last_os_error());
            }
            Ok(())
        });
    }
}

#[cfg(not(unix))]
fn confine(_cmd: &mut Command, _config: &SandboxConfig) {}

#[cfg(unix)]
fn killed_by_cpu_limit(status: &std::process::ExitStatus) -> bool {
    use std::os::unix::process::ExitStatusExt;
    matches!(status.signal(), Some(libc::SIGXCPU) | Some(libc::SIGKILL))
}

#[cfg(not(unix))]
fn killed_by_cpu_limit(_status: &std::process::ExitStatus) -> bool {
    false
}

/// Wraps a source in a bounded execute-and-continue loop.
///
/// Each round the model's reply is scanned for one executable block. If
/// found (and rounds remain) it is run and its output appended under a
/// `[Tool Output]` marker before the next call. The last reply is returned.
pub struct ToolAugmentedSource {
    role: String,
    inner: SharedSource,
    sandbox: SandboxConfig,
    max_rounds: u32,
    executions: AtomicU64,
}

impl ToolAugmentedSource {
    pub const DEFAULT_ROUNDS: u32 = 4;

    pub fn new(role: impl Into<String>, inner: SharedSource, sandbox: SandboxConfig) -> Self {
        Self { role: role.into(), inner, sandbox, max_rounds: Self::DEFAULT_ROUNDS, executions: AtomicU64::new(0) }
    }

    pub fn with_max_rounds(mut self, rounds: u32) -> Self {
        self.max_rounds = rounds.max(1);
        self
    }

    pub fn executions(&self) -> u64 {
        self.executions.load(Ordering::SeqCst)
    }
}

impl KnowledgeSource for ToolAugmentedSource {
    fn complete(&self, request: &CompletionRequest) -> Result<String, SourceError> {
        let mut transcript = request.prompt.clone();
        for round in 0..self.max_rounds {
            let call = CompletionRequest::new(
                transcript.clone(),
                request.temperature,
                format!("{}/tool{round}", request.rng_tag),
            );
            let reply = self.inner.complete(&call)?;
            let block = match extract_code_block(&reply) {
                Some(b) if round + 1 < self.max_rounds => b,
                _ => return Ok(reply),
            };
            self.executions.fetch_add(1, Ordering::SeqCst);
            let output = run_sandboxed(&block, &self.sandbox)?;
            transcript = format!("{transcript}\n\n{reply}\n\n[Tool Output]\n{}\n", output.render());
        }
        unreachable!("the final round always returns")
    }

    fn role(&self) -> &str {
        &self.role
    }

    fn cost_weight(&self) -> f64 {
        self.inner.cost_weight()
    }
}

impl std::fmt::Debug for ToolAugmentedSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolAugmentedSource")
            .field("role", &self.role)
            .field("inner", &self.inner.role())
            .field("max_rounds", &self.max_rounds)
            .field("executions", &self.executions())
            .finish()
    }
}
