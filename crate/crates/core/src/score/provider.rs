//! Metric providers: one image in, one scalar out.
//!
//! External providers speak JSON lines over standard streams. Each request
//! is `{"image_path": "..."}` and each reply is `{"value": <number>}` or
//! `{"error": "..."}`. The child process is kept alive between images and
//! restarted after a timeout or crash.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::Direction;
use crate::error::{Error, Result};
use crate::image::ImagePlane;

/// A deterministic no-reference metric.
pub trait MetricProvider: Send + Sync {
    fn name(&self) -> &str;
    fn direction(&self) -> Direction;
    fn evaluate(&self, image_path: &Path) -> Result<f64>;
}

/// Returns the same value for every image.
pub struct ConstantProvider {
    name: String,
    direction: Direction,
    value: f64,
}

impl ConstantProvider {
    pub fn new(name: &str, direction: Direction, value: f64) -> Self {
        Self { name: name.into(), direction, value }
    }
}

impl MetricProvider for ConstantProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn evaluate(&self, _: &Path) -> Result<f64> {
        Ok(self.value)
    }
}

/// Mean sample intensity scaled by `gain` and shifted by `offset`; a
/// cheap in-process stand-in for a learned metric.
pub struct MeanIntensityProvider {
    name: String,
    direction: Direction,
    gain: f64,
    offset: f64,
}

impl MeanIntensityProvider {
    pub fn new(name: &str, direction: Direction, gain: f64, offset: f64) -> Self {
        Self { name: name.into(), direction, gain, offset }
    }
}

impl MetricProvider for MeanIntensityProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn evaluate(&self, image_path: &Path) -> Result<f64> {
        let img = ImagePlane::load(image_path)?;
        let s = img.as_slice();
        let mean = s.iter().map(|&v| f64::from(v)).sum::<f64>() / s.len() as f64;
        Ok(self.offset + self.gain * mean)
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<String>,
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Runs an external program and talks to it line by line.
pub struct ProcessProvider {
    name: String,
    direction: Direction,
    command: Vec<String>,
    timeout: Duration,
    worker: Mutex<Option<Worker>>,
}

#[derive(Deserialize)]
struct Reply {
    value: Option<f64>,
    error: Option<String>,
}

impl ProcessProvider {
    pub fn new(name: &str, direction: Direction, command: Vec<String>, timeout: Duration) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::Config(format!("provider `{name}` has an empty command")));
        }
        Ok(Self {
            name: name.into(),
            direction,
            command,
            timeout,
            worker: Mutex::new(None),
        })
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Provider {
            provider: self.name.clone(),
            reason: reason.into(),
        }
    }

    fn spawn(&self) -> Result<Worker> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| self.fail(format!("cannot start `{}`: {e}", self.command[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, replies) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Worker { child, stdin, replies })
    }
}

impl MetricProvider for ProcessProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn evaluate(&self, image_path: &Path) -> Result<f64> {
        let mut guard = self.worker.lock().map_err(|_| self.fail("worker lock poisoned"))?;
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let worker = guard.as_mut().expect("just spawned");
        let request = serde_json::json!({ "image_path": image_path.to_string_lossy() });
        if writeln!(worker.stdin, "{request}").and_then(|_| worker.stdin.flush()).is_err() {
            *guard = None;
            return Err(self.fail("provider process closed its input"));
        }
        let line = match worker.replies.recv_timeout(self.timeout) {
            Ok(line) => line,
            Err(RecvTimeoutError::Timeout) => {
                *guard = None;
                return Err(self.fail(format!("no reply within {} ms", self.timeout.as_millis())));
            }
            Err(RecvTimeoutError::Disconnected) => {
                *guard = None;
                return Err(self.fail("provider process exited"));
            }
        };
        let reply: Reply = serde_json::from_str(&line).map_err(|e| self.fail(format!("bad reply `{line}`: {e}")))?;
        match (reply.value, reply.error) {
            (_, Some(err)) => Err(self.fail(err)),
            (Some(v), None) if v.is_finite() => Ok(v),
            (Some(v), None) => Err(self.fail(format!("non-finite value {v}"))),
            (None, None) => Err(self.fail(format!("reply `{line}` has no value"))),
        }
    }
}

/// Provider declaration as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    Constant {
        name: String,
        direction: Option<Direction>,
        value: f64,
    },
    MeanIntensity {
        name: String,
        direction: Option<Direction>,
        #[serde(default = "unit")]
        gain: f64,
        #[serde(default)]
        offset: f64,
    },
    Process {
        name: String,
        direction: Option<Direction>,
        command: Vec<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn unit() -> f64 {
    1.0
}

fn default_timeout_ms() -> u64 {
    60_000
}

impl ProviderConfig {
    fn name_and_direction(&self) -> (&str, Option<Direction>) {
        match self {
            ProviderConfig::Constant { name, direction, .. }
            | ProviderConfig::MeanIntensity { name, direction, .. }
            | ProviderConfig::Process { name, direction, .. } => (name, *direction),
        }
    }

    pub fn build(&self) -> Result<Box<dyn MetricProvider>> {
        let (name, dir) = self.name_and_direction();
        let direction = dir.or_else(|| Direction::of(name)).ok_or_else(|| {
            Error::Config(format!("provider `{name}` needs an explicit direction"))
        })?;
        Ok(match self {
            ProviderConfig::Constant { value, .. } => Box::new(ConstantProvider::new(name, direction, *value)),
            ProviderConfig::MeanIntensity { gain, offset, .. } => {
                Box::new(MeanIntensityProvider::new(name, direction, *gain, *offset))
            }
            ProviderConfig::Process { command, timeout_ms, .. } => Box::new(ProcessProvider::new(
                name,
                direction,
                command.clone(),
                Duration::from_millis(*timeout_ms),
            )?),
        })
    }

    /// Stub providers for the three challenge metrics, driven by mean
    /// intensity, for pipeline checks without the learned metrics.
    pub fn stubs() -> Vec<ProviderConfig> {
        vec![
            ProviderConfig::MeanIntensity { name: super::PI.into(), direction: None, gain: 4.0, offset: 2.0 },
            ProviderConfig::MeanIntensity { name: super::CLIPIQA.into(), direction: None, gain: 0.5, offset: 0.3 },
            ProviderConfig::MeanIntensity { name: super::MANIQA.into(), direction: None, gain: 0.3, offset: 0.2 },
        ]
    }
}
