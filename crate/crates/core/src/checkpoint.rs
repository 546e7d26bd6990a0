//! Versioned checkpoint container.
//!
//! Layout: a plain-text manifest, a `payload` marker line, then the numeric
//! payload as little-endian `f64`s (parameters, Adam first moments, Adam
//! second moments). The manifest records the payload length and its SHA-256.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{AdamState, ParamSegment, ParameterSet};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "mappo-checkpoint";
const PAYLOAD_MARKER: &[u8] = b"\npayload\n";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub seed: u64,
    pub iteration: u64,
    pub env_steps: u64,
    pub model_steps: u64,
    pub params: ParameterSet,
    pub adam: AdamState,
    /// Per-worker seeds of the rollout streams the next iteration starts from.
    pub next_stream_seeds: Vec<u64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.params.parameter_count();
        let mut payload = Vec::with_capacity(3 * n * 8);
        for array in [&self.params.values, &self.adam.m, &self.adam.v] {
            for v in array.iter() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = hex::encode(Sha256::digest(&payload));

        let mut m = String::new();
        let _ = writeln!(m, "{MAGIC}");
        let _ = writeln!(m, "version {FORMAT_VERSION}");
        let _ = writeln!(m, "seed {}", self.seed);
        let _ = writeln!(m, "iteration {}", self.iteration);
        let _ = writeln!(m, "env_steps {}", self.env_steps);
        let _ = writeln!(m, "model_steps {}", self.model_steps);
        let _ = writeln!(m, "adam_step {}", self.adam.step);
        let seeds: Vec<String> = self.next_stream_seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(m, "stream_seeds {}", seeds.join(","));
        let _ = writeln!(m, "parameter_count {n}");
        for s in &self.params.segments {
            let _ = writeln!(m, "segment {} {} {} {}", s.name, s.offset, s.rows, s.cols);
        }
        for line in self.config.to_text().lines() {
            let _ = writeln!(m, "config {line}");
        }
        let _ = writeln!(m, "payload_bytes {}", payload.len());
        let _ = write!(m, "payload_sha256 {digest}");

        let mut bytes = m.into_bytes();
        bytes.extend_from_slice(PAYLOAD_MARKER);
        bytes.extend_from_slice(&payload);
        bytes
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let split = bytes
            .windows(PAYLOAD_MARKER.len())
            .position(|w| w == PAYLOAD_MARKER)
            .ok_or_else(|| fail("missing payload marker (truncated or corrupt)".into()))?;
        let manifest = std::str::from_utf8(&bytes[..split]).map_err(|_| fail("manifest is not UTF-8".into()))?;
        let payload = &bytes[split + PAYLOAD_MARKER.len()..];

        let mut lines = manifest.lines();
        if lines.next() != Some(MAGIC) {
            return Err(fail("not a checkpoint file".into()));
        }
        let mut fields = std::collections::HashMap::new();
        let mut segments = Vec::new();
        let mut config_text = String::new();
        for line in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "segment" => {
                    let parts: Vec<&str> = rest.split(' ').collect();
                    let num = |i: usize| -> Result<usize> {
                        parts
                            .get(i)
                            .and_then(|p| p.parse().ok())
                            .ok_or_else(|| fail(format!("bad segment line `{line}`")))
                    };
                    segments.push(ParamSegment {
                        name: parts[0].to_string(),
                        offset: num(1)?,
                        rows: num(2)?,
                        cols: num(3)?,
                    });
                }
                "config" => {
                    config_text.push_str(rest);
                    config_text.push('\n');
                }
                _ => {
                    fields.insert(key.to_string(), rest.to_string());
                }
            }
        }
        let field = |k: &str| fields.get(k).ok_or_else(|| fail(format!("missing `{k}`")));
        let int = |k: &str| -> Result<u64> { field(k)?.parse().map_err(|_| fail(format!("bad `{k}`"))) };

        let version = int("version")?;
        if version != FORMAT_VERSION as u64 {
            return Err(fail(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let expected_len = int("payload_bytes")? as usize;
        if payload.len() != expected_len {
            return Err(fail(format!("payload is {} bytes, manifest says {expected_len}", payload.len())));
        }
        if hex::encode(Sha256::digest(payload)) != *field("payload_sha256")? {
            return Err(fail("payload checksum mismatch".into()));
        }
        let n = int("parameter_count")? as usize;
        if payload.len() != 3 * n * 8 {
            return Err(fail(format!("payload holds {} bytes for {n} parameters", payload.len())));
        }
        let config = RunConfig::parse(&config_text).map_err(|e| fail(format!("embedded config: {e}")))?;
        let arch = config.architecture();
        if arch.segments() != segments.as_slice() {
            return Err(fail("segment map does not match the embedded config".into()));
        }

        let mut floats = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut take = || floats.by_ref().take(n).collect::<Vec<f64>>();
        let values = take();
        let m = take();
        let v = take();

        let stream_text = field("stream_seeds")?;
        let next_stream_seeds = if stream_text.is_empty() {
            Vec::new()
        } else {
            stream_text
                .split(',')
                .map(|s| s.parse().map_err(|_| fail("bad `stream_seeds`".into())))
                .collect::<Result<_>>()?
        };

        Ok(Checkpoint {
            config,
            seed: int("seed")?,
            iteration: int("iteration")?,
            env_steps: int("env_steps")?,
            model_steps: int("model_steps")?,
            params: ParameterSet { values, segments },
            adam: AdamState {
                m,
                v,
                step: int("adam_step")?,
            },
            next_stream_seeds,
        })
    }

    /// Writes through a temporary file and renames, so a crash never leaves a partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    checkpoint.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
