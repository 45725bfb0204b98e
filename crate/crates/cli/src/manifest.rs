use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{execute, rerun_jobs, Artifacts, Job};
use crate::config::resolve;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

/// Everything needed to repeat a run, plus hashes of what it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub job: Job,
    pub seed: u64,
    /// Fully resolved scenario as TOML.
    pub scenario: String,
    /// SHA-256 of the forecast input file, if any.
    pub input_sha256: Option<String>,
    /// Artifact name to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn new(job: Job, scenario: String, seed: u64, artifacts: &Artifacts) -> Self {
        let input_sha256 = match &job {
            Job::Forecast { input } => std::fs::read(input).ok().map(|b| sha256_hex(&b)),
            _ => None,
        };
        let job = match job {
            Job::Forecast { input } => Job::Forecast {
                input: std::fs::canonicalize(&input).unwrap_or(input),
            },
            other => other,
        };
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            job,
            seed,
            scenario,
            input_sha256,
            artifacts: artifacts.iter().map(|(n, b)| (n.clone(), sha256_hex(b))).collect(),
        }
    }
}

pub fn write_run(out: &Path, artifacts: &Artifacts, manifest: &Manifest) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Internal(format!("writing to {}: {e}", out.display()));
    for (name, bytes) in artifacts {
        let path = out.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        std::fs::write(&path, bytes).map_err(io)?;
    }
    std::fs::create_dir_all(out).map_err(io)?;
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    std::fs::write(out.join(MANIFEST), text).map_err(io)
}

/// Repeats the run described by `path` into `out` and checks every artifact hash.
pub fn rerun(path: &Path, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let recorded: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let scenario = resolve(&recorded.scenario, &[])?;
    if scenario.seed != recorded.seed {
        return Err(CliError::Usage("manifest seed disagrees with its scenario".into()));
    }
    if let (Job::Forecast { input }, Some(expected)) = (&recorded.job, &recorded.input_sha256) {
        let bytes = std::fs::read(input).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", input.display())))?;
        if &sha256_hex(&bytes) != expected {
            return Err(CliError::Usage(format!("{} changed since the manifest was written", input.display())));
        }
    }
    let artifacts = execute(&recorded.job, &scenario, rerun_jobs())?;
    let fresh = Manifest::new(recorded.job.clone(), recorded.scenario.clone(), recorded.seed, &artifacts);
    write_run(out, &artifacts, &fresh)?;

    let mut mismatched = Vec::new();
    for (name, hash) in &recorded.artifacts {
        if fresh.artifacts.get(name) != Some(hash) {
            mismatched.push(name.clone());
        }
    }
    for name in fresh.artifacts.keys() {
        if !recorded.artifacts.contains_key(name) {
            mismatched.push(name.clone());
        }
    }
    if mismatched.is_empty() {
        println!("rerun reproduced all {} artifacts", recorded.artifacts.len());
        Ok(())
    } else {
        Err(CliError::Internal(format!("artifacts differ from the manifest: {}", mismatched.join(", "))))
    }
}
