//! Run manifests: every subcommand records its resolved configuration and
//! seed before long work begins, then stamps the end time on completion.
//! Re-running with the recorded config and seed reproduces the run.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    pub seed: Option<u64>,
    /// Every default materialized.
    pub config: serde_json::Value,
    pub started_unix_ms: u128,
    pub finished_unix_ms: Option<u128>,
    pub outputs: Vec<String>,
    #[serde(skip)]
    path: PathBuf,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    /// Writes the manifest immediately; call [`RunManifest::finish`] after
    /// the work completes.
    pub fn begin(
        path: &Path,
        command: &str,
        seed: Option<u64>,
        config: serde_json::Value,
        outputs: Vec<String>,
    ) -> std::io::Result<Self> {
        let manifest = Self {
            command: command.to_string(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            started_unix_ms: now_ms(),
            finished_unix_ms: None,
            outputs,
            path: path.to_path_buf(),
        };
        manifest.write()?;
        Ok(manifest)
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.finished_unix_ms = Some(now_ms());
        self.write()
    }

    fn write(&self) -> std::io::Result<()> {
        if let Some(parent) = self.path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(
            &self.path,
            serde_json::to_string_pretty(self).expect("manifest serializes"),
        )
    }
}
