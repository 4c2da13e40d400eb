//! Run manifests: every artifact a command writes is listed with a content
//! checksum so reruns can be compared byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nlq_core::error::{Result, SimError};

/// One output file with its checksum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Summary of a completed command.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Checksum of the canonical serialized effective configuration.
    pub config_sha256: String,
    pub replay: bool,
    pub versions: BTreeMap<String, String>,
    pub artifacts: Vec<ArtifactEntry>,
    /// Wall-clock stage durations; omitted in replay mode so manifests are
    /// byte-stable across reruns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_s: Option<BTreeMap<String, f64>>,
}

/// Collects artifacts and timings while a command runs.
pub struct ManifestBuilder {
    out_dir: PathBuf,
    manifest: RunManifest,
    clock: Option<Instant>,
    stage: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

impl ManifestBuilder {
    pub fn new(command: &str, out_dir: &Path, config_canonical: &str, replay: bool) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("nlq".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("manifest_format".into(), "1".into());
        ManifestBuilder {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                command: command.into(),
                config_sha256: sha256_hex(config_canonical.as_bytes()),
                replay,
                versions,
                artifacts: Vec::new(),
                timings_s: if replay { None } else { Some(BTreeMap::new()) },
            },
            clock: None,
            stage: None,
        }
    }

    /// Starts (or switches) the named timing stage.
    pub fn stage(&mut self, name: &str) {
        self.finish_stage();
        self.stage = Some(name.to_string());
        self.clock = Some(Instant::now());
    }

    fn finish_stage(&mut self) {
        if let (Some(name), Some(start)) = (self.stage.take(), self.clock.take()) {
            if let Some(timings) = self.manifest.timings_s.as_mut() {
                timings.insert(name, start.elapsed().as_secs_f64());
            }
        }
    }

    /// Registers a file already written under the output directory.
    pub fn add_artifact(&mut self, name: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| {
            SimError::InvalidConfig(format!("artifact {} missing: {e}", path.display()))
        })?;
        self.manifest.artifacts.push(ArtifactEntry {
            file: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Writes `manifest_<command>.json` and returns the finished manifest.
    pub fn write(mut self) -> Result<RunManifest> {
        self.finish_stage();
        self.manifest.artifacts.sort_by(|a, b| a.file.cmp(&b.file));
        let name = format!("manifest_{}.json", self.manifest.command.replace('-', "_"));
        let path = self.out_dir.join(name);
        let mut text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| SimError::InvalidConfig(format!("manifest serialization failed: {e}")))?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(self.manifest)
    }
}
