//! Per-stage manifests: the config hash a stage ran with, the hashes of the upstream files
//! it read and of the files it wrote. Paths are relative to the output directory so that
//! two runs of the same config produce identical manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::sha256_hex;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Stage-specific facts later stages or readers need.
    #[serde(default)]
    pub summary: Value,
}

pub fn hash_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// The output directory of one pipeline run.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    pub force: bool,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, force: bool) -> Self {
        Self {
            root: root.into(),
            force,
        }
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    /// `<root>/<stage>/<file>`.
    pub fn path(&self, stage: &str, file: &str) -> PathBuf {
        self.stage_dir(stage).join(file)
    }

    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.path(stage, MANIFEST_FILE)
    }

    pub fn read_manifest(&self, stage: &str) -> Result<Manifest, CliError> {
        let path = self.manifest_path(stage);
        let text = std::fs::read_to_string(&path).map_err(|_| CliError::Upstream(format!("missing {}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Upstream(format!("unreadable {}: {e}", path.display())))
    }

    /// Checks that `stage` ran with `config_hash` and that its outputs are present and
    /// unmodified. Returns the output hashes keyed by path relative to the root, for the
    /// caller to record as inputs. Stale or modified artifacts are refused unless forced.
    pub fn verify_upstream(&self, stage: &str, config_hash: &str) -> anyhow::Result<(Manifest, BTreeMap<String, String>)> {
        let manifest = self.read_manifest(stage)?;
        if manifest.config_hash != config_hash && !self.force {
            return Err(CliError::Upstream(format!(
                "{} was produced with a different config; rerun the {stage} stage or pass --force",
                self.manifest_path(stage).display()
            ))
            .into());
        }
        let mut inputs = BTreeMap::new();
        for (file, want) in &manifest.outputs {
            let path = self.path(stage, file);
            if !path.exists() {
                return Err(CliError::Upstream(format!("missing {}", path.display())).into());
            }
            let got = hash_file(&path)?;
            if &got != want && !self.force {
                return Err(CliError::Upstream(format!(
                    "{} does not match its manifest hash; rerun the {stage} stage or pass --force",
                    path.display()
                ))
                .into());
            }
            inputs.insert(format!("{stage}/{file}"), got);
        }
        Ok((manifest, inputs))
    }

    /// True when `stage` already ran with this config and these inputs and its outputs
    /// are intact. Always false when forced.
    pub fn up_to_date(&self, stage: &str, config_hash: &str, inputs: &BTreeMap<String, String>) -> bool {
        if self.force {
            return false;
        }
        let Ok(m) = self.read_manifest(stage) else {
            return false;
        };
        m.config_hash == config_hash
            && &m.inputs == inputs
            && m.outputs
                .iter()
                .all(|(file, want)| hash_file(&self.path(stage, file)).is_ok_and(|got| &got == want))
    }

    /// Hashes `outputs` (file names inside the stage directory) and writes the manifest.
    pub fn write_manifest(
        &self,
        stage: &str,
        config_hash: &str,
        inputs: BTreeMap<String, String>,
        outputs: &[String],
        summary: Value,
    ) -> anyhow::Result<Manifest> {
        let mut hashed = BTreeMap::new();
        for file in outputs {
            hashed.insert(file.clone(), hash_file(&self.path(stage, file))?);
        }
        let manifest = Manifest {
            stage: stage.into(),
            config_hash: config_hash.into(),
            inputs,
            outputs: hashed,
            summary,
        };
        let path = self.manifest_path(stage);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }

    /// Creates an empty stage directory, removing what a previous run left there.
    pub fn fresh_stage_dir(&self, stage: &str) -> anyhow::Result<PathBuf> {
        let dir = self.stage_dir(stage);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}
