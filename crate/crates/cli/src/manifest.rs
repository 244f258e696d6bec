//! Per-command manifests and the upstream hash chain.
//!
//! Each command records the sha256 of every file it read and wrote. Before a
//! command reads an artifact it checks that the file still matches what its
//! producer recorded, and that the producer's own inputs are unchanged.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA: &str = "eigencl-manifest/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// File name (for artifacts in the output directory) or path, to sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub created_unix: u64,
}

impl Manifest {
    pub fn path(out: &Path, command: &str) -> PathBuf {
        out.join(format!("{command}.manifest.json"))
    }

    pub fn load(path: &Path) -> anyhow::Result<Manifest> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if m.schema != SCHEMA {
            anyhow::bail!(
                "{}: unsupported manifest schema '{}'",
                path.display(),
                m.schema
            );
        }
        Ok(m)
    }
}

/// An artifact no longer matches the manifest chain.
#[derive(Debug)]
pub struct StaleInput(pub String);

impl fmt::Display for StaleInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}; rerun upstream or pass --force", self.0)
    }
}

impl std::error::Error for StaleInput {}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).map_err(|e| eigencl::Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// The command that writes each artifact.
pub fn producer(artifact: &str) -> Option<&'static str> {
    Some(match artifact {
        "dataset.csv" => "synth",
        "weights.csv" | "spectrum.csv" => "eigen",
        "model.json" | "history.csv" => "train",
        "embeddings.csv" => "embed",
        "clusters.csv" | "cluster_model.json" | "validity.json" | "elbow.csv" => "cluster",
        "stages.csv" | "thresholds.json" | "profiles.csv" | "stats.json" => "stage",
        "detection.csv" | "lead_time.json" | "lead_histogram.csv" => "detect",
        "classification.json" => "classify",
        "transfer.json" | "transfer_dataset.csv" | "transfer_detection.csv" => "transfer",
        "grid.csv" | "grid.json" => "gridsearch",
        "projection.csv" | "report.json" => "report",
        _ => return None,
    })
}

/// Records what one command reads and writes, then writes its manifest.
pub struct Step<'a> {
    command: &'static str,
    out: &'a Path,
    force: bool,
    seed: u64,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl<'a> Step<'a> {
    pub fn new(
        command: &'static str,
        out: &'a Path,
        force: bool,
        seed: u64,
        config: serde_json::Value,
    ) -> Self {
        Step {
            command,
            out,
            force,
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    /// Resolves an artifact in the output directory, verifying it against
    /// its producer's manifest.
    pub fn artifact(&mut self, name: &str) -> anyhow::Result<PathBuf> {
        let path = self.out.join(name);
        if !path.exists() {
            let hint = producer(name)
                .map(|p| format!("; run `{p}` first"))
                .unwrap_or_default();
            anyhow::bail!("missing input {}{hint}", path.display());
        }
        let hash = sha256_file(&path)?;
        if let Some(p) = producer(name) {
            self.check_upstream(name, &hash, p)?;
        }
        self.inputs.insert(name.to_string(), hash);
        Ok(path)
    }

    /// Like [`Step::artifact`] but `None` when the file was never produced.
    pub fn optional_artifact(&mut self, name: &str) -> anyhow::Result<Option<PathBuf>> {
        if self.out.join(name).exists() {
            self.artifact(name).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Records a file from outside the artifact chain.
    pub fn external(&mut self, path: &Path) -> anyhow::Result<PathBuf> {
        let hash =
            sha256_file(path).with_context(|| format!("reading input {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(path.to_path_buf())
    }

    fn check_upstream(&self, name: &str, hash: &str, upstream: &str) -> anyhow::Result<()> {
        let mpath = Manifest::path(self.out, upstream);
        if !mpath.exists() {
            log::warn!("{name} has no {upstream} manifest; its provenance is unchecked");
            return Ok(());
        }
        let m = Manifest::load(&mpath)?;
        let mut problems = Vec::new();
        match m.outputs.get(name) {
            Some(h) if h == hash => {}
            Some(_) => problems.push(format!("{name} was modified after `{upstream}` wrote it")),
            None => problems.push(format!("`{upstream}` manifest does not list {name}")),
        }
        // Artifact keys are bare file names; anything else was recorded as a path.
        for (input, recorded) in &m.inputs {
            let p = if producer(input).is_some() {
                self.out.join(input)
            } else {
                PathBuf::from(input)
            };
            match sha256_file(&p) {
                Ok(h) if &h == recorded => {}
                Ok(_) => problems.push(format!(
                    "{input} changed since `{upstream}` produced {name}"
                )),
                Err(_) => problems.push(format!("{input}, read by `{upstream}`, is gone")),
            }
        }
        if problems.is_empty() {
            return Ok(());
        }
        let msg = problems.join("; ");
        if self.force {
            log::warn!("{msg} (continuing because of --force)");
            Ok(())
        } else {
            Err(StaleInput(msg).into())
        }
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.out.join(name);
        std::fs::write(&path, bytes).map_err(|e| eigencl::Error::io(&path, e))?;
        self.outputs
            .insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    /// Lists a file written elsewhere under this step's outputs.
    pub fn record_output(&mut self, name: &str, hash: String) {
        self.outputs.insert(name.to_string(), hash);
    }

    pub fn finish(self) -> anyhow::Result<Manifest> {
        let m = Manifest {
            schema: SCHEMA.to_string(),
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        let path = Manifest::path(self.out, &m.command);
        let text = serde_json::to_string_pretty(&m)? + "\n";
        std::fs::write(&path, text).map_err(|e| eigencl::Error::io(&path, e))?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn chain_detects_modified_output() {
        let dir = tmp();
        let mut s = Step::new("eigen", dir.path(), false, 1, serde_json::Value::Null);
        s.write("weights.csv", b"a").unwrap();
        s.finish().unwrap();

        let mut t = Step::new("train", dir.path(), false, 1, serde_json::Value::Null);
        t.artifact("weights.csv").unwrap();

        std::fs::write(dir.path().join("weights.csv"), b"b").unwrap();
        let mut t = Step::new("train", dir.path(), false, 1, serde_json::Value::Null);
        let err = t.artifact("weights.csv").unwrap_err();
        assert!(err.to_string().contains("rerun upstream"), "{err}");

        let mut t = Step::new("train", dir.path(), true, 1, serde_json::Value::Null);
        t.artifact("weights.csv").unwrap();
    }

    #[test]
    fn chain_detects_modified_grandparent() {
        let dir = tmp();
        let mut s = Step::new("synth", dir.path(), false, 1, serde_json::Value::Null);
        s.write("dataset.csv", b"d").unwrap();
        s.finish().unwrap();
        let mut e = Step::new("eigen", dir.path(), false, 1, serde_json::Value::Null);
        e.artifact("dataset.csv").unwrap();
        e.write("weights.csv", b"w").unwrap();
        e.finish().unwrap();

        std::fs::write(dir.path().join("dataset.csv"), b"d2").unwrap();
        let mut t = Step::new("train", dir.path(), false, 1, serde_json::Value::Null);
        let err = t.artifact("weights.csv").unwrap_err().to_string();
        assert!(err.contains("dataset.csv changed"), "{err}");
    }

    #[test]
    fn missing_artifact_names_producer() {
        let dir = tmp();
        let mut t = Step::new("train", dir.path(), false, 1, serde_json::Value::Null);
        let err = format!("{:#}", t.artifact("weights.csv").unwrap_err());
        assert!(err.contains("run `eigen` first"), "{err}");
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tmp();
        let mut s = Step::new(
            "synth",
            dir.path(),
            false,
            9,
            serde_json::json!({"seed": 9}),
        );
        s.write("dataset.csv", b"x").unwrap();
        let m = s.finish().unwrap();
        assert_eq!(
            Manifest::load(&Manifest::path(dir.path(), "synth")).unwrap(),
            m
        );
        assert_eq!(m.outputs["dataset.csv"], hex::encode(Sha256::digest(b"x")));
    }
}
