//! Run-directory artifacts: CSV tables, JSON documents, binary ensembles and the manifest.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pmqds::mc::{CenteringRecord, EnsembleKind, PathEnsemble};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST: &str = "manifest.json";
/// Wall-clock data lives apart from the numeric artifacts.
pub const TIMINGS: &str = "timings.json";

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    pub fn write_csv<R, I>(&self, rel: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let mut w = csv::Writer::from_path(self.path(rel)?)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(rel)?, text)?;
        Ok(())
    }

    /// `<stem>.json` header plus `<stem>.bin` with little-endian `f64` values, row-major by path.
    pub fn write_ensemble(&self, stem: &str, e: &PathEnsemble, config_hash: &str) -> Result<()> {
        let mut bytes = Vec::with_capacity(e.values.len() * 8);
        for v in &e.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let header = EnsembleHeader::from_ensemble(e, config_hash, hex::encode(Sha256::digest(&bytes)));
        let mut w = BufWriter::new(fs::File::create(self.path(&format!("{stem}.bin"))?)?);
        w.write_all(&bytes)?;
        w.flush()?;
        self.write_json(&format!("{stem}.json"), &header)
    }

    /// `(path_id, t, value)` rows.
    pub fn write_ensemble_csv(&self, rel: &str, e: &PathEnsemble) -> Result<()> {
        let rows = (0..e.paths).flat_map(|p| {
            e.grid
                .iter()
                .zip(e.path(p))
                .map(move |(t, v)| vec![p.to_string(), t.to_string(), v.to_string()])
        });
        self.write_csv(rel, &["path_id", "t", "value"], rows)
    }

    /// Hashes every artifact except the manifest and timings.
    pub fn write_manifest(&self, command: &str, config: &ExperimentConfig) -> Result<()> {
        let mut files = Vec::new();
        collect_files(&self.root, &self.root, &mut files)?;
        files.sort();
        let artifacts: Vec<_> = files
            .iter()
            .filter(|f| f.as_str() != MANIFEST && f.as_str() != TIMINGS)
            .map(|f| -> Result<_> {
                let bytes = fs::read(self.root.join(f))?;
                Ok(json!({"path": f, "bytes": bytes.len(), "sha256": hex::encode(Sha256::digest(&bytes))}))
            })
            .collect::<Result<_>>()?;
        let mut canonical = config.clone();
        canonical.threads = None;
        canonical.output = PathBuf::new();
        let manifest = json!({
            "command": command,
            "config_hash": config.hash(),
            "seed": config.seed,
            "versions": {"pmqds": env!("CARGO_PKG_VERSION")},
            "config": canonical,
            "artifacts": artifacts,
        });
        self.write_json(MANIFEST, &manifest)
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root)?.to_string_lossy().replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleHeader {
    pub kind: String,
    pub n: usize,
    pub paths: usize,
    pub grid: Vec<f64>,
    pub seed: u64,
    pub centering_mode: String,
    pub centering_measure: String,
    pub centering_bins: usize,
    pub centering_curve: Vec<f64>,
    pub config_hash: String,
    pub data_sha256: String,
}

impl EnsembleHeader {
    fn from_ensemble(e: &PathEnsemble, config_hash: &str, data_sha256: String) -> Self {
        Self {
            kind: e.kind.as_str().into(),
            n: e.level,
            paths: e.paths,
            grid: e.grid.clone(),
            seed: e.seed,
            centering_mode: e.centering.mode.clone(),
            centering_measure: e.centering.measure.clone(),
            centering_bins: e.centering.bins,
            centering_curve: e.centering.curve.clone(),
            config_hash: config_hash.into(),
            data_sha256,
        }
    }
}

/// Reads an ensemble written by [`RunDir::write_ensemble`], checking its checksum.
pub fn read_ensemble(stem: &Path) -> Result<(EnsembleHeader, PathEnsemble)> {
    let header: EnsembleHeader = serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
    let mut bytes = Vec::new();
    fs::File::open(stem.with_extension("bin"))?.read_to_end(&mut bytes)?;
    if hex::encode(Sha256::digest(&bytes)) != header.data_sha256 {
        bail!("checksum mismatch for {}", stem.display());
    }
    if bytes.len() != header.paths * header.grid.len() * 8 {
        bail!(
            "{} has {} bytes, expected {}",
            stem.display(),
            bytes.len(),
            header.paths * header.grid.len() * 8
        );
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let kind = match header.kind.as_str() {
        "birkhoff" => EnsembleKind::Birkhoff,
        "fluctuation" => EnsembleKind::Fluctuation,
        "limit" => EnsembleKind::Limit,
        other => bail!("unknown ensemble kind {other}"),
    };
    let e = PathEnsemble {
        kind,
        level: header.n,
        paths: header.paths,
        grid: header.grid.clone(),
        values,
        seed: header.seed,
        centering: CenteringRecord {
            mode: header.centering_mode.clone(),
            measure: header.centering_measure.clone(),
            bins: header.centering_bins,
            curve: header.centering_curve.clone(),
        },
    };
    Ok((header, e))
}

/// Stable per-purpose seed derived from the master seed.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensemble_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path()).unwrap();
        let e = PathEnsemble {
            kind: EnsembleKind::Limit,
            level: 0,
            paths: 2,
            grid: vec![0.0, 0.5, 1.0],
            values: vec![0.0, 0.1, -0.2, 0.0, 1e-300, 3.5],
            seed: 9,
            centering: CenteringRecord {
                mode: "none".into(),
                measure: "none".into(),
                bins: 0,
                curve: vec![0.0; 3],
            },
        };
        run.write_ensemble("ens/limit", &e, "abc").unwrap();
        let (h, back) = read_ensemble(&dir.path().join("ens/limit")).unwrap();
        assert_eq!(back, e);
        assert_eq!(h.config_hash, "abc");
        fs::write(dir.path().join("ens/limit.bin"), [0u8; 48]).unwrap();
        assert!(read_ensemble(&dir.path().join("ens/limit")).is_err());
    }

    #[test]
    fn manifest_lists_artifacts_but_not_timings() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path()).unwrap();
        run.write_csv("a.csv", &["x"], vec![vec!["1".to_string()]]).unwrap();
        run.write_json(TIMINGS, &json!({"total": 1.0})).unwrap();
        run.write_manifest("test", &ExperimentConfig::default()).unwrap();
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
        let paths: Vec<&str> = m["artifacts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| a["path"].as_str().unwrap())
            .collect();
        assert_eq!(paths, vec!["a.csv"]);
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
    }
}
