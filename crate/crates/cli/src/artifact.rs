//! Output directory handling: fingerprinted CSV and JSON records, and the
//! stale-input guard applied whenever a stage reads upstream artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;
use crate::error::{CliError, CliResult};

/// Prefix of the first line of every CSV this tool writes.
pub const CSV_HASH_PREFIX: &str = "# config_sha256=";

/// Envelope around every stage result. Contains nothing time-dependent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record<T> {
    pub stage: String,
    pub tool_version: String,
    pub config_hash: String,
    /// Artifact file name → SHA-256 of the bytes read.
    pub inputs: BTreeMap<String, String>,
    /// Artifact file name → SHA-256 of the bytes written.
    pub outputs: BTreeMap<String, String>,
    /// Result field → unit.
    pub units: BTreeMap<String, String>,
    pub result: T,
}

pub struct Workspace {
    pub dir: PathBuf,
    pub config_hash: String,
    pub svg: bool,
}

impl Workspace {
    pub fn create(dir: &Path, config_hash: String, svg: bool) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Workspace { dir: dir.to_path_buf(), config_hash, svg })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> CliResult<String> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        Ok(sha256_hex(bytes))
    }

    /// Writes `body` (header line plus rows) behind the fingerprint line.
    pub fn write_csv(&self, name: &str, body: &str) -> CliResult<String> {
        let text = format!("{CSV_HASH_PREFIX}{}\n{body}", self.config_hash);
        self.write(name, text.as_bytes())
    }

    pub fn write_text(&self, name: &str, body: &str) -> CliResult<String> {
        self.write(name, body.as_bytes())
    }

    pub fn write_record<T: Serialize>(&self, name: &str, record: &Record<T>) -> CliResult<String> {
        let mut text = serde_json::to_string_pretty(record).expect("record serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Loads an upstream record, refusing it when missing or produced under
    /// a different configuration. Returns the record and the hash of its bytes.
    pub fn load_record<T: DeserializeOwned>(&self, name: &str, stage: &str) -> CliResult<(Record<T>, String)> {
        let p = self.path(name);
        let bytes = fs::read(&p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                CliError::stale(&p, format!("missing upstream artifact; run the `{stage}` stage first"))
            }
            _ => CliError::io(&p, e),
        })?;
        let record: Record<T> = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::stale(&p, format!("unreadable record: {e}")))?;
        if record.stage != stage {
            return Err(CliError::stale(&p, format!("expected a `{stage}` record, found `{}`", record.stage)));
        }
        if record.config_hash != self.config_hash {
            return Err(CliError::stale(
                &p,
                format!(
                    "written under config {} but the current config is {}; rerun `{stage}`",
                    short(&record.config_hash),
                    short(&self.config_hash)
                ),
            ));
        }
        Ok((record, sha256_hex(&bytes)))
    }

    /// Reads a CSV listed in `record.outputs`, checking its bytes and its
    /// fingerprint line. Returns the numeric rows below the header.
    pub fn load_csv<T>(&self, name: &str, record: &Record<T>) -> CliResult<(Vec<Vec<f64>>, String)> {
        let p = self.path(name);
        let bytes = fs::read(&p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::stale(&p, "missing upstream artifact"),
            _ => CliError::io(&p, e),
        })?;
        let hash = sha256_hex(&bytes);
        match record.outputs.get(name) {
            Some(h) if *h == hash => {}
            Some(_) => return Err(CliError::stale(&p, format!("contents differ from the `{}` record", record.stage))),
            None => return Err(CliError::stale(&p, format!("not listed in the `{}` record", record.stage))),
        }
        let text = String::from_utf8(bytes).map_err(|_| CliError::stale(&p, "not UTF-8"))?;
        let mut lines = text.lines();
        match lines.next().and_then(|l| l.strip_prefix(CSV_HASH_PREFIX)) {
            Some(h) if h == self.config_hash => {}
            _ => return Err(CliError::stale(&p, "fingerprint line does not match the current config")),
        }
        lines.next();
        let rows = lines
            .enumerate()
            .map(|(i, l)| {
                l.split(',')
                    .map(|f| f.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| CliError::stale(&p, format!("unparsable data on line {}", i + 3)))
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok((rows, hash))
    }

    /// Appends the stage's wall-clock time to `meta.json`, the only
    /// non-deterministic file in the directory.
    pub fn stamp(&self, stage: &str) -> CliResult<()> {
        let p = self.path("meta.json");
        let mut meta: BTreeMap<String, serde_json::Value> = fs::read(&p)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default();
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        meta.insert(
            stage.to_string(),
            serde_json::json!({ "finished_unix_s": now, "config_hash": self.config_hash }),
        );
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

pub fn units(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ws(dir: &Path, hash: &str) -> Workspace {
        Workspace::create(dir, hash.into(), false).unwrap()
    }

    fn record(hash: &str, outputs: BTreeMap<String, String>) -> Record<f64> {
        Record {
            stage: "simulate".into(),
            tool_version: "0".into(),
            config_hash: hash.into(),
            inputs: BTreeMap::new(),
            outputs,
            units: BTreeMap::new(),
            result: 1.5,
        }
    }

    #[test]
    fn csv_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let w = ws(dir.path(), "abc");
        let h = w.write_csv("x.csv", "a,b\n1,2\n3,4\n").unwrap();
        let rec = record("abc", [("x.csv".to_string(), h)].into());
        let (rows, _) = w.load_csv("x.csv", &rec).unwrap();
        assert_eq!(rows, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        fs::write(w.path("x.csv"), "# config_sha256=abc\na,b\n1,2\n").unwrap();
        assert_eq!(w.load_csv("x.csv", &rec).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn record_from_other_config_is_stale() {
        let dir = tempfile::tempdir().unwrap();
        ws(dir.path(), "old").write_record("r.json", &record("old", BTreeMap::new())).unwrap();
        let err = ws(dir.path(), "new").load_record::<f64>("r.json", "simulate").unwrap_err();
        assert_eq!(err.exit_code(), 4);
        let (r, _) = ws(dir.path(), "old").load_record::<f64>("r.json", "simulate").unwrap();
        assert_eq!(r.result, 1.5);
    }

    #[test]
    fn missing_upstream_is_stale() {
        let dir = tempfile::tempdir().unwrap();
        let err = ws(dir.path(), "h").load_record::<f64>("none.json", "synth").unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }
}
