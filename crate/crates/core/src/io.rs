//! File formats: CSV datasets, the versioned tree document, grow-config
//! TOML and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, RrtError};
use crate::grow::{GrowConfig, TauRule};
use crate::model::{Dataset, FittedTree, StoppingRule};

pub const TREE_SCHEMA: &str = "rrt.tree/1";
pub const MANIFEST_SCHEMA: &str = "rrt.manifest/1";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Parse a headered CSV; every column other than `response` is a
/// predictor. Errors carry 1-based data row numbers and column names.
pub fn parse_csv<R: Read>(reader: R, response: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let resp = headers.iter().position(|h| h == response).ok_or_else(|| {
        RrtError::Config(format!(
            "response column {response:?} not found; columns are {headers:?}"
        ))
    })?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != resp)
        .map(|(_, h)| h.clone())
        .collect();
    let mut columns = vec![Vec::new(); names.len()];
    let mut y = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| RrtError::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(RrtError::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut k = 0;
        for (j, field) in record.iter().enumerate() {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| RrtError::Parse {
                row,
                column: headers[j].clone(),
                message: format!("{field:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(RrtError::Parse {
                    row,
                    column: headers[j].clone(),
                    message: format!("{field:?} is not finite"),
                });
            }
            if j == resp {
                y.push(v);
            } else {
                columns[k].push(v);
                k += 1;
            }
        }
    }
    if y.is_empty() {
        return Err(RrtError::EmptyInput("CSV has no data rows".into()));
    }
    Dataset::new(columns, y, Some(names))
}

pub fn read_csv(path: &Path, response: &str) -> Result<Dataset> {
    parse_csv(fs::File::open(path)?, response)
}

/// The on-disk tree: schema tag, feature names and the full fitted tree
/// with its selection traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub schema: String,
    pub tool_version: String,
    pub feature_names: Vec<String>,
    /// File name of the manifest written alongside, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
    pub tree: FittedTree,
}

impl TreeDocument {
    pub fn new(tree: FittedTree, dataset: &Dataset) -> Self {
        TreeDocument {
            schema: TREE_SCHEMA.into(),
            tool_version: TOOL_VERSION.into(),
            feature_names: (0..dataset.p()).map(|j| dataset.feature_name(j)).collect(),
            manifest: None,
            tree,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        match raw.get("schema").and_then(|s| s.as_str()) {
            Some(TREE_SCHEMA) => {}
            Some(other) => {
                return Err(RrtError::Schema(format!(
                    "unsupported tree schema {other:?} (expected {TREE_SCHEMA:?})"
                )))
            }
            None => return Err(RrtError::Schema("tree document has no schema field".into())),
        }
        Ok(serde_json::from_value(raw)?)
    }

    /// Fails with an integrity error unless `dataset` is the one the tree
    /// was fit on.
    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        let h = dataset.content_hash();
        if h != self.tree.dataset_hash {
            return Err(RrtError::Integrity(format!(
                "dataset hash {h} does not match the tree's {}",
                self.tree.dataset_hash
            )));
        }
        Ok(())
    }
}

/// Grow settings as read from TOML. Everything but the seed has a default;
/// tau is either given directly or as `tau_mult` times sigma.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowSettings {
    pub seed: Option<u64>,
    /// "intro" (3, 25, 10) or "simulation" (3, 50, 20); the default.
    pub preset: Option<String>,
    pub max_depth: Option<usize>,
    pub min_split_size: Option<usize>,
    pub min_leaf_size: Option<usize>,
    pub tau: Option<f64>,
    pub tau_mult: Option<f64>,
    pub stopping: Option<StoppingRule>,
}

impl GrowSettings {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| RrtError::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Resolve into a grow config. Command-line values win over the file.
    pub fn resolve(
        &self,
        seed: Option<u64>,
        sigma: Option<f64>,
        tau_mult: Option<f64>,
    ) -> Result<GrowConfig> {
        let seed = seed
            .or(self.seed)
            .ok_or_else(|| RrtError::Config("a seed is required (config file or --seed)".into()))?;
        let base = match self.preset.as_deref() {
            None | Some("simulation") => GrowConfig::simulation_preset(1.0, seed),
            Some("intro") => GrowConfig::intro_preset(1.0, seed),
            Some(other) => {
                return Err(RrtError::Config(format!(
                    "unknown preset {other:?} (expected intro or simulation)"
                )))
            }
        };
        let tau = match (tau_mult.or(self.tau_mult), self.tau) {
            (Some(c), _) => {
                let s = sigma.ok_or_else(|| {
                    RrtError::Config("tau_mult needs sigma (--sigma or --estimate-sigma)".into())
                })?;
                c * s
            }
            (None, Some(t)) => t,
            (None, None) => {
                sigma.ok_or_else(|| RrtError::Config("set tau, or tau_mult with a sigma".into()))?
            }
        };
        let cfg = GrowConfig {
            max_depth: self.max_depth.unwrap_or(base.max_depth),
            min_split_size: self.min_split_size.unwrap_or(base.min_split_size),
            min_leaf_size: self.min_leaf_size.unwrap_or(base.min_leaf_size),
            tau_rule: TauRule::Constant(tau),
            stopping: self.stopping.unwrap_or(StoppingRule::FixedDepth),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Provenance record written next to each output as `<out>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input and output paths with their SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn start(
        command: &str,
        args: Vec<String>,
        config: serde_json::Value,
        seed: Option<u64>,
    ) -> Self {
        let now = unix_now();
        RunManifest {
            schema: MANIFEST_SCHEMA.into(),
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            args,
            config,
            seed,
            artifacts: BTreeMap::new(),
            started_unix: now,
            finished_unix: now,
        }
    }

    pub fn add_artifact(&mut self, path: &Path) -> Result<()> {
        let h = sha256_file(path)?;
        self.artifacts.insert(path.display().to_string(), h);
        Ok(())
    }

    /// Stamp the finish time and write to the sidecar of `out`.
    pub fn finish(mut self, out: &Path) -> Result<PathBuf> {
        self.finished_unix = unix_now();
        let path = manifest_path(out);
        let mut s = serde_json::to_string_pretty(&self)?;
        s.push('\n');
        fs::write(&path, s)?;
        Ok(path)
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
