//! Experiment configuration files (TOML).
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use gcdlab::synthdata::SynthSpec;
use gcdlab::trainer::{Toggles, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("range error: {0}")]
    Range(String),
}

/// Where the feature vectors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic(SyntheticConfig),
    Csv {
        path: PathBuf,
        /// Known classes; defaults to every class with a labeled sample.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        known_classes: Option<Vec<usize>>,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_known: usize,
    pub n_novel: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise: f64,
    pub labeled_ratio: f64,
    /// Dataset seed; when absent each run uses its own run seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_known: 10,
            n_novel: 10,
            per_class: 60,
            dim: 20,
            separation: 2.5,
            noise: 1.2,
            labeled_ratio: 0.5,
            seed: None,
        }
    }
}

impl SyntheticConfig {
    pub fn spec(&self, run_seed: u64) -> SynthSpec {
        SynthSpec {
            n_known: self.n_known,
            n_novel: self.n_novel,
            per_class: self.per_class,
            dim: self.dim,
            separation: self.separation,
            noise: self.noise,
            labeled_ratio: self.labeled_ratio,
            seed: self.seed.unwrap_or(run_seed),
        }
    }
}

/// A named combination of the LegoGCD components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ablation(pub Toggles);

impl Ablation {
    pub fn tag(&self) -> String {
        let t = self.0;
        let parts: Vec<&str> = [(t.ler, "ler"), (t.map, "map"), (t.dkl, "dkl")]
            .into_iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| n)
            .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

impl TryFrom<String> for Ablation {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let mut t = Toggles::SIMGCD;
        let s = s.trim().to_ascii_lowercase();
        if s != "none" && s != "simgcd" {
            for part in s.split('+') {
                match part.trim() {
                    "ler" => t.ler = true,
                    "map" => t.map = true,
                    "dkl" => t.dkl = true,
                    other => return Err(format!("unknown ablation component `{other}`")),
                }
            }
        }
        if t.map && !t.ler {
            return Err(format!("ablation `{s}`: map requires ler"));
        }
        Ok(Ablation(t))
    }
}

impl From<Ablation> for String {
    fn from(a: Ablation) -> String {
        a.tag()
    }
}

/// Lists of values to sweep. Absent lists are not swept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<Vec<Ablation>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Base seed; the run seed when no seed list is swept.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Write a checkpoint every N epochs (0: only the final one).
    pub checkpoint_every: usize,
    /// Also score k-means on the unlabeled features of each dataset.
    pub kmeans_baseline: bool,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            checkpoint_every: 0,
            kmeans_baseline: false,
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML form with every field spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train
            .validate()
            .map_err(|e| ConfigError::Range(e.to_string()))?;
        if let DatasetConfig::Synthetic(s) = &self.dataset {
            if s.n_known < 1 || s.per_class < 4 || s.dim < 1 {
                return Err(ConfigError::Range(
                    "dataset: need n_known >= 1, per_class >= 4, dim >= 1".into(),
                ));
            }
            if !(s.labeled_ratio > 0.0 && s.labeled_ratio < 1.0) {
                return Err(ConfigError::Range(
                    "dataset.labeled_ratio: must satisfy 0 < r < 1".into(),
                ));
            }
            if !(s.separation > 0.0 && s.noise > 0.0) {
                return Err(ConfigError::Range(
                    "dataset.separation/noise: must be > 0".into(),
                ));
            }
        }
        let sw = &self.sweep;
        let empty = [
            ("sweep.beta", sw.beta.as_ref().map(Vec::len)),
            ("sweep.delta", sw.delta.as_ref().map(Vec::len)),
            ("sweep.ablation", sw.ablation.as_ref().map(Vec::len)),
            ("sweep.seeds", sw.seeds.as_ref().map(Vec::len)),
        ];
        for (name, len) in empty {
            if len == Some(0) {
                return Err(ConfigError::Range(format!(
                    "{name}: list must be non-empty"
                )));
            }
        }
        for &b in sw.beta.iter().flatten() {
            if !(b >= 0.0) {
                return Err(ConfigError::Range(format!("sweep.beta: {b} must be >= 0")));
            }
        }
        for &d in sw.delta.iter().flatten() {
            if !(d > 0.0 && d <= 1.0) {
                return Err(ConfigError::Range(format!(
                    "sweep.delta: {d} must satisfy 0 < delta <= 1"
                )));
            }
        }
        Ok(())
    }

    /// Expands the sweep into concrete runs, in a fixed order
    /// (ablation, beta, delta, seed; last varies fastest).
    pub fn grid(&self) -> Vec<RunSpec> {
        let sw = &self.sweep;
        let ablations: Vec<Option<Ablation>> = match &sw.ablation {
            Some(v) => v.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let betas: Vec<Option<f64>> = match &sw.beta {
            Some(v) => v.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let deltas: Vec<Option<f64>> = match &sw.delta {
            Some(v) => v.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let seeds = sw.seeds.clone().unwrap_or_else(|| vec![self.seed]);
        let mut runs = Vec::new();
        for a in &ablations {
            for b in &betas {
                for d in &deltas {
                    for &s in &seeds {
                        let mut train = self.train.clone();
                        let mut tag = Vec::new();
                        if let Some(a) = a {
                            train.toggles = a.0;
                            tag.push(format!("abl-{}", a.tag()));
                        }
                        if let Some(b) = b {
                            train.beta = *b;
                            tag.push(format!("beta{b:?}"));
                        }
                        if let Some(d) = d {
                            train.delta = *d;
                            tag.push(format!("delta{d:?}"));
                        }
                        train.seed = s;
                        tag.push(format!("seed{s}"));
                        runs.push(RunSpec {
                            tag: tag.join("_"),
                            seed: s,
                            ablation: a.map(|a| a.tag()),
                            train,
                        });
                    }
                }
            }
        }
        runs
    }
}

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub tag: String,
    pub seed: u64,
    pub ablation: Option<String>,
    pub train: TrainConfig,
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let t = &cfg.train;
        assert_eq!(t.lambda, 0.35);
        assert_eq!((t.tau_u, t.tau_c, t.tau_s, t.tau_o), (0.07, 1.0, 0.1, 0.05));
        assert_eq!(
            (t.tau_t_start, t.tau_t_end, t.tau_t_warmup_epochs),
            (0.07, 0.04, 30)
        );
        assert_eq!((t.lambda_ler, t.alpha), (0.4, 1.0));
        assert_eq!((t.batch_size, t.epochs, t.lr0), (128, 200, 0.1));
    }

    #[test]
    fn delta_above_one_is_a_range_error() {
        let err = ExperimentConfig::from_toml("[train]\ndelta = 1.5\n").unwrap_err();
        assert!(
            matches!(err, ConfigError::Range(ref m) if m.contains("delta")),
            "{err}"
        );
    }

    #[test]
    fn unknown_keys_rejected_with_location() {
        let err = ExperimentConfig::from_toml("seed = 1\n[train]\nlamda = 0.3\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ConfigError::Parse(_)));
        assert!(msg.contains("lamda") && msg.contains("line 3"), "{msg}");
        assert!(ExperimentConfig::from_toml("[train.toggles]\nfoo = true\n").is_err());
    }

    #[test]
    fn malformed_file_reports_line() {
        let err = ExperimentConfig::from_toml("seed = 1\nbeta = [1,\n").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn empty_sweep_list_rejected() {
        assert!(ExperimentConfig::from_toml("[sweep]\nbeta = []\n").is_err());
        assert!(ExperimentConfig::from_toml("[sweep]\nablation = [\"map\"]\n").is_err());
    }

    #[test]
    fn canonical_round_trip() {
        let text = r#"
            seed = 4
            output_dir = "out"
            [dataset]
            source = "synthetic"
            separation = 2.5
            [train]
            epochs = 10
            [train.toggles]
            dkl = false
            [sweep]
            beta = [0.0, 2.0]
            ablation = ["ler", "ler+map", "ler+map+dkl", "dkl", "none"]
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let canon = cfg.to_toml();
        let again = ExperimentConfig::from_toml(&canon).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(canon, again.to_toml());
        let csv = ExperimentConfig::from_toml(
            "[dataset]\nsource = \"csv\"\npath = \"x.csv\"\nknown_classes = [0, 1]\n",
        )
        .unwrap();
        assert_eq!(csv, ExperimentConfig::from_toml(&csv.to_toml()).unwrap());
    }

    #[test]
    fn grid_tags_and_order() {
        let cfg = ExperimentConfig::from_toml(
            "[sweep]\nbeta = [0.0, 2.0]\ndelta = [0.85]\nseeds = [0, 1]\n",
        )
        .unwrap();
        let tags: Vec<String> = cfg.grid().into_iter().map(|r| r.tag).collect();
        assert_eq!(
            tags,
            [
                "beta0.0_delta0.85_seed0",
                "beta0.0_delta0.85_seed1",
                "beta2.0_delta0.85_seed0",
                "beta2.0_delta0.85_seed1"
            ]
        );
        let single = ExperimentConfig::default().grid();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].tag, "seed0");
    }

    #[test]
    fn ablation_grid_mirrors_component_table() {
        let cfg = ExperimentConfig::from_toml(
            "[sweep]\nablation = [\"ler\", \"ler+map\", \"ler+map+dkl\", \"dkl\"]\n",
        )
        .unwrap();
        let grid = cfg.grid();
        let toggles: Vec<(bool, bool, bool)> = grid
            .iter()
            .map(|r| {
                (
                    r.train.toggles.ler,
                    r.train.toggles.map,
                    r.train.toggles.dkl,
                )
            })
            .collect();
        assert_eq!(
            toggles,
            [
                (true, false, false),
                (true, true, false),
                (true, true, true),
                (false, false, true)
            ]
        );
        assert_eq!(grid[2].tag, "abl-ler+map+dkl_seed0");
    }
}
