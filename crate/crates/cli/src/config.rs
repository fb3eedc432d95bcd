//! Pipeline configuration, read from TOML and overridable from the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fsu_demand::{
    CalibrationSpec, ErrorTarget, GridPreset, MeasurementNoise, PriceStrategy, ShareBasis,
    SyntheticConfig,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Reporting error injected into simulated data before it is written.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    #[serde(default)]
    pub theta0: f64,
    pub theta1: f64,
    #[serde(default)]
    pub theta2: f64,
    #[serde(default = "one")]
    pub theta3: f64,
    #[serde(default)]
    pub expenditure_sd: f64,
    #[serde(default)]
    pub price_sd: f64,
}

fn one() -> f64 {
    1.0
}

impl MeasurementConfig {
    pub fn spec(&self) -> CalibrationSpec {
        if self.theta2 == 0.0 && self.theta3 == 1.0 && self.price_sd == 0.0 {
            CalibrationSpec::expenditure_only(self.theta0, self.theta1)
        } else {
            CalibrationSpec::joint(self.theta0, self.theta1, self.theta2, self.theta3)
        }
    }

    pub fn noise(&self) -> MeasurementNoise {
        MeasurementNoise {
            expenditure_sd: self.expenditure_sd,
            price_sd: self.price_sd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectLoss {
    L1,
    #[default]
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Raw survey CSV. Relative paths resolve against the config file's directory.
    /// When absent the pipeline reads the survey written by `simulate`.
    pub input: Option<PathBuf>,
    /// Not part of the config hash, so the same config can target several trees.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub items: Vec<String>,
    /// Canonical column name to CSV header.
    pub columns: BTreeMap<String, String>,
    pub strategy: PriceStrategy,
    pub level: f64,
    pub folds: usize,
    pub seed: u64,
    pub grid_preset: GridPreset,
    /// Explicit theta grid; replaces the preset when non-empty.
    pub grid: Vec<CalibrationSpec>,
    pub calibration_target: ErrorTarget,
    pub select_loss: SelectLoss,
    pub cramer_permutations: usize,
    pub weighted: bool,
    pub share_basis: ShareBasis,
    /// Transform both samples through the pooled ECDF in the Gini comparison.
    pub cross_ecdf: bool,
    pub elasticity_threshold: f64,
    pub simulate: Option<SyntheticConfig>,
    pub measurement: Option<MeasurementConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: None,
            output_dir: PathBuf::from("out"),
            items: Vec::new(),
            columns: BTreeMap::new(),
            strategy: PriceStrategy::default(),
            level: 0.05,
            folds: 10,
            seed: 1,
            grid_preset: GridPreset::default(),
            grid: Vec::new(),
            calibration_target: ErrorTarget::default(),
            select_loss: SelectLoss::default(),
            cramer_permutations: 200,
            weighted: false,
            share_basis: ShareBasis::default(),
            cross_ecdf: false,
            elasticity_threshold: fsu_demand::elasticity::DEFAULT_FLAG_THRESHOLD,
            simulate: None,
            measurement: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub level: Option<f64>,
    pub strategy: Option<PriceStrategy>,
    pub folds: Option<usize>,
    pub grid_preset: Option<GridPreset>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    /// Reads `path`, resolving relative `input` and `output_dir` against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(input) = &cfg.input {
            if input.is_relative() {
                cfg.input = Some(base.join(input));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.input {
            self.input = Some(v.clone());
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.level {
            self.level = v;
        }
        if let Some(v) = o.strategy {
            self.strategy = v;
        }
        if let Some(v) = o.folds {
            self.folds = v;
        }
        if let Some(v) = o.grid_preset {
            self.grid_preset = v;
            self.grid.clear();
        }
    }

    /// Item list, falling back to the simulated item codes.
    pub fn item_list(&self) -> Vec<String> {
        if self.items.is_empty() {
            if let Some(sim) = &self.simulate {
                return sim.item_codes();
            }
        }
        self.items.clone()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level must lie in (0, 1), got {}", self.level));
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.item_list().is_empty() {
            return bad("item list is empty".into());
        }
        if self.input.is_none() && self.simulate.is_none() {
            return bad("either `input` or a [simulate] section is required".into());
        }
        if self.cramer_permutations < fsu_demand::dist_tests::MIN_PERMUTATIONS {
            return bad(format!(
                "cramer_permutations must be at least {}",
                fsu_demand::dist_tests::MIN_PERMUTATIONS
            ));
        }
        if !(self.elasticity_threshold.is_finite() && self.elasticity_threshold >= 0.0) {
            return bad("elasticity_threshold must be finite and nonnegative".into());
        }
        if let Some(sim) = &self.simulate {
            sim.validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
            if !self.items.is_empty() && self.items != sim.item_codes() {
                return bad(format!(
                    "items {:?} do not match the simulated items {:?}",
                    self.items,
                    sim.item_codes()
                ));
            }
        }
        if let Some(m) = &self.measurement {
            if self.simulate.is_none() {
                return bad("[measurement] only applies to simulated data".into());
            }
            m.spec()
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        for spec in &self.grid {
            spec.validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn grid_specs(&self) -> Vec<CalibrationSpec> {
        let specs = if self.grid.is_empty() {
            self.grid_preset.specs()
        } else {
            self.grid.clone()
        };
        specs
            .into_iter()
            .map(|s| s.with_target(self.calibration_target))
            .collect()
    }

    /// Hex SHA-256 of the effective configuration, excluding the output directory.
    pub fn hash(&self) -> String {
        // serde_json keeps struct field order and BTreeMap key order, so the
        // encoding is canonical for a given config value
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn cv_seed(&self) -> u64 {
        self.seed
    }

    pub fn cramer_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn measurement_seed(&self) -> Option<u64> {
        self.simulate
            .as_ref()
            .map(|s| s.seed ^ 0x6d65_6173_7572_6500)
    }
}
