//! Run configuration.
//!
//! A run is described by one JSON file. Relative paths inside it resolve
//! against the file's directory. See the README for the full schema.

use std::path::{Path, PathBuf};

use ctrobust::augment::{AugmentKind, LadderConfig, Placement};
use ctrobust::calibration::{TailFamily, TuningGrid};
use ctrobust::ctsim::GeometryOverrides;
use ctrobust::gateway::ModelSpec;
use ctrobust::metrics::{Weighting, DEFAULT_IOU_THRESHOLDS};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Required whenever a ladder uses random placement.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub calibration: CalibrationSource,
    #[serde(default)]
    pub geometry: GeometryOverrides,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default)]
    pub noise_distribution: DistributionConfig,
    pub ladders: Vec<LadderSpec>,
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default = "default_thresholds")]
    pub iou_thresholds: Vec<f64>,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("ctrobust-out")
}

fn default_thresholds() -> Vec<f64> {
    DEFAULT_IOU_THRESHOLDS.to_vec()
}

fn default_parallel() -> usize {
    1
}

/// `"auto"` to tune on the dataset, or a directory holding previously
/// written calibration files.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum CalibrationSource {
    #[default]
    Auto,
    Dir(PathBuf),
}

impl Serialize for CalibrationSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            CalibrationSource::Auto => s.serialize_str("auto"),
            CalibrationSource::Dir(p) => p.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for CalibrationSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == "auto" { CalibrationSource::Auto } else { CalibrationSource::Dir(s.into()) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    pub grid: TuningGrid,
    /// Cases used for tuning, taken in manifest order.
    pub max_cases: usize,
    pub tv_weight: Option<f64>,
    pub max_iter: usize,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig { grid: TuningGrid::default(), max_cases: 5, tv_weight: None, max_iter: ctrobust::noise::DEFAULT_MAX_ITER }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributionConfig {
    pub family: TailFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderSpec {
    pub kind: AugmentKind,
    #[serde(flatten)]
    pub config: LadderConfig,
    /// Explicit degradation weights, one per level; overrides the run's
    /// weighting for this ladder.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

impl LadderSpec {
    pub fn levels(&self) -> Vec<f64> {
        self.config.levels.clone().unwrap_or_else(|| self.kind.default_levels())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub spec: ModelSpec,
    /// Also score a segmentation model as a detector through connected
    /// component boxes.
    #[serde(default)]
    pub boxes_from_segmentation: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.output_dir);
        if let CalibrationSource::Dir(p) = &mut self.calibration {
            fix(p);
        }
        for m in &mut self.models {
            if let Some(w) = &mut m.spec.working_dir {
                fix(w);
            }
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        if self.ladders.is_empty() {
            return bad("at least one ladder is required".into());
        }
        if self.max_parallel == 0 {
            return bad("max_parallel must be at least 1".into());
        }
        if self.iou_thresholds.is_empty() || self.iou_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad("iou_thresholds must be a non-empty list of values in [0, 1]".into());
        }
        let mut names = std::collections::HashSet::new();
        for m in &self.models {
            m.spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
            if !names.insert(m.spec.name.as_str()) {
                return bad(format!("duplicate model name {:?}", m.spec.name));
            }
            if m.spec.name.is_empty() || m.spec.name.contains(['/', '\\']) || m.spec.name.starts_with('.') {
                return bad(format!("model name {:?} is not usable as a directory name", m.spec.name));
            }
        }
        let mut kinds = std::collections::HashSet::new();
        for l in &self.ladders {
            if !kinds.insert(l.kind) {
                return bad(format!("ladder {} listed twice", l.kind));
            }
            let ladder = ctrobust::augment::SeverityLadder::new(l.kind, l.levels())
                .map_err(|e| CliError::Config(format!("ladder {}: {e}", l.kind)))?;
            if let Some(w) = &l.weights {
                if w.len() != ladder.levels.len() {
                    return bad(format!("ladder {}: {} weights for {} levels", l.kind, w.len(), ladder.levels.len()));
                }
                if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return bad(format!("ladder {}: weights must be non-negative", l.kind));
                }
            }
            if l.config.placement == Placement::Random && self.seed.is_none() {
                return bad(format!("ladder {} uses random placement but no seed is set", l.kind));
            }
        }
        self.tuning.grid.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.tuning.max_cases == 0 {
            return bad("tuning.max_cases must be at least 1".into());
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn ladder(&self, kind: AugmentKind) -> Option<&LadderSpec> {
        self.ladders.iter().find(|l| l.kind == kind)
    }
}
