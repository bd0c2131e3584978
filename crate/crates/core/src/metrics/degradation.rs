use std::fmt;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Dice,
    Map,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Dice => "dice",
            MetricName::Map => "map",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Serialized as `"clean"` or the bare level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Severity {
    Clean,
    Level(f64),
}

impl Serialize for Severity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Severity::Clean => s.serialize_str("clean"),
            Severity::Level(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Severity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Level(f64),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Level(v) => Ok(Severity::Level(v)),
            Raw::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Severity::Clean => f.write_str("clean"),
            Severity::Level(v) => write!(f, "{v}"),
        }
    }
}

impl std::str::FromStr for Severity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "clean" {
            return Ok(Severity::Clean);
        }
        s.parse()
            .map(Severity::Level)
            .map_err(|_| Error::InvalidParameter(format!("bad severity {s:?}")))
    }
}

/// One model score on one case. Clean scores have no augmentation kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetric {
    pub case_id: String,
    pub kind: Option<AugmentKind>,
    pub severity: Severity,
    pub metric: MetricName,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    FixedGeometric,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityStats {
    pub severity: Severity,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationScore {
    pub kind: AugmentKind,
    pub metric: MetricName,
    pub weighting: Weighting,
    pub clean: SeverityStats,
    pub per_severity: Vec<SeverityStats>,
    pub weights: Vec<f64>,
    pub mean_deg: f64,
    pub sd_deg: f64,
}

/// `(2/3)^s` for `s = 1..=n`.
pub fn geometric_weights(n: usize) -> Vec<f64> {
    (1..=n as i32).map(|s| (2.0f64 / 3.0).powi(s)).collect()
}

/// Mean and population standard deviation; `(NaN, NaN)` when empty.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn weighted(diffs: impl Iterator<Item = f64>, weights: &[f64], n: usize) -> Result<f64> {
    if n != weights.len() {
        return Err(Error::ShapeMismatch(format!("{n} severities but {} weights", weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidParameter(format!("weight {w} is not a non-negative number")));
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        log::warn!("all degradation weights are zero; score set to 0");
        return Ok(0.0);
    }
    Ok(diffs.zip(weights).map(|(d, w)| w * d).sum::<f64>() / total)
}

/// Weighted mean drop from clean performance; positive when the augmented
/// cases score worse.
pub fn degradation_mean(clean_mean: f64, severity_means: &[f64], weights: &[f64]) -> Result<f64> {
    weighted(severity_means.iter().map(|m| clean_mean - m), weights, severity_means.len())
}

/// Weighted rise in standard deviation over clean; positive when results
/// become less consistent.
pub fn degradation_sd(clean_sd: f64, severity_sds: &[f64], weights: &[f64]) -> Result<f64> {
    weighted(severity_sds.iter().map(|s| s - clean_sd), weights, severity_sds.len())
}

/// Aggregates per-case values into a [`DegradationScore`]. `levels` are in
/// ladder order, mildest first, each with its per-case values.
pub fn score_degradation(
    kind: AugmentKind,
    metric: MetricName,
    weighting: Weighting,
    clean: &[f64],
    levels: &[(f64, Vec<f64>)],
    weights: &[f64],
) -> Result<DegradationScore> {
    let stats = |severity, v: &[f64]| {
        let (mean, sd) = mean_sd(v);
        SeverityStats { severity, mean, sd, n: v.len() }
    };
    let clean = stats(Severity::Clean, clean);
    let per_severity: Vec<SeverityStats> = levels.iter().map(|(l, v)| stats(Severity::Level(*l), v)).collect();
    let means: Vec<f64> = per_severity.iter().map(|s| s.mean).collect();
    let sds: Vec<f64> = per_severity.iter().map(|s| s.sd).collect();
    Ok(DegradationScore {
        kind,
        metric,
        weighting,
        mean_deg: degradation_mean(clean.mean, &means, weights)?,
        sd_deg: degradation_sd(clean.sd, &sds, weights)?,
        clean,
        per_severity,
        weights: weights.to_vec(),
    })
}
