//! `report`: degradation scores from the per-case metrics, a summary in
//! JSON and CSV, and one plot per (model, ladder, metric).

use std::collections::BTreeMap;
use std::path::Path;

use ctrobust::augment::AugmentKind;
use ctrobust::calibration::empirical_weights;
use ctrobust::metrics::{geometric_weights, mean_sd, score_degradation, MetricName, Severity, SeverityStats, Weighting};
use ctrobust::AnnotationKind;
use serde::{Deserialize, Serialize};

use crate::calibrate::{load_distribution, DistributionFile};
use crate::config::{LadderSpec, RunConfig};
use crate::dataset::load_manifest;
use crate::error::{CliError, CliResult};
use crate::evaluate::{FAILURES_FILE, METRICS_FILE};
use crate::output::{write_csv, write_json, Layout};
use crate::plot::{write_plot, Column};
use crate::Outcome;

pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_CSV: &str = "summary.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    Explicit,
    FixedGeometric,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStats {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderScore {
    pub kind: AugmentKind,
    pub weight_source: WeightSource,
    /// Configured levels, mildest first.
    pub levels: Vec<f64>,
    /// One weight per configured level, before renormalisation.
    pub weights: Vec<f64>,
    /// Levels with at least one value.
    pub per_severity: Vec<SeverityStats>,
    /// Levels without any value; left out of the score.
    pub missing_levels: Vec<f64>,
    pub mean_deg: f64,
    pub sd_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: MetricName,
    pub base: BaseStats,
    pub degradation: Vec<LadderScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub task: AnnotationKind,
    pub metrics: Vec<MetricSummary>,
    pub failures: usize,
}

/// A (model, metric, kind, severity) cell with fewer values than cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingEntry {
    pub model: String,
    pub metric: MetricName,
    pub kind: String,
    pub severity: String,
    pub n: usize,
    pub expected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub weighting: Weighting,
    pub models: Vec<ModelSummary>,
    pub missing: Vec<MissingEntry>,
    pub warnings: Vec<String>,
}

/// Per-case values keyed by (metric, kind, severity label).
type Table = BTreeMap<(MetricName, String, String), Vec<f64>>;

#[derive(Debug, Deserialize)]
struct Row {
    kind: String,
    severity: String,
    #[allow(dead_code)]
    case_id: String,
    metric: MetricName,
    value: f64,
}

fn read_metrics(path: &Path) -> CliResult<Table> {
    let mut table = Table::new();
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Stage(format!("{}: {e}", path.display())))?;
    for row in r.deserialize() {
        let row: Row = row?;
        table.entry((row.metric, row.kind, row.severity)).or_default().push(row.value);
    }
    Ok(table)
}

fn count_rows(path: &Path) -> CliResult<usize> {
    if !path.exists() {
        return Ok(0);
    }
    Ok(csv::Reader::from_path(path)?.records().count())
}

/// Weights for every configured level of `ladder`, and where they came from.
pub fn resolve_weights(
    ladder: &LadderSpec,
    weighting: Weighting,
    distribution: Option<&DistributionFile>,
    warnings: &mut Vec<String>,
) -> (Vec<f64>, WeightSource) {
    let levels = ladder.levels();
    if let Some(w) = &ladder.weights {
        return (w.clone(), WeightSource::Explicit);
    }
    if weighting == Weighting::Empirical {
        let fallback = |why: String, warnings: &mut Vec<String>| {
            let msg = format!("{} ladder: {why}; using fixed geometric weights", ladder.kind);
            log::warn!("{msg}");
            warnings.push(msg);
        };
        if ladder.kind != AugmentKind::Noise {
            fallback("empirical weights exist only for the noise ladder".into(), warnings);
        } else if let Some(d) = distribution {
            match empirical_weights(&d.distribution, &levels) {
                Ok(w) => return (w.iter().map(|l| l.weight).collect(), WeightSource::Empirical),
                Err(e) => fallback(e.to_string(), warnings),
            }
        } else {
            fallback("no noise distribution in the calibration output".into(), warnings);
        }
    }
    (geometric_weights(levels.len()), WeightSource::FixedGeometric)
}

/// Scores one ladder; `None` when nothing can be compared.
pub fn score_ladder(
    ladder: &LadderSpec,
    metric: MetricName,
    clean: &[f64],
    table: &Table,
    weights: &[f64],
    source: WeightSource,
    weighting: Weighting,
) -> CliResult<Option<LadderScore>> {
    let levels = ladder.levels();
    let mut present = Vec::new();
    let mut present_w = Vec::new();
    let mut missing_levels = Vec::new();
    for (&l, &w) in levels.iter().zip(weights) {
        let key = (metric, ladder.kind.as_str().to_string(), Severity::Level(l).to_string());
        match table.get(&key) {
            Some(v) if !v.is_empty() => {
                present.push((l, v.clone()));
                present_w.push(w);
            }
            _ => missing_levels.push(l),
        }
    }
    if clean.is_empty() || present.is_empty() {
        return Ok(None);
    }
    let s = score_degradation(ladder.kind, metric, weighting, clean, &present, &present_w)?;
    Ok(Some(LadderScore {
        kind: ladder.kind,
        weight_source: source,
        levels,
        weights: weights.to_vec(),
        per_severity: s.per_severity,
        missing_levels,
        mean_deg: s.mean_deg,
        sd_deg: s.sd_deg,
    }))
}

fn plot_columns(ladder: &LadderSpec, metric: MetricName, clean: &[f64], table: &Table) -> Vec<Column> {
    let mut cols = vec![Column { label: "clean".into(), values: clean.to_vec() }];
    for l in ladder.levels() {
        let label = Severity::Level(l).to_string();
        let key = (metric, ladder.kind.as_str().to_string(), label.clone());
        cols.push(Column { label, values: table.get(&key).cloned().unwrap_or_default() });
    }
    cols
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn run(cfg: &RunConfig) -> CliResult<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    let expected = load_manifest(cfg)?.cases.len();
    let distribution = load_distribution(&layout)?;
    let mut warnings = Vec::new();
    let weights: Vec<(Vec<f64>, WeightSource)> = cfg
        .ladders
        .iter()
        .map(|l| resolve_weights(l, cfg.weighting, distribution.as_ref(), &mut warnings))
        .collect();

    let mut models = Vec::new();
    let mut missing = Vec::new();
    let mut csv_rows = Vec::new();
    let mut header: Vec<String> =
        ["model", "task", "metric", "base_mean", "base_sd", "base_n"].iter().map(|s| s.to_string()).collect();
    for l in &cfg.ladders {
        header.push(format!("{}_deg", l.kind));
        header.push(format!("{}_sd_deg", l.kind));
    }

    for model in &cfg.models {
        let name = &model.spec.name;
        let dir = layout.evaluation(name);
        let metrics_path = dir.join(METRICS_FILE);
        if !metrics_path.exists() {
            return Err(CliError::Stage(format!("{} not found; run `ctrobust evaluate` first", metrics_path.display())));
        }
        let table = read_metrics(&metrics_path)?;
        let failures = count_rows(&dir.join(FAILURES_FILE))?;
        let metric_names: Vec<MetricName> = {
            let mut m: Vec<MetricName> = table.keys().map(|k| k.0).collect();
            m.dedup();
            m
        };
        let mut metrics = Vec::new();
        for metric in metric_names {
            let clean = table.get(&(metric, "clean".into(), "clean".into())).cloned().unwrap_or_default();
            let mut note = |kind: &str, severity: String, n: usize| {
                if n < expected {
                    missing.push(MissingEntry {
                        model: name.clone(),
                        metric,
                        kind: kind.into(),
                        severity,
                        n,
                        expected,
                    });
                }
            };
            note("clean", "clean".into(), clean.len());
            let (mean, sd) = mean_sd(&clean);
            let base = BaseStats { mean, sd, n: clean.len() };
            let mut row = vec![name.clone(), model.spec.task.to_string(), metric.to_string(), fmt(Some(mean)), fmt(Some(sd)), clean.len().to_string()];
            let mut degradation = Vec::new();
            for (ladder, (w, source)) in cfg.ladders.iter().zip(&weights) {
                for l in ladder.levels() {
                    let sev = Severity::Level(l).to_string();
                    let n = table.get(&(metric, ladder.kind.as_str().into(), sev.clone())).map_or(0, Vec::len);
                    note(ladder.kind.as_str(), sev, n);
                }
                let score = score_ladder(ladder, metric, &clean, &table, w, *source, cfg.weighting)?;
                match &score {
                    Some(s) => row.extend([fmt(Some(s.mean_deg)), fmt(Some(s.sd_deg))]),
                    None => {
                        let msg = format!("{name} {metric} {}: nothing to score", ladder.kind);
                        log::warn!("{msg}");
                        warnings.push(msg);
                        row.extend([String::new(), String::new()]);
                    }
                }
                let plot = layout.report().join("plots").join(format!("{name}_{}_{metric}.png", ladder.kind));
                write_plot(&plot, &plot_columns(ladder, metric, &clean, &table))?;
                degradation.extend(score);
            }
            csv_rows.push(row);
            metrics.push(MetricSummary { metric, base, degradation });
        }
        models.push(ModelSummary { model: name.clone(), task: model.spec.task, metrics, failures });
    }

    for m in &missing {
        log::warn!("{} {} {} {}: {} of {} values", m.model, m.metric, m.kind, m.severity, m.n, m.expected);
    }
    let summary = Summary { weighting: cfg.weighting, models, missing, warnings };
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_json(&layout.report().join(SUMMARY_JSON), &summary)?;
    write_csv(&layout.report().join(SUMMARY_CSV), &header_refs, &csv_rows)?;
    Ok(Outcome::from_failures(summary.missing.len()))
}
