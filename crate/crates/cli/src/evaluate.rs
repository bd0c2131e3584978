//! `evaluate`: each model on every clean and augmented volume, scored
//! against the source annotation.
//!
//! Per model this writes `metrics.csv` (`kind,severity,case_id,metric,value`)
//! and `failures.csv`. Failed invocations leave no metric rows.

use std::collections::HashMap;
use std::path::PathBuf;

use ctrobust::gateway::{run_model, seg_to_boxes, ModelOutput};
use ctrobust::io::CaseEntry;
use ctrobust::metrics::{dice, mean_ap, MetricName};
use ctrobust::{AnnotationKind, AnnotationSet, Box3};

use crate::augment::{AugmentManifest, RecordStatus};
use crate::config::{ModelConfig, RunConfig};
use crate::dataset::{load_manifest, load_truth};
use crate::error::{CliError, CliResult};
use crate::output::{write_csv, Layout};
use crate::pool::map_bounded;
use crate::Outcome;

pub const METRICS_FILE: &str = "metrics.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const METRICS_HEADER: [&str; 5] = ["kind", "severity", "case_id", "metric", "value"];
pub const FAILURES_HEADER: [&str; 4] = ["kind", "severity", "case_id", "error"];

/// One volume to run a model on.
#[derive(Debug, Clone)]
struct Input {
    /// `"clean"` or the augmentation kind.
    kind: String,
    severity: String,
    case_id: String,
    path: PathBuf,
}

/// Metrics that apply to a model given the ground-truth kind.
pub fn metrics_for(model: &ModelConfig, truth: AnnotationKind) -> Vec<MetricName> {
    let mut m = Vec::new();
    if model.spec.task == AnnotationKind::Segmentation && truth == AnnotationKind::Segmentation {
        m.push(MetricName::Dice);
    }
    if model.spec.task == AnnotationKind::Detection || model.boxes_from_segmentation {
        m.push(MetricName::Map);
    }
    m
}

fn truth_boxes(truth: &AnnotationSet) -> Vec<Box3> {
    match truth {
        AnnotationSet::Detection(b) => b.clone(),
        AnnotationSet::Segmentation(l) => seg_to_boxes(l),
    }
}

fn score(
    model: &ModelConfig,
    output: &ModelOutput,
    truth: &AnnotationSet,
    thresholds: &[f64],
) -> CliResult<Vec<(MetricName, f64)>> {
    let mut out = Vec::new();
    for metric in metrics_for(model, truth.kind()) {
        let v = match metric {
            MetricName::Dice => match (&output.prediction, truth) {
                (AnnotationSet::Segmentation(p), AnnotationSet::Segmentation(t)) => dice(t.labels.view(), p.labels.view())?,
                _ => return Err(CliError::Stage("dice needs label maps on both sides".into())),
            },
            MetricName::Map => mean_ap(&output.boxes(), &truth_boxes(truth), thresholds, None)?,
        };
        out.push((metric, v));
    }
    Ok(out)
}

fn inputs(cases: &[CaseEntry], augmented: &AugmentManifest, layout: &Layout) -> Vec<Input> {
    let mut v: Vec<Input> = cases
        .iter()
        .map(|c| Input {
            kind: "clean".into(),
            severity: "clean".into(),
            case_id: c.case_id.clone(),
            path: c.volume_path.clone(),
        })
        .collect();
    for r in &augmented.records {
        if r.status != RecordStatus::Ok {
            continue;
        }
        let Some(rel) = &r.path else { continue };
        v.push(Input {
            kind: r.kind.as_str().into(),
            severity: ctrobust::metrics::Severity::Level(r.severity).to_string(),
            case_id: r.case_id.clone(),
            path: layout.root.join(rel),
        });
    }
    v
}

type JobResult = Result<Vec<(MetricName, f64)>, String>;

pub fn run(cfg: &RunConfig) -> CliResult<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    let manifest = load_manifest(cfg)?;
    let augmented = AugmentManifest::load(&layout)?;
    let cases: HashMap<&str, &CaseEntry> = manifest.cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
    let inputs = inputs(&manifest.cases, &augmented, &layout);

    let mut failures_total = 0;
    for model in &cfg.models {
        let name = &model.spec.name;
        log::info!("model {name}: {} volume(s)", inputs.len());
        let results: Vec<JobResult> = map_bounded(&inputs, cfg.max_parallel, |_, input| {
            let entry = cases.get(input.case_id.as_str()).ok_or_else(|| format!("case {} not in manifest", input.case_id))?;
            let truth = load_truth(entry, None)
                .map_err(|e| e.to_string())?
                .ok_or_else(|| "case has no ground truth".to_string())?;
            let output = run_model(&model.spec, &input.path, &input.case_id).map_err(|e| e.to_string())?;
            log::debug!("{name} {} {} {}: {:.2} s", input.kind, input.severity, input.case_id, output.wall_time);
            score(model, &output, &truth, &cfg.iou_thresholds).map_err(|e| e.to_string())
        });

        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for (input, r) in inputs.iter().zip(results) {
            match r {
                Ok(values) => {
                    for (metric, v) in values {
                        rows.push(vec![
                            input.kind.clone(),
                            input.severity.clone(),
                            input.case_id.clone(),
                            metric.as_str().into(),
                            v.to_string(),
                        ]);
                    }
                }
                Err(e) => {
                    log::error!("{name} on {} {} {}: {e}", input.kind, input.severity, input.case_id);
                    failures.push(vec![input.kind.clone(), input.severity.clone(), input.case_id.clone(), e]);
                }
            }
        }
        let dir = layout.evaluation(name);
        write_csv(&dir.join(METRICS_FILE), &METRICS_HEADER, &rows)?;
        write_csv(&dir.join(FAILURES_FILE), &FAILURES_HEADER, &failures)?;
        log::info!("model {name}: {} metric row(s), {} failure(s)", rows.len(), failures.len());
        failures_total += failures.len();
    }
    Ok(Outcome::from_failures(failures_total))
}
