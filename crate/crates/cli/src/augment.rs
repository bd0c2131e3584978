//! `augment`: every configured ladder applied to every case.
//!
//! Volumes land in `augmented/<kind>/<severity>/<case_id><ext>` and each
//! attempted (case, kind, severity) gets one record in
//! `augmented/manifest.json`.

use std::path::PathBuf;

use ctrobust::augment::{build_ladder, AugmentKind, AugmentRequest, CaseAugmenter, CaseExtent, Placement, Provenance};
use ctrobust::io::{save_volume, CaseEntry, VolumeFormat};
use ctrobust::metrics::Severity;
use ctrobust::{seed, AnnotationSet, CtVolume};
use serde::{Deserialize, Serialize};

use crate::calibrate::load_calibration;
use crate::config::{LadderSpec, RunConfig};
use crate::dataset::{load_case, load_manifest};
use crate::error::CliResult;
use crate::output::{read_json, write_json, Layout};
use crate::pool::map_bounded;
use crate::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub case_id: String,
    pub kind: AugmentKind,
    pub severity: f64,
    pub status: RecordStatus,
    /// Output volume relative to the run's output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<AugmentRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentManifest {
    pub records: Vec<AugmentRecord>,
}

impl AugmentManifest {
    pub fn load(layout: &Layout) -> CliResult<Self> {
        let p = layout.augmented_manifest();
        if !p.exists() {
            return Err(crate::CliError::Stage(format!("{} not found; run `ctrobust augment` first", p.display())));
        }
        read_json(&p)
    }
}

/// Whether `kind` can be placed without an annotation.
fn needs_annotation(spec: &LadderSpec) -> bool {
    match spec.kind {
        AugmentKind::Noise => false,
        AugmentKind::Metal | AugmentKind::MotionPrx => true,
        AugmentKind::MotionMag => spec.config.placement == Placement::Anchored,
    }
}

pub fn output_path(layout: &Layout, kind: AugmentKind, severity: f64, case_id: &str, ext: &str) -> PathBuf {
    layout
        .augmented()
        .join(kind.as_str())
        .join(Severity::Level(severity).to_string())
        .join(format!("{case_id}{ext}"))
}

struct CaseJob<'a> {
    entry: &'a CaseEntry,
    cfg: &'a RunConfig,
    layout: &'a Layout,
    calibration: &'a ctrobust::augment::Calibration,
}

impl CaseJob<'_> {
    fn record(&self, kind: AugmentKind, severity: f64, status: RecordStatus, seed: u64, message: Option<String>) -> AugmentRecord {
        AugmentRecord {
            case_id: self.entry.case_id.clone(),
            kind,
            severity,
            status,
            path: None,
            seed,
            request: None,
            provenance: None,
            message,
        }
    }

    /// Records for every ladder level, in config order.
    fn run(&self) -> Vec<AugmentRecord> {
        let case_id = &self.entry.case_id;
        let case_seed = seed::derive(self.cfg.seed(), &["augment", case_id]);
        let fail_all = |msg: String| {
            log::error!("{case_id}: {msg}");
            self.cfg
                .ladders
                .iter()
                .flat_map(|l| l.levels().into_iter().map(move |s| (l.kind, s)))
                .map(|(k, s)| self.record(k, s, RecordStatus::Failed, case_seed, Some(msg.clone())))
                .collect()
        };
        let (volume, truth) = match load_case(self.entry) {
            Ok(c) => c,
            Err(e) => return fail_all(format!("could not load case: {e}")),
        };
        let ext = match VolumeFormat::from_path(&self.entry.volume_path) {
            Ok(f) => f.extension(),
            Err(e) => return fail_all(e.to_string()),
        };
        let truth = truth.filter(|t| !t.is_empty());
        let mut augmenter = match CaseAugmenter::new(case_id, &volume, truth.as_ref(), self.calibration, case_seed) {
            Ok(a) => a,
            Err(e) => return fail_all(e.to_string()),
        };
        let mut out = Vec::new();
        for ladder in &self.cfg.ladders {
            self.run_ladder(ladder, &volume, truth.as_ref(), &mut augmenter, case_seed, ext, &mut out);
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn run_ladder(
        &self,
        ladder: &LadderSpec,
        volume: &CtVolume,
        truth: Option<&AnnotationSet>,
        augmenter: &mut CaseAugmenter<'_>,
        case_seed: u64,
        ext: &str,
        out: &mut Vec<AugmentRecord>,
    ) {
        let case_id = &self.entry.case_id;
        let kind = ladder.kind;
        let annotation_z = truth.and_then(|t| t.z_range());
        if needs_annotation(ladder) && annotation_z.is_none() {
            log::warn!("{case_id}: {kind} ladder skipped, case has no annotation to place it against");
            for s in ladder.levels() {
                out.push(self.record(kind, s, RecordStatus::Skipped, case_seed, Some("no annotation".into())));
            }
            return;
        }
        let extent = CaseExtent { annotation_z: annotation_z.unwrap_or(volume.z_range()), volume_z: volume.z_range() };
        let ladder_seed = seed::derive(self.cfg.seed(), &["ladder", case_id]);
        let requests = match build_ladder(kind, extent, &ladder.config, ladder_seed) {
            Ok(r) => r,
            Err(e) => {
                log::error!("{case_id}: {kind} ladder: {e}");
                for s in ladder.levels() {
                    out.push(self.record(kind, s, RecordStatus::Failed, case_seed, Some(e.to_string())));
                }
                return;
            }
        };
        for req in requests {
            let mut rec = self.record(kind, req.severity, RecordStatus::Ok, case_seed, None);
            rec.request = Some(req);
            let result = augmenter.apply(&req).map_err(crate::CliError::from).and_then(|aug| {
                let path = output_path(self.layout, kind, req.severity, case_id, ext);
                crate::output::ensure_dir(path.parent().expect("has parent"))?;
                save_volume(&aug.volume, &path)?;
                Ok((path, aug.provenance))
            });
            match result {
                Ok((path, provenance)) => {
                    log::info!("{case_id}: {kind} {} done", req.severity);
                    rec.path = Some(self.layout.relative(&path));
                    rec.provenance = Some(provenance);
                }
                Err(e) => {
                    log::error!("{case_id}: {kind} {}: {e}", req.severity);
                    rec.status = RecordStatus::Failed;
                    rec.message = Some(e.to_string());
                }
            }
            out.push(rec);
        }
    }
}

/// Ladder, then level, then case (manifest order).
fn sort_records(cfg: &RunConfig, case_order: &[String], records: &mut [AugmentRecord]) {
    let ladder_pos = |k: AugmentKind| cfg.ladders.iter().position(|l| l.kind == k).unwrap_or(usize::MAX);
    let case_pos = |c: &str| case_order.iter().position(|x| x == c).unwrap_or(usize::MAX);
    records.sort_by(|a, b| {
        ladder_pos(a.kind)
            .cmp(&ladder_pos(b.kind))
            .then(level_pos(cfg, a).cmp(&level_pos(cfg, b)))
            .then(case_pos(&a.case_id).cmp(&case_pos(&b.case_id)))
    });
}

fn level_pos(cfg: &RunConfig, r: &AugmentRecord) -> usize {
    cfg.ladder(r.kind)
        .and_then(|l| l.levels().iter().position(|&s| s == r.severity))
        .unwrap_or(usize::MAX)
}

pub fn run(cfg: &RunConfig) -> CliResult<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    let calibration = load_calibration(&layout)?;
    let manifest = load_manifest(cfg)?;
    log::info!(
        "augmenting {} case(s) with q0={:e} sigma={} n_theta={}",
        manifest.cases.len(),
        calibration.params.q0,
        calibration.params.sigma,
        calibration.params.n_theta
    );
    let per_case = map_bounded(&manifest.cases, cfg.max_parallel, |_, entry| {
        CaseJob { entry, cfg, layout: &layout, calibration: &calibration }.run()
    });
    let mut records: Vec<AugmentRecord> = per_case.into_iter().flatten().collect();
    let order: Vec<String> = manifest.cases.iter().map(|c| c.case_id.clone()).collect();
    sort_records(cfg, &order, &mut records);
    let failed = records.iter().filter(|r| r.status == RecordStatus::Failed).count();
    let skipped = records.iter().filter(|r| r.status == RecordStatus::Skipped).count();
    log::info!("{} augmented volume(s), {failed} failed, {skipped} skipped", records.len() - failed - skipped);
    write_json(&layout.augmented_manifest(), &AugmentManifest { records })?;
    Ok(Outcome::from_failures(failed))
}
