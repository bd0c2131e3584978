//! Loading cases listed in the dataset manifest.

use ctrobust::io::{file_checksum, load_case_annotations, load_volume, CaseEntry, DatasetManifest};
use ctrobust::{AnnotationSet, CtVolume};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// A missing or malformed manifest is a configuration problem.
pub fn load_manifest(cfg: &RunConfig) -> CliResult<DatasetManifest> {
    DatasetManifest::load(&cfg.manifest).map_err(|e| CliError::Config(format!("{}: {e}", cfg.manifest.display())))
}

pub fn load_truth(entry: &CaseEntry, grid: Option<&CtVolume>) -> CliResult<Option<AnnotationSet>> {
    match (&entry.annotation_path, entry.annotation_kind) {
        (Some(path), Some(kind)) => Ok(Some(load_case_annotations(path, kind, grid, &entry.case_id)?)),
        _ => Ok(None),
    }
}

/// Compares recorded SHA-256 sums, where present, with the files on disk.
pub fn verify_checksums(entry: &CaseEntry) -> CliResult<()> {
    let pairs = [
        (Some(&entry.volume_path), &entry.volume_sha256),
        (entry.annotation_path.as_ref(), &entry.annotation_sha256),
    ];
    for (path, want) in pairs {
        if let (Some(p), Some(want)) = (path, want) {
            if file_checksum(p)? != *want {
                return Err(CliError::Stage(format!("{}: checksum mismatch", p.display())));
            }
        }
    }
    Ok(())
}

/// Volume and, when the manifest lists one, its annotation checked against
/// the volume grid.
pub fn load_case(entry: &CaseEntry) -> CliResult<(CtVolume, Option<AnnotationSet>)> {
    verify_checksums(entry)?;
    let volume = load_volume(&entry.volume_path)?;
    let truth = load_truth(entry, Some(&volume))?;
    Ok((volume, truth))
}
