//! Reading and writing volumes, label maps, annotations and manifests.
//!
//! Supported volume containers are NIfTI-1 (`.nii`, `.nii.gz`) and MetaImage
//! (`.mha`, `.mhd` + `.raw`). CT intensities are written as 32-bit floats and
//! label maps as 32-bit signed integers.

mod annotations;
mod manifest;
mod metaimage;
mod nifti;
mod scalar;

use std::path::Path;

use ndarray::Array3;

pub use annotations::{
    group_by_case, load_annotations, load_case_annotations, parse_detection_csv, read_box_csv, write_box_csv,
    write_detection_csv,
};
pub use manifest::{file_checksum, CaseEntry, DatasetManifest};

use crate::error::{Error, Result};
use crate::volume::{CtVolume, LabelVolume};

/// Decoded container contents before conversion to a domain type.
#[derive(Debug)]
pub(crate) struct RawVolume {
    /// `(nx, ny, nz)`.
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    /// x fastest, then y, then z.
    pub data: Vec<f64>,
    pub integer_typed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    Nifti,
    MetaImage,
}

impl VolumeFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let name = path.file_name().map(|n| n.to_string_lossy().to_ascii_lowercase()).unwrap_or_default();
        if name.ends_with(".nii") || name.ends_with(".nii.gz") {
            Ok(VolumeFormat::Nifti)
        } else if name.ends_with(".mha") || name.ends_with(".mhd") {
            Ok(VolumeFormat::MetaImage)
        } else {
            Err(Error::format(path, "unknown volume extension (expected .nii, .nii.gz, .mha or .mhd)"))
        }
    }

    /// File extension including the leading dot.
    pub fn extension(self) -> &'static str {
        match self {
            VolumeFormat::Nifti => ".nii.gz",
            VolumeFormat::MetaImage => ".mha",
        }
    }
}

fn read_raw(path: &Path) -> Result<RawVolume> {
    match VolumeFormat::from_path(path)? {
        VolumeFormat::Nifti => nifti::read(path),
        VolumeFormat::MetaImage => metaimage::read(path),
    }
}

fn to_array<T>(raw: &RawVolume, data: Vec<T>, path: &Path) -> Result<Array3<T>> {
    let [nx, ny, nz] = raw.dims;
    Array3::from_shape_vec((nz, ny, nx), data).map_err(|e| Error::format(path, e.to_string()))
}

/// Loads a CT volume in Hounsfield units.
pub fn load_volume(path: impl AsRef<Path>) -> Result<CtVolume> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    if raw.integer_typed && raw.data.iter().any(|v| v.abs() > (1u32 << 24) as f64) {
        log::warn!("{}: integer intensities beyond 2^24 lose precision as f32", path.display());
    }
    let data: Vec<f32> = raw.data.iter().map(|&v| v as f32).collect();
    let arr = to_array(&raw, data, path)?;
    CtVolume::new(arr, raw.spacing, raw.origin)
}

/// Writes a CT volume; rejects non-finite intensities.
pub fn save_volume(volume: &CtVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(at) = volume.first_non_finite() {
        return Err(Error::NonFinite(at));
    }
    let vox = volume.voxels();
    let data = vox.iter().copied();
    match VolumeFormat::from_path(path)? {
        VolumeFormat::Nifti => nifti::write_f32(path, volume.dims(), volume.spacing(), volume.origin(), data),
        VolumeFormat::MetaImage => metaimage::write_f32(path, volume.dims(), volume.spacing(), volume.origin(), data),
    }
}

/// Loads an integer label map. Non-integral or negative values are rejected.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let mut data = Vec::with_capacity(raw.data.len());
    for &v in &raw.data {
        if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64) {
            return Err(Error::Annotation(format!(
                "{}: label value {v} is not a non-negative integer",
                path.display()
            )));
        }
        data.push(v as u32);
    }
    let arr = to_array(&raw, data, path)?;
    LabelVolume::new(arr, raw.spacing, raw.origin)
}

pub fn save_labels(labels: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if labels.labels.iter().any(|&l| l > i32::MAX as u32) {
        return Err(Error::Annotation("label value exceeds i32 range".into()));
    }
    let data = labels.labels.iter().map(|&l| l as i32);
    match VolumeFormat::from_path(path)? {
        VolumeFormat::Nifti => nifti::write_i32(path, labels.dims(), labels.spacing, labels.origin, data),
        VolumeFormat::MetaImage => metaimage::write_i32(path, labels.dims(), labels.spacing, labels.origin, data),
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn sample() -> CtVolume {
        let v = Array3::from_shape_fn((8, 64, 64), |(z, y, x)| (x as f32 - y as f32) * 3.5 + z as f32 - 1000.0);
        CtVolume::new(v, [0.7, 0.7, 1.25], [-10.0, 5.0, 100.0]).unwrap()
    }

    #[test]
    fn round_trip_all_formats() {
        let dir = tempfile::tempdir().unwrap();
        let vol = sample();
        for name in ["a.nii", "a.nii.gz", "a.mha", "a.mhd"] {
            let p = dir.path().join(name);
            save_volume(&vol, &p).unwrap();
            let back = load_volume(&p).unwrap();
            assert_eq!(back.voxels(), vol.voxels(), "{name}");
            assert_eq!(back.dims(), [64, 64, 8]);
            for a in 0..3 {
                assert!((back.spacing()[a] - vol.spacing()[a]).abs() < 1e-6, "{name}");
                assert!((back.origin()[a] - vol.origin()[a]).abs() < 1e-4, "{name}");
            }
        }
        assert!(dir.path().join("a.raw").exists());
    }

    #[test]
    fn nan_voxel_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = sample().into_voxels();
        v[[2, 3, 4]] = f32::NAN;
        let vol = CtVolume::new(v, [1.0; 3], [0.0; 3]).unwrap();
        let err = save_volume(&vol, dir.path().join("x.nii")).unwrap_err();
        assert!(matches!(err, Error::NonFinite([4, 3, 2])));
        assert!(err.to_string().contains("non-finite intensity"));
    }

    #[test]
    fn unwritable_location_is_io_error() {
        let err = save_volume(&sample(), "/nonexistent-dir/sub/x.nii").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn zero_z_spacing_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.mha");
        let mut text = String::from(
            "ObjectType = Image\nNDims = 3\nDimSize = 8 8 2\nElementSpacing = 1 1 0\nElementType = MET_SHORT\nElementDataFile = LOCAL\n",
        );
        text.push_str(&"\0".repeat(8 * 8 * 2 * 2));
        std::fs::write(&p, text).unwrap();
        let err = load_volume(&p).unwrap_err();
        assert!(err.to_string().contains("invalid spacing"), "{err}");
    }

    #[test]
    fn integer_sources_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.mha");
        let vals: Vec<i16> = (0..8 * 8 * 2).map(|i| (i as i16) * 37 - 2048).collect();
        let mut bytes = b"ObjectType = Image\nNDims = 3\nDimSize = 8 8 2\nElementSpacing = 0.5 0.5 2\nElementType = MET_SHORT\nElementDataFile = LOCAL\n".to_vec();
        bytes.extend(vals.iter().flat_map(|v| v.to_le_bytes()));
        std::fs::write(&p, bytes).unwrap();
        let vol = load_volume(&p).unwrap();
        let got: Vec<f32> = vol.voxels().iter().copied().collect();
        assert_eq!(got, vals.iter().map(|&v| v as f32).collect::<Vec<_>>());
    }

    #[test]
    fn two_dimensional_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("flat.mha");
        let mut bytes = b"ObjectType = Image\nNDims = 2\nDimSize = 8 8\nElementSpacing = 1 1\nElementType = MET_UCHAR\nElementDataFile = LOCAL\n".to_vec();
        bytes.extend([0u8; 64]);
        std::fs::write(&p, bytes).unwrap();
        assert!(load_volume(&p).unwrap_err().to_string().contains("non-3D"));
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let l = Array3::from_shape_fn((4, 8, 8), |(z, y, x)| ((x + y + z) % 3) as u32);
        let lv = LabelVolume::new(l, [1.0, 1.0, 2.0], [0.0; 3]).unwrap();
        for name in ["l.nii.gz", "l.mha"] {
            let p = dir.path().join(name);
            save_labels(&lv, &p).unwrap();
            assert_eq!(load_labels(&p).unwrap(), lv);
        }
    }
}
