//! Fan-beam scanner geometry and field-of-view measurement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::CtVolume;

pub const DEFAULT_FAN_ANGLE_DEG: f64 = 60.0;
pub const DEFAULT_DETECTOR_COUNT: usize = 1500;

/// Flat-detector fan-beam layout. Lengths in mm, `phi` in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScannerGeometry {
    /// Full fan angle.
    pub phi: f64,
    /// Source to isocentre.
    pub d1: f64,
    /// Isocentre to detector.
    pub d2: f64,
    pub n_det: usize,
    /// Detector pitch.
    pub d_det: f64,
    /// Field-of-view diameter.
    pub d_fov: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometryOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_det: Option<usize>,
}

impl ScannerGeometry {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Geometry(m));
        if !(self.phi > 0.0 && self.phi < 180.0) {
            return fail(format!("fan angle {} must lie in (0, 180) degrees", self.phi));
        }
        if !(self.d_fov > 0.0 && self.d_fov.is_finite()) {
            return fail(format!("FOV diameter {} must be positive", self.d_fov));
        }
        if !(self.d1 > self.d_fov / 2.0) {
            return fail(format!("source distance {} must exceed the FOV radius {}", self.d1, self.d_fov / 2.0));
        }
        if !(self.d2 > 0.0) {
            return fail(format!("detector distance {} must be positive", self.d2));
        }
        if self.n_det < 16 {
            return fail(format!("{} detectors is fewer than 16", self.n_det));
        }
        if !(self.d_det > 0.0 && self.d_det.is_finite()) {
            return fail(format!("detector pitch {} must be positive", self.d_det));
        }
        Ok(())
    }

    /// Detector pitch projected onto the line through the isocentre.
    pub fn virtual_pitch(&self) -> f64 {
        self.d_det * self.d1 / (self.d1 + self.d2)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: ScannerGeometry = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
    }
}

/// Derives the acquisition geometry from the FOV diameter.
///
/// The source distance is `d_fov / sin(phi / 2)`, the detector sits at the
/// same distance beyond the isocentre, and the pitch spreads `n_det`
/// detectors across the projected fan: `2 (d1 + d2) tan(phi / 2) / n_det`.
pub fn derive_geometry(d_fov: f64, overrides: GeometryOverrides) -> Result<ScannerGeometry> {
    if !(d_fov > 0.0 && d_fov.is_finite()) {
        return Err(Error::Geometry(format!("FOV diameter {d_fov} must be positive")));
    }
    let phi = overrides.phi.unwrap_or(DEFAULT_FAN_ANGLE_DEG);
    if !(phi > 0.0 && phi < 180.0) {
        return Err(Error::Geometry(format!("fan angle {phi} must lie in (0, 180) degrees")));
    }
    let n_det = overrides.n_det.unwrap_or(DEFAULT_DETECTOR_COUNT);
    let half = (phi / 2.0).to_radians();
    let d1 = d_fov / half.sin();
    let d2 = d1;
    let d_det = 2.0 * (d1 + d2) * half.tan() / n_det as f64;
    let g = ScannerGeometry { phi, d1, d2, n_det, d_det, d_fov };
    g.validate()?;
    Ok(g)
}

/// Diameter (mm) of the circular field of view of the central slice.
///
/// Walks each diagonal from a corner toward the centre until the value
/// differs from the uniform padding. Without agreeing corners the inscribed
/// circle of the grid is returned.
pub fn measure_fov_diameter(volume: &CtVolume) -> Result<f64> {
    let s = volume.slice(volume.central_slice_index());
    let (ny, nx) = s.dim();
    let [px, py] = volume.pixel_size();
    let first = s[[0, 0]];
    if s.iter().all(|v| v.to_bits() == first.to_bits()) {
        return Err(Error::DegenerateSlice("central slice is uniform".into()));
    }
    let fallback = (nx as f64 * px).min(ny as f64 * py);
    let Some(pad) = volume.outside_fov_value() else {
        return Ok(fallback);
    };
    let cx = (nx as f64 - 1.0) / 2.0;
    let cy = (ny as f64 - 1.0) / 2.0;
    let dist = |c: f64, r: f64| (((c - cx) * px).powi(2) + ((r - cy) * py).powi(2)).sqrt();
    let steps = nx.min(ny) / 2;
    let mut radius: f64 = 0.0;
    for (sx, sy) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        let corner = |k: usize| {
            let c = if sx == 0.0 { k } else { nx - 1 - k };
            let r = if sy == 0.0 { k } else { ny - 1 - k };
            (c, r)
        };
        for k in 1..=steps {
            let (c, r) = corner(k);
            if s[[r, c]].to_bits() != pad.to_bits() {
                let (pc, pr) = corner(k - 1);
                let edge = 0.5 * (dist(c as f64, r as f64) + dist(pc as f64, pr as f64));
                radius = radius.max(edge);
                break;
            }
        }
    }
    if radius == 0.0 {
        return Ok(fallback);
    }
    Ok(2.0 * radius)
}
