//! Severity ladders and the augmentation requests built from them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::motion::MotionSide;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Noise,
    Metal,
    MotionMag,
    MotionPrx,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 4] = [AugmentKind::Noise, AugmentKind::Metal, AugmentKind::MotionMag, AugmentKind::MotionPrx];

    pub fn as_str(self) -> &'static str {
        match self {
            AugmentKind::Noise => "noise",
            AugmentKind::Metal => "metal",
            AugmentKind::MotionMag => "motion_mag",
            AugmentKind::MotionPrx => "motion_prx",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            AugmentKind::Noise => "HU",
            AugmentKind::Metal | AugmentKind::MotionPrx => "mm",
            AugmentKind::MotionMag => "deg",
        }
    }

    pub fn default_levels(self) -> Vec<f64> {
        match self {
            AugmentKind::Noise => vec![10.0, 20.0, 50.0, 100.0, 200.0, 350.0, 500.0],
            AugmentKind::Metal => vec![1.0, 2.5, 5.0, 7.5, 10.0],
            AugmentKind::MotionMag => vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            AugmentKind::MotionPrx => vec![40.0, 30.0, 20.0, 10.0, 5.0, 0.0],
        }
    }

    /// Whether severity grows as the level value decreases.
    pub fn descending(self) -> bool {
        self == AugmentKind::MotionPrx
    }
}

impl fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown augmentation kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityLadder {
    pub kind: AugmentKind,
    pub levels: Vec<f64>,
}

impl SeverityLadder {
    pub fn new(kind: AugmentKind, levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidParameter(format!("{kind} ladder has no levels")));
        }
        if levels.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(format!("{kind} levels must be finite and non-negative")));
        }
        let ordered = if kind.descending() {
            levels.windows(2).all(|w| w[1] < w[0])
        } else {
            levels.windows(2).all(|w| w[1] > w[0])
        };
        if !ordered {
            let dir = if kind.descending() { "decreasing" } else { "increasing" };
            return Err(Error::InvalidParameter(format!("{kind} levels must be strictly {dir}")));
        }
        if kind == AugmentKind::MotionMag && levels.iter().any(|&v| v > 180.0) {
            return Err(Error::InvalidParameter("rotation levels must not exceed 180 degrees".into()));
        }
        if kind == AugmentKind::Noise && levels.contains(&0.0) {
            return Err(Error::InvalidParameter("noise levels must be positive".into()));
        }
        Ok(SeverityLadder { kind, levels })
    }

    pub fn default_for(kind: AugmentKind) -> Self {
        SeverityLadder { kind, levels: kind.default_levels() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Implant and discontinuity positions follow the annotation.
    Anchored,
    /// Implant z-centre and motion_mag discontinuity are drawn uniformly
    /// over the volume's z range.
    #[default]
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LadderConfig {
    /// Custom levels; the kind's defaults when absent.
    pub levels: Option<Vec<f64>>,
    pub placement: Placement,
    /// Rotation used by the proximity ladder, degrees.
    pub fixed_rotation_deg: f64,
    /// Distance below the annotation used by the magnitude ladder, mm.
    pub fixed_distance_mm: f64,
    pub side: MotionSide,
}

impl Default for LadderConfig {
    fn default() -> Self {
        LadderConfig {
            levels: None,
            placement: Placement::default(),
            fixed_rotation_deg: 10.0,
            fixed_distance_mm: 10.0,
            side: MotionSide::Below,
        }
    }
}

/// One concrete augmentation to perform on one case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRequest {
    pub kind: AugmentKind,
    pub severity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub implant_z_center: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionRequest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionRequest {
    pub rotation_deg: f64,
    pub discontinuity_z: f64,
    pub side: MotionSide,
}

/// Where a case's annotation and volume lie along z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseExtent {
    pub annotation_z: (f64, f64),
    pub volume_z: (f64, f64),
}

/// Expands a ladder into requests for one case. Random placements are drawn
/// once per case and kind from `seed`, so every severity shares them.
pub fn build_ladder(kind: AugmentKind, extent: CaseExtent, config: &LadderConfig, seed: u64) -> Result<Vec<AugmentRequest>> {
    let ladder = match &config.levels {
        Some(l) => SeverityLadder::new(kind, l.clone())?,
        None => SeverityLadder::default_for(kind),
    };
    let mut rng = seed::rng(seed::derive(seed, &["placement", kind.as_str()]));
    let (v_lo, v_hi) = extent.volume_z;
    let random_z = rng.random_range(v_lo..=v_hi);
    let (a_lo, a_hi) = extent.annotation_z;
    let below = |d: f64| match config.side {
        MotionSide::Below => a_lo - d,
        MotionSide::Above => a_hi + d,
    };
    let clamp = |z: f64| {
        let c = z.clamp(v_lo, v_hi);
        if c != z {
            log::warn!("discontinuity at z = {z:.1} mm clamped to the volume range");
        }
        c
    };
    let random = config.placement == Placement::Random;
    Ok(ladder
        .levels
        .iter()
        .map(|&severity| {
            let mut req = AugmentRequest { kind, severity, implant_z_center: None, motion: None };
            match kind {
                AugmentKind::Noise => {}
                AugmentKind::Metal => {
                    if random {
                        req.implant_z_center = Some(random_z);
                    }
                }
                AugmentKind::MotionMag => {
                    let z = if random { random_z } else { clamp(below(config.fixed_distance_mm)) };
                    req.motion = Some(MotionRequest { rotation_deg: severity, discontinuity_z: z, side: config.side });
                }
                AugmentKind::MotionPrx => {
                    req.motion = Some(MotionRequest {
                        rotation_deg: config.fixed_rotation_deg,
                        discontinuity_z: clamp(below(severity)),
                        side: config.side,
                    });
                }
            }
            req
        })
        .collect())
}
