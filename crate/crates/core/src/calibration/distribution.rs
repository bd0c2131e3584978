//! Distribution of per-case noise levels in a dataset, and the severity
//! weights derived from its decaying tail.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{extract_noise, noise_sd, DEFAULT_MAX_ITER};
use crate::volume::CtVolume;

/// Weights below this are reported as zero.
pub const WEIGHT_CUTOFF: f64 = 1e-3;
/// Fewer cases than this trigger a warning.
pub const RECOMMENDED_CASES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailFamily {
    #[default]
    Exponential,
    Gaussian,
}

/// Decaying fit to histogram counts at and above `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TailFit {
    /// `amplitude · exp(−rate · (level − origin))`
    Exponential { amplitude: f64, rate: f64, origin: f64 },
    /// `amplitude · exp(−(level − origin)² / (2 · width²))`
    Gaussian { amplitude: f64, width: f64, origin: f64 },
}

impl TailFit {
    pub fn eval(&self, level: f64) -> f64 {
        match *self {
            TailFit::Exponential { amplitude, rate, origin } => amplitude * (-rate * (level - origin)).exp(),
            TailFit::Gaussian { amplitude, width, origin } => {
                amplitude * (-(level - origin).powi(2) / (2.0 * width * width)).exp()
            }
        }
    }

    pub fn scaled(&self, c: f64) -> TailFit {
        match *self {
            TailFit::Exponential { amplitude, rate, origin } => TailFit::Exponential { amplitude: amplitude * c, rate, origin },
            TailFit::Gaussian { amplitude, width, origin } => TailFit::Gaussian { amplitude: amplitude * c, width, origin },
        }
    }

    fn shape(family: TailFamily, param: f64, origin: f64) -> TailFit {
        match family {
            TailFamily::Exponential => TailFit::Exponential { amplitude: 1.0, rate: param, origin },
            TailFamily::Gaussian => TailFit::Gaussian { amplitude: 1.0, width: param, origin },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelWeight {
    pub level_hu: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDistribution {
    pub case_sds: Vec<f64>,
    /// Cases per 1-HU bin, keyed by the bin's lower edge.
    pub histogram: BTreeMap<i64, usize>,
    pub base_level_hu: f64,
    pub tail_fit: Option<TailFit>,
    #[serde(default)]
    pub weights: Vec<LevelWeight>,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl NoiseDistribution {
    /// Builds the histogram, picks the modal bin (lowest on ties) as the
    /// base level, and fits the tail from the base bin upward.
    pub fn from_case_sds(case_sds: &[f64], family: TailFamily) -> Result<Self> {
        if case_sds.is_empty() {
            return Err(Error::InvalidParameter("no cases for the noise distribution".into()));
        }
        if let Some(bad) = case_sds.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!("invalid noise sd {bad}")));
        }
        let mut warnings = Vec::new();
        if case_sds.len() < RECOMMENDED_CASES {
            warnings.push(format!(
                "noise distribution from {} case(s); at least {RECOMMENDED_CASES} recommended",
                case_sds.len()
            ));
        }
        let mut histogram = BTreeMap::new();
        for &sd in case_sds {
            *histogram.entry(sd.floor() as i64).or_insert(0) += 1;
        }
        let (&base, _) = histogram
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .expect("non-empty");
        let top = *histogram.keys().next_back().expect("non-empty");
        let levels: Vec<f64> = (base..=top).map(|b| b as f64).collect();
        let counts: Vec<f64> = (base..=top).map(|b| *histogram.get(&b).unwrap_or(&0) as f64).collect();
        let tail_fit = if levels.len() < 2 {
            warnings.push("tail fit needs at least two bins at or above the base level".into());
            None
        } else {
            Some(fit_tail(&levels, &counts, base as f64, family))
        };
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(NoiseDistribution {
            case_sds: case_sds.to_vec(),
            histogram,
            base_level_hu: base as f64,
            tail_fit,
            weights: Vec::new(),
            warnings,
        })
    }
}

/// Weighted least-squares fit of `family` to `counts`.
///
/// Counts are Poisson, so residuals are weighted by the inverse of the fitted
/// value (Pearson χ²), re-estimated a few times starting from equal weights.
/// For each candidate shape parameter the amplitude is solved in closed form.
pub fn fit_tail(levels: &[f64], counts: &[f64], origin: f64, family: TailFamily) -> TailFit {
    let mut weights = vec![1.0; counts.len()];
    let mut fit = fit_weighted(levels, counts, &weights, origin, family);
    for _ in 0..PEARSON_ROUNDS {
        for (w, &l) in weights.iter_mut().zip(levels) {
            *w = 1.0 / fit.eval(l).max(MIN_EXPECTED);
        }
        fit = fit_weighted(levels, counts, &weights, origin, family);
    }
    fit
}

const PEARSON_ROUNDS: usize = 4;
const MIN_EXPECTED: f64 = 0.5;

fn fit_weighted(levels: &[f64], counts: &[f64], weights: &[f64], origin: f64, family: TailFamily) -> TailFit {
    let sse_and_amp = |param: f64| {
        let shape = TailFit::shape(family, param, origin);
        let e: Vec<f64> = levels.iter().map(|&l| shape.eval(l)).collect();
        let ee: f64 = e.iter().zip(weights).map(|(v, w)| w * v * v).sum();
        let amp = if ee > 0.0 {
            e.iter().zip(counts).zip(weights).map(|((a, y), w)| w * a * y).sum::<f64>() / ee
        } else {
            0.0
        };
        let sse: f64 = e.iter().zip(counts).zip(weights).map(|((a, y), w)| w * (amp * a - y).powi(2)).sum();
        (sse, amp)
    };
    let (lo, hi) = match family {
        TailFamily::Exponential => (1e-6f64.ln(), 50f64.ln()),
        TailFamily::Gaussian => (0.05f64.ln(), 1e5f64.ln()),
    };
    const SCAN: usize = 400;
    let at = |i: f64| (lo + (hi - lo) * i / SCAN as f64).exp();
    let mut best = 0;
    let mut best_sse = f64::INFINITY;
    for i in 0..=SCAN {
        let (sse, _) = sse_and_amp(at(i as f64));
        if sse < best_sse {
            best_sse = sse;
            best = i;
        }
    }
    // golden-section refinement inside the neighbouring scan cells
    let (mut a, mut b) = ((best as f64 - 1.0).max(0.0), (best as f64 + 1.0).min(SCAN as f64));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if sse_and_amp(at(c)).0 <= sse_and_amp(at(d)).0 {
            b = d;
        } else {
            a = c;
        }
    }
    let param = at((a + b) / 2.0);
    let (_, amp) = sse_and_amp(param);
    TailFit::shape(family, param, origin).scaled(amp)
}

/// `ω(level) = f(level) / f(base)`, clamped to [0, 1], with values below
/// [`WEIGHT_CUTOFF`] reported as zero. Levels below the base get 1.
pub fn empirical_weights(dist: &NoiseDistribution, levels: &[f64]) -> Result<Vec<LevelWeight>> {
    let fit = dist
        .tail_fit
        .ok_or_else(|| Error::InvalidParameter("noise distribution has no tail fit".into()))?;
    let f_base = fit.eval(dist.base_level_hu);
    if !(f_base > 0.0 && f_base.is_finite()) {
        return Err(Error::InvalidParameter("tail fit vanishes at the base level".into()));
    }
    Ok(levels
        .iter()
        .map(|&level| {
            let weight = if level < dist.base_level_hu {
                log::warn!("severity {level} HU lies below the base level {} HU; weight 1", dist.base_level_hu);
                1.0
            } else {
                let w = (fit.eval(level) / f_base).clamp(0.0, 1.0);
                if w < WEIGHT_CUTOFF {
                    0.0
                } else {
                    w
                }
            };
            LevelWeight { level_hu: level, weight }
        })
        .collect())
}

#[derive(Debug, Clone, Default)]
pub struct DistributionOptions {
    pub tv_weight: Option<f64>,
    pub max_iter: Option<usize>,
    pub family: TailFamily,
}

/// Extracts the noise of every case and summarises the per-case sds.
pub fn dataset_noise_distribution(cases: &[CtVolume], options: &DistributionOptions) -> Result<NoiseDistribution> {
    if cases.is_empty() {
        return Err(Error::InvalidParameter("no cases for the noise distribution".into()));
    }
    let max_iter = options.max_iter.unwrap_or(DEFAULT_MAX_ITER);
    let sds = cases
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let noise = extract_noise(c, options.tv_weight, max_iter, &format!("case{i}"))?;
            noise_sd(&noise, None)
        })
        .collect::<Result<Vec<_>>>()?;
    NoiseDistribution::from_case_sds(&sds, options.family)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn base_is_the_mode() {
        let d = NoiseDistribution::from_case_sds(&[4.0, 4.0, 4.0, 10.0, 20.0], TailFamily::Exponential).unwrap();
        assert_eq!(d.base_level_hu, 4.0);
        assert_eq!(d.histogram[&4], 3);
        assert!(d.warnings.is_empty());
    }

    #[test]
    fn single_case() {
        let d = NoiseDistribution::from_case_sds(&[7.3], TailFamily::Exponential).unwrap();
        assert_eq!(d.histogram.len(), 1);
        assert_eq!(d.base_level_hu, 7.0);
        assert!(d.tail_fit.is_none());
        assert!(!d.warnings.is_empty());
        assert!(empirical_weights(&d, &[10.0]).is_err());
        assert!(NoiseDistribution::from_case_sds(&[], TailFamily::Exponential).is_err());
    }

    #[test]
    fn recovers_exponential_rate() {
        for rate in [0.1, 0.2, 0.35] {
            let mut errors: Vec<f64> = (0..50u64)
                .map(|seed| {
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                    let exp = Exp::new(rate).unwrap();
                    let sds: Vec<f64> = (0..200).map(|_| 4.0 + exp.sample(&mut rng)).collect();
                    let d = NoiseDistribution::from_case_sds(&sds, TailFamily::Exponential).unwrap();
                    let TailFit::Exponential { rate: fitted, .. } = d.tail_fit.unwrap() else { panic!() };
                    (fitted / rate - 1.0).abs()
                })
                .collect();
            errors.sort_by(f64::total_cmp);
            let within = errors.iter().filter(|&&e| e < 0.15).count();
            assert!(within >= 42, "rate {rate}: {within}/50 within 15%");
            assert!(errors[25] < 0.08, "rate {rate}: median error {}", errors[25]);
        }
    }

    #[test]
    fn constructed_fit_gives_exact_weight() {
        let rate = -(0.221f64.ln()) / 6.0;
        let d = NoiseDistribution {
            case_sds: vec![],
            histogram: BTreeMap::new(),
            base_level_hu: 4.0,
            tail_fit: Some(TailFit::Exponential { amplitude: 37.0, rate, origin: 4.0 }),
            weights: vec![],
            warnings: vec![],
        };
        let w = empirical_weights(&d, &[4.0, 10.0, 2.0, 500.0]).unwrap();
        assert_eq!(w[0].weight, 1.0);
        assert!((w[1].weight - 0.221).abs() < 1e-12);
        assert_eq!(w[2].weight, 1.0);
        assert_eq!(w[3].weight, 0.0);
    }

    #[test]
    fn gaussian_family_fits_a_gaussian_tail() {
        let levels: Vec<f64> = (4..30).map(f64::from).collect();
        let truth = TailFit::Gaussian { amplitude: 50.0, width: 6.0, origin: 4.0 };
        let counts: Vec<f64> = levels.iter().map(|&l| truth.eval(l)).collect();
        let TailFit::Gaussian { amplitude, width, .. } = fit_tail(&levels, &counts, 4.0, TailFamily::Gaussian) else {
            panic!()
        };
        assert!((width - 6.0).abs() < 1e-4 && (amplitude - 50.0).abs() < 1e-3);
    }

    #[test]
    fn json_field_names() {
        let d = NoiseDistribution::from_case_sds(&[4.2, 4.9, 6.1, 9.0, 4.5], TailFamily::Exponential).unwrap();
        let v: serde_json::Value = serde_json::to_value(&d).unwrap();
        assert!(v.get("base_level_hu").is_some());
        assert_eq!(v["tail_fit"]["family"], "exponential");
        let back: NoiseDistribution = serde_json::from_value(v).unwrap();
        assert_eq!(back.histogram, d.histogram);
    }

    proptest! {
        #[test]
        fn weights_are_scale_invariant_and_monotone(
            rate in 0.001f64..2.0,
            amp in 0.1f64..1e4,
            c in 1e-3f64..1e3,
            mut levels in proptest::collection::vec(4.0f64..600.0, 1..10),
        ) {
            levels.sort_by(f64::total_cmp);
            let mk = |fit| NoiseDistribution {
                case_sds: vec![], histogram: BTreeMap::new(), base_level_hu: 4.0,
                tail_fit: Some(fit), weights: vec![], warnings: vec![],
            };
            let fit = TailFit::Exponential { amplitude: amp, rate, origin: 4.0 };
            let a = empirical_weights(&mk(fit), &levels).unwrap();
            let b = empirical_weights(&mk(fit.scaled(c)), &levels).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.weight - y.weight).abs() <= 1e-12);
                prop_assert!((0.0..=1.0).contains(&x.weight));
            }
            prop_assert!(a.windows(2).all(|w| w[1].weight <= w[0].weight));
        }
    }
}
