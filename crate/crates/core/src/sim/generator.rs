//! Synthetic time series with known conditional laws.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::ConditionalLaw;

/// Name of the random number generator behind every seeded stream.
pub const RNG_NAME: &str = "chacha20";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorKind {
    /// `y_t = sum_i a_i clip(y_{t-i}) + eps_t`, lags clipped to `[-clip, clip]`.
    ///
    /// With `||a||_1 <= 1` and `clip = D/sqrt 2` the law lies inside the AR
    /// forecaster family and `2 m_t^2 <= D^2`.
    WellSpecifiedAr { coeffs: Vec<f64>, noise_var: f64, clip: f64 },
    /// Centered Gaussian with `sigma_t^2 = c sbar^2/2 + sum_i a_i min(y_{t-i}^2, sbar^2)`.
    WellSpecifiedArch { coeffs: Vec<f64>, c: f64, sigma_bar2: f64 },
    /// `sigma_t^2 = omega + a y_{t-1}^2 + b sigma_{t-1}^2`, clamped into `[c sbar^2/2, sbar^2]`.
    Garch11 { omega: f64, a: f64, b: f64, c: f64, sigma_bar2: f64 },
    /// AR with coefficients `base + amplitude * sin(2 pi t / period)`, rescaled
    /// into the unit l1 ball whenever the drift leaves it.
    NonStationaryAr { base: Vec<f64>, amplitude: Vec<f64>, period: f64, noise_var: f64, clip: f64 },
    /// Independent Gaussians with sinusoidal mean and variance schedules.
    Misspecified {
        #[serde(default)]
        mean_offset: f64,
        #[serde(default)]
        mean_amplitude: f64,
        #[serde(default = "default_period")]
        mean_period: f64,
        var_low: f64,
        var_high: f64,
        #[serde(default = "default_period")]
        var_period: f64,
    },
}

fn default_period() -> f64 {
    100.0
}

/// Samples with the conditional law each one was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub samples: Vec<f64>,
    pub laws: Vec<ConditionalLaw>,
    /// Rounds where the generator had to clamp or rescale to honour its bounds.
    pub clamp_events: usize,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("generator.{name} must be positive, got {v}")))
    }
}

fn arch_bounds(c: f64, sigma_bar2: f64) -> Result<()> {
    if !(c > 1.0 && c < 2.0) {
        return Err(Error::config(format!("generator.c must lie in (1,2), got {c}")));
    }
    positive("sigma_bar2", sigma_bar2)
}

impl GeneratorKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorKind::WellSpecifiedAr { coeffs, noise_var, clip } => {
                if coeffs.is_empty() {
                    return Err(Error::config("generator.coeffs must not be empty"));
                }
                positive("noise_var", *noise_var)?;
                positive("clip", *clip)
            }
            GeneratorKind::WellSpecifiedArch { coeffs, c, sigma_bar2 } => {
                arch_bounds(*c, *sigma_bar2)?;
                if coeffs.is_empty() || coeffs.iter().any(|a| *a < 0.0) {
                    return Err(Error::config("generator.coeffs must be a non-empty non-negative vector"));
                }
                if coeffs.iter().sum::<f64>() > 1.0 - c / 2.0 + 1e-12 {
                    return Err(Error::config("generator.coeffs must satisfy sum a_i <= 1 - c/2"));
                }
                Ok(())
            }
            GeneratorKind::Garch11 { omega, a, b, c, sigma_bar2 } => {
                arch_bounds(*c, *sigma_bar2)?;
                positive("omega", *omega)?;
                if *a < 0.0 || *b < 0.0 {
                    return Err(Error::config("generator.a and generator.b must be non-negative"));
                }
                Ok(())
            }
            GeneratorKind::NonStationaryAr { base, amplitude, period, noise_var, clip } => {
                if base.is_empty() || base.len() != amplitude.len() {
                    return Err(Error::config(
                        "generator.base and generator.amplitude must have equal non-zero length",
                    ));
                }
                positive("period", *period)?;
                positive("noise_var", *noise_var)?;
                positive("clip", *clip)
            }
            GeneratorKind::Misspecified { mean_period, var_low, var_high, var_period, .. } => {
                positive("mean_period", *mean_period)?;
                positive("var_period", *var_period)?;
                positive("var_low", *var_low)?;
                if var_high < var_low {
                    return Err(Error::config("generator.var_high must be at least generator.var_low"));
                }
                Ok(())
            }
        }
    }

    /// Draws `horizon` observations from the stream seeded by `seed`.
    pub fn generate(&self, seed: u64, horizon: usize) -> Result<Series> {
        self.validate()?;
        if horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut samples: Vec<f64> = Vec::with_capacity(horizon);
        let mut laws = Vec::with_capacity(horizon);
        let mut clamp_events = 0;
        let mut garch_var = None;
        for t in 0..horizon {
            let (mean, var) = match self {
                GeneratorKind::WellSpecifiedAr { coeffs, noise_var, clip } => {
                    (clipped_ar_mean(coeffs, &samples, *clip), *noise_var)
                }
                GeneratorKind::WellSpecifiedArch { coeffs, c, sigma_bar2 } => {
                    let mut v = c * sigma_bar2 / 2.0;
                    for (i, a) in coeffs.iter().enumerate() {
                        if let Some(j) = t.checked_sub(i + 1) {
                            v += a * (samples[j] * samples[j]).min(*sigma_bar2);
                        }
                    }
                    (0.0, v)
                }
                GeneratorKind::Garch11 { omega, a, b, c, sigma_bar2 } => {
                    let (lo, hi) = (c * sigma_bar2 / 2.0, *sigma_bar2);
                    let raw = match (garch_var, samples.last()) {
                        (Some(prev), Some(y)) => omega + a * y * y + b * prev,
                        _ if a + b < 1.0 => omega / (1.0 - a - b),
                        _ => hi,
                    };
                    let v = raw.clamp(lo, hi);
                    if v != raw {
                        clamp_events += 1;
                    }
                    garch_var = Some(v);
                    (0.0, v)
                }
                GeneratorKind::NonStationaryAr { base, amplitude, period, noise_var, clip } => {
                    let phase = (2.0 * std::f64::consts::PI * t as f64 / period).sin();
                    let mut coeffs: Vec<f64> = base.iter().zip(amplitude).map(|(b, a)| b + a * phase).collect();
                    let norm: f64 = coeffs.iter().map(|a| a.abs()).sum();
                    if norm > 1.0 {
                        coeffs.iter_mut().for_each(|a| *a /= norm);
                        clamp_events += 1;
                    }
                    (clipped_ar_mean(&coeffs, &samples, *clip), *noise_var)
                }
                GeneratorKind::Misspecified {
                    mean_offset,
                    mean_amplitude,
                    mean_period,
                    var_low,
                    var_high,
                    var_period,
                } => {
                    let tau = 2.0 * std::f64::consts::PI * t as f64;
                    let m = mean_offset + mean_amplitude * (tau / mean_period).sin();
                    let v = var_low + (var_high - var_low) * 0.5 * (1.0 + (tau / var_period).sin());
                    (m, v)
                }
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            samples.push(mean + var.sqrt() * z);
            laws.push(ConditionalLaw::gaussian(mean, var));
        }
        Ok(Series { samples, laws, clamp_events })
    }
}

fn clipped_ar_mean(coeffs: &[f64], history: &[f64], clip: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .filter_map(|(i, a)| history.len().checked_sub(i + 1).map(|j| a * history[j].clamp(-clip, clip)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_noise_has_zero_mean() {
        let g = GeneratorKind::WellSpecifiedAr { coeffs: vec![0.0], noise_var: 1.0, clip: 1.0 };
        let n = 1_000_000;
        let s = g.generate(17, n).unwrap();
        let mean = s.samples.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn same_seed_same_series() {
        let g = GeneratorKind::Garch11 { omega: 0.5, a: 0.2, b: 0.7, c: 1.5, sigma_bar2: 4.0 };
        assert_eq!(g.generate(3, 500).unwrap(), g.generate(3, 500).unwrap());
        assert_ne!(g.generate(3, 500).unwrap().samples, g.generate(4, 500).unwrap().samples);
    }

    #[test]
    fn arch_variances_stay_in_band() {
        let g = GeneratorKind::WellSpecifiedArch { coeffs: vec![0.25], c: 1.5, sigma_bar2: 4.0 };
        let s = g.generate(5, 100_000).unwrap();
        assert!(s.laws.iter().all(|l| (3.0..=4.0).contains(&l.variance)));
        assert_eq!(s.clamp_events, 0);
    }

    #[test]
    fn garch_is_clamped_into_band() {
        let g = GeneratorKind::Garch11 { omega: 0.1, a: 0.5, b: 0.49, c: 1.5, sigma_bar2: 4.0 };
        let s = g.generate(8, 10_000).unwrap();
        assert!(s.laws.iter().all(|l| (3.0..=4.0).contains(&l.variance)));
        assert!(s.clamp_events > 0);
    }

    #[test]
    fn ar_means_respect_the_clip() {
        let g = GeneratorKind::NonStationaryAr {
            base: vec![0.5, 0.2],
            amplitude: vec![0.6, 0.0],
            period: 50.0,
            noise_var: 4.0,
            clip: 0.7,
        };
        let s = g.generate(2, 5_000).unwrap();
        assert!(s.laws.iter().all(|l| l.mean.abs() <= 0.7 + 1e-12));
        assert!(s.clamp_events > 0);
    }

    #[test]
    fn laws_depend_only_on_the_past() {
        let g = GeneratorKind::WellSpecifiedAr { coeffs: vec![0.6, -0.2], noise_var: 1.0, clip: 1.0 };
        let s = g.generate(9, 50).unwrap();
        for t in 0..50 {
            assert_eq!(s.laws[t].mean, clipped_ar_mean(&[0.6, -0.2], &s.samples[..t], 1.0));
        }
    }

    #[test]
    fn rejects_bad_arch_coefficients() {
        let g = GeneratorKind::WellSpecifiedArch { coeffs: vec![0.3], c: 1.5, sigma_bar2: 4.0 };
        assert!(g.generate(1, 10).is_err());
    }
}
