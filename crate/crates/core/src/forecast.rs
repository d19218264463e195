//! Gaussian and mixture probabilistic forecasters under the logarithmic score.
//!
//! Four families are provided:
//!
//! * AR(p) mean forecasts `N(x^T f_t, sigma^2)` with clipped lag features,
//!   `x` in the unit l1 ball;
//! * ARCH(q) variance forecasts `N(0, c sbar^2/2 + x^T s_t)` with squared lags
//!   capped at `sbar^2`, `x` in the positive l1 ball of radius `1 - c/2`;
//! * joint mean/variance forecasts over the product of both sets;
//! * mixtures `x^T p_t` of fixed component densities, `x` in the simplex.
//!
//! Learners consume the observable losses (squared residual, quasi-likelihood,
//! negative log density); the simulator evaluates the true risks with the KL
//! oracles at the bottom of this module.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::FeasibleSet;
use crate::quad;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianForecast {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianForecast {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0 && mean.is_finite()) {
            return Err(Error::contract(format!(
                "Gaussian forecast needs finite mean and positive variance, got N({mean}, {variance})"
            )));
        }
        Ok(GaussianForecast { mean, variance })
    }

    pub fn log_density(&self, y: f64) -> f64 {
        let r = y - self.mean;
        -0.5 * (LN_2PI + self.variance.ln() + r * r / self.variance)
    }

    pub fn density(&self, y: f64) -> f64 {
        self.log_density(y).exp()
    }
}

/// A finite Gaussian mixture, used as a non-Gaussian conditional law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub components: Vec<GaussianForecast>,
}

impl GaussianMixture {
    pub fn log_density(&self, y: f64) -> f64 {
        log_mix(&self.weights, &self.components, y)
    }
}

pub(crate) fn log_mix(weights: &[f64], components: &[GaussianForecast], y: f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let logs: Vec<f64> = weights
        .iter()
        .zip(components)
        .map(|(w, c)| {
            let l = if *w > 0.0 { w.ln() + c.log_density(y) } else { f64::NEG_INFINITY };
            max = max.max(l);
            l
        })
        .collect();
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LawShape {
    Gaussian,
    Mixture(GaussianMixture),
}

/// Conditional law of the next observation given the past.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalLaw {
    pub mean: f64,
    pub variance: f64,
    pub shape: LawShape,
}

impl ConditionalLaw {
    pub fn gaussian(mean: f64, variance: f64) -> Self {
        ConditionalLaw { mean, variance, shape: LawShape::Gaussian }
    }

    pub fn mixture(mix: GaussianMixture) -> Result<Self> {
        if mix.weights.len() != mix.components.len() || mix.weights.is_empty() {
            return Err(Error::contract("mixture weights and components must match"));
        }
        let total: f64 = mix.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || mix.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::contract("mixture weights must form a probability vector"));
        }
        let mean: f64 = mix.weights.iter().zip(&mix.components).map(|(w, c)| w * c.mean).sum();
        let second: f64 =
            mix.weights.iter().zip(&mix.components).map(|(w, c)| w * (c.variance + c.mean * c.mean)).sum();
        Ok(ConditionalLaw { mean, variance: second - mean * mean, shape: LawShape::Mixture(mix) })
    }

    pub fn log_density(&self, y: f64) -> f64 {
        match &self.shape {
            LawShape::Gaussian => GaussianForecast { mean: self.mean, variance: self.variance }.log_density(y),
            LawShape::Mixture(m) => m.log_density(y),
        }
    }

    /// Range `[lo, hi]` covering ten standard deviations of the law (of every component for mixtures).
    pub fn support_hint(&self) -> (f64, f64) {
        match &self.shape {
            LawShape::Gaussian => {
                let s = self.variance.sqrt();
                (self.mean - 10.0 * s, self.mean + 10.0 * s)
            }
            LawShape::Mixture(m) => m.components.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                let s = c.variance.sqrt();
                (lo.min(c.mean - 10.0 * s), hi.max(c.mean + 10.0 * s))
            }),
        }
    }

    /// Raw moments `E[(Y - center)^k]` for `k = 1..=4`; exact for Gaussian and
    /// Gaussian-mixture laws.
    pub fn moments_about(&self, center: f64) -> [f64; 4] {
        let gauss = |m: f64, v: f64| {
            let d = m - center;
            [d, d * d + v, d.powi(3) + 3.0 * d * v, d.powi(4) + 6.0 * d * d * v + 3.0 * v * v]
        };
        match &self.shape {
            LawShape::Gaussian => gauss(self.mean, self.variance),
            LawShape::Mixture(mix) => {
                let mut out = [0.0; 4];
                for (w, c) in mix.weights.iter().zip(&mix.components) {
                    for (o, g) in out.iter_mut().zip(gauss(c.mean, c.variance)) {
                        *o += w * g;
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArConfig {
    pub p: usize,
    /// Mean-diameter parameter: lags are clipped to `[-D/sqrt 2, D/sqrt 2]`.
    pub d: f64,
    /// Fixed forecast variance.
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
}

fn default_sigma2() -> f64 {
    1.0
}

impl ArConfig {
    pub fn new(p: usize, d: f64, sigma2: f64) -> Result<Self> {
        let cfg = ArConfig { p, d, sigma2 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::config("AR order p must be at least 1"));
        }
        if !(self.d.is_finite() && self.d > 0.0) {
            return Err(Error::config("AR mean-diameter D must be positive"));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::config("AR forecast variance sigma2 must be positive"));
        }
        Ok(())
    }

    pub fn clip_level(&self) -> f64 {
        self.d / std::f64::consts::SQRT_2
    }

    pub fn feasible_set(&self) -> FeasibleSet {
        FeasibleSet::l1_ball(self.p, 1.0)
    }

    /// Gradient norm bound when `|y| <= y_bound`: `sqrt(p) (D/sqrt2) (D/sqrt2 + y_bound) / sigma^2`.
    pub fn grad_bound(&self, y_bound: f64) -> f64 {
        let c = self.clip_level();
        (self.p as f64).sqrt() * c * (c + y_bound) / self.sigma2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub q: usize,
    pub c: f64,
    pub sigma_bar2: f64,
}

impl ArchConfig {
    pub fn new(q: usize, c: f64, sigma_bar2: f64) -> Result<Self> {
        let cfg = ArchConfig { q, c, sigma_bar2 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::config("ARCH order q must be at least 1"));
        }
        if !(self.c > 1.0 && self.c < 2.0) {
            return Err(Error::config(format!("ARCH constant c must lie in (1,2), got {}", self.c)));
        }
        if !(self.sigma_bar2.is_finite() && self.sigma_bar2 > 0.0) {
            return Err(Error::config("ARCH variance cap sigma_bar2 must be positive"));
        }
        Ok(())
    }

    pub fn floor(&self) -> f64 {
        self.c * self.sigma_bar2 / 2.0
    }

    pub fn radius(&self) -> f64 {
        1.0 - self.c / 2.0
    }

    pub fn feasible_set(&self) -> FeasibleSet {
        FeasibleSet::positive_l1(self.q, self.radius())
    }

    /// Gradient norm bound of the quasi-likelihood loss when `y^2 <= y2_bound`.
    pub fn grad_bound(&self, y2_bound: f64) -> f64 {
        let v = self.floor();
        let worst = (1.0 / v).max(y2_bound / (v * v) - 1.0 / self.sigma_bar2);
        0.5 * worst * self.sigma_bar2 * (self.q as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub k: usize,
    /// Density lower bound `m`.
    pub density_floor: f64,
    /// Density upper bound `M`.
    pub density_cap: f64,
}

impl MixtureConfig {
    pub fn new(k: usize, density_floor: f64, density_cap: f64) -> Result<Self> {
        let cfg = MixtureConfig { k, density_floor, density_cap };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("mixture needs at least one component"));
        }
        if !(self.density_floor > 0.0 && self.density_floor <= self.density_cap && self.density_cap.is_finite()) {
            return Err(Error::config("mixture density bounds need 0 < m <= M < inf"));
        }
        Ok(())
    }

    pub fn grad_bound(&self) -> f64 {
        (self.k as f64).sqrt() * self.density_cap / self.density_floor
    }

    pub fn feasible_set(&self) -> FeasibleSet {
        FeasibleSet::simplex(self.k)
    }
}

/// Last `p` observations (most recent first), clipped to `[-D/sqrt2, D/sqrt2]`,
/// zero-padded at the start of the series.
pub fn ar_features(history: &[f64], cfg: &ArConfig) -> DVector<f64> {
    let clip = cfg.clip_level();
    DVector::from_fn(cfg.p, |i, _| history.len().checked_sub(i + 1).map_or(0.0, |j| history[j].clamp(-clip, clip)))
}

/// Last `q` squared observations (most recent first), capped at `sbar^2`, zero-padded.
pub fn arch_sq_features(history: &[f64], cfg: &ArchConfig) -> DVector<f64> {
    DVector::from_fn(cfg.q, |i, _| {
        history.len().checked_sub(i + 1).map_or(0.0, |j| (history[j] * history[j]).min(cfg.sigma_bar2))
    })
}

/// Squared-residual loss `(x^T f - y)^2 / (2 sigma^2)` and its gradient.
pub fn ar_loss_grad(x: &DVector<f64>, features: &DVector<f64>, y: f64, cfg: &ArConfig) -> (f64, DVector<f64>) {
    let r = x.dot(features) - y;
    (0.5 * r * r / cfg.sigma2, features * (r / cfg.sigma2))
}

/// `c sbar^2 / 2 + x^T s`.
pub fn arch_variance(x: &DVector<f64>, sq_features: &DVector<f64>, cfg: &ArchConfig) -> f64 {
    cfg.floor() + x.dot(sq_features)
}

/// Quasi-likelihood loss `(log v + y^2 / v) / 2` with `v = arch_variance(x)`.
pub fn qlik_loss_grad(
    x: &DVector<f64>,
    sq_features: &DVector<f64>,
    y_centered: f64,
    cfg: &ArchConfig,
) -> (f64, DVector<f64>) {
    let v = arch_variance(x, sq_features, cfg);
    let y2 = y_centered * y_centered;
    let loss = 0.5 * (v.ln() + y2 / v);
    let dv = 0.5 * (1.0 / v - y2 / (v * v));
    (loss, sq_features * dv)
}

/// Joint mean/variance forecaster; `x = (mean block of length p, variance block of length q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub ar: ArConfig,
    pub arch: ArchConfig,
}

impl JointConfig {
    pub fn dim(&self) -> usize {
        self.ar.p + self.arch.q
    }

    pub fn feasible_set(&self) -> FeasibleSet {
        FeasibleSet::product(vec![self.ar.feasible_set(), self.arch.feasible_set()])
    }

    pub fn forecast(&self, x: &DVector<f64>, ar_f: &DVector<f64>, sq_f: &DVector<f64>) -> GaussianForecast {
        let p = self.ar.p;
        let mean = x.rows(0, p).dot(ar_f);
        let variance = self.arch.floor() + x.rows(p, self.arch.q).dot(sq_f);
        GaussianForecast { mean, variance }
    }
}

/// Negative log density of `N(m(x), v(x))` at `y`, with its gradient.
pub fn joint_gaussian_loss_grad(
    x: &DVector<f64>,
    ar_features: &DVector<f64>,
    sq_features: &DVector<f64>,
    y: f64,
    cfg: &JointConfig,
) -> (f64, DVector<f64>) {
    let p = cfg.ar.p;
    let q = cfg.arch.q;
    let f = cfg.forecast(x, ar_features, sq_features);
    let r = y - f.mean;
    let v = f.variance;
    let loss = 0.5 * (LN_2PI + v.ln() + r * r / v);
    let mut grad = DVector::zeros(p + q);
    grad.rows_mut(0, p).copy_from(&(ar_features * (-r / v)));
    grad.rows_mut(p, q).copy_from(&(sq_features * (0.5 * (1.0 / v - r * r / (v * v)))));
    (loss, grad)
}

/// Result of a mixture loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureLoss {
    pub loss: f64,
    pub grad: DVector<f64>,
    /// Number of component densities clamped into `[m, M]`.
    pub clamp_events: usize,
}

pub fn clamp_densities(densities: &DVector<f64>, cfg: &MixtureConfig) -> (DVector<f64>, usize) {
    let mut events = 0;
    let clamped = densities.map(|d| {
        let c = d.clamp(cfg.density_floor, cfg.density_cap);
        if c != d {
            events += 1;
        }
        c
    });
    (clamped, events)
}

/// `-log(x^T d)` for the clamped densities `d` at the observation.
pub fn mixture_loss_grad(x: &DVector<f64>, densities_at_y: &DVector<f64>, cfg: &MixtureConfig) -> Result<MixtureLoss> {
    check_dim(cfg.k, x.len())?;
    check_dim(cfg.k, densities_at_y.len())?;
    let (d, clamp_events) = clamp_densities(densities_at_y, cfg);
    let mix = x.dot(&d);
    if !(mix > 0.0) {
        return Err(Error::contract("mixture density at the observation is not positive"));
    }
    Ok(MixtureLoss { loss: -mix.ln(), grad: d / (-mix), clamp_events })
}

/// Which exp-concavity constant to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpConcavity {
    /// `sigma^2 / D^2`.
    ArMean { sigma2: f64, d: f64 },
    /// `(c-1) c^2 / (2 (2-c)^2)`.
    Variance { c: f64 },
    /// `c^2 ((c-1) sbar^2/2 - D^2) / (4 D^2 (sbar^2 + 1/2))`, requires `D^2 < (c-1) sbar^2 / 2`.
    Joint { c: f64, sigma_bar2: f64, d: f64 },
    /// `(1/2) min(1, 1/(8G))` with `G = sqrt(K) M/m`.
    Mixture { k: usize, density_ratio: f64 },
}

pub fn alpha_constant(setting: ExpConcavity) -> Result<f64> {
    match setting {
        ExpConcavity::ArMean { sigma2, d } => {
            if !(sigma2 > 0.0 && d > 0.0) {
                return Err(Error::config("ArMean needs sigma2 > 0 and D > 0"));
            }
            Ok(sigma2 / (d * d))
        }
        ExpConcavity::Variance { c } => {
            if !(c > 1.0 && c < 2.0) {
                return Err(Error::config(format!("c must lie in (1,2), got {c}")));
            }
            Ok((c - 1.0) * c * c / (2.0 * (2.0 - c).powi(2)))
        }
        ExpConcavity::Joint { c, sigma_bar2, d } => {
            if !(c > 1.0 && c < 2.0) {
                return Err(Error::config(format!("c must lie in (1,2), got {c}")));
            }
            let slack = (c - 1.0) * sigma_bar2 / 2.0 - d * d;
            if !(d > 0.0 && slack > 0.0) {
                return Err(Error::config(format!(
                    "joint forecaster requires D^2 < (c-1) sigma_bar2 / 2 (D^2 = {}, bound = {})",
                    d * d,
                    (c - 1.0) * sigma_bar2 / 2.0
                )));
            }
            Ok(c * c * slack / (4.0 * d * d * (sigma_bar2 + 0.5)))
        }
        ExpConcavity::Mixture { k, density_ratio } => {
            if k == 0 || !(density_ratio >= 1.0) {
                return Err(Error::config("mixture needs K >= 1 and M/m >= 1"));
            }
            let g = (k as f64).sqrt() * density_ratio;
            Ok(0.5 * (1.0f64).min(1.0 / (8.0 * g)))
        }
    }
}

/// `KL(P, q)` for a Gaussian forecast `q`, in closed form from the first two
/// moments of `P`.
///
/// Exact when `P` is Gaussian; for other laws the Gaussian entropy replaces the
/// true one, a forecast-independent offset that cancels in every regret.
pub fn kl_gaussian(p: &ConditionalLaw, q: &GaussianForecast) -> f64 {
    let dm = p.mean - q.mean;
    0.5 * ((q.variance / p.variance).ln() + (p.variance + dm * dm) / q.variance - 1.0)
}

/// Absolute tolerance used by the mixture KL quadrature.
pub const KL_QUAD_TOL: f64 = 1e-8;

/// `KL(P, sum_i w_i N_i)` by adaptive quadrature over ten standard deviations of
/// every law involved.
pub fn kl_mixture(p: &ConditionalLaw, weights: &DVector<f64>, components: &[GaussianForecast]) -> Result<f64> {
    check_dim(components.len(), weights.len())?;
    let (mut lo, mut hi) = p.support_hint();
    for c in components {
        let s = c.variance.sqrt();
        lo = lo.min(c.mean - 10.0 * s);
        hi = hi.max(c.mean + 10.0 * s);
    }
    let w = weights.as_slice();
    let kl = quad::integrate(
        |y| {
            let lp = p.log_density(y);
            if lp == f64::NEG_INFINITY {
                return 0.0;
            }
            lp.exp() * (lp - log_mix(w, components, y))
        },
        lo,
        hi,
        KL_QUAD_TOL,
    )?;
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn ar_features_clip_and_pad() {
        let cfg = ArConfig::new(2, 2f64.sqrt(), 1.0).unwrap();
        assert_eq!(ar_features(&[9.0, -0.3, 0.5], &cfg), v(&[0.5, -0.3]));
        let one = ArConfig::new(1, 2f64.sqrt(), 1.0).unwrap();
        assert!((ar_features(&[5.0], &one)[0] - 1.0).abs() < 1e-15);
        assert_eq!(ar_features(&[], &cfg), v(&[0.0, 0.0]));
    }

    #[test]
    fn ar_loss_values() {
        let cfg = ArConfig::new(1, 2.0, 1.0).unwrap();
        let (l, g) = ar_loss_grad(&v(&[0.0]), &v(&[0.7]), 0.0, &cfg);
        assert_eq!((l, g[0]), (0.0, 0.0));
        let (l, g) = ar_loss_grad(&v(&[1.0]), &v(&[1.0]), 0.0, &cfg);
        assert_eq!((l, g[0]), (0.5, 1.0));
    }

    #[test]
    fn arch_variance_values() {
        let cfg = ArchConfig::new(2, 1.5, 4.0).unwrap();
        assert_eq!(arch_variance(&v(&[0.0, 0.0]), &v(&[4.0, 1.0]), &cfg), 3.0);
        let val = arch_variance(&v(&[0.1, 0.05]), &v(&[4.0, 1.0]), &cfg);
        assert!((val - 3.45).abs() < 1e-15);
        let val = arch_variance(&v(&[0.15, 0.1]), &v(&[4.0, 4.0]), &cfg);
        assert!((val - 4.0).abs() < 1e-15);
        assert_eq!(arch_sq_features(&[3.0, 1.0], &cfg), v(&[1.0, 4.0]));
    }

    #[test]
    fn qlik_values() {
        let cfg = ArchConfig::new(1, 1.5, 4.0).unwrap();
        let (l, _) = qlik_loss_grad(&v(&[0.0]), &v(&[2.0]), 2.0, &cfg);
        assert!((l - 0.5 * (3f64.ln() + 4.0 / 3.0)).abs() < 1e-15);
        assert!((l - 1.2160).abs() < 1e-4);
        // y^2 equal to the forecast variance is a stationary point
        let (_, g) = qlik_loss_grad(&v(&[0.1]), &v(&[2.0]), 3.2f64.sqrt(), &cfg);
        assert!(g.amax() < 1e-15);
    }

    #[test]
    fn joint_values() {
        let cfg = JointConfig { ar: ArConfig::new(1, 0.9, 1.0).unwrap(), arch: ArchConfig::new(1, 1.5, 4.0).unwrap() };
        let (l, _) = joint_gaussian_loss_grad(&v(&[0.0, 0.0]), &v(&[0.3]), &v(&[1.0]), 1.0, &cfg);
        assert!((l - 0.5 * ((6.0 * std::f64::consts::PI).ln() + 1.0 / 3.0)).abs() < 1e-14);
        assert!((l - 1.6349).abs() < 1e-4);

        let x = v(&[0.5, 0.1]);
        let ar_f = v(&[0.4]);
        let sq_f = v(&[2.0]);
        let mhat = 0.2;
        let (_, g) = joint_gaussian_loss_grad(&x, &ar_f, &sq_f, mhat, &cfg);
        let var = 3.0 + 0.2;
        assert!(g[0].abs() < 1e-15);
        assert!((g[1] - sq_f[0] / (2.0 * var)).abs() < 1e-15);
    }

    #[test]
    fn mixture_values() {
        let cfg = MixtureConfig::new(1, 0.01, 1.0).unwrap();
        let r = mixture_loss_grad(&v(&[1.0]), &v(&[0.3]), &cfg).unwrap();
        assert!((r.loss + 0.3f64.ln()).abs() < 1e-15);

        let cfg = MixtureConfig::new(2, 0.01, 1.0).unwrap();
        let r = mixture_loss_grad(&v(&[0.5, 0.5]), &v(&[0.2, 0.6]), &cfg).unwrap();
        assert!((r.loss + 0.4f64.ln()).abs() < 1e-15);
        assert!((r.loss - 0.9163).abs() < 1e-4);
        assert!((r.grad - v(&[-0.5, -1.5])).amax() < 1e-14);
        assert_eq!(r.clamp_events, 0);

        let r = mixture_loss_grad(&v(&[0.5, 0.5]), &v(&[0.0, 3.0]), &cfg).unwrap();
        assert_eq!(r.clamp_events, 2);
        assert!(r.grad.norm() <= cfg.grad_bound() + 1e-12);
    }

    #[test]
    fn alpha_values() {
        assert_eq!(alpha_constant(ExpConcavity::ArMean { sigma2: 1.0, d: 2.0 }).unwrap(), 0.25);
        assert!((alpha_constant(ExpConcavity::Variance { c: 1.5 }).unwrap() - 2.25).abs() < 1e-15);
        let a = alpha_constant(ExpConcavity::Mixture { k: 4, density_ratio: 10.0 }).unwrap();
        assert!((a - 0.003125).abs() < 1e-15);
        assert!(alpha_constant(ExpConcavity::Joint { c: 1.5, sigma_bar2: 4.0, d: 1.0 }).is_err());
        let a = alpha_constant(ExpConcavity::Joint { c: 1.5, sigma_bar2: 4.0, d: 0.5 }).unwrap();
        assert!((a - 2.25 * 0.75 / (4.0 * 0.25 * 4.5)).abs() < 1e-15);
    }

    #[test]
    fn kl_gaussian_values() {
        let p = ConditionalLaw::gaussian(0.3, 1.7);
        assert_eq!(kl_gaussian(&p, &GaussianForecast { mean: 0.3, variance: 1.7 }), 0.0);
        let kl = kl_gaussian(&ConditionalLaw::gaussian(0.0, 1.0), &GaussianForecast { mean: 0.0, variance: 2.0 });
        assert!((kl - 0.5 * (2f64.ln() - 0.5)).abs() < 1e-15);
        assert!((kl - 0.0966).abs() < 1e-4);
    }

    #[test]
    fn kl_gaussian_is_positive_off_diagonal() {
        for i in 0..7 {
            for j in 0..7 {
                let (m, s) = (-1.5 + 0.5 * i as f64, 0.5 + 0.25 * j as f64);
                let kl = kl_gaussian(&ConditionalLaw::gaussian(0.0, 1.0), &GaussianForecast { mean: m, variance: s });
                if m == 0.0 && s == 1.0 {
                    assert_eq!(kl, 0.0);
                } else {
                    assert!(kl > 0.0);
                }
            }
        }
    }

    #[test]
    fn kl_mixture_consistency() {
        let p = ConditionalLaw::gaussian(0.0, 1.0);
        let comps = [GaussianForecast { mean: 0.0, variance: 2.0 }];
        let kl = kl_mixture(&p, &v(&[1.0]), &comps).unwrap();
        let closed = kl_gaussian(&p, &comps[0]);
        assert!((kl - closed).abs() < 1e-6);

        let comps = [GaussianForecast { mean: -2.0, variance: 1.0 }, GaussianForecast { mean: 1.0, variance: 0.5 }];
        let mix = GaussianMixture { weights: vec![0.3, 0.7], components: comps.to_vec() };
        let p = ConditionalLaw::mixture(mix).unwrap();
        assert!(kl_mixture(&p, &v(&[0.3, 0.7]), &comps).unwrap() < 1e-7);
    }

    #[test]
    fn kl_mixture_decreases_toward_truth() {
        let p = ConditionalLaw::gaussian(1.0, 1.0);
        let comps = [GaussianForecast { mean: -1.0, variance: 1.0 }, GaussianForecast { mean: 1.0, variance: 1.0 }];
        let kls: Vec<f64> =
            [0.1, 0.5, 0.9].iter().map(|w| kl_mixture(&p, &v(&[1.0 - w, *w]), &comps).unwrap()).collect();
        assert!(kls[0] > kls[1] && kls[1] > kls[2]);
    }

    #[test]
    fn kl_gaussian_matches_monte_carlo() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let p = ConditionalLaw::gaussian(0.2, 1.3);
        let q = GaussianForecast { mean: -0.4, variance: 0.8 };
        let pf = GaussianForecast { mean: p.mean, variance: p.variance };
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let y = p.mean + p.variance.sqrt() * z;
            let r = pf.log_density(y) - q.log_density(y);
            s += r;
            s2 += r * r;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - kl_gaussian(&p, &q)).abs() <= 3.0 * se);
    }
}
