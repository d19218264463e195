//! Forecaster families seen from the simulator: observed losses for the
//! learners, true risks for the regret accounting.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::forecast::{
    alpha_constant, ar_features, ar_loss_grad, arch_sq_features, clamp_densities, joint_gaussian_loss_grad,
    kl_gaussian, kl_mixture, log_mix, mixture_loss_grad, qlik_loss_grad, ArConfig, ArchConfig, ConditionalLaw,
    ExpConcavity, GaussianForecast, JointConfig, MixtureConfig, KL_QUAD_TOL,
};
use crate::geometry::FeasibleSet;
use crate::quad;

use super::generator::Series;

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    /// `N(x^T f_t, sigma2)`; `y_bound` (default `D/sqrt2 + 4 sqrt(sigma2)`) sizes the gradient bound.
    Ar {
        p: usize,
        d: f64,
        #[serde(default = "one")]
        sigma2: f64,
        y_bound: Option<f64>,
    },
    /// `N(0, c sbar^2/2 + x^T s_t)`; `y2_bound` defaults to `16 sbar^2`.
    Arch { q: usize, c: f64, sigma_bar2: f64, y2_bound: Option<f64> },
    /// Joint mean and variance; `y_bound` defaults to `D/sqrt2 + 4 sbar`.
    Joint { p: usize, q: usize, d: f64, c: f64, sigma_bar2: f64, y_bound: Option<f64> },
    /// `x^T p_t` over fixed Gaussian components with densities clamped into `[m, M]`.
    Mixture { components: Vec<GaussianForecast>, density_floor: f64, density_cap: f64 },
}

/// Per-round data a forecaster sees, plus the law the outcome was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    /// Lag features (AR block first, then squared lags) or, for mixtures, the
    /// raw component densities at the outcome.
    pub features: DVector<f64>,
    pub law: ConditionalLaw,
    pub y: f64,
}

/// A Gaussian forecast `N(m, v)` together with `dm/dx` and `dv/dx`.
struct GaussianParts {
    mean: f64,
    var: f64,
    dmean: DVector<f64>,
    dvar: DVector<f64>,
}

/// Observed loss at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub grad: DVector<f64>,
    pub clamp_events: usize,
}

impl FamilySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            FamilySpec::Ar { .. } => self.ar_config().map(|_| ()),
            FamilySpec::Arch { .. } => self.arch_config().map(|_| ()),
            FamilySpec::Joint { .. } => {
                self.ar_config()?;
                self.arch_config()?;
                // the joint constant exists only under D^2 < (c-1) sbar^2 / 2
                self.alpha().map(|_| ())
            }
            FamilySpec::Mixture { .. } => {
                self.mixture_config()?;
                Ok(())
            }
        }
    }

    pub fn ar_config(&self) -> Result<ArConfig> {
        match *self {
            FamilySpec::Ar { p, d, sigma2, .. } => ArConfig::new(p, d, sigma2),
            FamilySpec::Joint { p, d, .. } => ArConfig::new(p, d, 1.0),
            _ => Err(Error::config("family has no AR block")),
        }
    }

    pub fn arch_config(&self) -> Result<ArchConfig> {
        match *self {
            FamilySpec::Arch { q, c, sigma_bar2, .. } | FamilySpec::Joint { q, c, sigma_bar2, .. } => {
                ArchConfig::new(q, c, sigma_bar2)
            }
            _ => Err(Error::config("family has no ARCH block")),
        }
    }

    fn joint_config(&self) -> Result<JointConfig> {
        Ok(JointConfig { ar: self.ar_config()?, arch: self.arch_config()? })
    }

    pub fn mixture_config(&self) -> Result<MixtureConfig> {
        match self {
            FamilySpec::Mixture { components, density_floor, density_cap } => {
                for c in components {
                    GaussianForecast::new(c.mean, c.variance)?;
                }
                MixtureConfig::new(components.len(), *density_floor, *density_cap)
            }
            _ => Err(Error::config("family is not a mixture")),
        }
    }

    /// Model orders `(p, q)`; zero where a block is absent.
    pub fn orders(&self) -> (usize, usize) {
        match *self {
            FamilySpec::Ar { p, .. } => (p, 0),
            FamilySpec::Arch { q, .. } => (0, q),
            FamilySpec::Joint { p, q, .. } => (p, q),
            FamilySpec::Mixture { ref components, .. } => (components.len(), 0),
        }
    }

    /// Same family with different model orders (ignored for mixtures).
    pub fn with_orders(&self, p: usize, q: usize) -> FamilySpec {
        let mut out = self.clone();
        match &mut out {
            FamilySpec::Ar { p: op, .. } => *op = p,
            FamilySpec::Arch { q: oq, .. } => *oq = q,
            FamilySpec::Joint { p: op, q: oq, .. } => {
                *op = p;
                *oq = q;
            }
            FamilySpec::Mixture { .. } => {}
        }
        out
    }

    pub fn dim(&self) -> usize {
        let (p, q) = self.orders();
        p + q
    }

    pub fn feasible_set(&self) -> Result<FeasibleSet> {
        Ok(match self {
            FamilySpec::Ar { .. } => self.ar_config()?.feasible_set(),
            FamilySpec::Arch { .. } => self.arch_config()?.feasible_set(),
            FamilySpec::Joint { .. } => self.joint_config()?.feasible_set(),
            FamilySpec::Mixture { .. } => self.mixture_config()?.feasible_set(),
        })
    }

    /// Exp-concavity constant of the family's risk.
    pub fn alpha(&self) -> Result<f64> {
        match *self {
            FamilySpec::Ar { d, sigma2, .. } => alpha_constant(ExpConcavity::ArMean { sigma2, d }),
            FamilySpec::Arch { c, .. } => alpha_constant(ExpConcavity::Variance { c }),
            FamilySpec::Joint { c, sigma_bar2, d, .. } => alpha_constant(ExpConcavity::Joint { c, sigma_bar2, d }),
            FamilySpec::Mixture { ref components, density_floor, density_cap } => {
                alpha_constant(ExpConcavity::Mixture {
                    k: components.len(),
                    density_ratio: density_cap / density_floor,
                })
            }
        }
    }

    /// Gradient norm bound `G` used for clipping and in the regret bounds.
    pub fn grad_bound(&self) -> Result<f64> {
        match *self {
            FamilySpec::Ar { y_bound, sigma2, .. } => {
                let cfg = self.ar_config()?;
                Ok(cfg.grad_bound(y_bound.unwrap_or(cfg.clip_level() + 4.0 * sigma2.sqrt())))
            }
            FamilySpec::Arch { y2_bound, sigma_bar2, .. } => {
                Ok(self.arch_config()?.grad_bound(y2_bound.unwrap_or(16.0 * sigma_bar2)))
            }
            FamilySpec::Joint { y_bound, .. } => {
                let cfg = self.joint_config()?;
                let clip = cfg.ar.clip_level();
                let r = clip + y_bound.unwrap_or(clip + 4.0 * cfg.arch.sigma_bar2.sqrt());
                let v = cfg.arch.floor();
                let mean_block = (cfg.ar.p as f64).sqrt() * clip * r / v;
                let var_block = 0.5 * (1.0 / v).max(r * r / (v * v)) * (cfg.arch.q as f64).sqrt() * cfg.arch.sigma_bar2;
                Ok(mean_block.hypot(var_block))
            }
            FamilySpec::Mixture { .. } => Ok(self.mixture_config()?.grad_bound()),
        }
    }

    /// Features of round `t` given the past observations and the outcome.
    pub fn features(&self, history: &[f64], y: f64) -> Result<DVector<f64>> {
        Ok(match self {
            FamilySpec::Ar { .. } => ar_features(history, &self.ar_config()?),
            FamilySpec::Arch { .. } => arch_sq_features(history, &self.arch_config()?),
            FamilySpec::Joint { .. } => {
                let cfg = self.joint_config()?;
                let f = ar_features(history, &cfg.ar);
                let s = arch_sq_features(history, &cfg.arch);
                DVector::from_iterator(f.len() + s.len(), f.iter().chain(s.iter()).copied())
            }
            FamilySpec::Mixture { components, .. } => {
                DVector::from_iterator(components.len(), components.iter().map(|c| c.density(y)))
            }
        })
    }

    /// Observed loss and gradient the learners consume.
    pub fn loss_grad(&self, x: &DVector<f64>, round: &Round) -> Result<LossEval> {
        check_dim(self.dim(), x.len())?;
        let (loss, grad, clamp_events) = match self {
            FamilySpec::Ar { .. } => {
                let (l, g) = ar_loss_grad(x, &round.features, round.y, &self.ar_config()?);
                (l, g, 0)
            }
            FamilySpec::Arch { .. } => {
                let (l, g) = qlik_loss_grad(x, &round.features, round.y, &self.arch_config()?);
                (l, g, 0)
            }
            FamilySpec::Joint { p, q, .. } => {
                let f = round.features.rows(0, *p).into_owned();
                let s = round.features.rows(*p, *q).into_owned();
                let (l, g) = joint_gaussian_loss_grad(x, &f, &s, round.y, &self.joint_config()?);
                (l, g, 0)
            }
            FamilySpec::Mixture { .. } => {
                let m = mixture_loss_grad(x, &round.features, &self.mixture_config()?)?;
                (m.loss, m.grad, m.clamp_events)
            }
        };
        Ok(LossEval { loss, grad, clamp_events })
    }

    fn gaussian_parts(&self, x: &DVector<f64>, features: &DVector<f64>) -> Result<GaussianParts> {
        let n = self.dim();
        let mut dmean = DVector::zeros(n);
        let mut dvar = DVector::zeros(n);
        let (mean, var) = match *self {
            FamilySpec::Ar { sigma2, .. } => {
                dmean.copy_from(features);
                (x.dot(features), sigma2)
            }
            FamilySpec::Arch { .. } => {
                dvar.copy_from(features);
                (0.0, self.arch_config()?.floor() + x.dot(features))
            }
            FamilySpec::Joint { p, q, .. } => {
                let floor = self.arch_config()?.floor();
                dmean.rows_mut(0, p).copy_from(&features.rows(0, p));
                dvar.rows_mut(p, q).copy_from(&features.rows(p, q));
                (x.dot(&dmean), floor + x.dot(&dvar))
            }
            FamilySpec::Mixture { .. } => return Err(Error::contract("mixture forecasts are not Gaussian")),
        };
        if !(var > 0.0) {
            return Err(Error::contract(format!("forecast variance {var} is not positive")));
        }
        Ok(GaussianParts { mean, var, dmean, dvar })
    }

    /// Gaussian forecast issued at `x` (not defined for mixtures).
    pub fn gaussian_forecast(&self, x: &DVector<f64>, features: &DVector<f64>) -> Result<GaussianForecast> {
        let g = self.gaussian_parts(x, features)?;
        Ok(GaussianForecast { mean: g.mean, variance: g.var })
    }

    /// True risk `KL(P_t, forecast(x))`.
    pub fn risk(&self, x: &DVector<f64>, round: &Round) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        match self {
            FamilySpec::Mixture { components, .. } => kl_mixture(&round.law, x, components),
            _ => {
                let g = self.gaussian_parts(x, &round.features)?;
                Ok(kl_gaussian(&round.law, &GaussianForecast { mean: g.mean, variance: g.var }))
            }
        }
    }

    /// True risk and its gradient in `x`.
    pub fn risk_grad(&self, x: &DVector<f64>, round: &Round) -> Result<(f64, DVector<f64>)> {
        check_dim(self.dim(), x.len())?;
        if let FamilySpec::Mixture { components, .. } = self {
            let risk = kl_mixture(&round.law, x, components)?;
            // d/dx_k KL = -E_P[phi_k / (x^T phi)]
            let (lo, hi) = integration_range(&round.law, components);
            let w = x.as_slice();
            let mut grad = DVector::zeros(components.len());
            for (k, c) in components.iter().enumerate() {
                grad[k] = -quad::integrate(
                    |y| (round.law.log_density(y) + c.log_density(y) - log_mix(w, components, y)).exp(),
                    lo,
                    hi,
                    KL_QUAD_TOL,
                )?;
            }
            return Ok((risk, grad));
        }
        let g = self.gaussian_parts(x, &round.features)?;
        let risk = kl_gaussian(&round.law, &GaussianForecast { mean: g.mean, variance: g.var });
        let dm = round.law.mean - g.mean;
        let d_mean = -dm / g.var;
        let d_var = 0.5 * (1.0 / g.var - (round.law.variance + dm * dm) / (g.var * g.var));
        Ok((risk, g.dmean * d_mean + g.dvar * d_var))
    }

    /// Exp-concavity margin at round `t` for the pair `(b, a)`:
    /// `L(a) - L(b) - grad L(a)^T h + (alpha/2) E[(grad l(a)^T h)^2]` with `h = a - b`.
    /// Non-positive whenever the stochastic exp-concavity inequality holds.
    pub fn h2_margin(&self, a: &DVector<f64>, b: &DVector<f64>, round: &Round, alpha: f64) -> Result<f64> {
        check_dim(self.dim(), a.len())?;
        check_dim(self.dim(), b.len())?;
        let h = a - b;
        if let FamilySpec::Mixture { components, .. } = self {
            let cfg = self.mixture_config()?;
            let (lo, hi) = integration_range(&round.law, components);
            // pointwise margin: log(1 - u) + u + (alpha/2) u^2 with u = d^T h / a^T d
            return quad::integrate(
                |y| {
                    let lp = round.law.log_density(y);
                    if lp == f64::NEG_INFINITY {
                        return 0.0;
                    }
                    let raw = DVector::from_iterator(components.len(), components.iter().map(|c| c.density(y)));
                    let (d, _) = clamp_densities(&raw, &cfg);
                    let u = d.dot(&h) / a.dot(&d);
                    lp.exp() * ((-u).ln_1p() + u + 0.5 * alpha * u * u)
                },
                lo,
                hi,
                KL_QUAD_TOL,
            );
        }
        let (la, grad_a) = self.risk_grad(a, round)?;
        let lb = self.risk(b, round)?;
        Ok(la - lb - grad_a.dot(&h) + 0.5 * alpha * self.directional_second_moment(a, &h, round)?)
    }

    /// `E_P[(grad l(a)^T h)^2]` for the Gaussian families, from the first four
    /// moments of the law about the forecast mean.
    pub fn directional_second_moment(&self, a: &DVector<f64>, h: &DVector<f64>, round: &Round) -> Result<f64> {
        let g = self.gaussian_parts(a, &round.features)?;
        let (sa, sb) = (g.dmean.dot(h), g.dvar.dot(h));
        let v = g.var;
        // grad l^T h = c0 + c1 U + c2 U^2 with U = Y - mean
        let (c0, c1, c2) = (sb / (2.0 * v), -sa / v, -sb / (2.0 * v * v));
        let [m1, m2, m3, m4] = round.law.moments_about(g.mean);
        Ok(c0 * c0 + 2.0 * c0 * c1 * m1 + (c1 * c1 + 2.0 * c0 * c2) * m2 + 2.0 * c1 * c2 * m3 + c2 * c2 * m4)
    }
}

fn integration_range(law: &ConditionalLaw, components: &[GaussianForecast]) -> (f64, f64) {
    let (mut lo, mut hi) = law.support_hint();
    for c in components {
        let s = c.variance.sqrt();
        lo = lo.min(c.mean - 10.0 * s);
        hi = hi.max(c.mean + 10.0 * s);
    }
    (lo, hi)
}

/// All rounds of one simulated series, seen through one forecaster family.
#[derive(Debug, Clone)]
pub struct RiskModel {
    pub family: FamilySpec,
    pub rounds: Vec<Round>,
}

impl RiskModel {
    pub fn new(family: FamilySpec, series: &Series) -> Result<Self> {
        family.validate()?;
        let rounds = series
            .samples
            .iter()
            .zip(&series.laws)
            .enumerate()
            .map(|(t, (&y, law))| {
                Ok(Round { features: family.features(&series.samples[..t], y)?, law: law.clone(), y })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RiskModel { family, rounds })
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn risk(&self, t: usize, x: &DVector<f64>) -> Result<f64> {
        self.family.risk(x, &self.rounds[t])
    }

    pub fn loss_grad(&self, t: usize, x: &DVector<f64>) -> Result<LossEval> {
        self.family.loss_grad(x, &self.rounds[t])
    }

    /// `sum_{t < n} L_t(x)`.
    pub fn cumulative_risk(&self, n: usize, x: &DVector<f64>) -> Result<f64> {
        self.rounds[..n].iter().map(|r| self.family.risk(x, r)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::generator::GeneratorKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn ar_model() -> RiskModel {
        let g = GeneratorKind::WellSpecifiedAr { coeffs: vec![0.5, -0.3], noise_var: 1.0, clip: 1.0 };
        let fam = FamilySpec::Ar { p: 2, d: 2f64.sqrt(), sigma2: 1.0, y_bound: None };
        RiskModel::new(fam, &g.generate(1, 50).unwrap()).unwrap()
    }

    #[test]
    fn well_specified_risk_vanishes_at_truth() {
        let m = ar_model();
        let truth = DVector::from_row_slice(&[0.5, -0.3]);
        assert!(m.cumulative_risk(50, &truth).unwrap().abs() < 1e-12);
        let (_, g) = m.family.risk_grad(&truth, &m.rounds[10]).unwrap();
        assert!(g.amax() < 1e-12);
    }

    #[test]
    fn identical_points_have_zero_margin() {
        let m = ar_model();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let set = m.family.feasible_set().unwrap();
        for t in 0..20 {
            let x = set.sample(&mut rng);
            assert_eq!(m.family.h2_margin(&x, &x, &m.rounds[t], 0.5).unwrap(), 0.0);
        }
    }

    #[test]
    fn ar_second_moment_matches_direct_formula() {
        let m = ar_model();
        let r = &m.rounds[7];
        let a = DVector::from_row_slice(&[0.2, 0.1]);
        let h = DVector::from_row_slice(&[0.3, -0.4]);
        let mhat = a.dot(&r.features);
        let direct = ((mhat - r.law.mean).powi(2) + r.law.variance) * r.features.dot(&h).powi(2);
        assert!((m.family.directional_second_moment(&a, &h, r).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn joint_family_requires_the_diameter_condition() {
        let ok = FamilySpec::Joint { p: 1, q: 1, d: 0.5, c: 1.5, sigma_bar2: 4.0, y_bound: None };
        assert!(ok.validate().is_ok());
        let bad = FamilySpec::Joint { p: 1, q: 1, d: 1.0, c: 1.5, sigma_bar2: 4.0, y_bound: None };
        assert!(bad.validate().is_err());
    }
}
