//! Bernstein Online Aggregation with per-expert adaptive learning rates.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone)]
pub struct Boa {
    prior: DVector<f64>,
    log_prior: DVector<f64>,
    weights: DVector<f64>,
    cum_loss: DVector<f64>,
    sq_sums: DVector<f64>,
    eta: DVector<f64>,
    range_bound: f64,
    t: usize,
    clamp_events: usize,
}

impl Boa {
    pub fn new(prior: DVector<f64>, range_bound: f64) -> Result<Self> {
        let k = prior.len();
        if k == 0 {
            return Err(Error::contract("BOA needs at least one expert"));
        }
        if prior.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::contract("prior weights must be strictly positive"));
        }
        if (prior.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::contract(format!("prior must sum to one, sums to {}", prior.sum())));
        }
        if !(range_bound.is_finite() && range_bound > 0.0) {
            return Err(Error::contract("loss range bound must be positive"));
        }
        let cap = 1.0 / (2.0 * range_bound);
        Ok(Boa {
            log_prior: prior.map(f64::ln),
            weights: prior.clone(),
            prior,
            cum_loss: DVector::zeros(k),
            sq_sums: DVector::zeros(k),
            eta: DVector::from_element(k, cap),
            range_bound,
            t: 0,
            clamp_events: 0,
        })
    }

    pub fn uniform(k: usize, range_bound: f64) -> Result<Self> {
        Self::new(DVector::from_element(k, 1.0 / k as f64), range_bound)
    }

    pub fn len(&self) -> usize {
        self.prior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prior.is_empty()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn prior(&self) -> &DVector<f64> {
        &self.prior
    }

    pub fn learning_rates(&self) -> &DVector<f64> {
        &self.eta
    }

    pub fn cumulative_losses(&self) -> &DVector<f64> {
        &self.cum_loss
    }

    pub fn squared_deviation_sums(&self) -> &DVector<f64> {
        &self.sq_sums
    }

    pub fn range_bound(&self) -> f64 {
        self.range_bound
    }

    pub fn rounds(&self) -> usize {
        self.t
    }

    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    /// Incorporates one round of expert losses and recomputes the weights.
    ///
    /// Losses beyond `range_bound` in absolute value are clamped (and counted).
    pub fn step(&mut self, losses: &DVector<f64>) -> Result<()> {
        check_dim(self.len(), losses.len())?;
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::contract("expert losses must be finite"));
        }
        let b = self.range_bound;
        let mut clamped = losses.clone();
        for l in clamped.iter_mut() {
            if l.abs() > b {
                *l = l.clamp(-b, b);
                self.clamp_events += 1;
            }
        }
        self.t += 1;

        let mean = self.weights.dot(&clamped);
        let cap = 1.0 / (2.0 * b);
        for i in 0..self.len() {
            let dev = clamped[i] - mean;
            let sq = dev * dev;
            self.cum_loss[i] += dev + self.eta[i] * sq;
            self.sq_sums[i] += sq;
            let rate =
                if self.sq_sums[i] > 0.0 { (-self.log_prior[i] / self.sq_sums[i]).sqrt() } else { f64::INFINITY };
            self.eta[i] = rate.min(cap);
        }

        if self.len() == 1 {
            return Ok(());
        }
        // log of eta_i * pi_1i * exp(-eta_i L_i), shifted by its maximum.
        let logits: Vec<f64> =
            (0..self.len()).map(|i| self.eta[i].ln() + self.log_prior[i] - self.eta[i] * self.cum_loss[i]).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (w, l) in self.weights.iter_mut().zip(&logits) {
            *w = (l - max).exp();
            total += *w;
        }
        self.weights /= total;
        Ok(())
    }
}

/// High-probability stochastic regret bound of BOA against any single expert:
/// `2(2/a + GD) log(log(T)/pi_min) + 5 GD + (a (GD)^2 / 2 + 8/a) log(1/delta)`, for `T >= 4`.
pub fn boa_theorem_bound(
    alpha: f64,
    grad_bound: f64,
    diameter: f64,
    prior_min: f64,
    delta: f64,
    horizon: usize,
) -> Result<f64> {
    if horizon < 4 {
        return Err(Error::contract(format!("the BOA bound holds for T >= 4, got T = {horizon}")));
    }
    if !(alpha > 0.0 && grad_bound > 0.0 && diameter > 0.0) {
        return Err(Error::contract("bound parameters must be positive"));
    }
    if !(prior_min > 0.0 && prior_min < 1.0) {
        return Err(Error::contract(format!("smallest prior weight must lie in (0,1), got {prior_min}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::contract(format!("delta must lie in (0,1), got {delta}")));
    }
    let gd = grad_bound * diameter;
    let log_t = (horizon as f64).ln();
    Ok(2.0 * (2.0 / alpha + gd) * (log_t / prior_min).ln()
        + 5.0 * gd
        + (alpha * gd * gd / 2.0 + 8.0 / alpha) * (1.0 / delta).ln())
}

/// Deterministic second-order bound on the aggregation regret against
/// expert `i` after `T >= 4` rounds:
/// `sqrt(log(log(T)/pi_i) * S_i) + GD (5 + 2 log(log(T)/pi_i))`, where `S_i`
/// is the sum of squared deviations `(pi_t^T l_t - l_{t,i})^2`.
pub fn boa_pathwise_bound(prior_i: f64, range_bound: f64, horizon: usize, sq_sum_i: f64) -> f64 {
    let log_term = ((horizon as f64).ln() / prior_i).ln();
    (log_term * sq_sum_i).sqrt() + range_bound * (5.0 + 2.0 * log_term)
}

/// The second-order bound that the exponential-weights argument yields for the
/// learning rates `eta_i = sqrt(l_i / S_i) ^ 1/(2E)`, `l_i = log(1/pi_i)`:
/// `L_i max(sqrt(S_i / l_i), 2E) + 2 sqrt(2 l_i S_i) + 4E` with `L_i = log(log(T)/pi_i)`.
///
/// Looser than [`boa_pathwise_bound`] in the `sqrt(S_i)` coefficient, which the
/// tighter form cannot reach without retuning the learning rates.
pub fn boa_pathwise_bound_conservative(prior_i: f64, range_bound: f64, horizon: usize, sq_sum_i: f64) -> f64 {
    let log_term = ((horizon as f64).ln() / prior_i).ln();
    let log_prior = (1.0 / prior_i).ln();
    log_term * (sq_sum_i / log_prior).sqrt().max(2.0 * range_bound)
        + 2.0 * (2.0 * log_prior * sq_sum_i).sqrt()
        + 4.0 * range_bound
}

/// `sum_i pi_1i exp(-eta_i L_i)`, the potential that stays below `log T`.
pub fn boa_potential(boa: &Boa) -> f64 {
    (0..boa.len()).map(|i| boa.prior[i] * (-boa.eta[i] * boa.cum_loss[i]).exp()).sum()
}
