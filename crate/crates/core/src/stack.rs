//! BOA-ONS: a bank of ONS learners aggregated by BOA on linearized losses.
//!
//! Every expert lives on a coordinate subset of a common ambient prediction
//! space (zero elsewhere), which is how AR/ARCH experts of different orders are
//! compared on one footing.

use nalgebra::DVector;

use crate::boa::Boa;
use crate::error::{check_dim, Error, Result};
use crate::ons::{clip_to_norm, Ons};

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertLabel {
    pub gamma: f64,
    /// Model order `(p, q)`; zero where a block is absent.
    pub order: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct Expert {
    pub ons: Ons,
    pub label: ExpertLabel,
    /// Ambient coordinates occupied by this expert, in the order of its own coordinates.
    pub coords: Vec<usize>,
}

impl Expert {
    /// Expert that spans the whole ambient space.
    pub fn full(ons: Ons, label: ExpertLabel) -> Self {
        let coords = (0..ons.dim()).collect();
        Expert { ons, label, coords }
    }

    pub fn embedded(ons: Ons, label: ExpertLabel, coords: Vec<usize>) -> Self {
        Expert { ons, label, coords }
    }

    pub fn ambient_prediction(&self, ambient_dim: usize) -> DVector<f64> {
        let mut out = DVector::zeros(ambient_dim);
        for (j, &c) in self.coords.iter().enumerate() {
            out[c] = self.ons.predict()[j];
        }
        out
    }

    fn restrict(&self, ambient: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.coords.len(), self.coords.iter().map(|&c| ambient[c]))
    }
}

#[derive(Debug, Clone)]
pub struct ExpertBank {
    pub experts: Vec<Expert>,
    pub ambient_dim: usize,
    pub grad_bound: f64,
    pub diameter: f64,
}

impl ExpertBank {
    pub fn new(experts: Vec<Expert>, ambient_dim: usize, grad_bound: f64, diameter: f64) -> Result<Self> {
        if experts.is_empty() {
            return Err(Error::contract("expert bank is empty"));
        }
        for (i, e) in experts.iter().enumerate() {
            check_dim(e.ons.dim(), e.coords.len())?;
            if e.coords.iter().any(|&c| c >= ambient_dim) {
                return Err(Error::contract(format!("expert {i} has coordinates outside the ambient space")));
            }
            if experts[..i].iter().any(|o| o.label == e.label) {
                return Err(Error::contract(format!("duplicate expert label {:?}", e.label)));
            }
        }
        if !(grad_bound > 0.0 && diameter > 0.0) {
            return Err(Error::contract("bank needs positive G and D"));
        }
        Ok(ExpertBank { experts, ambient_dim, grad_bound, diameter })
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Stack {
    bank: ExpertBank,
    agg: Boa,
    t: usize,
}

impl Stack {
    /// Aggregator range is `G * D` of the ambient problem.
    pub fn new(bank: ExpertBank, prior: DVector<f64>) -> Result<Self> {
        check_dim(bank.len(), prior.len())?;
        let agg = Boa::new(prior, bank.grad_bound * bank.diameter)?;
        Ok(Stack { bank, agg, t: 0 })
    }

    pub fn bank(&self) -> &ExpertBank {
        &self.bank
    }

    pub fn aggregator(&self) -> &Boa {
        &self.agg
    }

    pub fn weights(&self) -> &DVector<f64> {
        self.agg.weights()
    }

    pub fn rounds(&self) -> usize {
        self.t
    }

    pub fn expert_predictions(&self) -> Vec<DVector<f64>> {
        let d = self.bank.ambient_dim;
        self.bank.experts.iter().map(|e| e.ambient_prediction(d)).collect()
    }

    /// `sum_i pi_i x^(i)`.
    pub fn predict(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.bank.ambient_dim);
        for (w, x) in self.agg.weights().iter().zip(self.expert_predictions()) {
            out.axpy(*w, &x, 1.0);
        }
        out
    }

    /// Runs one round. `oracle` returns the observed loss gradient (ambient
    /// coordinates) at any ambient point; it is queried once at the aggregate
    /// and once at each expert's own prediction.
    ///
    /// Returns the surrogate loss vector fed to the aggregator.
    pub fn step<F>(&mut self, mut oracle: F) -> Result<DVector<f64>>
    where
        F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    {
        let preds = self.expert_predictions();
        let x_hat = self.predict();
        let g_hat = oracle(&x_hat)?;
        check_dim(self.bank.ambient_dim, g_hat.len())?;
        let (g_hat, _) = clip_to_norm(&g_hat, self.bank.grad_bound);
        let surrogate = DVector::from_iterator(preds.len(), preds.iter().map(|x| g_hat.dot(&(x - &x_hat))));

        for (expert, x) in self.bank.experts.iter_mut().zip(&preds) {
            let g = oracle(x)?;
            check_dim(self.bank.ambient_dim, g.len())?;
            let local = expert.restrict(&g);
            expert.ons.step(&local)?;
        }
        self.agg.step(&surrogate)?;
        self.t += 1;
        Ok(surrogate)
    }
}

/// `(2^-1, ..., 2^-k)`.
pub fn make_gamma_grid(k: usize) -> Vec<f64> {
    (1..=k).map(|i| 0.5f64.powi(i as i32)).collect()
}

/// Prior proportional to `(T^-1, ..., T^-max_order)`, normalized in the log domain.
pub fn make_order_prior(horizon: f64, max_order: usize) -> DVector<f64> {
    order_prior_from_penalties(horizon, &(1..=max_order).collect::<Vec<_>>())
}

/// Prior proportional to `T^-n_i` for arbitrary order penalties `n_i` (e.g. `p + q`).
pub fn order_prior_from_penalties(horizon: f64, penalties: &[usize]) -> DVector<f64> {
    let log_t = horizon.ln();
    let logs: Vec<f64> = penalties.iter().map(|&n| -(n as f64) * log_t).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    DVector::from_iterator(w.len(), w.into_iter().map(|x| x / s))
}

/// Regret bound of BOA over a grid of `k` ONS learners with `gamma_i = 2^-i` and a uniform prior:
/// `(2/a v 1)(1 + d log(1 + T (a G D)^2 / 4)) + 2(2/a v 1 + GD) log(K log T) + 5 GD + (a (GD)^2 + 44 (2/a v 1)) log(1/delta)`.
pub fn boa_ons_corollary_bound(
    alpha: f64,
    grad_bound: f64,
    diameter: f64,
    dim: usize,
    grid_size: usize,
    delta: f64,
    horizon: usize,
) -> Result<f64> {
    if horizon < 4 {
        return Err(Error::contract("the BOA-ONS bound holds for T >= 4"));
    }
    if !(alpha > 0.0 && grad_bound > 0.0 && diameter > 0.0 && dim > 0 && grid_size > 0) {
        return Err(Error::contract("bound parameters must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::contract(format!("delta must lie in (0,1), got {delta}")));
    }
    let gd = grad_bound * diameter;
    let inv = (2.0 / alpha).max(1.0);
    let t = horizon as f64;
    Ok(inv * (1.0 + dim as f64 * (1.0 + t * (alpha * gd).powi(2) / 4.0).ln())
        + 2.0 * (inv + gd) * (grid_size as f64 * t.ln()).ln()
        + 5.0 * gd
        + (alpha * gd * gd + 44.0 * inv) * (1.0 / delta).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FeasibleSet;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn box_expert(x: f64, gamma: f64) -> Expert {
        let ons = Ons::new(FeasibleSet::boxed(vec![-1.0], vec![1.0]), gamma, 1.0, v(&[x])).unwrap();
        Expert::full(ons, ExpertLabel { gamma, order: (1, 0) })
    }

    #[test]
    fn single_expert_prediction() {
        let bank = ExpertBank::new(vec![box_expert(0.3, 0.5)], 1, 1.0, 2.0).unwrap();
        let stack = Stack::new(bank, v(&[1.0])).unwrap();
        assert_eq!(stack.predict(), v(&[0.3]));
    }

    #[test]
    fn convex_combination() {
        let set = FeasibleSet::simplex(2);
        let e = |x: &[f64], g: f64| {
            Expert::full(Ons::new(set.clone(), g, 1.0, v(x)).unwrap(), ExpertLabel { gamma: g, order: (0, 0) })
        };
        let bank = ExpertBank::new(vec![e(&[1.0, 0.0], 0.5), e(&[0.0, 1.0], 0.25)], 2, 1.0, 2f64.sqrt()).unwrap();
        let stack = Stack::new(bank, v(&[0.5, 0.5])).unwrap();
        assert_eq!(stack.predict(), v(&[0.5, 0.5]));
    }

    #[test]
    fn surrogate_losses_and_weights() {
        let bank = ExpertBank::new(vec![box_expert(0.0, 0.5), box_expert(1.0, 0.25)], 1, 1.0, 1.0).unwrap();
        let mut stack = Stack::new(bank, v(&[0.5, 0.5])).unwrap();
        let s = stack.step(|_| Ok(v(&[1.0]))).unwrap();
        assert!((s - v(&[-0.5, 0.5])).amax() < 1e-15);
        // range bound G*D = 1 reproduces the two-expert BOA example
        let e = 0.5f64.exp();
        assert!((stack.weights()[0] - e / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn combination_of_worked_weights() {
        let bank = ExpertBank::new(vec![box_expert(0.0, 0.5), box_expert(1.0, 0.25)], 1, 1.0, 1.0).unwrap();
        let mut stack = Stack::new(bank, v(&[0.5, 0.5])).unwrap();
        // gradient -1 at the aggregate 0.5 gives surrogate losses (0.5, -0.5); experts see zero gradients
        stack.step(|x| Ok(if x[0] == 0.5 { v(&[-1.0]) } else { v(&[0.0]) })).unwrap();
        assert!((stack.predict()[0] - 0.6225).abs() < 1e-4);
    }

    #[test]
    fn zero_gradient_round_changes_nothing() {
        let bank = ExpertBank::new(vec![box_expert(0.0, 0.5), box_expert(0.5, 0.25)], 1, 1.0, 2.0).unwrap();
        let mut stack = Stack::new(bank, v(&[0.5, 0.5])).unwrap();
        let before = stack.expert_predictions();
        stack.step(|_| Ok(v(&[0.0]))).unwrap();
        assert_eq!(stack.weights(), &v(&[0.5, 0.5]));
        assert_eq!(stack.expert_predictions(), before);
    }

    #[test]
    fn identical_experts_keep_prior() {
        let bank = ExpertBank::new(vec![box_expert(0.2, 0.5), box_expert(0.2, 0.5 + 1e-9)], 1, 1.0, 2.0).unwrap();
        let mut stack = Stack::new(bank, v(&[0.3, 0.7])).unwrap();
        for t in 0..50 {
            let g = if t % 2 == 0 { 0.7 } else { -0.4 };
            let s = stack.step(|_| Ok(v(&[g]))).unwrap();
            assert!(s.amax() < 1e-6);
        }
        assert!((stack.weights() - v(&[0.3, 0.7])).amax() < 1e-6);
    }

    #[test]
    fn gamma_grid() {
        assert_eq!(make_gamma_grid(3), vec![0.5, 0.25, 0.125]);
        assert_eq!(make_gamma_grid(1), vec![0.5]);
        let k = 10;
        let grid = make_gamma_grid(k);
        // an integer i in [1 - log2 a, 2 - log2 a] with i <= K exists once a >= 2^(1-K)
        let lo = 2f64.powi(1 - k as i32);
        for i in 0..=200 {
            let alpha = lo * (1.0 / lo).powf(i as f64 / 200.0);
            assert!(grid.iter().any(|g| alpha / 4.0 <= *g && *g <= alpha / 2.0), "alpha = {alpha}");
        }
    }

    #[test]
    fn order_prior() {
        let p = make_order_prior(std::f64::consts::E, 2);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4);
        assert_eq!(make_order_prior(100.0, 1), v(&[1.0]));
        let p = make_order_prior(50.0, 5);
        assert!(p.as_slice().windows(2).all(|w| w[0] > w[1]));
    }
}
