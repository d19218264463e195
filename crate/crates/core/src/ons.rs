//! Online Newton Step.
//!
//! The learner keeps `A_t = A_0 + sum_s g_s g_s^T` with
//! `A_0 = I / (gamma D)^2`, its inverse via Sherman–Morrison (refreshed from a
//! Cholesky factorization every `refresh_period` steps), and moves by
//! `y = x - A_t^{-1} g / gamma` followed by the `A_t`-norm projection.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{FeasibleSet, PsdMatrix};

pub const DEFAULT_REFRESH_PERIOD: usize = 1000;

#[derive(Debug, Clone)]
pub struct Ons {
    gamma: f64,
    set: FeasibleSet,
    diameter: f64,
    x: DVector<f64>,
    a: PsdMatrix,
    a_inv: DMatrix<f64>,
    t: usize,
    grad_bound: f64,
    refresh_period: usize,
    clip_events: usize,
}

/// What a single [`Ons::step`] actually fed into the recursion.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// The gradient after clipping to the norm bound.
    pub grad: DVector<f64>,
    pub clipped: bool,
}

/// Rescales `g` to norm `bound` when it is longer; returns whether it did.
pub fn clip_to_norm(g: &DVector<f64>, bound: f64) -> (DVector<f64>, bool) {
    let norm = g.norm();
    if norm > bound {
        (g * (bound / norm), true)
    } else {
        (g.clone(), false)
    }
}

impl Ons {
    pub fn new(set: FeasibleSet, gamma: f64, grad_bound: f64, x1: DVector<f64>) -> Result<Self> {
        set.validate()?;
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::contract(format!("gamma must be positive, got {gamma}")));
        }
        if !(grad_bound.is_finite() && grad_bound > 0.0) {
            return Err(Error::contract(format!("gradient bound must be positive, got {grad_bound}")));
        }
        check_dim(set.dim(), x1.len())?;
        if !set.contains(&x1) {
            return Err(Error::contract("initial prediction lies outside the feasible set"));
        }
        let diameter = set.diameter();
        if diameter <= 0.0 {
            return Err(Error::contract("ONS needs a feasible set with positive diameter"));
        }
        let d = set.dim();
        let scale = gamma * diameter;
        Ok(Ons {
            gamma,
            diameter,
            x: x1,
            a: PsdMatrix::scaled_identity(d, 1.0 / (scale * scale)),
            a_inv: DMatrix::identity(d, d) * (scale * scale),
            t: 0,
            grad_bound,
            refresh_period: DEFAULT_REFRESH_PERIOD,
            clip_events: 0,
            set,
        })
    }

    pub fn with_refresh_period(mut self, period: usize) -> Self {
        self.refresh_period = period.max(1);
        self
    }

    pub fn predict(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn set(&self) -> &FeasibleSet {
        &self.set
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn rounds(&self) -> usize {
        self.t
    }

    pub fn grad_bound(&self) -> f64 {
        self.grad_bound
    }

    pub fn clip_events(&self) -> usize {
        self.clip_events
    }

    pub fn second_moment(&self) -> &PsdMatrix {
        &self.a
    }

    pub fn second_moment_inverse(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    /// Feeds the gradient observed at the current prediction and moves to
    /// the next iterate.
    pub fn step(&mut self, grad: &DVector<f64>) -> Result<StepOutcome> {
        check_dim(self.dim(), grad.len())?;
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("gradient has non-finite entries"));
        }
        let (g, clipped) = clip_to_norm(grad, self.grad_bound);
        if clipped {
            self.clip_events += 1;
        }
        self.t += 1;

        self.a.add_outer(&g);
        if self.t.is_multiple_of(self.refresh_period) {
            self.refresh_inverse()?;
        } else {
            // Sherman–Morrison: (A + g g^T)^{-1} = A^{-1} - (A^{-1} g)(A^{-1} g)^T / (1 + g^T A^{-1} g)
            let u = &self.a_inv * &g;
            let denom = 1.0 + g.dot(&u);
            self.a_inv.ger(-1.0 / denom, &u, &u, 1.0);
        }

        if g.iter().all(|v| *v == 0.0) {
            return Ok(StepOutcome { grad: g, clipped });
        }
        let y = &self.x - (&self.a_inv * &g) / self.gamma;
        self.x = self.set.a_norm_project(&y, &self.a)?;
        Ok(StepOutcome { grad: g, clipped })
    }

    /// Recomputes the maintained inverse from `A` by a Cholesky solve.
    pub fn refresh_inverse(&mut self) -> Result<()> {
        let chol = self
            .a
            .as_matrix()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::contract("second-moment matrix lost positive definiteness"))?;
        self.a_inv = chol.inverse();
        Ok(())
    }

    /// `||A A^{-1} - I||_inf` (max absolute entry) of the maintained inverse.
    pub fn inverse_drift(&self) -> f64 {
        let d = self.dim();
        (self.a.as_matrix() * &self.a_inv - DMatrix::<f64>::identity(d, d)).amax()
    }
}

/// High-probability stochastic regret bound for ONS run with `gamma = alpha/2`:
/// `(1/a)(1 + d log(1 + T a^2 (GD)^2 / 4)) + (a (GD)^2 / 3 + 40/a) log(1/delta)`.
pub fn ons_theorem_bound(
    alpha: f64,
    grad_bound: f64,
    diameter: f64,
    dim: usize,
    delta: f64,
    horizon: usize,
) -> Result<f64> {
    if !(alpha > 0.0 && grad_bound > 0.0 && diameter > 0.0 && dim > 0 && horizon > 0) {
        return Err(Error::contract("bound parameters must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::contract(format!("delta must lie in (0,1), got {delta}")));
    }
    let gd2 = (grad_bound * diameter).powi(2);
    let t = horizon as f64;
    Ok((1.0 + dim as f64 * (1.0 + t * alpha * alpha * gd2 / 4.0).ln()) / alpha
        + (alpha * gd2 / 3.0 + 40.0 / alpha) * (1.0 / delta).ln())
}

/// Right-hand side of the deterministic ONS inequality
/// `sum g^T(x_t - x) <= (gamma/2) sum (g^T(x_t - x))^2 + d/(2 gamma) log(1 + T (gamma G D)^2) + 1/(2 gamma)`,
/// given the accumulated squared linear terms.
pub fn ons_pathwise_rhs(
    gamma: f64,
    grad_bound: f64,
    diameter: f64,
    dim: usize,
    horizon: usize,
    sum_sq_linear: f64,
) -> f64 {
    let ggd = gamma * grad_bound * diameter;
    0.5 * gamma * sum_sq_linear
        + dim as f64 / (2.0 * gamma) * (1.0 + horizon as f64 * ggd * ggd).ln()
        + 1.0 / (2.0 * gamma)
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
    fn initial_second_moment() {
        let ons = Ons::new(FeasibleSet::l1_ball(3, 1.0), 0.25, 1.0, DVector::zeros(3)).unwrap();
        assert!((ons.second_moment().as_matrix() - DMatrix::identity(3, 3) * 4.0).amax() < 1e-15);
        assert!((ons.second_moment_inverse() - DMatrix::identity(3, 3) * 0.25).amax() < 1e-15);

        let ons = Ons::new(FeasibleSet::boxed(vec![0.0], vec![1.0]), 1.0, 1.0, v(&[0.5])).unwrap();
        assert_eq!(ons.second_moment().as_matrix()[(0, 0)], 1.0);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let err = Ons::new(FeasibleSet::l1_ball(2, 1.0), 0.5, 1.0, v(&[2.0, 0.0]));
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn zero_gradient_keeps_iterate() {
        let mut ons = Ons::new(FeasibleSet::l1_ball(2, 1.0), 0.5, 1.0, v(&[0.1, 0.2])).unwrap();
        let a0 = ons.second_moment().clone();
        ons.step(&DVector::zeros(2)).unwrap();
        assert_eq!(ons.predict(), &v(&[0.1, 0.2]));
        assert_eq!(ons.second_moment(), &a0);
        assert_eq!(ons.rounds(), 1);
    }

    #[test]
    fn scalar_step_by_hand() {
        // A_1 = 1/4 + 1 = 5/4, y = -(4/5)
        let set = FeasibleSet::boxed(vec![-1.0], vec![1.0]);
        let mut ons = Ons::new(set.clone(), 1.0, 10.0, v(&[0.0])).unwrap();
        let out = ons.step(&v(&[1.0])).unwrap();
        assert!(!out.clipped);
        assert!((ons.predict()[0] + 0.8).abs() < 1e-15);
        assert!((ons.second_moment().as_matrix()[(0, 0)] - 1.25).abs() < 1e-15);

        let mut clipped = Ons::new(set, 1.0, 1.0, v(&[0.0])).unwrap();
        let out = clipped.step(&v(&[10.0])).unwrap();
        assert!(out.clipped);
        assert_eq!(clipped.clip_events(), 1);
        assert!((clipped.predict()[0] + 0.8).abs() < 1e-15);
    }

    #[test]
    fn theorem_bound_values() {
        let b = ons_theorem_bound(1.0, 1.0, 1.0, 2, 0.05, 100).unwrap();
        let expected = 1.0 + 2.0 * (1.0f64 + 25.0).ln() + (1.0 / 3.0 + 40.0) * 20f64.ln();
        assert!((b - expected).abs() < 1e-12);
        assert!((b - 128.35).abs() < 0.01);

        let b = ons_theorem_bound(1.0, 1.0, 1.0, 1, (-1f64).exp(), 1).unwrap();
        assert!((b - 41.556).abs() < 1e-3);

        let b1 = ons_theorem_bound(0.5, 2.0, 1.0, 3, 0.05, 10).unwrap();
        let b2 = ons_theorem_bound(0.5, 2.0, 1.0, 3, 0.05, 1000).unwrap();
        let b3 = ons_theorem_bound(0.5, 2.0, 1.0, 3, 0.01, 1000).unwrap();
        assert!(b1 < b2 && b2 < b3);
        assert!(ons_theorem_bound(0.5, 2.0, 1.0, 3, 1.5, 10).is_err());
    }

    #[test]
    fn inverse_stays_accurate_with_refresh() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let d = 4;
        let mut ons =
            Ons::new(FeasibleSet::l1_ball(d, 1.0), 0.5, 3.0, DVector::zeros(d)).unwrap().with_refresh_period(1000);
        for _ in 0..10_000 {
            let g = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            ons.step(&g).unwrap();
            assert!(ons.set().contains(ons.predict()));
        }
        assert!(ons.inverse_drift() <= 1e-6, "drift {}", ons.inverse_drift());
    }

    #[test]
    fn min_eigenvalue_is_monotone() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let d = 3;
        let mut ons = Ons::new(FeasibleSet::l1_ball(d, 1.0), 0.5, 3.0, DVector::zeros(d)).unwrap();
        let mut last = ons.second_moment().min_eigenvalue();
        for _ in 0..300 {
            let g = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            ons.step(&g).unwrap();
            let now = ons.second_moment().min_eigenvalue();
            assert!(now >= last - 1e-12);
            last = now;
        }
    }
}
