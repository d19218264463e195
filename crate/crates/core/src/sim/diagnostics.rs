//! Empirical checks of the curvature assumption and of the deterministic
//! regret inequalities behind the ONS and BOA bounds.

use nalgebra::DVector;
use rand::Rng;

use crate::boa::{boa_pathwise_bound, boa_pathwise_bound_conservative, boa_potential, Boa};
use crate::error::Result;
use crate::ons::{ons_pathwise_rhs, Ons};

use super::family::{FamilySpec, RiskModel};

/// Margins above this count as violations for closed-form families; mixture
/// margins come from quadrature and get the quadrature tolerance on top.
pub const H2_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct H2Report {
    pub pairs: usize,
    pub violations: usize,
    /// Largest margin seen (positive means the inequality failed there).
    pub worst_margin: f64,
}

/// Evaluates the exp-concavity margin on `n_pairs` random `(t, x, y)` with
/// `x, y` uniform on the feasible set.
pub fn check_h2_empirical<R: Rng + ?Sized>(
    model: &RiskModel,
    alpha: f64,
    n_pairs: usize,
    rng: &mut R,
) -> Result<H2Report> {
    let set = model.family.feasible_set()?;
    let tol = match model.family {
        FamilySpec::Mixture { .. } => H2_TOL + 10.0 * crate::forecast::KL_QUAD_TOL,
        _ => H2_TOL,
    };
    let mut report = H2Report { pairs: n_pairs, violations: 0, worst_margin: f64::NEG_INFINITY };
    for _ in 0..n_pairs {
        let t = rng.random_range(0..model.len());
        let x = set.sample(rng);
        let y = set.sample(rng);
        let margin = model.family.h2_margin(&y, &x, &model.rounds[t], alpha)?;
        report.worst_margin = report.worst_margin.max(margin);
        if margin > tol {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// Iterates, (clipped) gradients and comparators of an ONS run.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsTrace {
    pub gamma: f64,
    pub grad_bound: f64,
    pub diameter: f64,
    pub dim: usize,
    pub iterates: Vec<DVector<f64>>,
    pub grads: Vec<DVector<f64>>,
    pub comparators: Vec<DVector<f64>>,
}

impl OnsTrace {
    /// Feeds `grads` to `ons`, recording what it played and the gradients it used.
    pub fn record(mut ons: Ons, grads: &[DVector<f64>], comparators: Vec<DVector<f64>>) -> Result<Self> {
        let mut iterates = Vec::with_capacity(grads.len());
        let mut used = Vec::with_capacity(grads.len());
        for g in grads {
            iterates.push(ons.predict().clone());
            used.push(ons.step(g)?.grad);
        }
        Ok(OnsTrace {
            gamma: ons.gamma(),
            grad_bound: ons.grad_bound(),
            diameter: ons.diameter(),
            dim: ons.dim(),
            iterates,
            grads: used,
            comparators,
        })
    }
}

/// Aggregation weights and expert losses of a BOA run.
#[derive(Debug, Clone, PartialEq)]
pub struct BoaTrace {
    pub prior: DVector<f64>,
    pub range_bound: f64,
    /// Weights played in each round (before seeing its losses).
    pub weights: Vec<DVector<f64>>,
    pub losses: Vec<DVector<f64>>,
    /// Largest `sum_i pi_1i exp(-eta_i L_i) / log T` over `T >= 4`.
    pub max_potential_ratio: f64,
}

impl BoaTrace {
    pub fn record(mut boa: Boa, losses: &[DVector<f64>]) -> Result<Self> {
        let prior = boa.prior().clone();
        let mut weights = Vec::with_capacity(losses.len());
        let mut max_potential_ratio = f64::NEG_INFINITY;
        for (t, l) in losses.iter().enumerate() {
            weights.push(boa.weights().clone());
            boa.step(l)?;
            if t + 1 >= 4 {
                max_potential_ratio = max_potential_ratio.max(boa_potential(&boa) / ((t + 1) as f64).ln());
            }
        }
        Ok(BoaTrace { prior, range_bound: boa.range_bound(), weights, losses: losses.to_vec(), max_potential_ratio })
    }
}

#[derive(Debug, Clone)]
pub enum PathwiseTrace {
    Ons(OnsTrace),
    Boa(BoaTrace),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathwiseReport {
    /// Number of (prefix, comparator) inequalities evaluated.
    pub checks: usize,
    pub violations: usize,
    /// Smallest `rhs - lhs` seen.
    pub min_slack: f64,
}

/// Which BOA second-order bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoaBoundForm {
    /// `sqrt(L_i S_i) + GD (5 + 2 L_i)`.
    Stated,
    /// See [`boa_pathwise_bound_conservative`].
    Conservative,
}

/// Evaluates the deterministic inequality at every prefix of the trace (the
/// stated form for BOA).
///
/// ONS: `sum g^T(x_t - x) <= (gamma/2) sum (g^T(x_t - x))^2 + d/(2 gamma) log(1 + T (gamma G D)^2) + 1/(2 gamma)`
/// for each recorded comparator. BOA: the second-order bound against each
/// expert, for every `T >= 4`.
pub fn check_pathwise_bounds(trace: &PathwiseTrace) -> PathwiseReport {
    check_pathwise_bounds_with(trace, BoaBoundForm::Stated)
}

pub fn check_pathwise_bounds_with(trace: &PathwiseTrace, form: BoaBoundForm) -> PathwiseReport {
    let bound = match form {
        BoaBoundForm::Stated => boa_pathwise_bound,
        BoaBoundForm::Conservative => boa_pathwise_bound_conservative,
    };
    let mut report = PathwiseReport { checks: 0, violations: 0, min_slack: f64::INFINITY };
    let mut record = |lhs: f64, rhs: f64| {
        let slack = rhs - lhs;
        report.checks += 1;
        report.min_slack = report.min_slack.min(slack);
        if slack < -1e-9 * (1.0 + rhs.abs()) {
            report.violations += 1;
        }
    };
    match trace {
        PathwiseTrace::Ons(tr) => {
            for x in &tr.comparators {
                let (mut lin, mut sq) = (0.0, 0.0);
                for (t, (xt, g)) in tr.iterates.iter().zip(&tr.grads).enumerate() {
                    let l = g.dot(&(xt - x));
                    lin += l;
                    sq += l * l;
                    record(lin, ons_pathwise_rhs(tr.gamma, tr.grad_bound, tr.diameter, tr.dim, t + 1, sq));
                }
            }
        }
        PathwiseTrace::Boa(tr) => {
            let k = tr.prior.len();
            let mut regret = vec![0.0; k];
            let mut sq = vec![0.0; k];
            for (t, (w, l)) in tr.weights.iter().zip(&tr.losses).enumerate() {
                let clamped = l.map(|v| v.clamp(-tr.range_bound, tr.range_bound));
                let mix = w.dot(&clamped);
                for i in 0..k {
                    let r = mix - clamped[i];
                    regret[i] += r;
                    sq[i] += r * r;
                    if t + 1 >= 4 {
                        record(regret[i], bound(tr.prior[i], tr.range_bound, t + 1, sq[i]));
                    }
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FeasibleSet;
    use crate::sim::generator::GeneratorKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn boa_prefixes_below_four_are_skipped() {
        let losses: Vec<_> = (0..4).map(|t| DVector::from_row_slice(&[(t % 2) as f64, 0.0])).collect();
        let trace = BoaTrace::record(Boa::uniform(2, 1.0).unwrap(), &losses).unwrap();
        let r = check_pathwise_bounds(&PathwiseTrace::Boa(trace.clone()));
        assert_eq!(r.checks, 2);
        let short = BoaTrace { weights: trace.weights[..3].to_vec(), losses: trace.losses[..3].to_vec(), ..trace };
        assert_eq!(check_pathwise_bounds(&PathwiseTrace::Boa(short)).checks, 0);
    }

    #[test]
    fn ons_trace_holds_on_random_gradients() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let set = FeasibleSet::l1_ball(3, 1.0);
        let ons = Ons::new(set.clone(), 0.3, 2.0, DVector::zeros(3)).unwrap();
        let grads: Vec<_> = (0..300).map(|_| DVector::from_fn(3, |_, _| rng.random_range(-1.5..1.5))).collect();
        let comps = (0..5).map(|_| set.sample(&mut rng)).collect();
        let r = check_pathwise_bounds(&PathwiseTrace::Ons(OnsTrace::record(ons, &grads, comps).unwrap()));
        assert_eq!(r.violations, 0);
        assert_eq!(r.checks, 1500);
    }

    #[test]
    fn ar_curvature_holds_at_its_constant() {
        let g = GeneratorKind::WellSpecifiedAr { coeffs: vec![0.2, -0.1], noise_var: 1.0, clip: 2.0 };
        let fam = FamilySpec::Ar { p: 2, d: 2.0 * 2f64.sqrt(), sigma2: 1.0, y_bound: None };
        let model = RiskModel::new(fam.clone(), &g.generate(3, 200).unwrap()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let alpha = fam.alpha().unwrap();
        let ok = check_h2_empirical(&model, alpha, 2000, &mut rng).unwrap();
        let bad = check_h2_empirical(&model, 10.0 * alpha, 2000, &mut rng).unwrap();
        assert_eq!(ok.violations, 0, "{ok:?}");
        assert!(bad.violations > 0);
    }
}
