//! Offline search for the best fixed parameter in hindsight, using the
//! simulator's knowledge of the true risks.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::forecast::LawShape;
use crate::geometry::{power_iteration, FeasibleSet};

use super::family::{FamilySpec, RiskModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub restarts: usize,
    pub max_iterations: usize,
    /// Random feasible points used to certify the result (0 disables).
    pub certificate_points: usize,
    /// A certificate point may beat the optimum by at most this much, relative to `1 + |F*|`.
    pub certificate_tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { restarts: 20, max_iterations: 5000, certificate_points: 1000, certificate_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub certified: bool,
    /// Largest `(F* - F(z)) / (1 + |F*|)` over the random points `z`.
    pub worst_gap: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparator {
    pub x_star: DVector<f64>,
    /// `sum_{t < n} L_t(x_star)`, accumulated round by round.
    pub cum_risk: f64,
    pub certificate: Option<Certificate>,
}

/// Cumulative true risk over a prefix, in a form cheap enough to evaluate
/// thousands of times.
enum Objective<'a> {
    /// `c + (x^T H x - 2 b^T x) / (2 sigma^2)`: AR risks are quadratics.
    Quadratic { h: DMatrix<f64>, b: DVector<f64>, c: f64, sigma2: f64 },
    /// Gaussian forecast `N(x_m^T f, base + x_v^T s)` per round, flattened.
    Gaussian { p: usize, q: usize, base: f64, means: Vec<f64>, vars: Vec<f64>, f: Vec<f64>, s: Vec<f64> },
    /// Risks depending on the law only, with identical laws merged.
    Grouped { model: &'a RiskModel, groups: Vec<(usize, f64)> },
}

impl<'a> Objective<'a> {
    fn build(model: &'a RiskModel, n: usize) -> Result<Self> {
        let rounds = &model.rounds[..n];
        match model.family {
            FamilySpec::Ar { p, sigma2, .. } => {
                let mut h = DMatrix::zeros(p, p);
                let mut b = DVector::zeros(p);
                let mut c = 0.0;
                for r in rounds {
                    h.ger(1.0, &r.features, &r.features, 1.0);
                    b.axpy(r.law.mean, &r.features, 1.0);
                    let s = r.law.variance;
                    c += 0.5 * ((sigma2 / s).ln() + s / sigma2 - 1.0) + r.law.mean * r.law.mean / (2.0 * sigma2);
                }
                Ok(Objective::Quadratic { h, b, c, sigma2 })
            }
            FamilySpec::Arch { q, .. } | FamilySpec::Joint { q, .. } => {
                let p = model.family.orders().0;
                let base = model.family.arch_config()?.floor();
                let mut f = Vec::with_capacity(n * p);
                let mut s = Vec::with_capacity(n * q);
                for r in rounds {
                    f.extend(r.features.rows(0, p).iter());
                    s.extend(r.features.rows(p, q).iter());
                }
                Ok(Objective::Gaussian {
                    p,
                    q,
                    base,
                    means: rounds.iter().map(|r| r.law.mean).collect(),
                    vars: rounds.iter().map(|r| r.law.variance).collect(),
                    f,
                    s,
                })
            }
            FamilySpec::Mixture { .. } => {
                let mut index: HashMap<(u64, u64), usize> = HashMap::new();
                let mut groups: Vec<(usize, f64)> = Vec::new();
                for (t, r) in rounds.iter().enumerate() {
                    if let LawShape::Gaussian = r.law.shape {
                        let key = (r.law.mean.to_bits(), r.law.variance.to_bits());
                        if let Some(&g) = index.get(&key) {
                            groups[g].1 += 1.0;
                            continue;
                        }
                        index.insert(key, groups.len());
                    }
                    groups.push((t, 1.0));
                }
                Ok(Objective::Grouped { model, groups })
            }
        }
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.eval(x, false)?.0)
    }

    fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.eval(x, true)
    }

    fn eval(&self, x: &DVector<f64>, with_grad: bool) -> Result<(f64, DVector<f64>)> {
        match self {
            Objective::Quadratic { h, b, c, sigma2 } => {
                let hx = h * x;
                let val = c + (x.dot(&hx) - 2.0 * b.dot(x)) / (2.0 * sigma2);
                Ok((val, (hx - b) / *sigma2))
            }
            Objective::Gaussian { p, q, base, means, vars, f, s } => {
                let (p, q) = (*p, *q);
                let xs = x.as_slice();
                let mut grad = DVector::zeros(p + q);
                let mut val = 0.0;
                for t in 0..means.len() {
                    let ft = &f[t * p..(t + 1) * p];
                    let st = &s[t * q..(t + 1) * q];
                    let mhat: f64 = ft.iter().zip(&xs[..p]).map(|(a, b)| a * b).sum();
                    let v = base + st.iter().zip(&xs[p..]).map(|(a, b)| a * b).sum::<f64>();
                    let dm = means[t] - mhat;
                    let e2 = vars[t] + dm * dm;
                    val += 0.5 * ((v / vars[t]).ln() + e2 / v - 1.0);
                    if with_grad {
                        let gm = -dm / v;
                        let gv = 0.5 * (1.0 / v - e2 / (v * v));
                        for i in 0..p {
                            grad[i] += gm * ft[i];
                        }
                        for j in 0..q {
                            grad[p + j] += gv * st[j];
                        }
                    }
                }
                Ok((val, grad))
            }
            Objective::Grouped { model, groups } => {
                let mut val = 0.0;
                let mut grad = DVector::zeros(x.len());
                for &(t, w) in groups {
                    let r = &model.rounds[t];
                    if with_grad {
                        let (v, g) = model.family.risk_grad(x, r)?;
                        val += w * v;
                        grad.axpy(w, &g, 1.0);
                    } else {
                        val += w * model.family.risk(x, r)?;
                    }
                }
                Ok((val, grad))
            }
        }
    }

    fn lipschitz_guess(&self, set: &FeasibleSet, rng: &mut ChaCha20Rng) -> Result<f64> {
        if let Objective::Quadratic { h, sigma2, .. } = self {
            return Ok(power_iteration(h, 50) * 1.05 / sigma2);
        }
        let mut l: f64 = 0.0;
        for _ in 0..5 {
            let (a, b) = (set.sample(rng), set.sample(rng));
            let dist = (&a - &b).norm();
            if dist > 0.0 {
                let (_, ga) = self.value_grad(&a)?;
                let (_, gb) = self.value_grad(&b)?;
                l = l.max((ga - gb).norm() / dist);
            }
        }
        Ok(l)
    }
}

/// Projected gradient with backtracking from `x0`; stops once an accepted step
/// moves no coordinate by more than `1e-12`.
///
/// A step is accepted when it passes the sufficient-decrease test (up to
/// rounding noise in `F`) and the secant curvature `|g(z) - g(x)| / |z - x|`
/// does not exceed `1/step`. Gradients stay accurate long after `F` stops
/// resolving progress, so the second test keeps the iteration stable there.
fn descend(
    obj: &Objective,
    set: &FeasibleSet,
    x0: DVector<f64>,
    lipschitz: f64,
    max_iterations: usize,
) -> Result<(DVector<f64>, f64)> {
    let mut step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };
    let mut x = set.euclid_project(&x0)?;
    let (mut fx, mut gx) = obj.value_grad(&x)?;
    for _ in 0..max_iterations {
        let (z, fz, gz) = loop {
            let z = set.euclid_project(&(&x - &gx * step))?;
            let d = &z - &x;
            let (fz, gz) = obj.value_grad(&z)?;
            let model = fx + gx.dot(&d) + d.norm_squared() / (2.0 * step);
            let decrease = fz <= model + 1e-14 * fx.abs().max(1.0);
            let curvature = (&gz - &gx).norm() * step <= d.norm() * (1.0 + 1e-12);
            if (decrease && curvature) || step < 1e-300 {
                break (z, fz, gz);
            }
            step *= 0.5;
        };
        let moved = (&z - &x).amax();
        x = z;
        fx = fz;
        gx = gz;
        if moved <= 1e-12 {
            break;
        }
        step *= 1.25;
    }
    Ok((x, fx))
}

/// Minimizes `sum_{t < n} L_t(x)` over the family's feasible set from
/// `restarts` random starting points, then checks the winner against random
/// feasible points.
pub fn comparator_search(model: &RiskModel, n: usize, seed: u64, opts: &SearchOptions) -> Result<Comparator> {
    let set = model.family.feasible_set()?;
    let n = n.min(model.len());
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let obj = Objective::build(model, n)?;
    let lipschitz = obj.lipschitz_guess(&set, &mut rng)?;

    let mut best: Option<(DVector<f64>, f64)> = None;
    for _ in 0..opts.restarts.max(1) {
        let start = set.sample(&mut rng);
        let (x, f) = descend(&obj, &set, start, lipschitz, opts.max_iterations)?;
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((x, f));
        }
    }
    let (x_star, f_star) = best.expect("at least one restart");

    let certificate = if opts.certificate_points > 0 {
        let mut worst_gap = f64::NEG_INFINITY;
        for _ in 0..opts.certificate_points {
            let z = set.sample(&mut rng);
            worst_gap = worst_gap.max((f_star - obj.value(&z)?) / (1.0 + f_star.abs()));
        }
        Some(Certificate { certified: worst_gap <= opts.certificate_tol, worst_gap, points: opts.certificate_points })
    } else {
        None
    };
    let cum_risk = model.cumulative_risk(n, &x_star)?;
    Ok(Comparator { x_star, cum_risk, certificate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::ConditionalLaw;
    use crate::sim::family::Round;
    use crate::sim::generator::GeneratorKind;

    fn quick() -> SearchOptions {
        SearchOptions { restarts: 3, certificate_points: 200, ..SearchOptions::default() }
    }

    #[test]
    fn recovers_well_specified_ar_coefficients() {
        let g = GeneratorKind::WellSpecifiedAr { coeffs: vec![0.5, -0.3], noise_var: 1.0, clip: 1.0 };
        let fam = FamilySpec::Ar { p: 2, d: 2f64.sqrt(), sigma2: 1.0, y_bound: None };
        let model = RiskModel::new(fam, &g.generate(11, 2000).unwrap()).unwrap();
        let c = comparator_search(&model, 2000, 11, &quick()).unwrap();
        assert!((c.x_star[0] - 0.5).abs() < 1e-3 && (c.x_star[1] + 0.3).abs() < 1e-3, "{}", c.x_star);
        assert!(c.cum_risk.abs() < 1e-9);
        assert!(c.certificate.unwrap().certified);
    }

    #[test]
    fn constant_laws_scalar_minimizer() {
        // N(m, s) every round with a constant feature f: minimizer clamp(m/f, -1, 1)
        let fam = FamilySpec::Ar { p: 1, d: 2f64.sqrt(), sigma2: 1.0, y_bound: None };
        for (m, f) in [(0.3, 0.8), (2.0, 0.5), (-0.1, -0.4)] {
            let rounds = (0..100)
                .map(|_| Round { features: DVector::from_element(1, f), law: ConditionalLaw::gaussian(m, 1.0), y: 0.0 })
                .collect();
            let model = RiskModel { family: fam.clone(), rounds };
            let c = comparator_search(&model, 100, 0, &quick()).unwrap();
            let expected = (m / f).clamp(-1.0, 1.0);
            assert!((c.x_star[0] - expected).abs() < 1e-9, "{} vs {expected}", c.x_star[0]);
        }
    }

    #[test]
    fn single_round_is_feasible_and_finite() {
        let g = GeneratorKind::WellSpecifiedArch { coeffs: vec![0.2], c: 1.5, sigma_bar2: 4.0 };
        let fam = FamilySpec::Arch { q: 1, c: 1.5, sigma_bar2: 4.0, y2_bound: None };
        let model = RiskModel::new(fam.clone(), &g.generate(1, 1).unwrap()).unwrap();
        let c = comparator_search(&model, 1, 0, &quick()).unwrap();
        assert!(fam.feasible_set().unwrap().contains(&c.x_star));
        assert!(c.cum_risk.is_finite());
    }

    #[test]
    fn arch_objective_matches_per_round_risks() {
        let g = GeneratorKind::Garch11 { omega: 0.5, a: 0.2, b: 0.7, c: 1.5, sigma_bar2: 4.0 };
        let fam = FamilySpec::Joint { p: 1, q: 2, d: 0.5, c: 1.5, sigma_bar2: 4.0, y_bound: None };
        let model = RiskModel::new(fam, &g.generate(2, 300).unwrap()).unwrap();
        let obj = Objective::build(&model, 300).unwrap();
        let x = DVector::from_row_slice(&[0.3, 0.1, 0.05]);
        let (v, g) = obj.value_grad(&x).unwrap();
        assert!((v - model.cumulative_risk(300, &x).unwrap()).abs() < 1e-9);
        let mut direct = DVector::zeros(3);
        for r in &model.rounds {
            direct += model.family.risk_grad(&x, r).unwrap().1;
        }
        assert!((g - direct).amax() < 1e-9);
    }
}
