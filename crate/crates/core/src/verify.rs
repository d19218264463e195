//! Named self-check suites, runnable from the command line.
//!
//! Each suite draws its own fixed-seed random instances and reports one line
//! per check with the worst margin it saw.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::boa::{boa_theorem_bound, Boa};
use crate::error::{Error, Result};
use crate::forecast::GaussianForecast;
use crate::geometry::{FeasibleSet, PsdMatrix};
use crate::ons::{ons_theorem_bound, Ons};
use crate::sim::{
    check_h2_empirical, check_pathwise_bounds, check_pathwise_bounds_with, run_experiment, BoaBoundForm, BoaTrace,
    ExperimentConfig, FamilySpec, GeneratorKind, LearnerSpec, OnsTrace, PathwiseTrace, RiskModel, RngKind,
    SearchOptions,
};

pub const SUITES: [&str; 6] = ["pathwise-ons", "pathwise-boa", "gradients", "projections", "h2", "bounds"];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: impl Into<String>, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

pub fn run_suite(name: &str) -> Result<SuiteReport> {
    let checks = match name {
        "pathwise-ons" => pathwise_ons()?,
        "pathwise-boa" => pathwise_boa()?,
        "gradients" => gradients()?,
        "projections" => projections()?,
        "h2" => h2()?,
        "bounds" => bounds()?,
        other => {
            return Err(Error::Config(format!("unknown suite '{other}' (expected one of {})", SUITES.join(", "))));
        }
    };
    Ok(SuiteReport { suite: name.to_string(), checks })
}

/// Uniform direction with norm uniform in `[0, bound]`.
pub fn random_bounded_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize, bound: f64) -> DVector<f64> {
    let v = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
    let n = v.norm();
    if n == 0.0 {
        return v;
    }
    v * (bound * rng.random_range(0.0..1.0) / n)
}

fn pathwise_ons() -> Result<Vec<Check>> {
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    let (dim, horizon, g) = (5, 2000, 1.0);
    let set = FeasibleSet::l1_ball(dim, 1.0);
    let (mut checks, mut violations, mut min_slack) = (0, 0, f64::INFINITY);
    for _ in 0..100 {
        let gamma = [0.05, 0.1, 0.5, 1.0][rng.random_range(0..4)];
        let ons = Ons::new(set.clone(), gamma, g, set.center())?;
        let grads: Vec<_> = (0..horizon).map(|_| random_bounded_vector(&mut rng, dim, g)).collect();
        let comps = (0..5).map(|_| set.sample(&mut rng)).collect();
        let r = check_pathwise_bounds(&PathwiseTrace::Ons(OnsTrace::record(ons, &grads, comps)?));
        checks += r.checks;
        violations += r.violations;
        min_slack = min_slack.min(r.min_slack);
    }
    Ok(vec![check(
        "ONS inequality, 100 random traces (d=5, T=2000)",
        violations == 0,
        format!("{violations} violations in {checks} prefix checks, min slack {min_slack:.6e}"),
    )])
}

/// Losses for `k` experts at round `t` of an alternating-sign adversary.
pub fn adversarial_losses(k: usize, t: usize, range: f64, pattern: usize) -> DVector<f64> {
    DVector::from_fn(k, |i, _| {
        let sign = match pattern % 3 {
            0 => {
                if (t + i).is_multiple_of(2) {
                    1.0
                } else {
                    -1.0
                }
            }
            // leader flips every 100 rounds
            1 => {
                if i == (t / 100) % k {
                    -1.0
                } else {
                    1.0
                }
            }
            _ => {
                if (t / (i + 1)).is_multiple_of(2) {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        sign * range
    })
}

fn pathwise_boa() -> Result<Vec<Check>> {
    let mut rng = ChaCha20Rng::seed_from_u64(202);
    let (k, horizon, range) = (8, 5000, 1.0);
    let mut out = Vec::new();
    for adversarial in [false, true] {
        let traces = if adversarial { 10 } else { 100 };
        let (mut checks, mut violations, mut min_slack) = (0, 0, f64::INFINITY);
        let (mut loose_violations, mut loose_slack, mut potential) = (0, f64::INFINITY, f64::NEG_INFINITY);
        for s in 0..traces {
            let losses: Vec<_> = if adversarial {
                (0..horizon).map(|t| adversarial_losses(k, t, range, s)).collect()
            } else {
                let bias: Vec<f64> = (0..k).map(|_| rng.random_range(-0.3..0.3)).collect();
                (0..horizon)
                    .map(|_| DVector::from_fn(k, |i, _| (bias[i] + rng.random_range(-0.7..0.7)).clamp(-range, range)))
                    .collect()
            };
            let prior = DVector::from_fn(k, |_, _| rng.random_range(0.1..1.0));
            let prior = &prior / prior.sum();
            let trace = PathwiseTrace::Boa(BoaTrace::record(Boa::new(prior, range)?, &losses)?);
            let r = check_pathwise_bounds(&trace);
            checks += r.checks;
            violations += r.violations;
            min_slack = min_slack.min(r.min_slack);
            let loose = check_pathwise_bounds_with(&trace, BoaBoundForm::Conservative);
            loose_violations += loose.violations;
            loose_slack = loose_slack.min(loose.min_slack);
            if let PathwiseTrace::Boa(b) = &trace {
                potential = potential.max(b.max_potential_ratio);
            }
        }
        let kind = if adversarial { "adversarial" } else { "random" };
        out.push(check(
            format!("BOA second-order bound, {traces} {kind} traces (K=8, T=5000)"),
            violations == 0,
            format!("{violations} violations in {checks} prefix checks, min slack {min_slack:.6e}"),
        ));
        out.push(check(
            format!("BOA conservative bound, {traces} {kind} traces"),
            loose_violations == 0,
            format!("{loose_violations} violations, min slack {loose_slack:.6e}"),
        ));
        out.push(check(
            format!("BOA potential below log T, {traces} {kind} traces"),
            potential <= 1.0,
            format!("max potential / log T {potential:.6}"),
        ));
    }
    Ok(out)
}

/// The four forecaster families with series they are evaluated on.
pub fn reference_models(horizon: usize, seed: u64) -> Result<Vec<(&'static str, RiskModel)>> {
    let sbar = 4.0;
    let cases = vec![
        ("ar", reference_ar(), reference_ar_generator()),
        (
            "arch",
            FamilySpec::Arch { q: 1, c: 1.5, sigma_bar2: sbar, y2_bound: None },
            GeneratorKind::WellSpecifiedArch { coeffs: vec![0.2], c: 1.5, sigma_bar2: sbar },
        ),
        (
            "joint",
            FamilySpec::Joint { p: 2, q: 1, d: 0.5, c: 1.5, sigma_bar2: sbar, y_bound: None },
            GeneratorKind::Garch11 { omega: 0.5, a: 0.2, b: 0.7, c: 1.5, sigma_bar2: sbar },
        ),
        (
            "mixture",
            reference_mixture(),
            GeneratorKind::Misspecified {
                mean_offset: 1.0,
                mean_amplitude: 0.0,
                mean_period: 100.0,
                var_low: 1.0,
                var_high: 1.0,
                var_period: 100.0,
            },
        ),
    ];
    cases
        .into_iter()
        .map(|(name, fam, generator)| Ok((name, RiskModel::new(fam, &generator.generate(seed, horizon)?)?)))
        .collect()
}

/// AR(2) forecaster with lags clipped at 2 (`D = 2 sqrt 2`, `sigma^2 = 1`).
///
/// The curvature constant `sigma^2 / D^2` needs `(mhat - m)^2 + sigma_t^2 <= D^2`
/// for every feasible forecast; with `||a||_1 = 0.3` the worst case is
/// `(1.3 * 2)^2 + 1 = 7.76 <= 8`.
pub fn reference_ar() -> FamilySpec {
    FamilySpec::Ar { p: 2, d: 2.0 * 2f64.sqrt(), sigma2: 1.0, y_bound: None }
}

pub fn reference_ar_generator() -> GeneratorKind {
    GeneratorKind::WellSpecifiedAr { coeffs: vec![0.2, -0.1], noise_var: 1.0, clip: 2.0 }
}

/// Four unit-variance Gaussians centred at -3, -1, 1, 3.
pub fn reference_mixture() -> FamilySpec {
    FamilySpec::Mixture {
        components: [-3.0, -1.0, 1.0, 3.0].iter().map(|&m| GaussianForecast { mean: m, variance: 1.0 }).collect(),
        density_floor: 1e-3,
        density_cap: 1.0 / (2.0 * std::f64::consts::PI).sqrt(),
    }
}

fn central_difference<F: Fn(&DVector<f64>) -> Result<f64>>(f: F, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut up = x.clone();
        let mut down = x.clone();
        up[i] += h;
        down[i] -= h;
        out[i] = (f(&up)? - f(&down)?) / (2.0 * h);
    }
    Ok(out)
}

fn relative_error(fd: &DVector<f64>, analytic: &DVector<f64>) -> f64 {
    (fd - analytic).amax() / analytic.amax().max(1.0)
}

fn gradients() -> Result<Vec<Check>> {
    let mut rng = ChaCha20Rng::seed_from_u64(303);
    let mut out = Vec::new();
    for (name, model) in reference_models(200, 5)? {
        let set = model.family.feasible_set()?;
        let (mut loss_err, mut risk_err) = (0.0f64, 0.0f64);
        let gaussian = !matches!(model.family, FamilySpec::Mixture { .. });
        for _ in 0..1000 {
            let r = &model.rounds[rng.random_range(0..model.len())];
            let x = set.sample(&mut rng);
            let fam = &model.family;
            let fd = central_difference(|z| Ok(fam.loss_grad(z, r)?.loss), &x, 1e-6)?;
            loss_err = loss_err.max(relative_error(&fd, &fam.loss_grad(&x, r)?.grad));
            if gaussian {
                let fd = central_difference(|z| fam.risk(z, r), &x, 1e-6)?;
                risk_err = risk_err.max(relative_error(&fd, &fam.risk_grad(&x, r)?.1));
            }
        }
        out.push(check(
            format!("{name} loss gradient, 1000 points"),
            loss_err <= 1e-6,
            format!("max relative error {loss_err:.3e}"),
        ));
        if gaussian {
            out.push(check(
                format!("{name} risk gradient, 1000 points"),
                risk_err <= 1e-6,
                format!("max relative error {risk_err:.3e}"),
            ));
        }
    }
    Ok(out)
}

/// Random symmetric positive definite matrix `M^T M + eps I`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> PsdMatrix {
    let m = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-2.0..2.0));
    let a = m.transpose() * &m + DMatrix::identity(dim, dim) * 0.05;
    PsdMatrix::new((&a + a.transpose()) * 0.5).expect("symmetrized")
}

fn projections() -> Result<Vec<Check>> {
    let mut rng = ChaCha20Rng::seed_from_u64(404);
    let mut out = Vec::new();
    for set in [FeasibleSet::l1_ball(2, 1.0), FeasibleSet::simplex(2)] {
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..50 {
            let y = DVector::from_fn(2, |_, _| rng.random_range(-2.5..2.5));
            let a = random_spd(&mut rng, 2);
            let obj = |x: &DVector<f64>| (x - &y).dot(&(a.as_matrix() * (x - &y)));
            let x = set.a_norm_project(&y, &a)?;
            let mut grid_best = f64::INFINITY;
            for i in 0..=400 {
                for j in 0..=400 {
                    let z = DVector::from_row_slice(&[-1.0 + i as f64 / 200.0, -1.0 + j as f64 / 200.0]);
                    if set.contains(&z) {
                        grid_best = grid_best.min(obj(&z));
                    }
                }
            }
            let gap = (obj(&x) - grid_best) / grid_best.max(1e-12);
            worst = worst.max(if set.contains(&x) { gap } else { f64::INFINITY });
        }
        out.push(check(
            format!("A-norm projection vs 401x401 grid, {set:?}"),
            worst <= 1e-3,
            format!("worst relative gap {worst:.3e} over 50 instances"),
        ));
    }
    Ok(out)
}

fn h2() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (name, model) in reference_models(500, 6)? {
        if name == "joint" {
            continue;
        }
        let alpha = model.family.alpha()?;
        let mut rng = ChaCha20Rng::seed_from_u64(505);
        let pairs = if name == "mixture" { 2000 } else { 10_000 };
        let at = check_h2_empirical(&model, alpha, pairs, &mut rng)?;
        let over = check_h2_empirical(&model, 10.0 * alpha, pairs, &mut rng)?;
        out.push(check(
            format!("{name} curvature at alpha = {alpha:.4e}"),
            at.violations == 0,
            format!("{} violations in {pairs} pairs, worst margin {:.3e}", at.violations, at.worst_margin),
        ));
        out.push(check(
            format!("{name} curvature breaks at 10 alpha"),
            over.violations > 0,
            format!("{} violations in {pairs} pairs, worst margin {:.3e}", over.violations, over.worst_margin),
        ));
    }
    Ok(out)
}

fn bounds() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let ons = ons_theorem_bound(0.5, 1.0, 2.0, 2, 0.05, 10_000)?;
    let boa = boa_theorem_bound(1.0, 1.0, 1.0, 0.125, 0.05, 100)?;
    let monotone = (1..200).all(|t| {
        ons_theorem_bound(0.5, 1.0, 2.0, 2, 0.05, t).ok() < ons_theorem_bound(0.5, 1.0, 2.0, 2, 0.05, t + 1).ok()
    });
    out.push(check(
        "bound formulas",
        monotone && ons.is_finite() && (boa - 52.10).abs() < 0.01,
        format!("ONS {ons:.4}, BOA {boa:.4}"),
    ));

    let seeds: Vec<u64> = (0..20).collect();
    let config = ExperimentConfig {
        learner: LearnerSpec::Ons { gamma: None, alpha: None, refresh_period: None },
        family: reference_ar(),
        generator: reference_ar_generator(),
        horizon: 2000,
        seeds: seeds.clone(),
        delta: 0.05,
        rng: RngKind::Chacha20,
    };
    let opts = SearchOptions { restarts: 5, certificate_points: 100, ..SearchOptions::default() };
    let mut exceed = 0;
    let mut worst = f64::NEG_INFINITY;
    for &s in &seeds {
        let run = run_experiment(&config, s, &opts)?;
        worst = worst.max(run.terminal_regret() / run.terminal_bound());
        if run.terminal_regret() > run.terminal_bound() {
            exceed += 1;
        }
    }
    let frac = exceed as f64 / seeds.len() as f64;
    out.push(check(
        "ONS coverage, AR(2), 20 seeds, T=2000",
        frac <= 2.0 * config.delta + 0.05,
        format!("{exceed} of 20 seeds above the bound, largest regret/bound {worst:.3}"),
    ));
    Ok(out)
}
