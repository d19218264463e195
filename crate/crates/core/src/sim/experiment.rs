//! The online protocol against simulated data, with true-risk regret accounting.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::boa::{boa_theorem_bound, Boa};
use crate::error::{Error, Result};
use crate::ons::{clip_to_norm, ons_theorem_bound, Ons};
use crate::stack::{make_gamma_grid, order_prior_from_penalties, Expert, ExpertBank, ExpertLabel, Stack};

use super::comparator::{comparator_search, Comparator, SearchOptions};
use super::family::{FamilySpec, RiskModel};
use super::generator::{GeneratorKind, RNG_NAME};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerSpec {
    /// ONS with `gamma` (default `alpha/2`); `alpha` defaults to the family constant.
    Ons { gamma: Option<f64>, alpha: Option<f64>, refresh_period: Option<usize> },
    /// BOA over fixed points of the feasible set, fed linearized losses.
    BoaFixed { experts: Vec<Vec<f64>>, prior: Option<Vec<f64>>, alpha: Option<f64> },
    /// BOA over ONS learners: a grid `gamma_i = 2^-i` of size `gamma_grid`
    /// and/or every model order up to the family's.
    BoaOns {
        gamma_grid: Option<usize>,
        #[serde(default)]
        order_grid: bool,
        alpha: Option<f64>,
    },
    /// Plays the offline comparator every round.
    ComparatorReplay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RngKind {
    Chacha20,
}

impl RngKind {
    pub fn name(self) -> &'static str {
        RNG_NAME
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub learner: LearnerSpec,
    pub family: FamilySpec,
    pub generator: GeneratorKind,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub delta: f64,
    #[serde(default = "default_rng")]
    pub rng: RngKind,
}

fn default_rng() -> RngKind {
    RngKind::Chacha20
}

/// One row of the regret log.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretRecord {
    pub t: usize,
    pub inst_risk: f64,
    pub cum_risk: f64,
    pub comparator_cum_risk: f64,
    pub regret: f64,
    /// Bound at horizon `t`; NaN where the bound is undefined (e.g. `t < 4` for BOA).
    pub theorem_bound_value: f64,
    /// Cumulative gradient clips, loss clamps and density clamps.
    pub clip_events: usize,
    pub weights_snapshot: Option<Vec<f64>>,
}

impl RegretRecord {
    pub const FIELDS: [&'static str; 8] = [
        "t",
        "inst_risk",
        "cum_risk",
        "comparator_cum_risk",
        "regret",
        "theorem_bound_value",
        "clip_events",
        "weights_snapshot",
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertSummary {
    pub labels: Vec<ExpertLabel>,
    /// `sum_t L_t(x_t^(i))` over the whole run.
    pub cum_risks: Vec<f64>,
    pub final_weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub seed: u64,
    pub records: Vec<RegretRecord>,
    pub comparator: Comparator,
    pub experts: Option<ExpertSummary>,
    pub generator_clamp_events: usize,
    pub model: RiskModel,
}

impl ExperimentRun {
    pub fn terminal_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.regret)
    }

    pub fn terminal_bound(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.theorem_bound_value)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must list at least one seed"));
        }
        self.family.validate().map_err(|e| prefix("family", e))?;
        self.generator.validate()?;
        let alpha = self.alpha()?;
        match &self.learner {
            LearnerSpec::Ons { gamma, refresh_period, .. } => {
                if let Some(g) = gamma {
                    positive("learner.gamma", *g)?;
                }
                if *refresh_period == Some(0) {
                    return Err(Error::config("learner.refresh_period must be at least 1"));
                }
            }
            LearnerSpec::BoaFixed { experts, prior, .. } => {
                let set = self.family.feasible_set()?;
                if experts.is_empty() {
                    return Err(Error::config("learner.experts must not be empty"));
                }
                for (i, e) in experts.iter().enumerate() {
                    let x = DVector::from_row_slice(e);
                    if e.len() != set.dim() || !set.contains(&x) {
                        return Err(Error::config(format!("learner.experts[{i}] is not a point of the feasible set")));
                    }
                }
                if let Some(p) = prior {
                    if p.len() != experts.len() {
                        return Err(Error::config("learner.prior must have one weight per expert"));
                    }
                    Boa::new(DVector::from_row_slice(p), 1.0).map_err(|e| prefix("learner.prior", e))?;
                }
            }
            LearnerSpec::BoaOns { gamma_grid, order_grid, .. } => {
                if *gamma_grid == Some(0) {
                    return Err(Error::config("learner.gamma_grid must be at least 1"));
                }
                if *order_grid && matches!(self.family, FamilySpec::Mixture { .. }) {
                    return Err(Error::config("learner.order_grid is not available for mixtures"));
                }
            }
            LearnerSpec::ComparatorReplay => {}
        }
        positive("alpha", alpha)
    }

    /// Exp-concavity constant used by the learner and the bounds.
    pub fn alpha(&self) -> Result<f64> {
        let explicit = match &self.learner {
            LearnerSpec::Ons { alpha, .. }
            | LearnerSpec::BoaFixed { alpha, .. }
            | LearnerSpec::BoaOns { alpha, .. } => *alpha,
            LearnerSpec::ComparatorReplay => None,
        };
        match explicit {
            Some(a) => Ok(a),
            None => self.family.alpha(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive, got {v}")))
    }
}

fn prefix(field: &str, e: Error) -> Error {
    match e {
        Error::Config(m) | Error::Contract(m) => Error::Config(format!("{field}: {m}")),
        other => other,
    }
}

enum Learner {
    Ons(Ons),
    Fixed { points: Vec<DVector<f64>>, agg: Boa, grad_bound: f64 },
    Stack(Stack),
    Replay(DVector<f64>),
}

impl Learner {
    fn predict(&self) -> DVector<f64> {
        match self {
            Learner::Ons(o) => o.predict().clone(),
            Learner::Fixed { points, agg, .. } => {
                let mut x = DVector::zeros(points[0].len());
                for (w, p) in agg.weights().iter().zip(points) {
                    x.axpy(*w, p, 1.0);
                }
                x
            }
            Learner::Stack(s) => s.predict(),
            Learner::Replay(x) => x.clone(),
        }
    }

    fn weights(&self) -> Option<Vec<f64>> {
        match self {
            Learner::Fixed { agg, .. } => Some(agg.weights().as_slice().to_vec()),
            Learner::Stack(s) => Some(s.weights().as_slice().to_vec()),
            _ => None,
        }
    }

    fn clip_events(&self) -> usize {
        match self {
            Learner::Ons(o) => o.clip_events(),
            Learner::Fixed { agg, .. } => agg.clamp_events(),
            Learner::Stack(s) => {
                s.aggregator().clamp_events() + s.bank().experts.iter().map(|e| e.ons.clip_events()).sum::<usize>()
            }
            Learner::Replay(_) => 0,
        }
    }
}

/// Builds the BOA-ONS bank and its prior.
fn build_stack(config: &ExperimentConfig, alpha: f64, grad_bound: f64) -> Result<(Stack, f64)> {
    let LearnerSpec::BoaOns { gamma_grid, order_grid, .. } = config.learner else {
        unreachable!("build_stack called for a non-stack learner")
    };
    let family = &config.family;
    let ambient_set = family.feasible_set()?;
    let dim = ambient_set.dim();
    let gammas = match (gamma_grid, order_grid) {
        (Some(k), _) => make_gamma_grid(k),
        (None, true) => vec![alpha / 2.0],
        (None, false) => make_gamma_grid(dim.max(20)),
    };
    let (p_max, q_max) = family.orders();
    let orders: Vec<(usize, usize)> = if order_grid {
        match family {
            FamilySpec::Ar { .. } => (1..=p_max).map(|p| (p, 0)).collect(),
            FamilySpec::Arch { .. } => (1..=q_max).map(|q| (0, q)).collect(),
            _ => (1..=p_max).flat_map(|p| (1..=q_max).map(move |q| (p, q))).collect(),
        }
    } else {
        vec![(p_max, q_max)]
    };

    let mut experts = Vec::new();
    let mut penalties = Vec::new();
    for &(p, q) in &orders {
        let sub = family.with_orders(p, q);
        let set = sub.feasible_set()?;
        let coords: Vec<usize> = (0..p).chain(p_max..p_max + q).collect();
        for &gamma in &gammas {
            let ons = Ons::new(set.clone(), gamma, grad_bound, set.center())?;
            experts.push(Expert::embedded(ons, ExpertLabel { gamma, order: (p, q) }, coords.clone()));
            penalties.push(if order_grid { p + q } else { 0 });
        }
    }
    let prior = order_prior_from_penalties((config.horizon as f64).max(2.0), &penalties);
    let prior_min = prior.min();
    let bank = ExpertBank::new(experts, dim, grad_bound, ambient_set.diameter())?;
    Ok((Stack::new(bank, prior)?, prior_min))
}

/// Bound of BOA over ONS experts with smallest prior weight `prior_min`; for a
/// uniform prior over `K` experts this is the gamma-grid corollary bound.
fn stack_bound(alpha: f64, g: f64, d: f64, dim: usize, prior_min: f64, delta: f64, t: usize) -> f64 {
    if t < 4 {
        return f64::NAN;
    }
    let a = (2.0 / alpha).max(1.0);
    let gd = g * d;
    let t = t as f64;
    a * (1.0 + dim as f64 * (1.0 + t * (alpha * gd).powi(2) / 4.0).ln())
        + 2.0 * (a + gd) * (t.ln() / prior_min).ln()
        + 5.0 * gd
        + (alpha * gd * gd + 44.0 * a) * (1.0 / delta).ln()
}

/// Runs one seed of `config`.
pub fn run_experiment(config: &ExperimentConfig, seed: u64, search: &SearchOptions) -> Result<ExperimentRun> {
    config.validate()?;
    let series = config.generator.generate(seed, config.horizon)?;
    let model = RiskModel::new(config.family.clone(), &series)?;
    let family = &config.family;
    let set = family.feasible_set()?;
    let dim = set.dim();
    let diameter = set.diameter();
    let alpha = config.alpha()?;
    let grad_bound = family.grad_bound()?;
    let horizon = config.horizon;

    let mut comparator = None;
    let (mut learner, bound): (Learner, Box<dyn Fn(usize) -> f64>) = match &config.learner {
        LearnerSpec::Ons { gamma, refresh_period, .. } => {
            let gamma = gamma.unwrap_or(alpha / 2.0);
            let mut ons = Ons::new(set.clone(), gamma, grad_bound, set.center())?;
            if let Some(period) = refresh_period {
                ons = ons.with_refresh_period(*period);
            }
            let delta = config.delta;
            (
                Learner::Ons(ons),
                Box::new(move |t| ons_theorem_bound(alpha, grad_bound, diameter, dim, delta, t).unwrap_or(f64::NAN)),
            )
        }
        LearnerSpec::BoaFixed { experts, prior, .. } => {
            let points: Vec<DVector<f64>> = experts.iter().map(|e| DVector::from_row_slice(e)).collect();
            let prior = match prior {
                Some(p) => DVector::from_row_slice(p),
                None => DVector::from_element(points.len(), 1.0 / points.len() as f64),
            };
            let prior_min = prior.min();
            let agg = Boa::new(prior, grad_bound * diameter)?;
            let delta = config.delta;
            (
                Learner::Fixed { points, agg, grad_bound },
                Box::new(move |t| {
                    boa_theorem_bound(alpha, grad_bound, diameter, prior_min, delta, t).unwrap_or(f64::NAN)
                }),
            )
        }
        LearnerSpec::BoaOns { .. } => {
            let (stack, prior_min) = build_stack(config, alpha, grad_bound)?;
            let delta = config.delta;
            (
                Learner::Stack(stack),
                Box::new(move |t| stack_bound(alpha, grad_bound, diameter, dim, prior_min, delta, t)),
            )
        }
        LearnerSpec::ComparatorReplay => {
            let c = comparator_search(&model, horizon, seed, search)?;
            let x = c.x_star.clone();
            comparator = Some(c);
            (Learner::Replay(x), Box::new(|_| 0.0))
        }
    };

    let mut inst = Vec::with_capacity(horizon);
    let mut clips = Vec::with_capacity(horizon);
    let mut snapshots = Vec::with_capacity(horizon);
    let mut loss_clamps = 0;
    let mut expert_risks = match &learner {
        Learner::Stack(s) => Some(vec![0.0; s.bank().len()]),
        Learner::Fixed { points, .. } => Some(vec![0.0; points.len()]),
        _ => None,
    };

    for t in 0..horizon {
        let round = &model.rounds[t];
        let x = learner.predict();
        let at = |e: Error| e.at_round(t + 1);
        inst.push(family.risk(&x, round).map_err(at)?);
        snapshots.push(learner.weights());
        match &mut learner {
            Learner::Ons(ons) => {
                let eval = family.loss_grad(&x, round).map_err(at)?;
                loss_clamps += eval.clamp_events;
                ons.step(&eval.grad).map_err(at)?;
            }
            Learner::Fixed { points, agg, grad_bound } => {
                let eval = family.loss_grad(&x, round).map_err(at)?;
                loss_clamps += eval.clamp_events;
                let (g, _) = clip_to_norm(&eval.grad, *grad_bound);
                let losses = DVector::from_iterator(points.len(), points.iter().map(|p| g.dot(&(p - &x))));
                if let Some(risks) = expert_risks.as_mut() {
                    for (r, p) in risks.iter_mut().zip(points.iter()) {
                        *r += family.risk(p, round).map_err(at)?;
                    }
                }
                agg.step(&losses).map_err(at)?;
            }
            Learner::Stack(stack) => {
                if let Some(risks) = expert_risks.as_mut() {
                    for (r, p) in risks.iter_mut().zip(stack.expert_predictions()) {
                        *r += family.risk(&p, round).map_err(at)?;
                    }
                }
                stack
                    .step(|z| {
                        let eval = family.loss_grad(z, round)?;
                        loss_clamps += eval.clamp_events;
                        Ok(eval.grad)
                    })
                    .map_err(at)?;
            }
            Learner::Replay(_) => {}
        }
        clips.push(learner.clip_events() + loss_clamps);
    }

    let comparator = match (comparator, &learner, &expert_risks) {
        (Some(c), _, _) => c,
        // BOA over fixed experts competes with the best of its experts
        (None, Learner::Fixed { points, .. }, Some(risks)) => {
            let best = (0..risks.len()).fold(0, |b, i| if risks[i] < risks[b] { i } else { b });
            Comparator { x_star: points[best].clone(), cum_risk: risks[best], certificate: None }
        }
        _ => comparator_search(&model, horizon, seed, search)?,
    };

    let mut records = Vec::with_capacity(horizon);
    let (mut cum, mut cum_star) = (0.0, 0.0);
    for t in 0..horizon {
        cum += inst[t];
        cum_star += model.risk(t, &comparator.x_star)?;
        records.push(RegretRecord {
            t: t + 1,
            inst_risk: inst[t],
            cum_risk: cum,
            comparator_cum_risk: cum_star,
            regret: cum - cum_star,
            theorem_bound_value: bound(t + 1),
            clip_events: clips[t],
            weights_snapshot: snapshots[t].take(),
        });
    }

    let experts = match (&learner, expert_risks) {
        (Learner::Stack(s), Some(cum_risks)) => Some(ExpertSummary {
            labels: s.bank().experts.iter().map(|e| e.label.clone()).collect(),
            cum_risks,
            final_weights: s.weights().as_slice().to_vec(),
        }),
        (Learner::Fixed { agg, .. }, Some(cum_risks)) => {
            Some(ExpertSummary { labels: Vec::new(), cum_risks, final_weights: agg.weights().as_slice().to_vec() })
        }
        _ => None,
    };

    Ok(ExperimentRun { seed, records, comparator, experts, generator_clamp_events: series.clamp_events, model })
}
