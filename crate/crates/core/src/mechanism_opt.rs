//! Automated mechanism design: evolution-strategies ascent on the neural
//! mechanism's parameters against a welfare objective measured on seeded
//! simulations.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blackboard::Blackboard;
use crate::error::{Error, Result};
use crate::incentive::{Mechanism, MechanismTheta};
use crate::rng;
use crate::sim::{Metrics, Mode, Scenario, Simulation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelfareWeights {
    pub w_best: f64,
    pub w_redund: f64,
    pub w_repro: f64,
    pub w_cost: f64,
}

impl Default for WelfareWeights {
    fn default() -> Self {
        WelfareWeights { w_best: 1.0, w_redund: 1.0, w_repro: 1.0, w_cost: 0.1 }
    }
}

pub fn welfare(m: &Metrics, w: &WelfareWeights) -> f64 {
    w.w_best * m.best_true_score() - w.w_redund * m.redundancy_rate + w.w_repro * m.reproduction_coverage
        - w.w_cost * m.normalized_compute()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsConfig {
    pub population: usize,
    pub sigma_es: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub base_seed: u64,
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || self.population % 2 != 0 {
            return Err(Error::InvalidConfig(format!("population must be positive and even, got {}", self.population)));
        }
        if !(self.sigma_es > 0.0 && self.sigma_es.is_finite()) {
            return Err(Error::InvalidConfig("sigma_es must be a positive real".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig("step_size must be a positive real".into()));
        }
        Ok(())
    }
}

/// Orthonormalizes the rows of `m` in place (modified Gram–Schmidt).
fn orthonormalize_rows(m: &mut [Vec<f64>]) {
    for i in 0..m.len() {
        for j in 0..i {
            let (done, rest) = m.split_at_mut(i);
            let dot: f64 = rest[0].iter().zip(&done[j]).map(|(a, b)| a * b).sum();
            for (a, b) in rest[0].iter_mut().zip(&done[j]) {
                *a -= dot * b;
            }
        }
        let norm = m[i].iter().map(|a| a * a).sum::<f64>().sqrt();
        for a in &mut m[i] {
            *a /= norm;
        }
    }
}

/// `pairs` antithetic directions in `dim` dimensions with `E[εεᵀ] = I`.
/// When `pairs >= dim` they form a tight frame: `Σ εεᵀ = pairs · I`.
pub fn perturbations(pairs: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(&[rng::tag::ES, seed]);
    let g: Vec<Vec<f64>> =
        (0..pairs).map(|_| (0..dim).map(|_| StandardNormal.sample(&mut r)).collect()).collect();
    if pairs >= dim {
        let mut cols: Vec<Vec<f64>> = (0..dim).map(|c| g.iter().map(|row| row[c]).collect()).collect();
        orthonormalize_rows(&mut cols);
        let scale = (pairs as f64).sqrt();
        (0..pairs).map(|j| cols.iter().map(|col| scale * col[j]).collect()).collect()
    } else {
        let mut rows = g;
        orthonormalize_rows(&mut rows);
        let scale = (dim as f64).sqrt();
        rows.into_iter().map(|row| row.into_iter().map(|a| scale * a).collect()).collect()
    }
}

/// Antithetic estimate `1/(P·σ) Σ_j [f(θ+σε_j) − f(θ−σε_j)] ε_j`.
/// Evaluations may run in parallel; accumulation is in `j` order.
pub fn es_gradient<F>(objective: &F, theta: &[f64], es: &EsConfig) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    es.validate()?;
    let eps = perturbations(es.population / 2, theta.len(), es.base_seed);
    let shifted = |e: &[f64], sign: f64| -> Vec<f64> {
        theta.iter().zip(e).map(|(t, d)| t + sign * es.sigma_es * d).collect()
    };
    let diffs: Vec<f64> = eps
        .par_iter()
        .map(|e| objective(&shifted(e, 1.0)) - objective(&shifted(e, -1.0)))
        .collect();
    let mut g = vec![0.0; theta.len()];
    for (d, e) in diffs.iter().zip(&eps) {
        for (gi, ei) in g.iter_mut().zip(e) {
            *gi += d * ei;
        }
    }
    let scale = 1.0 / (es.population as f64 * es.sigma_es);
    g.iter_mut().for_each(|gi| *gi *= scale);
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_welfare: f64,
    /// Norm of the gradient taken at this iteration; `None` on the final row.
    pub grad_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub theta: MechanismTheta,
    pub curve: Vec<CurvePoint>,
    pub sim_seeds: Vec<u64>,
}

impl TrainOutcome {
    pub fn initial_welfare(&self) -> f64 {
        self.curve.first().map_or(f64::NAN, |p| p.mean_welfare)
    }

    pub fn final_welfare(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |p| p.mean_welfare)
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("iteration,mean_welfare,grad_norm\n");
        for p in &self.curve {
            let g = p.grad_norm.map(|g| g.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", p.iteration, p.mean_welfare, g));
        }
        out
    }
}

/// Mean welfare of a neural mechanism over a fixed list of simulation seeds.
/// Every call uses the same seeds (common random numbers).
pub struct WelfareObjective {
    sim: Simulation,
    weights: WelfareWeights,
    seeds: Vec<u64>,
}

impl WelfareObjective {
    pub fn new(scenario: &Scenario, weights: WelfareWeights, seeds: Vec<u64>) -> Result<Self> {
        if !matches!(scenario.params.mechanism, Mechanism::Neural(_)) {
            return Err(Error::InvalidScenario("mechanism training needs a neural mechanism".into()));
        }
        Ok(WelfareObjective { sim: Simulation::new(scenario.clone())?, weights, seeds })
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn mean_welfare(&self, theta: &MechanismTheta) -> Result<f64> {
        let mut params = self.sim.scenario().params.clone();
        params.mechanism = Mechanism::Neural(theta.clone());
        let mut total = 0.0;
        for &seed in &self.seeds {
            let out = self.sim.run_with(&params, seed, Mode::Open, Blackboard::new())?;
            total += welfare(&out.metrics, &self.weights);
        }
        Ok(total / self.seeds.len() as f64)
    }

    fn eval_raw(&self, theta: &[f64]) -> f64 {
        match MechanismTheta::new(theta.to_vec()) {
            Ok(t) => self.mean_welfare(&t).unwrap_or(f64::NEG_INFINITY),
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

/// Default simulation seed list for training: `count` seeds derived from the
/// scenario's master seed.
pub fn training_seeds(master_seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| rng::derive_seed(&[rng::tag::TRAIN, master_seed, i])).collect()
}

/// Gradient ascent `θ ← θ + step·g` for `es.iterations` steps, starting from
/// the scenario's neural θ. Iteration `i` draws perturbations from
/// `derive([base_seed, i])`.
pub fn train_mechanism(scenario: &Scenario, weights: WelfareWeights, es: &EsConfig, sim_seeds: Vec<u64>) -> Result<TrainOutcome> {
    es.validate()?;
    let Mechanism::Neural(init) = &scenario.params.mechanism else {
        return Err(Error::InvalidScenario("mechanism training needs a neural mechanism".into()));
    };
    let objective = WelfareObjective::new(scenario, weights, sim_seeds)?;
    let mut theta = init.as_slice().to_vec();
    let mut curve = Vec::with_capacity(es.iterations + 1);
    let f = |t: &[f64]| objective.eval_raw(t);
    for iteration in 0..es.iterations {
        let mean_welfare = f(&theta);
        let step_es = EsConfig { base_seed: rng::derive_seed(&[es.base_seed, iteration as u64]), ..*es };
        let g = es_gradient(&f, &theta, &step_es)?;
        let grad_norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        curve.push(CurvePoint { iteration, mean_welfare, grad_norm: Some(grad_norm) });
        for (t, gi) in theta.iter_mut().zip(&g) {
            *t += es.step_size * gi;
        }
    }
    curve.push(CurvePoint { iteration: es.iterations, mean_welfare: f(&theta), grad_norm: None });
    Ok(TrainOutcome { theta: MechanismTheta::new(theta)?, curve, sim_seeds: objective.seeds })
}

#[cfg(test)]
mod tests;
