//! Synthetic black-box exploration task: a max-of-Gaussian-bumps landscape
//! sampled on a discrete grid, with seeded additive Gaussian evaluation noise.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::canonical::{self, Hash256};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_seed: u64,
    pub dims: Vec<u32>,
    pub bumps: Vec<Bump>,
    pub noise_std: f64,
}

/// A point in the task grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Config(pub Vec<u32>);

impl Config {
    pub fn values(&self) -> &[u32] {
        &self.0
    }

    /// Hash of the canonical serialization (a JSON integer array).
    pub fn hash(&self) -> Hash256 {
        Hash256::of(&self.0).expect("integer arrays always serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub true_score: f64,
    pub observed_score: f64,
    pub cost: u32,
}

/// Every grid point in row-major order (last coordinate fastest).
pub fn grid_points(dims: &[u32]) -> impl Iterator<Item = Config> + '_ {
    let total: u64 = dims.iter().map(|&n| n as u64).product();
    (0..total).map(move |mut idx| {
        let mut v = vec![0u32; dims.len()];
        for (slot, &n) in v.iter_mut().zip(dims).rev() {
            *slot = (idx % n as u64) as u32;
            idx /= n as u64;
        }
        Config(v)
    })
}

pub fn generate_task(task_seed: u64, dims: &[u32], bump_count: usize, noise_std: f64) -> Result<TaskSpec> {
    if dims.is_empty() {
        return Err(Error::InvalidArgument("dims must be non-empty".into()));
    }
    if dims.iter().any(|&n| n == 0) {
        return Err(Error::InvalidArgument("every cardinality must be >= 1".into()));
    }
    if bump_count == 0 {
        return Err(Error::InvalidArgument("bump_count must be >= 1".into()));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::InvalidArgument("noise_std must be finite and >= 0".into()));
    }
    let mut r = rng::stream(&[rng::tag::TASK, task_seed]);
    let bumps = (0..bump_count)
        .map(|_| {
            let amplitude = r.gen_range(0.5..=1.0);
            let center = dims.iter().map(|_| r.gen_range(0.0..=1.0)).collect();
            let width = r.gen_range(0.05..=0.3);
            Bump { amplitude, center, width }
        })
        .collect();
    Ok(TaskSpec { task_seed, dims: dims.to_vec(), bumps, noise_std })
}

impl TaskSpec {
    pub fn grid_size(&self) -> u64 {
        self.dims.iter().map(|&n| n as u64).product()
    }

    pub fn check(&self, config: &Config) -> Result<()> {
        if config.0.len() != self.dims.len() {
            return Err(Error::InvalidArgument(format!(
                "config has {} coordinates, task has {}",
                config.0.len(),
                self.dims.len()
            )));
        }
        if let Some((i, (&v, &n))) = config.0.iter().zip(&self.dims).enumerate().find(|(_, (&v, &n))| v >= n) {
            return Err(Error::InvalidArgument(format!("coordinate {i} = {v} outside 0..{n}")));
        }
        Ok(())
    }

    pub fn true_score(&self, config: &Config) -> Result<f64> {
        self.check(config)?;
        let x: Vec<f64> = config.0.iter().zip(&self.dims).map(|(&v, &n)| (v as f64 + 0.5) / n as f64).collect();
        let best = self
            .bumps
            .iter()
            .map(|b| {
                let d2: f64 = x.iter().zip(&b.center).map(|(a, c)| (a - c) * (a - c)).sum();
                b.amplitude * (-d2 / (2.0 * b.width * b.width)).exp()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(best)
    }

    pub fn evaluate(&self, config: &Config, eval_seed: u64) -> Result<EvaluationResult> {
        let true_score = self.true_score(config)?;
        let observed_score = if self.noise_std == 0.0 {
            true_score
        } else {
            let mut r = rng::stream(&[rng::tag::EVAL, eval_seed]);
            let z: f64 = StandardNormal.sample(&mut r);
            true_score + self.noise_std * z
        };
        Ok(EvaluationResult { true_score, observed_score, cost: 1 })
    }

    pub fn all_configs(&self) -> impl Iterator<Item = Config> + '_ {
        grid_points(&self.dims)
    }

    /// Canonical text serialization.
    pub fn to_canonical(&self) -> String {
        canonical::to_string(self).expect("task spec holds finite reals")
    }
}
