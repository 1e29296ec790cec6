//! One-hidden-layer perceptron scoring submissions for the neural mechanism.
//!
//! Flat parameter layout (length 113):
//! `[0, 80)` hidden weights, row `j` = hidden unit, 5 inputs each;
//! `[80, 96)` hidden biases; `[96, 112)` output weights; `112` output bias.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const INPUTS: usize = 5;
pub const HIDDEN: usize = 16;
pub const THETA_LEN: usize = INPUTS * HIDDEN + HIDDEN + HIDDEN + 1;

const W1: usize = 0;
const B1: usize = INPUTS * HIDDEN;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + HIDDEN;

pub type Features = [f64; INPUTS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MechanismTheta(Vec<f64>);

impl MechanismTheta {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != THETA_LEN {
            return Err(Error::InvalidParams(format!("theta needs {THETA_LEN} entries, got {}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("theta[{i}] is not finite")));
        }
        Ok(MechanismTheta(values))
    }

    pub fn zeros() -> Self {
        MechanismTheta(vec![0.0; THETA_LEN])
    }

    /// Entries drawn i.i.d. from Normal(0, 0.1²).
    pub fn seeded(seed: u64) -> Self {
        let mut r = rng::stream(&[rng::tag::THETA, seed]);
        let n = Normal::new(0.0, 0.1).expect("valid normal");
        MechanismTheta((0..THETA_LEN).map(|_| n.sample(&mut r)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Raw logit for one feature vector: tanh hidden layer, linear output.
    pub fn score(&self, x: &Features) -> f64 {
        let p = &self.0;
        let mut out = p[B2];
        for j in 0..HIDDEN {
            let row = &p[W1 + j * INPUTS..W1 + (j + 1) * INPUTS];
            let pre: f64 = p[B1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            out += p[W2 + j] * pre.tanh();
        }
        out
    }
}

impl TryFrom<Vec<f64>> for MechanismTheta {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        MechanismTheta::new(v)
    }
}

impl From<MechanismTheta> for Vec<f64> {
    fn from(t: MechanismTheta) -> Self {
        t.0
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
