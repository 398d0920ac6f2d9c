//! Shared full-batch logistic fitting machinery.
//!
//! Every training surface in the crate (aggregated reports, fully labeled
//! granular rows, enriched rows) is gradient ascent on a penalized
//! log-likelihood whose model-side term is sum_r P(x_r) * x_r. This module
//! owns that loop: the CSR design matrix, the forward pass, the
//! preconditioned constant-step and Adam updates, and the per-iteration log.
//!
//! The forward pass shards rows into fixed-size chunks and merges partial
//! sums in chunk order, so results are bit-identical no matter how many
//! worker threads rayon uses.

use rayon::prelude::*;

use crate::agg_logistic::{Optimizer, TrainLogRow};
use crate::data::GranularDataset;
use crate::encoding::Encoder;
use crate::error::{Error, Result};

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow at large |z|.
pub(crate) fn log1pexp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Row-compressed sparse design matrix over a coordinate space.
pub(crate) struct Csr {
    pub dim: usize,
    pub starts: Vec<usize>,
    pub coords: Vec<u64>,
    /// None means every stored unit has value 1.
    pub values: Option<Vec<f64>>,
}

/// Largest coordinate space the trainers will hold densely.
const MAX_TRAIN_DIM: u64 = 1 << 31;

impl Csr {
    pub fn from_dataset(dataset: &GranularDataset, encoder: &Encoder) -> Result<Csr> {
        let dim = encoder.dim();
        if dim > MAX_TRAIN_DIM {
            return Err(Error::InvalidArgument(format!(
                "coordinate space of {dim} is too large to train on"
            )));
        }
        let n = dataset.num_rows();
        let mut starts = Vec::with_capacity(n + 1);
        let mut coords = Vec::with_capacity(n * encoder.units_per_row() as usize);
        starts.push(0);
        for r in 0..n {
            encoder.for_each_unit(dataset.features_of(r), |c| coords.push(c))?;
            starts.push(coords.len());
        }
        Ok(Csr {
            dim: dim as usize,
            starts,
            coords,
            values: None,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.starts.len() - 1
    }

    /// Per-coordinate sum of unit values; for unit-valued matrices this is
    /// the observed count G used both as rescaling denominator and as the
    /// constant-step preconditioner.
    pub fn column_counts(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.dim];
        match &self.values {
            None => {
                for &c in &self.coords {
                    counts[c as usize] += 1.0;
                }
            }
            Some(values) => {
                for (&c, &v) in self.coords.iter().zip(values) {
                    counts[c as usize] += v;
                }
            }
        }
        counts
    }

    /// Per-coordinate sum of squared values, the preconditioner for
    /// matrices with non-unit numeric columns.
    pub fn column_sq_norms(&self) -> Vec<f64> {
        match &self.values {
            None => self.column_counts(),
            Some(values) => {
                let mut norms = vec![0.0; self.dim];
                for (&c, &v) in self.coords.iter().zip(values) {
                    norms[c as usize] += v * v;
                }
                norms
            }
        }
    }
}

pub(crate) struct Forward {
    /// Dense sum_r P(x_r) * x_r.
    pub model_side: Vec<f64>,
    /// sum_r P(x_r).
    pub prob_sum: f64,
    /// sum_r ln(1 + e^{z_r}).
    pub lse_sum: f64,
}

const FORWARD_CHUNK: usize = 8192;

pub(crate) fn forward(csr: &Csr, theta: &[f64], bias: f64) -> Forward {
    let n = csr.num_rows();
    let num_chunks = n.div_ceil(FORWARD_CHUNK);
    let partials: Vec<(Vec<f64>, f64, f64)> = (0..num_chunks)
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * FORWARD_CHUNK;
            let end = ((chunk + 1) * FORWARD_CHUNK).min(n);
            let mut probs = Vec::with_capacity(end - start);
            let mut prob_sum = 0.0;
            let mut lse_sum = 0.0;
            for r in start..end {
                let (s, e) = (csr.starts[r], csr.starts[r + 1]);
                let mut z = bias;
                match &csr.values {
                    None => {
                        for &c in &csr.coords[s..e] {
                            z += theta[c as usize];
                        }
                    }
                    Some(values) => {
                        for (&c, &v) in csr.coords[s..e].iter().zip(&values[s..e]) {
                            z += theta[c as usize] * v;
                        }
                    }
                }
                let p = sigmoid(z);
                probs.push(p);
                prob_sum += p;
                lse_sum += log1pexp(z);
            }
            (probs, prob_sum, lse_sum)
        })
        .collect();

    let mut model_side = vec![0.0; csr.dim];
    let mut prob_sum = 0.0;
    let mut lse_sum = 0.0;
    let mut r = 0usize;
    for (probs, chunk_prob_sum, chunk_lse_sum) in &partials {
        prob_sum += chunk_prob_sum;
        lse_sum += chunk_lse_sum;
        for &p in probs {
            let (s, e) = (csr.starts[r], csr.starts[r + 1]);
            match &csr.values {
                None => {
                    for &c in &csr.coords[s..e] {
                        model_side[c as usize] += p;
                    }
                }
                Some(values) => {
                    for (&c, &v) in csr.coords[s..e].iter().zip(&values[s..e]) {
                        model_side[c as usize] += p * v;
                    }
                }
            }
            r += 1;
        }
    }
    Forward {
        model_side,
        prob_sum,
        lse_sum,
    }
}

/// Data side of the gradient, restricted to the coordinates that can ever
/// receive a likelihood signal. Coordinates outside `live` start at zero and
/// stay there: their gradient is pure L2 decay of a zero weight.
pub(crate) struct Target {
    /// Sorted coordinates with a live likelihood term.
    pub live: Vec<usize>,
    /// Label-side term per live coordinate.
    pub label_side: Vec<f64>,
    /// Multiplier on the model-side term per live coordinate.
    pub multiplier: Vec<f64>,
    pub bias_label_side: f64,
    pub bias_multiplier: f64,
}

pub(crate) struct FitParams {
    pub optimizer: Optimizer,
    pub step_size: f64,
    pub iterations: usize,
    pub l2: f64,
    pub l1: f64,
    /// Preconditioner values per live coordinate, already floored at 1.
    pub precond: Vec<f64>,
    pub init_bias: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Runs the ascent loop and returns (theta, bias, per-iteration log). The
/// logged objective is the penalized surrogate evaluated before the step:
/// <label_side, theta> plus bias terms, minus the multiplier-weighted
/// log-partition and the penalties. For uniform multipliers this is exactly
/// the penalized log-likelihood estimate; for coordinate-wise rescaling it
/// is monitoring output only.
pub(crate) fn fit(
    csr: &Csr,
    target: &Target,
    params: &FitParams,
) -> Result<(Vec<f64>, f64, Vec<TrainLogRow>)> {
    let live = &target.live;
    let mut theta = vec![0.0; csr.dim];
    let mut bias = params.init_bias;
    let bias_precond = (csr.num_rows() as f64).max(1.0);
    let mut grad = vec![0.0; live.len()];
    let adam = matches!(params.optimizer, Optimizer::Adam);
    let (mut m1, mut m2) = if adam {
        (vec![0.0; live.len()], vec![0.0; live.len()])
    } else {
        (Vec::new(), Vec::new())
    };
    let (mut m1_bias, mut m2_bias) = (0.0f64, 0.0f64);
    let mut log = Vec::with_capacity(params.iterations);

    for it in 0..params.iterations {
        let fwd = forward(csr, &theta, bias);
        let mut objective = target.bias_label_side * bias - target.bias_multiplier * fwd.lse_sum;
        let mut grad_sq = 0.0;
        let mut theta_sq = 0.0;
        let mut theta_abs = 0.0;
        for (k, &c) in live.iter().enumerate() {
            let t = theta[c];
            objective += target.label_side[k] * t;
            theta_sq += t * t;
            theta_abs += t.abs();
            let g = target.label_side[k] - target.multiplier[k] * fwd.model_side[c] - params.l2 * t;
            grad[k] = g;
            grad_sq += g * g;
        }
        objective -= 0.5 * params.l2 * theta_sq + params.l1 * theta_abs;
        let grad_bias = target.bias_label_side - target.bias_multiplier * fwd.prob_sum;
        grad_sq += grad_bias * grad_bias;

        match params.optimizer {
            Optimizer::PreconditionedConstantStep => {
                for (k, &c) in live.iter().enumerate() {
                    theta[c] += params.step_size * grad[k] / params.precond[k];
                }
                bias += params.step_size * grad_bias / bias_precond;
            }
            Optimizer::Adam => {
                let t = (it + 1) as i32;
                let corr1 = 1.0 - ADAM_BETA1.powi(t);
                let corr2 = 1.0 - ADAM_BETA2.powi(t);
                for (k, &c) in live.iter().enumerate() {
                    let g = grad[k];
                    m1[k] = ADAM_BETA1 * m1[k] + (1.0 - ADAM_BETA1) * g;
                    m2[k] = ADAM_BETA2 * m2[k] + (1.0 - ADAM_BETA2) * g * g;
                    let step =
                        params.step_size * (m1[k] / corr1) / ((m2[k] / corr2).sqrt() + ADAM_EPS);
                    let updated = theta[c] + step;
                    theta[c] = if params.l1 > 0.0 {
                        soft_threshold(updated, params.step_size * params.l1)
                    } else {
                        updated
                    };
                }
                m1_bias = ADAM_BETA1 * m1_bias + (1.0 - ADAM_BETA1) * grad_bias;
                m2_bias = ADAM_BETA2 * m2_bias + (1.0 - ADAM_BETA2) * grad_bias * grad_bias;
                bias +=
                    params.step_size * (m1_bias / corr1) / ((m2_bias / corr2).sqrt() + ADAM_EPS);
            }
        }

        if !bias.is_finite() || live.iter().any(|&c| !theta[c].is_finite()) {
            return Err(Error::Divergence { iteration: it });
        }
        log.push(TrainLogRow {
            iteration: it,
            objective,
            grad_norm: grad_sq.sqrt(),
            theta_norm: theta_sq.sqrt(),
        });
    }
    Ok((theta, bias, log))
}
