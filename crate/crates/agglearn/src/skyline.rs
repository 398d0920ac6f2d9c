//! Fully supervised baselines.
//!
//! The skyline is a logistic regression with quadratic cross-features
//! trained on granular rows with their labels, the upper bound that
//! aggregate-trained models are measured against. It runs on the same
//! optimizer core as the aggregated path so that any gap between the two is
//! attributable to data access, not optimizer differences. The dummy model
//! is the matching lower bound: a constant predictor at the mean label.

use crate::agg_logistic::{Model, TrainConfig, TrainOutcome};
use crate::data::GranularDataset;
use crate::encoding::Encoder;
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_CLIP_EPSILON;
use crate::optim::{self, Csr, FitParams, Target};

/// Full-batch L2-regularized logistic fit on the encoded rows. Weights
/// start at zero, the intercept at the log-odds of the label rate.
pub fn train_skyline(
    labeled: &GranularDataset,
    encoder: &Encoder,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::Contract(
            "cannot train on an empty labeled set".into(),
        ));
    }
    if labeled.num_features() != encoder.num_features() {
        return Err(Error::Contract(format!(
            "labeled set has {} features but the encoder expects {}",
            labeled.num_features(),
            encoder.num_features()
        )));
    }
    let labels = labeled.labels(config.label);
    let positives: f64 = labels.iter().map(|&y| f64::from(y)).sum();
    let n = labeled.num_rows() as f64;
    if positives == 0.0 || positives == n {
        return Err(Error::DegenerateLabels(format!(
            "every row carries the same {} label, nothing to fit",
            config.label.as_str()
        )));
    }

    let csr = Csr::from_dataset(labeled, encoder)?;
    let counts = csr.column_counts();
    let mut label_side_dense = vec![0.0; csr.dim];
    for (r, &y) in labels.iter().enumerate() {
        if y == 1 {
            for &c in &csr.coords[csr.starts[r]..csr.starts[r + 1]] {
                label_side_dense[c as usize] += 1.0;
            }
        }
    }
    let mut live = Vec::new();
    let mut label_side = Vec::new();
    let mut precond = Vec::new();
    for (c, &g) in counts.iter().enumerate() {
        if g > 0.0 {
            live.push(c);
            label_side.push(label_side_dense[c]);
            precond.push(g.max(1.0));
        }
    }
    let multiplier = vec![1.0; live.len()];
    let target = Target {
        live,
        label_side,
        multiplier,
        bias_label_side: positives,
        bias_multiplier: 1.0,
    };
    let rate = (positives / n).clamp(DEFAULT_CLIP_EPSILON, 1.0 - DEFAULT_CLIP_EPSILON);
    let params = FitParams {
        optimizer: config.optimizer,
        step_size: config.step_size,
        iterations: config.num_iterations,
        l2: config.l2_lambda,
        l1: config.l1_lambda,
        precond,
        init_bias: optim::logit(rate),
    };
    let (theta, bias, log) = optim::fit(&csr, &target, &params)?;
    Ok(TrainOutcome {
        model: Model::new(encoder.clone(), theta, bias)?,
        log,
    })
}

/// Constant predictor at the empirical mean label. Degenerate label sets
/// are allowed; the mean is clamped to the evaluation clip range so the
/// prediction stays a usable probability.
pub fn dummy_model(labels: &[u8], encoder: &Encoder) -> Result<Model> {
    if labels.is_empty() {
        return Err(Error::Contract(
            "cannot build a dummy model from zero labels".into(),
        ));
    }
    let mean = labels.iter().map(|&y| f64::from(y)).sum::<f64>() / labels.len() as f64;
    let rate = mean.clamp(DEFAULT_CLIP_EPSILON, 1.0 - DEFAULT_CLIP_EPSILON);
    let theta = vec![0.0; encoder.dim() as usize];
    Model::new(encoder.clone(), theta, optim::logit(rate))
}
