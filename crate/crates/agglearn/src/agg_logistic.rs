//! Logistic regression trained from aggregated reports.
//!
//! The exact likelihood gradient of a logistic model splits into a label
//! side, sum_r y_r K(x_r), and a model side, sum_r P(x_r) K(x_r). The label
//! side is exactly what a report releases per coordinate, so only the model
//! side has to be rebuilt, and any pool of unlabeled rows from the same
//! distribution can stand in for the original displays once its column
//! statistics are rescaled to the report's. Two rescalings are offered: a
//! single global ratio between the estimated raw row count and the pool
//! size, and a per-coordinate ratio between the reported display count and
//! the pool's column count. The per-coordinate form is what makes training
//! robust to noised, thresholded reports.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{self, AggregationReport};
use crate::data::{GranularDataset, LabelKind};
use crate::encoding::{self, Encoder, SparseVector};
use crate::error::{Error, Result};
use crate::optim::{self, Csr, FitParams, Target};

/// A linear model over an encoder's coordinate space.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    encoder: Encoder,
    theta: Vec<f64>,
    bias: f64,
}

impl Model {
    pub fn new(encoder: Encoder, theta: Vec<f64>, bias: f64) -> Result<Model> {
        if theta.len() as u64 != encoder.dim() {
            return Err(Error::InvalidArgument(format!(
                "weight vector has {} entries for a coordinate space of {}",
                theta.len(),
                encoder.dim()
            )));
        }
        if !bias.is_finite() || theta.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "model weights must be finite".into(),
            ));
        }
        Ok(Model {
            encoder,
            theta,
            bias,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn weights(&self) -> &[f64] {
        &self.theta
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Linear score of a row: bias plus the weights of its active units.
    pub fn score(&self, features: &[u32]) -> Result<f64> {
        let mut z = self.bias;
        self.encoder
            .for_each_unit(features, |c| z += self.theta[c as usize])?;
        Ok(z)
    }

    pub fn predict_row(&self, features: &[u32]) -> Result<f64> {
        Ok(optim::sigmoid(self.score(features)?))
    }

    pub fn predict(&self, dataset: &GranularDataset) -> Result<Vec<f64>> {
        let mut preds = Vec::with_capacity(dataset.num_rows());
        for r in 0..dataset.num_rows() {
            preds.push(self.predict_row(dataset.features_of(r))?);
        }
        Ok(preds)
    }
}

/// Penalty-free log-likelihood of a labeled dataset under the model.
pub fn log_likelihood(model: &Model, dataset: &GranularDataset, label: LabelKind) -> Result<f64> {
    let labels = dataset.labels(label);
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let z = model.score(dataset.features_of(r))?;
        total += f64::from(y) * z - optim::log1pexp(z);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    PreconditionedConstantStep,
    Adam,
}

impl Optimizer {
    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::PreconditionedConstantStep => "preconditioned-constant-step",
            Optimizer::Adam => "adam",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "preconditioned-constant-step" => Ok(Optimizer::PreconditionedConstantStep),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::InvalidArgument(format!(
                "unknown optimizer `{other}`, expected preconditioned-constant-step or adam"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rescaling {
    /// One ratio for every coordinate: estimated raw count over pool size.
    Global,
    /// Per-coordinate ratio: reported displays over pool column count.
    CoordinateWise,
}

impl Rescaling {
    pub fn as_str(self) -> &'static str {
        match self {
            Rescaling::Global => "global",
            Rescaling::CoordinateWise => "coordinate-wise",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "global" => Ok(Rescaling::Global),
            "coordinate-wise" => Ok(Rescaling::CoordinateWise),
            other => Err(Error::InvalidArgument(format!(
                "unknown rescaling `{other}`, expected global or coordinate-wise"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub step_size: f64,
    pub l2_lambda: f64,
    /// L1 penalty, applied through Adam's proximal step; unsupported with
    /// the constant-step optimizer.
    pub l1_lambda: f64,
    pub num_iterations: usize,
    pub rescaling: Rescaling,
    /// Raw display count of the aggregated data; estimated from the report
    /// when absent.
    pub raw_count_estimate: Option<f64>,
    pub label: LabelKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::PreconditionedConstantStep,
            step_size: 1.0,
            l2_lambda: 1.0,
            l1_lambda: 0.0,
            num_iterations: 300,
            rescaling: Rescaling::CoordinateWise,
            raw_count_estimate: None,
            label: LabelKind::Click,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.step_size.is_finite() || self.step_size <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        for (name, v) in [("l2_lambda", self.l2_lambda), ("l1_lambda", self.l1_lambda)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.l1_lambda > 0.0 && self.optimizer != Optimizer::Adam {
            return Err(Error::InvalidArgument(
                "l1 regularization requires the adam optimizer".into(),
            ));
        }
        if self.num_iterations == 0 {
            return Err(Error::InvalidArgument(
                "training needs at least one iteration".into(),
            ));
        }
        if let Some(raw) = self.raw_count_estimate {
            if !raw.is_finite() || raw <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "raw count estimate must be positive, got {raw}"
                )));
            }
        }
        Ok(())
    }

    /// Ordered echo pairs recorded into model files and run configs.
    pub fn echo_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = vec![
            ("config.optimizer".into(), self.optimizer.as_str().into()),
            ("config.step_size".into(), self.step_size.to_string()),
            ("config.l2_lambda".into(), self.l2_lambda.to_string()),
            ("config.l1_lambda".into(), self.l1_lambda.to_string()),
            (
                "config.num_iterations".into(),
                self.num_iterations.to_string(),
            ),
            ("config.rescaling".into(), self.rescaling.as_str().into()),
        ];
        if let Some(raw) = self.raw_count_estimate {
            pairs.push(("config.raw_count_estimate".into(), raw.to_string()));
        }
        pairs.push(("config.label".into(), self.label.as_str().into()));
        pairs.push(("config.seed".into(), self.seed.to_string()));
        pairs
    }
}

/// One line of the training trace: the penalized surrogate objective and
/// norms measured before that iteration's update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub theta_norm: f64,
}

pub const TRAIN_LOG_HEADER: &str = "iteration,objective,grad_norm,theta_norm";

pub fn write_train_log<W: Write>(mut writer: W, rows: &[TrainLogRow]) -> Result<()> {
    writeln!(writer, "{TRAIN_LOG_HEADER}")?;
    for row in rows {
        writeln!(
            writer,
            "{},{},{},{}",
            row.iteration, row.objective, row.grad_norm, row.theta_norm
        )?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<TrainLogRow>,
}

/// Exact likelihood gradient from fully labeled rows:
/// sum_r y_r K(x_r) - sum_r P(x_r) K(x_r). The reference the aggregated
/// estimators are judged against.
pub fn exact_gradient(
    model: &Model,
    labeled: &GranularDataset,
    label: LabelKind,
) -> Result<SparseVector> {
    let csr = Csr::from_dataset(labeled, &model.encoder)?;
    let fwd = optim::forward(&csr, &model.theta, model.bias);
    let labels = labeled.labels(label);
    let mut label_side = vec![0.0; csr.dim];
    for (r, &y) in labels.iter().enumerate() {
        if y == 1 {
            for &c in &csr.coords[csr.starts[r]..csr.starts[r + 1]] {
                label_side[c as usize] += 1.0;
            }
        }
    }
    let counts = csr.column_counts();
    let mut pairs = Vec::new();
    for c in 0..csr.dim {
        if counts[c] > 0.0 {
            pairs.push((c as u64, label_side[c] - fwd.model_side[c]));
        }
    }
    Ok(SparseVector::from_pairs(pairs))
}

fn check_estimator_inputs(
    model: &Model,
    report: &AggregationReport,
    unlabeled: &GranularDataset,
) -> Result<()> {
    if report.encoder() != &model.encoder {
        return Err(Error::Contract(
            "model and report use different encoders".into(),
        ));
    }
    if unlabeled.num_features() != model.encoder.num_features() {
        return Err(Error::Contract(format!(
            "unlabeled pool has {} features but the encoder expects {}",
            unlabeled.num_features(),
            model.encoder.num_features()
        )));
    }
    Ok(())
}

fn report_label_values(report: &AggregationReport, label: LabelKind) -> Vec<f64> {
    let (_, clicks, sales) = report.metrics();
    match label {
        LabelKind::Click => clicks,
        LabelKind::Sale => sales,
    }
}

/// Gradient estimate with one global rescaling: the report's label side
/// minus (raw_count / pool_size) times the pool's model side, restricted to
/// the report support.
pub fn estimate_gradient_simple(
    model: &Model,
    report: &AggregationReport,
    unlabeled: &GranularDataset,
    label: LabelKind,
    raw_count: f64,
) -> Result<SparseVector> {
    check_estimator_inputs(model, report, unlabeled)?;
    if !raw_count.is_finite() || raw_count <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "raw count must be positive, got {raw_count}"
        )));
    }
    if unlabeled.is_empty() {
        return Err(Error::Contract(
            "global rescaling needs a non-empty unlabeled pool".into(),
        ));
    }
    let csr = Csr::from_dataset(unlabeled, &model.encoder)?;
    let fwd = optim::forward(&csr, &model.theta, model.bias);
    let scale = raw_count / unlabeled.num_rows() as f64;
    let labels = report_label_values(report, label);
    let pairs = report
        .support()
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, labels[i] - scale * fwd.model_side[c as usize]))
        .collect();
    Ok(SparseVector::from_pairs(pairs))
}

/// Gradient estimate with per-coordinate rescaling: the report's label side
/// minus (max(displays, 0) / pool column count) times the pool's model
/// side. Coordinates the pool never activates get no likelihood gradient.
pub fn estimate_gradient_rescaled(
    model: &Model,
    report: &AggregationReport,
    unlabeled: &GranularDataset,
    label: LabelKind,
) -> Result<SparseVector> {
    check_estimator_inputs(model, report, unlabeled)?;
    let csr = Csr::from_dataset(unlabeled, &model.encoder)?;
    let fwd = optim::forward(&csr, &model.theta, model.bias);
    let counts = csr.column_counts();
    let (displays, _, _) = report.metrics();
    let labels = report_label_values(report, label);
    let mut pairs = Vec::new();
    for (i, &c) in report.support().iter().enumerate() {
        let g = counts[c as usize];
        if g > 0.0 {
            let mult = displays[i].max(0.0) / g;
            pairs.push((c, labels[i] - mult * fwd.model_side[c as usize]));
        }
    }
    Ok(SparseVector::from_pairs(pairs))
}

/// Estimates the raw row count behind a report as the mean, over
/// single-feature tables, of their summed display counts. Exact on
/// noiseless unthresholded reports because every row lands in exactly one
/// modality per feature.
pub fn estimate_raw_count(report: &AggregationReport) -> Result<f64> {
    if report.is_empty() {
        return Err(Error::Contract(
            "cannot estimate a raw count from an empty report".into(),
        ));
    }
    let Some(map) = report.encoder().index_map() else {
        return Err(Error::InvalidArgument(
            "hashed reports have no single-feature tables to estimate from".into(),
        ));
    };
    let (displays, _, _) = report.metrics();
    let singles_end = map.singles_end();
    let total: f64 = report
        .support()
        .iter()
        .zip(&displays)
        .filter(|(&c, _)| c < singles_end)
        .map(|(_, &d)| d)
        .sum();
    Ok((total / map.num_features() as f64).max(1.0))
}

/// Mean per-feature total of a metric column, the report-side estimate of
/// that label's positive count. Falls back to spreading the full support
/// over the units of one row when the encoder is hashed.
fn mean_table_total(report: &AggregationReport, values: &[f64]) -> f64 {
    match report.encoder().index_map() {
        Some(map) => {
            let singles_end = map.singles_end();
            let total: f64 = report
                .support()
                .iter()
                .zip(values)
                .filter(|(&c, _)| c < singles_end)
                .map(|(_, &v)| v)
                .sum();
            total / map.num_features() as f64
        }
        None => {
            let total: f64 = values.iter().sum();
            total / report.encoder().units_per_row() as f64
        }
    }
}

fn resolve_raw_count(report: &AggregationReport, config: &TrainConfig) -> Result<f64> {
    if let Some(raw) = config.raw_count_estimate {
        return Ok(raw);
    }
    match report.encoder() {
        Encoder::Exact(_) => estimate_raw_count(report),
        Encoder::Hashed { .. } => {
            let (displays, _, _) = report.metrics();
            let total: f64 = displays.iter().map(|&d| d.max(0.0)).sum();
            Ok((total / report.encoder().units_per_row() as f64).max(1.0))
        }
    }
}

/// Trains a logistic model from an aggregated report and an unlabeled pool.
/// Weights start at zero; the intercept starts at the log-odds of the
/// report-estimated positive rate.
pub fn train(
    report: &AggregationReport,
    unlabeled: &GranularDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if report.is_empty() {
        return Err(Error::Contract("cannot train from an empty report".into()));
    }
    let encoder = report.encoder().clone();
    if unlabeled.num_features() != encoder.num_features() {
        return Err(Error::Contract(format!(
            "unlabeled pool has {} features but the report's encoder expects {}",
            unlabeled.num_features(),
            encoder.num_features()
        )));
    }
    let csr = Csr::from_dataset(unlabeled, &encoder)?;
    let counts = csr.column_counts();
    let raw_count = resolve_raw_count(report, config)?;
    let (displays, _, _) = report.metrics();
    let labels = report_label_values(report, config.label);
    let label_total = mean_table_total(report, &labels);
    let pool_size = unlabeled.num_rows();

    let mut live = Vec::new();
    let mut label_side = Vec::new();
    let mut multiplier = Vec::new();
    match config.rescaling {
        Rescaling::Global => {
            if pool_size == 0 {
                return Err(Error::Contract(
                    "global rescaling needs a non-empty unlabeled pool".into(),
                ));
            }
            let scale = raw_count / pool_size as f64;
            for (i, &c) in report.support().iter().enumerate() {
                live.push(c as usize);
                label_side.push(labels[i]);
                multiplier.push(scale);
            }
        }
        Rescaling::CoordinateWise => {
            for (i, &c) in report.support().iter().enumerate() {
                let g = counts[c as usize];
                if g > 0.0 {
                    live.push(c as usize);
                    label_side.push(labels[i]);
                    multiplier.push(displays[i].max(0.0) / g);
                }
            }
        }
    }
    let (bias_label_side, bias_multiplier) = if pool_size == 0 {
        // Nothing to push probability mass through; freeze the intercept.
        (0.0, 0.0)
    } else {
        (label_total, raw_count / pool_size as f64)
    };
    let precond: Vec<f64> = live.iter().map(|&c| counts[c].max(1.0)).collect();
    let target = Target {
        live,
        label_side,
        multiplier,
        bias_label_side,
        bias_multiplier,
    };

    let init_rate = {
        let rate = label_total / raw_count;
        if rate.is_finite() {
            rate.clamp(1e-7, 1.0 - 1e-7)
        } else {
            0.5
        }
    };
    let params = FitParams {
        optimizer: config.optimizer,
        step_size: config.step_size,
        iterations: config.num_iterations,
        l2: config.l2_lambda,
        l1: config.l1_lambda,
        precond,
        init_bias: optim::logit(init_rate),
    };
    let (theta, bias, log) = optim::fit(&csr, &target, &params)?;
    Ok(TrainOutcome {
        model: Model::new(encoder, theta, bias)?,
        log,
    })
}

/// Draws rows whose per-feature marginals match the report's single-feature
/// display counts (clamped at zero and renormalized), with independent
/// features and all labels zero. The fallback pool when no granular rows
/// are available at all.
pub fn generate_fake_granular(
    report: &AggregationReport,
    num_rows: usize,
    seed: u64,
) -> Result<GranularDataset> {
    let Some(map) = report.encoder().index_map() else {
        return Err(Error::InvalidArgument(
            "fake granular data needs an exact encoder's single-feature tables".into(),
        ));
    };
    if report.is_empty() {
        return Err(Error::Contract(
            "cannot draw fake rows from an empty report".into(),
        ));
    }
    let (displays, _, _) = report.metrics();
    let f = map.num_features();
    let mut cumulatives: Vec<Vec<f64>> = Vec::with_capacity(f);
    for feature in 0..f {
        let d = map.cardinality(feature);
        let mut weights = Vec::with_capacity(d as usize);
        for modality in 0..d {
            let coord = map.coordinate_of(feature, modality)?;
            let w = report.index_of(coord).map_or(0.0, |i| displays[i].max(0.0));
            weights.push(w);
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Contract(format!(
                "feature {feature}: every display count is zero or discarded, cannot sample it"
            )));
        }
        let mut acc = 0.0;
        let mut cum: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        if let Some(last) = cum.last_mut() {
            *last = 1.0;
        }
        cumulatives.push(cum);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dataset = GranularDataset::new(f);
    let mut row = vec![0u32; f];
    for _ in 0..num_rows {
        for (slot, cum) in row.iter_mut().zip(&cumulatives) {
            let u: f64 = rand::Rng::random(&mut rng);
            let m = cum.partition_point(|&c| c <= u);
            *slot = m.min(cum.len() - 1) as u32;
        }
        dataset.push_row(&row, 0, 0)?;
    }
    Ok(dataset)
}

pub const MODEL_MAGIC: &str = "#model-format v1";
pub const MODEL_CSV_HEADER: &str = "kind,feat_i,feat_j,mod_i,mod_j,weight";

/// Writes a linear model: commented metadata (format magic, kind, encoder
/// descriptor, bias, caller-supplied echo pairs), then the nonzero weights
/// as CSV rows in report coordinate convention.
pub fn write_model<W: Write>(
    mut writer: W,
    model: &Model,
    extra_meta: &[(String, String)],
) -> Result<()> {
    writeln!(writer, "{MODEL_MAGIC}")?;
    writeln!(writer, "#kind=linear")?;
    for (key, value) in encoding::encoder_meta_fields(&model.encoder) {
        writeln!(writer, "#{key}={value}")?;
    }
    writeln!(writer, "#bias={}", model.bias)?;
    for (key, value) in extra_meta {
        writeln!(writer, "#{key}={value}")?;
    }
    writeln!(writer, "{MODEL_CSV_HEADER}")?;
    for (c, &w) in model.theta.iter().enumerate() {
        if w != 0.0 {
            let fields = aggregation::coord_fields(&model.encoder, c as u64)?;
            writeln!(
                writer,
                "{},{},{},{},{},{}",
                fields[0], fields[1], fields[2], fields[3], fields[4], w
            )?;
        }
    }
    Ok(())
}

pub fn save_model(path: &Path, model: &Model, extra_meta: &[(String, String)]) -> Result<()> {
    let mut bytes = Vec::new();
    write_model(&mut bytes, model, extra_meta)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Metadata and body of a model file, split but not yet interpreted.
pub(crate) struct ModelText {
    /// (line, key, value) of each `#key=value` line after the magic.
    pub pairs: Vec<(u64, String, String)>,
    /// The CSV body starting at the header line.
    pub csv: String,
    /// 1-based line number the CSV body starts at.
    pub csv_start_line: u64,
}

pub(crate) fn split_model_text(text: &str) -> Result<ModelText> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim_end() == MODEL_MAGIC => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("model files must start with `{MODEL_MAGIC}`"),
            })
        }
    }
    let mut pairs = Vec::new();
    let mut csv_lines = Vec::new();
    let mut csv_start_line = 0;
    for (idx, raw) in lines {
        let line = idx as u64 + 1;
        if csv_start_line == 0 {
            if let Some(rest) = raw.strip_prefix('#') {
                let Some((key, value)) = rest.split_once('=') else {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected #key=value, got {raw:?}"),
                    });
                };
                pairs.push((line, key.trim().to_string(), value.trim().to_string()));
                continue;
            }
            csv_start_line = line;
        }
        csv_lines.push(raw);
    }
    if csv_start_line == 0 {
        return Err(Error::Parse {
            line: 0,
            message: "model file has no weight table".into(),
        });
    }
    Ok(ModelText {
        pairs,
        csv: csv_lines.join("\n"),
        csv_start_line,
    })
}

pub(crate) struct MetaCursor {
    pairs: Vec<(u64, String, String)>,
    pos: usize,
}

impl MetaCursor {
    pub fn new(pairs: Vec<(u64, String, String)>) -> Self {
        MetaCursor { pairs, pos: 0 }
    }

    pub fn expect(&mut self, key: &str) -> Result<(u64, String)> {
        match self.pairs.get(self.pos) {
            Some((line, k, v)) if k == key => {
                self.pos += 1;
                Ok((*line, v.clone()))
            }
            Some((line, k, _)) => Err(Error::Parse {
                line: *line,
                message: format!("expected key `{key}`, found `{k}`"),
            }),
            None => Err(Error::Parse {
                line: 0,
                message: format!("missing key `{key}`"),
            }),
        }
    }

    /// Remaining keys must all carry the `config.` echo prefix; they are
    /// informational and not interpreted.
    pub fn finish_allowing_config_echo(&self) -> Result<()> {
        for (line, key, _) in &self.pairs[self.pos..] {
            if !key.starts_with("config.") {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("unexpected key `{key}`"),
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn parse_meta_value<T: std::str::FromStr>(
    raw: &str,
    line: u64,
    what: &str,
) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {what} from `{raw}`"),
    })
}

/// Parses a linear model file; rejects other kinds.
pub fn parse_model(text: &str) -> Result<Model> {
    let split = split_model_text(text)?;
    let mut cursor = MetaCursor::new(split.pairs);
    let (line, kind) = cursor.expect("kind")?;
    if kind != "linear" {
        return Err(Error::Parse {
            line,
            message: format!("expected a linear model, found kind `{kind}`"),
        });
    }
    let encoder = encoding::encoder_from_meta(&mut |key| cursor.expect(key))?;
    let (line, bias_raw) = cursor.expect("bias")?;
    let bias: f64 = parse_meta_value(&bias_raw, line, "bias")?;
    cursor.finish_allowing_config_echo()?;

    let dim = encoder.dim();
    if dim > (1 << 31) {
        return Err(Error::Parse {
            line: 0,
            message: format!("coordinate space of {dim} is too large to load densely"),
        });
    }
    let mut theta = vec![0.0; dim as usize];
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(split.csv.as_bytes());
    {
        let headers = reader.headers()?;
        let expected: Vec<&str> = MODEL_CSV_HEADER.split(',').collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse {
                line: split.csv_start_line,
                message: format!("weight table header must be `{MODEL_CSV_HEADER}`"),
            });
        }
    }
    let mut prev: Option<u64> = None;
    for (idx, record) in reader.records().enumerate() {
        let line = split.csv_start_line + idx as u64 + 1;
        let record = record?;
        let coord = aggregation::coord_from_fields(
            &encoder, &record[0], &record[1], &record[2], &record[3], &record[4], line,
        )?;
        if let Some(p) = prev {
            if coord <= p {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "coordinates must be strictly increasing, {coord} follows {p}"
                    ),
                });
            }
        }
        prev = Some(coord);
        let weight: f64 = parse_meta_value(&record[5], line, "weight")?;
        if !weight.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("weights must be finite, got {weight}"),
            });
        }
        theta[coord as usize] = weight;
    }
    Model::new(encoder, theta, bias)
}

pub fn load_model(path: &Path) -> Result<Model> {
    parse_model(&fs::read_to_string(path)?)
}
