//! Implementations of the single-run subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;

use agglearn::agg_logistic::{
    self, generate_fake_granular, train, Optimizer, Rescaling, TrainConfig,
};
use agglearn::aggregation::{self, calibrate_sigma, l2_sensitivity, table_count};
use agglearn::data::{self, synthetic_schema, LabelKind, SyntheticSpec};
use agglearn::encoding::{Encoder, HashedEncoderConfig};
use agglearn::enrichment::{
    self, compute_ctr_table, enrich, load_model_file, predict_enriched, train_enriched,
};
use agglearn::evaluation::{self, DEFAULT_CLIP_EPSILON};
use agglearn::skyline::{dummy_model, train_skyline};
use agglearn::{Error, Result};

use crate::config::{ensure_out_dir, parse_list, Resolver};
use crate::io::{self, MODEL_BIN, SCHEMA_VOCAB, TRAIN_LOG};

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Config file with key=value lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated modality counts, one per feature.
    #[arg(long)]
    pub cardinalities: Option<String>,
    #[arg(long)]
    pub rows: Option<usize>,
    /// Target positive click rate.
    #[arg(long)]
    pub base_rate: Option<f64>,
    /// Zipf exponent of the feature marginals; 0 is uniform.
    #[arg(long)]
    pub skew: Option<f64>,
    /// Fraction of nonzero ground-truth weights.
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory: data.csv, truth.bin, schema.vocab, config.kv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut r = Resolver::new("generate", args.config.as_deref())?;
    let cardinalities_raw = r.value("cardinalities", args.cardinalities, "24,16,10,6".into())?;
    let rows = r.value("rows", args.rows, 80_000)?;
    let base_rate = r.value("base-rate", args.base_rate, 0.1)?;
    let skew = r.value("skew", args.skew, 1.0)?;
    let density = r.value("density", args.density, 0.25)?;
    let seed = r.value("seed", args.seed, 0)?;
    let out = ensure_out_dir(&r.required_path("out", args.out)?)?;

    let cardinalities: Vec<usize> = parse_list(&cardinalities_raw, "cardinalities")?
        .into_iter()
        .map(|(_, d)| d)
        .collect();
    let mut spec = SyntheticSpec::new(cardinalities, rows, base_rate, seed);
    spec.marginal_skew = vec![skew; spec.num_features];
    spec.true_weight_density = density;
    let (dataset, truth) = data::generate_synthetic(&spec)?;
    let schema = synthetic_schema(&spec);

    data::save_granular_csv(out.join("data.csv"), &dataset, &schema)?;
    agg_logistic::save_model(&out.join("truth.bin"), &truth, &[])?;
    schema.save_vocab(out.join(SCHEMA_VOCAB))?;
    r.note("positive-rate", dataset.positive_rate(LabelKind::Click));
    r.write_echo(&out)
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input granular CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Vocabulary to intern against; derived from the data when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Comma-separated fractions summing to 1.
    #[arg(long)]
    pub fractions: Option<String>,
    /// Comma-separated output names, one per fraction.
    #[arg(long)]
    pub names: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_split(args: SplitArgs) -> Result<()> {
    let mut r = Resolver::new("split", args.config.as_deref())?;
    let data_path = r.required_path("data", args.data)?;
    let vocab = r.optional_path("vocab", args.vocab)?;
    let fractions_raw = r.value("fractions", args.fractions, "0.7,0.05,0.1,0.15".into())?;
    let names_raw = r.value("names", args.names, "train,labeled,valid,test".into())?;
    let seed = r.value("seed", args.seed, 0)?;
    let out = ensure_out_dir(&r.required_path("out", args.out)?)?;

    let fractions: Vec<f64> = parse_list(&fractions_raw, "fractions")?
        .into_iter()
        .map(|(_, f)| f)
        .collect();
    let names: Vec<String> = names_raw
        .split(',')
        .map(|n| n.trim().to_string())
        .filter(|n| !n.is_empty())
        .collect();
    if names.len() != fractions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} names for {} fractions",
            names.len(),
            fractions.len()
        )));
    }

    let (dataset, schema) = io::load_data(&data_path, vocab.as_deref())?;
    let parts = data::split(&dataset, &fractions, seed)?;
    for (name, part) in names.iter().zip(&parts) {
        data::save_granular_csv(out.join(format!("{name}.csv")), part, &schema)?;
        r.note(&format!("rows-{name}"), part.num_rows());
    }
    schema.save_vocab(out.join(SCHEMA_VOCAB))?;
    r.write_echo(&out)
}

#[derive(Args, Debug)]
pub struct AggregateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Gaussian noise scale; exclusive with epsilon/delta. Default 17.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Privacy budget; requires --delta, computes sigma.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Pre-noise minimum display count; 0 disables thresholding.
    #[arg(long)]
    pub threshold: Option<u64>,
    /// Store (S, C-S, D-C) instead of (D, C, S), shrinking sensitivity.
    #[arg(long)]
    pub reparameterize: bool,
    /// Hash coordinate space size; switches to the hashed encoder.
    #[arg(long)]
    pub hashed_p: Option<u64>,
    #[arg(long)]
    pub hashed_salt: Option<u64>,
    /// Noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_aggregate(args: AggregateArgs) -> Result<()> {
    let mut r = Resolver::new("aggregate", args.config.as_deref())?;
    let data_path = r.required_path("data", args.data)?;
    let vocab = r.optional_path("vocab", args.vocab)?;
    let sigma_flag = r.optional("sigma", args.sigma)?;
    let epsilon = r.optional("epsilon", args.epsilon)?;
    let delta = r.optional("delta", args.delta)?;
    let threshold = r.value("threshold", args.threshold, 10)?;
    let reparameterize = r.flag("reparameterize", args.reparameterize, false)?;
    let hashed_p = r.optional("hashed-p", args.hashed_p)?;
    let hashed_salt = r.optional("hashed-salt", args.hashed_salt)?;
    let seed = r.value("seed", args.seed, 0)?;
    let out = ensure_out_dir(&r.required_path("out", args.out)?)?;

    if hashed_salt.is_some() && hashed_p.is_none() {
        return Err(Error::InvalidArgument(
            "hashed-salt is meaningless without hashed-p".into(),
        ));
    }
    let (dataset, schema) = io::load_data(&data_path, vocab.as_deref())?;
    let encoder = match hashed_p {
        Some(p) => Encoder::hashed(
            schema.num_features(),
            HashedEncoderConfig::new(p, hashed_salt.unwrap_or(0)),
        )?,
        None => Encoder::exact(&schema.cardinalities())?,
    };

    let sigma = match (sigma_flag, epsilon, delta) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(Error::InvalidArgument(
                "pass either --sigma or --epsilon/--delta, not both".into(),
            ));
        }
        (Some(s), None, None) => s,
        (None, Some(eps), Some(del)) => {
            let tables = table_count(schema.num_features())?;
            let sensitivity = l2_sensitivity(tables, 3, reparameterize)?;
            let s = calibrate_sigma(eps, del, sensitivity)?;
            r.note("l2-sensitivity", sensitivity);
            s
        }
        (None, Some(_), None) | (None, None, Some(_)) => {
            return Err(Error::InvalidArgument(
                "epsilon and delta must be given together".into(),
            ));
        }
        (None, None, None) => 17.0,
    };
    r.note("resolved-sigma", sigma);

    let mut report = aggregation::aggregate(&dataset, &encoder)?;
    if threshold > 0 {
        report = aggregation::threshold_report(&report, threshold)?;
    }
    if reparameterize {
        report = report.reparameterize()?;
    }
    let report = report.add_gaussian_noise(sigma, seed)?;

    report.save(&out.join(io::REPORT_CSV), &out.join(io::REPORT_META))?;
    schema.save_vocab(out.join(SCHEMA_VOCAB))?;
    r.note("support-size", report.len());
    r.write_echo(&out)
}

/// Optimizer knobs shared by every training method.
#[derive(Args, Debug)]
pub struct FitFlags {
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub l1: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Resolves the shared fitting knobs into a TrainConfig, leaving the
/// method-specific fields (rescaling, raw count) at their defaults.
fn resolve_fit(r: &mut Resolver, flags: FitFlags) -> Result<TrainConfig> {
    let optimizer_raw = r.value(
        "optimizer",
        flags.optimizer,
        Optimizer::PreconditionedConstantStep.as_str().into(),
    )?;
    let step_size = r.value("step-size", flags.step_size, 1.0)?;
    let l2 = r.value("l2", flags.l2, 1.0)?;
    let l1 = r.value("l1", flags.l1, 0.0)?;
    let iterations = r.value("iterations", flags.iterations, 300)?;
    let label_raw = r.value("label", flags.label, LabelKind::Click.as_str().into())?;
    let seed = r.value("seed", flags.seed, 0)?;
    Ok(TrainConfig {
        optimizer: Optimizer::parse(&optimizer_raw)?,
        step_size,
        l2_lambda: l2,
        l1_lambda: l1,
        num_iterations: iterations,
        label: LabelKind::parse(&label_raw)?,
        seed,
        ..TrainConfig::default()
    })
}

fn write_train_outputs(
    out: &Path,
    model: &agglearn::agg_logistic::Model,
    log: &[agglearn::agg_logistic::TrainLogRow],
    config: &TrainConfig,
) -> Result<()> {
    agg_logistic::save_model(&out.join(MODEL_BIN), model, &config.echo_pairs())?;
    let mut bytes = Vec::new();
    agg_logistic::write_train_log(&mut bytes, log)?;
    fs::write(out.join(TRAIN_LOG), bytes)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainAggArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory produced by `aggregate`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Unlabeled granular CSV (labels are ignored if present).
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    /// Gradient estimator: coordinate-wise (rescaled) or global.
    #[arg(long)]
    pub rescaling: Option<String>,
    /// Override for the raw display count behind the report.
    #[arg(long)]
    pub raw_count: Option<f64>,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_train_agglogistic(args: TrainAggArgs) -> Result<()> {
    let mut r = Resolver::new("train-agglogistic", args.config.as_deref())?;
    let report_dir = r.required_path("report", args.report)?;
    let unlabeled_path = r.required_path("unlabeled", args.unlabeled)?;
    let rescaling_raw = r.value(
        "rescaling",
        args.rescaling,
        Rescaling::CoordinateWise.as_str().into(),
    )?;
    let raw_count = r.optional("raw-count", args.raw_count)?;
    let mut config = resolve_fit(&mut r, args.fit)?;
    let out = ensure_out_dir(&r.required_path("out", args.out)?)?;
    config.rescaling = Rescaling::parse(&rescaling_raw)?;
    config.raw_count_estimate = raw_count;

    let (report, schema) = io::load_report_dir(&report_dir)?;
    let unlabeled = io::load_data(&unlabeled_path, Some(&report_dir.join(SCHEMA_VOCAB)))?.0;
    let outcome = train(&report, &unlabeled, &config)?;

    write_train_outputs(&out, &outcome.model, &outcome.log, &config)?;
    schema.save_vocab(out.join(SCHEMA_VOCAB))?;
    r.write_echo(&out)
}

#[derive(Args, Debug)]
pub struct TrainEnrichArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Labeled granular CSV to enrich and train on.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// Validation CSV for prior-weight selection.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Comma-separated smoothing weights; a list requires --valid.
    #[arg(long)]
    pub prior_weight: Option<String>,
    /// Override for the global rate p0.
    #[arg(long)]
    pub global_rate: Option<f64>,
    /// Add display-count columns to the numeric features.
    #[arg(long)]
    pub include_counts: bool,
    /// Label the CTR table is computed from; defaults to --label.
    #[arg(long)]
    pub table_label: Option<String>,
    /// Write the enriched training rows as CSV to this path.
    #[arg(long)]
    pub export_enriched: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_train_enrich(args: TrainEnrichArgs) -> Result<()> {
    let mut r = Resolver::new("train-enrich", args.config.as_deref())?;
    let report_dir = r.required_path("report", args.report)?;
    let labeled_path = r.required_path("labeled", args.labeled)?;
    let valid_path = r.optional_path("valid", args.valid)?;
    let prior_weight_raw = r.value("prior-weight", args.prior_weight, "32".into())?;
    let global_rate = r.optional("global-rate", args.global_rate)?;
    let include_counts = r.flag("include-counts", args.include_counts, false)?;
    let config = resolve_fit(&mut r, args.fit)?;
    let table_label_raw = r.value(
        "table-label",
        args.table_label,
        config.label.as_str().into(),
    )?;
    let export_enriched = r.optional_path("export-enriched", args.export_enriched)?;
    let out = ensure_out_dir(&r.required_path("out", args.out)?)?;
    let table_label = LabelKind::parse(&table_label_raw)?;

    let weights = parse_list::<f64>(&prior_weight_raw, "prior-weight")?;
    if weights.is_empty() {
        return Err(Error::InvalidArgument("prior-weight list is empty".into()));
    }
    if weights.len() > 1 && valid_path.is_none() {
        return Err(Error::InvalidArgument(
            "a prior-weight grid needs --valid to pick the winner".into(),
        ));
    }

    let (report, schema) = io::load_report_dir(&report_dir)?;
    let vocab_path = report_dir.join(SCHEMA_VOCAB);
    let (labeled, _) = io::load_labeled_data(&labeled_path, Some(&vocab_path), config.label)?;
    let valid = valid_path
        .map(|p| io::load_labeled_data(&p, Some(&vocab_path), config.label))
        .transpose()?
        .map(|(d, _)| d);

    struct Candidate {
        token: String,
        model: agglearn::enrichment::EnrichedModel,
        log: Vec<agglearn::agg_logistic::TrainLogRow>,
        enriched: agglearn::enrichment::EnrichedDataset,
        valid_loss: Option<f64>,
        valid_nce: Option<f64>,
    }
    let mut candidates = Vec::new();
    for (token, w) in &weights {
        let table = compute_ctr_table(&report, table_label, *w, global_rate)?;
        let enriched = enrich(&labeled, &table, include_counts)?;
        let outcome = train_enriched(&enriched, &config)?;
        let (valid_loss, valid_nce) = match &valid {
            Some(v) => {
                let preds = predict_enriched(&outcome.model, v)?;
                let labels = v.labels(config.label);
                let loss = evaluation::log_loss(&preds, labels, DEFAULT_CLIP_EPSILON)?;
                let nce = evaluation::nce(&preds, labels, DEFAULT_CLIP_EPSILON)
                    .ok()
                    .map(|e| e.nce);
                (Some(loss), nce)
            }
            None => (None, None),
        };
        candidates.push(Candidate {
            token: token.clone(),
            model: outcome.model,
            log: outcome.log,
            enriched,
            valid_loss,
            valid_nce,
        });
    }

    let best = candidates
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            let (la, lb) = (
                a.valid_loss.unwrap_or(f64::INFINITY),
                b.valid_loss.unwrap_or(f64::INFINITY),
            );
            la.partial_cmp(&lb).expect("losses are finite")
        })
        .map(|(i, _)| i)
        .expect("at least one prior weight");

    if candidates.len() > 1 {
        for c in &candidates {
            enrichment::save_enriched_model(
                &out.join(format!("model.w{}.bin", c.token)),
                &c.model,
                &config.echo_pairs(),
            )?;
        }
    }
    if candidates.iter().any(|c| c.valid_loss.is_some()) {
        let mut text = String::from("prior_weight,log_loss,nce\n");
        for c in &candidates {
            let loss = c.valid_loss.map(|v| v.to_string()).unwrap_or_default();
            let nce = c.valid_nce.map(|v| v.to_string()).unwrap_or_default();
            text.push_str(&format!("{},{},{}\n", c.token, loss, nce));
        }
        fs::write(out.join("enrich.validation.csv"), text)?;
        r.note("best-prior-weight", &candidates[best].token);
    }

    let winner = &candidates[best];
    enrichment::save_enriched_model(&out.join(MODEL_BIN), &winner.model, &config.echo_pairs())?;
    let mut bytes = Vec::new();
    agg_logistic::write_train_log(&mut bytes, &winner.log)?;
    fs::write(out.join(TRAIN_LOG), bytes)?;
    if let Some(path) = export_enriched {
        enrichment::save_enriched_csv(&path, &winner.enriched, config.label)?;
    }
    schema.save_vocab(out.join(SCHEMA_VOCAB))?;
    r.write_echo(&out)
}

#[derive(Args, Debug)]
pub struct TrainSkylineArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// Vocabulary to intern against; derived from the data when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Hash space size; switches to the hashed encoder.
    #[arg(long)]
    pub hashed_p: Option<u64>,
    #[arg(long)]
    pub hashed_salt: Option<u64>,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_train_skyline(args: TrainSkylineArgs) -> Result<()> {
    let mut r = Resolver::new("train-skyline", args.config.as_deref())?;
    let labeled_path = r.required_path("labeled", args.labeled)?;
    let vocab = r.optional_path("vocab", args.vocab)?;
    let hashed_p = r.optional("hashed-p", args.hashed_p)?;
    let hashed_salt = r.optional("hashed-salt", args.hashed_salt)?;
    let config = resolve_fit(&mut r, args.fit)?;
    let out = ensure_out_dir(&r.required_path("out", args.out)?)?;
    if hashed_salt.is_some() && hashed_p.is_none() {
        return Err(Error::InvalidArgument(
            "hashed-salt is meaningless without hashed-p".into(),
        ));
    }

    let (labeled, schema) = io::load_labeled_data(&labeled_path, vocab.as_deref(), config.label)?;
    let encoder = match hashed_p {
        Some(p) => Encoder::hashed(
            schema.num_features(),
            HashedEncoderConfig::new(p, hashed_salt.unwrap_or(0)),
        )?,
        None => Encoder::exact(&schema.cardinalities())?,
    };
    let outcome = train_skyline(&labeled, &encoder, &config)?;

    write_train_outputs(&out, &outcome.model, &outcome.log, &config)?;
    schema.save_vocab(out.join(SCHEMA_VOCAB))?;
    r.write_echo(&out)
}

#[derive(Args, Debug)]
pub struct TrainFakeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Number of fake granular rows to sample from the report marginals.
    #[arg(long)]
    pub num_fake: Option<usize>,
    /// Write the sampled fake rows to this CSV path.
    #[arg(long)]
    pub dump_fake: Option<PathBuf>,
    #[arg(long)]
    pub rescaling: Option<String>,
    #[arg(long)]
    pub raw_count: Option<f64>,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_train_fake(args: TrainFakeArgs) -> Result<()> {
    let mut r = Resolver::new("train-fake", args.config.as_deref())?;
    let report_dir = r.required_path("report", args.report)?;
    let num_fake = r.value("num-fake", args.num_fake, 100_000)?;
    let dump_fake = r.optional_path("dump-fake", args.dump_fake)?;
    let rescaling_raw = r.value(
        "rescaling",
        args.rescaling,
        Rescaling::CoordinateWise.as_str().into(),
    )?;
    let raw_count = r.optional("raw-count", args.raw_count)?;
    let mut config = resolve_fit(&mut r, args.fit)?;
    let out = ensure_out_dir(&r.required_path("out", args.out)?)?;
    config.rescaling = Rescaling::parse(&rescaling_raw)?;
    config.raw_count_estimate = raw_count;

    let (report, schema) = io::load_report_dir(&report_dir)?;
    let fake = generate_fake_granular(&report, num_fake, config.seed)?;
    if let Some(path) = dump_fake {
        data::save_granular_csv(path, &fake, &schema)?;
    }
    let outcome = train(&report, &fake, &config)?;

    write_train_outputs(&out, &outcome.model, &outcome.log, &config)?;
    schema.save_vocab(out.join(SCHEMA_VOCAB))?;
    r.write_echo(&out)
}

#[derive(Args, Debug)]
pub struct TrainDummyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_train_dummy(args: TrainDummyArgs) -> Result<()> {
    let mut r = Resolver::new("train-dummy", args.config.as_deref())?;
    let labeled_path = r.required_path("labeled", args.labeled)?;
    let vocab = r.optional_path("vocab", args.vocab)?;
    let label_raw = r.value("label", args.label, LabelKind::Click.as_str().into())?;
    let out = ensure_out_dir(&r.required_path("out", args.out)?)?;
    let label = LabelKind::parse(&label_raw)?;

    let (labeled, schema) = io::load_labeled_data(&labeled_path, vocab.as_deref(), label)?;
    let encoder = Encoder::exact(&schema.cardinalities())?;
    let model = dummy_model(labeled.labels(label), &encoder)?;

    let extra = [("config.label".to_string(), label.as_str().to_string())];
    agg_logistic::save_model(&out.join(MODEL_BIN), &model, &extra)?;
    schema.save_vocab(out.join(SCHEMA_VOCAB))?;
    r.write_echo(&out)
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Vocabulary; defaults to schema.vocab next to the model.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_predict(args: PredictArgs) -> Result<()> {
    let mut r = Resolver::new("predict", args.config.as_deref())?;
    let model_path = r.required_path("model", args.model)?;
    let data_path = r.required_path("data", args.data)?;
    let vocab = r.optional_path("vocab", args.vocab)?;
    let out = ensure_out_dir(&r.required_path("out", args.out)?)?;

    let vocab_path = io::vocab_near_model(&model_path, vocab)?;
    let model = load_model_file(&model_path)?;
    let (dataset, _) = io::load_data(&data_path, Some(&vocab_path))?;
    if dataset.num_features() != model.num_features() {
        return Err(Error::Contract(format!(
            "data has {} features but the model expects {}",
            dataset.num_features(),
            model.num_features()
        )));
    }
    let preds = model.predict(&dataset)?;
    evaluation::save_predictions(&out.join(io::PREDICTIONS_CSV), &preds)?;
    r.note("rows", preds.len());
    r.write_echo(&out)
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Labeled CSV the predictions are scored against, in row order.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub clip: Option<f64>,
    /// Paired bootstrap resample count; needs --against.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Second predictions CSV to compare against.
    #[arg(long)]
    pub against: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reference skyline log-loss; adds a degradation row.
    #[arg(long)]
    pub skyline_loss: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut r = Resolver::new("evaluate", args.config.as_deref())?;
    let predictions_path = r.required_path("predictions", args.predictions)?;
    let data_path = r.required_path("data", args.data)?;
    let label_raw = r.value("label", args.label, LabelKind::Click.as_str().into())?;
    let clip = r.value("clip", args.clip, DEFAULT_CLIP_EPSILON)?;
    let bootstrap = r.optional("bootstrap", args.bootstrap)?;
    let against = r.optional_path("against", args.against)?;
    let seed = r.value("seed", args.seed, 0)?;
    let skyline_loss = r.optional("skyline-loss", args.skyline_loss)?;
    let out = ensure_out_dir(&r.required_path("out", args.out)?)?;
    let label = LabelKind::parse(&label_raw)?;
    if bootstrap.is_some() && against.is_none() {
        return Err(Error::InvalidArgument(
            "--bootstrap needs --against to compare with".into(),
        ));
    }

    let preds = evaluation::load_predictions(&predictions_path)?;
    let (dataset, _) = io::load_labeled_data(&data_path, None, label)?;
    let labels = dataset.labels(label);
    let result = evaluation::nce(&preds, labels, clip)?;

    let mut rows = vec![
        ("log_loss".to_string(), result.log_loss.to_string()),
        ("entropy".to_string(), result.entropy.to_string()),
        ("nce".to_string(), result.nce.to_string()),
        ("num_samples".to_string(), result.num_samples.to_string()),
        ("clip_epsilon".to_string(), result.clip_epsilon.to_string()),
    ];
    if let Some(sky) = skyline_loss {
        let degradation = evaluation::skyline_degradation(result.log_loss, sky)?;
        rows.push(("skyline_degradation".to_string(), degradation.to_string()));
    }
    if let Some(other_path) = against {
        let other = evaluation::load_predictions(&other_path)?;
        let other_loss = evaluation::log_loss(&other, labels, clip)?;
        let b = bootstrap.unwrap_or(10_000);
        let comparison = evaluation::bootstrap_compare(&preds, &other, labels, b, seed)?;
        rows.push(("against_log_loss".to_string(), other_loss.to_string()));
        rows.push(("bootstraps".to_string(), b.to_string()));
        rows.push(("mean_delta".to_string(), comparison.mean_delta.to_string()));
        rows.push(("p_value".to_string(), comparison.p_value.to_string()));
    }
    io::write_metric_csv(&out.join(io::EVAL_CSV), &rows)?;
    r.write_echo(&out)
}
