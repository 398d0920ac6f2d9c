//! Experiment sweeps over synthetic data.
//!
//! A sweep fixes a synthetic data distribution, varies one knob (noise
//! scale, granular corpus size, or L2 strength), and reports test NCE for
//! each training method at every (grid point, seed) pair. Grid points run
//! on a worker pool; rows come out in grid order with seeds innermost, so
//! the CSV is byte-identical regardless of worker count.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rayon::prelude::*;

use agglearn::agg_logistic::{train, Model, Optimizer, Rescaling, TrainConfig};
use agglearn::aggregation::{self, AggregationReport};
use agglearn::data::{self, GranularDataset, LabelKind, SyntheticSpec};
use agglearn::encoding::Encoder;
use agglearn::enrichment::{compute_ctr_table, enrich, predict_enriched, train_enriched};
use agglearn::evaluation::{self, EvalResult, DEFAULT_CLIP_EPSILON};
use agglearn::{Error, Result};

use crate::config::{ensure_out_dir, parse_list, Resolver};
use crate::io::SWEEP_CSV;

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    /// Vary the Gaussian noise scale on the aggregation report.
    Noise,
    /// Vary how much granular data backs the report and the pools.
    GranularSize,
    /// Vary L2 strength across gradient estimators and pool choices.
    L2Ablation,
}

impl SweepKind {
    fn param_name(self) -> &'static str {
        match self {
            SweepKind::Noise => "sigma",
            SweepKind::GranularSize => "granular_size",
            SweepKind::L2Ablation => "l2",
        }
    }
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Which knob the sweep varies.
    #[arg(value_enum)]
    pub kind: SweepKind,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated seeds; each grid point runs once per seed.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub cardinalities: Option<String>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub base_rate: Option<f64>,
    #[arg(long)]
    pub skew: Option<f64>,
    #[arg(long)]
    pub density: Option<f64>,
    /// Four fractions: aggregation pool, labeled, valid, test.
    #[arg(long)]
    pub fractions: Option<String>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Aggregated-logistic L2 grid; also the grid of the l2-ablation kind.
    #[arg(long)]
    pub l2_grid: Option<String>,
    /// CTR smoothing weight used by the enrich rows.
    #[arg(long)]
    pub prior_weight: Option<f64>,
    #[arg(long)]
    pub include_counts: bool,
    /// Pre-noise display threshold on the report.
    #[arg(long)]
    pub threshold: Option<u64>,
    /// Report noise scale for the kinds that do not sweep it.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Noise grid for the noise kind.
    #[arg(long)]
    pub sigmas: Option<String>,
    /// Granular corpus sizes for the granular-size kind.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Fraction of the aggregation pool reused as the fresh model pool
    /// in the l2-ablation kind.
    #[arg(long)]
    pub pool_frac: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

struct SweepConfig {
    kind: SweepKind,
    cardinalities: Vec<usize>,
    rows: usize,
    base_rate: f64,
    skew: f64,
    density: f64,
    fractions: Vec<f64>,
    label: LabelKind,
    optimizer: Optimizer,
    step_size: f64,
    iterations: usize,
    l2_grid: Vec<(String, f64)>,
    prior_weight: f64,
    include_counts: bool,
    threshold: u64,
    sigma: f64,
    pool_frac: f64,
}

impl SweepConfig {
    fn fit(&self, l2: f64, rescaling: Rescaling, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            step_size: self.step_size,
            l2_lambda: l2,
            num_iterations: self.iterations,
            rescaling,
            label: self.label,
            seed,
            ..TrainConfig::default()
        }
    }
}

/// L2 used by the logistic learner inside the enrich rows.
const ENRICH_LEARNER_L2: f64 = 1.0;

/// One grid point of the sweep, before seeds are applied.
#[derive(Clone)]
enum GridValue {
    Sigma(f64),
    Size(usize),
    L2(f64),
}

struct Task {
    token: String,
    value: GridValue,
    seed: u64,
}

struct SweepRow {
    value: String,
    method: String,
    seed: u64,
    l2: Option<f64>,
    log_loss: Option<f64>,
    nce: Option<f64>,
    error: Option<String>,
}

pub fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut r = Resolver::new("sweep", args.config.as_deref())?;
    r.note("kind", args.kind.param_name());
    let seeds_raw = r.value("seeds", args.seeds, "0,1,2,3,4".into())?;
    let cardinalities_raw = r.value("cardinalities", args.cardinalities, "12,10,8,6".into())?;
    let rows = r.value("rows", args.rows, 100_000)?;
    let base_rate = r.value("base-rate", args.base_rate, 0.1)?;
    let skew = r.value("skew", args.skew, 1.0)?;
    let density = r.value("density", args.density, 0.25)?;
    let fractions_raw = r.value("fractions", args.fractions, "0.7,0.05,0.1,0.15".into())?;
    let label_raw = r.value("label", args.label, LabelKind::Click.as_str().into())?;
    let iterations = r.value("iterations", args.iterations, 300)?;
    let step_size = r.value("step-size", args.step_size, 1.0)?;
    let optimizer_raw = r.value(
        "optimizer",
        args.optimizer,
        Optimizer::PreconditionedConstantStep.as_str().into(),
    )?;
    let l2_grid_raw = r.value("l2-grid", args.l2_grid, "0.0625,1,16".into())?;
    let prior_weight = r.value("prior-weight", args.prior_weight, 32.0)?;
    let include_counts = r.flag("include-counts", args.include_counts, false)?;
    let threshold = r.value("threshold", args.threshold, 0)?;
    let sigma = r.value("sigma", args.sigma, 0.0)?;
    let sigmas_raw = r.value("sigmas", args.sigmas, "0,4,16,64,256,1024".into())?;
    let sizes_raw = r.value("sizes", args.sizes, "250,1000,4000,16000,64000".into())?;
    let pool_frac = r.value("pool-frac", args.pool_frac, 0.1)?;
    let out = ensure_out_dir(&r.required_path("out", args.out)?)?;

    let seeds: Vec<u64> = parse_list(&seeds_raw, "seeds")?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let cardinalities: Vec<usize> = parse_list(&cardinalities_raw, "cardinalities")?
        .into_iter()
        .map(|(_, d)| d)
        .collect();
    let fractions: Vec<f64> = parse_list(&fractions_raw, "fractions")?
        .into_iter()
        .map(|(_, f)| f)
        .collect();
    if fractions.len() != 4 {
        return Err(Error::InvalidArgument(format!(
            "sweeps need exactly 4 fractions (aggregation pool, labeled, valid, test), got {}",
            fractions.len()
        )));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("seed list is empty".into()));
    }

    let cfg = SweepConfig {
        kind: args.kind,
        cardinalities,
        rows,
        base_rate,
        skew,
        density,
        fractions,
        label: LabelKind::parse(&label_raw)?,
        optimizer: Optimizer::parse(&optimizer_raw)?,
        step_size,
        iterations,
        l2_grid: parse_list(&l2_grid_raw, "l2-grid")?,
        prior_weight,
        include_counts,
        threshold,
        sigma,
        pool_frac,
    };
    if cfg.l2_grid.is_empty() {
        return Err(Error::InvalidArgument("l2 grid is empty".into()));
    }

    let grid: Vec<(String, GridValue)> = match cfg.kind {
        SweepKind::Noise => parse_list::<f64>(&sigmas_raw, "sigmas")?
            .into_iter()
            .map(|(tok, s)| (tok, GridValue::Sigma(s)))
            .collect(),
        SweepKind::GranularSize => parse_list::<usize>(&sizes_raw, "sizes")?
            .into_iter()
            .map(|(tok, n)| (tok, GridValue::Size(n)))
            .collect(),
        SweepKind::L2Ablation => cfg
            .l2_grid
            .iter()
            .map(|(tok, l2)| (tok.clone(), GridValue::L2(*l2)))
            .collect(),
    };
    if grid.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "the {} grid is empty",
            cfg.kind.param_name()
        )));
    }

    let tasks: Vec<Task> = grid
        .iter()
        .flat_map(|(token, value)| {
            seeds.iter().map(move |&seed| Task {
                token: token.clone(),
                value: value.clone(),
                seed,
            })
        })
        .collect();

    // Tasks are independent; collect preserves task order, and each task's
    // internals are deterministic, so worker count cannot reorder rows.
    let row_groups: Vec<Vec<SweepRow>> = tasks.par_iter().map(|t| run_task(&cfg, t)).collect();

    let mut writer = csv::Writer::from_path(out.join(SWEEP_CSV))?;
    writer.write_record([
        "sweep_param",
        "value",
        "method",
        "seed",
        "l2",
        "log_loss",
        "nce",
        "error",
    ])?;
    let param = cfg.kind.param_name();
    for row in row_groups.iter().flatten() {
        writer.write_record([
            param.to_string(),
            row.value.clone(),
            row.method.clone(),
            row.seed.to_string(),
            row.l2.map(|v| v.to_string()).unwrap_or_default(),
            row.log_loss.map(|v| v.to_string()).unwrap_or_default(),
            row.nce.map(|v| v.to_string()).unwrap_or_default(),
            row.error.clone().unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    r.note(
        "rows-written",
        row_groups.iter().map(Vec::len).sum::<usize>(),
    );
    r.write_echo(&out)
}

/// The (method, l2) pairs a task is expected to produce, used to emit one
/// error row per method when the task fails before producing results.
fn expected_methods(cfg: &SweepConfig, task: &Task) -> Vec<(String, Option<f64>)> {
    match cfg.kind {
        SweepKind::Noise | SweepKind::GranularSize => {
            let mut methods: Vec<(String, Option<f64>)> = cfg
                .l2_grid
                .iter()
                .map(|(_, l2)| ("agglogistic".to_string(), Some(*l2)))
                .collect();
            methods.push(("agglogistic-best".to_string(), None));
            methods.push(("enrich".to_string(), Some(ENRICH_LEARNER_L2)));
            methods
        }
        SweepKind::L2Ablation => {
            let l2 = match task.value {
                GridValue::L2(l2) => Some(l2),
                _ => None,
            };
            [
                "rescaled-fresh",
                "simple-fresh",
                "rescaled-test",
                "simple-test",
            ]
            .iter()
            .map(|m| (m.to_string(), l2))
            .collect()
        }
    }
}

fn run_task(cfg: &SweepConfig, task: &Task) -> Vec<SweepRow> {
    match task_body(cfg, task) {
        Ok(rows) => rows,
        Err(e) => {
            let message = e.to_string();
            expected_methods(cfg, task)
                .into_iter()
                .map(|(method, l2)| SweepRow {
                    value: task.token.clone(),
                    method,
                    seed: task.seed,
                    l2,
                    log_loss: None,
                    nce: None,
                    error: Some(message.clone()),
                })
                .collect()
        }
    }
}

/// Everything a task shares across its method rows.
struct TaskData {
    report: AggregationReport,
    /// Unlabeled pool for the aggregated-logistic model side.
    pool: GranularDataset,
    /// Labeled rows available to the enrich method.
    labeled: GranularDataset,
    valid: GranularDataset,
    test: GranularDataset,
}

fn task_body(cfg: &SweepConfig, task: &Task) -> Result<Vec<SweepRow>> {
    let mut spec = SyntheticSpec::new(
        cfg.cardinalities.clone(),
        cfg.rows,
        cfg.base_rate,
        task.seed,
    );
    spec.marginal_skew = vec![cfg.skew; spec.num_features];
    spec.true_weight_density = cfg.density;
    let (dataset, _) = data::generate_synthetic(&spec)?;
    let mut parts = data::split(&dataset, &cfg.fractions, task.seed)?;
    let test = parts.pop().expect("four parts");
    let valid = parts.pop().expect("four parts");
    let labeled = parts.pop().expect("four parts");
    let agg_pool = parts.pop().expect("four parts");
    let encoder = Encoder::exact(&cfg.cardinalities)?;

    let build_report = |source: &GranularDataset, sigma: f64| -> Result<AggregationReport> {
        let mut report = aggregation::aggregate(source, &encoder)?;
        if cfg.threshold > 0 {
            report = aggregation::threshold_report(&report, cfg.threshold)?;
        }
        report.add_gaussian_noise(sigma, task.seed)
    };

    match task.value {
        GridValue::Sigma(sigma) => {
            let data = TaskData {
                report: build_report(&agg_pool, sigma)?,
                pool: agg_pool.clone(),
                labeled,
                valid,
                test,
            };
            Ok(standard_rows(cfg, task, &data))
        }
        GridValue::Size(n) => {
            if n > agg_pool.num_rows() {
                return Err(Error::InvalidArgument(format!(
                    "granular size {n} exceeds the {}-row aggregation pool",
                    agg_pool.num_rows()
                )));
            }
            // The labeled subset stays inside the aggregated corpus, the
            // same regime as the challenge data.
            let head: Vec<usize> = (0..n).collect();
            let subset = agg_pool.subset(&head)?;
            let data = TaskData {
                report: build_report(&agg_pool, cfg.sigma)?,
                pool: subset.clone(),
                labeled: subset,
                valid,
                test,
            };
            Ok(standard_rows(cfg, task, &data))
        }
        GridValue::L2(l2) => {
            let report = build_report(&agg_pool, cfg.sigma)?;
            let fresh_len = (cfg.pool_frac * agg_pool.num_rows() as f64).floor() as usize;
            let head: Vec<usize> = (0..fresh_len.min(agg_pool.num_rows())).collect();
            let fresh = agg_pool.subset(&head)?;
            Ok(ablation_rows(cfg, task, l2, &report, &fresh, &test))
        }
    }
}

fn eval_model(model: &Model, data: &GranularDataset, label: LabelKind) -> Result<EvalResult> {
    let preds = model.predict(data)?;
    evaluation::nce(&preds, data.labels(label), DEFAULT_CLIP_EPSILON)
}

fn metric_row(task: &Task, method: &str, l2: Option<f64>, outcome: Result<EvalResult>) -> SweepRow {
    match outcome {
        Ok(eval) => SweepRow {
            value: task.token.clone(),
            method: method.to_string(),
            seed: task.seed,
            l2,
            log_loss: Some(eval.log_loss),
            nce: Some(eval.nce),
            error: None,
        },
        Err(e) => SweepRow {
            value: task.token.clone(),
            method: method.to_string(),
            seed: task.seed,
            l2,
            log_loss: None,
            nce: None,
            error: Some(e.to_string()),
        },
    }
}

/// Rows for the noise and granular-size kinds: the aggregated-logistic L2
/// grid, the validation-selected best of that grid, and the enrich method.
fn standard_rows(cfg: &SweepConfig, task: &Task, data: &TaskData) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    let mut best: Option<(f64, f64, EvalResult)> = None;
    for (_, l2) in &cfg.l2_grid {
        let config = cfg.fit(*l2, Rescaling::CoordinateWise, task.seed);
        let trained = train(&data.report, &data.pool, &config);
        match trained {
            Ok(outcome) => {
                let test_eval = eval_model(&outcome.model, &data.test, cfg.label);
                if let Ok(test_eval) = &test_eval {
                    if let Ok(valid_eval) = eval_model(&outcome.model, &data.valid, cfg.label) {
                        let better = best
                            .as_ref()
                            .is_none_or(|(_, loss, _)| valid_eval.log_loss < *loss);
                        if better {
                            best = Some((*l2, valid_eval.log_loss, *test_eval));
                        }
                    }
                }
                rows.push(metric_row(task, "agglogistic", Some(*l2), test_eval));
            }
            Err(e) => rows.push(metric_row(task, "agglogistic", Some(*l2), Err(e))),
        }
    }
    match best {
        Some((l2, _, test_eval)) => {
            rows.push(metric_row(
                task,
                "agglogistic-best",
                Some(l2),
                Ok(test_eval),
            ));
        }
        None => rows.push(metric_row(
            task,
            "agglogistic-best",
            None,
            Err(Error::Contract(
                "no L2 grid point produced a validated model".into(),
            )),
        )),
    }
    rows.push(metric_row(
        task,
        "enrich",
        Some(ENRICH_LEARNER_L2),
        enrich_eval(cfg, task, data),
    ));
    rows
}

fn enrich_eval(cfg: &SweepConfig, task: &Task, data: &TaskData) -> Result<EvalResult> {
    let table = compute_ctr_table(&data.report, cfg.label, cfg.prior_weight, None)?;
    let enriched = enrich(&data.labeled, &table, cfg.include_counts)?;
    let config = cfg.fit(ENRICH_LEARNER_L2, Rescaling::CoordinateWise, task.seed);
    let outcome = train_enriched(&enriched, &config)?;
    let preds = predict_enriched(&outcome.model, &data.test)?;
    evaluation::nce(&preds, data.test.labels(cfg.label), DEFAULT_CLIP_EPSILON)
}

/// Rows for the l2-ablation kind: both gradient estimators on a fresh pool
/// drawn from the aggregated corpus and on the test-distribution pool.
fn ablation_rows(
    cfg: &SweepConfig,
    task: &Task,
    l2: f64,
    report: &AggregationReport,
    fresh: &GranularDataset,
    test: &GranularDataset,
) -> Vec<SweepRow> {
    let cases: [(&str, Rescaling, &GranularDataset); 4] = [
        ("rescaled-fresh", Rescaling::CoordinateWise, fresh),
        ("simple-fresh", Rescaling::Global, fresh),
        ("rescaled-test", Rescaling::CoordinateWise, test),
        ("simple-test", Rescaling::Global, test),
    ];
    cases
        .iter()
        .map(|(method, rescaling, pool)| {
            let config = cfg.fit(l2, *rescaling, task.seed);
            let outcome =
                train(report, pool, &config).and_then(|o| eval_model(&o.model, test, cfg.label));
            metric_row(task, method, Some(l2), outcome)
        })
        .collect()
}
