//! CTR enrichment of small labeled sets.
//!
//! A report's per-coordinate counts induce smoothed observed rates: for a
//! coordinate with label count C and display count D, the rate is
//! (max(C,0) + w*p0) / (max(D,0) + w), a beta-prior posterior mean pulled
//! toward the global rate p0 by the pseudo-count weight w. Joining those
//! rates onto labeled granular rows as numeric columns gives a small
//! training set access to what the aggregate saw, which is where aggregated
//! data beats a label-starved skyline. The built-in learner is a logistic
//! regression on the raw single one-hots plus the standardized numeric
//! columns; the CSV export exists so external learners can be attached.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::agg_logistic::{self, MetaCursor, Model, TrainConfig, TrainLogRow, MODEL_MAGIC};
use crate::aggregation::{self, AggregationReport};
use crate::data::{GranularDataset, LabelKind, OOV_INDEX};
use crate::encoding::{self, Encoder};
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_CLIP_EPSILON;
use crate::optim::{self, Csr, FitParams, Target};

/// Smoothed per-coordinate rates and display counts derived from a report.
#[derive(Debug, Clone, PartialEq)]
pub struct CtrTable {
    encoder: Encoder,
    label: LabelKind,
    prior_weight: f64,
    global_rate: f64,
    coords: Vec<u64>,
    rates: Vec<f64>,
    counts: Vec<f64>,
}

impl CtrTable {
    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn label(&self) -> LabelKind {
        self.label
    }

    pub fn prior_weight(&self) -> f64 {
        self.prior_weight
    }

    pub fn global_rate(&self) -> f64 {
        self.global_rate
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Smoothed rate and clamped display count of a coordinate, if the
    /// report covered it.
    pub fn lookup(&self, coord: u64) -> Option<(f64, f64)> {
        self.coords
            .binary_search(&coord)
            .ok()
            .map(|i| (self.rates[i], self.counts[i]))
    }
}

/// Builds the smoothed rate table from a report. p0 defaults to the ratio
/// of clamped label counts to clamped display counts over the
/// single-feature tables; a report with no single-feature display mass
/// falls back to 0.5, an explicit coin-flip prior.
pub fn compute_ctr_table(
    report: &AggregationReport,
    label: LabelKind,
    prior_weight: f64,
    global_rate: Option<f64>,
) -> Result<CtrTable> {
    let Some(map) = report.encoder().index_map() else {
        return Err(Error::InvalidArgument(
            "CTR tables need an exact encoder; hashed coordinates are not interpretable".into(),
        ));
    };
    if !prior_weight.is_finite() || prior_weight < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "prior weight must be finite and non-negative, got {prior_weight}"
        )));
    }
    if let Some(p0) = global_rate {
        if !p0.is_finite() || !(0.0..=1.0).contains(&p0) {
            return Err(Error::InvalidArgument(format!(
                "global rate must lie in [0, 1], got {p0}"
            )));
        }
    }
    let (displays, clicks, sales) = report.metrics();
    let labels = match label {
        LabelKind::Click => &clicks,
        LabelKind::Sale => &sales,
    };
    let p0 = global_rate.unwrap_or_else(|| {
        let singles_end = map.singles_end();
        let mut label_mass = 0.0;
        let mut display_mass = 0.0;
        for (i, &c) in report.support().iter().enumerate() {
            if c < singles_end {
                label_mass += labels[i].max(0.0);
                display_mass += displays[i].max(0.0);
            }
        }
        if display_mass > 0.0 {
            (label_mass / display_mass).clamp(0.0, 1.0)
        } else {
            0.5
        }
    });
    let mut rates = Vec::with_capacity(report.len());
    let mut counts = Vec::with_capacity(report.len());
    for i in 0..report.len() {
        let c = labels[i].max(0.0);
        let d = displays[i].max(0.0);
        let denom = d + prior_weight;
        let rate = if denom > 0.0 {
            ((c + prior_weight * p0) / denom).clamp(0.0, 1.0)
        } else {
            p0
        };
        rates.push(rate);
        counts.push(d);
    }
    Ok(CtrTable {
        encoder: report.encoder().clone(),
        label,
        prior_weight,
        global_rate: p0,
        coords: report.support().to_vec(),
        rates,
        counts,
    })
}

/// Labeled rows joined with their units' smoothed rates (and optionally
/// display counts). Unit columns run singles by feature index, then pairs
/// in lexicographic (i, j) order, matching the table's coordinate layout.
#[derive(Debug, Clone)]
pub struct EnrichedDataset {
    table: CtrTable,
    include_counts: bool,
    raw: Vec<u32>,
    ctrs: Vec<f64>,
    counts: Vec<f64>,
    clicks: Vec<u8>,
    sales: Vec<u8>,
}

impl EnrichedDataset {
    pub fn table(&self) -> &CtrTable {
        &self.table
    }

    pub fn include_counts(&self) -> bool {
        self.include_counts
    }

    pub fn num_rows(&self) -> usize {
        self.clicks.len()
    }

    pub fn num_features(&self) -> usize {
        self.table.encoder.num_features()
    }

    /// Numeric unit columns per row: F singles plus F(F-1)/2 pairs.
    pub fn units(&self) -> usize {
        self.table.encoder.units_per_row() as usize
    }

    pub fn labels(&self, kind: LabelKind) -> &[u8] {
        match kind {
            LabelKind::Click => &self.clicks,
            LabelKind::Sale => &self.sales,
        }
    }

    pub fn ctrs_of(&self, row: usize) -> &[f64] {
        let units = self.units();
        &self.ctrs[row * units..(row + 1) * units]
    }

    pub fn counts_of(&self, row: usize) -> Option<&[f64]> {
        if !self.include_counts {
            return None;
        }
        let units = self.units();
        Some(&self.counts[row * units..(row + 1) * units])
    }

    pub fn raw_of(&self, row: usize) -> &[u32] {
        let f = self.num_features();
        &self.raw[row * f..(row + 1) * f]
    }
}

/// Fills one row's unit columns in the pinned order. Units containing an
/// out-of-vocabulary feature, and in-vocabulary units the table never saw,
/// get the global rate and a zero count.
fn enrich_row(
    table: &CtrTable,
    row: &[u32],
    ctrs: &mut Vec<f64>,
    counts: &mut Vec<f64>,
) -> Result<()> {
    let map = table.encoder.index_map().expect("CTR tables are exact");
    let fallback = (table.global_rate, 0.0);
    let f = map.num_features();
    for (i, &m) in row.iter().enumerate() {
        let (rate, count) = if m == OOV_INDEX {
            fallback
        } else {
            let coord = map.coordinate_of(i, m as u64)?;
            table.lookup(coord).unwrap_or(fallback)
        };
        ctrs.push(rate);
        counts.push(count);
    }
    for i in 0..f {
        for j in i + 1..f {
            let (mi, mj) = (row[i], row[j]);
            let (rate, count) = if mi == OOV_INDEX || mj == OOV_INDEX {
                fallback
            } else {
                let coord = map.coordinate_of_pair(i, j, mi as u64, mj as u64)?;
                table.lookup(coord).unwrap_or(fallback)
            };
            ctrs.push(rate);
            counts.push(count);
        }
    }
    Ok(())
}

const ENRICH_CHUNK: usize = 4096;

/// Joins the table's rates onto every row. Row-wise independent, so the
/// parallel chunks merge back in order without affecting values.
pub fn enrich(
    dataset: &GranularDataset,
    table: &CtrTable,
    include_counts: bool,
) -> Result<EnrichedDataset> {
    if dataset.num_features() != table.encoder.num_features() {
        return Err(Error::Contract(format!(
            "dataset has {} features but the table expects {}",
            dataset.num_features(),
            table.encoder.num_features()
        )));
    }
    let n = dataset.num_rows();
    let num_chunks = n.div_ceil(ENRICH_CHUNK);
    let parts: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..num_chunks)
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * ENRICH_CHUNK;
            let end = ((chunk + 1) * ENRICH_CHUNK).min(n);
            let mut ctrs = Vec::new();
            let mut counts = Vec::new();
            for r in start..end {
                enrich_row(table, dataset.features_of(r), &mut ctrs, &mut counts)?;
            }
            Ok((ctrs, counts))
        })
        .collect();
    let units = table.encoder.units_per_row() as usize;
    let mut ctrs = Vec::with_capacity(n * units);
    let mut counts = Vec::with_capacity(if include_counts { n * units } else { 0 });
    for part in parts {
        let (chunk_ctrs, chunk_counts) = part?;
        ctrs.extend_from_slice(&chunk_ctrs);
        if include_counts {
            counts.extend_from_slice(&chunk_counts);
        }
    }
    let mut raw = Vec::with_capacity(n * dataset.num_features());
    for r in 0..n {
        raw.extend_from_slice(dataset.features_of(r));
    }
    Ok(EnrichedDataset {
        table: table.clone(),
        include_counts,
        raw,
        ctrs,
        counts,
        clicks: dataset.labels(LabelKind::Click).to_vec(),
        sales: dataset.labels(LabelKind::Sale).to_vec(),
    })
}

/// Column names of the enriched export for this dataset's shape, pinned:
/// features, CTR singles, CTR pairs, optional counts in the same order,
/// then the label.
pub fn enriched_csv_header(num_features: usize, include_counts: bool) -> String {
    let mut cols = Vec::new();
    for i in 0..num_features {
        cols.push(format!("feat_{i}"));
    }
    for prefix in if include_counts {
        &["ctr", "cnt"][..]
    } else {
        &["ctr"][..]
    } {
        for i in 0..num_features {
            cols.push(format!("{prefix}_f{i}"));
        }
        for i in 0..num_features {
            for j in i + 1..num_features {
                cols.push(format!("{prefix}_p_{i}_{j}"));
            }
        }
    }
    cols.push("label".into());
    cols.join(",")
}

/// Writes the enriched rows with the chosen label column. Out-of-vocabulary
/// features render as empty fields; floats use shortest round-trip form.
pub fn write_enriched_csv<W: Write>(
    mut writer: W,
    data: &EnrichedDataset,
    label: LabelKind,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&enriched_csv_header(
        data.num_features(),
        data.include_counts,
    ));
    out.push('\n');
    let labels = data.labels(label);
    for (r, &y) in labels.iter().enumerate() {
        for (k, &m) in data.raw_of(r).iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            if m != OOV_INDEX {
                let _ = write!(out, "{m}");
            }
        }
        for &v in data.ctrs_of(r) {
            let _ = write!(out, ",{v}");
        }
        if let Some(counts) = data.counts_of(r) {
            for &v in counts {
                let _ = write!(out, ",{v}");
            }
        }
        let _ = writeln!(out, ",{y}");
    }
    writer.write_all(out.as_bytes())?;
    Ok(())
}

pub fn save_enriched_csv(path: &Path, data: &EnrichedDataset, label: LabelKind) -> Result<()> {
    let mut bytes = Vec::new();
    write_enriched_csv(&mut bytes, data, label)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Logistic model over raw single one-hots plus standardized numeric
/// columns, carrying the CTR table it was enriched with so raw rows can be
/// scored directly.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedModel {
    table: CtrTable,
    include_counts: bool,
    target_label: LabelKind,
    /// Means of the numeric columns: CTR units, then log1p count units.
    means: Vec<f64>,
    stds: Vec<f64>,
    /// Dense weights: singles one-hot block, then the numeric columns.
    weights: Vec<f64>,
    bias: f64,
}

impl EnrichedModel {
    pub fn table(&self) -> &CtrTable {
        &self.table
    }

    pub fn include_counts(&self) -> bool {
        self.include_counts
    }

    pub fn target_label(&self) -> LabelKind {
        self.target_label
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Debug)]
pub struct EnrichedTrainOutcome {
    pub model: EnrichedModel,
    pub log: Vec<TrainLogRow>,
}

fn numeric_column_count(units: usize, include_counts: bool) -> usize {
    units * if include_counts { 2 } else { 1 }
}

/// Numeric value of column `k` for a row, before standardization: the CTR
/// block verbatim, the count block through ln(1 + x).
fn numeric_value(data: &EnrichedDataset, row: usize, k: usize) -> f64 {
    let units = data.units();
    if k < units {
        data.ctrs_of(row)[k]
    } else {
        data.counts_of(row).expect("count block present")[k - units].ln_1p()
    }
}

fn numeric_stats(data: &EnrichedDataset) -> (Vec<f64>, Vec<f64>) {
    let cols = numeric_column_count(data.units(), data.include_counts);
    let n = data.num_rows() as f64;
    let mut means = vec![0.0; cols];
    let mut sq = vec![0.0; cols];
    for r in 0..data.num_rows() {
        for k in 0..cols {
            let v = numeric_value(data, r, k);
            means[k] += v;
            sq[k] += v * v;
        }
    }
    let mut stds = Vec::with_capacity(cols);
    for k in 0..cols {
        means[k] /= n;
        let var = (sq[k] / n - means[k] * means[k]).max(0.0);
        let std = var.sqrt();
        stds.push(if std < 1e-12 { 1.0 } else { std });
    }
    (means, stds)
}

/// Design matrix of the built-in learner: one-hot single coordinates, then
/// the standardized numeric columns at offsets past the singles block.
fn enriched_matrix(data: &EnrichedDataset, means: &[f64], stds: &[f64]) -> Result<Csr> {
    let map = data
        .table
        .encoder
        .index_map()
        .expect("CTR tables are exact");
    let singles = map.singles_end();
    let cols = numeric_column_count(data.units(), data.include_counts);
    let dim = singles + cols as u64;
    let mut starts = Vec::with_capacity(data.num_rows() + 1);
    let mut coords = Vec::new();
    let mut values = Vec::new();
    starts.push(0);
    for r in 0..data.num_rows() {
        for (i, &m) in data.raw_of(r).iter().enumerate() {
            if m == OOV_INDEX {
                continue;
            }
            coords.push(map.coordinate_of(i, m as u64)?);
            values.push(1.0);
        }
        for k in 0..cols {
            coords.push(singles + k as u64);
            values.push((numeric_value(data, r, k) - means[k]) / stds[k]);
        }
        starts.push(coords.len());
    }
    Ok(Csr {
        dim: dim as usize,
        starts,
        coords,
        values: Some(values),
    })
}

/// Fits the built-in learner on the enriched rows. The label to predict is
/// `config.label`; it may differ from the label the table's rates were
/// computed from.
pub fn train_enriched(
    data: &EnrichedDataset,
    config: &TrainConfig,
) -> Result<EnrichedTrainOutcome> {
    config.validate()?;
    if data.num_rows() == 0 {
        return Err(Error::Contract(
            "cannot train on an empty enriched set".into(),
        ));
    }
    let labels = data.labels(config.label);
    let positives: f64 = labels.iter().map(|&y| f64::from(y)).sum();
    let n = data.num_rows() as f64;
    if positives == 0.0 || positives == n {
        return Err(Error::DegenerateLabels(format!(
            "every row carries the same {} label, nothing to fit",
            config.label.as_str()
        )));
    }
    let (means, stds) = numeric_stats(data);
    let csr = enriched_matrix(data, &means, &stds)?;
    let sq_norms = csr.column_sq_norms();
    let mut label_side_dense = vec![0.0; csr.dim];
    for (r, &y) in labels.iter().enumerate() {
        if y == 1 {
            let (s, e) = (csr.starts[r], csr.starts[r + 1]);
            for (&c, &v) in csr.coords[s..e]
                .iter()
                .zip(&csr.values.as_ref().unwrap()[s..e])
            {
                label_side_dense[c as usize] += v;
            }
        }
    }
    let mut live = Vec::new();
    let mut label_side = Vec::new();
    let mut precond = Vec::new();
    for (c, &g) in sq_norms.iter().enumerate() {
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
    let (weights, bias, log) = optim::fit(&csr, &target, &params)?;
    Ok(EnrichedTrainOutcome {
        model: EnrichedModel {
            table: data.table.clone(),
            include_counts: data.include_counts,
            target_label: config.label,
            means,
            stds,
            weights,
            bias,
        },
        log,
    })
}

/// Scores already enriched rows.
pub fn predict_enriched_rows(model: &EnrichedModel, data: &EnrichedDataset) -> Result<Vec<f64>> {
    if data.table.encoder != model.table.encoder {
        return Err(Error::Contract(
            "enriched rows and model use different encoders".into(),
        ));
    }
    if data.include_counts != model.include_counts {
        return Err(Error::Contract(
            "count columns of the rows and the model disagree".into(),
        ));
    }
    let csr = enriched_matrix(data, &model.means, &model.stds)?;
    let mut preds = Vec::with_capacity(data.num_rows());
    for r in 0..data.num_rows() {
        let (s, e) = (csr.starts[r], csr.starts[r + 1]);
        let mut z = model.bias;
        for (&c, &v) in csr.coords[s..e]
            .iter()
            .zip(&csr.values.as_ref().unwrap()[s..e])
        {
            z += model.weights[c as usize] * v;
        }
        preds.push(optim::sigmoid(z));
    }
    Ok(preds)
}

/// Scores raw granular rows by enriching them with the model's own table
/// first.
pub fn predict_enriched(model: &EnrichedModel, dataset: &GranularDataset) -> Result<Vec<f64>> {
    let data = enrich(dataset, &model.table, model.include_counts)?;
    predict_enriched_rows(model, &data)
}

pub const ENRICHED_MODEL_CSV_HEADER: &str = "kind,feat_i,feat_j,mod_i,mod_j,rate,count";

fn join_floats(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
    out
}

fn parse_floats(raw: &str, line: u64, what: &str, expected_len: usize) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    if !raw.trim().is_empty() {
        for part in raw.split(',') {
            let v: f64 = part.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse {what} from `{part}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("{what} must be finite, got {v}"),
                });
            }
            values.push(v);
        }
    }
    if values.len() != expected_len {
        return Err(Error::Parse {
            line,
            message: format!(
                "expected {expected_len} {what} values, found {}",
                values.len()
            ),
        });
    }
    Ok(values)
}

/// Writes an enriched model: metadata (encoder, labels, smoothing
/// parameters, standardization, weights), then the rate table as CSV rows.
pub fn write_enriched_model<W: Write>(
    mut writer: W,
    model: &EnrichedModel,
    extra_meta: &[(String, String)],
) -> Result<()> {
    let table = &model.table;
    let units = table.encoder.units_per_row() as usize;
    let singles = table
        .encoder
        .index_map()
        .expect("CTR tables are exact")
        .singles_end() as usize;
    writeln!(writer, "{MODEL_MAGIC}")?;
    writeln!(writer, "#kind=enriched")?;
    for (key, value) in encoding::encoder_meta_fields(&table.encoder) {
        writeln!(writer, "#{key}={value}")?;
    }
    writeln!(writer, "#table_label={}", table.label.as_str())?;
    writeln!(writer, "#target_label={}", model.target_label.as_str())?;
    writeln!(writer, "#prior_weight={}", table.prior_weight)?;
    writeln!(writer, "#global_rate={}", table.global_rate)?;
    writeln!(writer, "#include_counts={}", model.include_counts)?;
    writeln!(writer, "#bias={}", model.bias)?;
    writeln!(
        writer,
        "#single_weights={}",
        join_floats(&model.weights[..singles])
    )?;
    writeln!(writer, "#ctr_means={}", join_floats(&model.means[..units]))?;
    writeln!(writer, "#ctr_stds={}", join_floats(&model.stds[..units]))?;
    writeln!(
        writer,
        "#ctr_weights={}",
        join_floats(&model.weights[singles..singles + units])
    )?;
    if model.include_counts {
        writeln!(writer, "#cnt_means={}", join_floats(&model.means[units..]))?;
        writeln!(writer, "#cnt_stds={}", join_floats(&model.stds[units..]))?;
        writeln!(
            writer,
            "#cnt_weights={}",
            join_floats(&model.weights[singles + units..])
        )?;
    }
    for (key, value) in extra_meta {
        writeln!(writer, "#{key}={value}")?;
    }
    writeln!(writer, "{ENRICHED_MODEL_CSV_HEADER}")?;
    for (i, &coord) in table.coords.iter().enumerate() {
        let fields = aggregation::coord_fields(&table.encoder, coord)?;
        writeln!(
            writer,
            "{},{},{},{},{},{},{}",
            fields[0], fields[1], fields[2], fields[3], fields[4], table.rates[i], table.counts[i]
        )?;
    }
    Ok(())
}

pub fn save_enriched_model(
    path: &Path,
    model: &EnrichedModel,
    extra_meta: &[(String, String)],
) -> Result<()> {
    let mut bytes = Vec::new();
    write_enriched_model(&mut bytes, model, extra_meta)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn parse_enriched_model(text: &str) -> Result<EnrichedModel> {
    let split = agg_logistic::split_model_text(text)?;
    let csv_start_line = split.csv_start_line;
    let csv = split.csv;
    let mut cursor = MetaCursor::new(split.pairs);
    let (line, kind) = cursor.expect("kind")?;
    if kind != "enriched" {
        return Err(Error::Parse {
            line,
            message: format!("expected an enriched model, found kind `{kind}`"),
        });
    }
    let encoder = encoding::encoder_from_meta(&mut |key| cursor.expect(key))?;
    let Some(map) = encoder.index_map() else {
        return Err(Error::Parse {
            line,
            message: "enriched models need an exact encoder".into(),
        });
    };
    let singles = map.singles_end() as usize;
    let units = encoder.units_per_row() as usize;

    let (line, raw) = cursor.expect("table_label")?;
    let table_label = LabelKind::parse(raw.trim()).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let (line, raw) = cursor.expect("target_label")?;
    let target_label = LabelKind::parse(raw.trim()).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let (line, raw) = cursor.expect("prior_weight")?;
    let prior_weight: f64 = agg_logistic::parse_meta_value(&raw, line, "prior weight")?;
    if !prior_weight.is_finite() || prior_weight < 0.0 {
        return Err(Error::Parse {
            line,
            message: format!("prior weight must be non-negative, got {prior_weight}"),
        });
    }
    let (line, raw) = cursor.expect("global_rate")?;
    let global_rate: f64 = agg_logistic::parse_meta_value(&raw, line, "global rate")?;
    if !global_rate.is_finite() || !(0.0..=1.0).contains(&global_rate) {
        return Err(Error::Parse {
            line,
            message: format!("global rate must lie in [0, 1], got {global_rate}"),
        });
    }
    let (line, raw) = cursor.expect("include_counts")?;
    let include_counts: bool = agg_logistic::parse_meta_value(&raw, line, "include_counts flag")?;
    let (line, raw) = cursor.expect("bias")?;
    let bias: f64 = agg_logistic::parse_meta_value(&raw, line, "bias")?;
    if !bias.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("bias must be finite, got {bias}"),
        });
    }
    let (line, raw) = cursor.expect("single_weights")?;
    let single_weights = parse_floats(&raw, line, "single weight", singles)?;
    let (line, raw) = cursor.expect("ctr_means")?;
    let ctr_means = parse_floats(&raw, line, "CTR mean", units)?;
    let (line, raw) = cursor.expect("ctr_stds")?;
    let ctr_stds = parse_floats(&raw, line, "CTR std", units)?;
    let (line, raw) = cursor.expect("ctr_weights")?;
    let ctr_weights = parse_floats(&raw, line, "CTR weight", units)?;
    let (cnt_means, cnt_stds, cnt_weights) = if include_counts {
        let (line, raw) = cursor.expect("cnt_means")?;
        let means = parse_floats(&raw, line, "count mean", units)?;
        let (line, raw) = cursor.expect("cnt_stds")?;
        let stds = parse_floats(&raw, line, "count std", units)?;
        let (line, raw) = cursor.expect("cnt_weights")?;
        let weights = parse_floats(&raw, line, "count weight", units)?;
        (means, stds, weights)
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    cursor.finish_allowing_config_echo()?;
    for (what, stds) in [("CTR std", &ctr_stds), ("count std", &cnt_stds)] {
        if let Some(bad) = stds.iter().find(|&&s| s <= 0.0) {
            return Err(Error::Parse {
                line: 0,
                message: format!("{what} must be positive, got {bad}"),
            });
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(csv.as_bytes());
    {
        let headers = reader.headers()?;
        let expected: Vec<&str> = ENRICHED_MODEL_CSV_HEADER.split(',').collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse {
                line: csv_start_line,
                message: format!("rate table header must be `{ENRICHED_MODEL_CSV_HEADER}`"),
            });
        }
    }
    let mut coords = Vec::new();
    let mut rates = Vec::new();
    let mut counts = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = csv_start_line + idx as u64 + 1;
        let record = record?;
        let coord = aggregation::coord_from_fields(
            &encoder, &record[0], &record[1], &record[2], &record[3], &record[4], line,
        )?;
        if let Some(&prev) = coords.last() {
            if coord <= prev {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "coordinates must be strictly increasing, {coord} follows {prev}"
                    ),
                });
            }
        }
        let rate: f64 = agg_logistic::parse_meta_value(&record[5], line, "rate")?;
        if !rate.is_finite() || !(0.0..=1.0).contains(&rate) {
            return Err(Error::Parse {
                line,
                message: format!("rates must lie in [0, 1], got {rate}"),
            });
        }
        let count: f64 = agg_logistic::parse_meta_value(&record[6], line, "count")?;
        if !count.is_finite() || count < 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("counts must be non-negative, got {count}"),
            });
        }
        coords.push(coord);
        rates.push(rate);
        counts.push(count);
    }

    let mut weights = single_weights;
    weights.extend_from_slice(&ctr_weights);
    weights.extend_from_slice(&cnt_weights);
    let mut means = ctr_means;
    means.extend_from_slice(&cnt_means);
    let mut stds = ctr_stds;
    stds.extend_from_slice(&cnt_stds);
    Ok(EnrichedModel {
        table: CtrTable {
            encoder,
            label: table_label,
            prior_weight,
            global_rate,
            coords,
            rates,
            counts,
        },
        include_counts,
        target_label,
        means,
        stds,
        weights,
        bias,
    })
}

/// Either trained model kind, as stored on disk.
#[derive(Debug, Clone)]
pub enum ModelFile {
    Linear(Model),
    Enriched(EnrichedModel),
}

impl ModelFile {
    pub fn predict(&self, dataset: &GranularDataset) -> Result<Vec<f64>> {
        match self {
            ModelFile::Linear(model) => model.predict(dataset),
            ModelFile::Enriched(model) => predict_enriched(model, dataset),
        }
    }

    pub fn num_features(&self) -> usize {
        match self {
            ModelFile::Linear(model) => model.encoder().num_features(),
            ModelFile::Enriched(model) => model.table().encoder().num_features(),
        }
    }
}

/// Parses either model kind by dispatching on the `kind` metadata line.
pub fn parse_model_file(text: &str) -> Result<ModelFile> {
    let split = agg_logistic::split_model_text(text)?;
    let kind = split
        .pairs
        .first()
        .filter(|(_, k, _)| k == "kind")
        .map(|(_, _, v)| v.clone())
        .ok_or_else(|| Error::Parse {
            line: 2,
            message: "model files must declare their kind first".into(),
        })?;
    match kind.as_str() {
        "linear" => Ok(ModelFile::Linear(agg_logistic::parse_model(text)?)),
        "enriched" => Ok(ModelFile::Enriched(parse_enriched_model(text)?)),
        other => Err(Error::Parse {
            line: 2,
            message: format!("unknown model kind `{other}`"),
        }),
    }
}

pub fn load_model_file(path: &Path) -> Result<ModelFile> {
    parse_model_file(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::aggregate;
    use crate::data::SyntheticSpec;
    use crate::encoding::HashedEncoderConfig;

    fn sample() -> (GranularDataset, AggregationReport) {
        let spec = SyntheticSpec::new(vec![3, 2], 400, 0.25, 5);
        let (dataset, truth) = crate::data::generate_synthetic(&spec).unwrap();
        let report = aggregate(&dataset, truth.encoder()).unwrap();
        (dataset, report)
    }

    #[test]
    fn smoothing_formula_matches_pinned_values() {
        // Direct formula checks on a hand-built single-coordinate report.
        let encoder = Encoder::exact(&[1]).unwrap();
        let mut dataset = GranularDataset::new(1);
        for i in 0..1000 {
            dataset.push_row(&[0], u8::from(i < 123), 0).unwrap();
        }
        let report = aggregate(&dataset, &encoder).unwrap();
        let plain = compute_ctr_table(&report, LabelKind::Click, 0.0, None).unwrap();
        assert_eq!(plain.lookup(0).unwrap().0, 0.123);
        assert_eq!(plain.lookup(0).unwrap().1, 1000.0);
        let smoothed = compute_ctr_table(&report, LabelKind::Click, 100.0, Some(0.1)).unwrap();
        assert_eq!(smoothed.lookup(0).unwrap().0, (123.0 + 10.0) / 1100.0);
        assert!((smoothed.lookup(0).unwrap().0 - 0.12090909090909091).abs() < 1e-16);
    }

    #[test]
    fn negative_noisy_counts_clamp_to_zero_rate() {
        let (dataset, _) = sample();
        let encoder = Encoder::exact(&[3, 2]).unwrap();
        let report = aggregate(&dataset, &encoder).unwrap();
        let noised = report.add_gaussian_noise(1000.0, 2).unwrap();
        let table = compute_ctr_table(&noised, LabelKind::Click, 0.0, None).unwrap();
        let (_, clicks, _) = noised.metrics();
        let (displays, _, _) = noised.metrics();
        for (i, &coord) in noised.support().iter().enumerate() {
            let (rate, count) = table.lookup(coord).unwrap();
            assert!((0.0..=1.0).contains(&rate), "rate {rate} out of range");
            assert!(count >= 0.0);
            if clicks[i] <= 0.0 && displays[i] > 0.0 {
                assert_eq!(rate, 0.0);
            }
        }
    }

    #[test]
    fn global_rate_defaults_to_single_table_ratio() {
        let (dataset, report) = sample();
        let table = compute_ctr_table(&report, LabelKind::Click, 10.0, None).unwrap();
        let expected = dataset.positive_rate(crate::data::LabelKind::Click);
        // Noiseless single tables carry the exact label and display sums.
        assert!((table.global_rate() - expected).abs() < 1e-12);

        let empty = crate::aggregation::threshold_report(&report, u64::MAX).unwrap();
        let fallback = compute_ctr_table(&empty, LabelKind::Click, 1.0, None).unwrap();
        assert_eq!(fallback.global_rate(), 0.5);
    }

    #[test]
    fn table_construction_rejects_bad_inputs() {
        let (dataset, report) = sample();
        assert!(compute_ctr_table(&report, LabelKind::Click, -1.0, None).is_err());
        assert!(compute_ctr_table(&report, LabelKind::Click, 1.0, Some(1.5)).is_err());
        let hashed = Encoder::hashed(2, HashedEncoderConfig::new(64, 0)).unwrap();
        let hashed_report = aggregate(&dataset, &hashed).unwrap();
        assert!(compute_ctr_table(&hashed_report, LabelKind::Click, 1.0, None).is_err());
    }

    #[test]
    fn plain_rates_equal_empirical_label_means() {
        let (dataset, report) = sample();
        let table = compute_ctr_table(&report, LabelKind::Click, 0.0, None).unwrap();
        let map = report.encoder().index_map().unwrap();
        for feature in 0..2 {
            for modality in 0..map.cardinality(feature) {
                let rows: Vec<usize> = (0..dataset.num_rows())
                    .filter(|&r| dataset.features_of(r)[feature] == modality as u32)
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                let mean = rows
                    .iter()
                    .map(|&r| f64::from(dataset.labels(LabelKind::Click)[r]))
                    .sum::<f64>()
                    / rows.len() as f64;
                let coord = map.coordinate_of(feature, modality).unwrap();
                assert_eq!(table.lookup(coord).unwrap().0, mean);
            }
        }
    }

    #[test]
    fn rate_is_monotone_in_labels_and_tends_to_prior() {
        let rate = |c: f64, d: f64, w: f64, p0: f64| {
            ((c.max(0.0) + w * p0) / (d.max(0.0) + w)).clamp(0.0, 1.0)
        };
        assert!(rate(10.0, 100.0, 5.0, 0.2) < rate(20.0, 100.0, 5.0, 0.2));
        let huge = rate(10.0, 100.0, 1e12, 0.2);
        assert!((huge - 0.2).abs() < 1e-9);
    }

    #[test]
    fn enrichment_joins_and_falls_back() {
        let (dataset, report) = sample();
        let table = compute_ctr_table(&report, LabelKind::Click, 5.0, None).unwrap();
        let enriched = enrich(&dataset, &table, true).unwrap();
        assert_eq!(enriched.num_rows(), dataset.num_rows());
        assert_eq!(enriched.units(), 3);
        let map = report.encoder().index_map().unwrap();
        let row = dataset.features_of(0);
        let coord = map.coordinate_of(0, row[0] as u64).unwrap();
        assert_eq!(enriched.ctrs_of(0)[0], table.lookup(coord).unwrap().0);
        assert_eq!(
            enriched.counts_of(0).unwrap()[0],
            table.lookup(coord).unwrap().1
        );

        // Rows with out-of-vocabulary features fall back to the prior.
        let mut with_oov = GranularDataset::new(2);
        with_oov.push_row(&[OOV_INDEX, 0], 0, 0).unwrap();
        let enriched_oov = enrich(&with_oov, &table, true).unwrap();
        assert_eq!(enriched_oov.ctrs_of(0)[0], table.global_rate());
        assert_eq!(enriched_oov.counts_of(0).unwrap()[0], 0.0);
        // The pair containing the OOV feature falls back too.
        assert_eq!(enriched_oov.ctrs_of(0)[2], table.global_rate());

        // Coordinates thresholded out of the table fall back as well.
        let thin = crate::aggregation::threshold_report(&report, 1_000_000).unwrap();
        let thin_table = compute_ctr_table(&thin, LabelKind::Click, 5.0, Some(0.25)).unwrap();
        let enriched_thin = enrich(&dataset, &thin_table, false).unwrap();
        assert!(enriched_thin.ctrs_of(0).iter().all(|&v| v == 0.25));
        assert!(enriched_thin.counts_of(0).is_none());
    }

    #[test]
    fn enrichment_is_row_wise_independent() {
        let (dataset, report) = sample();
        let table = compute_ctr_table(&report, LabelKind::Click, 2.0, None).unwrap();
        let split_at = 150;
        let head = dataset.subset(&(0..split_at).collect::<Vec<_>>()).unwrap();
        let tail = dataset
            .subset(&(split_at..dataset.num_rows()).collect::<Vec<_>>())
            .unwrap();
        let whole = enrich(&dataset, &table, true).unwrap();
        let head_enriched = enrich(&head, &table, true).unwrap();
        let tail_enriched = enrich(&tail, &table, true).unwrap();
        assert_eq!(whole.ctrs_of(10), head_enriched.ctrs_of(10));
        assert_eq!(whole.ctrs_of(split_at + 5), tail_enriched.ctrs_of(5));
    }

    #[test]
    fn enriched_csv_has_pinned_header_and_handles_empty_sets() {
        assert_eq!(
            enriched_csv_header(2, true),
            "feat_0,feat_1,ctr_f0,ctr_f1,ctr_p_0_1,cnt_f0,cnt_f1,cnt_p_0_1,label"
        );
        assert_eq!(
            enriched_csv_header(2, false),
            "feat_0,feat_1,ctr_f0,ctr_f1,ctr_p_0_1,label"
        );
        let (dataset, report) = sample();
        let table = compute_ctr_table(&report, LabelKind::Click, 2.0, None).unwrap();
        let empty = dataset.subset(&[]).unwrap();
        let enriched = enrich(&empty, &table, true).unwrap();
        let mut bytes = Vec::new();
        write_enriched_csv(&mut bytes, &enriched, LabelKind::Click).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text, format!("{}\n", enriched_csv_header(2, true)));
    }

    #[test]
    fn training_without_signal_predicts_the_base_rate() {
        let encoder = Encoder::exact(&[1, 1]).unwrap();
        let mut dataset = GranularDataset::new(2);
        for i in 0..200 {
            dataset.push_row(&[0, 0], u8::from(i % 4 == 0), 0).unwrap();
        }
        let report = aggregate(&dataset, &encoder).unwrap();
        let table = compute_ctr_table(&report, LabelKind::Click, 0.0, None).unwrap();
        let enriched = enrich(&dataset, &table, false).unwrap();
        let outcome = train_enriched(&enriched, &TrainConfig::default()).unwrap();
        let preds = predict_enriched(&outcome.model, &dataset).unwrap();
        for &p in &preds {
            assert!((p - 0.25).abs() < 0.02, "expected the base rate, got {p}");
        }
    }

    #[test]
    fn training_rejects_degenerate_and_empty_sets() {
        let (dataset, report) = sample();
        let table = compute_ctr_table(&report, LabelKind::Click, 2.0, None).unwrap();
        let empty = enrich(&dataset.subset(&[]).unwrap(), &table, false).unwrap();
        assert!(train_enriched(&empty, &TrainConfig::default()).is_err());

        let config = TrainConfig {
            label: LabelKind::Sale,
            ..TrainConfig::default()
        };
        let mut no_sales = GranularDataset::new(2);
        for r in 0..10 {
            no_sales
                .push_row(
                    dataset.features_of(r),
                    dataset.labels(LabelKind::Click)[r],
                    0,
                )
                .unwrap();
        }
        let enriched = enrich(&no_sales, &table, false).unwrap();
        match train_enriched(&enriched, &config) {
            Err(Error::DegenerateLabels(_)) => {}
            other => panic!("expected degenerate-label error, got {other:?}"),
        }
    }

    #[test]
    fn enriched_model_files_round_trip() {
        let (dataset, report) = sample();
        let table = compute_ctr_table(&report, LabelKind::Click, 25.0, None).unwrap();
        let enriched = enrich(&dataset, &table, true).unwrap();
        let config = TrainConfig {
            num_iterations: 80,
            ..TrainConfig::default()
        };
        let outcome = train_enriched(&enriched, &config).unwrap();
        let mut bytes = Vec::new();
        write_enriched_model(&mut bytes, &outcome.model, &config.echo_pairs()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let parsed = parse_enriched_model(&text).unwrap();
        assert_eq!(parsed, outcome.model);

        let preds_original = predict_enriched(&outcome.model, &dataset).unwrap();
        let preds_parsed = predict_enriched(&parsed, &dataset).unwrap();
        assert_eq!(preds_original, preds_parsed);

        match parse_model_file(&text).unwrap() {
            ModelFile::Enriched(model) => assert_eq!(model, outcome.model),
            ModelFile::Linear(_) => panic!("wrong kind"),
        }
        assert!(crate::agg_logistic::parse_model(&text).is_err());
    }
}
