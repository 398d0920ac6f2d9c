//! Granular datasets: CSV ingestion, vocabularies, splits, and synthetic
//! generation with a known ground-truth model.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::agg_logistic::Model;
use crate::encoding::{Encoder, FeatureIndexMap};
use crate::error::{Error, Result};
use crate::optim::{logit, sigmoid};
use crate::rng::rng_from;

/// Reserved modality index for values not present in the vocabulary.
/// Rows carrying it are valid; the affected coordinates are simply absent
/// from K(x) and contribute nothing to scores or aggregates.
pub const OOV_INDEX: u32 = u32::MAX;

/// Which label column an operation works on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Click,
    Sale,
}

impl LabelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelKind::Click => "click",
            LabelKind::Sale => "sale",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "click" => Ok(LabelKind::Click),
            "sale" => Ok(LabelKind::Sale),
            other => Err(Error::InvalidArgument(format!(
                "unknown label kind {other:?} (expected click or sale)"
            ))),
        }
    }
}

/// Vocabulary of one feature: raw string values in first-seen order.
#[derive(Clone, Debug)]
pub struct FeatureVocab {
    name: String,
    values: Vec<String>,
    index: HashMap<String, u32>,
}

impl FeatureVocab {
    fn new(name: String) -> Self {
        FeatureVocab {
            name,
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn intern(&mut self, raw: &str) -> u32 {
        if let Some(&idx) = self.index.get(raw) {
            return idx;
        }
        let idx = self.values.len() as u32;
        self.values.push(raw.to_string());
        self.index.insert(raw.to_string(), idx);
        idx
    }

    pub fn lookup(&self, raw: &str) -> Option<u32> {
        self.index.get(raw).copied()
    }

    pub fn value(&self, index: u32) -> Option<&str> {
        self.values.get(index as usize).map(String::as_str)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }
}

/// Per-feature vocabularies plus feature names, as built during ingestion.
#[derive(Clone, Debug)]
pub struct Schema {
    features: Vec<FeatureVocab>,
}

impl Schema {
    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature(&self, i: usize) -> &FeatureVocab {
        &self.features[i]
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.features
            .iter()
            .map(FeatureVocab::cardinality)
            .collect()
    }

    pub fn index_map(&self) -> Result<FeatureIndexMap> {
        FeatureIndexMap::new(&self.cardinalities())
    }

    /// Serializes the vocabulary as CSV with columns `kind,feature,value`.
    /// Each feature contributes one `name` row followed by its `modality`
    /// rows in index order.
    pub fn write_vocab<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["kind", "feature", "value"])?;
        for (i, feat) in self.features.iter().enumerate() {
            let fi = i.to_string();
            w.write_record(["name", &fi, feat.name()])?;
            for value in &feat.values {
                w.write_record(["modality", &fi, value])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_vocab(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_vocab(BufWriter::new(File::create(path)?))
    }

    pub fn load_vocab(path: impl AsRef<Path>) -> Result<Schema> {
        let mut text = String::new();
        BufReader::new(File::open(path)?).read_to_string(&mut text)?;
        Schema::parse_vocab(&text)
    }

    pub fn parse_vocab(text: &str) -> Result<Schema> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers()?;
        if headers.iter().collect::<Vec<_>>() != ["kind", "feature", "value"] {
            return Err(Error::Parse {
                line: 1,
                message: "vocabulary header must be kind,feature,value".to_string(),
            });
        }
        let mut features: Vec<FeatureVocab> = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let bad = |message: String| Error::Parse { line, message };
            if record.len() != 3 {
                return Err(bad("expected 3 fields".to_string()));
            }
            let feature: usize = record[1]
                .parse()
                .map_err(|_| bad(format!("bad feature index {:?}", &record[1])))?;
            match &record[0] {
                "name" => {
                    if feature != features.len() {
                        return Err(bad(format!(
                            "feature {feature} out of order (expected {})",
                            features.len()
                        )));
                    }
                    features.push(FeatureVocab::new(record[2].to_string()));
                }
                "modality" => {
                    if feature + 1 != features.len() {
                        return Err(bad(format!(
                            "modality row for feature {feature} outside its block"
                        )));
                    }
                    let vocab = &mut features[feature];
                    if vocab.lookup(&record[2]).is_some() {
                        return Err(bad(format!(
                            "duplicate modality {:?} for feature {feature}",
                            &record[2]
                        )));
                    }
                    vocab.intern(&record[2]);
                }
                other => return Err(bad(format!("unknown row kind {other:?}"))),
            }
        }
        Ok(Schema { features })
    }
}

/// Immutable columnar dataset of granular rows.
#[derive(Clone, Debug, PartialEq)]
pub struct GranularDataset {
    num_features: usize,
    features: Vec<u32>,
    clicks: Vec<u8>,
    sales: Vec<u8>,
}

/// Borrowed view of one row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GranularRow<'a> {
    pub features: &'a [u32],
    pub y_click: u8,
    pub y_sale: u8,
}

impl GranularDataset {
    pub fn new(num_features: usize) -> Self {
        GranularDataset {
            num_features,
            features: Vec::new(),
            clicks: Vec::new(),
            sales: Vec::new(),
        }
    }

    pub fn push_row(&mut self, features: &[u32], y_click: u8, y_sale: u8) -> Result<()> {
        if features.len() != self.num_features {
            return Err(Error::Contract(format!(
                "row has {} features, dataset expects {}",
                features.len(),
                self.num_features
            )));
        }
        if y_click > 1 || y_sale > 1 {
            return Err(Error::Contract("labels must be 0 or 1".to_string()));
        }
        self.features.extend_from_slice(features);
        self.clicks.push(y_click);
        self.sales.push(y_sale);
        Ok(())
    }

    pub fn num_rows(&self) -> usize {
        self.clicks.len()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty()
    }

    pub fn features_of(&self, row: usize) -> &[u32] {
        let start = row * self.num_features;
        &self.features[start..start + self.num_features]
    }

    pub fn row(&self, row: usize) -> GranularRow<'_> {
        GranularRow {
            features: self.features_of(row),
            y_click: self.clicks[row],
            y_sale: self.sales[row],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = GranularRow<'_>> {
        (0..self.num_rows()).map(|i| self.row(i))
    }

    pub fn labels(&self, kind: LabelKind) -> &[u8] {
        match kind {
            LabelKind::Click => &self.clicks,
            LabelKind::Sale => &self.sales,
        }
    }

    pub fn positive_rate(&self, kind: LabelKind) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let sum: u64 = self.labels(kind).iter().map(|&y| y as u64).sum();
        sum as f64 / self.num_rows() as f64
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut out = GranularDataset::new(self.num_features);
        for &i in indices {
            if i >= self.num_rows() {
                return Err(Error::InvalidArgument(format!(
                    "row index {i} out of range ({} rows)",
                    self.num_rows()
                )));
            }
            out.push_row(self.features_of(i), self.clicks[i], self.sales[i])?;
        }
        Ok(out)
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.num_features != other.num_features {
            return Err(Error::Contract(format!(
                "cannot concatenate datasets with {} and {} features",
                self.num_features, other.num_features
            )));
        }
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.clicks.extend_from_slice(&other.clicks);
        out.sales.extend_from_slice(&other.sales);
        Ok(out)
    }
}

/// Names of the columns to read from a granular CSV. Label columns are
/// optional; a dataset read without one gets all-zero labels there, which is
/// how unlabeled prediction inputs are ingested.
#[derive(Clone, Debug)]
pub struct ColumnMap {
    pub feature_columns: Vec<String>,
    pub click_column: Option<String>,
    pub sale_column: Option<String>,
}

impl ColumnMap {
    /// Conventional map for files with columns `f0..f{n-1},click,sale`, the
    /// shape this crate's own exports use.
    pub fn standard(num_features: usize) -> Self {
        ColumnMap {
            feature_columns: (0..num_features).map(|i| format!("f{i}")).collect(),
            click_column: Some("click".to_string()),
            sale_column: Some("sale".to_string()),
        }
    }
}

struct ColumnIndices {
    features: Vec<usize>,
    click: Option<usize>,
    sale: Option<usize>,
}

fn resolve_columns(headers: &csv::StringRecord, columns: &ColumnMap) -> Result<ColumnIndices> {
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let mut features = Vec::with_capacity(columns.feature_columns.len());
    for name in &columns.feature_columns {
        features.push(find(name)?);
    }
    let click = columns.click_column.as_deref().map(find).transpose()?;
    let sale = columns.sale_column.as_deref().map(find).transpose()?;
    Ok(ColumnIndices {
        features,
        click,
        sale,
    })
}

fn parse_label(record: &csv::StringRecord, idx: Option<usize>, line: u64) -> Result<u8> {
    let Some(idx) = idx else { return Ok(0) };
    match record.get(idx) {
        Some("0") => Ok(0),
        Some("1") => Ok(1),
        other => Err(Error::Parse {
            line,
            message: format!("label must be 0 or 1, got {:?}", other.unwrap_or("")),
        }),
    }
}

/// Reads a granular CSV, interning raw values into dense indices in
/// first-seen order. Returns the dataset together with the schema built
/// during the pass.
pub fn read_granular_csv<R: Read>(
    reader: R,
    columns: &ColumnMap,
) -> Result<(GranularDataset, Schema)> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let indices = resolve_columns(csv_reader.headers()?, columns)?;
    let mut vocabs: Vec<FeatureVocab> = columns
        .feature_columns
        .iter()
        .map(|name| FeatureVocab::new(name.clone()))
        .collect();
    let mut dataset = GranularDataset::new(columns.feature_columns.len());
    let mut row = vec![0u32; columns.feature_columns.len()];
    for record in csv_reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        for (slot, (&col, vocab)) in row.iter_mut().zip(indices.features.iter().zip(&mut vocabs)) {
            let raw = record.get(col).ok_or_else(|| Error::Parse {
                line,
                message: "row shorter than header".to_string(),
            })?;
            *slot = vocab.intern(raw);
        }
        let y_click = parse_label(&record, indices.click, line)?;
        let y_sale = parse_label(&record, indices.sale, line)?;
        dataset.push_row(&row, y_click, y_sale)?;
    }
    Ok((dataset, Schema { features: vocabs }))
}

pub fn load_granular_csv(
    path: impl AsRef<Path>,
    columns: &ColumnMap,
) -> Result<(GranularDataset, Schema)> {
    read_granular_csv(BufReader::new(File::open(path)?), columns)
}

/// Reads a granular CSV against a fixed schema. Raw values outside the
/// vocabulary map to [`OOV_INDEX`] rather than extending it, which is the
/// prediction-time behavior.
pub fn read_granular_csv_with_schema<R: Read>(
    reader: R,
    columns: &ColumnMap,
    schema: &Schema,
) -> Result<GranularDataset> {
    if columns.feature_columns.len() != schema.num_features() {
        return Err(Error::Contract(format!(
            "column map names {} features, schema has {}",
            columns.feature_columns.len(),
            schema.num_features()
        )));
    }
    let mut csv_reader = csv::Reader::from_reader(reader);
    let indices = resolve_columns(csv_reader.headers()?, columns)?;
    let mut dataset = GranularDataset::new(schema.num_features());
    let mut row = vec![0u32; schema.num_features()];
    for record in csv_reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        for (i, (slot, &col)) in row.iter_mut().zip(&indices.features).enumerate() {
            let raw = record.get(col).ok_or_else(|| Error::Parse {
                line,
                message: "row shorter than header".to_string(),
            })?;
            *slot = schema.feature(i).lookup(raw).unwrap_or(OOV_INDEX);
        }
        let y_click = parse_label(&record, indices.click, line)?;
        let y_sale = parse_label(&record, indices.sale, line)?;
        dataset.push_row(&row, y_click, y_sale)?;
    }
    Ok(dataset)
}

pub fn load_granular_csv_with_schema(
    path: impl AsRef<Path>,
    columns: &ColumnMap,
    schema: &Schema,
) -> Result<GranularDataset> {
    read_granular_csv_with_schema(BufReader::new(File::open(path)?), columns, schema)
}

/// Writes a dataset back to CSV using the schema's raw values and feature
/// names, with fixed `click`/`sale` label columns. Rows holding
/// out-of-vocabulary indices cannot be exported (there is no raw string to
/// write for them).
pub fn write_granular_csv<W: Write>(
    writer: W,
    dataset: &GranularDataset,
    schema: &Schema,
) -> Result<()> {
    if dataset.num_features() != schema.num_features() {
        return Err(Error::Contract(format!(
            "dataset has {} features, schema has {}",
            dataset.num_features(),
            schema.num_features()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = (0..schema.num_features())
        .map(|i| schema.feature(i).name())
        .collect();
    header.push("click");
    header.push("sale");
    w.write_record(&header)?;
    for (i, row) in dataset.rows().enumerate() {
        let mut record = Vec::with_capacity(schema.num_features() + 2);
        for (f, &m) in row.features.iter().enumerate() {
            let raw = schema.feature(f).value(m).ok_or_else(|| {
                Error::Contract(format!(
                    "row {i} feature {f} holds an out-of-vocabulary index and cannot be exported"
                ))
            })?;
            record.push(raw.to_string());
        }
        record.push(row.y_click.to_string());
        record.push(row.y_sale.to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_granular_csv(
    path: impl AsRef<Path>,
    dataset: &GranularDataset,
    schema: &Schema,
) -> Result<()> {
    write_granular_csv(BufWriter::new(File::create(path)?), dataset, schema)
}

/// Randomly partitions a dataset into parts with the given proportions.
/// Fractions must sum to 1 (within 1e-9); every input row lands in exactly
/// one part. A single fraction of 1.0 returns the dataset unchanged.
pub fn split(
    dataset: &GranularDataset,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<GranularDataset>> {
    if fractions.is_empty() {
        return Err(Error::InvalidArgument(
            "no split fractions given".to_string(),
        ));
    }
    for &f in fractions {
        if !(0.0..=1.0).contains(&f) || !f.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "split fraction {f} outside [0, 1]"
            )));
        }
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions sum to {sum}, expected 1"
        )));
    }
    if fractions.len() == 1 {
        return Ok(vec![dataset.clone()]);
    }
    let n = dataset.num_rows();
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng_from(seed, &[0]));
    let mut parts = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    let mut start = 0usize;
    for (k, &f) in fractions.iter().enumerate() {
        cum += f;
        let end = if k + 1 == fractions.len() {
            n
        } else {
            ((cum * n as f64).round() as usize).min(n)
        };
        parts.push(dataset.subset(&indices[start..end.max(start)])?);
        start = end.max(start);
    }
    Ok(parts)
}

/// Recipe for a synthetic dataset with a known generative model.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub num_features: usize,
    pub cardinalities: Vec<usize>,
    /// Zipf exponent per feature; 0 gives uniform marginals.
    pub marginal_skew: Vec<f64>,
    /// Fraction of ground-truth weights that are nonzero.
    pub true_weight_density: f64,
    /// Target click rate; the intercept is calibrated to hit it.
    pub base_rate: f64,
    pub num_rows: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(cardinalities: Vec<usize>, num_rows: usize, base_rate: f64, seed: u64) -> Self {
        let num_features = cardinalities.len();
        SyntheticSpec {
            num_features,
            cardinalities,
            marginal_skew: vec![1.0; num_features],
            true_weight_density: 0.25,
            base_rate,
            num_rows,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_features == 0 || self.num_features != self.cardinalities.len() {
            return Err(Error::InvalidArgument(
                "num_features must match the cardinality list and be positive".to_string(),
            ));
        }
        if let Some(&d) = self.cardinalities.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidArgument(format!(
                "cardinality {d} below 2; every synthetic feature needs at least two modalities"
            )));
        }
        if self.marginal_skew.len() != self.num_features
            || self
                .marginal_skew
                .iter()
                .any(|s| !s.is_finite() || *s < 0.0)
        {
            return Err(Error::InvalidArgument(
                "marginal_skew needs one finite non-negative exponent per feature".to_string(),
            ));
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "base_rate {} outside (0, 1)",
                self.base_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.true_weight_density) {
            return Err(Error::InvalidArgument(format!(
                "true_weight_density {} outside [0, 1]",
                self.true_weight_density
            )));
        }
        Ok(())
    }
}

/// Schema whose raw values are the decimal modality indices, matching what
/// [`generate_synthetic`] produces. Feature names are `f0..f{n-1}`.
pub fn synthetic_schema(spec: &SyntheticSpec) -> Schema {
    let features = spec
        .cardinalities
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let mut vocab = FeatureVocab::new(format!("f{i}"));
            for m in 0..d {
                vocab.intern(&m.to_string());
            }
            vocab
        })
        .collect();
    Schema { features }
}

fn calibrate_intercept(logits: &[f64], target: f64) -> f64 {
    if logits.is_empty() {
        return logit(target);
    }
    let n = logits.len() as f64;
    let (mut lo, mut hi) = (-60.0_f64, 60.0_f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let mean = logits.iter().map(|&z| sigmoid(z + mid)).sum::<f64>() / n;
        if mean < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Ratio between the click rate and the sale rate of generated data,
/// echoing the roughly 20:1 ratio of the challenge data (10% clicks, 0.5%
/// sales).
const SALE_RATE_DIVISOR: f64 = 20.0;

/// Generates a dataset whose labels follow a logistic model on K(x) with
/// Zipf-skewed feature marginals. The returned model is the click-label
/// ground truth (sales are drawn from the same weights with an intercept
/// calibrated to `base_rate / 20`). Deterministic given `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(GranularDataset, Model)> {
    spec.validate()?;
    let map = FeatureIndexMap::new(&spec.cardinalities)?;
    if map.total_dim() > (1 << 28) {
        return Err(Error::InvalidArgument(format!(
            "synthetic coordinate space of {} is too large to hold densely",
            map.total_dim()
        )));
    }
    let dim = map.total_dim() as usize;

    let mut weight_rng = rng_from(spec.seed, &[1]);
    let theta: Vec<f64> = (0..dim)
        .map(|_| {
            if weight_rng.random::<f64>() < spec.true_weight_density {
                weight_rng.sample(StandardNormal)
            } else {
                0.0
            }
        })
        .collect();

    // Per-feature cumulative marginals, Zipf-weighted over modality ranks.
    let cumulatives: Vec<Vec<f64>> = spec
        .cardinalities
        .iter()
        .zip(&spec.marginal_skew)
        .map(|(&d, &skew)| {
            let weights: Vec<f64> = (0..d).map(|m| ((m + 1) as f64).powf(-skew)).collect();
            let total: f64 = weights.iter().sum();
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
            cum
        })
        .collect();

    let mut row_rng = rng_from(spec.seed, &[2]);
    let mut features = Vec::with_capacity(spec.num_rows * spec.num_features);
    for _ in 0..spec.num_rows {
        for cum in &cumulatives {
            let u = row_rng.random::<f64>();
            let m = cum.partition_point(|&c| c <= u);
            features.push(m.min(cum.len() - 1) as u32);
        }
    }

    let encoder = Encoder::Exact(map);
    let mut logits = Vec::with_capacity(spec.num_rows);
    for r in 0..spec.num_rows {
        let row = &features[r * spec.num_features..(r + 1) * spec.num_features];
        let mut z = 0.0;
        encoder.for_each_unit(row, |coord| z += theta[coord as usize])?;
        logits.push(z);
    }

    let bias = calibrate_intercept(&logits, spec.base_rate);
    let mut click_rng = rng_from(spec.seed, &[3]);
    let clicks: Vec<u8> = logits
        .iter()
        .map(|&z| (click_rng.random::<f64>() < sigmoid(z + bias)) as u8)
        .collect();

    let sale_bias = calibrate_intercept(&logits, spec.base_rate / SALE_RATE_DIVISOR);
    let mut sale_rng = rng_from(spec.seed, &[4]);
    let sales: Vec<u8> = logits
        .iter()
        .map(|&z| (sale_rng.random::<f64>() < sigmoid(z + sale_bias)) as u8)
        .collect();

    let dataset = GranularDataset {
        num_features: spec.num_features,
        features,
        clicks,
        sales,
    };
    Ok((dataset, Model::new(encoder, theta, bias)?))
}
