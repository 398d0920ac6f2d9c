//! Contingency-table aggregation and differential privacy.
//!
//! An [`AggregationReport`] holds, for every observed coordinate of an
//! encoder's space, the display, click, and sale counts of the rows that
//! activate it. Reports start noiseless, then optionally pass through
//! support thresholding, reparameterization into disjoint counts, and
//! Gaussian noising. Each transition is tracked by flags so that parsers
//! can enforce the invariants that still hold.
//!
//! Noise is counter-based: the sample added to a metric slot at a
//! coordinate depends only on (seed, slot, coordinate), never on the order
//! the support is enumerated, so reports are reproducible bit for bit.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::GranularDataset;
use crate::encoding::{self, Encoder, Unit};
use crate::error::{Error, Result};
use crate::kv;
use crate::rng::rng_from;

pub const REPORT_CSV_HEADER: &str = "kind,feat_i,feat_j,mod_i,mod_j,displays,clicks,sales";

/// Default support threshold: coordinates displayed fewer times are dropped
/// before any noise is added.
pub const DEFAULT_DISPLAY_THRESHOLD: u64 = 10;

/// Per-coordinate display, click, and sale counts over an encoder space.
#[derive(Debug, Clone)]
pub struct AggregationReport {
    encoder: Encoder,
    coords: Vec<u64>,
    /// Stored metric slots, parallel to `coords`. Before reparameterization
    /// the slots are (displays, clicks, sales); after, they are the disjoint
    /// counts (sales, clicks - sales, displays - clicks).
    slots: [Vec<f64>; 3],
    noised: bool,
    sigma: Option<f64>,
    noise_seed: Option<u64>,
    thresholded: bool,
    threshold: Option<u64>,
    reparameterized: bool,
}

const AGGREGATE_CHUNK: usize = 8192;

/// Counts every coordinate activated by the dataset. The result is exact,
/// sorted by coordinate, and independent of row order and thread count.
pub fn aggregate(dataset: &GranularDataset, encoder: &Encoder) -> Result<AggregationReport> {
    if dataset.num_features() != encoder.num_features() {
        return Err(Error::Contract(format!(
            "dataset has {} features but the encoder expects {}",
            dataset.num_features(),
            encoder.num_features()
        )));
    }
    let n = dataset.num_rows();
    let num_chunks = n.div_ceil(AGGREGATE_CHUNK);
    let partials: Vec<Result<HashMap<u64, [u64; 3]>>> = (0..num_chunks)
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * AGGREGATE_CHUNK;
            let end = ((chunk + 1) * AGGREGATE_CHUNK).min(n);
            let mut counts: HashMap<u64, [u64; 3]> = HashMap::new();
            for r in start..end {
                let row = dataset.row(r);
                encoder.for_each_unit(row.features, |c| {
                    let entry = counts.entry(c).or_insert([0, 0, 0]);
                    entry[0] += 1;
                    entry[1] += u64::from(row.y_click);
                    entry[2] += u64::from(row.y_sale);
                })?;
            }
            Ok(counts)
        })
        .collect();

    let mut merged: HashMap<u64, [u64; 3]> = HashMap::new();
    for partial in partials {
        for (coord, counts) in partial? {
            let entry = merged.entry(coord).or_insert([0, 0, 0]);
            for (slot, v) in entry.iter_mut().zip(counts) {
                *slot += v;
            }
        }
    }
    let mut coords: Vec<u64> = merged.keys().copied().collect();
    coords.sort_unstable();
    let mut slots = [
        Vec::with_capacity(coords.len()),
        Vec::with_capacity(coords.len()),
        Vec::with_capacity(coords.len()),
    ];
    for &c in &coords {
        let counts = merged[&c];
        for (slot, v) in slots.iter_mut().zip(counts) {
            slot.push(v as f64);
        }
    }
    Ok(AggregationReport {
        encoder: encoder.clone(),
        coords,
        slots,
        noised: false,
        sigma: None,
        noise_seed: None,
        thresholded: false,
        threshold: None,
        reparameterized: false,
    })
}

impl AggregationReport {
    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Sorted coordinates present in the report.
    pub fn support(&self) -> &[u64] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn noised(&self) -> bool {
        self.noised
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn noise_seed(&self) -> Option<u64> {
        self.noise_seed
    }

    pub fn thresholded(&self) -> bool {
        self.thresholded
    }

    pub fn threshold(&self) -> Option<u64> {
        self.threshold
    }

    pub fn reparameterized(&self) -> bool {
        self.reparameterized
    }

    /// Raw stored slots in file order; semantics depend on
    /// [`reparameterized`](Self::reparameterized).
    pub fn stored(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.slots[0], &self.slots[1], &self.slots[2])
    }

    /// Position of a coordinate within the support, if present.
    pub fn index_of(&self, coord: u64) -> Option<usize> {
        self.coords.binary_search(&coord).ok()
    }

    /// Metric vectors in (displays, clicks, sales) semantics, undoing the
    /// reparameterization when needed.
    pub fn metrics(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        if !self.reparameterized {
            return (
                self.slots[0].clone(),
                self.slots[1].clone(),
                self.slots[2].clone(),
            );
        }
        let n = self.coords.len();
        let mut displays = Vec::with_capacity(n);
        let mut clicks = Vec::with_capacity(n);
        let mut sales = Vec::with_capacity(n);
        for i in 0..n {
            let s = self.slots[0][i];
            let c = s + self.slots[1][i];
            let d = c + self.slots[2][i];
            displays.push(d);
            clicks.push(c);
            sales.push(s);
        }
        (displays, clicks, sales)
    }

    fn filtered(&self, keep: &[usize]) -> AggregationReport {
        let coords = keep.iter().map(|&i| self.coords[i]).collect();
        let slots = [
            keep.iter().map(|&i| self.slots[0][i]).collect(),
            keep.iter().map(|&i| self.slots[1][i]).collect(),
            keep.iter().map(|&i| self.slots[2][i]).collect(),
        ];
        AggregationReport {
            encoder: self.encoder.clone(),
            coords,
            slots,
            ..self.clone()
        }
    }

    /// Rewrites the slots as the disjoint counts (sales, clicks - sales,
    /// displays - clicks), which lowers the L2 sensitivity of the release
    /// because each event then touches one slot instead of up to three.
    pub fn reparameterize(&self) -> Result<AggregationReport> {
        if self.noised {
            return Err(Error::Contract(
                "cannot reparameterize a report after noise is added".into(),
            ));
        }
        if self.reparameterized {
            return Err(Error::Contract("report is already reparameterized".into()));
        }
        let mut out = self.clone();
        for i in 0..self.coords.len() {
            let d = self.slots[0][i];
            let c = self.slots[1][i];
            let s = self.slots[2][i];
            out.slots[0][i] = s;
            out.slots[1][i] = c - s;
            out.slots[2][i] = d - c;
        }
        out.reparameterized = true;
        Ok(out)
    }

    /// Restores (displays, clicks, sales) slots. Works on noised reports;
    /// the sums simply carry the noise through.
    pub fn unreparameterize(&self) -> Result<AggregationReport> {
        if !self.reparameterized {
            return Err(Error::Contract("report is not reparameterized".into()));
        }
        let (displays, clicks, sales) = self.metrics();
        let mut out = self.clone();
        out.slots = [displays, clicks, sales];
        out.reparameterized = false;
        Ok(out)
    }

    /// Adds independent N(0, sigma^2) noise to every stored slot of every
    /// support coordinate. The noised values are released as-is: no
    /// rounding, no clamping. `sigma == 0` only flips the flag and records
    /// the parameters, leaving values bitwise unchanged.
    pub fn add_gaussian_noise(&self, sigma: f64, seed: u64) -> Result<AggregationReport> {
        if self.noised {
            return Err(Error::Contract("report is already noised".into()));
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be finite and non-negative, got {sigma}"
            )));
        }
        let mut out = self.clone();
        if sigma > 0.0 {
            for (slot_idx, slot) in out.slots.iter_mut().enumerate() {
                let noised: Vec<f64> = self
                    .coords
                    .par_iter()
                    .zip(slot.par_iter())
                    .map(|(&coord, &value)| {
                        let mut rng = rng_from(seed, &[slot_idx as u64, coord]);
                        let draw: f64 = rng.sample(StandardNormal);
                        value + sigma * draw
                    })
                    .collect();
                *slot = noised;
            }
        }
        out.noised = true;
        out.sigma = Some(sigma);
        out.noise_seed = Some(seed);
        Ok(out)
    }
}

/// Drops every coordinate whose true display count is below `min_count`.
/// Only valid before noising; thresholding after noise would let the
/// released support leak exact counts.
pub fn threshold_report(report: &AggregationReport, min_count: u64) -> Result<AggregationReport> {
    if report.noised {
        return Err(Error::Contract(
            "support thresholding must happen before noise is added".into(),
        ));
    }
    let (displays, _, _) = report.metrics();
    let keep: Vec<usize> = (0..report.coords.len())
        .filter(|&i| displays[i] >= min_count as f64)
        .collect();
    let mut out = report.filtered(&keep);
    out.thresholded = true;
    out.threshold = Some(min_count);
    Ok(out)
}

/// Number of contingency tables released for a feature count: one per
/// feature plus one per unordered feature pair.
pub fn table_count(num_features: usize) -> Result<u64> {
    if num_features == 0 {
        return Err(Error::InvalidArgument(
            "table count requires at least one feature".into(),
        ));
    }
    if num_features > encoding::MAX_FEATURES {
        return Err(Error::InvalidArgument(format!(
            "table count supports at most {} features, got {num_features}",
            encoding::MAX_FEATURES
        )));
    }
    let f = num_features as u64;
    Ok(f + f * (f - 1) / 2)
}

/// L2 sensitivity of one user's row across the full release. Without
/// reparameterization a row can move up to `metrics_per_line` cells by 1 in
/// each table; with the disjoint counts it moves exactly one cell per table.
pub fn l2_sensitivity(
    num_tables: u64,
    metrics_per_line: u32,
    reparameterized: bool,
) -> Result<f64> {
    if num_tables == 0 {
        return Err(Error::InvalidArgument(
            "sensitivity requires at least one table".into(),
        ));
    }
    if !(1..=3).contains(&metrics_per_line) {
        return Err(Error::InvalidArgument(format!(
            "metrics per line must be 1, 2, or 3, got {metrics_per_line}"
        )));
    }
    if reparameterized {
        if metrics_per_line != 3 {
            return Err(Error::InvalidArgument(
                "reparameterized sensitivity is defined for the full 3-metric release".into(),
            ));
        }
        Ok((num_tables as f64).sqrt())
    } else {
        Ok((num_tables as f64 * f64::from(metrics_per_line)).sqrt())
    }
}

/// Gaussian-mechanism calibration for (epsilon, delta)-DP:
/// sigma = sensitivity * sqrt(2 ln(1.25/delta)) / epsilon.
/// A zero sensitivity needs no noise and yields sigma = 0.
pub fn calibrate_sigma(epsilon: f64, delta: f64, l2_sensitivity: f64) -> Result<f64> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !delta.is_finite() || delta <= 0.0 || delta >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "delta must lie strictly between 0 and 1, got {delta}"
        )));
    }
    if !l2_sensitivity.is_finite() || l2_sensitivity < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "l2 sensitivity must be finite and non-negative, got {l2_sensitivity}"
        )));
    }
    if l2_sensitivity == 0.0 {
        return Ok(0.0);
    }
    Ok(l2_sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// A fully resolved privacy budget and the noise scale it implies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub l2_sensitivity: f64,
    pub sigma: f64,
}

impl PrivacyParams {
    /// Builds the parameter set, enforcing that the calibrated sigma is
    /// strictly positive: a budget that implies no noise is not a privacy
    /// guarantee and must be rejected rather than silently released.
    pub fn new(epsilon: f64, delta: f64, l2_sensitivity: f64) -> Result<PrivacyParams> {
        let sigma = calibrate_sigma(epsilon, delta, l2_sensitivity)?;
        if sigma <= 0.0 {
            return Err(Error::InvalidArgument(
                "privacy parameters must imply a strictly positive noise scale".into(),
            ));
        }
        Ok(PrivacyParams {
            epsilon,
            delta,
            l2_sensitivity,
            sigma,
        })
    }
}

/// Renders a coordinate into the five identity fields of the report row
/// convention: (kind, feat_i, feat_j, mod_i, mod_j).
pub(crate) fn coord_fields(encoder: &Encoder, coord: u64) -> Result<[String; 5]> {
    match encoder {
        Encoder::Hashed { .. } => Ok([
            "hashed".into(),
            String::new(),
            String::new(),
            coord.to_string(),
            String::new(),
        ]),
        Encoder::Exact(map) => match map.decode(coord)? {
            Unit::Single { feature, modality } => Ok([
                "single".into(),
                feature.to_string(),
                String::new(),
                modality.to_string(),
                String::new(),
            ]),
            Unit::Pair {
                feature_i,
                feature_j,
                modality_i,
                modality_j,
            } => Ok([
                "pair".into(),
                feature_i.to_string(),
                feature_j.to_string(),
                modality_i.to_string(),
                modality_j.to_string(),
            ]),
        },
    }
}

fn parse_field<T: std::str::FromStr>(field: &str, what: &str, line: u64) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {what} from `{field}`"),
    })
}

fn expect_empty(field: &str, what: &str, line: u64) -> Result<()> {
    if field.trim().is_empty() {
        Ok(())
    } else {
        Err(Error::Parse {
            line,
            message: format!("{what} must be empty for this row kind, got `{field}`"),
        })
    }
}

/// Parses the five identity fields back into a coordinate, validating kind
/// against the encoder and bounds against its space.
pub(crate) fn coord_from_fields(
    encoder: &Encoder,
    kind: &str,
    feat_i: &str,
    feat_j: &str,
    mod_i: &str,
    mod_j: &str,
    line: u64,
) -> Result<u64> {
    let reject = |message: String| Error::Parse { line, message };
    match kind.trim() {
        "hashed" => {
            let Encoder::Hashed { config, .. } = encoder else {
                return Err(reject("hashed row in an exact-encoder report".into()));
            };
            expect_empty(feat_i, "feat_i", line)?;
            expect_empty(feat_j, "feat_j", line)?;
            expect_empty(mod_j, "mod_j", line)?;
            let coord: u64 = parse_field(mod_i, "hashed coordinate", line)?;
            if coord >= config.space_size {
                return Err(reject(format!(
                    "hashed coordinate {coord} is outside the space of {}",
                    config.space_size
                )));
            }
            Ok(coord)
        }
        "single" => {
            let Encoder::Exact(map) = encoder else {
                return Err(reject("single row in a hashed-encoder report".into()));
            };
            expect_empty(feat_j, "feat_j", line)?;
            expect_empty(mod_j, "mod_j", line)?;
            let feature: usize = parse_field(feat_i, "feature index", line)?;
            let modality: u64 = parse_field(mod_i, "modality", line)?;
            map.coordinate_of(feature, modality)
                .map_err(|e| reject(e.to_string()))
        }
        "pair" => {
            let Encoder::Exact(map) = encoder else {
                return Err(reject("pair row in a hashed-encoder report".into()));
            };
            let feature_i: usize = parse_field(feat_i, "feature index", line)?;
            let feature_j: usize = parse_field(feat_j, "feature index", line)?;
            let modality_i: u64 = parse_field(mod_i, "modality", line)?;
            let modality_j: u64 = parse_field(mod_j, "modality", line)?;
            map.coordinate_of_pair(feature_i, feature_j, modality_i, modality_j)
                .map_err(|e| reject(e.to_string()))
        }
        other => Err(reject(format!("unknown row kind `{other}`"))),
    }
}

impl AggregationReport {
    /// Writes the report rows sorted by coordinate. Floats use the shortest
    /// representation that round-trips, so a write/parse cycle is lossless.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        let mut out = String::new();
        out.push_str(REPORT_CSV_HEADER);
        out.push('\n');
        for (i, &coord) in self.coords.iter().enumerate() {
            let fields = coord_fields(&self.encoder, coord)?;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                fields[0],
                fields[1],
                fields[2],
                fields[3],
                fields[4],
                self.slots[0][i],
                self.slots[1][i],
                self.slots[2][i]
            );
        }
        writer.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Writes the sidecar metadata needed to interpret the rows.
    pub fn write_meta<W: Write>(&self, writer: W) -> Result<()> {
        let mut pairs = encoding::encoder_meta_fields(&self.encoder);
        pairs.push(("noised".into(), self.noised.to_string()));
        if let Some(sigma) = self.sigma {
            pairs.push(("sigma".into(), sigma.to_string()));
        }
        if let Some(seed) = self.noise_seed {
            pairs.push(("noise_seed".into(), seed.to_string()));
        }
        pairs.push(("thresholded".into(), self.thresholded.to_string()));
        if let Some(threshold) = self.threshold {
            pairs.push(("threshold".into(), threshold.to_string()));
        }
        pairs.push(("reparameterized".into(), self.reparameterized.to_string()));
        kv::write_kv(writer, &pairs)?;
        Ok(())
    }

    pub fn save(&self, csv_path: &Path, meta_path: &Path) -> Result<()> {
        let mut csv_bytes = Vec::new();
        self.write_csv(&mut csv_bytes)?;
        fs::write(csv_path, csv_bytes)?;
        let mut meta_bytes = Vec::new();
        self.write_meta(&mut meta_bytes)?;
        fs::write(meta_path, meta_bytes)?;
        Ok(())
    }
}

/// Parsed sidecar metadata of a report.
#[derive(Debug, Clone)]
pub struct ReportMeta {
    pub encoder: Encoder,
    pub noised: bool,
    pub sigma: Option<f64>,
    pub noise_seed: Option<u64>,
    pub thresholded: bool,
    pub threshold: Option<u64>,
    pub reparameterized: bool,
}

struct KvCursor {
    pairs: Vec<(u64, String, String)>,
    pos: usize,
}

impl KvCursor {
    fn new(text: &str) -> Result<KvCursor> {
        Ok(KvCursor {
            pairs: kv::parse_kv_numbered(text)?,
            pos: 0,
        })
    }

    fn expect(&mut self, key: &str) -> Result<(u64, String)> {
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

    fn finish(&self) -> Result<()> {
        match self.pairs.get(self.pos) {
            None => Ok(()),
            Some((line, k, _)) => Err(Error::Parse {
                line: *line,
                message: format!("unexpected key `{k}`"),
            }),
        }
    }
}

fn parse_value<T: std::str::FromStr>(raw: &str, line: u64, what: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {what} from `{raw}`"),
    })
}

pub fn parse_report_meta(text: &str) -> Result<ReportMeta> {
    let mut cursor = KvCursor::new(text)?;
    let encoder = encoding::encoder_from_meta(&mut |key| {
        let (line, value) = cursor.expect(key)?;
        Ok((line, value))
    })?;
    let (line, noised_raw) = cursor.expect("noised")?;
    let noised: bool = parse_value(&noised_raw, line, "noised flag")?;
    let (sigma, noise_seed) = if noised {
        let (line, sigma_raw) = cursor.expect("sigma")?;
        let sigma: f64 = parse_value(&sigma_raw, line, "sigma")?;
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("sigma must be finite and non-negative, got {sigma}"),
            });
        }
        let (line, seed_raw) = cursor.expect("noise_seed")?;
        let seed: u64 = parse_value(&seed_raw, line, "noise seed")?;
        (Some(sigma), Some(seed))
    } else {
        (None, None)
    };
    let (line, thresholded_raw) = cursor.expect("thresholded")?;
    let thresholded: bool = parse_value(&thresholded_raw, line, "thresholded flag")?;
    let threshold = if thresholded {
        let (line, raw) = cursor.expect("threshold")?;
        Some(parse_value(&raw, line, "threshold")?)
    } else {
        None
    };
    let (line, reparam_raw) = cursor.expect("reparameterized")?;
    let reparameterized: bool = parse_value(&reparam_raw, line, "reparameterized flag")?;
    cursor.finish()?;
    Ok(ReportMeta {
        encoder,
        noised,
        sigma,
        noise_seed,
        thresholded,
        threshold,
        reparameterized,
    })
}

pub fn parse_report_csv(text: &str, meta: &ReportMeta) -> Result<AggregationReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    {
        let headers = reader.headers()?;
        let expected: Vec<&str> = REPORT_CSV_HEADER.split(',').collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse {
                line: 1,
                message: format!("report header must be `{REPORT_CSV_HEADER}`"),
            });
        }
    }
    let mut coords: Vec<u64> = Vec::new();
    let mut slots: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (idx, record) in reader.records().enumerate() {
        let line = idx as u64 + 2;
        let record = record?;
        let coord = coord_from_fields(
            &meta.encoder,
            &record[0],
            &record[1],
            &record[2],
            &record[3],
            &record[4],
            line,
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
        coords.push(coord);
        for (slot, field_idx) in slots.iter_mut().zip(5..8) {
            let value: f64 = parse_field(&record[field_idx], "metric value", line)?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("metric values must be finite, got {value}"),
                });
            }
            slot.push(value);
        }
    }
    let report = AggregationReport {
        encoder: meta.encoder.clone(),
        coords,
        slots,
        noised: meta.noised,
        sigma: meta.sigma,
        noise_seed: meta.noise_seed,
        thresholded: meta.thresholded,
        threshold: meta.threshold,
        reparameterized: meta.reparameterized,
    };
    if !meta.noised {
        let (displays, clicks, sales) = report.metrics();
        for i in 0..report.coords.len() {
            let (d, c, s) = (displays[i], clicks[i], sales[i]);
            for v in [d, c, s] {
                if v < 0.0 || v.round() != v {
                    return Err(Error::Parse {
                        line: i as u64 + 2,
                        message: format!(
                            "noiseless reports must hold non-negative integer counts, got {v}"
                        ),
                    });
                }
            }
            if c > d || s > d {
                return Err(Error::Parse {
                    line: i as u64 + 2,
                    message: format!(
                        "noiseless counts must satisfy clicks <= displays and sales <= displays, \
                         got displays={d} clicks={c} sales={s}"
                    ),
                });
            }
        }
    }
    Ok(report)
}

pub fn load_report(csv_path: &Path, meta_path: &Path) -> Result<AggregationReport> {
    let meta_text = fs::read_to_string(meta_path)?;
    let meta = parse_report_meta(&meta_text)?;
    let csv_text = fs::read_to_string(csv_path)?;
    parse_report_csv(&csv_text, &meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{read_granular_csv, ColumnMap};
    use crate::encoding::HashedEncoderConfig;
    use proptest::prelude::*;

    const SAMPLE_CSV: &str = "\
feat1,feat2,click,sale
3,A,0,0
3,A,1,0
7,B,0,0
8,B,1,1
8,B,0,0
";

    fn sample_columns() -> ColumnMap {
        ColumnMap {
            feature_columns: vec!["feat1".into(), "feat2".into()],
            click_column: Some("click".into()),
            sale_column: Some("sale".into()),
        }
    }

    fn sample_report() -> AggregationReport {
        let (dataset, schema) =
            read_granular_csv(SAMPLE_CSV.as_bytes(), &sample_columns()).unwrap();
        let encoder = Encoder::exact(&schema.cardinalities()).unwrap();
        aggregate(&dataset, &encoder).unwrap()
    }

    #[test]
    fn aggregation_matches_hand_counts() {
        let report = sample_report();
        // Modalities in first-seen order: feat1 -> {3:0, 7:1, 8:2},
        // feat2 -> {A:0, B:1}. Space: singles f0 at 0..3, f1 at 3..5,
        // pairs at 5..11.
        let (d, c, s) = report.metrics();
        let idx = |coord: u64| report.index_of(coord).unwrap();
        assert_eq!(d[idx(0)], 2.0); // feat1 = 3
        assert_eq!(c[idx(0)], 1.0);
        assert_eq!(s[idx(0)], 0.0);
        assert_eq!(d[idx(2)], 2.0); // feat1 = 8
        assert_eq!(c[idx(2)], 1.0);
        assert_eq!(s[idx(2)], 1.0);
        assert_eq!(d[idx(3)], 2.0); // feat2 = A
        assert_eq!(d[idx(4)], 3.0); // feat2 = B
        assert_eq!(c[idx(4)], 1.0);
        // Pair (feat1=3, feat2=A) sits at 5 + 0 * 2 + 0.
        assert_eq!(d[idx(5)], 2.0);
        // Pair (feat1=8, feat2=B) sits at 5 + 2 * 2 + 1.
        assert_eq!(d[idx(10)], 2.0);
        assert_eq!(s[idx(10)], 1.0);
        // Unseen crossings are absent, not zero rows.
        assert!(report.index_of(6).is_none());
    }

    #[test]
    fn aggregation_rejects_feature_mismatch() {
        let (dataset, _) = read_granular_csv(SAMPLE_CSV.as_bytes(), &sample_columns()).unwrap();
        let encoder = Encoder::exact(&[3, 2, 2]).unwrap();
        assert!(aggregate(&dataset, &encoder).is_err());
    }

    #[test]
    fn thresholding_keeps_exact_boundary_and_runs_before_noise() {
        let report = sample_report();
        let kept = threshold_report(&report, 2).unwrap();
        assert!(kept.thresholded());
        assert_eq!(kept.threshold(), Some(2));
        let (d, _, _) = kept.metrics();
        assert!(d.iter().all(|&v| v >= 2.0));
        // feat1 = 7 appears once and must be gone; count-2 coords survive.
        assert!(kept.index_of(1).is_none());
        assert!(kept.index_of(0).is_some());

        let noised = report.add_gaussian_noise(1.0, 7).unwrap();
        assert!(threshold_report(&noised, 2).is_err());
    }

    #[test]
    fn zero_sigma_noise_only_flips_flags() {
        let report = sample_report();
        let noised = report.add_gaussian_noise(0.0, 99).unwrap();
        assert!(noised.noised());
        assert_eq!(noised.sigma(), Some(0.0));
        assert_eq!(noised.noise_seed(), Some(99));
        let (d0, c0, s0) = report.metrics();
        let (d1, c1, s1) = noised.metrics();
        assert_eq!(d0, d1);
        assert_eq!(c0, c1);
        assert_eq!(s0, s1);
        assert!(noised.add_gaussian_noise(1.0, 3).is_err());
        assert!(report.add_gaussian_noise(-1.0, 3).is_err());
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let report = sample_report();
        let a = report.add_gaussian_noise(17.0, 42).unwrap();
        let b = report.add_gaussian_noise(17.0, 42).unwrap();
        let c = report.add_gaussian_noise(17.0, 43).unwrap();
        assert_eq!(a.stored().0, b.stored().0);
        assert_eq!(a.stored().1, b.stored().1);
        assert_eq!(a.stored().2, b.stored().2);
        assert_ne!(a.stored().0, c.stored().0);
    }

    #[test]
    fn noise_mean_is_centered() {
        let n = 100_000u64;
        let encoder = Encoder::hashed(1, HashedEncoderConfig::new(n, 0)).unwrap();
        let coords: Vec<u64> = (0..n).collect();
        let base = vec![1000.0; n as usize];
        let report = AggregationReport {
            encoder,
            coords,
            slots: [base.clone(), base.clone(), base.clone()],
            noised: false,
            sigma: None,
            noise_seed: None,
            thresholded: false,
            threshold: None,
            reparameterized: false,
        };
        let sigma = 10.0;
        let noised = report.add_gaussian_noise(sigma, 5).unwrap();
        for slot in 0..3 {
            let deltas = noised.stored();
            let slot_values = [deltas.0, deltas.1, deltas.2][slot];
            let mean: f64 = slot_values.iter().map(|v| v - 1000.0).sum::<f64>() / n as f64;
            let bound = 3.0 * sigma / (n as f64).sqrt();
            assert!(
                mean.abs() <= bound,
                "slot {slot} noise mean {mean} exceeds {bound}"
            );
        }
    }

    #[test]
    fn reparameterization_forms_disjoint_counts() {
        let mut report = sample_report();
        report.slots = [vec![10.0], vec![4.0], vec![1.0]];
        report.coords = vec![0];
        let reparam = report.reparameterize().unwrap();
        assert_eq!(reparam.stored().0, &[1.0]);
        assert_eq!(reparam.stored().1, &[3.0]);
        assert_eq!(reparam.stored().2, &[6.0]);
        let (d, c, s) = reparam.metrics();
        assert_eq!((d[0], c[0], s[0]), (10.0, 4.0, 1.0));
        let back = reparam.unreparameterize().unwrap();
        assert_eq!(back.stored().0, &[10.0]);
        assert!(reparam.reparameterize().is_err());
        assert!(back.unreparameterize().is_err());
    }

    #[test]
    fn reparameterization_of_unlabeled_data_moves_all_mass_to_displays() {
        let mut report = sample_report();
        report.coords = vec![0, 1];
        report.slots = [vec![5.0, 8.0], vec![0.0, 0.0], vec![0.0, 0.0]];
        let reparam = report.reparameterize().unwrap();
        assert_eq!(reparam.stored().0, &[0.0, 0.0]);
        assert_eq!(reparam.stored().1, &[0.0, 0.0]);
        assert_eq!(reparam.stored().2, &[5.0, 8.0]);
    }

    #[test]
    fn reparameterization_must_precede_noise() {
        let report = sample_report();
        let noised = report.add_gaussian_noise(1.0, 1).unwrap();
        assert!(noised.reparameterize().is_err());
        // Noised reparameterized reports can still be unfolded.
        let reparam = report.reparameterize().unwrap();
        let noised = reparam.add_gaussian_noise(1.0, 1).unwrap();
        let unfolded = noised.unreparameterize().unwrap();
        assert!(!unfolded.reparameterized());
        assert!(unfolded.noised());
    }

    #[test]
    fn sensitivity_formulas_match_closed_forms() {
        assert_eq!(table_count(19).unwrap(), 190);
        assert_eq!(table_count(2).unwrap(), 3);
        assert!(table_count(0).is_err());
        let full = l2_sensitivity(190, 3, false).unwrap();
        assert_eq!(full, 570.0_f64.sqrt());
        assert!((full - 23.874672772626646).abs() < 1e-12);
        let reparam = l2_sensitivity(190, 3, true).unwrap();
        assert_eq!(reparam, 190.0_f64.sqrt());
        assert!((reparam - 13.784048752090222).abs() < 1e-12);
        assert!(l2_sensitivity(0, 3, false).is_err());
        assert!(l2_sensitivity(190, 0, false).is_err());
        assert!(l2_sensitivity(190, 4, false).is_err());
        assert!(l2_sensitivity(190, 1, true).is_err());
        assert_eq!(l2_sensitivity(190, 1, false).unwrap(), 190.0_f64.sqrt());
    }

    #[test]
    fn sigma_calibration_matches_reference_values() {
        let sigma = calibrate_sigma(10.0, 1e-10, 570.0_f64.sqrt()).unwrap();
        assert!((sigma - 16.280004210266753).abs() < 1e-12);
        let sigma = calibrate_sigma(10.0, 1e-10, 190.0_f64.sqrt()).unwrap();
        assert!((sigma - 9.39926481320575).abs() < 1e-12);
        assert_eq!(calibrate_sigma(10.0, 1e-10, 0.0).unwrap(), 0.0);
        assert!(calibrate_sigma(0.0, 1e-10, 1.0).is_err());
        assert!(calibrate_sigma(-1.0, 1e-10, 1.0).is_err());
        assert!(calibrate_sigma(10.0, 0.0, 1.0).is_err());
        assert!(calibrate_sigma(10.0, 1.0, 1.0).is_err());
        assert!(calibrate_sigma(10.0, 1e-10, -1.0).is_err());
    }

    #[test]
    fn privacy_params_require_positive_sigma() {
        let params = PrivacyParams::new(10.0, 1e-10, 570.0_f64.sqrt()).unwrap();
        assert!((params.sigma - 16.280004210266753).abs() < 1e-12);
        assert!(PrivacyParams::new(10.0, 1e-10, 0.0).is_err());
    }

    #[test]
    fn csv_round_trip_is_lossless_for_noiseless_reports() {
        let report = sample_report();
        let mut csv_bytes = Vec::new();
        report.write_csv(&mut csv_bytes).unwrap();
        let mut meta_bytes = Vec::new();
        report.write_meta(&mut meta_bytes).unwrap();
        let csv_text = String::from_utf8(csv_bytes).unwrap();
        let meta_text = String::from_utf8(meta_bytes).unwrap();
        assert!(csv_text.starts_with(REPORT_CSV_HEADER));
        // Single rows leave the second feature and modality empty.
        assert!(csv_text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("single,0,,0,,"));
        let meta = parse_report_meta(&meta_text).unwrap();
        let parsed = parse_report_csv(&csv_text, &meta).unwrap();
        assert_eq!(parsed.support(), report.support());
        assert_eq!(parsed.stored().0, report.stored().0);
        assert_eq!(parsed.stored().1, report.stored().1);
        assert_eq!(parsed.stored().2, report.stored().2);
        assert!(!parsed.noised());
    }

    #[test]
    fn csv_round_trip_is_bitwise_for_noised_reports() {
        let report = threshold_report(&sample_report(), 1)
            .unwrap()
            .reparameterize()
            .unwrap()
            .add_gaussian_noise(16.280004210266753, 123)
            .unwrap();
        let mut csv_bytes = Vec::new();
        report.write_csv(&mut csv_bytes).unwrap();
        let mut meta_bytes = Vec::new();
        report.write_meta(&mut meta_bytes).unwrap();
        let meta = parse_report_meta(std::str::from_utf8(&meta_bytes).unwrap()).unwrap();
        let parsed = parse_report_csv(std::str::from_utf8(&csv_bytes).unwrap(), &meta).unwrap();
        assert_eq!(parsed.stored().0, report.stored().0);
        assert_eq!(parsed.stored().1, report.stored().1);
        assert_eq!(parsed.stored().2, report.stored().2);
        assert_eq!(parsed.sigma(), report.sigma());
        assert_eq!(parsed.noise_seed(), report.noise_seed());
        assert!(parsed.reparameterized());
        assert_eq!(parsed.threshold(), Some(1));
    }

    #[test]
    fn hashed_reports_round_trip() {
        let (dataset, _) = read_granular_csv(SAMPLE_CSV.as_bytes(), &sample_columns()).unwrap();
        let encoder = Encoder::hashed(2, HashedEncoderConfig::new(64, 9)).unwrap();
        let report = aggregate(&dataset, &encoder).unwrap();
        let mut csv_bytes = Vec::new();
        report.write_csv(&mut csv_bytes).unwrap();
        let csv_text = String::from_utf8(csv_bytes).unwrap();
        assert!(csv_text.lines().nth(1).unwrap().starts_with("hashed,,,"));
        let mut meta_bytes = Vec::new();
        report.write_meta(&mut meta_bytes).unwrap();
        let meta = parse_report_meta(std::str::from_utf8(&meta_bytes).unwrap()).unwrap();
        let parsed = parse_report_csv(&csv_text, &meta).unwrap();
        assert_eq!(parsed.support(), report.support());
        assert_eq!(parsed.stored().0, report.stored().0);
    }

    #[test]
    fn parser_rejects_malformed_reports() {
        let report = sample_report();
        let mut meta_bytes = Vec::new();
        report.write_meta(&mut meta_bytes).unwrap();
        let meta = parse_report_meta(std::str::from_utf8(&meta_bytes).unwrap()).unwrap();

        let bad_header = "kind,feat_i,feat_j,mod_i,mod_j,displays,clicks\nsingle,0,,0,,1,0\n";
        assert!(parse_report_csv(bad_header, &meta).is_err());

        let unsorted = format!("{REPORT_CSV_HEADER}\nsingle,0,,1,,1,0,0\nsingle,0,,0,,1,0,0\n");
        assert!(parse_report_csv(&unsorted, &meta).is_err());

        let negative = format!("{REPORT_CSV_HEADER}\nsingle,0,,0,,-1,0,0\n");
        assert!(parse_report_csv(&negative, &meta).is_err());

        let clicks_exceed = format!("{REPORT_CSV_HEADER}\nsingle,0,,0,,1,2,0\n");
        assert!(parse_report_csv(&clicks_exceed, &meta).is_err());

        let unknown_kind = format!("{REPORT_CSV_HEADER}\ntriple,0,,0,,1,0,0\n");
        assert!(parse_report_csv(&unknown_kind, &meta).is_err());

        let unordered_pair = format!("{REPORT_CSV_HEADER}\npair,1,0,0,0,1,0,0\n");
        assert!(parse_report_csv(&unordered_pair, &meta).is_err());

        let out_of_range = format!("{REPORT_CSV_HEADER}\nsingle,0,,9,,1,0,0\n");
        assert!(parse_report_csv(&out_of_range, &meta).is_err());

        let nonempty_single = format!("{REPORT_CSV_HEADER}\nsingle,0,1,0,,1,0,0\n");
        assert!(parse_report_csv(&nonempty_single, &meta).is_err());

        let fractional = format!("{REPORT_CSV_HEADER}\nsingle,0,,0,,1.5,0,0\n");
        assert!(parse_report_csv(&fractional, &meta).is_err());
    }

    #[test]
    fn meta_parser_enforces_key_order_and_conditionals() {
        let good = "encoder=exact\nnum_features=2\ncardinalities=3,2\nnoised=false\n\
                    thresholded=false\nreparameterized=false\n";
        let meta = parse_report_meta(good).unwrap();
        assert!(!meta.noised);
        assert_eq!(meta.encoder.num_features(), 2);

        let missing_sigma = "encoder=exact\nnum_features=2\ncardinalities=3,2\nnoised=true\n\
                             noise_seed=1\nthresholded=false\nreparameterized=false\n";
        assert!(parse_report_meta(missing_sigma).is_err());

        let trailing = format!("{good}extra=1\n");
        assert!(parse_report_meta(&trailing).is_err());

        let hashed = "encoder=hashed\nnum_features=19\nhash_space=16777216\nhash_salt=7\n\
                      noised=true\nsigma=17\nnoise_seed=3\nthresholded=true\nthreshold=10\n\
                      reparameterized=true\n";
        let meta = parse_report_meta(hashed).unwrap();
        assert_eq!(meta.sigma, Some(17.0));
        assert_eq!(meta.threshold, Some(10));
        assert!(meta.reparameterized);
    }

    proptest! {
        #[test]
        fn noiseless_invariants_hold_for_random_datasets(
            rows in proptest::collection::vec((0u32..3, 0u32..2, 0u8..2, 0u8..2), 1..60)
        ) {
            let mut dataset = GranularDataset::new(2);
            for (a, b, click, sale) in rows {
                dataset.push_row(&[a, b], click, sale).unwrap();
            }
            let encoder = Encoder::exact(&[3, 2]).unwrap();
            let report = aggregate(&dataset, &encoder).unwrap();
            let (d, c, s) = report.metrics();
            let mut single_displays = 0.0;
            for (i, &coord) in report.support().iter().enumerate() {
                prop_assert!(d[i] >= 0.0 && d[i].round() == d[i]);
                prop_assert!(c[i] >= 0.0 && c[i] <= d[i]);
                prop_assert!(s[i] >= 0.0 && s[i] <= d[i]);
                if coord < 5 {
                    single_displays += d[i];
                }
            }
            // Every row lands in exactly one modality per feature.
            prop_assert_eq!(single_displays, (dataset.num_rows() * 2) as f64);

            let reparam = report.reparameterize().unwrap();
            let back = reparam.unreparameterize().unwrap();
            prop_assert_eq!(back.stored().0, report.stored().0);
            prop_assert_eq!(back.stored().1, report.stored().1);
            prop_assert_eq!(back.stored().2, report.stored().2);
        }
    }
}
