//! Filesystem glue shared by the subcommands.
//!
//! Stage outputs live in directories with pinned file names: aggregation
//! produces `report.csv` + `report.meta` + `schema.vocab`, training produces
//! `model.bin` + `train.log.csv` and carries the vocabulary forward, so each
//! downstream stage can be pointed at the directory of the previous one.

use std::fs;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use agglearn::aggregation::{self, AggregationReport};
use agglearn::data::{self, ColumnMap, GranularDataset, LabelKind, Schema};
use agglearn::{Error, Result};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_META: &str = "report.meta";
pub const SCHEMA_VOCAB: &str = "schema.vocab";
pub const MODEL_BIN: &str = "model.bin";
pub const TRAIN_LOG: &str = "train.log.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const PREDICTIONS_CSV: &str = "predictions.csv";

/// Reads a data CSV's header and maps its columns: `click` and `sale` are
/// label columns when present, everything else is a feature in header order.
pub fn sniff_columns(path: &Path) -> Result<ColumnMap> {
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let headers = reader.headers()?;
    let mut map = ColumnMap {
        feature_columns: Vec::new(),
        click_column: None,
        sale_column: None,
    };
    for name in headers {
        match name {
            "click" => map.click_column = Some(name.to_string()),
            "sale" => map.sale_column = Some(name.to_string()),
            _ => map.feature_columns.push(name.to_string()),
        }
    }
    if map.feature_columns.is_empty() {
        return Err(Error::Contract(format!(
            "{} has no feature columns",
            path.display()
        )));
    }
    Ok(map)
}

/// Loads a data CSV. With a vocabulary the rows are interned against it
/// (unknown values become out-of-vocabulary); without one a fresh schema is
/// built from the file itself.
pub fn load_data(path: &Path, vocab: Option<&Path>) -> Result<(GranularDataset, Schema)> {
    let columns = sniff_columns(path)?;
    match vocab {
        Some(vocab_path) => {
            let schema = Schema::load_vocab(vocab_path)?;
            let dataset = data::load_granular_csv_with_schema(path, &columns, &schema)?;
            Ok((dataset, schema))
        }
        None => data::load_granular_csv(path, &columns),
    }
}

/// Loads a data CSV whose labels are needed: the chosen label column must
/// actually exist, otherwise every row would silently read as negative.
pub fn load_labeled_data(
    path: &Path,
    vocab: Option<&Path>,
    label: LabelKind,
) -> Result<(GranularDataset, Schema)> {
    let columns = sniff_columns(path)?;
    let present = match label {
        LabelKind::Click => columns.click_column.is_some(),
        LabelKind::Sale => columns.sale_column.is_some(),
    };
    if !present {
        return Err(Error::Contract(format!(
            "{} has no `{}` column",
            path.display(),
            label.as_str()
        )));
    }
    load_data(path, vocab)
}

/// Loads the three files of an aggregation run directory.
pub fn load_report_dir(dir: &Path) -> Result<(AggregationReport, Schema)> {
    let report = aggregation::load_report(&dir.join(REPORT_CSV), &dir.join(REPORT_META))?;
    let schema = Schema::load_vocab(dir.join(SCHEMA_VOCAB))?;
    if let Some(map) = report.encoder().index_map() {
        if map.cardinalities()
            != schema
                .cardinalities()
                .iter()
                .map(|&d| d as u64)
                .collect::<Vec<_>>()
        {
            return Err(Error::Contract(format!(
                "vocabulary in {} does not match the report's encoder",
                dir.display()
            )));
        }
    } else if report.encoder().num_features() != schema.num_features() {
        return Err(Error::Contract(format!(
            "vocabulary in {} does not match the report's feature count",
            dir.display()
        )));
    }
    Ok((report, schema))
}

/// Resolves the vocabulary for a model: an explicit path wins, otherwise the
/// `schema.vocab` the training run left next to the model file.
pub fn vocab_near_model(model_path: &Path, explicit: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(path) = explicit {
        return Ok(path);
    }
    let sibling = model_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(SCHEMA_VOCAB);
    if sibling.is_file() {
        Ok(sibling)
    } else {
        Err(Error::InvalidArgument(format!(
            "no {SCHEMA_VOCAB} next to {}; pass --vocab",
            model_path.display()
        )))
    }
}

/// Writes `metric,value` rows; floats use shortest round-trip form.
pub fn write_metric_csv(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut out = String::from("metric,value\n");
    for (metric, value) in rows {
        out.push_str(metric);
        out.push(',');
        out.push_str(value);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
