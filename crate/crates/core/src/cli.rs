//! The four pipeline stages behind the `diswic` binary: compute-labels,
//! train, predict and evaluate.

use std::path::Path;

use crate::checkpoint::Manifest;
use crate::dataset::{
    attach_labels, build_labeled_dataset, parse_instances, parse_judgments, parse_labels, write_labels, LabelRow,
    LabeledInstance, UsePair,
};
use crate::embedding_store::read_store;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_report, write_report, MetricReport};
use crate::trainer::{self, TrainConfig, TrainRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelCounts {
    pub labeled: usize,
    pub skipped: usize,
}

pub fn compute_labels(instances: &Path, judgments: &Path, out: &Path) -> Result<LabelCounts> {
    let pairs = parse_instances(instances)?;
    let records = parse_judgments(judgments)?;
    let summary = build_labeled_dataset(&pairs, &records)?;
    write_labels(out, &summary.instances)?;
    Ok(LabelCounts {
        labeled: summary.instances.len(),
        skipped: summary.skipped.len(),
    })
}

/// Defaults, then the config file, then `key=value` overrides.
pub fn resolve_config(config_file: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = config_file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest = Manifest::parse(&text).map_err(|(line, msg)| Error::parse(path, line, msg))?;
        config.apply(&manifest)?;
    }
    for item in overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
        config.set(k.trim(), v.trim())?;
    }
    config.validate()?;
    Ok(config)
}

/// Labels carry only instance ids; that is all training needs to find the
/// embeddings.
fn label_instances(rows: Vec<LabelRow>) -> Vec<LabeledInstance> {
    rows.into_iter()
        .map(|row| LabeledInstance {
            pair: UsePair {
                instance_id: row.instance_id,
                lemma: String::new(),
                language: String::new(),
                context1: String::new(),
                target_index1: 0,
                context2: String::new(),
                target_index2: 0,
            },
            mean_disagreement: row.mean_disagreement,
            num_judgments: row.num_judgments,
        })
        .collect()
}

pub fn train(labels: &Path, embeddings: &Path, config: &TrainConfig, out_dir: &Path) -> Result<TrainRun> {
    let labeled = label_instances(parse_labels(labels)?);
    let store = read_store(embeddings)?;
    if 2 * store.dim() != config.net.input_width {
        return Err(Error::DimensionMismatch {
            expected: config.net.input_width,
            found: 2 * store.dim(),
        });
    }
    trainer::train(config, &labeled, &store, Some(out_dir))
}

pub fn predict(checkpoint: &Path, instances: &Path, embeddings: &Path, out: &Path) -> Result<usize> {
    let pairs = parse_instances(instances)?;
    let store = read_store(embeddings)?;
    let predictions = trainer::predict(checkpoint, &pairs, &store)?;
    trainer::write_predictions(out, &predictions)?;
    Ok(predictions.len())
}

pub fn evaluate(predictions: &Path, labels: &Path, instances: &Path, out: &Path) -> Result<MetricReport> {
    let pred = trainer::parse_predictions(predictions)?;
    let pairs = parse_instances(instances)?;
    let gold = attach_labels(&pairs, &parse_labels(labels)?)?;
    let report = evaluate_report(&pred, &gold)?;
    write_report(out, &report)?;
    Ok(report)
}
