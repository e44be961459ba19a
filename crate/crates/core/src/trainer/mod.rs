//! The training protocol: split, epoch loop with shuffled mini-batches,
//! clipping, AdamW, plateau scheduling on validation loss, checkpointing and
//! loss-history output; plus batched eval-mode prediction.

mod config;

pub use config::{TrainConfig, CONFIG_KEYS, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_SEED, DEFAULT_SPLIT_RATIO};

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::dataset::{split_train_validation, LabeledInstance, UsePair};
use crate::embedding_store::EmbeddingStore;
use crate::error::{Error, Result};
use crate::nn::{mse_grad, mse_loss, Mode, RegressionNet};
use crate::optim::{clip_gradients, AdamWState};
use crate::rng::SplitMix64;
use crate::tsv;

pub const MIN_TRAINING_INSTANCES: usize = 10;
pub const BEST_CHECKPOINT: &str = "checkpoint-best.nnck";
pub const FINAL_CHECKPOINT: &str = "checkpoint-final.nnck";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const HISTORY_FILE: &str = "history.tsv";
pub const HISTORY_HEADER: &str = "epoch\ttrain_loss\tval_loss\tlr";
pub const PREDICTIONS_HEADER: &str = "instance_id\tprediction";
const PREDICT_BATCH: usize = 256;
/// Offset that separates the dropout stream from the other seeded streams.
const DROPOUT_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate in effect during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss (first one on ties).
    pub best_epoch: usize,
    pub best_net: RegressionNet,
    pub final_net: RegressionNet,
    pub checkpoint_path: Option<PathBuf>,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
}

fn features(store: &EmbeddingStore, items: &[LabeledInstance]) -> Result<(Array2<f64>, Vec<f64>)> {
    let width = 2 * store.dim();
    let mut x = Array2::zeros((items.len(), width));
    for (mut row, item) in x.rows_mut().into_iter().zip(items) {
        let f = store.pair_feature(&item.pair)?;
        row.assign(&ndarray::ArrayView1::from(&f.x));
    }
    Ok((x, items.iter().map(|i| i.mean_disagreement).collect()))
}

fn check_store(store: &EmbeddingStore, input_width: usize, pairs: &[&UsePair]) -> Result<()> {
    if 2 * store.dim() != input_width {
        return Err(Error::DimensionMismatch {
            expected: input_width,
            found: 2 * store.dim(),
        });
    }
    let missing: Vec<String> = pairs.iter().flat_map(|p| store.missing_keys(p)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingKeys(missing));
    }
    Ok(())
}

pub fn train(
    config: &TrainConfig,
    labeled: &[LabeledInstance],
    store: &EmbeddingStore,
    out_dir: Option<&Path>,
) -> Result<TrainRun> {
    train_with_observer(config, labeled, store, out_dir, &mut |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, instance ids)` for every
/// optimizer step.
pub fn train_with_observer(
    config: &TrainConfig,
    labeled: &[LabeledInstance],
    store: &EmbeddingStore,
    out_dir: Option<&Path>,
    observer: &mut dyn FnMut(usize, &[&str]),
) -> Result<TrainRun> {
    config.validate()?;
    if labeled.len() < MIN_TRAINING_INSTANCES {
        return Err(Error::Validation(format!(
            "need at least {MIN_TRAINING_INSTANCES} labeled instances, got {}",
            labeled.len()
        )));
    }
    check_store(
        store,
        config.net.input_width,
        &labeled.iter().map(|l| &l.pair).collect::<Vec<_>>(),
    )?;

    let split = split_train_validation(labeled, config.split_ratio, config.seed)?;
    if split.train.len() < 2 {
        return Err(Error::Validation("training split has fewer than 2 instances".into()));
    }
    let (train_x, train_y) = features(store, &split.train)?;
    let (val_x, val_y) = features(store, &split.validation)?;
    let train_ids: Vec<String> = split.train.iter().map(|l| l.pair.instance_id.clone()).collect();
    let validation_ids: Vec<String> = split.validation.iter().map(|l| l.pair.instance_id.clone()).collect();

    let manifest = config.to_manifest();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        tsv::write_file(&dir.join(MANIFEST_FILE), &manifest.to_text())?;
    }

    let mut net = RegressionNet::new(config.net.clone(), config.seed)?;
    let lens: Vec<usize> = net.parameters().iter().map(|(_, p)| p.len()).collect();
    let mut adam = AdamWState::new(&lens, config.adamw());
    let mut scheduler = config.scheduler();
    let clip = config.clip();
    let mut dropout_rng = SplitMix64::new(config.seed ^ DROPOUT_STREAM);
    let mut lr = config.learning_rate;

    let mut history: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, RegressionNet)> = None;
    let n_train = train_x.nrows();

    let diverged = |epoch: usize, history: &[EpochRecord]| -> Error {
        if let Some(dir) = out_dir {
            if let Err(e) = emit_history(history, dir.join(HISTORY_FILE)) {
                log::error!("could not save partial history: {e}");
            }
        }
        Error::Diverged {
            epoch,
            history: history.to_vec(),
        }
    };

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        SplitMix64::new(config.seed ^ epoch as u64).shuffle(&mut order);

        net.set_mode(Mode::Train);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            // BatchNorm has no batch statistics for a single row.
            if chunk.len() < 2 {
                continue;
            }
            let x = train_x.select(ndarray::Axis(0), chunk);
            let y: Vec<f64> = chunk.iter().map(|&i| train_y[i]).collect();
            let ids: Vec<&str> = chunk.iter().map(|&i| train_ids[i].as_str()).collect();
            observer(epoch + 1, &ids);

            let (pred, cache) = net.forward(&x, &mut dropout_rng)?;
            let pred = pred.to_vec();
            let loss = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(diverged(epoch + 1, &history));
            }
            let mut grads = net.backward(&cache, &mse_grad(&pred, &y)?)?.params;
            if clip_gradients(&mut grads, &clip).is_err() {
                return Err(diverged(epoch + 1, &history));
            }
            adam.learning_rate = lr;
            adam.step(&mut net.parameters_mut(), &grads)?;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = loss_sum / seen as f64;

        net.set_mode(Mode::Eval);
        let val_pred = net.predict(&val_x).map_err(|_| diverged(epoch + 1, &history))?;
        let val_loss = mse_loss(val_pred.as_slice().unwrap(), &val_y)?;
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(diverged(epoch + 1, &history));
        }

        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            lr,
        });
        log::info!(
            "epoch {:>3}/{}: train_loss {train_loss:.6} val_loss {val_loss:.6} lr {lr:e}",
            epoch + 1,
            config.epochs
        );

        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            if let Some(dir) = out_dir {
                write_checkpoint(dir.join(BEST_CHECKPOINT), &manifest, &net, Some(&adam))?;
            }
            best = Some((epoch + 1, val_loss, net.clone()));
        }
        lr = scheduler.observe(val_loss, lr)?;
    }

    if let Some(dir) = out_dir {
        write_checkpoint(dir.join(FINAL_CHECKPOINT), &manifest, &net, Some(&adam))?;
        emit_history(&history, dir.join(HISTORY_FILE))?;
    }
    let (best_epoch, _, best_net) = best.expect("at least one epoch");
    Ok(TrainRun {
        config: config.clone(),
        history,
        best_epoch,
        best_net,
        final_net: net,
        checkpoint_path: out_dir.map(|d| d.join(BEST_CHECKPOINT)),
        train_ids,
        validation_ids,
    })
}

/// Eval-mode predictions in input order.
pub fn predict_with_net(net: &RegressionNet, pairs: &[UsePair], store: &EmbeddingStore) -> Result<Vec<(String, f64)>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    check_store(store, net.config().input_width, &pairs.iter().collect::<Vec<_>>())?;
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(PREDICT_BATCH) {
        let mut x = Array2::zeros((chunk.len(), 2 * store.dim()));
        for (mut row, pair) in x.rows_mut().into_iter().zip(chunk) {
            row.assign(&ndarray::ArrayView1::from(&store.pair_feature(pair)?.x));
        }
        let pred = net.predict(&x)?;
        out.extend(chunk.iter().map(|p| p.instance_id.clone()).zip(pred.iter().copied()));
    }
    Ok(out)
}

pub fn predict(checkpoint: impl AsRef<Path>, pairs: &[UsePair], store: &EmbeddingStore) -> Result<Vec<(String, f64)>> {
    let ck = read_checkpoint(checkpoint)?;
    predict_with_net(&ck.net, pairs, store)
}

pub fn format_history(history: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.epoch, r.train_loss, r.val_loss, r.lr);
    }
    out
}

/// Per-epoch losses and learning rate as TSV.
pub fn emit_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    tsv::write_file(path.as_ref(), &format_history(history))
}

pub fn write_predictions(path: impl AsRef<Path>, predictions: &[(String, f64)]) -> Result<()> {
    let mut out = String::from(PREDICTIONS_HEADER);
    out.push('\n');
    for (id, p) in predictions {
        let _ = writeln!(out, "{}\t{p:.6}", tsv::escape(id));
    }
    tsv::write_file(path.as_ref(), &out)
}

pub fn parse_predictions(path: impl AsRef<Path>) -> Result<HashMap<String, f64>> {
    let path = path.as_ref();
    let rows = tsv::read_table(path, &["instance_id", "prediction"])?;
    let mut out = HashMap::with_capacity(rows.len());
    let mut seen = HashSet::new();
    for row in rows {
        let [id, raw]: [String; 2] = row.fields.try_into().expect("arity checked by read_table");
        let value: f64 = raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::parse(path, row.line, format!("invalid prediction {raw:?}")))?;
        if !seen.insert(id.clone()) {
            return Err(Error::Validation(format!(
                "{}:{}: duplicate instance_id {id}",
                path.display(),
                row.line
            )));
        }
        out.insert(id, value);
    }
    Ok(out)
}
