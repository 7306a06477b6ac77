//! End-to-end training: AdamW over batched gradient accumulation,
//! stratified k-fold cross-validation, per-epoch loss tracking, metric
//! aggregation, and binary checkpoints.
//!
//! Everything is deterministic for a fixed seed: fold assignment, parameter
//! init, epoch shuffles, and gradient accumulation order (graphs within a
//! batch are processed in parallel but reduced in index order).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SignedGraph;
use crate::metrics::{compute_metrics, FoldMetrics, MetricsReport};
use crate::model::{loss_and_gradients, predict_prob, ModelConfig, ModelParams, PreparedGraph};
use crate::optim::{adamw_step, AdamWConfig, AdamWState};
use crate::tensor::Tensor;

const CHECKPOINT_MAGIC: &[u8; 4] = b"BHGN";
const CHECKPOINT_VERSION: u32 = 1;

/// Optimization and cross-validation settings. Defaults: lr 1e-3, weight
/// decay 5e-4, batch 32, 100 epochs, 10 folds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub folds: usize,
    pub seed: u64,
    /// Number of folds trained concurrently (1 = sequential).
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 5e-4,
            batch_size: 32,
            epochs: 100,
            folds: 10,
            seed: 42,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidInput(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.folds < 2 {
            return Err(Error::InvalidInput(format!(
                "folds must be >= 2, got {}",
                self.folds
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean training loss of one epoch of one fold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub fold: usize,
    pub epoch: usize,
    pub loss: f64,
}

/// Everything a training run produces.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: MetricsReport,
    pub loss_curve: Vec<LossPoint>,
    /// Final parameters of each fold.
    pub fold_params: Vec<ModelParams>,
}

/// Stratified fold assignment: per class, a seeded shuffle dealt round-robin.
/// Fails when any class has fewer members than folds (some fold would lack
/// that class).
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let classes: Vec<usize> = {
        let mut c: Vec<usize> = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    for &class in &classes {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect();
        if members.len() < folds {
            return Err(Error::FoldMissingClass {
                class,
                fold: members.len(),
            });
        }
        members.shuffle(&mut rng);
        for (pos, idx) in members.into_iter().enumerate() {
            assignment[idx] = pos % folds;
        }
    }
    Ok(assignment)
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add((fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Mean per-block gradients over a slice of graphs, reduced in index order.
fn batch_gradients(
    params: &ModelParams,
    batch: &[&PreparedGraph],
    config: &ModelConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let per_graph: Vec<(f64, f64, Vec<Tensor>)> = batch
        .par_iter()
        .map(|g| loss_and_gradients(params, g, config))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut loss_sum = 0.0;
    let mut acc: Option<Vec<Tensor>> = None;
    for (loss, _prob, grads) in per_graph {
        loss_sum += loss;
        match &mut acc {
            None => acc = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.add_assign(g)?;
                }
            }
        }
    }
    let grads = acc
        .expect("non-empty batch")
        .into_iter()
        .map(|g| g.scale(scale))
        .collect();
    Ok((loss_sum * scale, grads))
}

/// Train one fold; returns its final parameters and the per-epoch losses.
fn train_fold(
    prepared: &[PreparedGraph],
    train_idx: &[usize],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    fold: usize,
) -> Result<(ModelParams, Vec<LossPoint>)> {
    let mut params = ModelParams::init(model_cfg, fold_seed(cfg.seed, fold))?;
    let opt_cfg = AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let mut state = {
        let blocks = params.blocks();
        AdamWState::new(&blocks.iter().map(|(_, t)| *t).collect::<Vec<_>>())
    };
    let mut order: Vec<usize> = train_idx.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(fold_seed(cfg.seed, fold) ^ 0x5eed);
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedGraph> = chunk.iter().map(|&i| &prepared[i]).collect();
            let (loss, grads) = batch_gradients(&params, &batch, model_cfg)?;
            adamw_step(&mut params.blocks_mut(), &grads, &mut state, &opt_cfg)?;
            epoch_loss += loss;
            batches += 1;
        }
        losses.push(LossPoint {
            fold,
            epoch,
            loss: epoch_loss / batches.max(1) as f64,
        });
    }
    Ok((params, losses))
}

/// Positive-class probabilities for a set of graphs, in order.
pub fn predict_set(
    params: &ModelParams,
    prepared: &[&PreparedGraph],
    config: &ModelConfig,
) -> Result<Vec<f64>> {
    prepared
        .par_iter()
        .map(|g| predict_prob(params, g, config))
        .collect()
}

/// Metrics of `params` on a set of labeled graphs.
pub fn evaluate_metrics(
    params: &ModelParams,
    prepared: &[&PreparedGraph],
    config: &ModelConfig,
) -> Result<FoldMetrics> {
    let scores = predict_set(params, prepared, config)?;
    let labels: Vec<usize> = prepared
        .iter()
        .map(|g| {
            g.label
                .ok_or_else(|| Error::InvalidInput("graph has no label".into()))
        })
        .collect::<Result<_>>()?;
    compute_metrics(&scores, &labels)
}

/// Full stratified cross-validation run.
pub fn train(
    graphs: &[SignedGraph],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    let labels: Vec<usize> = graphs
        .iter()
        .map(|g| {
            g.label
                .ok_or_else(|| Error::InvalidInput("unlabeled graph in training set".into()))
        })
        .collect::<Result<_>>()?;
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidInput(format!(
            "labels must be 0 or 1, got {bad}"
        )));
    }
    let prepared: Vec<PreparedGraph> = graphs
        .iter()
        .map(|g| PreparedGraph::new(g, model_cfg))
        .collect::<Result<_>>()?;
    let assignment = stratified_folds(&labels, cfg.folds, cfg.seed)?;

    let run_fold = |fold: usize| -> Result<(ModelParams, Vec<LossPoint>, FoldMetrics)> {
        let train_idx: Vec<usize> = (0..prepared.len())
            .filter(|&i| assignment[i] != fold)
            .collect();
        let test_idx: Vec<usize> = (0..prepared.len())
            .filter(|&i| assignment[i] == fold)
            .collect();
        let (params, losses) = train_fold(&prepared, &train_idx, model_cfg, cfg, fold)?;
        let test: Vec<&PreparedGraph> = test_idx.iter().map(|&i| &prepared[i]).collect();
        let metrics = evaluate_metrics(&params, &test, model_cfg)?;
        Ok((params, losses, metrics))
    };

    let results: Vec<(ModelParams, Vec<LossPoint>, FoldMetrics)> = if cfg.jobs > 1 {
        (0..cfg.folds)
            .into_par_iter()
            .map(run_fold)
            .collect::<Result<_>>()?
    } else {
        (0..cfg.folds).map(run_fold).collect::<Result<_>>()?
    };

    let mut fold_params = Vec::with_capacity(cfg.folds);
    let mut loss_curve = Vec::new();
    let mut fold_metrics = Vec::with_capacity(cfg.folds);
    for (params, losses, metrics) in results {
        fold_params.push(params);
        loss_curve.extend(losses);
        fold_metrics.push(metrics);
    }
    Ok(TrainOutcome {
        report: MetricsReport::from_folds(fold_metrics),
        loss_curve,
        fold_params,
    })
}

// ─────────────────────────────────────────────────────────────────────
// Artifacts: metrics.json, loss_curve.csv, checkpoints
// ─────────────────────────────────────────────────────────────────────

/// Serialize a report as stable, timestamp-free JSON.
pub fn metrics_json(report: &MetricsReport) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_metrics(report: &MetricsReport, path: &Path) -> Result<()> {
    fs::write(path, metrics_json(report)?)?;
    Ok(())
}

pub fn write_loss_curve(curve: &[LossPoint], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,fold,loss\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.epoch, p.fold, p.loss));
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    seed: u64,
    fold: usize,
    model: ModelConfig,
    blocks: Vec<BlockInfo>,
}

#[derive(Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    rows: usize,
    cols: usize,
}

/// Versioned binary container: magic, version, JSON header (shapes, config,
/// seed), then raw little-endian f64 blocks.
pub fn save_checkpoint(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    seed: u64,
    fold: usize,
    path: &Path,
) -> Result<()> {
    let blocks = params.blocks();
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        seed,
        fold,
        model: model_cfg.clone(),
        blocks: blocks
            .iter()
            .map(|(name, t)| BlockInfo {
                name: name.clone(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut f = fs::File::create(path)?;
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    for (_, t) in &blocks {
        for v in t.data() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Load a checkpoint, rejecting unknown versions and shape mismatches.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig, u64)> {
    let mut f = fs::File::open(path)?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic bytes",
            path.display()
        )));
    }
    let mut word = [0u8; 4];
    f.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let mut len8 = [0u8; 8];
    f.read_exact(&mut len8)?;
    let header_len = u64::from_le_bytes(len8) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;

    let mut params = ModelParams::init(&header.model, 0)?;
    {
        let expected: Vec<(String, usize, usize)> = params
            .blocks()
            .iter()
            .map(|(n, t)| (n.clone(), t.rows(), t.cols()))
            .collect();
        if expected.len() != header.blocks.len() {
            return Err(Error::Checkpoint(format!(
                "{}: {} blocks, expected {}",
                path.display(),
                header.blocks.len(),
                expected.len()
            )));
        }
        for ((name, rows, cols), info) in expected.iter().zip(&header.blocks) {
            if name != &info.name || *rows != info.rows || *cols != info.cols {
                return Err(Error::Checkpoint(format!(
                    "{}: block {} is {}x{}, expected {name} {rows}x{cols}",
                    path.display(),
                    info.name,
                    info.rows,
                    info.cols
                )));
            }
        }
    }
    for tensor in params.blocks_mut() {
        let mut buf = vec![0u8; tensor.numel() * 8];
        f.read_exact(&mut buf)?;
        for (i, v) in tensor.data_mut().iter_mut().enumerate() {
            *v = f64::from_le_bytes(buf[i * 8..(i + 1) * 8].try_into().expect("8 bytes"));
        }
    }
    let mut rest = Vec::new();
    f.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{}: {} trailing bytes",
            path.display(),
            rest.len()
        )));
    }
    Ok((params, header.model, header.seed))
}
