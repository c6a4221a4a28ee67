//! Training runs and per-epoch moment tracking.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use ulab::data::{batches, load_idx, BatchPlan};
use ulab::moments::{layer_moment_sweep, median, trajectory_stability, MomentRecord, TrajectorySummary};
use ulab::nn::{lr_at_epoch, Checkpoint, Mlp, NormKind, Sgd};
use ulab::Dataset;

use crate::config::ExperimentConfig;
use crate::report::{num, opt_num, seconds, CsvSink};

/// Flattened training and test splits.
pub struct Corpus {
    pub train: Dataset,
    pub test: Dataset,
}

fn limited(ds: Dataset, limit: usize) -> Result<Dataset> {
    Ok(if limit == 0 || limit >= ds.len() { ds } else { ds.take(limit)? })
}

/// Reads the four standard MNIST IDX files from `dir`.
pub fn load_corpus(dir: &Path, train_limit: usize, test_limit: usize) -> Result<Corpus> {
    let file = |name: &str| dir.join(name);
    let load = |images: &str, labels: &str| -> Result<Dataset> {
        load_idx(file(images), file(labels))
            .with_context(|| format!("loading {images} / {labels} from {}", dir.display()))?
            .flatten()
            .map_err(Into::into)
    };
    let train = limited(load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?, train_limit)?;
    let test = limited(load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?, test_limit)?;
    Ok(Corpus { train, test })
}

pub fn corpus_for(cfg: &ExperimentConfig) -> Result<Corpus> {
    let dir = cfg.data.dir.as_deref().context("data_dir is not set")?;
    load_corpus(dir, cfg.data.train_limit, cfg.data.test_limit)
}

/// Every variant draws its weights from the same seeded stream.
pub fn initial_network(cfg: &ExperimentConfig, variant: NormKind) -> Result<Mlp<f64>> {
    Ok(Mlp::new(&cfg.network.spec(variant), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?)
}

/// SHA-256 over the dense weights and biases, in block order.
pub fn dense_weight_checksum(net: &Mlp<f64>) -> String {
    let mut h = Sha256::new();
    for layer in net.blocks.iter().map(|b| &b.dense).chain(std::iter::once(&net.head)) {
        for t in [&layer.weight, &layer.bias] {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn variant_dir(cfg: &ExperimentConfig, variant: NormKind) -> PathBuf {
    cfg.out_dir.join(variant.to_string())
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:03}.ulab"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    /// Per unitization block, `(min, mean, max)` of `α`.
    pub alpha: Vec<(f64, f64, f64)>,
}

pub struct TrainOutcome {
    pub variant: NormKind,
    pub init_checksum: String,
    pub records: Vec<RunRecord>,
    pub net: Mlp<f64>,
    pub outputs: Vec<(PathBuf, usize)>,
}

fn alpha_rows(sink: &mut CsvSink, epoch: usize, net: &Mlp<f64>) -> Result<()> {
    let mut k = 0;
    for (layer, b) in net.blocks.iter().enumerate() {
        if let ulab::nn::Norm::Unitization(_) = b.norm {
            let (lo, mean, hi) = net.alpha_summary()[k];
            sink.row(&[epoch.to_string(), layer.to_string(), num(lo), num(mean), num(hi)])?;
            k += 1;
        }
    }
    Ok(())
}

/// Trains one variant for `cfg.epochs`, writing `run.csv`, `alpha.csv` and
/// (when asked) one checkpoint per epoch including epoch 0. `after_epoch`
/// runs on the trained network at the end of every epoch.
fn train_variant(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    variant: NormKind,
    save_checkpoints: bool,
    mut after_epoch: impl FnMut(usize, &mut Mlp<f64>) -> Result<()>,
) -> Result<TrainOutcome> {
    let dir = variant_dir(cfg, variant);
    let ckpt_dir = dir.join("checkpoints");
    let mut net = initial_network(cfg, variant)?;
    let init_checksum = dense_weight_checksum(&net);
    let save = |net: &Mlp<f64>, epoch: usize| -> Result<()> {
        if save_checkpoints {
            std::fs::create_dir_all(&ckpt_dir)?;
            net.to_checkpoint().save(checkpoint_path(&ckpt_dir, epoch))?;
        }
        Ok(())
    };
    save(&net, 0)?;
    let mut run = CsvSink::create(
        dir.join("run.csv"),
        &["epoch", "train_loss", "test_accuracy", "wall_seconds", "alpha_min", "alpha_mean", "alpha_max"],
    )?;
    let mut alpha = CsvSink::create(dir.join("alpha.csv"), &["epoch", "layer", "min", "mean", "max"])?;
    alpha_rows(&mut alpha, 0, &net)?;
    let mut opt = Sgd::new();
    let plan = BatchPlan { seed: cfg.seed, batch_size: cfg.batch_size.min(corpus.train.len()), drop_last: false };
    let start = Instant::now();
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = lr_at_epoch(&cfg.sgd, epoch);
        let mut total = 0.0;
        let order = batches(corpus.train.len(), &plan, epoch as u64)?;
        for idx in &order {
            let (x, y) = corpus.train.batch(idx)?;
            total += net.train_step(&x, &y, &mut opt, &cfg.sgd, lr)?;
        }
        let train_loss = total / order.len() as f64;
        let test_accuracy = net.accuracy(&corpus.test.images, &corpus.test.labels, 2048)?;
        let summary = net.alpha_summary();
        let overall = (!summary.is_empty()).then(|| {
            let lo = summary.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
            let hi = summary.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
            let mean = summary.iter().map(|s| s.1).sum::<f64>() / summary.len() as f64;
            (lo, mean, hi)
        });
        run.row(&[
            epoch.to_string(),
            num(train_loss),
            num(test_accuracy),
            seconds(cfg, start),
            overall.map_or(String::new(), |a| num(a.0)),
            overall.map_or(String::new(), |a| num(a.1)),
            overall.map_or(String::new(), |a| num(a.2)),
        ])?;
        alpha_rows(&mut alpha, epoch, &net)?;
        log::info!("{variant} epoch {epoch}: loss {train_loss:.4}, test accuracy {test_accuracy:.4}");
        save(&net, epoch)?;
        after_epoch(epoch, &mut net)?;
        records.push(RunRecord { epoch, train_loss, test_accuracy, alpha: summary });
    }
    let outputs = vec![(dir.join("run.csv"), run.finish()?), (dir.join("alpha.csv"), alpha.finish()?)];
    Ok(TrainOutcome { variant, init_checksum, records, net, outputs })
}

/// Trains every configured variant from the shared initialization.
pub fn run_train(cfg: &ExperimentConfig) -> Result<Vec<TrainOutcome>> {
    let corpus = corpus_for(cfg)?;
    run_train_on(cfg, &corpus)
}

pub fn run_train_on(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Vec<TrainOutcome>> {
    cfg.network.variants.iter().map(|&v| train_variant(cfg, corpus, v, true, |_, _| Ok(()))).collect()
}

pub struct MomentOutcome {
    pub train: TrainOutcome,
    pub records: Vec<MomentRecord>,
    pub stability: Vec<TrajectorySummary>,
    pub median_skewness_std: Option<f64>,
    pub median_kurtosis_std: Option<f64>,
}

/// Trains every variant, recording the moments of the tracked block's units
/// over the training inputs after each epoch.
pub fn run_moments(cfg: &ExperimentConfig) -> Result<Vec<MomentOutcome>> {
    let corpus = corpus_for(cfg)?;
    run_moments_on(cfg, &corpus)
}

pub fn run_moments_on(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Vec<MomentOutcome>> {
    let layer = cfg.moment_layer();
    let mut out = Vec::new();
    for &variant in &cfg.network.variants {
        let dir = variant_dir(cfg, variant);
        let mut sink = CsvSink::create(dir.join("moments.csv"), &["epoch", "unit", "mean", "var", "skew", "kurt"])?;
        let mut records = Vec::new();
        let mut train = train_variant(cfg, corpus, variant, false, |epoch, net| {
            let recs = layer_moment_sweep(net, layer, &corpus.train.images, epoch, cfg.moments.point)?;
            for r in &recs {
                sink.row(&[
                    r.epoch.to_string(),
                    r.unit.to_string(),
                    num(r.mean),
                    num(r.var),
                    opt_num(r.skewness),
                    opt_num(r.kurtosis),
                ])?;
            }
            records.extend(recs);
            Ok(())
        })?;
        train.outputs.push((dir.join("moments.csv"), sink.finish()?));
        let stability = if cfg.epochs >= 2 { trajectory_stability(&records)? } else { Vec::new() };
        let mut st = CsvSink::create(dir.join("stability.csv"), &["unit", "mean_std", "var_std", "skew_std", "kurt_std"])?;
        for s in &stability {
            st.row(&[s.unit.to_string(), num(s.mean_std), num(s.var_std), opt_num(s.skewness_std), opt_num(s.kurtosis_std)])?;
        }
        train.outputs.push((dir.join("stability.csv"), st.finish()?));
        let median_skewness_std = median(stability.iter().filter_map(|s| s.skewness_std));
        let median_kurtosis_std = median(stability.iter().filter_map(|s| s.kurtosis_std));
        log::info!(
            "{variant}: median skewness-trajectory std {}, kurtosis-trajectory std {}",
            opt_num(median_skewness_std),
            opt_num(median_kurtosis_std)
        );
        out.push(MomentOutcome { train, records, stability, median_skewness_std, median_kurtosis_std });
    }
    let mut summary = CsvSink::create(
        cfg.out_dir.join("moments_summary.csv"),
        &["variant", "median_skew_std", "median_kurt_std"],
    )?;
    for m in &out {
        summary.row(&[m.train.variant.to_string(), opt_num(m.median_skewness_std), opt_num(m.median_kurtosis_std)])?;
    }
    let path = cfg.out_dir.join("moments_summary.csv");
    let rows = summary.finish()?;
    if let Some(first) = out.first_mut() {
        first.train.outputs.push((path, rows));
    }
    Ok(out)
}

/// Loads the checkpoint of `epoch` written by a training run.
pub fn load_snapshot(cfg: &ExperimentConfig, dir: &Path, variant: NormKind, epoch: usize) -> Result<Mlp<f64>> {
    let path = checkpoint_path(dir, epoch);
    let c = Checkpoint::load(&path).with_context(|| format!("missing or unreadable checkpoint {}", path.display()))?;
    Ok(Mlp::from_checkpoint(&cfg.network.spec(variant), &c)?)
}
