//! Critic-based EM-distance tracking between snapshots.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{ensure, Result};
use ulab::data::synth_gaussian_pair;
use ulab::estimator::{average_deep_layer_distance, estimate_em, train_critic_observed, EmEstimate, MlpPrefix};
use ulab::transport::em_exact_1d;
use ulab::{SampleSet, Tensor};

use crate::config::{EmSource, ExperimentConfig};
use crate::report::{num, seconds, CsvSink};
use crate::train::{corpus_for, load_snapshot, variant_dir};

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mean) * (b - mean)).sum();
    let sx: f64 = rx.iter().map(|a| (a - mean).powi(2)).sum();
    let sy: f64 = ry.iter().map(|b| (b - mean).powi(2)).sum();
    (sx > 0.0 && sy > 0.0).then(|| cov / (sx * sy).sqrt())
}

/// One critic evaluation plus the clipping audit of its training.
#[derive(Clone, Debug)]
pub struct CriticRun {
    pub estimate: EmEstimate,
    /// Steps after which some parameter left `[−c, c]`.
    pub clip_violations: usize,
    pub lipschitz_bound: f64,
}

fn critic_run(
    cfg: &ExperimentConfig,
    f_old: &dyn ulab::estimator::LocalNetwork<f64>,
    f_new: &dyn ulab::estimator::LocalNetwork<f64>,
    train: &Tensor,
    test: &Tensor,
) -> Result<CriticRun> {
    let clip = cfg.emdist.critic.clip;
    let mut clip_violations = 0;
    let critic = train_critic_observed(f_old, f_new, train, &cfg.emdist.critic, |_, c| {
        if c.max_abs_weight() > clip {
            clip_violations += 1;
        }
    })?;
    let estimate = estimate_em(&critic, f_old, f_new, test)?;
    Ok(CriticRun { estimate, clip_violations, lipschitz_bound: critic.lipschitz_upper_bound() })
}

#[derive(Clone, Debug)]
pub struct GridPoint {
    pub delta: f64,
    pub run: CriticRun,
    pub exact: f64,
}

pub struct GridOutcome {
    pub points: Vec<GridPoint>,
    pub spearman: Option<f64>,
    pub outputs: Vec<(PathBuf, usize)>,
}

/// 1-D standard normal inputs against copies shifted by each grid value.
pub fn run_shift_grid(cfg: &ExperimentConfig) -> Result<GridOutcome> {
    let (train, test) = synth_gaussian_pair::<f64>(cfg.emdist.grid_samples, 1, 0.0, 1.0, cfg.seed)?;
    let identity = |x: &Tensor| Ok(x.clone());
    let path = cfg.out_dir.join("emdist_grid.csv");
    let mut sink = CsvSink::create(
        &path,
        &[
            "delta",
            "estimate",
            "std_error",
            "exact",
            "lipschitz_bound",
            "within_lipschitz_band",
            "clip_violations",
            "runtime_seconds",
        ],
    )?;
    let mut points = Vec::new();
    for &delta in &cfg.emdist.shift_grid {
        let start = Instant::now();
        let shifted = move |x: &Tensor| Ok(x.map(|v| v + delta));
        let run = critic_run(cfg, &identity, &shifted, train.samples(), test.samples())?;
        let exact = em_exact_1d(&test, &SampleSet::new(test.samples().map(|v| v + delta), 1)?)?;
        let e = &run.estimate;
        let band = e.value <= run.lipschitz_bound * exact + 3.0 * e.std_error;
        sink.row(&[
            num(delta),
            num(e.value),
            num(e.std_error),
            num(exact),
            num(run.lipschitz_bound),
            band.to_string(),
            run.clip_violations.to_string(),
            seconds(cfg, start),
        ])?;
        log::info!("shift {delta}: estimate {:.4e} ± {:.1e}, exact {exact:.4}", e.value, e.std_error);
        points.push(GridPoint { delta, run, exact });
    }
    let est: Vec<f64> = points.iter().map(|p| p.run.estimate.value).collect();
    let exact: Vec<f64> = points.iter().map(|p| p.exact).collect();
    let rho = spearman(&est, &exact);
    log::info!("Spearman rank correlation with the exact distance: {}", rho.map_or("undefined".into(), num));
    Ok(GridOutcome { points, spearman: rho, outputs: vec![(path, sink.finish()?)] })
}

#[derive(Clone, Debug)]
pub struct LayerEstimate {
    pub epoch: usize,
    pub layer: usize,
    pub run: CriticRun,
}

/// Per variant, estimates between the checkpoints of consecutive epochs.
pub fn run_checkpoint_pairs(cfg: &ExperimentConfig) -> Result<(Vec<LayerEstimate>, Vec<(PathBuf, usize)>)> {
    let corpus = corpus_for(cfg)?;
    let take = |x: &Tensor, n: usize| -> Result<Tensor> {
        let rows = x.shape()[0];
        let n = if n == 0 { rows } else { n.min(rows) };
        Ok(x.select_rows(&(0..n).collect::<Vec<_>>())?)
    };
    let train = take(&corpus.train.images, cfg.emdist.train_samples)?;
    let test = take(&corpus.test.images, cfg.emdist.test_samples)?;
    let layers = cfg.emdist_layers();
    ensure!(cfg.epochs > 0, "emdist needs at least one epoch of checkpoints");
    let mut all = Vec::new();
    let mut outputs = Vec::new();
    for &variant in &cfg.network.variants {
        let root = cfg.emdist.checkpoint_dir.clone().unwrap_or_else(|| cfg.out_dir.clone());
        let ckpts = root.join(variant.to_string()).join("checkpoints");
        let dir = variant_dir(cfg, variant);
        let mut sink =
            CsvSink::create(dir.join("emdist.csv"), &["epoch", "layer", "estimate", "std_error", "runtime_seconds"])?;
        let mut mean_sink = CsvSink::create(dir.join("emdist_mean.csv"), &["epoch", "mean_estimate"])?;
        let mut previous = load_snapshot(cfg, &ckpts, variant, 0)?;
        for epoch in 1..=cfg.epochs {
            let current = load_snapshot(cfg, &ckpts, variant, epoch)?;
            let mut values = Vec::new();
            for &layer in &layers {
                let start = Instant::now();
                let f_old = MlpPrefix { net: previous.clone(), layer };
                let f_new = MlpPrefix { net: current.clone(), layer };
                let mut run = critic_run(cfg, &f_old, &f_new, &train, &test)?;
                run.estimate = run.estimate.tagged(layer, (epoch - 1, epoch));
                ensure!(run.clip_violations == 0, "critic left the clipping box at epoch {epoch}, layer {layer}");
                sink.row(&[
                    epoch.to_string(),
                    layer.to_string(),
                    num(run.estimate.value),
                    num(run.estimate.std_error),
                    seconds(cfg, start),
                ])?;
                log::info!("{variant} epoch {epoch} layer {layer}: estimate {:.4e}", run.estimate.value);
                values.push(run.estimate.value);
                all.push(LayerEstimate { epoch, layer, run });
            }
            mean_sink.row(&[epoch.to_string(), num(average_deep_layer_distance(&values)?)])?;
            previous = current;
        }
        outputs.push((dir.join("emdist.csv"), sink.finish()?));
        outputs.push((dir.join("emdist_mean.csv"), mean_sink.finish()?));
    }
    Ok((all, outputs))
}

pub fn run_emdist(cfg: &ExperimentConfig) -> Result<Vec<(PathBuf, usize)>> {
    match cfg.emdist.source {
        EmSource::ShiftGrid => Ok(run_shift_grid(cfg)?.outputs),
        EmSource::Checkpoints => Ok(run_checkpoint_pairs(cfg)?.1),
    }
}
