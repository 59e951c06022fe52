//! Mini-batch SGD with momentum and weight decay, evaluation and checkpoints.
//!
//! A batch is split into fixed slices of [`GRAD_SLICE`] examples. Each slice
//! accumulates its own gradient and the slices are summed in order, so the
//! arithmetic is identical however many worker threads run the slices.

mod checkpoint;
mod metrics;

pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, CHECKPOINT_VERSION};
pub use metrics::{ConfusionMatrix, EpochRecord, Metrics, METRICS_HEADER};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stack_images, Chip};
use crate::error::{Error, Result};
use crate::network::{combined_loss, Network};
use crate::pose::{pose_loss, quat_from_azimuth, Quaternion};

/// Examples per gradient slice.
pub const GRAD_SLICE: usize = 10;
/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "CONFOUNDNET_THREADS";
pub const DEFAULT_EPOCHS: usize = 10;
/// Learning rate of the desk-scale recipe; see [`HyperParams::desk`].
pub const DESK_LEARNING_RATE: f64 = 1e-4;
const SHUFFLE_STREAM: u64 = 2;
const EVAL_BATCH: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    /// Weight of the pose term in the combined objective.
    pub lambda: f64,
    pub epochs: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            batch_size: 100,
            momentum: 0.9,
            weight_decay: 0.0005,
            learning_rate: 0.001,
            lambda: 1.0,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
        }
    }
}

impl HyperParams {
    /// The reference values with a tenfold smaller learning rate. The
    /// objective sums over the batch, so each step is 100× a batch-mean
    /// step; at 0.001 the desk network's ReLUs die within a few epochs.
    pub fn desk() -> Self {
        HyperParams {
            learning_rate: DESK_LEARNING_RATE,
            ..HyperParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be nonnegative");
        }
        Ok(())
    }
}

/// Number of worker threads from [`THREADS_ENV`]; 1 when unset or invalid.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// `v ← momentum·v − lr·(g + decay·w)`, `w ← w + v` for every weight and
/// bias, using the gradients currently held by `net`.
pub fn sgd_step(net: &mut Network, hp: &HyperParams, step: u64) -> Result<()> {
    for (i, layer) in net.layers().enumerate() {
        if !layer.weights.grad.iter().chain(&layer.bias.grad).all(|g| g.is_finite()) {
            return Err(Error::Divergence {
                step,
                reason: format!("non-finite gradient in layer {i}"),
            });
        }
    }
    for layer in net.layers_mut() {
        let params = [
            (&mut layer.weights.data, &layer.weights.grad, &mut layer.weight_velocity),
            (&mut layer.bias.data, &layer.bias.grad, &mut layer.bias_velocity),
        ];
        for (w, g, v) in params {
            for ((w, g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = hp.momentum * *v - hp.learning_rate * (g + hp.weight_decay * *w);
                *w += *v;
            }
        }
    }
    for (i, layer) in net.layers().enumerate() {
        if !layer.weights.data.iter().chain(&layer.bias.data).all(|w| w.is_finite()) {
            return Err(Error::Divergence {
                step,
                reason: format!("non-finite parameter in layer {i} after update"),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// Mean pose distance in radians, when the network has a pose head and
    /// every chip carries an azimuth.
    pub mean_pose_err: Option<f64>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn pose_truths(chips: &[&Chip]) -> Option<Vec<Quaternion>> {
    chips
        .iter()
        .map(|c| c.azimuth.map(quat_from_azimuth))
        .collect()
}

/// Accuracy and confusion matrix from the argmax of the class logits. Pose
/// labels are only read to report the pose error.
pub fn evaluate(net: &Network, chips: &[Chip]) -> Result<Evaluation> {
    if chips.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let classes = net.config().classes;
    let mut confusion = ConfusionMatrix::new(classes);
    let mut pose_sum = 0.0;
    let mut pose_ok = net.has_pose_head();
    for batch in chips.chunks(EVAL_BATCH) {
        let refs: Vec<&Chip> = batch.iter().collect();
        let out = net.forward(&stack_images(&refs)?)?;
        for (chip, row) in batch.iter().zip(out.logits.data.chunks(classes)) {
            if chip.class_label >= classes {
                return Err(Error::Label {
                    label: chip.class_label,
                    classes,
                });
            }
            confusion.record(chip.class_label, argmax(row));
        }
        if pose_ok {
            match (pose_truths(&refs), &out.pose_raw) {
                (Some(t), Some(raw)) => pose_sum += pose_loss(raw, &t)?.loss,
                _ => pose_ok = false,
            }
        }
    }
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        mean_pose_err: pose_ok.then(|| pose_sum / chips.len() as f64),
        confusion,
    })
}

#[derive(Debug, Default, Clone, Copy)]
struct SliceStats {
    total: f64,
    class: f64,
    pose: f64,
    correct: usize,
}

fn slice_gradient(net: &Network, chips: &[&Chip], lambda: f64, use_pose: bool) -> Result<(Network, SliceStats)> {
    let mut worker = net.worker();
    let out = worker.forward(&stack_images(chips)?)?;
    let labels: Vec<usize> = chips.iter().map(|c| c.class_label).collect();
    let truths = if use_pose { pose_truths(chips) } else { None };
    let pose_raw = if use_pose { out.pose_raw.as_ref() } else { None };
    let loss = combined_loss(&out.logits, pose_raw, &labels, truths.as_deref(), lambda)?;
    worker.backward(&out.cache, &loss.grads)?;
    let classes = net.config().classes;
    let correct = out
        .logits
        .data
        .chunks(classes)
        .zip(&labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok((
        worker,
        SliceStats {
            total: loss.total,
            class: loss.class,
            pose: loss.pose.unwrap_or(0.0),
            correct,
        },
    ))
}

pub struct TrainOutcome {
    pub net: Network,
    pub metrics: Metrics,
    pub steps: u64,
}

/// [`train_with`] without a progress callback.
pub fn train(net: Network, train_set: &[Chip], eval_set: Option<&[Chip]>, hp: &HyperParams) -> Result<TrainOutcome> {
    train_with(net, train_set, eval_set, hp, |_| {})
}

/// Optimizes the combined objective over `train_set` for `hp.epochs`
/// epochs, evaluating on `eval_set` after each epoch. The final short batch
/// of an epoch is kept.
pub fn train_with(
    mut net: Network,
    train_set: &[Chip],
    eval_set: Option<&[Chip]>,
    hp: &HyperParams,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    hp.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let all_posed = train_set.iter().all(|c| c.azimuth.is_some());
    if net.has_pose_head() && hp.lambda > 0.0 && !all_posed {
        return Err(Error::Data(
            "pose-aware training with lambda > 0 needs an azimuth on every training chip".into(),
        ));
    }
    let use_pose = net.has_pose_head() && all_posed;

    let threads = worker_threads();
    let pool = if threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut metrics = Metrics::default();
    let mut step = 0u64;
    let n = train_set.len();

    for epoch in 1..=hp.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut sums = SliceStats::default();
        for batch in order.chunks(hp.batch_size) {
            let chips: Vec<&Chip> = batch.iter().map(|&i| &train_set[i]).collect();
            let slices: Vec<&[&Chip]> = chips.chunks(GRAD_SLICE).collect();
            let run = |s: &&[&Chip]| slice_gradient(&net, s, hp.lambda, use_pose);
            let results: Vec<Result<(Network, SliceStats)>> = match &pool {
                Some(p) => p.install(|| slices.par_iter().map(run).collect()),
                None => slices.iter().map(run).collect(),
            };
            net.zero_grad();
            for r in results {
                let (worker, s) = r.map_err(|e| match e {
                    Error::NonFinite(what) => Error::Divergence {
                        step,
                        reason: format!("non-finite value in {what}"),
                    },
                    other => other,
                })?;
                net.accumulate_grad(&worker);
                sums.total += s.total;
                sums.class += s.class;
                sums.pose += s.pose;
                sums.correct += s.correct;
            }
            sgd_step(&mut net, hp, step)?;
            step += 1;
        }
        let eval = eval_set.map(|e| evaluate(&net, e)).transpose()?;
        let record = EpochRecord {
            epoch,
            combined_loss: sums.total / n as f64,
            class_loss: sums.class / n as f64,
            pose_loss: use_pose.then(|| sums.pose / n as f64),
            train_acc: sums.correct as f64 / n as f64 * 100.0,
            test_acc: eval.as_ref().map(|e| e.accuracy),
            mean_pose_err_rad: eval.as_ref().and_then(|e| e.mean_pose_err),
        };
        on_epoch(&record);
        metrics.epochs.push(record);
        if epoch == hp.epochs {
            metrics.confusion = eval.map(|e| e.confusion);
        }
    }
    net.zero_grad();
    Ok(TrainOutcome {
        net,
        metrics,
        steps: step,
    })
}
