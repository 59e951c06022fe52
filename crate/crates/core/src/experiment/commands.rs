use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use super::{prepare_data, DataSource, RunConfig};
use crate::data::{export_dataset, stack_images, synth_generate, Chip};
use crate::error::{Error, Result};
use crate::gradcheck::{run_suite, GradcheckReport};
use crate::network::{Network, PoseMode};
use crate::trainer::{checkpoint_load, checkpoint_save, evaluate, train_with, ConfusionMatrix, Metrics};

pub const CHECKPOINT_FILE: &str = "checkpoint.cfnt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const AB_FILE: &str = "ab.csv";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn out_dir(cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf> {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Error::Config("no output directory (use --out or out_dir)".into()))
}

#[derive(Debug, Clone)]
pub struct GenReport {
    pub dir: PathBuf,
    pub class_names: Vec<String>,
    /// `[train, test]` per class.
    pub counts: Vec<[usize; 2]>,
}

impl fmt::Display for GenReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "wrote dataset to {}", self.dir.display())?;
        writeln!(f, "{:<12} {:>6} {:>6}", "class", "train", "test")?;
        for (name, [tr, te]) in self.class_names.iter().zip(&self.counts) {
            writeln!(f, "{name:<12} {tr:>6} {te:>6}")?;
        }
        Ok(())
    }
}

/// Generate the configured synthetic dataset and export it. A nonempty
/// output directory is refused unless `force` is set.
pub fn cmd_gen_data(cfg: &RunConfig, out: Option<&Path>, force: bool) -> Result<GenReport> {
    let DataSource::Synthetic(synth) = &cfg.data else {
        return Err(Error::Config("gen-data needs a synthetic data source".into()));
    };
    let dir = out_dir(cfg, out)?;
    if let Ok(mut entries) = fs::read_dir(&dir) {
        if entries.next().is_some() && !force {
            return Err(Error::Config(format!(
                "{} exists and is not empty (use --force)",
                dir.display()
            )));
        }
    }
    let dataset = synth_generate(synth)?;
    export_dataset(&dataset, &dir)?;
    cfg.write_resolved(&dir)?;
    Ok(GenReport {
        counts: dataset.counts(),
        class_names: dataset.class_names,
        dir,
    })
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub dir: PathBuf,
    pub param_count: usize,
    pub pose_head_params: usize,
    pub metrics: Metrics,
}

impl fmt::Display for TrainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "parameters: {} (pose head {})",
            self.param_count, self.pose_head_params
        )?;
        if let Some(last) = self.metrics.epochs.last() {
            write!(f, "final epoch {}: loss {:.4}, train acc {:.2}%", last.epoch, last.combined_loss, last.train_acc)?;
            if let Some(t) = last.test_acc {
                write!(f, ", test acc {t:.2}%")?;
            }
            if let Some(p) = last.mean_pose_err_rad {
                write!(f, ", pose err {p:.4} rad")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "outputs in {}", self.dir.display())
    }
}

fn print_epoch(r: &crate::trainer::EpochRecord) {
    let mut line = format!(
        "epoch {:>3}  loss {:.4}  class {:.4}",
        r.epoch, r.combined_loss, r.class_loss
    );
    if let Some(p) = r.pose_loss {
        let _ = write!(line, "  pose {p:.4}");
    }
    let _ = write!(line, "  train {:.2}%", r.train_acc);
    if let Some(t) = r.test_acc {
        let _ = write!(line, "  test {t:.2}%");
    }
    if let Some(p) = r.mean_pose_err_rad {
        let _ = write!(line, "  pose_err {p:.4}");
    }
    eprintln!("{line}");
}

/// Train one network per the configuration and write the checkpoint,
/// metrics, confusion matrix and resolved configuration.
pub fn cmd_train(cfg: &RunConfig, out: Option<&Path>, verbose: bool) -> Result<TrainReport> {
    let dir = out_dir(cfg, out)?;
    let data = prepare_data(cfg)?;
    let net = Network::build(cfg.network.clone(), cfg.hyper.seed)?;
    let outcome = train_with(net, &data.train, Some(&data.test), &cfg.hyper, |r| {
        if verbose {
            print_epoch(r)
        }
    })?;
    ensure_dir(&dir)?;
    checkpoint_save(&outcome.net, &cfg.hyper, &outcome.metrics, &dir.join(CHECKPOINT_FILE))?;
    write(&dir.join(METRICS_FILE), outcome.metrics.to_csv())?;
    let confusion = outcome
        .metrics
        .confusion
        .clone()
        .unwrap_or_else(|| ConfusionMatrix::new(cfg.network.classes));
    write(&dir.join(CONFUSION_FILE), confusion.to_csv(&data.class_names))?;
    cfg.write_resolved(&dir)?;
    Ok(TrainReport {
        dir,
        param_count: outcome.net.param_count(),
        pose_head_params: outcome.net.pose_head_param_count(),
        metrics: outcome.metrics,
    })
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    pub stripped: bool,
    pub confusion: ConfusionMatrix,
    pub class_names: Vec<String>,
    pub mean_pose_err: Option<f64>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "accuracy: {}%{}",
            self.accuracy,
            if self.stripped { " (pose head stripped)" } else { "" }
        )?;
        for (name, row) in self.class_names.iter().zip(&self.confusion.counts) {
            writeln!(f, "  {name}: {} test chips", row.iter().sum::<u64>())?;
        }
        if let Some(p) = self.mean_pose_err {
            writeln!(f, "mean pose error: {p} rad")?;
        }
        Ok(())
    }
}

/// Evaluate a checkpoint on the test split of `cfg`'s data source. With
/// `strip_pose` the pose head is removed first and the stripped network's
/// logits are checked bitwise against the original on a probe batch.
pub fn cmd_eval(checkpoint: &Path, cfg: &RunConfig, strip_pose: bool, out: Option<&Path>) -> Result<EvalReport> {
    let ckpt = checkpoint_load(checkpoint)?;
    let mut run = cfg.clone();
    run.network = ckpt.net.config().clone();
    run.flip_augment = false;
    let data = prepare_data(&run)?;
    let mut net = ckpt.net;
    if strip_pose {
        let stripped = net.strip_pose_head()?;
        let probe: Vec<&Chip> = data.test.iter().chain(&data.train).take(50).collect();
        let batch = stack_images(&probe)?;
        let a = net.logits(&batch)?;
        let b = stripped.logits(&batch)?;
        if a.data.iter().zip(&b.data).any(|(x, y)| x.to_bits() != y.to_bits()) {
            return Err(Error::Verification(
                "stripping the pose head changed the class logits".into(),
            ));
        }
        net = stripped;
    }
    let eval = evaluate(&net, &data.test)?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write(&dir.join(CONFUSION_FILE), eval.confusion.to_csv(&data.class_names))?;
    }
    Ok(EvalReport {
        accuracy: eval.accuracy,
        stripped: strip_pose,
        confusion: eval.confusion,
        class_names: data.class_names,
        mean_pose_err: eval.mean_pose_err,
    })
}

/// Finite-difference verification of every kernel and of the combined
/// objective. The caller decides how to treat a failing report.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<GradcheckReport> {
    run_suite(&cfg.gradcheck)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbRow {
    pub seed: u64,
    pub baseline_acc: f64,
    pub pose_acc: f64,
    pub pose_err: Option<f64>,
}

impl AbRow {
    pub fn delta(&self) -> f64 {
        self.pose_acc - self.baseline_acc
    }
}

#[derive(Debug, Clone)]
pub struct AbReport {
    pub rows: Vec<AbRow>,
    pub baseline_metrics: Vec<Metrics>,
    pub pose_metrics: Vec<Metrics>,
    pub warning: Option<String>,
}

impl AbReport {
    fn mean(&self, f: impl Fn(&AbRow) -> f64) -> f64 {
        self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_baseline(&self) -> f64 {
        self.mean(|r| r.baseline_acc)
    }

    pub fn mean_pose(&self) -> f64 {
        self.mean(|r| r.pose_acc)
    }

    pub fn mean_delta(&self) -> f64 {
        self.mean(AbRow::delta)
    }

    pub fn mean_pose_err(&self) -> Option<f64> {
        let errs: Option<Vec<f64>> = self.rows.iter().map(|r| r.pose_err).collect();
        errs.map(|e| e.iter().sum::<f64>() / e.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,baseline_acc,pose_acc,delta,pose_err_rad\n");
        for r in &self.rows {
            let err = r.pose_err.map(|e| e.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{err}", r.seed, r.baseline_acc, r.pose_acc, r.delta()).unwrap();
        }
        let err = self.mean_pose_err().map(|e| e.to_string()).unwrap_or_default();
        writeln!(
            out,
            "mean,{},{},{},{err}",
            self.mean_baseline(),
            self.mean_pose(),
            self.mean_delta()
        )
        .unwrap();
        out
    }
}

impl fmt::Display for AbReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(w) = &self.warning {
            writeln!(f, "warning: {w}")?;
        }
        writeln!(f, "{:>6} {:>10} {:>10} {:>8} {:>10}", "seed", "baseline", "pose", "delta", "pose_err")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>6} {:>9.2}% {:>9.2}% {:>+8.2} {:>10}",
                r.seed,
                r.baseline_acc,
                r.pose_acc,
                r.delta(),
                r.pose_err.map_or(String::from("-"), |e| format!("{e:.4}"))
            )?;
        }
        writeln!(
            f,
            "{:>6} {:>9.2}% {:>9.2}% {:>+8.2} {:>10}",
            "mean",
            self.mean_baseline(),
            self.mean_pose(),
            self.mean_delta(),
            self.mean_pose_err().map_or(String::from("-"), |e| format!("{e:.4}"))
        )
    }
}

/// Matched-pair comparison: for each seed, a baseline and a pose-aware
/// network start from identical shared parameters, see identical batches,
/// and differ only in the pose term.
pub fn cmd_ab(cfg: &RunConfig, out: Option<&Path>, verbose: bool) -> Result<AbReport> {
    if cfg.ab_seeds.is_empty() {
        return Err(Error::Config("ab_seeds is empty".into()));
    }
    let warning = (cfg.ab_seeds.len() < 2)
        .then(|| format!("only {} seed; a comparison needs at least 2", cfg.ab_seeds.len()));
    let data = prepare_data(cfg)?;
    let mut pose_cfg = cfg.network.clone();
    if pose_cfg.pose_mode == PoseMode::None {
        pose_cfg.pose_mode = PoseMode::Azimuth;
    }
    let base_cfg = crate::network::NetworkConfig {
        pose_mode: PoseMode::None,
        pose_tap: None,
        ..pose_cfg.clone()
    };
    let dir = out.map(Path::to_path_buf).or_else(|| cfg.out_dir.clone());
    let mut rows = Vec::new();
    let (mut base_metrics, mut pose_metrics) = (Vec::new(), Vec::new());
    for &seed in &cfg.ab_seeds {
        let baseline = Network::build(base_cfg.clone(), seed)?;
        let pose = Network::build(pose_cfg.clone(), seed)?;
        let same = baseline.shared_layers().zip(pose.shared_layers()).all(|(a, b)| {
            a.weights.data.iter().chain(&a.bias.data).map(|v| v.to_bits())
                .eq(b.weights.data.iter().chain(&b.bias.data).map(|v| v.to_bits()))
        });
        if !same {
            return Err(Error::Verification(format!(
                "seed {seed}: shared parameters differ between baseline and pose-aware networks"
            )));
        }
        let hp = crate::trainer::HyperParams {
            seed,
            ..cfg.hyper.clone()
        };
        let report = |tag: &'static str| {
            move |r: &crate::trainer::EpochRecord| {
                if verbose {
                    eprint!("seed {seed} {tag:<8} ");
                    print_epoch(r);
                }
            }
        };
        let b = train_with(baseline, &data.train, Some(&data.test), &hp, report("baseline"))?;
        let p = train_with(pose, &data.train, Some(&data.test), &hp, report("pose"))?;
        let eb = evaluate(&b.net, &data.test)?;
        let ep = evaluate(&p.net, &data.test)?;
        rows.push(AbRow {
            seed,
            baseline_acc: eb.accuracy,
            pose_acc: ep.accuracy,
            pose_err: ep.mean_pose_err,
        });
        if let Some(dir) = &dir {
            ensure_dir(dir)?;
            write(&dir.join(format!("seed{seed}_baseline_{METRICS_FILE}")), b.metrics.to_csv())?;
            write(&dir.join(format!("seed{seed}_pose_{METRICS_FILE}")), p.metrics.to_csv())?;
        }
        base_metrics.push(b.metrics);
        pose_metrics.push(p.metrics);
    }
    let report = AbReport {
        rows,
        baseline_metrics: base_metrics,
        pose_metrics,
        warning,
    };
    if let Some(dir) = &dir {
        write(&dir.join(AB_FILE), report.to_csv())?;
        cfg.write_resolved(dir)?;
    }
    Ok(report)
}
