use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{clip_global_norm, AdamW, AdamWConfig};
use super::schedule::Plateau;
use crate::dataset::{ChannelStats, Montage, Segment};
use crate::dsp::{BandSet, PsdConfig, Welch};
use crate::error::{invalid, FavcError, Result};
use crate::model::{update_running_stats, Checkpoint, Mode, Network};
use crate::objective::{lsd, nmae, LossWeights, Objective};
use crate::tensor::{NodeId, ParameterSet, Tape, Tensor};
use crate::util::rng_from;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub clip_norm: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    /// Relative improvement a validation loss needs to count as better.
    pub improvement_threshold: f64,
    pub max_epochs: usize,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub loss: LossWeights,
    pub psd: PsdConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            optimizer: AdamWConfig::default(),
            clip_norm: 1.0,
            plateau_factor: 0.5,
            plateau_patience: 5,
            early_stop_patience: 15,
            improvement_threshold: 1e-6,
            max_epochs: 100,
            max_steps: None,
            seed: 0,
            loss: LossWeights::default(),
            psd: PsdConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Spectral settings matching the toy synthetic data (128 Hz, 2 s windows).
    pub fn toy_psd() -> PsdConfig {
        PsdConfig {
            fs: 128.0,
            nwin: 128,
            hop: 64,
            f_lo: 0.5,
            f_hi: 45.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        let positive = [o.lr, self.clip_norm, self.plateau_factor, o.eps];
        if self.batch_size == 0
            || self.max_epochs == 0
            || self.plateau_patience == 0
            || self.early_stop_patience == 0
            || positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || !(o.weight_decay >= 0.0)
            || !(0.0..1.0).contains(&o.beta1)
            || !(0.0..1.0).contains(&o.beta2)
            || !(self.improvement_threshold >= 0.0)
            || self.max_steps == Some(0)
        {
            return Err(invalid(format!("invalid training configuration: {self:?}")));
        }
        self.loss.validate()?;
        self.psd.validate()
    }
}

/// Normalized sources `[N, 4, T]` and raw targets `[N, 13, T]`.
pub fn batch_tensors(segments: &[&Segment], stats: &ChannelStats) -> Result<(Tensor, Tensor)> {
    let first = segments.first().ok_or_else(|| invalid("empty batch"))?;
    let t = first.len();
    let n = segments.len();
    let mut xs = Vec::with_capacity(n * 4 * t);
    let mut ys = Vec::with_capacity(n * 13 * t);
    for seg in segments {
        if seg.len() != t {
            return Err(invalid(format!("segments in one batch differ in length: {} vs {t}", seg.len())));
        }
        let x = stats.normalize_sources(&seg.sources_f64())?;
        xs.extend(x.iter());
        let y = seg
            .targets_f64()
            .ok_or_else(|| invalid(format!("segment of `{}` has no targets", seg.subject)))?;
        ys.extend(y.iter());
    }
    let rows = first.sources.nrows();
    let trows = ys.len() / (n * t);
    Ok((Tensor::new(vec![n, rows, t], xs)?, Tensor::new(vec![n, trows, t], ys)?))
}

/// Maps a normalized `[N, 13, T]` output back to the raw scale on the tape.
pub fn to_raw(tape: &mut Tape, out: NodeId, stats: &ChannelStats) -> Result<NodeId> {
    tape.channel_affine(out, stats.target_std(), stats.target_mean())
}

/// Raw-scale predictions `13 x T` for each segment (eval mode).
pub fn predict_raw(net: &Network, params: &ParameterSet, stats: &ChannelStats, segments: &[&Segment]) -> Result<Vec<Array2<f64>>> {
    let mut out = Vec::with_capacity(segments.len());
    for seg in segments {
        let x = stats.normalize_sources(&seg.sources_f64())?;
        let t = x.ncols();
        let x = Tensor::new(vec![1, x.nrows(), t], x.iter().copied().collect())?;
        let y = net.predict(params, &x)?;
        let rows = y.shape()[1];
        let y = Array2::from_shape_vec((rows, t), y.into_data()).map_err(|e| invalid(e.to_string()))?;
        out.push(stats.denormalize_targets(&y)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub total: f64,
    pub wave: f64,
    pub psd: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ValReport {
    pub total: f64,
    pub wave: f64,
    pub psd: Option<f64>,
    pub nmae: f64,
    pub lsd: f64,
}

/// One row of the training log. `epoch = 0` is the pre-training validation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub train_total: Option<f64>,
    pub train_wave: Option<f64>,
    pub train_psd: Option<f64>,
    pub grad_norm: Option<f64>,
    pub val_total: f64,
    pub val_wave: f64,
    pub val_psd: Option<f64>,
    pub val_nmae: f64,
    pub val_lsd: f64,
}

/// Model, optimizer and objective bound together.
pub struct Trainer {
    pub net: Network,
    pub params: ParameterSet,
    pub opt: AdamW,
    pub objective: Objective,
    pub stats: ChannelStats,
    pub cfg: TrainConfig,
    welch: Welch,
    steps: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl Trainer {
    pub fn new(net: Network, stats: ChannelStats, cfg: TrainConfig) -> Result<Self> {
        let params = net.init(cfg.seed)?;
        Self::with_params(net, params, stats, cfg)
    }

    pub fn with_params(net: Network, params: ParameterSet, stats: ChannelStats, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let objective = Objective::new(
            cfg.loss.clone(),
            cfg.psd.clone(),
            &BandSet::standard(),
            stats.target_std().to_vec(),
        )?;
        let welch = Welch::new(cfg.psd.clone())?;
        let opt = AdamW::new(cfg.optimizer.clone(), &params);
        Ok(Self {
            net,
            params,
            opt,
            objective,
            stats,
            cfg,
            welch,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Forward, loss, backward, clip, AdamW update and running-stat update on one batch.
    pub fn step(&mut self, batch: &[&Segment]) -> Result<StepReport> {
        for s in batch {
            let bad = s.sources.iter().chain(s.targets.iter().flatten()).any(|v| !v.is_finite());
            if bad {
                return Err(FavcError::NonFinite(format!(
                    "input segment of subject {} at step {}",
                    s.subject,
                    self.steps + 1
                )));
            }
        }
        let (x, y) = batch_tensors(batch, &self.stats)?;
        let mut tape = Tape::new();
        let xi = tape.constant(x)?;
        let yi = tape.constant(y)?;
        let f = self.net.forward(&mut tape, &self.params, xi, Mode::Train)?;
        let pred = to_raw(&mut tape, f.output, &self.stats)?;
        let loss = self.objective.total(&mut tape, pred, yi)?;
        let total = tape.value(loss.total).item().unwrap_or(f64::NAN);
        if !total.is_finite() {
            let subjects: Vec<&str> = batch.iter().map(|s| s.subject.as_str()).collect();
            return Err(FavcError::NonFinite(format!(
                "training loss {total} at step {} (lr {}, batch subjects {subjects:?})",
                self.steps + 1,
                self.opt.lr()
            )));
        }
        let wave = tape.value(loss.wave).item().unwrap_or(f64::NAN);
        let psd = loss.psd.map(|p| tape.value(p).item().unwrap_or(f64::NAN));
        let grads = tape.backward(loss.total)?;
        let mut g = grads.params(&self.params);
        let grad_norm = clip_global_norm(&mut g, self.cfg.clip_norm);
        if !grad_norm.is_finite() {
            return Err(FavcError::NonFinite(format!("gradient norm at step {}", self.steps + 1)));
        }
        self.opt.update(&mut self.params, &g)?;
        update_running_stats(&mut self.params, &tape, &f.bn_updates, self.net.config().bn_momentum)?;
        self.steps += 1;
        Ok(StepReport {
            total,
            wave,
            psd,
            grad_norm,
        })
    }

    /// Eval-mode loss and metrics; never builds gradients.
    pub fn evaluate(&mut self, segments: &[&Segment]) -> Result<ValReport> {
        if segments.is_empty() {
            return Err(invalid("validation set is empty"));
        }
        let mut totals = Vec::new();
        let mut waves = Vec::new();
        let mut psds = Vec::new();
        let mut weights = Vec::new();
        for chunk in segments.chunks(self.cfg.batch_size) {
            let (x, y) = batch_tensors(chunk, &self.stats)?;
            let mut tape = Tape::new();
            let xi = tape.constant(x)?;
            let yi = tape.constant(y)?;
            let f = self.net.forward(&mut tape, &self.params, xi, Mode::Eval)?;
            let pred = to_raw(&mut tape, f.output, &self.stats)?;
            let loss = self.objective.total(&mut tape, pred, yi)?;
            totals.push(tape.value(loss.total).item().unwrap_or(f64::NAN));
            waves.push(tape.value(loss.wave).item().unwrap_or(f64::NAN));
            if let Some(p) = loss.psd {
                psds.push(tape.value(p).item().unwrap_or(f64::NAN));
            }
            weights.push(chunk.len() as f64);
        }
        let n: f64 = weights.iter().sum();
        let wmean = |v: &[f64]| v.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>() / n;

        let preds = predict_raw(&self.net, &self.params, &self.stats, segments)?;
        let mut nm = Vec::with_capacity(segments.len());
        let mut ls = Vec::with_capacity(segments.len());
        for (seg, p) in segments.iter().zip(&preds) {
            let y = seg.targets_f64().ok_or_else(|| invalid("validation segment without targets"))?;
            nm.push(mean(&nmae(p.view(), y.view(), self.stats.target_std())?));
            let sp = self.welch.psd_rows(p.view())?;
            let st = self.welch.psd_rows(y.view())?;
            ls.push(lsd(sp.power.view(), st.power.view())?);
        }
        Ok(ValReport {
            total: wmean(&totals),
            wave: wmean(&waves),
            psd: (!psds.is_empty()).then(|| wmean(&psds)),
            nmae: mean(&nm),
            lsd: mean(&ls),
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub steps: usize,
    pub stopped_early: bool,
    /// Spectral-loss evaluations performed (training and validation).
    pub psd_evaluations: usize,
    /// Per-step training losses, in order.
    pub step_losses: Vec<f64>,
}

/// Full training run with per-epoch validation, plateau scheduling, early
/// stopping and best-validation checkpoint selection.
pub fn train(
    net: &Network,
    montage: &Montage,
    train_set: &[&Segment],
    val_set: &[&Segment],
    stats: &ChannelStats,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let mut trainer = Trainer::new(net.clone(), stats.clone(), cfg.clone())?;
    let initial = trainer.evaluate(val_set)?;
    let mut log = vec![EpochRecord {
        epoch: 0,
        steps: 0,
        lr: trainer.opt.lr(),
        train_total: None,
        train_wave: None,
        train_psd: None,
        grad_norm: None,
        val_total: initial.total,
        val_wave: initial.wave,
        val_psd: initial.psd,
        val_nmae: initial.nmae,
        val_lsd: initial.lsd,
    }];
    let mut plateau = Plateau::new(
        initial.total,
        cfg.plateau_factor,
        cfg.plateau_patience,
        cfg.early_stop_patience,
        cfg.improvement_threshold,
    );
    let mut best = (0usize, initial.total, trainer.params.clone());
    let mut step_losses = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_from(&[cfg.seed, 0x7a1, epoch as u64]));
        let lr = trainer.opt.lr();
        let mut reports = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| trainer.steps() >= m) {
                break;
            }
            let batch: Vec<&Segment> = chunk.iter().map(|&i| train_set[i]).collect();
            let r = trainer.step(&batch)?;
            step_losses.push(r.total);
            reports.push(r);
        }
        if reports.is_empty() {
            break;
        }
        let val = trainer.evaluate(val_set)?;
        if !val.total.is_finite() {
            return Err(FavcError::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        let pick = |f: &dyn Fn(&StepReport) -> Option<f64>| -> Option<f64> {
            let v: Vec<f64> = reports.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| mean(&v))
        };
        log.push(EpochRecord {
            epoch,
            steps: trainer.steps(),
            lr,
            train_total: pick(&|r| Some(r.total)),
            train_wave: pick(&|r| Some(r.wave)),
            train_psd: pick(&|r| r.psd),
            grad_norm: pick(&|r| Some(r.grad_norm)),
            val_total: val.total,
            val_wave: val.wave,
            val_psd: val.psd,
            val_nmae: val.nmae,
            val_lsd: val.lsd,
        });
        if val.total < best.1 {
            best = (epoch, val.total, trainer.params.clone());
        }
        let verdict = plateau.observe(val.total);
        if verdict.reduce {
            let lr = trainer.opt.lr() * cfg.plateau_factor;
            log::info!("epoch {epoch}: reducing learning rate to {lr:.3e}");
            trainer.opt.set_lr(lr);
        }
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} (lsd {:.4})",
            log.last().and_then(|r| r.train_total).unwrap_or(f64::NAN),
            val.total,
            val.lsd
        );
        if verdict.stop {
            stopped_early = true;
            break 'epochs;
        }
        if cfg.max_steps.is_some_and(|m| trainer.steps() >= m) {
            break;
        }
    }

    let (best_epoch, best_val, best_params) = best;
    let checkpoint = Checkpoint::new(
        net.config().clone(),
        stats.clone(),
        montage.fingerprint(),
        cfg.seed,
        best_epoch,
        Some(best_val),
        best_params,
    );
    Ok(TrainOutcome {
        checkpoint,
        log,
        best_epoch,
        steps: trainer.steps(),
        stopped_early,
        psd_evaluations: trainer.objective.psd_evaluations(),
        step_losses,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10e}")).unwrap_or_default()
}

/// Writes the log as CSV, preceded by `# key=value` comment lines.
pub fn write_log(path: &Path, log: &[EpochRecord], preamble: &[(String, String)]) -> Result<()> {
    let mut buf = Vec::new();
    for (k, v) in preamble {
        writeln!(buf, "# {k}={v}")?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record([
            "epoch",
            "steps",
            "lr",
            "train_total",
            "train_wave",
            "train_psd",
            "grad_norm",
            "val_total",
            "val_wave",
            "val_psd",
            "val_nmae",
            "val_lsd",
        ])
        .map_err(|e| FavcError::Format(e.to_string()))?;
        for r in log {
            w.write_record([
                r.epoch.to_string(),
                r.steps.to_string(),
                format!("{:.10e}", r.lr),
                cell(r.train_total),
                cell(r.train_wave),
                cell(r.train_psd),
                cell(r.grad_norm),
                cell(Some(r.val_total)),
                cell(Some(r.val_wave)),
                cell(r.val_psd),
                cell(Some(r.val_nmae)),
                cell(Some(r.val_lsd)),
            ])
            .map_err(|e| FavcError::Format(e.to_string()))?;
        }
        w.flush()?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}
