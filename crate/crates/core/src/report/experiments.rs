use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde_json::json;

use super::config::{config_hash, load_data, Dataset, ExperimentConfig};
use super::svg::{bar_svg, heatmap_svg, line_svg, overlay_svg, scalp_svg};
use super::wilcoxon::{wilcoxon_signed_rank, Wilcoxon};
use super::{num, par_map, Provenance, Table};
use crate::baselines::{standard_baselines, Interpolator};
use crate::dataset::{save_segments, ChannelStats, Manifest, Montage, Segment};
use crate::dsp::BandSet;
use crate::error::{invalid, Result};
use crate::model::{Checkpoint, Network};
use crate::objective::{aggregate_channels, aggregate_metric, Aggregate, Evaluator, SegmentMetrics, SCALAR_METRICS};
use crate::perturb::{perturb_segment, Condition, PerturbSpec};
use crate::tensor::ParameterSet;
use crate::trainer::{predict_raw, train, write_log, TrainOutcome};

/// Spectral metrics reported under perturbation.
pub const ROBUST_METRICS: [&str; 4] = ["lsd", "psd_kl", "sci", "cftc"];
const CHANNEL_METRICS: [&str; 3] = ["nmae", "pearson", "raw_mae"];
pub const MODEL_NAME: &str = "favc";

fn lower_is_better(metric: &str) -> Result<bool> {
    SCALAR_METRICS
        .iter()
        .find(|(m, _)| *m == metric)
        .map(|(_, lower)| *lower)
        .ok_or_else(|| invalid(format!("metric `{metric}` has no ranking direction")))
}

fn pooled_metrics() -> Vec<&'static str> {
    SCALAR_METRICS.iter().map(|(m, _)| *m).chain(["btvr"]).collect()
}

/// Something that maps a segment's sources to 13 raw-scale target rows.
pub enum Predictor {
    Model {
        net: Network,
        params: ParameterSet,
        stats: ChannelStats,
    },
    Baseline(Interpolator),
}

impl Predictor {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Model { .. } => MODEL_NAME,
            Predictor::Baseline(b) => b.name(),
        }
    }

    pub fn is_model(&self) -> bool {
        matches!(self, Predictor::Model { .. })
    }

    pub fn predict(&self, seg: &Segment) -> Result<Array2<f64>> {
        match self {
            Predictor::Model { net, params, stats } => Ok(predict_raw(net, params, stats, &[seg])?.remove(0)),
            Predictor::Baseline(b) => b.apply(seg.sources_f64().view()),
        }
    }
}

fn stats_match(a: &ChannelStats, b: &ChannelStats) -> bool {
    let close = |x: &[f64], y: &[f64]| {
        x.len() == y.len() && x.iter().zip(y).all(|(p, q)| (p - q).abs() <= 1e-9 * p.abs().max(q.abs()).max(1.0))
    };
    a.channels == b.channels && close(&a.mean, &b.mean) && close(&a.std, &b.std)
}

/// Loads a checkpoint and checks it against the montage and the data's
/// training-split statistics.
pub fn load_model(path: &Path, montage: &Montage, data: &Dataset) -> Result<(Checkpoint, Predictor)> {
    if !path.is_file() {
        return Err(invalid(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = Checkpoint::load(path)?;
    if ck.header.montage != montage.fingerprint() {
        return Err(invalid(format!(
            "montage fingerprint mismatch: checkpoint {} vs data {}",
            ck.header.montage,
            montage.fingerprint()
        )));
    }
    if !stats_match(&ck.header.stats, &data.stats) {
        return Err(invalid(
            "channel statistics in the checkpoint do not match the training split of this dataset",
        ));
    }
    let net = Network::new(ck.header.arch.clone(), montage)?;
    let pred = Predictor::Model {
        net,
        params: ck.params.clone(),
        stats: ck.header.stats.clone(),
    };
    Ok((ck, pred))
}

/// Predictions and metrics of one method over a list of segments.
#[derive(Clone, Debug)]
pub struct MethodEval {
    pub name: String,
    pub reports: Vec<SegmentMetrics>,
    pub predictions: Vec<Array2<f64>>,
}

/// Runs every predictor on every segment (fanned out over worker threads).
/// With `spectral_only`, the time-domain metrics are left empty.
pub fn evaluate_methods(
    predictors: &[Predictor],
    segments: &[Segment],
    evaluator: &Evaluator,
    spectral_only: bool,
) -> Result<Vec<MethodEval>> {
    let per_segment = par_map(segments, |seg| {
        let target = seg
            .targets_f64()
            .ok_or_else(|| invalid(format!("segment of subject {} has no targets", seg.subject)))?;
        predictors
            .iter()
            .map(|p| {
                let y = p.predict(seg)?;
                let m = if spectral_only {
                    evaluator.spectral(&seg.subject, y.view(), target.view())?
                } else {
                    evaluator.segment(&seg.subject, y.view(), target.view())?
                };
                Ok((y, m))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out: Vec<MethodEval> = predictors
        .iter()
        .map(|p| MethodEval {
            name: p.name().to_string(),
            reports: Vec::with_capacity(segments.len()),
            predictions: Vec::with_capacity(segments.len()),
        })
        .collect();
    for row in per_segment {
        for (m, (y, r)) in out.iter_mut().zip(row) {
            m.predictions.push(y);
            m.reports.push(r);
        }
    }
    Ok(out)
}

/// 1-based ranks aligned with `values`; rank 1 is the best under the given
/// direction and ties keep input order.
pub fn rank_methods(values: &[f64], lower_better: bool) -> Vec<usize> {
    let key = |v: f64| {
        let v = if lower_better { v } else { -v };
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| key(values[a]).total_cmp(&key(values[b])));
    let mut ranks = vec![0; values.len()];
    for (r, i) in order.into_iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

struct Context {
    cfg: ExperimentConfig,
    prov: Provenance,
    data: Dataset,
    montage: Montage,
    evaluator: Evaluator,
}

impl Context {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let prov = Provenance {
            config_hash: config_hash(cfg)?,
            seed: cfg.seed,
        };
        let data = load_data(cfg)?;
        let evaluator = Evaluator::new(cfg.eval_psd.clone(), BandSet::standard(), data.stats.target_std().to_vec())?;
        fs::create_dir_all(&cfg.out)?;
        Ok(Self {
            cfg: cfg.clone(),
            prov,
            data,
            montage: Montage::standard(),
            evaluator,
        })
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.cfg.out.join(name)
    }

    fn test_set(&self) -> Result<Vec<Segment>> {
        let test: Vec<Segment> = self.data.role("test").into_iter().cloned().collect();
        if test.is_empty() {
            return Err(invalid("test split is empty"));
        }
        Ok(test)
    }

    fn record(&self, command: &str) -> Result<()> {
        let run = json!({
            "command": command,
            "config_hash": self.prov.config_hash,
            "seed": self.prov.seed,
            "split": self.data.split,
            "config": self.cfg,
        });
        fs::write(self.path(&format!("{command}_run.json")), serde_json::to_vec_pretty(&run)?)?;
        Ok(())
    }

    fn baselines(&self) -> Result<Vec<Predictor>> {
        Ok(standard_baselines(&self.montage)?.into_iter().map(Predictor::Baseline).collect())
    }

    fn with_model(&self) -> Result<Vec<Predictor>> {
        let path = self
            .cfg
            .checkpoint
            .as_ref()
            .ok_or_else(|| invalid("this command needs `checkpoint` in the config"))?;
        let (_, model) = load_model(path, &self.montage, &self.data)?;
        let mut all = vec![model];
        all.extend(self.baselines()?);
        Ok(all)
    }

    fn fit(&self, wave: f64, psd: f64) -> Result<TrainOutcome> {
        let mut tc = self.cfg.train_config();
        tc.loss.wave = wave;
        tc.loss.psd = psd;
        let net = Network::new(self.cfg.arch.clone(), &self.montage)?;
        let mut out = train(
            &net,
            &self.montage,
            &self.data.role("train"),
            &self.data.role("val"),
            &self.data.stats,
            &tc,
        )?;
        out.checkpoint.header.config_hash = Some(self.prov.config_hash.clone());
        Ok(out)
    }
}

/// Writes the synthetic (or loaded) dataset and its split.
pub fn run_synth(cfg: &ExperimentConfig) -> Result<Manifest> {
    let ctx = Context::new(cfg)?;
    let manifest = save_segments(&ctx.path("data"), &ctx.data.segments)?;
    ctx.record("synth")?;
    Ok(manifest)
}

/// Trains one model, writing `model.ckpt` and `train_log.csv`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let ctx = Context::new(cfg)?;
    let out = ctx.fit(cfg.train.loss.wave, cfg.train.loss.psd)?;
    out.checkpoint.save(&ctx.path("model.ckpt"))?;
    write_log(&ctx.path("train_log.csv"), &out.log, &ctx.prov.preamble())?;
    ctx.record("train")?;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct CleanReport {
    pub prov: Provenance,
    pub methods: Vec<MethodEval>,
    /// One row per method, mean and subject standard deviation per metric.
    pub pooled: Table,
    /// One row per target channel and method.
    pub channels: Table,
}

fn clean_tables(methods: &[MethodEval], channel_names: &[&str]) -> Result<(Table, Table)> {
    let metrics = pooled_metrics();
    let mut header = vec!["method".to_string(), "n_subjects".to_string()];
    for m in &metrics {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    let mut pooled = Table {
        header,
        rows: Vec::new(),
    };
    for me in methods {
        let mut row = vec![me.name.clone()];
        let mut n = 0;
        let mut cells = Vec::new();
        for m in &metrics {
            let a = aggregate_metric(&me.reports, m)?;
            n = a.subjects.len();
            cells.push(num(a.mean));
            cells.push(num(a.std));
        }
        row.push(n.to_string());
        row.extend(cells);
        pooled.push(row);
    }
    let mut header = vec!["channel".to_string(), "method".to_string()];
    for m in CHANNEL_METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    let mut channels = Table {
        header,
        rows: Vec::new(),
    };
    let per_method: Vec<Vec<Vec<Aggregate>>> = methods
        .iter()
        .map(|me| CHANNEL_METRICS.iter().map(|m| aggregate_channels(&me.reports, m)).collect())
        .collect::<Result<_>>()?;
    for (c, name) in channel_names.iter().enumerate() {
        for (me, aggs) in methods.iter().zip(&per_method) {
            let mut row = vec![name.to_string(), me.name.clone()];
            for a in aggs {
                row.push(num(a[c].mean));
                row.push(num(a[c].std));
            }
            channels.push(row);
        }
    }
    Ok((pooled, channels))
}

fn clean_eval(ctx: &Context, predictors: &[Predictor], stem: &str) -> Result<CleanReport> {
    let test = ctx.test_set()?;
    let methods = evaluate_methods(predictors, &test, &ctx.evaluator, false)?;
    let (pooled, channels) = clean_tables(&methods, &ctx.montage.target_names())?;
    pooled.write(&ctx.path(&format!("{stem}_pooled.csv")), &ctx.prov)?;
    channels.write(&ctx.path(&format!("{stem}_channels.csv")), &ctx.prov)?;
    ctx.record(stem)?;
    Ok(CleanReport {
        prov: ctx.prov.clone(),
        methods,
        pooled,
        channels,
    })
}

/// Model and the three baselines on the clean test split.
pub fn run_clean_eval(cfg: &ExperimentConfig) -> Result<CleanReport> {
    let ctx = Context::new(cfg)?;
    let predictors = ctx.with_model()?;
    clean_eval(&ctx, &predictors, "clean")
}

/// The three baselines alone on the clean test split (no checkpoint needed).
pub fn run_baseline(cfg: &ExperimentConfig) -> Result<CleanReport> {
    let ctx = Context::new(cfg)?;
    let predictors = ctx.baselines()?;
    clean_eval(&ctx, &predictors, "baseline")
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustRow {
    pub condition: Condition,
    pub metric: String,
    pub method: String,
    /// Subject-level mean and standard deviation of the first repeat.
    pub mean: f64,
    pub std: f64,
    pub rank: usize,
    /// Spread of the pooled value across repeats.
    pub repeat_std: f64,
    pub repeat_min: f64,
    pub repeat_max: f64,
    /// Per-subject values of the first repeat.
    pub subjects: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestRow {
    pub condition: Condition,
    pub metric: String,
    pub comparator: String,
    pub n_subjects: usize,
    /// Fraction of subjects where the model is strictly better.
    pub win_rate: f64,
    pub test: Option<Wilcoxon>,
    pub note: String,
}

#[derive(Clone, Debug)]
pub struct RobustReport {
    pub prov: Provenance,
    pub rows: Vec<RobustRow>,
    pub tests: Vec<TestRow>,
    pub table: Table,
    pub test_table: Table,
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Perturbed-source evaluation over every condition and repeat.
pub fn run_robustness(cfg: &ExperimentConfig) -> Result<RobustReport> {
    let ctx = Context::new(cfg)?;
    let predictors = ctx.with_model()?;
    let test = ctx.test_set()?;
    let mut rows = Vec::new();
    let mut tests = Vec::new();
    for &condition in &cfg.conditions {
        let spec = PerturbSpec {
            condition,
            params: cfg.perturb.clone(),
        };
        // evals[repeat][method]
        let mut evals = Vec::with_capacity(cfg.repeats);
        for repeat in 0..cfg.repeats {
            let indexed: Vec<(usize, &Segment)> = test.iter().enumerate().collect();
            let perturbed: Vec<Segment> = par_map(&indexed, |(i, seg)| {
                Ok(perturb_segment(seg, &spec, cfg.seed, repeat as u64, *i as u64)?.0)
            })?;
            evals.push(evaluate_methods(&predictors, &perturbed, &ctx.evaluator, true)?);
        }
        for metric in ROBUST_METRICS {
            let lower = lower_is_better(metric)?;
            let mut block = Vec::with_capacity(predictors.len());
            for (k, p) in predictors.iter().enumerate() {
                let per_repeat: Vec<Aggregate> = evals
                    .iter()
                    .map(|e| aggregate_metric(&e[k].reports, metric))
                    .collect::<Result<_>>()?;
                let means: Vec<f64> = per_repeat.iter().map(|a| a.mean).collect();
                let first = &per_repeat[0];
                block.push(RobustRow {
                    condition,
                    metric: metric.to_string(),
                    method: p.name().to_string(),
                    mean: first.mean,
                    std: first.std,
                    rank: 0,
                    repeat_std: sample_std(&means),
                    repeat_min: means.iter().copied().fold(f64::INFINITY, f64::min),
                    repeat_max: means.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    subjects: first.subjects.clone(),
                });
            }
            let ranks = rank_methods(&block.iter().map(|r| r.mean).collect::<Vec<_>>(), lower);
            for (r, rank) in block.iter_mut().zip(ranks) {
                r.rank = rank;
            }
            if let Some(model) = block.iter().find(|r| r.method == MODEL_NAME) {
                let best = block
                    .iter()
                    .filter(|r| r.method != MODEL_NAME)
                    .min_by_key(|r| r.rank)
                    .ok_or_else(|| invalid("no comparator methods"))?;
                tests.push(compare(condition, metric, lower, model, best));
            }
            rows.extend(block);
        }
        let groups: Vec<(String, Vec<(String, f64, f64)>)> = ROBUST_METRICS
            .iter()
            .map(|m| {
                let bars = rows
                    .iter()
                    .filter(|r| r.condition == condition && r.metric == *m)
                    .map(|r| (r.method.clone(), r.mean, r.std))
                    .collect();
                (m.to_string(), bars)
            })
            .collect();
        let svg = bar_svg(&format!("Condition: {condition}"), &groups, &ctx.prov);
        fs::write(ctx.path(&format!("robust_{condition}.svg")), svg)?;
    }
    let table = robust_table(&rows, cfg.repeats)?;
    let test_table = test_table(&tests);
    table.write(&ctx.path("robustness.csv"), &ctx.prov)?;
    test_table.write(&ctx.path("robustness_tests.csv"), &ctx.prov)?;
    ctx.record("robust")?;
    Ok(RobustReport {
        prov: ctx.prov,
        rows,
        tests,
        table,
        test_table,
    })
}

fn compare(condition: Condition, metric: &str, lower: bool, model: &RobustRow, best: &RobustRow) -> TestRow {
    let a: Vec<f64> = model.subjects.iter().map(|(_, v)| *v).collect();
    let b: Vec<f64> = best.subjects.iter().map(|(_, v)| *v).collect();
    let wins = a.iter().zip(&b).filter(|(x, y)| if lower { x < y } else { x > y }).count();
    let (test, note) = match wilcoxon_signed_rank(&a, &b) {
        Ok(w) => (Some(w), String::new()),
        Err(e) => (None, e.to_string()),
    };
    TestRow {
        condition,
        metric: metric.to_string(),
        comparator: best.method.clone(),
        n_subjects: a.len(),
        win_rate: wins as f64 / a.len().max(1) as f64,
        test,
        note,
    }
}

fn robust_table(rows: &[RobustRow], repeats: usize) -> Result<Table> {
    let mut t = Table::new(&[
        "condition",
        "metric",
        "direction",
        "method",
        "mean",
        "std",
        "rank",
        "repeats",
        "repeat_std",
        "repeat_min",
        "repeat_max",
    ]);
    for r in rows {
        t.push(vec![
            r.condition.to_string(),
            r.metric.clone(),
            if lower_is_better(&r.metric)? { "lower" } else { "higher" }.to_string(),
            r.method.clone(),
            num(r.mean),
            num(r.std),
            r.rank.to_string(),
            repeats.to_string(),
            num(r.repeat_std),
            num(r.repeat_min),
            num(r.repeat_max),
        ]);
    }
    Ok(t)
}

fn test_table(tests: &[TestRow]) -> Table {
    let mut t = Table::new(&[
        "condition",
        "metric",
        "comparator",
        "n_subjects",
        "win_rate",
        "n_pairs",
        "w_plus",
        "p_value",
        "exact",
        "note",
    ]);
    for r in tests {
        let (n, w, p, exact) = match &r.test {
            Some(w) => (w.n.to_string(), num(w.w_plus), num(w.p), w.exact.to_string()),
            None => ("NA".into(), "NA".into(), "NA".into(), "NA".into()),
        };
        t.push(vec![
            r.condition.to_string(),
            r.metric.clone(),
            r.comparator.clone(),
            r.n_subjects.to_string(),
            num(r.win_rate),
            n,
            w,
            p,
            exact,
            r.note.clone(),
        ]);
    }
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub w_psd: f64,
    pub best_epoch: usize,
    pub steps: usize,
    /// `(metric, mean, std)` on the clean test split.
    pub metrics: Vec<(String, f64, f64)>,
}

impl SweepRow {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.iter().find(|(m, _, _)| m == metric).map(|(_, v, _)| *v)
    }
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub prov: Provenance,
    pub rows: Vec<SweepRow>,
    pub table: Table,
}

const SWEEP_METRICS: [&str; 6] = ["nmae", "pearson", "lsd", "psd_kl", "sci", "cftc"];

/// Trains one model per spectral weight and evaluates each on the test split.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let ctx = Context::new(cfg)?;
    let test = ctx.test_set()?;
    let mut rows = Vec::new();
    for (i, &w) in cfg.sweep.iter().enumerate() {
        let out = ctx.fit(1.0 - w, w)?;
        out.checkpoint.save(&ctx.path(&format!("sweep_{i}.ckpt")))?;
        write_log(&ctx.path(&format!("sweep_{i}_log.csv")), &out.log, &ctx.prov.preamble())?;
        let model = Predictor::Model {
            net: Network::new(cfg.arch.clone(), &ctx.montage)?,
            params: out.checkpoint.params.clone(),
            stats: ctx.data.stats.clone(),
        };
        let eval = evaluate_methods(&[model], &test, &ctx.evaluator, false)?.remove(0);
        let metrics = SWEEP_METRICS
            .iter()
            .map(|m| {
                let a = aggregate_metric(&eval.reports, m)?;
                Ok((m.to_string(), a.mean, a.std))
            })
            .collect::<Result<_>>()?;
        rows.push(SweepRow {
            w_psd: w,
            best_epoch: out.best_epoch,
            steps: out.steps,
            metrics,
        });
    }
    let mut header = vec!["w_psd".to_string(), "best_epoch".to_string(), "steps".to_string()];
    for m in SWEEP_METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    for r in &rows {
        let mut row = vec![num(r.w_psd), r.best_epoch.to_string(), r.steps.to_string()];
        for (_, m, s) in &r.metrics {
            row.push(num(*m));
            row.push(num(*s));
        }
        table.push(row);
    }
    table.write(&ctx.path("sweep.csv"), &ctx.prov)?;
    let xs: Vec<f64> = rows.iter().map(|r| r.w_psd).collect();
    let series: Vec<(String, Vec<f64>)> = ["lsd", "psd_kl", "nmae", "cftc"]
        .iter()
        .map(|m| (m.to_string(), rows.iter().filter_map(|r| r.mean(m)).collect()))
        .collect();
    fs::write(ctx.path("sweep.svg"), line_svg("Spectral weight sweep", "w_psd", &xs, &series, &ctx.prov))?;
    ctx.record("sweep")?;
    Ok(SweepReport {
        prov: ctx.prov,
        rows,
        table,
    })
}

/// Clean evaluation plus the waveform overlay, log-PSD heatmaps and scalp
/// band-power maps. Returns the clean report with the heatmap and scalp colour
/// scales.
pub fn run_report(cfg: &ExperimentConfig) -> Result<(CleanReport, (f64, f64), (f64, f64))> {
    let ctx = Context::new(cfg)?;
    let predictors = ctx.with_model()?;
    let report = clean_eval(&ctx, &predictors, "clean")?;
    let test = ctx.test_set()?;
    let targets: Vec<Array2<f64>> = test.iter().map(|s| s.targets_f64().unwrap_or_default()).collect();
    let names: Vec<String> = ctx.montage.target_names().iter().map(|s| s.to_string()).collect();

    let model = &report.methods[0];
    let overlay = overlay_svg(
        &format!("Subject {}: real vs generated", test[0].subject),
        &names,
        targets[0].view(),
        model.predictions[0].view(),
        &ctx.prov,
    );
    fs::write(ctx.path("overlay.svg"), overlay)?;

    let mean_psd = |signals: &[Array2<f64>]| -> Result<Array2<f64>> {
        let mut acc: Option<Array2<f64>> = None;
        for x in signals {
            let p = ctx.evaluator.spectra(x.view())?.power;
            acc = Some(match acc {
                Some(a) => a + &p,
                None => p,
            });
        }
        let acc = acc.ok_or_else(|| invalid("no segments"))?;
        Ok(acc / signals.len() as f64)
    };
    let mut panels: Vec<(String, Array2<f64>)> = vec![("real".to_string(), mean_psd(&targets)?)];
    for m in &report.methods {
        panels.push((m.name.clone(), mean_psd(&m.predictions)?));
    }
    let log_panels: Vec<(String, Array2<f64>)> = panels
        .iter()
        .map(|(n, p)| (n.clone(), p.mapv(|v| v.max(1e-30).log10())))
        .collect();
    let views: Vec<(String, ndarray::ArrayView2<f64>)> = log_panels.iter().map(|(n, p)| (n.clone(), p.view())).collect();
    let freqs = ctx.evaluator.welch().freqs();
    let (heat, heat_scale) = heatmap_svg("Log-PSD by channel and frequency", &names, &freqs, &views, &ctx.prov);
    fs::write(ctx.path("heatmap.svg"), heat)?;

    let df = ctx.cfg.eval_psd.resolution();
    let sources: Vec<Array2<f64>> = test.iter().map(|s| s.sources_f64()).collect();
    let source_power = mean_psd(&sources)?.sum_axis(Axis(1)) * df;
    let scalp: Vec<(String, Vec<f64>)> = panels
        .iter()
        .map(|(n, p)| {
            let target_power = p.sum_axis(Axis(1)) * df;
            let mut v = vec![0.0; ctx.montage.len()];
            for (k, &i) in ctx.montage.sources().iter().enumerate() {
                v[i] = source_power[k].max(1e-30).log10();
            }
            for (k, &i) in ctx.montage.targets().iter().enumerate() {
                v[i] = target_power[k].max(1e-30).log10();
            }
            (n.clone(), v)
        })
        .collect();
    let lo = cfg.eval_psd.f_lo;
    let hi = cfg.eval_psd.f_hi;
    let (map, scalp_scale) = scalp_svg(&format!("{lo}-{hi} Hz band power"), &ctx.montage, &scalp, &ctx.prov);
    fs::write(ctx.path("scalp.svg"), map)?;
    ctx.record("report")?;
    Ok((report, heat_scale, scalp_scale))
}
