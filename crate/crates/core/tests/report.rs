use std::fs;
use std::path::Path;

use favc_core::dataset::{Montage, SynthConfig};
use favc_core::dsp::{BandSet, PsdConfig};
use favc_core::model::ArchConfig;
use favc_core::objective::{aggregate_metric, Evaluator};
use favc_core::perturb::Condition;
use favc_core::report::svg::{heatmap_svg, overlay_svg, polyline_path, scalp_svg};
use favc_core::report::*;
use favc_core::trainer::TrainConfig;
use favc_core::FavcError;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-sided p by walking all 2^n sign patterns of the absolute differences.
fn enumeration_p(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let n = abs.len();
    // Mid-ranks by counting, independent of the library's sort.
    let ranks: Vec<f64> = abs
        .iter()
        .map(|v| {
            let below = abs.iter().filter(|u| *u < v).count() as f64;
            let equal = abs.iter().filter(|u| *u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let mu = ranks.iter().sum::<f64>() / 2.0;
    let observed: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let dev = (observed - mu).abs();
    let mut hits = 0u64;
    for mask in 0u32..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if (w - mu).abs() >= dev - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

#[test]
fn wilcoxon_examples() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let b = [0.0; 6];
    let w = wilcoxon_signed_rank(&a, &b).unwrap();
    assert_eq!(w.p, 0.03125);
    assert_eq!((w.n, w.w_plus, w.w_minus, w.exact), (6, 21.0, 0.0, true));
    let r = wilcoxon_signed_rank(&b, &a).unwrap();
    assert_eq!(r.p, w.p);
    assert_eq!((r.w_plus, r.w_minus), (0.0, 21.0));

    // Thirteen pairs all in one direction: the smallest attainable p, 2 / 2^13.
    let a13: Vec<f64> = (1..=13).map(|i| 0.1 * i as f64).collect();
    let w = wilcoxon_signed_rank(&a13, &[0.0; 13]).unwrap();
    assert_eq!(w.p, 0.000244140625);
    assert_eq!(format!("{:.6}", w.p), "0.000244");

    // Zero differences are dropped before ranking.
    let w = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!((w.n, w.p), (5, 0.0625));

    assert!(matches!(wilcoxon_signed_rank(&[1.0; 6], &[1.0; 6]), Err(FavcError::InvalidArgument(m)) if m.contains("zero")));
    assert!(wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4]).is_err());
    assert!(wilcoxon_signed_rank(&[1.0, 2.0], &[0.0]).is_err());
    assert!(wilcoxon_signed_rank(&[f64::NAN; 6], &[0.0; 6]).is_err());
}

#[test]
fn wilcoxon_frozen_pattern_n13() {
    // Mixed signs with two tied magnitudes; p taken from the enumeration oracle.
    let d = [0.9, -0.2, 1.4, 0.5, -0.5, 2.2, 0.8, 1.1, -0.3, 1.7, 0.6, 1.9, 1.3];
    let b = vec![0.0; 13];
    let oracle = enumeration_p(&d, &b);
    let w = wilcoxon_signed_rank(&d, &b).unwrap();
    assert!((w.p - oracle).abs() < 1e-15);
    assert_eq!(w.w_plus, 84.5);
    assert_eq!(w.p, 30.0 / 8192.0);
}

#[test]
fn wilcoxon_matches_enumeration_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..60 {
        let n = 5 + trial % 9;
        // Coarse values force ties and some zero differences.
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-4i32..=6) as f64 * 0.5).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-4i32..=4) as f64 * 0.5).collect();
        match wilcoxon_signed_rank(&a, &b) {
            Ok(w) => {
                let oracle = enumeration_p(&a, &b);
                assert!((w.p - oracle).abs() < 1e-12, "trial {trial}: {} vs {oracle}", w.p);
                assert_eq!(w.p, wilcoxon_signed_rank(&b, &a).unwrap().p);
            }
            Err(_) => assert!(a.iter().zip(&b).filter(|(x, y)| x != y).count() < MIN_PAIRS),
        }
    }
}

#[test]
fn wilcoxon_normal_branch() {
    // n = 25, all positive, no ties: z = (162.5 - 0.5) / sqrt(25*26*51/24).
    let a: Vec<f64> = (1..=25).map(|i| i as f64).collect();
    let w = wilcoxon_signed_rank(&a, &[0.0; 25]).unwrap();
    assert!(!w.exact);
    let z = 162.0 / (25.0f64 * 26.0 * 51.0 / 24.0).sqrt();
    assert!((w.p - libm::erfc(z / 2f64.sqrt())).abs() < 1e-15);
    // At the switch-over the approximation stays close to the exact answer.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..2.0)).collect();
    let exact = wilcoxon_signed_rank(&a, &[0.0; 20]).unwrap();
    let mut a21 = a.clone();
    a21.push(1e-9);
    let approx = wilcoxon_signed_rank(&a21, &[0.0; 21]).unwrap();
    assert!(exact.exact && !approx.exact);
    assert!((exact.p - approx.p).abs() < 0.02, "{} vs {}", exact.p, approx.p);
}

#[test]
fn mid_rank_example() {
    assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    assert_eq!(mid_ranks(&[2.0; 3]), vec![2.0; 3]);
}

#[test]
fn ranking_follows_direction() {
    assert_eq!(rank_methods(&[0.3, 0.1, 0.2], true), vec![3, 1, 2]);
    assert_eq!(rank_methods(&[0.3, 0.1, 0.2], false), vec![1, 3, 2]);
    assert_eq!(rank_methods(&[0.5, 0.5, 0.1], true), vec![2, 3, 1]);
    assert_eq!(rank_methods(&[f64::NAN, 0.5], false), vec![2, 1]);
}

proptest! {
    #[test]
    fn ranks_are_a_permutation(values in prop::collection::vec(-10.0f64..10.0, 1..8), lower in any::<bool>()) {
        let mut r = rank_methods(&values, lower);
        let best = r.iter().position(|x| *x == 1).unwrap();
        let extreme = if lower {
            values.iter().cloned().fold(f64::INFINITY, f64::min)
        } else {
            values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        };
        prop_assert_eq!(values[best], extreme);
        r.sort();
        prop_assert_eq!(r, (1..=values.len()).collect::<Vec<_>>());
    }

    #[test]
    fn wilcoxon_is_antisymmetric(a in prop::collection::vec(-5.0f64..5.0, 5..14), shift in -1.0f64..1.0) {
        let b: Vec<f64> = a.iter().map(|v| v * 0.7 + shift).collect();
        if let Ok(w) = wilcoxon_signed_rank(&a, &b) {
            let r = wilcoxon_signed_rank(&b, &a).unwrap();
            prop_assert_eq!(w.p, r.p);
            prop_assert_eq!(w.w_plus, r.w_minus);
            prop_assert!(w.p > 0.0 && w.p <= 1.0);
        }
    }
}

#[test]
fn par_map_keeps_order_and_reports_first_error() {
    let items: Vec<usize> = (0..37).collect();
    let out = par_map(&items, |i| Ok(i * i)).unwrap();
    assert_eq!(out, items.iter().map(|i| i * i).collect::<Vec<_>>());
    let err = par_map(&items, |i| {
        if *i == 5 || *i == 30 {
            Err(FavcError::InvalidArgument(format!("item {i}")))
        } else {
            Ok(*i)
        }
    })
    .unwrap_err();
    assert!(err.to_string().contains("item 5"));
}

fn prov() -> Provenance {
    Provenance {
        config_hash: "abc123".into(),
        seed: 4,
    }
}

#[test]
fn table_embeds_provenance() {
    let mut t = Table::new(&["method", "value"]);
    t.push(vec!["nni".into(), num(0.25)]);
    let text = String::from_utf8(t.to_bytes(&prov()).unwrap()).unwrap();
    assert_eq!(text, "# config_hash=abc123\n# seed=4\nmethod,value\nnni,2.5000000000e-1\n");
    assert_eq!(t.column("method").unwrap(), vec!["nni"]);
}

#[test]
fn overlay_of_identical_signals_coincides() {
    let names: Vec<String> = (0..3).map(|i| format!("C{i}")).collect();
    let x = Array2::from_shape_fn((3, 50), |(c, t)| ((c + 1) as f64 * t as f64 * 0.2).sin());
    let svg = overlay_svg("t", &names, x.view(), x.view(), &prov());
    let paths = |class: &str| -> Vec<String> {
        svg.lines()
            .filter(|l| l.contains(&format!("class=\"{class}\"")))
            .map(|l| l.split(" d=\"").nth(1).unwrap().split('"').next().unwrap().to_string())
            .collect()
    };
    assert_eq!(paths("truth").len(), 3);
    assert_eq!(paths("truth"), paths("pred"));
    assert!(svg.contains("config_hash=abc123 seed=4"));
    assert_eq!(polyline_path(&[0.0, 1.0], 0.0, 0.0, 10.0, 10.0, 0.0, 1.0), "M0.00,10.00 L10.00,0.00");
}

#[test]
fn heatmap_grid_and_shared_scale() {
    let cfg = PsdConfig::default();
    let freqs = cfg.freqs();
    assert_eq!(freqs.len(), 90);
    let names: Vec<String> = Montage::standard().target_names().iter().map(|s| s.to_string()).collect();
    let real = Array2::from_shape_fn((13, 90), |(c, f)| -(c as f64) - 0.01 * f as f64);
    let gen = Array2::from_shape_fn((13, 90), |(c, f)| 0.5 - (c as f64) * 0.9 - 0.02 * f as f64);
    let panels = vec![("real".to_string(), real.view()), ("gen".to_string(), gen.view())];
    let (svg, (lo, hi)) = heatmap_svg("h", &names, &freqs, &panels, &prov());
    for k in 0..2 {
        assert_eq!(svg.matches(&format!("class=\"cell p{k}\"")).count(), 13 * 90);
    }
    let all = real.iter().chain(gen.iter());
    assert_eq!(lo, all.clone().cloned().fold(f64::INFINITY, f64::min));
    assert_eq!(hi, all.cloned().fold(f64::NEG_INFINITY, f64::max));
    // Each panel alone would use a narrower scale.
    let (_, alone) = heatmap_svg("h", &names, &freqs, &panels[..1], &prov());
    assert!(alone.1 < hi);

    let m = Montage::standard();
    let a: Vec<f64> = (0..m.len()).map(|i| i as f64).collect();
    let b: Vec<f64> = (0..m.len()).map(|i| 2.0 * i as f64 - 3.0).collect();
    let (svg, scale) = scalp_svg("s", &m, &[("a".into(), a), ("b".into(), b)], &prov());
    assert_eq!(scale, (-3.0, 2.0 * (m.len() - 1) as f64 - 3.0));
    assert!(svg.starts_with("<?xml") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn config_roundtrip_hash_and_validation() {
    let cfg = ExperimentConfig::toy();
    let text = serde_json::to_string_pretty(&cfg).unwrap();
    assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    let moved = ExperimentConfig {
        out: "elsewhere".into(),
        ..cfg.clone()
    };
    assert_eq!(config_hash(&moved).unwrap(), config_hash(&cfg).unwrap());
    let reseeded = ExperimentConfig { seed: 1, ..cfg.clone() };
    assert_ne!(config_hash(&reseeded).unwrap(), config_hash(&cfg).unwrap());
    assert_eq!(cfg.train_config().seed, 0);
    assert_eq!(reseeded.train_config().seed, 1);

    let partial = ExperimentConfig::from_json(r#"{"seed": 9, "repeats": 2}"#).unwrap();
    assert_eq!((partial.seed, partial.repeats, partial.sweep.len()), (9, 2, 4));
    assert!(ExperimentConfig::from_json(r#"{"sed": 9}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"repeats": 0}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"sweep": [1.5]}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"conditions": ["awgn", "awgn"]}"#).is_err());
    // Toy data against the full architecture: segment lengths disagree.
    let mut bad = ExperimentConfig::toy();
    bad.arch = ArchConfig::default();
    assert!(bad.validate().is_err());
    let mut bad = ExperimentConfig::toy();
    bad.eval_psd = PsdConfig::default();
    assert!(bad.validate().is_err());
}

fn small(out: &Path, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::toy();
    cfg.seed = seed;
    cfg.data = DataSpec::Synth {
        subjects: 16,
        segments_per_subject: 2,
        synth: SynthConfig::toy(),
    };
    cfg.train.max_epochs = 2;
    cfg.train.batch_size = 8;
    cfg.conditions = vec![Condition::Clean, Condition::Awgn, Condition::Dropout];
    cfg.repeats = 2;
    cfg.sweep = vec![0.1];
    cfg.out = out.to_path_buf();
    cfg
}

fn trained(dir: &Path, seed: u64) -> ExperimentConfig {
    let mut cfg = small(&dir.join("train"), seed);
    run_train(&cfg).unwrap();
    cfg.checkpoint = Some(dir.join("train/model.ckpt"));
    cfg
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let base = trained(dir.path(), 2);
    let hash = config_hash(&base).unwrap();
    let log = fs::read_to_string(dir.path().join("train/train_log.csv")).unwrap();
    assert!(log.starts_with("# config_hash="));

    // Clean evaluation: model plus the three baselines, rerun byte-identical.
    let e1 = ExperimentConfig { out: dir.path().join("e1"), ..base.clone() };
    let e2 = ExperimentConfig { out: dir.path().join("e2"), ..base.clone() };
    let clean = run_clean_eval(&e1).unwrap();
    run_clean_eval(&e2).unwrap();
    for f in ["clean_pooled.csv", "clean_channels.csv"] {
        let a = fs::read(dir.path().join("e1").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("e2").join(f)).unwrap());
        assert!(String::from_utf8(a).unwrap().starts_with(&format!("# config_hash={hash}\n# seed=2\n")));
    }
    assert_eq!(clean.pooled.column("method").unwrap(), vec!["favc", "nni", "idw", "spline"]);
    assert_eq!(clean.channels.rows.len(), 13 * 4);

    // Robustness grid with one and two repeats.
    let r2 = run_robustness(&ExperimentConfig { out: dir.path().join("r2"), ..base.clone() }).unwrap();
    let r1 = run_robustness(&ExperimentConfig {
        out: dir.path().join("r1"),
        repeats: 1,
        ..base.clone()
    })
    .unwrap();
    assert_eq!(r2.rows.len(), 3 * ROBUST_METRICS.len() * 4);
    for (a, b) in r1.rows.iter().zip(&r2.rows) {
        assert_eq!((a.mean, a.std, a.rank, &a.subjects), (b.mean, b.std, b.rank, &b.subjects));
        assert_eq!(a.repeat_std, 0.0);
    }
    let cols = |t: &Table, skip: &[&str]| -> Vec<Vec<String>> {
        let keep: Vec<usize> = (0..t.header.len()).filter(|i| !skip.contains(&t.header[*i].as_str())).collect();
        t.rows.iter().map(|r| keep.iter().map(|i| r[*i].clone()).collect()).collect()
    };
    let dispersion = ["repeats", "repeat_std", "repeat_min", "repeat_max"];
    assert_eq!(cols(&r1.table, &dispersion), cols(&r2.table, &dispersion));
    assert_ne!(r1.table.column("repeat_std"), r2.table.column("repeat_std"));

    for chunk in r2.rows.chunks(4) {
        let mut ranks: Vec<usize> = chunk.iter().map(|r| r.rank).collect();
        ranks.sort();
        assert_eq!(ranks, vec![1, 2, 3, 4]);
        assert!(chunk.iter().all(|r| r.condition == chunk[0].condition && r.metric == chunk[0].metric));
    }
    // The clean condition reproduces the clean evaluation.
    for me in &clean.methods {
        for metric in ROBUST_METRICS {
            let row = r2
                .rows
                .iter()
                .find(|r| r.condition == Condition::Clean && r.metric == metric && r.method == me.name)
                .unwrap();
            let a = aggregate_metric(&me.reports, metric).unwrap();
            assert_eq!((row.mean, row.std), (a.mean, a.std), "{} {metric}", me.name);
            assert_eq!(row.repeat_std, 0.0);
        }
    }
    assert_eq!(r2.tests.len(), 3 * ROBUST_METRICS.len());
    for t in &r2.tests {
        assert_ne!(t.comparator, MODEL_NAME);
        // Two test subjects: too few pairs for the signed-rank test.
        assert!(t.test.is_none() && t.note.contains("at least"));
    }
    for c in ["clean", "awgn", "dropout"] {
        let svg = fs::read_to_string(dir.path().join("r2").join(format!("robust_{c}.svg"))).unwrap();
        assert!(svg.contains(&hash));
    }
    let r2b = run_robustness(&ExperimentConfig { out: dir.path().join("r2b"), ..base.clone() }).unwrap();
    for f in ["robustness.csv", "robustness_tests.csv"] {
        assert_eq!(
            fs::read(dir.path().join("r2").join(f)).unwrap(),
            fs::read(dir.path().join("r2b").join(f)).unwrap()
        );
    }
    assert_eq!(r2b.table, r2.table);

    // Under the training config, a sweep over the default weight reproduces the
    // trained checkpoint.
    let sw = run_sweep(&small(&dir.path().join("sw"), 2)).unwrap();
    assert_eq!(sw.rows.len(), 1);
    assert_eq!(sw.table.rows.len(), 1);
    assert_eq!(
        fs::read(dir.path().join("sw/sweep_0.ckpt")).unwrap(),
        fs::read(dir.path().join("train/model.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("sw/sweep_0_log.csv")).unwrap(),
        fs::read(dir.path().join("train/train_log.csv")).unwrap()
    );

    // Figures.
    let (rep, heat, scalp) = run_report(&ExperimentConfig { out: dir.path().join("fig"), ..base.clone() }).unwrap();
    assert_eq!(rep.pooled, clean.pooled);
    assert!(heat.0 < heat.1 && scalp.0 < scalp.1);
    let heatmap = fs::read_to_string(dir.path().join("fig/heatmap.svg")).unwrap();
    for k in 0..5 {
        assert_eq!(heatmap.matches(&format!("class=\"cell p{k}\"")).count(), 13 * 45);
    }
    for f in ["overlay.svg", "scalp.svg", "heatmap.svg"] {
        assert!(fs::read_to_string(dir.path().join("fig").join(f)).unwrap().contains(&format!("config_hash={hash} seed=2")));
    }

    let b = run_baseline(&ExperimentConfig {
        out: dir.path().join("b"),
        checkpoint: None,
        ..base.clone()
    })
    .unwrap();
    assert_eq!(b.pooled.column("method").unwrap(), vec!["nni", "idw", "spline"]);
    assert_eq!(b.pooled.rows, clean.pooled.rows[1..].to_vec());
}

#[test]
fn checkpoint_must_match_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained(dir.path(), 3);
    // Different seed, different subjects and statistics.
    let other = ExperimentConfig {
        seed: 4,
        out: dir.path().join("x"),
        ..cfg.clone()
    };
    let err = run_clean_eval(&other).unwrap_err();
    assert!(matches!(err, FavcError::InvalidArgument(ref m) if m.contains("statistics")), "{err}");
    let missing = ExperimentConfig {
        checkpoint: Some(dir.path().join("nope.ckpt")),
        out: dir.path().join("y"),
        ..cfg.clone()
    };
    assert!(run_robustness(&missing).is_err());
    let none = ExperimentConfig {
        checkpoint: None,
        out: dir.path().join("z"),
        ..cfg.clone()
    };
    assert!(run_clean_eval(&none).unwrap_err().to_string().contains("checkpoint"));
}

#[test]
fn model_scored_against_its_own_output_is_ideal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained(dir.path(), 5);
    let data = load_data(&cfg).unwrap();
    let (_, model) = load_model(cfg.checkpoint.as_ref().unwrap(), &Montage::standard(), &data).unwrap();
    let segs: Vec<_> = data
        .role("test")
        .into_iter()
        .map(|s| {
            let mut s = s.clone();
            s.targets = Some(model.predict(&s).unwrap().mapv(|v| v as f32));
            s
        })
        .collect();
    let ev = Evaluator::new(TrainConfig::toy_psd(), BandSet::standard(), data.stats.target_std().to_vec()).unwrap();
    for s in &segs {
        let y = s.targets_f64().unwrap();
        let m = ev.segment(&s.subject, y.view(), y.view()).unwrap();
        assert_eq!(m.scalar("nmae").unwrap(), 0.0);
        assert!((m.scalar("pearson").unwrap() - 1.0).abs() < 1e-12);
        assert_eq!((m.lsd, m.psd_kl), (0.0, 0.0));
        assert!(m.sci.sci.abs() < 1e-12 && (m.cftc - 1.0).abs() < 1e-12);
    }
    let out = evaluate_methods(&[model], &segs, &ev, false).unwrap();
    let lsd = aggregate_metric(&out[0].reports, "lsd").unwrap().mean;
    // Only the f32 storage of the targets separates the two.
    assert!(lsd < 1e-5, "{lsd}");
}
