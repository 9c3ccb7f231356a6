use std::collections::HashSet;
use std::fs;

use favc_core::dataset::{
    load_segments, save_segments, split_sizes, synth_dataset, synth_subject, ChannelStats, Montage, Segment,
    Split, SynthConfig, SOURCE_NAMES, SPLIT_RATIOS, STD_FLOOR, TARGET_NAMES,
};
use favc_core::dsp::{PsdConfig, Welch};
use favc_core::util::sha256_hex;
use ndarray::Array2;

fn toy_segment(subject: &str, fill: impl Fn(usize, usize) -> f32) -> Segment {
    let t = 32;
    let src = Array2::from_shape_fn((4, t), |(c, s)| fill(c, s));
    let tgt = Array2::from_shape_fn((13, t), |(c, s)| fill(c + 4, s));
    Segment::new(subject, 128.0, src, Some(tgt)).unwrap()
}

// ------------------------------------------------------------- montage

#[test]
fn montage_geometry() {
    let m = Montage::standard();
    assert_eq!(m.len(), 17);
    let cz = m.xyz(m.index_of("Cz").unwrap());
    assert!(cz[0].abs() < 1e-15 && cz[1].abs() < 1e-15 && (cz[2] - 1.0).abs() < 1e-15);
    for i in 0..m.len() {
        let p = m.xyz(i);
        assert!(((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 1.0).abs() < 1e-9);
    }
    let unique: HashSet<_> = m.names().iter().collect();
    assert_eq!(unique.len(), 17);
    assert_eq!(m.source_names(), SOURCE_NAMES.to_vec());
    assert_eq!(m.target_names(), TARGET_NAMES.to_vec());
}

#[test]
fn montage_projection_is_mirror_symmetric() {
    let m = Montage::standard();
    // Oracle: radius = inclination in radians, direction = azimuth from the nose.
    let inc = std::f64::consts::FRAC_PI_2;
    let az = 18f64.to_radians();
    let fp2 = [inc * az.sin(), inc * az.cos()];
    let got_fp1 = m.plane(m.index_of("Fp1").unwrap());
    let got_fp2 = m.plane(m.index_of("Fp2").unwrap());
    assert!((got_fp2[0] - fp2[0]).abs() < 1e-9 && (got_fp2[1] - fp2[1]).abs() < 1e-9);
    assert!((got_fp1[0] + got_fp2[0]).abs() < 1e-9);
    assert!((got_fp1[1] - got_fp2[1]).abs() < 1e-9);
    for (l, r) in [("F3", "F4"), ("T3", "T4"), ("T5", "T6"), ("P3", "P4"), ("C3", "C4"), ("F7", "F8")] {
        let a = m.plane(m.index_of(l).unwrap());
        let b = m.plane(m.index_of(r).unwrap());
        assert!((a[0] + b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9, "{l}/{r}");
    }
    assert_eq!(m.fingerprint(), Montage::standard().fingerprint());
}

#[test]
fn montage_rejects_duplicates() {
    let pts = vec![("A".to_string(), [1.0, 0.0, 0.0]), ("A".to_string(), [0.0, 1.0, 0.0])];
    assert!(Montage::new(pts, &["A"], &[]).is_err());
}

// ------------------------------------------------------------- synthetic generator

#[test]
fn synth_is_deterministic() {
    let cfg = SynthConfig::toy();
    let a = synth_subject(11, "S001", 3, &cfg).unwrap();
    let b = synth_subject(11, "S001", 3, &cfg).unwrap();
    assert_eq!(a, b);
    let c = synth_subject(12, "S001", 3, &cfg).unwrap();
    assert_ne!(a, c);
}

#[test]
fn synth_amplitude_is_in_microvolt_range() {
    let segs = synth_dataset(3, 6, 2, &SynthConfig::toy()).unwrap();
    for seg in &segs {
        let rows = seg.all_rows().unwrap();
        let rms: Vec<f64> = rows
            .rows()
            .into_iter()
            .map(|r| (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt())
            .collect();
        let mean = rms.iter().sum::<f64>() / rms.len() as f64;
        assert!((5.0..=20.0).contains(&mean), "mean RMS {mean}");
    }
}

#[test]
fn synth_alpha_dominance_shows_alpha_peak() {
    let mut cfg = SynthConfig::default();
    for l in &mut cfg.latents {
        l.gain = if l.name == "alpha" { 5.0 } else { 0.2 };
    }
    let segs = synth_subject(5, "S001", 2, &cfg).unwrap();
    let welch = Welch::new(PsdConfig::default()).unwrap();
    let freqs = welch.freqs();
    let pz = TARGET_NAMES.iter().position(|&n| n == "Pz").unwrap();
    for seg in &segs {
        let y = seg.targets_f64().unwrap();
        let p = welch.psd(&y.row(pz).to_vec()).unwrap();
        let peak = freqs[p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
        assert!((8.0..13.0).contains(&peak), "peak at {peak} Hz");
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn synth_correlation_decays_with_distance() {
    let m = Montage::standard();
    let segs = synth_dataset(9, 4, 3, &SynthConfig::default()).unwrap();
    let mut pts = Vec::new();
    for seg in &segs {
        let rows = seg.all_rows().unwrap();
        for i in 0..17 {
            for j in i + 1..17 {
                let r = pearson(&rows.row(i).to_vec(), &rows.row(j).to_vec());
                pts.push((m.chord(i, j), r));
            }
        }
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!(slope < 0.0, "correlation-distance slope {slope}");
}

// ------------------------------------------------------------- statistics and normalization

#[test]
fn stats_edge_cases() {
    let zero = toy_segment("a", |_, _| 0.0);
    let s = ChannelStats::compute(&[zero]).unwrap();
    assert!(s.mean.iter().all(|&m| m == 0.0));
    assert!(s.std.iter().all(|&v| v == STD_FLOOR));

    let alt = toy_segment("a", |_, t| if t % 2 == 0 { -1.0 } else { 1.0 });
    let s = ChannelStats::compute(&[alt]).unwrap();
    assert!(s.std.iter().all(|&v| (v - 1.0).abs() < 1e-15));

    assert!(ChannelStats::compute(&[]).is_err());
}

#[test]
fn pooled_stats_match_concatenation() {
    let segs = synth_dataset(4, 2, 2, &SynthConfig::toy()).unwrap();
    let s = ChannelStats::compute(&segs).unwrap();
    for c in 0..17 {
        let mut all = Vec::new();
        for seg in &segs {
            all.extend(seg.all_rows().unwrap().row(c).iter().copied());
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let sd = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((s.mean[c] - mean).abs() < 1e-12);
        assert!((s.std[c] - sd).abs() < 1e-12);
    }
}

#[test]
fn normalization_round_trip() {
    let segs = synth_dataset(4, 2, 1, &SynthConfig::toy()).unwrap();
    let s = ChannelStats::compute(&segs).unwrap();
    let x = segs[0].sources_f64();
    let back = s.denormalize_sources(&s.normalize_sources(&x).unwrap()).unwrap();
    assert!(x.iter().zip(back.iter()).all(|(a, b)| (a - b).abs() < 1e-10));
    let y = segs[0].targets_f64().unwrap();
    let back = s.denormalize_targets(&s.normalize_targets(&y).unwrap()).unwrap();
    assert!(y.iter().zip(back.iter()).all(|(a, b)| (a - b).abs() < 1e-10));

    let flat = Array2::from_shape_fn((4, 5), |(c, _)| s.mean[c]);
    assert!(s.normalize_sources(&flat).unwrap().iter().all(|v| v.abs() < 1e-12));
    assert!(s.normalize_sources(&Array2::zeros((3, 5))).is_err());
}

#[test]
fn stats_ignore_held_out_subjects() {
    let mut segs = synth_dataset(8, 6, 1, &SynthConfig::toy()).unwrap();
    let roster: Vec<String> = segs.iter().map(|s| s.subject.clone()).collect();
    let split = Split::new(&roster, 1, SPLIT_RATIOS).unwrap();
    let before = ChannelStats::from_split(&segs, &split).unwrap();
    for seg in &mut segs {
        if split.role(&seg.subject) != Some("train") {
            seg.sources.mapv_inplace(|v| v * 100.0 + 3.0);
        }
    }
    assert_eq!(ChannelStats::from_split(&segs, &split).unwrap(), before);
}

// ------------------------------------------------------------- splits

#[test]
fn split_is_disjoint_complete_and_reproducible() {
    let roster: Vec<String> = (0..119).map(|i| format!("sub{i:03}")).collect();
    let a = Split::new(&roster, 42, SPLIT_RATIOS).unwrap();
    assert_eq!((a.train.len(), a.val.len(), a.test.len()), (95, 11, 13));
    let mut all: Vec<String> = a.train.iter().chain(&a.val).chain(&a.test).cloned().collect();
    all.sort();
    assert_eq!(all, roster);
    let set: HashSet<_> = all.iter().collect();
    assert_eq!(set.len(), roster.len());
    assert_eq!(a, Split::new(&roster, 42, SPLIT_RATIOS).unwrap());
    let mut reversed = roster.clone();
    reversed.reverse();
    assert_eq!(a, Split::new(&reversed, 42, SPLIT_RATIOS).unwrap());
    assert_ne!(a, Split::new(&roster, 43, SPLIT_RATIOS).unwrap());
    assert!(Split::new(&roster[..2], 1, SPLIT_RATIOS).is_err());
}

#[test]
fn split_sizes_track_proportions() {
    for n in 3..=240usize {
        let sizes = split_sizes(n, SPLIT_RATIOS).unwrap();
        assert_eq!(sizes.iter().sum::<usize>(), n);
        assert!(sizes.iter().all(|&s| s >= 1));
        for (s, r) in sizes.iter().zip(SPLIT_RATIOS) {
            let ideal = n as f64 * r as f64 / 119.0;
            // Small rosters force a minimum of one subject per partition.
            let slack = if n < 12 { 2.0 } else { 1.0 };
            assert!((*s as f64 - ideal).abs() <= slack, "n={n}: {sizes:?}");
        }
    }
}

// ------------------------------------------------------------- store

#[test]
fn store_round_trip_is_bit_exact_and_byte_stable() {
    let segs = synth_dataset(2, 2, 2, &SynthConfig::toy()).unwrap();
    let mut with_missing = segs.clone();
    with_missing[1].targets = None;
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    save_segments(d1.path(), &with_missing).unwrap();
    save_segments(d2.path(), &with_missing).unwrap();
    assert_eq!(load_segments(d1.path()).unwrap(), with_missing);
    let mut names: Vec<_> = fs::read_dir(d1.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in names {
        let a = sha256_hex(&fs::read(d1.path().join(&name)).unwrap());
        let b = sha256_hex(&fs::read(d2.path().join(&name)).unwrap());
        assert_eq!(a, b, "{name:?}");
    }
}

#[test]
fn store_rejects_corruption() {
    let segs = synth_dataset(2, 1, 1, &SynthConfig::toy()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_segments(dir.path(), &segs).unwrap();
    let manifest = dir.path().join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();

    fs::write(&manifest, text.replace("\"bytes\": 17408", "\"bytes\": 17404")).unwrap();
    assert!(load_segments(dir.path()).is_err());

    fs::write(&manifest, text.replace("\"version\": 1", "\"version\": 9")).unwrap();
    assert!(load_segments(dir.path()).is_err());

    fs::write(&manifest, "{ not json").unwrap();
    assert!(load_segments(dir.path()).is_err());

    fs::write(&manifest, &text).unwrap();
    let payload = dir.path().join("segment_000000.f32");
    let bytes = fs::read(&payload).unwrap();
    fs::write(&payload, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_segments(dir.path()).is_err());
    fs::write(&payload, &bytes).unwrap();
    assert_eq!(load_segments(dir.path()).unwrap(), segs);
}
