use favc_core::baselines::{
    idw_weights, legendre, legendre_g, nearest_source, standard_baselines, Interpolator, Method, SplineSystem,
    SPLINE_ORDER, SPLINE_RIDGE, SPLINE_TERMS,
};
use favc_core::dataset::Montage;
use favc_core::util::rng_from;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use std::f64::consts::PI;

// Closed-form Legendre polynomials P_0..P_7.
fn p_closed(n: usize, x: f64) -> f64 {
    let x2 = x * x;
    match n {
        0 => 1.0,
        1 => x,
        2 => (3.0 * x2 - 1.0) / 2.0,
        3 => (5.0 * x2 * x - 3.0 * x) / 2.0,
        4 => (35.0 * x2 * x2 - 30.0 * x2 + 3.0) / 8.0,
        5 => (63.0 * x2 * x2 * x - 70.0 * x2 * x + 15.0 * x) / 8.0,
        6 => (231.0 * x2 * x2 * x2 - 315.0 * x2 * x2 + 105.0 * x2 - 5.0) / 16.0,
        7 => (429.0 * x2 * x2 * x2 * x - 693.0 * x2 * x2 * x + 315.0 * x2 * x - 35.0 * x) / 16.0,
        _ => unreachable!(),
    }
}

fn g_closed(x: f64) -> f64 {
    (1..=7)
        .map(|n| {
            let nf = n as f64;
            (2.0 * nf + 1.0) / (nf.powi(4) * (nf + 1.0).powi(4)) * p_closed(n, x)
        })
        .sum::<f64>()
        / (4.0 * PI)
}

// Dense Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn random_sources(t: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from(&[seed]);
    Array2::from_shape_fn((4, t), |_| rng.random_range(-50.0..50.0))
}

fn spline() -> Method {
    Method::Spline {
        order: SPLINE_ORDER,
        terms: SPLINE_TERMS,
        ridge: SPLINE_RIDGE,
    }
}

#[test]
fn legendre_recurrence_matches_closed_forms() {
    for i in 0..=40 {
        let x = -1.0 + i as f64 / 20.0;
        let p = legendre(x, 7);
        assert_eq!(p.len(), 8);
        for (n, v) in p.iter().enumerate() {
            assert!((v - p_closed(n, x)).abs() < 1e-13, "P_{n}({x})");
        }
        assert!((legendre_g(x, 4, 7) - g_closed(x)).abs() < 1e-15);
    }
    assert_eq!(legendre(0.3, 0), vec![1.0]);
}

#[test]
fn kernel_at_one_and_parity() {
    let at_one: f64 = (1..=7)
        .map(|n| (2 * n + 1) as f64 / ((n * (n + 1)) as f64).powi(4))
        .sum::<f64>()
        / (4.0 * PI);
    assert!((legendre_g(1.0, 4, 7) - at_one).abs() < 1e-16);
    // Odd terms flip sign at -x, even terms do not.
    for x in [0.1, 0.5, 0.9] {
        let p = legendre(x, 7);
        let mut even = 0.0;
        let mut odd = 0.0;
        for (n, pn) in p.iter().enumerate().skip(1) {
            let nf = n as f64;
            let term = (2.0 * nf + 1.0) / (nf * (nf + 1.0)).powi(4) * pn / (4.0 * PI);
            if n % 2 == 0 {
                even += term;
            } else {
                odd += term;
            }
        }
        assert!((legendre_g(x, 4, 7) - (even + odd)).abs() < 1e-15);
        assert!((legendre_g(-x, 4, 7) - (even - odd)).abs() < 1e-15);
    }
}

#[test]
fn spline_reproduces_constants() {
    let m = Montage::standard();
    let sp = Interpolator::new(spline(), &m).unwrap();
    for v in [-3.5, 0.0, 1.0, 120.0] {
        let x = Array2::from_elem((4, 10), v);
        let y = sp.apply(x.view()).unwrap();
        assert!(y.iter().all(|&e| (e - v).abs() < 1e-6 * v.abs().max(1.0)));
    }
    let sys = SplineSystem::new(&m, 4, 7, SPLINE_RIDGE).unwrap();
    let (c, c0) = sys.coefficients(&[2.0; 4]).unwrap();
    assert!(c.iter().all(|v| v.abs() < 1e-9) && (c0 - 2.0).abs() < 1e-9);
}

#[test]
fn spline_interpolates_sources() {
    let m = Montage::standard();
    let sys = SplineSystem::new(&m, SPLINE_ORDER, SPLINE_TERMS, SPLINE_RIDGE).unwrap();
    let at_sources = sys.weights(&m, m.sources()).unwrap();
    let x = random_sources(50, 1);
    let back = at_sources.dot(&x);
    let worst = (&back - &x).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn spline_coefficients_sum_to_zero() {
    let m = Montage::standard();
    let sys = SplineSystem::new(&m, SPLINE_ORDER, SPLINE_TERMS, SPLINE_RIDGE).unwrap();
    let x = random_sources(20, 2);
    for t in 0..20 {
        let v: Vec<f64> = x.column(t).to_vec();
        let (c, c0) = sys.coefficients(&v).unwrap();
        let scale = c.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        assert!(c.iter().sum::<f64>().abs() < 1e-12 * scale);
        // Residual of the bordered system.
        let g = sys.gram();
        for i in 0..4 {
            let lhs: f64 = (0..4).map(|j| g[(i, j)] * c[j]).sum::<f64>() + sys.applied_ridge * c[i] + c0;
            assert!((lhs - v[i]).abs() < 1e-8 * v[i].abs().max(1.0));
        }
    }
}

#[test]
fn spline_matches_per_sample_dense_solve() {
    let m = Montage::standard();
    let sp = Interpolator::new(spline(), &m).unwrap();
    let ridge = SplineSystem::new(&m, SPLINE_ORDER, SPLINE_TERMS, SPLINE_RIDGE).unwrap().applied_ridge;
    let x = random_sources(64, 3);
    let fast = sp.apply(x.view()).unwrap();
    let src = m.sources();
    let mut a = vec![vec![0.0; 5]; 5];
    for i in 0..4 {
        for j in 0..4 {
            let g = g_closed(m.cos_angle(src[i], src[j]));
            a[i][j] = g + if i == j { ridge } else { 0.0 };
        }
        a[i][4] = 1.0;
        a[4][i] = 1.0;
    }
    let mut worst = 0.0f64;
    for t in 0..64 {
        let mut rhs: Vec<f64> = x.column(t).to_vec();
        rhs.push(0.0);
        let sol = solve_dense(a.clone(), rhs);
        for (r, &tgt) in m.targets().iter().enumerate() {
            let est: f64 = (0..4).map(|j| sol[j] * g_closed(m.cos_angle(tgt, src[j]))).sum::<f64>() + sol[4];
            worst = worst.max((est - fast[[r, t]]).abs());
        }
    }
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn ridge_rescues_near_coincident_sources() {
    let m = Montage::standard();
    let plain = SplineSystem::new(&m, 4, 7, SPLINE_RIDGE).unwrap();
    assert_eq!(plain.applied_ridge, 0.0);
    assert!(plain.condition < 1e6);

    let pts = vec![
        ("A".to_string(), [0.3, 0.9, 0.3]),
        ("B".to_string(), [0.3, 0.9, 0.3 + 1e-7]),
        ("C".to_string(), [-0.5, 0.8, 0.2]),
        ("D".to_string(), [0.5, 0.8, 0.2]),
        ("E".to_string(), [0.0, 0.0, 1.0]),
    ];
    let m = Montage::new(pts, &["A", "B", "C", "D"], &["E"]).unwrap();
    let sys = SplineSystem::new(&m, 4, 7, SPLINE_RIDGE).unwrap();
    assert_eq!(sys.applied_ridge, SPLINE_RIDGE);
    let (c, _) = sys.coefficients(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!(c.iter().all(|v| v.is_finite()));
}

#[test]
fn spline_rejects_coincident_sources() {
    let p = [0.3, 0.9, 0.3];
    let pts = vec![
        ("A".to_string(), p),
        ("B".to_string(), p),
        ("C".to_string(), [-0.5, 0.8, 0.2]),
        ("D".to_string(), [0.5, 0.8, 0.2]),
        ("E".to_string(), [0.0, 0.0, 1.0]),
    ];
    let m = Montage::new(pts, &["A", "B", "C", "D"], &["E"]).unwrap();
    let err = SplineSystem::new(&m, 4, 7, 0.0).unwrap_err();
    assert!(err.to_string().contains(&m.fingerprint()), "{err}");
}

#[test]
fn idw_examples() {
    let m = Montage::standard();
    let cz = m.index_of("Cz").unwrap();
    // Cz sits at the vertex and every source on the rim: chord sqrt(2) to each.
    for &s in m.sources() {
        assert!((m.chord(cz, s) - 2f64.sqrt()).abs() < 1e-12);
    }
    for w in idw_weights(&m, cz, 2.0) {
        assert!((w - 0.25).abs() < 1e-12);
    }
    let fp1 = m.index_of("Fp1").unwrap();
    assert_eq!(idw_weights(&m, fp1, 2.0), vec![1.0, 0.0, 0.0, 0.0]);

    // Hand distance table for T3 at azimuth -90: rim chords are 2 sin(delta/2).
    let t3 = m.index_of("T3").unwrap();
    let chord = |deg: f64| 2.0 * (deg.to_radians() / 2.0).sin();
    let d = [chord(72.0), chord(108.0), chord(36.0), chord(144.0)];
    let inv: Vec<f64> = d.iter().map(|v| v.powi(-2)).collect();
    let total: f64 = inv.iter().sum();
    for (w, e) in idw_weights(&m, t3, 2.0).iter().zip(&inv) {
        assert!((w - e / total).abs() < 1e-12);
    }

    let idw = Interpolator::new(Method::Idw { power: 2.0 }, &m).unwrap();
    for row in idw.weights().rows() {
        assert!(row.iter().all(|&w| w >= 0.0));
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
    assert!(Interpolator::new(Method::Idw { power: 0.0 }, &m).is_err());
}

#[test]
fn idw_copies_coincident_source() {
    let pts = vec![
        ("Fp1".to_string(), [-0.3, 0.95, 0.0]),
        ("Fp2".to_string(), [0.3, 0.95, 0.0]),
        ("F7".to_string(), [-0.8, 0.6, 0.0]),
        ("F8".to_string(), [0.8, 0.6, 0.0]),
        ("X".to_string(), [-0.3, 0.95, 0.0]),
        ("Y".to_string(), [0.0, 0.0, 1.0]),
    ];
    let m = Montage::new(pts, &["Fp1", "Fp2", "F7", "F8"], &["X", "Y"]).unwrap();
    let idw = Interpolator::new(Method::Idw { power: 2.0 }, &m).unwrap();
    let x = random_sources(30, 4);
    let y = idw.apply(x.view()).unwrap();
    assert_eq!(y.row(0), x.row(0));
}

#[test]
fn nni_examples() {
    let m = Montage::standard();
    let nni = Interpolator::new(Method::Nni, &m).unwrap();
    let x = random_sources(40, 5);
    let y = nni.apply(x.view()).unwrap();
    for (r, &t) in m.targets().iter().enumerate() {
        let j = nearest_source(&m, t);
        assert_eq!(y.row(r), x.row(j));
        // Brute-force nearest, with the same tie tolerance.
        let d: Vec<f64> = m.sources().iter().map(|&s| m.chord(t, s)).collect();
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(d.iter().position(|&v| v <= min * (1.0 + 1e-12)).unwrap(), j);
    }
    let f3 = m.index_of("F3").unwrap();
    let near = nearest_source(&m, f3);
    assert!(near == 0 || near == 2);
    let (d_fp1, d_f7) = (m.chord(f3, m.sources()[0]), m.chord(f3, m.sources()[2]));
    assert_eq!(near, if d_fp1 <= d_f7 { 0 } else { 2 });
    // Cz ties all four sources: the first row wins.
    assert_eq!(nearest_source(&m, m.index_of("Cz").unwrap()), 0);
}

#[test]
fn bad_input_rows_rejected() {
    let m = Montage::standard();
    for b in standard_baselines(&m).unwrap() {
        assert!(b.apply(Array2::zeros((3, 10)).view()).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn baselines_are_linear(seed in 0u64..10_000, a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let m = Montage::standard();
        let x1 = random_sources(32, seed);
        let x2 = random_sources(32, seed + 1);
        let mix = &x1 * a + &x2 * b;
        for base in standard_baselines(&m).unwrap() {
            let lhs = base.apply(mix.view()).unwrap();
            let rhs = base.apply(x1.view()).unwrap() * a + base.apply(x2.view()).unwrap() * b;
            let worst = (&lhs - &rhs).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            prop_assert!(worst < 1e-9, "{} {}", base.name(), worst);
        }
    }
}
