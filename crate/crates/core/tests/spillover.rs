use chrono::NaiveDate;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use volnet::panel::RvPanel;
use volnet::spillover::{
    batch_adjacency, fit_var, gfevd, ma_coefficients, net_spillover, omega, sparsify, GraphEstimate, SpilloverGraph,
    SpilloverSettings, VarModel, VarSummary,
};
use volnet::Error;

fn graph_of(theta: DMatrix<f64>) -> SpilloverGraph {
    let n = theta.nrows();
    SpilloverGraph {
        indices: (0..n).map(|i| format!("m{i}")).collect(),
        theta,
        horizon: 1,
        var: VarSummary {
            p: 1,
            n_obs: 0,
            ridge: 0.0,
            spectral_radius: 0.0,
            stable: true,
        },
        sparsified: false,
        keep_fraction: 1.0,
    }
}

/// VAR(1) sample with unit-variance independent shocks.
fn simulate(phi: &DMatrix<f64>, t: usize, seed: u64) -> DMatrix<f64> {
    let n = phi.nrows();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(t, n);
    let mut x = nalgebra::DVector::zeros(n);
    for r in 0..t + 100 {
        let e = nalgebra::DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        x = phi * &x + e;
        if r >= 100 {
            out.row_mut(r - 100).copy_from(&x.transpose());
        }
    }
    out
}

fn dates(t: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
    (0..t).map(|i| start + chrono::Days::new(i as u64)).collect()
}

#[test]
fn var1_scalar_recovery() {
    let data = simulate(&DMatrix::from_element(1, 1, 0.5), 5000, 11);
    let var = fit_var(&data, 1, 0.0).unwrap();
    let phi = var.coefficients[0][(0, 0)];
    assert!((0.45..=0.55).contains(&phi), "{phi}");
    assert!(var.stable);
}

#[test]
fn var_errors() {
    let mut data = simulate(&DMatrix::from_element(2, 2, 0.1), 200, 3);
    data.column_mut(1).fill(1.0);
    assert!(matches!(fit_var(&data, 1, 0.0), Err(Error::SingularRegressors(_))));
    let short = simulate(&DMatrix::from_element(2, 2, 0.1), 6, 3);
    assert!(matches!(fit_var(&short, 3, 0.0), Err(Error::InsufficientObservations(_))));
}

#[test]
fn residual_covariance_is_psd() {
    let phi = DMatrix::from_row_slice(3, 3, &[0.4, 0.1, 0.0, 0.0, 0.3, 0.2, 0.1, 0.0, 0.5]);
    let var = fit_var(&simulate(&phi, 800, 5), 2, 0.0).unwrap();
    let s = &var.residual_cov;
    assert!((s - s.transpose()).abs().max() < 1e-10);
    assert!(s.clone().symmetric_eigenvalues().min() >= -1e-10);
}

#[test]
fn ma_coefficients_closed_form() {
    let var = VarModel::from_parts(vec![DMatrix::from_element(1, 1, 0.5)], DMatrix::identity(1, 1)).unwrap();
    for (k, b) in ma_coefficients(&var, 8).iter().enumerate() {
        assert!((b[(0, 0)] - 0.5f64.powi(k as i32)).abs() < 1e-15);
    }
    let phi = DMatrix::from_row_slice(2, 2, &[0.2, 0.3, -0.1, 0.4]);
    let var = VarModel::from_parts(vec![phi.clone()], DMatrix::identity(2, 2)).unwrap();
    let bs = ma_coefficients(&var, 5);
    assert_eq!(bs[0], DMatrix::identity(2, 2));
    // VAR(1): B_k = Φ^k.
    let mut power = DMatrix::identity(2, 2);
    for b in &bs {
        assert!((b - &power).abs().max() < 1e-14);
        power = &phi * power;
    }
}

#[test]
fn gfevd_hand_cases() {
    let one = VarModel::from_parts(vec![DMatrix::from_element(1, 1, 0.7)], DMatrix::from_element(1, 1, 3.0)).unwrap();
    assert_eq!(gfevd(&one, 10).unwrap().theta, DMatrix::from_element(1, 1, 1.0));

    let diag = VarModel::from_parts(vec![DMatrix::zeros(3, 3)], DMatrix::from_diagonal_element(3, 3, 2.0)).unwrap();
    assert_eq!(gfevd(&diag, 1).unwrap().theta, DMatrix::identity(3, 3));

    let corr = VarModel::from_parts(vec![DMatrix::zeros(2, 2)], DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
    let g = gfevd(&corr, 1).unwrap();
    // Unstandardized row is [1, 0.25].
    let row = [1.0, 0.25];
    let total: f64 = row.iter().sum();
    assert!((g.theta[(0, 0)] - row[0] / total).abs() < 1e-15);
    assert!((g.theta[(0, 1)] - row[1] / total).abs() < 1e-15);
}

#[test]
fn sparsify_cases() {
    let g = graph_of(DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.1, 0.9]));
    let half = sparsify(&g, 0.5).unwrap();
    assert_eq!(half.theta[(0, 1)], 0.3);
    assert_eq!(half.theta[(1, 0)], 0.0);
    assert_eq!(sparsify(&g, 1.0).unwrap().theta, g.theta);
    let none = sparsify(&g, 0.0).unwrap();
    assert_eq!(none.theta, DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.0, 0.9]));
    assert!(sparsify(&g, 1.5).is_err());
}

#[test]
fn batch_adjacency_reduces_to_whole_window() {
    let phi = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, 0.0, 0.4, 0.1, 0.2, 0.0, 0.3]);
    let data = simulate(&phi, 150, 9);
    let panel = RvPanel::complete(dates(150), vec!["a".into(), "b".into(), "c".into()], data.abs()).unwrap();
    let settings = SpilloverSettings::default();
    let est = batch_adjacency(&panel, 0..150, &settings).unwrap();
    let GraphEstimate::Graph(g) = est else { panic!("expected a graph") };
    let direct = sparsify(
        &gfevd(&fit_var(&data.abs(), settings.p, settings.ridge).unwrap(), settings.horizon).unwrap(),
        settings.keep_fraction,
    )
    .unwrap();
    assert_eq!(g.theta, direct.theta);
}

#[test]
fn batch_adjacency_fallbacks() {
    let t = 60;
    let data = simulate(&DMatrix::from_element(2, 2, 0.2), t, 1).abs();
    // Only 3 common rows.
    let observed: Vec<bool> = (0..t).flat_map(|r| [true, r < 3]).collect();
    let few = RvPanel::new(dates(t), vec!["a".into(), "b".into()], data.clone(), observed).unwrap();
    let settings = SpilloverSettings {
        min_rows: Some(50),
        ..Default::default()
    };
    assert!(matches!(
        batch_adjacency(&few, 0..t, &settings).unwrap(),
        GraphEstimate::Fallback { common_rows: 3, .. }
    ));
    // Market b never trades inside the window.
    let observed: Vec<bool> = (0..t).flat_map(|r| [true, r >= 40]).collect();
    let gap = RvPanel::new(dates(t), vec!["a".into(), "b".into()], data, observed).unwrap();
    assert!(matches!(
        batch_adjacency(&gap, 0..40, &settings).unwrap(),
        GraphEstimate::Fallback { common_rows: 0, .. }
    ));
}

#[test]
fn omega_toy_count() {
    // 8 markets, 10 days; market 1 is inactive on 2 of them while the
    // other 7 trade.
    let n = 8;
    let t = 10;
    let observed: Vec<bool> = (0..t).flat_map(|r| (0..n).map(move |c| !(c == 1 && r < 2))).collect();
    let names = (0..n).map(|c| format!("m{c}")).collect();
    let p = RvPanel::new(dates(t), names, DMatrix::from_element(t, n, 0.01), observed).unwrap();
    let w = omega(&p, 5).unwrap();
    assert!((w[1] - 2.0 / 10.0).abs() < 1e-15);
    assert!(w.iter().enumerate().all(|(i, &v)| i == 1 || v == 0.0));

    let full = RvPanel::complete(dates(t), (0..n).map(|c| format!("m{c}")).collect(), DMatrix::from_element(t, n, 0.01)).unwrap();
    assert!(omega(&full, 5).unwrap().iter().all(|&v| v == 0.0));
    assert!(matches!(omega(&full, 8), Err(Error::ThresholdNeverMet(_))));
}

#[test]
fn symmetric_theta_has_zero_nets() {
    let theta = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.3, 0.2, 0.6, 0.2, 0.3, 0.2, 0.5]);
    assert!(net_spillover(&graph_of(theta)).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn graph_json_roundtrip() {
    let phi = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.2, 0.4]);
    let g = gfevd(&fit_var(&simulate(&phi, 300, 2), 1, 0.0).unwrap(), 10).unwrap();
    let back = SpilloverGraph::from_json(&serde_json::from_str(&g.to_json().to_string()).unwrap()).unwrap();
    assert_eq!(back, g);
    let mut csv = Vec::new();
    g.write_edge_list(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 4);
}

fn stable_var(seed: u64, n: usize, p: usize) -> VarModel {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let phis: Vec<DMatrix<f64>> = (0..p)
        .map(|_| DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.3..0.3) / (n * p) as f64))
        .collect();
    let l = DMatrix::from_fn(n, n, |i, j| if j <= i { rng.gen_range(0.1..1.0) } else { 0.0 });
    VarModel::from_parts(phis, &l * l.transpose()).unwrap()
}

proptest! {
    #[test]
    fn gfevd_rows_sum_to_one(seed in 0u64..10_000, n in 1usize..6, p in 1usize..4, h in 1usize..15) {
        let g = gfevd(&stable_var(seed, n, p), h).unwrap();
        for i in 0..n {
            prop_assert!((g.theta.row(i).sum() - 1.0).abs() < 1e-10);
        }
        prop_assert!(g.theta.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn sparsify_keeps_diagonal_and_count(seed in 0u64..10_000, n in 2usize..7, keep in 0.0f64..=1.0) {
        let g = gfevd(&stable_var(seed, n, 1), 5).unwrap();
        let s = sparsify(&g, keep).unwrap();
        for i in 0..n {
            prop_assert_eq!(s.theta[(i, i)], g.theta[(i, i)]);
        }
        let off = n * (n - 1);
        let kept = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| i != j && s.theta[(i, j)] != 0.0).count();
        prop_assert!(kept <= (keep * off as f64).ceil() as usize);
        prop_assert!(s.theta.iter().zip(g.theta.iter()).all(|(a, b)| *a == 0.0 || a == b));
    }

    #[test]
    fn nets_sum_to_zero(seed in 0u64..10_000, n in 2usize..10) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut theta = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>());
        for i in 0..n {
            let s = theta.row(i).sum();
            theta.row_mut(i).scale_mut(1.0 / s);
        }
        let total: f64 = net_spillover(&graph_of(theta)).iter().sum();
        prop_assert!(total.abs() < 1e-9);
    }
}
