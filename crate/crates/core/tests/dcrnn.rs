use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use volnet::dcrnn::*;

fn small_window(seed: u64, n: usize, tx: usize, ty: usize) -> PreparedWindow {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ex = DMatrix::from_fn(tx, n, |_, _| if rng.gen_bool(0.8) { 1.0 } else { 0.0 });
    let ey = DMatrix::from_fn(ty, n, |i, j| if (i + j) % 4 == 3 { 0.0 } else { 1.0 });
    let x = DMatrix::from_fn(tx, n, |i, j| ex[(i, j)] * rng.gen_range(-1.5..1.5));
    let y = DMatrix::from_fn(ty, n, |i, j| ey[(i, j)] * rng.gen_range(-1.5..1.5));
    let graphs: Vec<DMatrix<f64>> = (0..tx + ty)
        .map(|t| {
            let active: Vec<bool> = (0..n).map(|j| if t < tx { ex[(t, j)] > 0.0 } else { ey[(t - tx, j)] > 0.0 }).collect();
            DMatrix::from_fn(n, n, |i, j| {
                if active[i] && active[j] {
                    rng.gen_range(0.05..1.0)
                } else {
                    0.0
                }
            })
        })
        .collect();
    let transitions = graphs.iter().map(|g| transition_matrix(g).unwrap()).collect();
    PreparedWindow { x, y, ey, transitions }
}

fn config(seed: u64) -> DcgruConfig {
    DcgruConfig {
        num_layers: 2,
        hidden_dim: 4,
        k_max: 2,
        seed,
    }
}

fn gradient_check(seed: u64) {
    let model = DcgruModel::init(config(seed)).unwrap();
    let batch = vec![small_window(seed, 3, 4, 2)];
    let (_, grads) = loss_and_gradients(&model, &batch).unwrap();
    let analytic = grads.to_flat();
    let base = model.to_flat();
    let step = 1e-5;
    let mut probe = model.clone();
    for (i, &g) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] += step;
        probe.set_flat(&p).unwrap();
        let up = batch_loss(&probe, &batch).unwrap();
        p[i] -= 2.0 * step;
        probe.set_flat(&p).unwrap();
        let down = batch_loss(&probe, &batch).unwrap();
        let fd = (up - down) / (2.0 * step);
        let err = (g - fd).abs() / g.abs().max(1.0);
        assert!(err < 1e-4, "seed {seed} {}: analytic {g}, fd {fd}", model.param_name(i));
    }
}

#[test]
fn gradients_match_finite_differences_on_twenty_seeds() {
    for seed in 0..20 {
        gradient_check(seed);
    }
}

#[test]
fn duplicated_batch_pools_to_same_gradient() {
    let model = DcgruModel::init(config(3)).unwrap();
    let w = small_window(3, 3, 4, 2);
    let (l1, g1) = loss_and_gradients(&model, std::slice::from_ref(&w)).unwrap();
    let (l2, g2) = loss_and_gradients(&model, &[w.clone(), w]).unwrap();
    assert!((l1 - l2).abs() < 1e-14);
    for (a, b) in g1.to_flat().iter().zip(g2.to_flat()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn masked_targets_contribute_nothing() {
    let model = DcgruModel::init(config(5)).unwrap();
    let w = small_window(5, 3, 4, 2);
    let mut w2 = w.clone();
    for i in 0..w2.y.nrows() {
        for j in 0..w2.y.ncols() {
            if w2.ey[(i, j)] == 0.0 {
                w2.y[(i, j)] = 5.0;
            }
        }
    }
    let (_, g1) = loss_and_gradients(&model, &[w]).unwrap();
    let (_, g2) = loss_and_gradients(&model, &[w2]).unwrap();
    assert_eq!(g1.to_flat(), g2.to_flat());
}

#[test]
fn single_step_horizon_is_one_decoder_step() {
    let model = DcgruModel::init(config(1)).unwrap();
    let w = small_window(1, 3, 4, 1);
    let out = forecast_prepared(&model, &w, true).unwrap();
    assert_eq!(out.y_hat.shape(), (1, 3));
    assert_eq!(out.hidden_trace.unwrap().len(), 1);
}

#[test]
fn json_roundtrip_is_bitwise() {
    let model = DcgruModel::init(config(7)).unwrap();
    let text = serde_json::to_string(&model.to_json()).unwrap();
    let back = DcgruModel::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(back, model);
    let w = small_window(7, 3, 4, 2);
    let a = forecast_prepared(&model, &w, false).unwrap().y_hat;
    let b = forecast_prepared(&back, &w, false).unwrap().y_hat;
    assert_eq!(a, b);
}

#[test]
fn graph_cut_isolates_node() {
    let model = DcgruModel::init(config(2)).unwrap();
    let mut w = small_window(2, 3, 4, 2);
    for p in w.transitions.iter_mut() {
        for k in 0..3 {
            p[(0, k)] = 0.0;
            p[(k, 0)] = 0.0;
        }
    }
    let base = forecast_prepared(&model, &w, false).unwrap().y_hat;
    let mut w2 = w.clone();
    for t in 0..4 {
        w2.x[(t, 1)] += 3.0;
        w2.x[(t, 2)] -= 2.0;
    }
    let moved = forecast_prepared(&model, &w2, false).unwrap().y_hat;
    assert_eq!(base.column(0), moved.column(0));
    assert_ne!(base.column(1), moved.column(1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hidden_states_stay_in_open_unit_interval(seed in 0u64..1000, scale in 0.1f64..50.0) {
        let model = DcgruModel::init(config(seed)).unwrap();
        let mut w = small_window(seed, 3, 6, 3);
        w.x *= scale;
        let out = forecast_prepared(&model, &w, true).unwrap();
        for h in out.hidden_trace.unwrap() {
            prop_assert!(h.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn k1_conv_ignores_adjacency(vals in proptest::collection::vec(-5.0f64..5.0, 4), theta in -3.0f64..3.0, a in proptest::collection::vec(0.0f64..2.0, 16)) {
        let x = DMatrix::from_column_slice(4, 1, &vals);
        let f = DiffusionFilter::new(1, 1, DMatrix::from_element(1, 1, theta)).unwrap();
        let adj = DMatrix::from_column_slice(4, 4, &a);
        prop_assert_eq!(diffusion_conv(&x, &adj, &f).unwrap(), &x * theta);
    }
}
