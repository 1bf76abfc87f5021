use chrono::NaiveDate;
use nalgebra::DMatrix;
use proptest::prelude::*;
use volnet::panel::{build_window_pair, compute_rv, fit_standardizer, load_panel, RvPanel, ValueKind};
use volnet::Error;

fn d(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

fn toy() -> RvPanel {
    let csv = "date,A,B\n2020-01-01,1.0,4.0\n2020-01-02,2.0,\n2020-01-03,3.0,6.0\n2020-01-06,4.0,5.0\n";
    load_panel(csv.as_bytes(), ValueKind::Rooted).unwrap()
}

#[test]
fn compute_rv_examples() {
    assert_eq!(compute_rv(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
    assert_eq!(compute_rv(&[0.3]).unwrap(), 0.3 * 0.3);
    let oracle: f64 = [0.01f64, -0.02, 0.005].iter().map(|r| r * r).sum();
    assert!((compute_rv(&[0.01, -0.02, 0.005]).unwrap() - oracle).abs() < 1e-18);
    assert!((oracle - 0.000525).abs() < 1e-15);
}

#[test]
fn load_one_empty_cell() {
    let csv = "date,A,B\n2020-01-01,0.1,0.2\n2020-01-02,0.3,\n2020-01-03,0.5,0.6\n";
    let p = load_panel(csv.as_bytes(), ValueKind::Rooted).unwrap();
    assert_eq!((p.n_rows(), p.n_indices()), (3, 2));
    let missing: usize = (0..3).flat_map(|r| (0..2).map(move |c| (r, c))).filter(|&(r, c)| !p.is_observed(r, c)).count();
    assert_eq!(missing, 1);
    assert!(!p.is_observed(1, 1));
}

#[test]
fn load_errors() {
    let dup = "date,A\n2020-01-01,0.1\n2020-01-01,0.2\n";
    assert!(matches!(load_panel(dup.as_bytes(), ValueKind::Rooted), Err(Error::DuplicateDate(_))));
    let neg = "date,A\n2020-01-01,-0.01\n";
    let err = load_panel(neg.as_bytes(), ValueKind::Rooted).unwrap_err();
    assert!(matches!(err, Error::NegativeRv { .. }));
    assert!(err.to_string().contains("negative RV"));
    let empty = "date,A,B\n2020-01-01,,\n";
    assert!(matches!(load_panel(empty.as_bytes(), ValueKind::Rooted), Err(Error::EmptyRow(_))));
    let back = "date,A\n2020-01-02,0.1\n2020-01-01,0.2\n";
    assert!(matches!(load_panel(back.as_bytes(), ValueKind::Rooted), Err(Error::NonIncreasingDates(_))));
}

#[test]
fn variance_input_is_rooted() {
    let p = load_panel("date,A\n2020-01-01,0.0004\n".as_bytes(), ValueKind::Variance).unwrap();
    assert!((p.value(0, 0).unwrap() - 0.02).abs() < 1e-15);
}

#[test]
fn standardizer_examples() {
    let p = toy();
    let s = fit_standardizer(&p, d("2020-01-01")..d("2020-01-04")).unwrap();
    assert_eq!(s.mean[0], 2.0);
    assert_eq!(s.std[0], 1.0);
    // B has {4, 6} in range: mean 5, sample sd sqrt(2).
    assert_eq!(s.mean[1], 5.0);
    assert!((s.std[1] - 2f64.sqrt()).abs() < 1e-15);

    let flat = load_panel("date,A\n2020-01-01,1\n2020-01-02,1\n2020-01-03,1\n".as_bytes(), ValueKind::Rooted).unwrap();
    assert!(matches!(
        fit_standardizer(&flat, d("2020-01-01")..d("2020-02-01")),
        Err(Error::ZeroVariance(_))
    ));
    let gap = load_panel("date,A,B\n2020-01-01,1,\n2020-01-02,2,\n2020-01-03,3,1\n".as_bytes(), ValueKind::Rooted).unwrap();
    assert!(matches!(
        fit_standardizer(&gap, d("2020-01-01")..d("2020-01-03")),
        Err(Error::InsufficientObservations(_))
    ));
}

#[test]
fn window_masks_follow_activity() {
    let p = toy();
    let s = fit_standardizer(&p, d("2020-01-01")..d("2020-01-07")).unwrap();
    // t_x = 2, t_y = 1 starting on the first day: B inactive on input day 1.
    let w = build_window_pair(&p, &s, d("2020-01-01"), 2, 1).unwrap();
    assert_eq!(w.ex[(1, 1)], 0.0);
    assert_eq!(w.x[(1, 1)], 0.0);
    let m = w.adjacency_mask(1);
    assert!((0..2).all(|j| m[(1, j)] == 0.0 && m[(j, 1)] == 0.0));
    assert_eq!(m[(0, 0)], 1.0);
    assert_eq!(w.adjacency_mask(0), DMatrix::from_element(2, 2, 1.0));

    // B inactive on the forecast day.
    let w = build_window_pair(&p, &s, d("2020-01-01"), 1, 1).unwrap();
    assert_eq!(w.ey[(0, 1)], 0.0);
    assert_eq!(w.y[(0, 1)], 0.0);
    assert_eq!(w.ey[(0, 0)], 1.0);

    // Fully observed stretch.
    let w = build_window_pair(&p, &s, d("2020-01-03"), 1, 1).unwrap();
    assert!(w.ex.iter().chain(w.ey.iter()).all(|&v| v == 1.0));
    assert!(w.adjacency_masks().iter().all(|m| m.iter().all(|&v| v == 1.0)));

    assert!(matches!(
        build_window_pair(&p, &s, d("2020-01-03"), 2, 1),
        Err(Error::PanelTooShort(_))
    ));
}

#[test]
fn csv_roundtrip() {
    let p = toy();
    let mut buf = Vec::new();
    p.write_csv(&mut buf).unwrap();
    assert_eq!(load_panel(buf.as_slice(), ValueKind::Rooted).unwrap(), p);
}

fn arb_panel() -> impl Strategy<Value = RvPanel> {
    (1usize..5, 3usize..20).prop_flat_map(|(n, t)| {
        (
            proptest::collection::vec(0.0f64..1.0, n * t),
            proptest::collection::vec(proptest::bool::weighted(0.8), n * t),
        )
            .prop_map(move |(vals, mut obs)| {
                for r in 0..t {
                    obs[r * n] = obs[r * n] || !(0..n).any(|c| obs[r * n + c]);
                }
                let dates: Vec<NaiveDate> = (0..t).map(|i| d("2021-03-01") + chrono::Days::new(i as u64)).collect();
                let names = (0..n).map(|c| format!("M{c}")).collect();
                RvPanel::new(dates, names, DMatrix::from_row_slice(t, n, &vals), obs).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn window_pair_invariants(p in arb_panel(), tx in 1usize..4, ty in 1usize..3) {
        prop_assume!(tx + ty <= p.n_rows());
        let mut stats = fit_standardizer(&p, p.dates()[0]..d("2100-01-01"));
        if stats.is_err() {
            return Ok(());
        }
        let stats = stats.as_mut().unwrap();
        stats.std.iter_mut().for_each(|s| *s = s.max(1e-3));
        for start in 0..=(p.n_rows() - tx - ty) {
            let w = build_window_pair(&p, stats, p.dates()[start], tx, ty).unwrap();
            for (v, m) in w.x.iter().zip(w.ex.iter()).chain(w.y.iter().zip(w.ey.iter())) {
                prop_assert!(*m == 0.0 || *m == 1.0);
                if *m == 0.0 {
                    prop_assert_eq!(*v, 0.0);
                }
            }
            for t in 0..tx {
                let a = w.adjacency_mask(t);
                prop_assert_eq!(&a, &a.transpose());
                for n in 0..p.n_indices() {
                    let active = w.ex[(t, n)] == 1.0;
                    prop_assert_eq!(active, p.is_observed(start + t, n));
                    for j in 0..p.n_indices() {
                        let both = active && w.ex[(t, j)] == 1.0;
                        prop_assert_eq!(a[(n, j)] == 1.0, both);
                    }
                }
            }
        }
    }

    #[test]
    fn csv_roundtrip_is_exact(p in arb_panel()) {
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        prop_assert_eq!(load_panel(buf.as_slice(), ValueKind::Rooted).unwrap(), p);
    }

    #[test]
    fn intersection_keeps_complete_rows(p in arb_panel()) {
        match p.intersection() {
            Ok(q) => {
                prop_assert!(q.is_fully_observed());
                let expected = (0..p.n_rows()).filter(|&r| p.row_complete(r)).count();
                prop_assert_eq!(q.n_rows(), expected);
            }
            Err(_) => prop_assert!((0..p.n_rows()).all(|r| !p.row_complete(r))),
        }
    }
}
