use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use volnet::synth::{gen_var_panel, SynthSpec};
use volnet::training::{train, TrainConfig};
use volnet_ffi::*;

fn write_panel(dir: &Path) -> CString {
    let phi: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| if i == j { 0.6 } else if (i + 1) % 3 == j { 0.15 } else { 0.0 }).collect()).collect();
    let json = serde_json::json!({
        "n": 3, "t": 400, "seed": 5, "phi": [phi],
        "intercept": [0.5, 0.5, 0.5], "holiday_prob": [0.04, 0.04, 0.04],
    });
    let panel = gen_var_panel(&SynthSpec::from_json(&json.to_string()).unwrap()).unwrap();
    let path = dir.join("panel.csv");
    panel.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = volnet_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn panel_and_graph_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_panel(dir.path());
    unsafe {
        let mut panel = ptr::null_mut();
        assert_eq!(volnet_panel_load_csv(path.as_ptr(), 0, &mut panel), VolnetStatus::Ok);
        let (mut rows, mut n) = (0, 0);
        assert_eq!(volnet_panel_shape(panel, &mut rows, &mut n), VolnetStatus::Ok);
        assert_eq!(n, 3);
        assert!(rows > 350 && rows <= 400);

        let mut graph = ptr::null_mut();
        assert_eq!(volnet_spillover(panel, 2, 10, 0.5, &mut graph), VolnetStatus::Ok);
        assert_eq!(volnet_graph_nodes(graph), 3);
        let mut theta = [0.0; 9];
        assert_eq!(volnet_graph_adjacency(graph, 0, theta.as_mut_ptr(), 9), VolnetStatus::Ok);
        for row in theta.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        let mut sparse = [0.0; 9];
        assert_eq!(volnet_graph_adjacency(graph, 1, sparse.as_mut_ptr(), 9), VolnetStatus::Ok);
        assert_eq!(sparse.iter().filter(|&&v| v != 0.0).count(), 3 + 3);
        let mut net = [0.0; 3];
        assert_eq!(volnet_graph_net(graph, net.as_mut_ptr(), 3), VolnetStatus::Ok);
        assert!(net.iter().sum::<f64>().abs() < 1e-12);

        assert_eq!(volnet_graph_adjacency(graph, 0, theta.as_mut_ptr(), 8), VolnetStatus::BufferTooSmall);
        assert!(last_error().contains("9 needed"));

        volnet_graph_free(graph);
        volnet_panel_free(panel);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut panel = ptr::null_mut();
        assert_eq!(volnet_panel_load_csv(ptr::null(), 0, &mut panel), VolnetStatus::NullPointer);
        let missing = CString::new("/no/such/panel.csv").unwrap();
        assert_eq!(volnet_panel_load_csv(missing.as_ptr(), 0, &mut panel), VolnetStatus::Io);
        assert!(last_error().contains("/no/such/panel.csv"));
        assert!(panel.is_null());

        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(volnet_panel_load_csv(bad.as_ptr().cast(), 0, &mut panel), VolnetStatus::InvalidUtf8);

        let dir = tempfile::tempdir().unwrap();
        let text = dir.path().join("bad.csv");
        std::fs::write(&text, "date,a\n2020-01-02,0.1\n2020-01-01,0.2\n").unwrap();
        let text = CString::new(text.to_str().unwrap()).unwrap();
        assert_eq!(volnet_panel_load_csv(text.as_ptr(), 0, &mut panel), VolnetStatus::InvalidInput);

        let (mut s, mut p) = (0.0, 0.0);
        let flat = [1.0; 20];
        assert_eq!(volnet_dm_test(flat.as_ptr(), flat.as_ptr(), 20, 1, &mut s, &mut p), VolnetStatus::Numerical);
        assert_eq!(volnet_graph_nodes(ptr::null()), 0);
        volnet_panel_free(ptr::null_mut());
        volnet_graph_free(ptr::null_mut());
        volnet_model_free(ptr::null_mut());
    }
    let v = unsafe { CStr::from_ptr(volnet_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn dm_matches_core() {
    let e0: Vec<f64> = (0..120).map(|i| ((i * 7) % 11) as f64 * 0.1).collect();
    let e1: Vec<f64> = (0..120).map(|i| ((i * 5) % 13) as f64 * 0.09).collect();
    let want = volnet::evaluation::dm_test(&e0, &e1, 3).unwrap();
    let (mut s, mut p) = (0.0, 0.0);
    let status = unsafe { volnet_dm_test(e0.as_ptr(), e1.as_ptr(), 120, 3, &mut s, &mut p) };
    assert_eq!(status, VolnetStatus::Ok);
    assert_eq!((s, p), (want.statistic, want.p_value));
}

#[test]
fn model_mafe_through_the_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_panel(dir.path());
    let panel = volnet::panel::load_panel(std::fs::File::open(path.to_str().unwrap()).unwrap(), volnet::panel::ValueKind::Rooted).unwrap();
    let config = TrainConfig {
        look_back: 25,
        max_epochs: 1,
        hidden_dim: 4,
        num_layers: 1,
        split: [0.6, 0.2, 0.2],
        spillover: volnet::spillover::SpilloverSettings {
            p: 1,
            ..Default::default()
        },
        ..TrainConfig::default()
    };
    let (trained, _) = train(&config, &panel).unwrap();
    let model_path = dir.path().join("model.json");
    std::fs::write(&model_path, trained.to_json().to_string()).unwrap();
    let model_path = CString::new(model_path.to_str().unwrap()).unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(volnet_model_load(model_path.as_ptr(), &mut model), VolnetStatus::Ok);
        let mut handle = ptr::null_mut();
        assert_eq!(volnet_panel_load_csv(path.as_ptr(), 0, &mut handle), VolnetStatus::Ok);
        let mut mafe = [f64::NAN; 3];
        assert_eq!(volnet_model_mafe(model, handle, VolnetProtocol::RollingOrigin, mafe.as_mut_ptr(), 3), VolnetStatus::Ok);
        assert!(mafe.iter().all(|v| v.is_finite() && *v > 0.0));
        let mut again = [f64::NAN; 3];
        assert_eq!(volnet_model_mafe(model, handle, VolnetProtocol::RollingOrigin, again.as_mut_ptr(), 3), VolnetStatus::Ok);
        assert_eq!(mafe, again);
        assert_eq!(volnet_model_mafe(model, ptr::null(), VolnetProtocol::Recursive, mafe.as_mut_ptr(), 3), VolnetStatus::NullPointer);
        volnet_panel_free(handle);
        volnet_model_free(model);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("volnet.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["volnet_panel_load_csv", "volnet_spillover", "volnet_model_mafe", "volnet_dm_test", "volnet_last_error"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"volnet.h\"\nint main(void) { VolnetPanel *p = 0; return volnet_panel_load_csv(\"x\", 0, &p) == VOLNET_STATUS_OK; }\n",
    )
    .unwrap();
    match std::process::Command::new("cc").arg("-fsyntax-only").arg("-I").arg(header.parent().unwrap()).arg(&src).status() {
        Ok(status) => assert!(status.success()),
        Err(e) => eprintln!("no C compiler available, syntax check skipped: {e}"),
    }
}
