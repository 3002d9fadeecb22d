use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use shiftlab::checkpoint::Checkpoint;
use shiftlab_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(shiftlab_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "name": "ffi",
        "data": {
            "source": "synthetic",
            "spec": {
                "family": "gaussian-classes-1d",
                "means": [-2.0, 2.0],
                "std": 1.0,
                "shifts": [0.0],
                "target_shift": 1.0,
                "prior": [0.5, 0.5],
                "n_per_domain": 200,
                "n_target": 200,
                "seed": 0
            }
        },
        "model": "gdan",
        "train": { "iterations": 20 },
        "out_dir": "run",
        "seed": 3
    });
    let path = dir.join("cfg.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn trained(dir: &Path) -> *mut ShiftlabModel {
    let cfg = c(write_config(dir).to_str().unwrap());
    let mut m = ptr::null_mut();
    let s = unsafe { shiftlab_train(cfg.as_ptr(), &mut m) };
    assert_eq!(s, ShiftlabStatus::Ok, "{}", last_error());
    assert!(!m.is_null());
    m
}

#[test]
fn train_inspect_generate_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let m = trained(dir.path());
    unsafe {
        let mut kind = ShiftlabModelKind::Cgdan;
        assert_eq!(shiftlab_model_kind(m, &mut kind), ShiftlabStatus::Ok);
        assert_eq!(kind, ShiftlabModelKind::Gdan);

        let mut d = 0usize;
        assert_eq!(shiftlab_model_feature_count(m, &mut d), ShiftlabStatus::Ok);
        assert_eq!(d, 1);

        let mut needed = 0usize;
        assert_eq!(
            shiftlab_model_hash(m, ptr::null_mut(), 0, &mut needed),
            ShiftlabStatus::BufferTooSmall
        );
        assert_eq!(needed, 65);
        let mut buf = vec![0 as std::ffi::c_char; needed];
        assert_eq!(
            shiftlab_model_hash(m, buf.as_mut_ptr(), buf.len(), ptr::null_mut()),
            ShiftlabStatus::Ok
        );
        let hash = CStr::from_ptr(buf.as_ptr()).to_str().unwrap().to_string();
        let on_disk = Checkpoint::load(dir.path().join("run").join("model.ckpt.json")).unwrap();
        assert_eq!(hash, on_disk.hash().unwrap());

        let n = 50;
        let mut x = vec![f64::NAN; n * d];
        let mut y = vec![f64::NAN; n];
        let t = c("t");
        assert_eq!(
            shiftlab_model_generate(m, t.as_ptr(), n, 7, x.as_mut_ptr(), y.as_mut_ptr()),
            ShiftlabStatus::Ok,
            "{}",
            last_error()
        );
        assert!(x.iter().all(|v| v.is_finite()));
        assert!(y.iter().all(|&v| v == 0.0 || v == 1.0));
        let mut x2 = vec![0.0; n * d];
        let mut y2 = vec![0.0; n];
        shiftlab_model_generate(m, t.as_ptr(), n, 7, x2.as_mut_ptr(), y2.as_mut_ptr());
        assert_eq!(x, x2);
        assert_eq!(y, y2);

        let copy = c(dir.path().join("copy.json").to_str().unwrap());
        assert_eq!(shiftlab_model_save(m, copy.as_ptr()), ShiftlabStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(
            shiftlab_model_load(copy.as_ptr(), &mut back),
            ShiftlabStatus::Ok
        );
        let mut buf2 = vec![0 as std::ffi::c_char; 65];
        shiftlab_model_hash(back, buf2.as_mut_ptr(), 65, ptr::null_mut());
        assert_eq!(buf, buf2);
        shiftlab_model_free(back);
        shiftlab_model_free(m);
    }
}

#[test]
fn errors_are_reported_not_raised() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(
            shiftlab_model_load(ptr::null(), &mut m),
            ShiftlabStatus::NullPointer
        );
        assert!(last_error().contains("path"));

        let missing = c(dir.path().join("none.json").to_str().unwrap());
        assert_eq!(
            shiftlab_model_load(missing.as_ptr(), &mut m),
            ShiftlabStatus::Io
        );
        assert!(m.is_null());
        assert!(!last_error().is_empty());

        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(
            shiftlab_model_load(bad.as_ptr() as *const std::ffi::c_char, &mut m),
            ShiftlabStatus::InvalidUtf8
        );

        let m = trained(dir.path());
        assert!(last_error().is_empty());
        let mut x = [0.0; 4];
        let mut y = [0.0; 4];
        let nope = c("nowhere");
        assert_eq!(
            shiftlab_model_generate(m, nope.as_ptr(), 4, 0, x.as_mut_ptr(), y.as_mut_ptr()),
            ShiftlabStatus::InvalidArgument
        );
        assert!(last_error().contains("nowhere"), "{}", last_error());
        shiftlab_model_free(m);
        shiftlab_model_free(ptr::null_mut());

        let mut kind = ShiftlabModelKind::Gdan;
        assert_eq!(
            shiftlab_model_kind(ptr::null(), &mut kind),
            ShiftlabStatus::NullPointer
        );
    }
}

#[test]
fn tampered_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = trained(dir.path());
    unsafe { shiftlab_model_free(m) };
    let path = dir.path().join("run").join("model.ckpt.json");
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["model"]["config"]["alpha"] = serde_json::json!(0.5);
    std::fs::write(&path, v.to_string()).unwrap();
    let p = c(path.to_str().unwrap());
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { shiftlab_model_load(p.as_ptr(), &mut out) },
        ShiftlabStatus::Checkpoint
    );
    assert!(last_error().contains("hash"));
}

#[test]
fn mmd_of_identical_samples_is_zero() {
    let p: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
    let q: Vec<f64> = p.iter().map(|v| v + 2.0).collect();
    let mut same = f64::NAN;
    let mut apart = f64::NAN;
    unsafe {
        assert_eq!(
            shiftlab_mmd2(p.as_ptr(), 20, p.as_ptr(), 20, 2, &mut same),
            ShiftlabStatus::Ok
        );
        assert_eq!(
            shiftlab_mmd2(p.as_ptr(), 20, q.as_ptr(), 20, 2, &mut apart),
            ShiftlabStatus::Ok
        );
        assert_eq!(
            shiftlab_mmd2(ptr::null(), 20, q.as_ptr(), 20, 2, &mut apart),
            ShiftlabStatus::NullPointer
        );
    }
    assert!(same.abs() < 1e-12);
    assert!(apart > 0.1);
}

#[test]
fn discovery_returns_graph_json() {
    // Y -> X1 -> X2 on one domain.
    let mut rng = shiftlab::numerics::Rng::new(11);
    let n = 1500;
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let yy = if rng.uniform() < 0.5 { 0.0 } else { 1.0 };
        let x1 = rng.normal(2.0 * yy, 1.0);
        let x2 = rng.normal(0.8 * x1, 1.0);
        y.push(yy);
        x.push(x1);
        x.push(x2);
    }
    let mut needed = 0usize;
    unsafe {
        let s = shiftlab_discover_json(
            x.as_ptr(),
            y.as_ptr(),
            ptr::null(),
            n,
            2,
            0.05,
            ptr::null_mut(),
            0,
            &mut needed,
        );
        assert_eq!(s, ShiftlabStatus::BufferTooSmall);
        let mut buf = vec![0 as std::ffi::c_char; needed];
        let s = shiftlab_discover_json(
            x.as_ptr(),
            y.as_ptr(),
            ptr::null(),
            n,
            2,
            0.05,
            buf.as_mut_ptr(),
            buf.len(),
            ptr::null_mut(),
        );
        assert_eq!(s, ShiftlabStatus::Ok, "{}", last_error());
        let json: serde_json::Value =
            serde_json::from_str(CStr::from_ptr(buf.as_ptr()).to_str().unwrap()).unwrap();
        let directed = json["directed"].as_array().unwrap();
        assert!(directed.contains(&serde_json::json!(["Y", "X1"])), "{json}");
        assert!(
            directed.contains(&serde_json::json!(["X1", "X2"])),
            "{json}"
        );
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(shiftlab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/shiftlab.h");
    let text = std::fs::read_to_string(&header).unwrap();
    let src = include_str!("../src/lib.rs");
    for line in src.lines().filter(|l| l.contains("extern \"C\" fn ")) {
        let name = line.split("fn ").nth(1).unwrap().split('(').next().unwrap();
        assert!(
            text.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let dir = tempfile::tempdir().unwrap();
    let main = dir.path().join("main.c");
    std::fs::write(
        &main,
        "#include \"shiftlab.h\"\nint main(void) { ShiftlabModel *m = 0; ShiftlabStatus s = shiftlab_model_load(\"x\", &m); return s == SHIFTLAB_STATUS_OK; }\n",
    )
    .unwrap();
    match Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&main)
        .output()
    {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(e) => eprintln!("skipping C compile check: {e}"),
    }
}
