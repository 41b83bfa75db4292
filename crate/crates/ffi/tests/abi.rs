use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use scalemix_ffi::*;

/// Two separable 2-D classes, labels 3 and 8.
fn training_set() -> (Vec<f64>, Vec<u32>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..40 {
        let c = i % 2;
        x.push(8.0 * c as f64 + 0.13 * (i % 6) as f64);
        x.push(-0.07 * (i % 5) as f64);
        y.push(if c == 0 { 3 } else { 8 });
    }
    (x, y)
}

fn trained() -> *mut SmmClassifier {
    let (x, y) = training_set();
    let mut h = ptr::null_mut();
    let s = unsafe {
        smm_classifier_train(
            x.as_ptr(),
            y.as_ptr(),
            y.len(),
            2,
            smm_train_options_default(),
            &mut h,
        )
    };
    assert_eq!(s, SmmStatus::Ok, "{:?}", last_error());
    assert!(!h.is_null());
    h
}

fn last_error() -> Option<String> {
    let p = smm_last_error_message();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

#[test]
fn train_classify_and_inspect() {
    let h = trained();
    unsafe {
        assert_eq!(smm_classifier_dim(h), 2);
        assert_eq!(smm_classifier_num_classes(h), 2);
        let mut ids = [0u32; 2];
        assert_eq!(smm_classifier_class_ids(h, ids.as_mut_ptr(), 2), SmmStatus::Ok);
        assert_eq!(ids, [3, 8]);
        let mut short = [0u32; 1];
        assert_eq!(
            smm_classifier_class_ids(h, short.as_mut_ptr(), 1),
            SmmStatus::BufferTooSmall
        );

        let mut label = 0;
        assert_eq!(
            smm_classifier_classify(h, [8.2, 0.0].as_ptr(), 2, &mut label),
            SmmStatus::Ok
        );
        assert_eq!(label, 8);
        assert_eq!(last_error(), None);

        let mut lp = [0.0; 2];
        assert_eq!(
            smm_classifier_log_posterior(h, [0.1, 0.0].as_ptr(), 2, lp.as_mut_ptr(), 2),
            SmmStatus::Ok
        );
        assert!((lp[0].exp() + lp[1].exp() - 1.0).abs() < 1e-12);
        assert!(lp[0] > lp[1]);

        let rows = [0.0, 0.0, 8.0, 0.0, 0.3, -0.1];
        let mut labels = [0u32; 3];
        assert_eq!(
            smm_classifier_classify_batch(h, rows.as_ptr(), 3, 2, labels.as_mut_ptr()),
            SmmStatus::Ok
        );
        assert_eq!(labels, [3, 8, 3]);
        smm_classifier_free(h);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let h = trained();
    unsafe {
        let mut label = 0;
        let s = smm_classifier_classify(h, [1.0, 2.0, 3.0].as_ptr(), 3, &mut label);
        assert_eq!(s, SmmStatus::DimensionMismatch);
        assert!(last_error().unwrap().contains("dimension"));

        assert_eq!(
            smm_classifier_classify(ptr::null(), [1.0].as_ptr(), 1, &mut label),
            SmmStatus::NullPointer
        );
        assert_eq!(
            smm_classifier_classify(h, ptr::null(), 2, &mut label),
            SmmStatus::NullPointer
        );
        assert_eq!(
            smm_classifier_classify(h, [f64::NAN, 0.0].as_ptr(), 2, &mut label),
            SmmStatus::Numeric
        );

        let bad = CString::new("{\"not\": \"a model\"}").unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(smm_classifier_from_json(bad.as_ptr(), &mut out), SmmStatus::Parse);
        assert!(out.is_null());

        let missing = CString::new("/nonexistent/dir/model.json").unwrap();
        assert_eq!(smm_classifier_load(missing.as_ptr(), &mut out), SmmStatus::Io);

        let (x, y) = training_set();
        let opts = SmmTrainOptions {
            nu: -1.0,
            ..smm_train_options_default()
        };
        assert_eq!(
            smm_classifier_train(x.as_ptr(), y.as_ptr(), y.len(), 2, opts, &mut out),
            SmmStatus::InvalidArgument
        );

        let once = SmmTrainOptions {
            max_iters: 1,
            ..smm_train_options_default()
        };
        assert_eq!(
            smm_classifier_train(x.as_ptr(), y.as_ptr(), y.len(), 2, once, &mut out),
            SmmStatus::NotConverged
        );
        assert!(!out.is_null());
        smm_classifier_free(out);

        // A success clears the previous message.
        assert_eq!(
            smm_classifier_classify(h, [0.0, 0.0].as_ptr(), 2, &mut label),
            SmmStatus::Ok
        );
        assert_eq!(last_error(), None);
        smm_classifier_free(h);
        smm_classifier_free(ptr::null_mut());
    }
}

#[test]
fn json_and_file_round_trips_are_exact() {
    let h = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    unsafe {
        let mut json = ptr::null_mut();
        assert_eq!(smm_classifier_to_json(h, &mut json), SmmStatus::Ok);
        let mut copy = ptr::null_mut();
        assert_eq!(smm_classifier_from_json(json, &mut copy), SmmStatus::Ok);

        assert_eq!(smm_classifier_save(copy, path.as_ptr()), SmmStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(smm_classifier_load(path.as_ptr(), &mut loaded), SmmStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(smm_classifier_to_json(loaded, &mut again), SmmStatus::Ok);
        assert_eq!(CStr::from_ptr(json), CStr::from_ptr(again));

        let x = [4.1, -0.2];
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        smm_classifier_log_posterior(h, x.as_ptr(), 2, a.as_mut_ptr(), 2);
        smm_classifier_log_posterior(loaded, x.as_ptr(), 2, b.as_mut_ptr(), 2);
        assert_eq!(a, b);

        smm_string_free(json);
        smm_string_free(again);
        for p in [h, copy, loaded] {
            smm_classifier_free(p);
        }
    }
}

#[test]
fn header_declares_the_interface() {
    let header =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/scalemix.h")).unwrap();
    for name in [
        "typedef struct SmmClassifier SmmClassifier;",
        "SMM_STATUS_DIMENSION_MISMATCH = 5",
        "smm_last_error_message",
        "smm_classifier_train",
        "smm_classifier_load",
        "smm_classifier_save",
        "smm_classifier_to_json",
        "smm_classifier_from_json",
        "smm_classifier_log_posterior",
        "smm_classifier_classify_batch",
        "smm_classifier_free",
        "smm_string_free",
    ] {
        assert!(header.contains(name), "{name}");
    }
}

/// Directory holding the library artifacts of this build.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let lib = artifact_dir().join("libscalemix_ffi.a");
    let has_cc = Command::new("cc")
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success());
    if !has_cc || !lib.exists() {
        eprintln!("skipping: no C compiler or no {}", lib.display());
        return;
    }
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let build = Command::new("cc")
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(
        build.status.success(),
        "{}",
        String::from_utf8_lossy(&build.stderr)
    );
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout), "ok 2 2\n");
}
