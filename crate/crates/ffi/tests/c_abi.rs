use std::ffi::{CStr, CString};
use std::ptr;

use stemil_ffi::*;

fn last_error() -> String {
    let p = stemil_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn synth(bags: usize, seed: u64) -> *mut StemilDataset {
    let mut ds = ptr::null_mut();
    assert_eq!(
        unsafe { stemil_dataset_synth(bags, 10, seed, &mut ds) },
        StemilStatus::Ok
    );
    ds
}

const SMALL: &str = r#"{"T": 4, "h": 3, "epochs": 30, "batch_size": 6, "lr": 0.1}"#;

#[test]
fn train_save_load_predict() {
    let ds = synth(24, 1);
    let (mut n, mut m) = (0usize, 0usize);
    unsafe {
        assert_eq!(stemil_dataset_num_bags(ds, &mut n), StemilStatus::Ok);
        assert_eq!(stemil_dataset_feature_count(ds, &mut m), StemilStatus::Ok);
    }
    assert_eq!((n, m), (24, 10));

    let cfg = CString::new(SMALL).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { stemil_train(ds, cfg.as_ptr(), &mut model) }, StemilStatus::Ok);

    let mut probs = vec![0.0; n];
    assert_eq!(
        unsafe { stemil_model_predict_dataset(model, ds, probs.as_mut_ptr(), n) },
        StemilStatus::Ok
    );
    assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    let mut loaded = ptr::null_mut();
    let mut again = vec![0.0; n];
    unsafe {
        assert_eq!(stemil_model_save(model, path.as_ptr()), StemilStatus::Ok);
        assert_eq!(stemil_model_load(path.as_ptr(), &mut loaded), StemilStatus::Ok);
        assert_eq!(
            stemil_model_predict_dataset(loaded, ds, again.as_mut_ptr(), n),
            StemilStatus::Ok
        );
    }
    assert_eq!(probs, again);

    // Single bag through the raw-values entry point.
    let bag = [0.7; 20];
    let mut p = -1.0;
    assert_eq!(
        unsafe { stemil_model_predict_bag(loaded, bag.as_ptr(), 2, 10, &mut p) },
        StemilStatus::Ok
    );
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(
        unsafe { stemil_model_predict_bag(loaded, bag.as_ptr(), 2, 9, &mut p) },
        StemilStatus::Dimension
    );
    assert!(last_error().contains("expected 10"));

    unsafe {
        stemil_model_free(model);
        stemil_model_free(loaded);
        stemil_dataset_free(ds);
    }
}

#[test]
fn cross_validate_returns_metrics_json() {
    let ds = synth(20, 2);
    let cfg = CString::new(r#"{"T": 3, "h": 2, "epochs": 5, "batch_size": 4, "folds": 4}"#).unwrap();
    let mut json = ptr::null_mut();
    assert_eq!(
        unsafe { stemil_cross_validate(ds, cfg.as_ptr(), &mut json) },
        StemilStatus::Ok
    );
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe {
        stemil_string_free(json);
        stemil_dataset_free(ds);
    }
    for key in [
        "\"folds\"",
        "\"mean\"",
        "\"std\"",
        "\"config\"",
        "\"seed\"",
        "\"runtime_seconds\"",
    ] {
        assert!(text.contains(key), "{key} missing from {text}");
    }
}

#[test]
fn errors_are_reported_not_raised() {
    let mut ds = ptr::null_mut();
    let missing = CString::new("/nonexistent/bags.csv").unwrap();
    assert_eq!(
        unsafe { stemil_dataset_load_csv(missing.as_ptr(), &mut ds) },
        StemilStatus::Io
    );
    assert!(ds.is_null());

    assert_eq!(
        unsafe { stemil_dataset_load_csv(ptr::null(), &mut ds) },
        StemilStatus::NullPointer
    );
    assert!(last_error().contains("path"));

    let ds = synth(10, 3);
    let bad = CString::new(r#"{"trees": 3}"#).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { stemil_train(ds, bad.as_ptr(), &mut model) },
        StemilStatus::Config
    );
    assert!(model.is_null());

    let mut n = 0;
    assert_eq!(unsafe { stemil_dataset_num_bags(ds, &mut n) }, StemilStatus::Ok);
    assert!(stemil_last_error_message().is_null(), "success clears the message");

    let mut empty = ptr::null_mut();
    assert_eq!(
        unsafe { stemil_dataset_synth(0, 10, 0, &mut empty) },
        StemilStatus::InvalidArgument
    );

    unsafe {
        stemil_dataset_free(ds);
        stemil_dataset_free(ptr::null_mut());
        stemil_model_free(ptr::null_mut());
        stemil_string_free(ptr::null_mut());
    }
}

#[test]
fn checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\"version\": 1, \"config\": ").unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { stemil_model_load(c.as_ptr(), &mut model) },
        StemilStatus::Checkpoint
    );
    std::fs::write(&path, "{\"version\": 99}").unwrap();
    assert_eq!(
        unsafe { stemil_model_load(c.as_ptr(), &mut model) },
        StemilStatus::Checkpoint
    );
    assert!(last_error().contains("99"));
}

#[test]
fn gradcheck_status() {
    let mut err = f64::NAN;
    assert_eq!(unsafe { stemil_gradcheck(0, 1e-4, &mut err) }, StemilStatus::Ok);
    assert!(err <= 1e-4);
    // A negative tolerance cannot be met.
    assert_eq!(
        unsafe { stemil_gradcheck(0, -1.0, &mut err) },
        StemilStatus::GradcheckFailed
    );
}
