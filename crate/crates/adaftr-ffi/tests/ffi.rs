//! Exercises the C ABI through the exported symbols: train, load, predict,
//! evaluate and the error reporting contract.

use std::ffi::{CStr, CString};

use adaftr::datasets::{synth_generate, write_csv, GenConfig};
use adaftr_ffi::*;

fn make_files(dir: &std::path::Path) -> (CString, CString) {
    let gen = GenConfig {
        records: 600,
        fields: 3,
        cardinality: 8,
        users: 30,
        ..GenConfig::default()
    };
    let dataset = synth_generate(&gen, 11).unwrap();
    let data = dir.join("data.csv");
    let schema = dir.join("schema.txt");
    write_csv(&dataset, &data).unwrap();
    dataset.schema.save(&schema).unwrap();
    (
        CString::new(data.to_str().unwrap()).unwrap(),
        CString::new(schema.to_str().unwrap()).unwrap(),
    )
}

#[test]
fn train_load_predict_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = make_files(dir.path());
    let ckpt = CString::new(dir.path().join("model.ckpt").to_str().unwrap()).unwrap();
    let config = CString::new(
        "epochs=1\nbatch_size=128\nembed_dim=4\ntower_hidden_sizes=8,4\nrelatedness_hidden_sizes=4\nexpert_count=2\n",
    )
    .unwrap();

    let status = unsafe { adaftr_train(data.as_ptr(), schema.as_ptr(), config.as_ptr(), ckpt.as_ptr()) };
    assert_eq!(status, AdaftrStatus::AdaftrOk);

    let model = unsafe { adaftr_model_load(ckpt.as_ptr()) };
    assert!(!model.is_null());
    let dataset = unsafe { adaftr_dataset_load(data.as_ptr(), schema.as_ptr()) };
    assert!(!dataset.is_null());
    assert_eq!(adaftr_dataset_len(dataset), 600);

    let ids = [1usize, 2, 3];
    let (mut y_ctr, mut y_cvr) = (0.0f64, 0.0f64);
    let status =
        unsafe { adaftr_model_predict(model, ids.as_ptr(), ids.len(), &mut y_ctr, &mut y_cvr) };
    assert_eq!(status, AdaftrStatus::AdaftrOk);
    assert!(y_ctr > 0.0 && y_ctr < 1.0);
    assert!(y_cvr > 0.0 && y_cvr < 1.0);

    let json = unsafe { adaftr_model_evaluate_json(model, dataset, false) };
    assert!(!json.is_null());
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap();
    let value: serde_json::Value = serde_json::from_str(text).unwrap();
    assert!(value.get("auc_ctr").is_some());
    unsafe {
        adaftr_string_free(json);
        adaftr_dataset_free(dataset);
        adaftr_model_free(model);
    }
}

#[test]
fn errors_set_message_and_codes() {
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    let model = unsafe { adaftr_model_load(missing.as_ptr()) };
    assert!(model.is_null());
    let msg = adaftr_last_error();
    assert!(!msg.is_null());
    let text = unsafe { CStr::from_ptr(msg) }.to_str().unwrap();
    assert!(text.contains("model.ckpt"), "{}", text);

    let status = unsafe {
        adaftr_train(
            std::ptr::null(),
            std::ptr::null(),
            std::ptr::null(),
            std::ptr::null(),
        )
    };
    assert_eq!(status, AdaftrStatus::AdaftrInvalidArgument);
}

#[test]
fn predict_rejects_wrong_arity_and_range() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = make_files(dir.path());
    let ckpt = CString::new(dir.path().join("model.ckpt").to_str().unwrap()).unwrap();
    let config = CString::new(
        "epochs=1\nbatch_size=128\nembed_dim=4\ntower_hidden_sizes=8,4\nrelatedness_hidden_sizes=4\nexpert_count=2\n",
    )
    .unwrap();
    let status = unsafe { adaftr_train(data.as_ptr(), schema.as_ptr(), config.as_ptr(), ckpt.as_ptr()) };
    assert_eq!(status, AdaftrStatus::AdaftrOk);
    let model = unsafe { adaftr_model_load(ckpt.as_ptr()) };
    assert!(!model.is_null());

    let (mut a, mut b) = (0.0, 0.0);
    let short = [0usize; 2];
    let status = unsafe { adaftr_model_predict(model, short.as_ptr(), 2, &mut a, &mut b) };
    assert_eq!(status, AdaftrStatus::AdaftrInvalidArgument);

    let out_of_range = [999usize, 0, 0];
    let status = unsafe { adaftr_model_predict(model, out_of_range.as_ptr(), 3, &mut a, &mut b) };
    assert_eq!(status, AdaftrStatus::AdaftrInvalidArgument);

    unsafe { adaftr_model_free(model) };
}

#[test]
fn version_is_nonempty() {
    let v = unsafe { CStr::from_ptr(adaftr_version()) }.to_str().unwrap();
    assert!(!v.is_empty());
}
