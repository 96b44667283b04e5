use std::time::Instant;

use xrecolor::gradcheck::{run_gradcheck, suite_names, GRADCHECK_TOLERANCE};

const REQUIRED: [&str; 27] = [
    "linear",
    "matmul",
    "add_broadcast",
    "add",
    "sub",
    "mul",
    "mul_const",
    "affine",
    "exp",
    "selu",
    "gelu",
    "sigmoid",
    "square",
    "softmax",
    "mean",
    "layer_norm",
    "slice_concat",
    "gather",
    "conv3x3",
    "lsa_attention",
    "ff_block",
    "loss_rec",
    "loss_mmd",
    "loss_sil",
    "loss_srgb",
    "embedder_reduced",
    "small_uvit_reduced",
];

#[test]
fn every_operation_has_a_suite() {
    let names = suite_names();
    for op in REQUIRED {
        assert!(names.contains(&op), "no gradient suite for {op}");
    }
}

#[test]
fn all_suites_pass_at_double_precision() {
    let start = Instant::now();
    let report = run_gradcheck(0, &[]).unwrap();
    assert_eq!(GRADCHECK_TOLERANCE, 1e-4);
    for s in &report.suites {
        assert!(s.max_rel_error.is_finite(), "{}", s.name);
        assert!(s.max_rel_error < 1e-4, "{}: {:e}", s.name, s.max_rel_error);
    }
    assert!(report.passed);
    assert!(start.elapsed().as_secs_f64() < 300.0);
}

#[test]
fn a_corrupted_gradient_is_named() {
    let report = run_gradcheck(1, &["gelu".to_string(), "loss_mmd".to_string()]).unwrap();
    assert!(!report.passed);
    assert_eq!(report.failures(), vec!["gelu", "loss_mmd"]);
}
