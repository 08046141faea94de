use std::collections::BTreeSet;

use warpcell_core::gradsuite::{
    corrupted_entry, gradcheck_suite, registered_names, registry, run_suite, TOLERANCE,
};

#[test]
fn default_suite_passes() {
    let rep = gradcheck_suite(42).unwrap();
    for r in &rep.results {
        assert!(
            r.max_rel_error <= TOLERANCE,
            "{}: {:e}",
            r.op_name,
            r.max_rel_error
        );
    }
    assert!(rep.passed);
}

#[test]
fn report_lists_each_op_once() {
    let rep = gradcheck_suite(7).unwrap();
    let names: Vec<&str> = rep.results.iter().map(|r| r.op_name.as_str()).collect();
    let unique: BTreeSet<&str> = names.iter().copied().collect();
    assert_eq!(unique.len(), names.len());
    assert_eq!(names, registered_names());
    for required in [
        "conv2d",
        "sigmoid",
        "tanh",
        "bilinear_sample",
        "interpolant_thin_plate",
        "sparse_warp",
        "roi_pool",
        "attention_pool",
        "correspondence_head",
        "convlstm_step",
        "warplstm_step",
        "trajlstm_step",
    ] {
        assert!(unique.contains(required), "missing {required}");
    }
}

#[test]
fn sparse_warp_is_checked_against_map_and_displacements() {
    let rep = gradcheck_suite(1).unwrap();
    let sw = rep
        .results
        .iter()
        .find(|r| r.op_name == "sparse_warp")
        .unwrap();
    assert_eq!(sw.per_argument.len(), 2);
}

#[test]
fn corrupted_backward_fails_the_suite() {
    let mut entries = registry(3).unwrap();
    entries.push(corrupted_entry(3));
    let rep = run_suite(&entries, 3).unwrap();
    assert!(!rep.passed);
    let bad = rep.results.last().unwrap();
    assert!(bad.max_rel_error > TOLERANCE);
}

#[test]
fn suite_is_deterministic() {
    assert_eq!(gradcheck_suite(11).unwrap(), gradcheck_suite(11).unwrap());
}

#[test]
fn every_op_passes_at_ten_points() {
    for seed in 0..10 {
        let rep = gradcheck_suite(seed).unwrap();
        for r in &rep.results {
            assert!(
                r.max_rel_error <= TOLERANCE,
                "seed {seed} {}: {:e}",
                r.op_name,
                r.max_rel_error
            );
        }
    }
}
