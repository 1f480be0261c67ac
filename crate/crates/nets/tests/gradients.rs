use tapsense_nets::gradcheck::op_suite;

#[test]
fn every_operation_matches_finite_differences() {
    let report = op_suite(20, 42).unwrap();
    for r in &report {
        println!("{:<18} shapes {:>3}  max rel error {:.3e}", r.op, r.shapes, r.max_rel_error);
    }
    for r in &report {
        assert!(r.max_rel_error < 1e-4, "{} relative error {}", r.op, r.max_rel_error);
    }
}
