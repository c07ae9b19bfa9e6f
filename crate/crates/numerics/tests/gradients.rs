use anchormt_numerics::gradcheck::op_suite;

#[test]
fn every_op_matches_finite_differences() {
    let reports = op_suite(20, 7).unwrap();
    assert_eq!(reports.len(), 14);
    for r in &reports {
        assert!(r.trials >= 20);
        assert!(
            r.max_relative_error < 1e-4,
            "{}: relative error {:e}",
            r.op,
            r.max_relative_error
        );
    }
}
