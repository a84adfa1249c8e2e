mod common;

#[test]
fn tape_gradients_match_central_differences() {
    let mut failed = Vec::new();
    for (name, err) in common::gradcheck_suite() {
        println!("{name:<36} max rel err {err:.2e}");
        if !(err < common::FD_TOL) {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "gradient checks failed: {failed:?}");
}
