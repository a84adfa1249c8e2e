mod common;

#[test]
fn submanifold_conv_on_dense_block_matches_dense_conv() {
    for seed in 0..20 {
        let err = common::sparse_dense_error(seed, 8, 3, 4);
        assert!(err < 1e-5, "seed {seed}: max abs err {err:e}");
    }
}

#[test]
fn single_channel_small_block() {
    assert!(common::sparse_dense_error(99, 3, 1, 1) < 1e-12);
}
