use pneumox_core::gradcheck::{layer_suite, patchnet_suite};

#[test]
fn layer_adjoints_across_twenty_seeds() {
    for seed in 0..20 {
        let rows = layer_suite(seed).unwrap();
        assert_eq!(rows.len(), 8);
        for (name, err) in rows {
            assert!(err < 1e-5, "{name}, seed {seed}: {err:e}");
        }
    }
}

#[test]
fn tiny_patchnet_end_to_end_across_twenty_seeds() {
    for seed in 0..20 {
        let err = patchnet_suite(seed).unwrap();
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}
