use mtfs::data::{generate_synthetic, load_csv_from_reader, write_csv, Schema, SynthSpec};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn written_csv_reads_back_identically(seed in 0u64..1_000, n in 2usize..40, m in 1usize..8, noise in 0.0f64..3.0) {
        let spec = SynthSpec { n, m, k_shared: m.min(2), noise_std: noise, seed, ..SynthSpec::default() };
        let (d, _) = generate_synthetic(&spec).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let back = load_csv_from_reader(buf.as_slice(), &Schema::for_dataset(&d)).unwrap();
        prop_assert_eq!(back, d);
    }
}
