use ckconv::data::{gen_adding_problem, gen_copy_memory, load_csv, random_drop, subsample, write_csv, Labels, SequenceBatch, TokenEncoding};
use ckconv::tensor::Tensor;
use proptest::prelude::*;

/// A single length-`n` sequence holding the 1-based positions `1, 2, …, n`.
fn positions(n: usize) -> SequenceBatch {
    let values = Tensor::new(&[1, 1, n], (1..=n).map(|i| i as f64).collect()).unwrap();
    SequenceBatch::regular(values, Labels::None).unwrap()
}

#[test]
fn subsampling_182_steps_lists_expected_indices() {
    let batch = positions(182);
    for (n, head, tail, len) in [
        (1, [1.0, 2.0, 3.0], [180.0, 181.0, 182.0], 182),
        (2, [1.0, 3.0, 5.0], [177.0, 179.0, 181.0], 91),
        (4, [1.0, 5.0, 9.0], [173.0, 177.0, 181.0], 46),
        (8, [1.0, 9.0, 17.0], [161.0, 169.0, 177.0], 23),
    ] {
        let s = subsample(&batch, n).unwrap();
        let v = s.values.data();
        assert_eq!(v.len(), len, "n={n}");
        assert_eq!(v[..3], head, "n={n}");
        assert_eq!(v[len - 3..], tail, "n={n}");
        let expected: Vec<f64> = (0..len).map(|i| (1 + i * n) as f64).collect();
        assert_eq!(v, &expected[..], "n={n}");
        // time stamps keep the original unitary steps
        assert_eq!(s.times[0], (0..len).map(|i| (i * n) as f64).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn subsampling_composes(len in 1usize..300, a in 1usize..6, b in 1usize..6) {
        let batch = positions(len);
        let twice = subsample(&subsample(&batch, a).unwrap(), b).unwrap();
        prop_assert_eq!(twice, subsample(&batch, a * b).unwrap());
    }

    #[test]
    fn drop_keeps_close_to_one_minus_p(seed in any::<u64>(), p in 0.05f64..0.9) {
        let batch = gen_adding_problem(200, 20, seed).unwrap();
        let dropped = random_drop(&batch, p, seed ^ 1).unwrap();
        let n = 4000.0;
        let kept = dropped.kept_fraction();
        // six binomial standard deviations
        let sd = (p * (1.0 - p) / n).sqrt();
        prop_assert!((kept - (1.0 - p)).abs() < 6.0 * sd, "kept {kept} for p {p}");
        prop_assert!(dropped.validate().is_ok());
        for i in 0..dropped.mask.numel() {
            let (b, t) = (i / 200, i % 200);
            if dropped.mask.data()[i] == 1.0 {
                prop_assert_eq!(dropped.values.at(&[b, 0, t]), batch.values.at(&[b, 0, t]));
            }
        }
    }

    #[test]
    fn drop_is_seeded(seed in any::<u64>()) {
        let batch = gen_copy_memory(30, 4, seed, TokenEncoding::Integer).unwrap();
        prop_assert_eq!(random_drop(&batch, 0.3, seed).unwrap(), random_drop(&batch, 0.3, seed).unwrap());
    }

    #[test]
    fn csv_round_trip(seed in any::<u64>(), t in 2usize..40, b in 1usize..5, p in 0.0f64..0.6) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.csv");
        let batch = random_drop(&gen_adding_problem(t, b, seed).unwrap(), p, seed).unwrap();
        let schema = write_csv(&path, &batch).unwrap();
        let back = load_csv(&path, &schema).unwrap();
        prop_assert_eq!(&back.mask, &batch.mask);
        prop_assert_eq!(&back.times, &batch.times);
        prop_assert_eq!(back.values.data(), batch.values.data());
        prop_assert_eq!(back.labels, batch.labels);
    }

    #[test]
    fn adding_targets_sum_the_marked_values(seed in any::<u64>(), t in 2usize..120) {
        let batch = gen_adding_problem(t, 8, seed).unwrap();
        let Labels::Values(y) = &batch.labels else { panic!("adding labels") };
        for b in 0..8 {
            let marked: f64 = (0..t).filter(|&i| batch.values.at(&[b, 1, i]) == 1.0).map(|i| batch.values.at(&[b, 0, i])).sum();
            prop_assert_eq!(marked, y.data()[b]);
        }
    }
}
