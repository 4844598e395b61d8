//! Property tests for the structural invariants: splits partition the
//! row range, interval assignment partitions every group, interpolation
//! preserves one-hot block sums, and MA never exceeds MC.

use mcfair::audit::{interval_membership, ma_alpha, mc_alpha};
use mcfair::dataset::{generate_synthetic, split, SplitSpec};
use mcfair::groups::{members, GroupCollection, GroupSpec, Setting};
use mcfair::matrix::Matrix;
use mcfair::mixup::interpolate;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_the_row_range(
        n in 20usize..400,
        train_pct in 30u32..80,
        postproc in 0.0f64..0.9,
        seed in any::<u64>(),
    ) {
        let train = train_pct as f64 / 100.0;
        let rest = (1.0 - train) / 2.0;
        let spec = SplitSpec::new(train, rest, 1.0 - train - rest, postproc, seed).unwrap();
        let ds = generate_synthetic(n, 3, 1);
        let s = split(&ds, &spec).unwrap();
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.postproc)
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        // postproc is carved from the training pool only
        let expected_pp =
            (postproc * (s.train.len() + s.postproc.len()) as f64).ceil() as usize;
        prop_assert_eq!(s.postproc.len(), expected_pp);
    }

    #[test]
    fn interval_assignment_partitions_and_respects_bounds(
        probs in prop::collection::vec(0.0f64..=1.0, 1..120),
        d in 1usize..40,
    ) {
        let rows: Vec<usize> = (0..probs.len()).collect();
        let buckets = interval_membership(&probs, &rows, d);
        prop_assert_eq!(buckets.len(), d + 1);
        let mut seen: Vec<usize> = buckets.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, rows.clone());
        for (v, bucket) in buckets.iter().enumerate() {
            for &r in bucket {
                prop_assert!(v as f64 / d as f64 <= probs[r]);
                if v < d {
                    prop_assert!(probs[r] < (v + 1) as f64 / d as f64);
                }
            }
        }
    }

    #[test]
    fn interpolation_preserves_one_hot_block_sums(
        t in 0.0f64..=1.0,
        a_hot in 0usize..4,
        b_hot in 0usize..4,
    ) {
        let mut left = vec![0.0; 4];
        left[a_hot] = 1.0;
        let mut right = vec![0.0; 4];
        right[b_hot] = 1.0;
        let xa = Matrix::from_vec(1, 4, left);
        let xb = Matrix::from_vec(1, 4, right);
        let (x, y) = interpolate(&xa, &[1.0], &xb, &[0.0], t).unwrap();
        let sum: f64 = x.data.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!((y[0] - t).abs() < 1e-12);
    }

    #[test]
    fn ma_alpha_never_exceeds_mc_alpha(
        seed in any::<u64>(),
        d in 1usize..20,
    ) {
        let ds = generate_synthetic(300, 3, seed);
        let probs: Vec<f64> = {
            use rand::Rng;
            let mut rng = mcfair::rng::stream_rng(seed, mcfair::rng::Stream::DataGen);
            (0..ds.n_rows()).map(|_| rng.gen()).collect()
        };
        let collection = GroupCollection {
            groups: vec![
                GroupSpec::new("dis", vec![("dis".into(), 1.0)]).unwrap(),
                GroupSpec::new("r0", vec![("race".into(), 0.0)]).unwrap(),
                GroupSpec::new("r1d", vec![("race".into(), 1.0), ("dis".into(), 1.0)]).unwrap(),
            ],
            setting: Setting::All,
        };
        let idx: Vec<usize> = (0..ds.n_rows()).collect();
        let ma = ma_alpha(&probs, &ds.outcomes, &ds, &idx, &collection).unwrap();
        let mc = mc_alpha(&probs, &ds.outcomes, &ds, &idx, &collection, d).unwrap();
        prop_assert!(ma.alpha <= mc.alpha + 1e-12);
    }

    #[test]
    fn members_is_a_sorted_subset(
        seed in any::<u64>(),
        race in 0u32..3,
    ) {
        let ds = generate_synthetic(200, 3, seed);
        let idx: Vec<usize> = (0..ds.n_rows()).step_by(3).collect();
        let g = GroupSpec::new("g", vec![("race".into(), race as f64)]).unwrap();
        let m = members(&g, &ds, &idx).unwrap();
        prop_assert!(m.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(m.iter().all(|r| idx.contains(r)));
    }
}
