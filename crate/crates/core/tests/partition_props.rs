use hew_core::data::{assign_horizons, partition_clients, synthetic_classification, HorizonMode, PartitionMode, PartitionSpec};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partitions_are_disjoint_nonempty_covers(
        n in 20usize..400,
        k in 1usize..20,
        alpha in 0.05f64..5.0,
        dirichlet in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let ds = synthetic_classification(n, 3, 4, 1.0, seed ^ 0x5a).unwrap();
        let mode = if dirichlet { PartitionMode::Dirichlet { alpha } } else { PartitionMode::Even };
        let parts = partition_clients(&ds, &PartitionSpec { mode, n_clients: k, seed }).unwrap();
        prop_assert_eq!(parts.len(), k);
        let mut seen = vec![false; n];
        for p in &parts {
            prop_assert!(!p.is_empty());
            for &j in p {
                prop_assert!(!seen[j], "index {} assigned twice", j);
                seen[j] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        if !dirichlet {
            let (lo, hi) = parts.iter().fold((usize::MAX, 0), |(a, b), p| (a.min(p.len()), b.max(p.len())));
            prop_assert!(hi - lo <= 1);
        }
    }

    #[test]
    fn random_horizons_come_from_the_menu(k in 1usize..50, seed in any::<u64>()) {
        let values = vec![1, 2, 4, 8];
        let h = assign_horizons(k, &HorizonMode::Random { values: values.clone(), seed }).unwrap();
        prop_assert_eq!(h.len(), k);
        prop_assert!(h.iter().all(|x| values.contains(x)));
        prop_assert_eq!(h, assign_horizons(k, &HorizonMode::Random { values, seed }).unwrap());
    }
}
