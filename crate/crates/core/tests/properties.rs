use lta_core::clustering::{adjusted_rand_index, normalized_mutual_information};
use lta_core::data::forward_sample;
use lta_core::inference::observed_marginal;
use lta_core::synthetic::random_model;
use lta_core::LatentTreeModel;
use proptest::prelude::*;

fn max_difference(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn rerooting_keeps_the_observed_distribution(seed in 0u64..1_000_000, n in 3usize..8, pick in 0usize..16) {
        let m = random_model(seed, n, 3);
        let latents = m.latent_nodes();
        prop_assume!(!latents.is_empty());
        let h = latents[pick % latents.len()];
        let r = m.reroot(m.name(h)).unwrap();
        prop_assert_eq!(r.root(), h);
        prop_assert!(r.validate().is_empty());
        let a = observed_marginal(&m).unwrap();
        let b = observed_marginal(&r).unwrap();
        prop_assert!(max_difference(&a.probabilities, &b.probabilities) <= 1e-12);
    }

    #[test]
    fn json_round_trip_is_exact(seed in 0u64..1_000_000, n in 3usize..9) {
        let m = random_model(seed, n, 3);
        let back = LatentTreeModel::from_json(&m.to_json()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn projections_compose(seed in 0u64..1_000_000, keep in proptest::collection::vec(any::<bool>(), 8)) {
        let m = random_model(seed, 8, 2);
        let data = forward_sample(&m, 300, seed).unwrap();
        let names = data.variable_names();
        let outer: Vec<&str> = names.iter().zip(&keep).filter(|(_, &k)| k).map(|(n, _)| *n).collect();
        prop_assume!(outer.len() >= 2);
        let inner = &outer[..outer.len() / 2 + 1];
        let twice = data.project(&outer).unwrap().project(inner).unwrap();
        let once = data.project(inner).unwrap();
        prop_assert_eq!(twice.total_weight(), data.total_weight());
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn regularizing_keeps_the_observed_distribution(seed in 0u64..1_000_000, n in 3usize..8) {
        let m = random_model(seed, n, 4);
        let r = m.regularize();
        prop_assert!(r.is_regular());
        prop_assert!(r.dimension() <= m.dimension());
        let a = observed_marginal(&m).unwrap();
        let b = observed_marginal(&r).unwrap();
        prop_assert!(max_difference(&a.probabilities, &b.probabilities) <= 1e-9);
    }

    #[test]
    fn nmi_is_symmetric_and_ignores_label_names(
        a in proptest::collection::vec(0usize..4, 2..60),
        b_seed in proptest::collection::vec(0usize..3, 60),
        shift in 1usize..5,
    ) {
        let b: Vec<usize> = b_seed[..a.len()].to_vec();
        let ab = normalized_mutual_information(&a, &b).unwrap();
        let ba = normalized_mutual_information(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&ab));
        let relabelled: Vec<usize> = a.iter().map(|x| (x + shift) % 4 + 10).collect();
        let moved = normalized_mutual_information(&relabelled, &b).unwrap();
        prop_assert!((ab - moved).abs() < 1e-12);
        let ari = adjusted_rand_index(&a, &b).unwrap();
        let ari_moved = adjusted_rand_index(&relabelled, &b).unwrap();
        prop_assert!((ari - ari_moved).abs() < 1e-12);
    }
}
