use proptest::prelude::*;

use multicarve::multi::{aggregate_fixed, aggregate_optimized};

fn pvalues() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(1.0), 1e-6..1.0f64], 1..60)
}

/// `min(1, q / gamma)` with `q` the `ceil(gamma B)`-th smallest value, by
/// sorting on every call.
fn brute_fixed(p: &[f64], gamma: f64) -> f64 {
    let mut s = p.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = ((gamma * p.len() as f64 - 1e-9).ceil() as usize).clamp(1, p.len());
    (s[k - 1] / gamma).min(1.0)
}

proptest! {
    #[test]
    fn fixed_is_conservative(p in pvalues(), gamma in 0.01..=1.0f64) {
        let min = p.iter().cloned().fold(f64::INFINITY, f64::min);
        let v = aggregate_fixed(&p, gamma);
        prop_assert!(v >= min && v <= 1.0);
        prop_assert!((v - brute_fixed(&p, gamma)).abs() < 1e-12);
    }

    #[test]
    fn optimized_matches_dense_gamma_grid(p in pvalues(), gamma_min in 0.02..0.5f64) {
        let factor = 1.0 - gamma_min.ln();
        let grid_min = (0..=4000)
            .map(|i| gamma_min + (1.0 - gamma_min) * i as f64 / 4000.0)
            .map(|g| brute_fixed(&p, g))
            .fold(f64::INFINITY, f64::min);
        let v = aggregate_optimized(&p, gamma_min);
        let min = p.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(v <= 1.0);
        prop_assert!(v >= (factor * min).min(1.0) - 1e-15);
        // jump points are never worse than any grid point
        prop_assert!(v <= (factor * grid_min).min(1.0) + 1e-12);
    }

    #[test]
    fn aggregates_ignore_split_order(p in pvalues(), gamma in 0.05..=1.0f64, seed in any::<u64>()) {
        let mut q = p.clone();
        let mut state = seed;
        for i in (1..q.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            q.swap(i, (state >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(aggregate_fixed(&p, gamma), aggregate_fixed(&q, gamma));
        prop_assert_eq!(aggregate_optimized(&p, gamma), aggregate_optimized(&q, gamma));
    }

    #[test]
    fn raising_one_pvalue_never_lowers(p in pvalues(), idx in any::<prop::sample::Index>(), bump in 0.0..1.0f64, gamma in 0.05..=1.0f64) {
        let i = idx.index(p.len());
        let mut q = p.clone();
        q[i] = (q[i] + bump).min(1.0);
        prop_assert!(aggregate_fixed(&q, gamma) >= aggregate_fixed(&p, gamma));
        prop_assert!(aggregate_optimized(&q, gamma) >= aggregate_optimized(&p, gamma));
    }
}
