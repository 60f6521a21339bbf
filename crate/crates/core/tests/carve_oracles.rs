use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use multicarve::carve::{carve_pvalue_selected, group_pvalue, prepare_selected, CarveTask, SigmaMode, Side, Target, View};
use multicarve::gauss::truncnorm::norm_sf;
use multicarve::gauss::ChainConfig;
use multicarve::multi::{global_sigma, select_splits, MulticarveConfig, SplitSelection};
use multicarve::select::Selector;
use multicarve::{Dataset, Family};

fn split_for(n: usize, p: usize, fraction: f64, lambda: f64, seed: u64) -> (SplitSelection, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta = DVector::from_fn(p, |j, _| if j < 3 { 0.4 } else { 0.0 });
    let y = &x * beta + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let data = Dataset::new(x, y, Family::Gaussian).unwrap();
    let cfg = MulticarveConfig {
        n_splits: 1,
        fraction,
        sigma: SigmaMode::Known(1.0),
        selector: Selector::Lambda(lambda),
        master_seed: seed,
        ..MulticarveConfig::default()
    };
    let global = global_sigma(&data, &cfg).unwrap();
    let mut splits = select_splits(&data, &cfg, 1, global).unwrap();
    (splits.remove(0), data)
}

fn task<'a>(s: &'a SplitSelection, target: Target, chain: ChainConfig) -> CarveTask<'a> {
    let prep = s.prepared.as_ref().expect("usable split");
    CarveTask {
        event: s.event.as_ref().unwrap(),
        submodel: &prep.submodel,
        y: &prep.y,
        target,
        sigma: prep.sigma,
        view: View::Selected,
        chain,
    }
}

#[test]
fn few_selection_rows_approach_the_z_test() {
    let mut compared = 0;
    for seed in 0..6u64 {
        let (s, _) = split_for(100_000, 8, 0.0004, 0.1, 100 + seed);
        if !s.usable() {
            continue;
        }
        let prep = s.prepared.as_ref().unwrap();
        let z = &prep.submodel.z;
        let gram_inv = (z.transpose() * z).try_inverse().unwrap();
        for (k, &j) in s.support().iter().enumerate() {
            let sign = s.event.as_ref().unwrap().signs()[k];
            let pos = prep.submodel.position(j).unwrap();
            let eta = z * gram_inv.column(pos);
            let zstat = sign * eta.dot(&prep.y) / eta.norm();
            let oracle = norm_sf(zstat);
            let pv = carve_pvalue_selected(&task(&s, Target::Single(j), ChainConfig::with_length(200_000, seed * 31 + j as u64))).unwrap();
            assert!((pv.value - oracle).abs() < 0.02, "seed {seed} var {j}: carved {} vs z-test {oracle}", pv.value);
            compared += 1;
        }
    }
    assert!(compared >= 6, "only {compared} comparisons");
}

#[test]
fn singleton_group_matches_single_test() {
    let (s, _) = split_for(80, 10, 0.75, 0.1, 7);
    assert!(s.usable());
    for &j in s.support() {
        let chain = ChainConfig::with_length(4000, 90 + j as u64);
        let single = carve_pvalue_selected(&task(&s, Target::Single(j), chain)).unwrap();
        let group = group_pvalue(&task(&s, Target::Group(vec![j]), chain)).unwrap();
        let tol = 3.0 * (single.mc_se + group.mc_se) + 1e-12;
        assert!((single.value - group.value).abs() <= tol, "var {j}: {} vs {}", single.value, group.value);
    }
}

#[test]
fn right_tail_is_monotone_and_sides_follow_signs() {
    let (s, _) = split_for(80, 10, 0.75, 0.1, 8);
    assert!(s.usable());
    let event = s.event.as_ref().unwrap();
    let prep = s.prepared.as_ref().unwrap();
    for (k, &j) in s.support().iter().enumerate() {
        let sign = event.signs()[k];
        let chain = ChainConfig::with_length(2000, 5 + j as u64);
        let pv = carve_pvalue_selected(&task(&s, Target::Single(j), chain)).unwrap();
        assert_eq!(pv.side, if sign > 0.0 { Side::Right } else { Side::Left });

        let pos = prep.submodel.position(j).unwrap();
        let mut w = DVector::zeros(prep.submodel.ncols());
        w[pos] = sign;
        let mut null = prepare_selected(&task(&s, Target::Single(j), chain), &[pos], &w).unwrap();
        let centre = null.observed;
        let mut last = f64::INFINITY;
        for step in -10..=10 {
            null.observed = centre + 0.2 * step as f64;
            let v = null.right_tail(&chain, Side::Right).unwrap().value;
            assert!(v <= last, "tail rose from {last} to {v}");
            last = v;
        }
    }
}
