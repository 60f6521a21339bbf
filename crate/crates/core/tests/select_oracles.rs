use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use multicarve::data::{select_entries, select_rows};
use multicarve::gauss::truncated_interval;
use multicarve::select::cv::{cv_folds, log_grid};
use multicarve::select::{cv_path, fit_lasso, fit_lasso_fixed_size, Standardized};
use multicarve::sim::gen_toeplitz_design;
use multicarve::Family;

fn gaussian_instance(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta = DVector::from_fn(p, |j, _| if j < 4 { 1.0 } else { 0.0 });
    let y = &x * beta + DVector::from_fn(n, |_, _| 1.5 * rng.sample::<f64, _>(StandardNormal));
    (x, y)
}

#[test]
fn cv_matches_brute_force_fold_loop() {
    let (x, y) = gaussian_instance(60, 30, 11);
    let (n, k) = (60, 5);
    let xs = Standardized::new(&x, false).unwrap().x;
    let lmax = (xs.transpose() * &y).amax() / n as f64;
    let grid = log_grid(lmax, 30, 2.0);
    let seed = 77;
    let cv = cv_path(&x, &y, Family::Gaussian, false, Some(&grid), k, seed).unwrap();

    let fold = cv_folds(n, k, seed);
    let mut errors = vec![vec![0.0; grid.len()]; k];
    for (f, errs) in errors.iter_mut().enumerate() {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
        let (xt, yt) = (select_rows(&xs, &train), select_entries(&y, &train));
        for (l, &lambda) in grid.iter().enumerate() {
            let fit = fit_lasso(&xt, &yt, lambda * train.len() as f64).unwrap();
            let beta = DVector::from_column_slice(&fit.beta_hat);
            let mut sse = 0.0;
            for &i in &test {
                sse += (y[i] - (xs.row(i) * &beta)[0]).powi(2);
            }
            errs[l] = sse / test.len() as f64;
        }
    }
    // every fold holds n/k rows, so plain averages apply
    let mut cvm = vec![0.0; grid.len()];
    let mut cvsd = vec![0.0; grid.len()];
    for l in 0..grid.len() {
        let m = errors.iter().map(|e| e[l]).sum::<f64>() / k as f64;
        let v = errors.iter().map(|e| (e[l] - m).powi(2)).sum::<f64>() / k as f64;
        cvm[l] = m;
        cvsd[l] = (v / (k - 1) as f64).sqrt();
    }
    let idx_min = (0..grid.len()).min_by(|&a, &b| cvm[a].partial_cmp(&cvm[b]).unwrap()).unwrap();
    let idx_1se = (0..grid.len()).find(|&l| cvm[l] <= cvm[idx_min] + cvsd[idx_min]).unwrap();

    assert_eq!(cv.lambdas.len(), grid.len());
    for l in 0..grid.len() {
        // fold fits stop on coordinate moves of 1e-4, the oracle runs to a tight gap
        assert_relative_eq!(cv.cvm[l], cvm[l], max_relative = 1e-3);
        assert_relative_eq!(cv.cvsd[l], cvsd[l], max_relative = 5e-3, epsilon = 1e-8);
    }
    assert_eq!(cv.idx_min, idx_min);
    assert_eq!(cv.idx_1se, idx_1se);
    for idx in [idx_min, idx_1se] {
        let full = fit_lasso(&xs, &y, grid[idx] * n as f64).unwrap();
        assert_eq!(cv.fits[idx].support, full.support);
        for (a, b) in cv.fits[idx].beta_hat.iter().zip(&full.beta_hat) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn fixed_size_agrees_with_dense_grid() {
    let x = gen_toeplitz_design(100, 200, 0.6, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let beta = DVector::from_fn(200, |j, _| if [0, 4, 9, 14, 19].contains(&j) { 1.0 } else { 0.0 });
    let y = &x * beta + DVector::from_fn(100, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
    let target = 16;
    let fit = fit_lasso_fixed_size(&x, &y, Family::Gaussian, target).unwrap();
    assert!(fit.support.len() <= target);

    let xs = Standardized::new(&x, false).unwrap().x;
    let lmax = (xs.transpose() * &y).amax();
    let mut attained = false;
    for lambda in log_grid(lmax, 2000, 4.0) {
        if fit_lasso(&xs, &y, lambda).unwrap().support.len() == target {
            attained = true;
            break;
        }
    }
    if attained {
        assert_eq!(fit.support.len(), target);
    }
    // the returned model is the Lasso solution at its own penalty
    let refit = fit_lasso(&xs, &y, fit.lambda).unwrap();
    assert_eq!(refit.support, fit.support);
    assert_eq!(refit.signs, fit.signs);
}

#[test]
fn truncation_interval_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    while checked < 20 {
        let a = DMatrix::from_fn(5, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = &a * &y + DVector::from_fn(5, |_, _| rng.random_range(0.05..2.0));
        let eta = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (lo, hi) = truncated_interval(&eta, &a, &b, &y).unwrap();
        let t0 = eta.dot(&y);
        let nn = eta.norm_squared();
        let feasible = |t: f64| {
            let yt = &y + &eta * ((t - t0) / nn);
            (&a * yt - &b).max() <= 0.0
        };
        let step = 1e-4;
        let ts: Vec<f64> = (-100_000..=100_000).map(|k| t0 + k as f64 * step).collect();
        let inside: Vec<f64> = ts.iter().copied().filter(|&t| feasible(t)).collect();
        let (glo, ghi) = (inside[0], inside[inside.len() - 1]);
        // the grid only sees the interval clipped to its window
        let (first, last) = (ts[0], ts[ts.len() - 1]);
        let (lo, hi) = (lo.clamp(first, last), hi.clamp(first, last));
        assert!((glo - lo).abs() <= step, "lower {lo} vs grid {glo}");
        assert!((ghi - hi).abs() <= step, "upper {hi} vs grid {ghi}");
        checked += 1;
    }
}
