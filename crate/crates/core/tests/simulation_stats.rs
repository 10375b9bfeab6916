use exco_core::simulation::{
    cms_transform, sample_symmetric_stable, simulate_ma, synthetic_block_dataset, MaModel,
    StableParams,
};
use exco_core::{absolute_amplitude, chi_matrix, empirical_pareto_transform};

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

fn order_stat(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

#[test]
fn index_two_is_gaussian_with_variance_two() {
    let p = StableParams::standard(2.0).unwrap();
    let x = sample_symmetric_stable(&p, 1_000_000, 11).unwrap();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var - 2.0).abs() <= 0.1, "variance {var}");
}

#[test]
fn index_one_is_cauchy() {
    let p = StableParams::standard(1.0).unwrap();
    let x = sorted(sample_symmetric_stable(&p, 1_000_000, 12).unwrap());
    let median = order_stat(&x, 0.5);
    let iqr = order_stat(&x, 0.75) - order_stat(&x, 0.25);
    assert!(median.abs() <= 0.01, "median {median}");
    assert!((iqr - 2.0).abs() <= 0.04, "iqr {iqr}");

    let scaled = StableParams::new(1.0, 3.0).unwrap();
    let y = sorted(sample_symmetric_stable(&scaled, 200_000, 12).unwrap());
    let iqr = order_stat(&y, 0.75) - order_stat(&y, 0.25);
    assert!((iqr - 6.0).abs() <= 0.2, "scaled iqr {iqr}");
}

#[test]
fn hill_estimate_recovers_tail_index() {
    let p = StableParams::standard(1.75).unwrap();
    let mut z: Vec<f64> = sample_symmetric_stable(&p, 1_000_000, 13)
        .unwrap()
        .into_iter()
        .map(f64::abs)
        .collect();
    z.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let k = z.len() / 1000;
    let hill = (0..k).map(|i| (z[i] / z[k]).ln()).sum::<f64>() / k as f64;
    let alpha = 1.0 / hill;
    assert!((1.55..=1.95).contains(&alpha), "hill alpha {alpha}");
}

#[test]
fn draws_are_symmetric() {
    // Sign flips of the angle negate the draw exactly.
    for i in 1..100 {
        let v = -1.5 + 3.0 * i as f64 / 100.0;
        let w = 0.05 * i as f64;
        assert_eq!(cms_transform(1.75, v, w), -cms_transform(1.75, -v, w));
    }
    let p = StableParams::standard(1.75).unwrap();
    let x = sample_symmetric_stable(&p, 400_000, 14).unwrap();
    let bounded = x.iter().map(|v| v.tanh()).sum::<f64>() / x.len() as f64;
    // tanh(X) has variance below 1, so 5 standard errors is under 0.008.
    assert!(bounded.abs() < 0.008, "{bounded}");
}

#[test]
fn ma_filter_is_linear() {
    let m = MaModel::new(vec![1.0, 0.7, -0.2, 1.5, -0.5]).unwrap();
    let a: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
    let b: Vec<f64> = (0..40).map(|i| ((i * 3) % 5) as f64 * 0.5).collect();
    let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
    let fa = simulate_ma(&m, &a).unwrap();
    let fb = simulate_ma(&m, &b).unwrap();
    let fm = simulate_ma(&m, &mix).unwrap();
    assert_eq!(fm.len(), 36);
    for i in 0..fm.len() {
        assert!((fm[i] - (2.0 * fa[i] - 3.0 * fb[i])).abs() < 1e-12);
    }
}

#[test]
fn one_block_is_jointly_dependent() {
    let ds = synthetic_block_dataset(4, &[4], 100_000, 1.75, 21).unwrap();
    let y = empirical_pareto_transform(&absolute_amplitude(&ds.signal).unwrap()).unwrap();
    let c = chi_matrix(&y, 0.99).unwrap();
    let min_off = (0..4)
        .flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| c.values[i][j])
        .fold(f64::INFINITY, f64::min);
    assert!(min_off >= 0.2, "{min_off}");
}

#[test]
fn singleton_blocks_are_independent() {
    let ds = synthetic_block_dataset(4, &[1, 1, 1, 1], 100_000, 1.75, 22).unwrap();
    let y = empirical_pareto_transform(&absolute_amplitude(&ds.signal).unwrap()).unwrap();
    let c = chi_matrix(&y, 0.99).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                assert!(c.values[i][j] <= 0.03, "chi[{i}][{j}] = {}", c.values[i][j]);
            }
        }
    }
}

#[test]
fn generators_are_thread_independent() {
    let make = || synthetic_block_dataset(6, &[3, 3], 5000, 1.75, 8).unwrap();
    let base = make();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let parallel: Vec<_> = pool.install(|| {
        use rayon::prelude::*;
        (0..4).into_par_iter().map(|_| make()).collect()
    });
    for p in parallel {
        assert_eq!(p, base);
    }
}
