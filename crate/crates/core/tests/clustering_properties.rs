use exco_core::clustering::spherical_kmeans_from_init;
use exco_core::simulation::{make_fig3_triplet, synthetic_block_dataset};
use exco_core::{
    absolute_amplitude, adjusted_rand_index, assign_communities, empirical_pareto_transform,
    extract_extreme_directions, k_sweep, objective, spherical_kmeans, ExtremeDirections,
    KMeansOptions, SignalMatrix,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("c{i}")).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn random_directions(rng: &mut ChaCha8Rng, n: usize, d: usize) -> ExtremeDirections {
    let mut rows = Vec::with_capacity(n * d);
    for _ in 0..n {
        // Cubing skews mass toward the faces of the orthant.
        let raw: Vec<f64> = (0..d).map(|_| rng.random::<f64>().powi(3) + 1e-9).collect();
        rows.extend(unit(&raw));
    }
    ExtremeDirections::from_unit_rows(Array2::from_shape_vec((n, d), rows).unwrap(), names(d))
        .unwrap()
}

fn rows(theta: &ExtremeDirections) -> Vec<Vec<f64>> {
    theta
        .directions()
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exhaustive search over all two-way splits; each side's centroid is its
/// normalized mean and every point pays its smaller dissimilarity.
fn brute_force_two_clusters(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << n) - 1 {
        let mut sums = [vec![0.0; d], vec![0.0; d]];
        for (i, p) in points.iter().enumerate() {
            let side = ((mask >> i) & 1) as usize;
            for j in 0..d {
                sums[side][j] += p[j];
            }
        }
        let c0 = unit(&sums[0]);
        let c1 = unit(&sums[1]);
        let cost: f64 = points
            .iter()
            .map(|p| (1.0 - dot(p, &c0)).min(1.0 - dot(p, &c1)))
            .sum::<f64>()
            / n as f64;
        best = best.min(cost);
    }
    best
}

#[test]
fn objective_never_increases_within_a_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let n = rng.random_range(10..=200);
        let d = rng.random_range(2..=10);
        let k = rng.random_range(1..=5);
        let theta = random_directions(&mut rng, n, d);
        let pts = rows(&theta);
        // Half the runs start from random sphere points, which can leave
        // clusters empty and exercise the repair step.
        let init: Vec<Vec<f64>> = if rng.random::<bool>() {
            (0..k)
                .map(|_| pts[rng.random_range(0..n)].clone())
                .collect()
        } else {
            (0..k)
                .map(|_| {
                    unit(
                        &(0..d)
                            .map(|_| rng.random::<f64>() + 1e-9)
                            .collect::<Vec<_>>(),
                    )
                })
                .collect()
        };
        let run = spherical_kmeans_from_init(&theta, &init, 100).unwrap();
        for w in run.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", run.history);
        }
        let recomputed = objective(&theta, &run.model.centroids).unwrap();
        assert!((recomputed - run.model.objective).abs() < 1e-10);
        for c in 1..=k {
            assert!(run.model.assignments.contains(&c));
        }
    }
}

#[test]
fn exhaustive_optimum_is_reached_from_some_point_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.random_range(3..=10);
        let d = rng.random_range(2..=5);
        let theta = random_directions(&mut rng, n, d);
        let pts = rows(&theta);
        let oracle = brute_force_two_clusters(&pts);
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                let init = vec![pts[i].clone(), pts[j].clone()];
                let run = spherical_kmeans_from_init(&theta, &init, 100).unwrap();
                best = best.min(run.model.objective);
            }
        }
        assert!(
            (best - oracle).abs() < 1e-9,
            "kmeans {best} vs enumeration {oracle}"
        );
    }
}

#[test]
fn objective_matches_enumeration_on_hand_instance() {
    let s = 0.5f64.sqrt();
    let theta = ExtremeDirections::from_unit_rows(
        ndarray::array![[1.0, 0.0, 0.0], [s, s, 0.0], [0.0, 0.6, 0.8]],
        names(3),
    )
    .unwrap();
    let centroids = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
    let mut expected = 0.0;
    for p in rows(&theta) {
        expected += centroids
            .iter()
            .map(|c| 1.0 - dot(&p, c))
            .fold(f64::INFINITY, f64::min);
    }
    expected /= 3.0;
    let got = objective(&theta, &centroids).unwrap();
    assert!((got - expected).abs() < 1e-12);
    // (0 + (1 - 1/sqrt 2) + 0.2) / 3
    assert!((got - (1.2 - s) / 3.0).abs() < 1e-12);
}

#[test]
fn model_invariants_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let n = rng.random_range(5..=80);
        let d = rng.random_range(2..=6);
        let k = rng.random_range(1..=4.min(n));
        let theta = random_directions(&mut rng, n, d);
        let model = spherical_kmeans(&theta, &KMeansOptions::new(k, 3).with_restarts(5)).unwrap();
        for c in &model.centroids {
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            assert!(c.iter().all(|v| *v >= 0.0));
        }
        for c in 1..=k {
            assert!(model.assignments.contains(&c));
        }
        let recomputed = objective(&theta, &model.centroids).unwrap();
        assert!((recomputed - model.objective).abs() < 1e-10);
    }
}

#[test]
fn k_equal_to_count_gives_zero_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let theta = random_directions(&mut rng, 8, 3);
    let model = spherical_kmeans(&theta, &KMeansOptions::new(8, 0).with_restarts(3)).unwrap();
    assert!(model.objective.abs() < 1e-12);
    let sweep = k_sweep(&theta, 1..=8, 0, 3).unwrap();
    assert!(sweep.points.last().unwrap().1.abs() < 1e-12);
    for w in sweep.points.windows(2) {
        assert!(w[1].1 <= w[0].1);
    }
}

fn triplet_directions(signal: &SignalMatrix) -> ExtremeDirections {
    let y = empirical_pareto_transform(&absolute_amplitude(signal).unwrap()).unwrap();
    extract_extreme_directions(&y, 0.99).unwrap()
}

#[test]
fn permuting_channels_permutes_centroids() {
    let m = make_fig3_triplet(20_000, 8).unwrap();
    let perm = [2usize, 0, 1];
    let s = m.samples();
    let mut permuted = Array2::zeros(s.dim());
    for (new, &old) in perm.iter().enumerate() {
        permuted.column_mut(new).assign(&s.column(old));
    }
    let labels: Vec<String> = perm.iter().map(|&i| m.channels()[i].clone()).collect();
    let pm = SignalMatrix::new(permuted, labels.clone(), m.sample_rate_hz()).unwrap();

    let opts = KMeansOptions::new(2, 4).with_restarts(10);
    let a = spherical_kmeans(&triplet_directions(&m), &opts).unwrap();
    let b = spherical_kmeans(&triplet_directions(&pm), &opts).unwrap();
    assert!((a.objective - b.objective).abs() < 1e-12);
    // Same centroid set with coordinates permuted (cluster order may differ).
    for cb in &b.centroids {
        let matched = a.centroids.iter().any(|ca| {
            perm.iter()
                .enumerate()
                .all(|(new, &old)| (cb[new] - ca[old]).abs() < 1e-12)
        });
        assert!(
            matched,
            "{cb:?} has no permuted counterpart in {:?}",
            a.centroids
        );
    }
    let ca = assign_communities(&a, m.channels());
    let cb = assign_communities(&b, &labels);
    // Channels share a community in one iff they do in the other.
    for i in 0..3 {
        for j in 0..3 {
            let same_b = cb.labels[i] == cb.labels[j];
            let same_a = ca.labels[perm[i]] == ca.labels[perm[j]];
            assert_eq!(same_a, same_b);
        }
    }
}

#[test]
fn raw_amplitude_scaling_changes_nothing() {
    let m = make_fig3_triplet(20_000, 12).unwrap();
    let mut scaled = m.samples().clone();
    scaled.column_mut(0).mapv_inplace(|v| v * 1e3);
    scaled.column_mut(2).mapv_inplace(|v| v * 0.25);
    let ms = m.with_samples(scaled).unwrap();
    let ta = triplet_directions(&m);
    let tb = triplet_directions(&ms);
    assert_eq!(ta, tb);
    let opts = KMeansOptions::new(2, 77).with_restarts(8);
    assert_eq!(
        spherical_kmeans(&ta, &opts).unwrap(),
        spherical_kmeans(&tb, &opts).unwrap()
    );
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let ds = synthetic_block_dataset(9, &[3, 3, 3], 20_000, 1.75, 3).unwrap();
    let y = empirical_pareto_transform(&absolute_amplitude(&ds.signal).unwrap()).unwrap();
    let theta = extract_extreme_directions(&y, 0.95).unwrap();
    let opts = KMeansOptions::new(3, 21).with_restarts(16);
    let fit = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| spherical_kmeans(&theta, &opts).unwrap())
    };
    let one = fit(1);
    assert_eq!(one, fit(4));
    assert_eq!(one, fit(8));
}

#[test]
fn triplet_splits_dependent_pair_from_independent_channel() {
    let mut ok = 0;
    for seed in 0..20 {
        let m = make_fig3_triplet(100_000, seed).unwrap();
        let model = spherical_kmeans(
            &triplet_directions(&m),
            &KMeansOptions::new(2, seed).with_restarts(20),
        )
        .unwrap();
        let c = assign_communities(&model, m.channels());
        if c.labels[1] == c.labels[2] && c.labels[0] != c.labels[1] {
            ok += 1;
        }
    }
    assert!(ok >= 19, "{ok}/20");
}

#[test]
fn planted_blocks_elbow_at_three() {
    let ds = synthetic_block_dataset(12, &[4, 4, 4], 100_000, 1.75, 6).unwrap();
    let y = empirical_pareto_transform(&absolute_amplitude(&ds.signal).unwrap()).unwrap();
    let theta = extract_extreme_directions(&y, 0.99).unwrap();
    let sweep = k_sweep(&theta, 1..=6, 6, 10).unwrap();
    assert_eq!(sweep.elbow(), Some(3), "{:?}", sweep.points);
    let model = spherical_kmeans(&theta, &KMeansOptions::new(3, 6).with_restarts(20)).unwrap();
    let c = assign_communities(&model, ds.signal.channels());
    assert_eq!(
        adjusted_rand_index(&c.labels, &ds.true_labels).unwrap(),
        1.0
    );
}
