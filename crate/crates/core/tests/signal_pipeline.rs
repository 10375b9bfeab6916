use std::f64::consts::PI;

use exco_core::signal::{butterworth_sos, filtfilt, persistence_from_outcomes, PipelineConfig};
use exco_core::simulation::synthetic_block_dataset;
use exco_core::{
    adjusted_rand_index, bandpass, canonical_bands, persistence_matrix, windowed_communities,
    BandSpec, CommunityAssignment, SignalMatrix, WindowPlan,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sine(freq: f64, rate: f64, n: usize, phase: f64) -> Vec<f64> {
    (0..n)
        .map(|i| (2.0 * PI * freq * i as f64 / rate + phase).sin())
        .collect()
}

#[test]
fn filtering_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..3000).map(|_| rng.random::<f64>() - 0.5).collect();
    let y: Vec<f64> = (0..3000).map(|_| rng.random::<f64>() * 3.0).collect();
    let (a, b) = (2.5, -0.75);
    for band in canonical_bands() {
        let sos = butterworth_sos(&band, 128.0, 4).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let fm = filtfilt(&sos, &mix);
        let fx = filtfilt(&sos, &x);
        let fy = filtfilt(&sos, &y);
        let scale = fm.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
        for i in 0..mix.len() {
            let err = (fm[i] - (a * fx[i] + b * fy[i])).abs();
            assert!(err <= 1e-9 * scale, "{} sample {i}: {err}", band.name);
        }
    }
}

#[test]
fn filtering_has_zero_phase() {
    let rate = 100.0;
    let sos = butterworth_sos(&BandSpec::canonical("alpha").unwrap(), rate, 4).unwrap();

    // Broadband input: the input/output cross-correlation peaks at lag 0.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f64> = (0..4000).map(|_| rng.random::<f64>() - 0.5).collect();
    let y = filtfilt(&sos, &x);
    let n = x.len();
    let xcorr = |lag: i64| -> f64 {
        (n / 10..n - n / 10)
            .map(|i| x[i] * y[(i as i64 + lag) as usize])
            .sum()
    };
    let best = (-20..=20)
        .max_by(|&a, &b| xcorr(a).partial_cmp(&xcorr(b)).unwrap())
        .unwrap();
    assert_eq!(best, 0);

    // A passband tone comes out in phase: y ~ g x away from the edges.
    let x = sine(10.0, rate, 4000, 0.3);
    let y = filtfilt(&sos, &x);
    let core = n / 10..n - n / 10;
    let g = core.clone().map(|i| x[i] * y[i]).sum::<f64>()
        / core.clone().map(|i| x[i] * x[i]).sum::<f64>();
    let resid = core.map(|i| (y[i] - g * x[i]).abs()).fold(0.0, f64::max);
    assert!(g > 0.9, "gain {g}");
    assert!(resid < 1e-3, "residual {resid}");
}

#[test]
fn bandpass_keeps_shape_and_labels() {
    let rate = 256.0;
    let n = 2048;
    let mut samples = Array2::zeros((n, 2));
    for (i, v) in sine(20.0, rate, n, 0.0).into_iter().enumerate() {
        samples[[i, 0]] = v;
        samples[[i, 1]] = 5.0;
    }
    let x = SignalMatrix::new(samples, vec!["a".into(), "b".into()], rate).unwrap();
    let beta = bandpass(&x, &BandSpec::canonical("beta").unwrap()).unwrap();
    assert_eq!(beta.channels(), x.channels());
    assert_eq!(beta.samples().dim(), (n, 2));
    let dc = beta.samples().column(1);
    assert!(dc.iter().all(|v| v.abs() < 5e-3));
    let gamma = BandSpec::canonical("gamma").unwrap();
    assert!(bandpass(&x.with_samples(x.samples().clone()).unwrap(), &gamma).is_ok());
    let slow = SignalMatrix::new(x.samples().clone(), x.channels().to_vec(), 100.0).unwrap();
    assert!(bandpass(&slow, &gamma).is_err());
}

fn block_config(k: usize, seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(k, 0.95, seed);
    cfg.kmeans.restarts = 10;
    cfg
}

#[test]
fn single_window_recovers_planted_axes() {
    // Singleton blocks: each channel is its own axis of extremes.
    let ds = synthetic_block_dataset(3, &[1, 1, 1], 5000, 1.75, 2).unwrap();
    let plan = WindowPlan::disjoint(50.0, 100.0).unwrap();
    let out = windowed_communities(&ds.signal, &plan, &block_config(3, 1)).unwrap();
    assert_eq!(out.len(), 1);
    let labels = &out[0].communities.as_ref().unwrap().labels;
    assert_eq!(adjusted_rand_index(labels, &ds.true_labels).unwrap(), 1.0);
}

#[test]
fn three_blocks_recovered_in_every_window() {
    let ds = synthetic_block_dataset(9, &[3, 3, 3], 20_000, 1.75, 5).unwrap();
    let plan = WindowPlan::disjoint(20.0, 100.0).unwrap();
    let cfg = block_config(3, 9);
    let out = windowed_communities(&ds.signal, &plan, &cfg).unwrap();
    assert_eq!(out.len(), 10);
    for o in &out {
        let c = o.communities.as_ref().expect("window succeeded");
        assert_eq!(c.window_id, Some(o.window_id));
        assert_eq!(
            adjusted_rand_index(&c.labels, &ds.true_labels).unwrap(),
            1.0
        );
    }
    // Deterministic, and windows got distinct seeds.
    let again = windowed_communities(&ds.signal, &plan, &cfg).unwrap();
    assert_eq!(out, again);
    assert_ne!(
        out[0].model.as_ref().unwrap().seed,
        out[1].model.as_ref().unwrap().seed
    );

    let p = persistence_from_outcomes(&out).unwrap();
    for i in 0..9 {
        for j in 0..9 {
            let expect = if ds.true_labels[i] == ds.true_labels[j] {
                1.0
            } else {
                0.0
            };
            assert_eq!(p.values[i][j], expect);
        }
    }
}

#[test]
fn thin_windows_fail_without_aborting() {
    let ds = synthetic_block_dataset(4, &[2, 2], 400, 1.75, 1).unwrap();
    let plan = WindowPlan::disjoint(1.0, 100.0).unwrap();
    // 100 samples at the 0.95 quantile leave 5 directions: too few for k = 6.
    let out = windowed_communities(&ds.signal, &plan, &block_config(6, 0)).unwrap();
    assert_eq!(out.len(), 4);
    assert!(out.iter().all(|o| !o.is_ok() && o.failure.is_some()));
    assert!(persistence_from_outcomes(&out).is_err());

    let mut ok = out.clone();
    ok[0].communities = Some(CommunityAssignment {
        channels: ds.signal.channels().to_vec(),
        labels: vec![1, 1, 2, 2],
        k: 2,
        window_id: Some(0),
    });
    ok[0].failure = None;
    let p = persistence_from_outcomes(&ok).unwrap();
    assert_eq!(p.n_windows, 1);
    assert_eq!(p.failed_windows, vec![1, 2, 3]);
}

#[test]
fn persistence_is_a_count_ratio() {
    // Channels 0 and 1 share a label in exactly 7 of 10 windows.
    let channels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let windows: Vec<CommunityAssignment> = (0..10)
        .map(|w| CommunityAssignment {
            channels: channels.clone(),
            labels: if w < 7 { vec![1, 1, 2] } else { vec![1, 2, 2] },
            k: 2,
            window_id: Some(w),
        })
        .collect();
    let mut together = 0;
    for w in &windows {
        together += (w.labels[0] == w.labels[1]) as usize;
    }
    let p = persistence_matrix(&windows).unwrap();
    assert_eq!(p.values[0][1], together as f64 / 10.0);
    assert_eq!(p.values[0][1], 0.7);
    assert_eq!(p.values[1][2], 0.3);
    assert_eq!(p.values[0][2], 0.0);
    assert_eq!(p.counts[0][1], 7);
    for i in 0..3 {
        assert_eq!(p.values[i][i], 1.0);
        for j in 0..3 {
            assert_eq!(p.values[i][j], p.values[j][i]);
        }
    }
}

#[test]
fn window_rate_must_match_signal() {
    let ds = synthetic_block_dataset(2, &[2], 1000, 1.75, 0).unwrap();
    let plan = WindowPlan::disjoint(1.0, 250.0).unwrap();
    assert!(windowed_communities(&ds.signal, &plan, &block_config(1, 0)).is_err());
}
