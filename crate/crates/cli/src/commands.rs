use std::fs;
use std::path::{Path, PathBuf};

use exco_core::io::{
    read_csv, read_result, render_heatmap_svg, write_matrix_csv, write_result, write_signal_csv,
    ResultDocument, ResultMetadata,
};
use exco_core::signal::{persistence_from_outcomes, run_pipeline, split_outcomes, PipelineConfig};
use exco_core::simulation::{
    make_fig3_triplet, stable_ma_series, synthetic_block_dataset, MaModel, SIMULATED_RATE_HZ,
    TRIPLET_ALPHA, TRIPLET_MA3,
};
use exco_core::{
    absolute_amplitude, bandpass, chi_matrix, empirical_pareto_transform,
    extract_extreme_directions_with, k_sweep, windowed_communities, BandSpec, ChiMatrix,
    CommunityAssignment, ExcoError, PersistenceMatrix, SignalMatrix, ThresholdMode, WindowOutcome,
    WindowPlan,
};
use ndarray::Array2;
use serde::Serialize;
use serde_json::json;

use crate::{
    ChiArgs, ClusterArgs, Failure, FitArgs, InputArgs, KsweepArgs, Mode, Model, PersistArgs, Phase,
    SimulateArgs, WindowsArgs,
};

const DEFAULT_K: usize = 5;

/// Everything needed to rerun `cluster` or `windows`; stored verbatim in the
/// result document.
#[derive(Debug, Serialize)]
struct RunConfig {
    input: String,
    sample_rate_hz: f64,
    band: Option<BandSpec>,
    from_s: Option<f64>,
    to_s: Option<f64>,
    phase: Option<Phase>,
    k: usize,
    quantile: f64,
    threshold_mode: Mode,
    seed: u64,
    restarts: usize,
    max_iter: usize,
    window_s: Option<f64>,
    stride_s: Option<f64>,
    with_chi: bool,
}

fn tool_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

/// Failure whose message names the file involved.
fn at_path(e: ExcoError, path: &Path) -> Failure {
    let mut f = Failure::from(e);
    f.message = format!("{}: {}", path.display(), f.message);
    f
}

fn parse_band(name: &str) -> Result<Option<BandSpec>, Failure> {
    if name.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    BandSpec::canonical(name).map(Some).ok_or_else(|| {
        Failure::usage(format!(
            "unknown band {name:?}; expected none, delta, theta, alpha, beta or gamma"
        ))
    })
}

/// Cluster counts per seizure phase for the alpha and beta bands.
fn table_k(band: &str, phase: Phase) -> Option<usize> {
    let (interictal, preictal, ictal) = match band {
        "alpha" => (6, 7, 5),
        "beta" => (6, 8, 6),
        _ => return None,
    };
    Some(match phase {
        Phase::Interictal => interictal,
        Phase::Preictal => preictal,
        Phase::Ictal => ictal,
    })
}

fn resolve_k(fit: &FitArgs, band: Option<&BandSpec>) -> Result<usize, Failure> {
    let k = match (fit.k, fit.phase, band) {
        (Some(k), _, _) => k,
        (None, Some(phase), Some(b)) => table_k(&b.name, phase).unwrap_or(DEFAULT_K),
        _ => DEFAULT_K,
    };
    if k == 0 {
        return Err(Failure::usage("--k must be at least 1"));
    }
    Ok(k)
}

fn check_quantile(q: f64) -> Result<(), Failure> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Failure::usage(format!(
            "--quantile must lie in (0, 1), got {q}"
        )))
    }
}

fn threshold_mode(mode: Mode) -> ThresholdMode {
    match mode {
        Mode::Norm => ThresholdMode::Norm,
        Mode::Marginal => ThresholdMode::Marginal,
    }
}

/// The input recording restricted to `[from, to)` seconds.
fn load(input: &InputArgs) -> Result<SignalMatrix, Failure> {
    if !(input.rate.is_finite() && input.rate > 0.0) {
        return Err(Failure::usage(format!(
            "--rate must be positive, got {}",
            input.rate
        )));
    }
    let x = read_csv(&input.input, input.rate).map_err(|e| at_path(e, &input.input))?;
    if input.from_s.is_none() && input.to_s.is_none() {
        return Ok(x);
    }
    let n = x.n_samples();
    let to_sample = |s: f64, flag: &str| -> Result<usize, Failure> {
        if !(s.is_finite() && s >= 0.0) {
            return Err(Failure::usage(format!(
                "{flag} must be a nonnegative number of seconds"
            )));
        }
        let i = (s * input.rate).round() as usize;
        if i > n {
            return Err(Failure::usage(format!(
                "{flag} {s} s lies beyond the end of the recording ({} s)",
                x.duration_s()
            )));
        }
        Ok(i)
    };
    let start = input.from_s.map_or(Ok(0), |s| to_sample(s, "--from"))?;
    let end = input.to_s.map_or(Ok(n), |s| to_sample(s, "--to"))?;
    if start >= end {
        return Err(Failure::usage(
            "--from must come before --to and leave at least one sample",
        ));
    }
    Ok(x.slice_rows(start, end)?)
}

fn prepare(x: &SignalMatrix, band: Option<&BandSpec>) -> Result<SignalMatrix, Failure> {
    Ok(match band {
        Some(b) => bandpass(x, b)?,
        None => x.clone(),
    })
}

fn chi_of(x: &SignalMatrix, band: Option<&BandSpec>, q: f64) -> Result<ChiMatrix, Failure> {
    let y = empirical_pareto_transform(&absolute_amplitude(&prepare(x, band)?)?)?;
    Ok(chi_matrix(&y, q)?)
}

fn describe(c: &CommunityAssignment) -> String {
    (1..=c.k)
        .filter_map(|label| {
            let members: Vec<&str> = c
                .channels
                .iter()
                .zip(&c.labels)
                .filter(|(_, &l)| l == label)
                .map(|(name, _)| name.as_str())
                .collect();
            (!members.is_empty()).then(|| format!("{{{}}}", members.join(",")))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn pipeline_config(fit: &FitArgs, band: Option<BandSpec>, k: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(k, fit.quantile, fit.seed);
    cfg.band = band;
    cfg.threshold_mode = threshold_mode(fit.threshold_mode);
    cfg.kmeans.restarts = fit.restarts;
    cfg.kmeans.max_iter = fit.max_iter;
    cfg
}

fn fit_setup(input: &InputArgs, fit: &FitArgs) -> Result<(Option<BandSpec>, usize), Failure> {
    check_quantile(fit.quantile)?;
    if fit.restarts == 0 || fit.max_iter == 0 {
        return Err(Failure::usage(
            "--restarts and --max-iter must be at least 1",
        ));
    }
    let band = parse_band(&input.band)?;
    let k = resolve_k(fit, band.as_ref())?;
    Ok((band, k))
}

fn run_config(
    input: &InputArgs,
    fit: &FitArgs,
    band: Option<BandSpec>,
    k: usize,
    window: Option<(f64, f64)>,
) -> RunConfig {
    RunConfig {
        input: input.input.display().to_string(),
        sample_rate_hz: input.rate,
        band,
        from_s: input.from_s,
        to_s: input.to_s,
        phase: fit.phase,
        k,
        quantile: fit.quantile,
        threshold_mode: fit.threshold_mode,
        seed: fit.seed,
        restarts: fit.restarts,
        max_iter: fit.max_iter,
        window_s: window.map(|w| w.0),
        stride_s: window.map(|w| w.1),
        with_chi: fit.with_chi,
    }
}

fn new_document(
    command: &str,
    cfg: &RunConfig,
    x: &SignalMatrix,
) -> Result<ResultDocument, Failure> {
    let metadata = ResultMetadata {
        tool_version: tool_version(),
        command: command.to_string(),
        input_path: Some(cfg.input.clone()),
        seed: cfg.seed,
        config: serde_json::to_value(cfg).map_err(ExcoError::from)?,
    };
    Ok(ResultDocument::new(
        metadata,
        x.channels().to_vec(),
        x.sample_rate_hz(),
    ))
}

pub fn cluster(args: &ClusterArgs) -> Result<(), Failure> {
    let (band, k) = fit_setup(&args.input, &args.fit)?;
    let x = load(&args.input)?;
    let cfg = pipeline_config(&args.fit, band.clone(), k);
    let out = run_pipeline(&x, &cfg)?;
    eprintln!(
        "exco: k = {k}, {} extreme directions, objective {:.6}: {}",
        out.directions.len(),
        out.model.objective,
        describe(&out.communities)
    );

    let rc = run_config(&args.input, &args.fit, band.clone(), k, None);
    let mut doc = new_document("cluster", &rc, &x)?;
    let offset = args
        .input
        .from_s
        .map_or(0, |s| (s * args.input.rate).round() as usize);
    doc.windows.push(WindowOutcome {
        window_id: 0,
        start_sample: offset,
        end_sample: offset + x.n_samples(),
        n_directions: Some(out.directions.len()),
        model: Some(out.model),
        communities: Some(out.communities),
        failure: None,
    });
    if args.fit.with_chi {
        doc.chi = Some(chi_of(&x, band.as_ref(), args.fit.quantile)?);
    }
    write_result(&doc, &args.out).map_err(|e| at_path(e, &args.out))?;
    Ok(())
}

pub fn windows(args: &WindowsArgs) -> Result<(), Failure> {
    let (band, k) = fit_setup(&args.input, &args.fit)?;
    let plan = WindowPlan::new(args.window, args.stride, args.input.rate)?;
    let x = load(&args.input)?;
    let cfg = pipeline_config(&args.fit, band.clone(), k);
    let mut outcomes = windowed_communities(&x, &plan, &cfg)?;
    let offset = args
        .input
        .from_s
        .map_or(0, |s| (s * args.input.rate).round() as usize);
    for o in &mut outcomes {
        o.start_sample += offset;
        o.end_sample += offset;
    }
    let failed = outcomes.iter().filter(|o| !o.is_ok()).count();
    eprintln!("exco: {} windows, {failed} failed", outcomes.len());
    if failed == outcomes.len() {
        return Err(Failure::degenerate(format!(
            "every window failed, e.g. window 0: {}",
            outcomes[0].failure.as_deref().unwrap_or("unknown")
        )));
    }

    let rc = run_config(
        &args.input,
        &args.fit,
        band.clone(),
        k,
        Some((args.window, args.stride)),
    );
    let mut doc = new_document("windows", &rc, &x)?;
    doc.persistence = Some(persistence_from_outcomes(&outcomes)?);
    doc.windows = outcomes;
    if args.fit.with_chi {
        doc.chi = Some(chi_of(&x, band.as_ref(), args.fit.quantile)?);
    }
    write_result(&doc, &args.out).map_err(|e| at_path(e, &args.out))?;
    Ok(())
}

pub fn chi(args: &ChiArgs) -> Result<(), Failure> {
    check_quantile(args.quantile)?;
    let band = parse_band(&args.input.band)?;
    let x = load(&args.input)?;
    let m = chi_of(&x, band.as_ref(), args.quantile)?;
    write_matrix_csv(&m, &args.out).map_err(|e| at_path(e, &args.out))?;
    if let Some(svg) = &args.svg {
        let title = format!("Tail correlation at quantile {}", args.quantile);
        render_heatmap_svg(&m, svg, &title).map_err(|e| at_path(e, svg))?;
    }
    Ok(())
}

fn persistence_of(side: &[WindowOutcome], what: &str) -> Result<PersistenceMatrix, Failure> {
    if !side.iter().any(WindowOutcome::is_ok) {
        return Err(Failure::degenerate(format!("no successful window {what}")));
    }
    Ok(persistence_from_outcomes(side)?)
}

fn write_persistence(
    m: &PersistenceMatrix,
    dir: &Path,
    stem: &str,
    title: &str,
) -> Result<(), Failure> {
    let csv = dir.join(format!("{stem}.csv"));
    let svg = dir.join(format!("{stem}.svg"));
    write_matrix_csv(m, &csv).map_err(|e| at_path(e, &csv))?;
    render_heatmap_svg(m, &svg, title).map_err(|e| at_path(e, &svg))?;
    eprintln!(
        "exco: {stem}: {} windows ({} failed)",
        m.n_windows,
        m.failed_windows.len()
    );
    Ok(())
}

pub fn persist(args: &PersistArgs) -> Result<(), Failure> {
    let doc = read_result(&args.result).map_err(|e| at_path(e, &args.result))?;
    if doc.windows.is_empty() {
        return Err(Failure::degenerate("result document holds no windows"));
    }
    fs::create_dir_all(&args.out_dir).map_err(|e| at_path(e.into(), &args.out_dir))?;
    match args.split {
        None => {
            let m = persistence_of(&doc.windows, "in the result")?;
            write_persistence(&m, &args.out_dir, "persistence", "Persistence")?;
        }
        Some(split) => {
            if !split.is_finite() {
                return Err(Failure::usage("--split must be a finite number of seconds"));
            }
            let (pre, post) = split_outcomes(&doc.windows, doc.sample_rate_hz, split);
            let pre_m = persistence_of(&pre, &format!("starts before {split} s"))?;
            let post_m = persistence_of(&post, &format!("starts at or after {split} s"))?;
            write_persistence(
                &pre_m,
                &args.out_dir,
                "persistence_pre",
                &format!("Persistence, windows starting before {split} s"),
            )?;
            write_persistence(
                &post_m,
                &args.out_dir,
                "persistence_post",
                &format!("Persistence, windows starting at or after {split} s"),
            )?;
        }
    }
    Ok(())
}

pub fn ksweep(args: &KsweepArgs) -> Result<(), Failure> {
    check_quantile(args.quantile)?;
    if args.kmin == 0 || args.kmin > args.kmax {
        return Err(Failure::usage("need 1 <= --kmin <= --kmax"));
    }
    if args.restarts == 0 {
        return Err(Failure::usage("--restarts must be at least 1"));
    }
    let band = parse_band(&args.input.band)?;
    let x = load(&args.input)?;
    let y = empirical_pareto_transform(&absolute_amplitude(&prepare(&x, band.as_ref())?)?)?;
    let theta =
        extract_extreme_directions_with(&y, args.quantile, threshold_mode(args.threshold_mode))?;
    let sweep = k_sweep(&theta, args.kmin..=args.kmax, args.seed, args.restarts)?;
    for (k, why) in &sweep.skipped {
        eprintln!("exco: skipped k = {k}: {why}");
    }
    if sweep.points.is_empty() {
        return Err(Failure::degenerate(
            "no cluster count in range could be fitted",
        ));
    }
    let mut text = String::from("k,objective\n");
    for (k, obj) in &sweep.points {
        text.push_str(&format!("{k},{obj}\n"));
    }
    fs::write(&args.out, text).map_err(|e| at_path(e.into(), &args.out))?;
    if let Some(k) = sweep.elbow() {
        eprintln!("exco: elbow at k = {k}");
    }
    Ok(())
}

/// `<out>` with its extension replaced, e.g. `d.csv` -> `d.json`.
fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    if args.t == 0 {
        return Err(Failure::usage("--T must be at least 1"));
    }
    let only = |set: bool, flag: &str, model: &str| {
        if set {
            Err(Failure::usage(format!(
                "{flag} only applies to --model {model}"
            )))
        } else {
            Ok(())
        }
    };
    only(
        args.blocks.is_some() && args.model != Model::Blocks,
        "--blocks",
        "blocks",
    )?;
    only(
        args.coeffs.is_some() && args.model != Model::Ma,
        "--coeffs",
        "ma",
    )?;
    let (signal, labels, echo) = match args.model {
        Model::Fig3 => {
            only(args.alpha.is_some(), "--alpha", "blocks or ma")?;
            let x = make_fig3_triplet(args.t, args.seed)?;
            (x, None, json!({ "alpha": TRIPLET_ALPHA }))
        }
        Model::Blocks => {
            let sizes = args.blocks.clone().unwrap_or_else(|| vec![4, 4, 4]);
            let alpha = args.alpha.unwrap_or(TRIPLET_ALPHA);
            let d = sizes.iter().sum();
            let ds = synthetic_block_dataset(d, &sizes, args.t, alpha, args.seed)?;
            (
                ds.signal,
                Some(ds.true_labels),
                json!({ "alpha": alpha, "blocks": sizes }),
            )
        }
        Model::Ma => {
            let coeffs = args.coeffs.clone().unwrap_or_else(|| TRIPLET_MA3.to_vec());
            let alpha = args.alpha.unwrap_or(TRIPLET_ALPHA);
            let model = MaModel::new(coeffs.clone())?;
            let series = stable_ma_series(&model, alpha, args.t, args.seed, 0)?;
            let samples = Array2::from_shape_vec((series.len(), 1), series)
                .map_err(|e| ExcoError::InvalidInput(e.to_string()))?;
            let x = SignalMatrix::new(samples, vec!["x".into()], SIMULATED_RATE_HZ)?;
            (x, None, json!({ "alpha": alpha, "coeffs": coeffs }))
        }
    };
    let config_path = sidecar(&args.out, ".json");
    if config_path == args.out {
        return Err(Failure::usage(
            "--out must not end in .json; the config echo uses that name",
        ));
    }
    write_signal_csv(&signal, &args.out).map_err(|e| at_path(e, &args.out))?;

    let mut record = json!({
        "tool_version": tool_version(),
        "command": "simulate",
        "model": args.model,
        "T": args.t,
        "seed": args.seed,
        "sample_rate_hz": signal.sample_rate_hz(),
        "channels": signal.channels(),
        "output": args.out.display().to_string(),
    });
    if let (Some(obj), Some(extra)) = (record.as_object_mut(), echo.as_object()) {
        obj.extend(extra.clone());
    }
    if let Some(labels) = labels {
        let path = sidecar(&args.out, ".labels.csv");
        let mut text = String::from("channel,block\n");
        for (c, l) in signal.channels().iter().zip(&labels) {
            text.push_str(&format!("{c},{l}\n"));
        }
        fs::write(&path, text).map_err(|e| at_path(e.into(), &path))?;
        record["labels"] = json!(path.display().to_string());
    }
    let mut text = serde_json::to_string_pretty(&record).map_err(ExcoError::from)?;
    text.push('\n');
    fs::write(&config_path, text).map_err(|e| at_path(e.into(), &config_path))?;
    Ok(())
}
