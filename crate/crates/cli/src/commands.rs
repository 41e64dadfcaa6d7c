use std::path::{Path, PathBuf};

use serde::Serialize;

use tdann::dataset::{
    generate, load_manifest, resolve, write_recording, ExperimentManifest, ManifestEntry, PseudoCardiacRhythm,
    Recording, ResolvedExperiment, Rhythm, Role, SyntheticKind, SyntheticSpec, MANIFEST_SCHEMA_VERSION,
};
use tdann::metrics::{evaluate, fit_fir_ridge, pearson, BaselineConfig, CorrelationRange, EvalOptions};
use tdann::network::{init_model, predict_series, ModelFile};
use tdann::optimizer::{lm_train, LmConfig};
use tdann::search::{grid_search, SearchOptions, SearchResult, SearchSpace, Selection};
use tdann::signal::{build_delay_matrix, concat_all, detrend};
use tdann::{DelayState, PrimePolicy, SegmentBounds, TimeSeries};

use crate::config::ConfigFile;
use crate::{svg, CliError, DataArgs, EvalArgs, GenArgs, LmArgs, PlotArgs, PredictArgs, ScoringArgs};
use crate::{SearchArgs, SpaceArgs, SweepArgs, TrainArgs};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn space(a: &SpaceArgs, cfg: &ConfigFile) -> Result<SearchSpace, CliError> {
    let d = SearchSpace::default();
    let space = SearchSpace {
        neurons: pick(a.neurons.clone().map(|l| l.0), cfg.neurons.clone(), d.neurons),
        d_max: pick(a.d_max, cfg.d_max, d.d_max),
        restarts_per_config: pick(a.restarts, cfg.restarts, d.restarts_per_config),
        base_seed: pick(a.seed, cfg.seed, d.base_seed),
    };
    space.validate().map_err(usage)?;
    Ok(space)
}

fn jobs(a: &SpaceArgs, cfg: &ConfigFile) -> Result<usize, CliError> {
    let from_env = || -> Result<Option<usize>, CliError> {
        match std::env::var("TDANN_JOBS") {
            Ok(v) if !v.trim().is_empty() => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| usage(format!("TDANN_JOBS must be a positive integer, got {v:?}"))),
            _ => Ok(None),
        }
    };
    let cores = || std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let jobs = match a.jobs.or(cfg.jobs) {
        Some(j) => j,
        None => from_env()?.unwrap_or_else(cores),
    };
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    Ok(jobs)
}

fn lm_config(a: &LmArgs, cfg: &ConfigFile) -> Result<LmConfig, CliError> {
    let d = LmConfig::default();
    let lm = LmConfig {
        lambda_init: pick(a.lambda_init, cfg.lambda_init, d.lambda_init),
        lambda_up: pick(a.lambda_up, cfg.lambda_up, d.lambda_up),
        lambda_down: pick(a.lambda_down, cfg.lambda_down, d.lambda_down),
        lambda_max: pick(a.lambda_max, cfg.lambda_max, d.lambda_max),
        max_epochs: pick(a.max_epochs, cfg.max_epochs, d.max_epochs),
        grad_tol: pick(a.grad_tol, cfg.grad_tol, d.grad_tol),
        mse_tol: pick(a.mse_tol, cfg.mse_tol, d.mse_tol),
    };
    lm.validate().map_err(usage)?;
    Ok(lm)
}

fn prime_policy(flag: &Option<String>, cfg: &ConfigFile) -> Result<PrimePolicy, CliError> {
    match flag.as_ref().or(cfg.prime.as_ref()) {
        Some(s) => s.parse().map_err(usage),
        None => Ok(PrimePolicy::default()),
    }
}

struct Scoring {
    prime: PrimePolicy,
    range: CorrelationRange,
    detrend_test: bool,
}

fn scoring(a: &ScoringArgs, cfg: &ConfigFile) -> Result<Scoring, CliError> {
    let range = match a.corr_range.as_ref().or(cfg.corr_range.as_ref()) {
        Some(s) => s.parse().map_err(usage)?,
        None => CorrelationRange::default(),
    };
    Ok(Scoring {
        prime: prime_policy(&a.prime, cfg)?,
        range,
        detrend_test: a.detrend_test || cfg.detrend_test.unwrap_or(false),
    })
}

fn selection(flag: &Option<String>, cfg: &ConfigFile) -> Result<Selection, CliError> {
    match flag.as_deref().or(cfg.select.as_deref()) {
        None | Some("test") => Ok(Selection::Test),
        Some("validation") => Ok(Selection::Validation),
        Some(other) => Err(usage(format!("--select must be test or validation, got {other:?}"))),
    }
}

fn experiment(a: &DataArgs, cfg: &ConfigFile) -> Result<ResolvedExperiment, CliError> {
    let path = a
        .manifest
        .clone()
        .or_else(|| cfg.manifest.clone())
        .ok_or_else(|| usage("--manifest is required"))?;
    let manifest = load_manifest(&path)?;
    let name = a.experiment.as_deref().or(cfg.experiment.as_deref());
    let exp = resolve(&manifest, name)?;
    for w in &exp.warnings {
        eprintln!("warning: {w}");
    }
    Ok(exp)
}

/// Concatenated, detrended training input and output.
fn training_series(exp: &ResolvedExperiment) -> Result<(TimeSeries, TimeSeries), CliError> {
    let input = detrend(&concat_all(exp.train.iter().map(|p| &p.pair.input))?)?;
    let output = detrend(&concat_all(exp.train.iter().map(|p| &p.pair.output))?)?;
    Ok((input, output))
}

#[derive(Serialize)]
struct Summary {
    schema_version: u32,
    experiment: Option<String>,
    dataset_ids: Vec<String>,
    best_n: usize,
    best_d: usize,
    best_restart: usize,
    best_seed: u64,
    max_corr: f64,
    selection: Selection,
    best_test_corr: Option<f64>,
    best_train_mse: Option<f64>,
    configs_evaluated: usize,
    configs_valid: usize,
    search_space: SearchSpace,
    lm: LmConfig,
    prime: PrimePolicy,
    corr_range: CorrelationRange,
    detrend_test: bool,
    warnings: Vec<String>,
}

struct SearchRun {
    exp: ResolvedExperiment,
    space: SearchSpace,
    result: SearchResult,
}

#[allow(clippy::too_many_arguments)]
fn run_search(
    data: &DataArgs,
    space_args: &SpaceArgs,
    lm_args: &LmArgs,
    scoring_args: &ScoringArgs,
    select: Selection,
    resume: bool,
    out: &Path,
    cfg: &ConfigFile,
) -> Result<SearchRun, CliError> {
    let space = space(space_args, cfg)?;
    let jobs = jobs(space_args, cfg)?;
    let lm = lm_config(lm_args, cfg)?;
    let sc = scoring(scoring_args, cfg)?;
    let exp = experiment(data, cfg)?;
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let log_path = out.join("run_log.jsonl");
    if !resume && log_path.exists() {
        std::fs::remove_file(&log_path).map_err(|e| io_error(&log_path, e))?;
    }
    let opts = SearchOptions {
        jobs,
        prime: sc.prime,
        range: sc.range,
        detrend_test: sc.detrend_test,
        selection: select,
        log_path: Some(log_path.clone()),
    };
    let result = grid_search(&exp.search_data(), &space, &lm, &opts)?;

    // workers append in completion order; store the log in visiting order
    let mut text = String::new();
    for r in &result.full_log {
        text.push_str(&serde_json::to_string(r).map_err(|e| CliError::Data(e.to_string()))?);
        text.push('\n');
    }
    let tmp = out.join("run_log.jsonl.tmp");
    write_text(&tmp, &text)?;
    std::fs::rename(&tmp, &log_path).map_err(|e| io_error(&log_path, e))?;

    let summary = Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        experiment: exp.experiment.clone(),
        dataset_ids: exp.dataset_ids(),
        best_n: result.best_n,
        best_d: result.best_d,
        best_restart: result.best_restart,
        best_seed: result.best_seed,
        max_corr: result.max_corr,
        selection: result.selection,
        best_test_corr: result.best_test_corr,
        best_train_mse: result.best_train_mse,
        configs_evaluated: result.full_log.len(),
        configs_valid: result.full_log.iter().filter(|r| r.score(select).is_some()).count(),
        search_space: space.clone(),
        lm,
        prime: sc.prime,
        corr_range: sc.range,
        detrend_test: sc.detrend_test,
        warnings: exp.warnings.clone(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "best N = {}, d = {}, corr = {:.6} ({} of {} configurations valid)",
        summary.best_n, summary.best_d, summary.max_corr, summary.configs_valid, summary.configs_evaluated
    );
    Ok(SearchRun { exp, space, result })
}

pub fn search(a: SearchArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let select = selection(&a.select, cfg)?;
    let run = run_search(&a.data, &a.space, &a.lm, &a.scoring, select, a.resume, &a.out, cfg)?;
    let r = &run.result;
    let mut meta = serde_json::Map::new();
    meta.insert("source".into(), "search".into());
    meta.insert("restart".into(), r.best_restart.into());
    meta.insert("seed".into(), r.best_seed.into());
    meta.insert("max_corr".into(), r.max_corr.into());
    meta.insert("train_mse".into(), r.best_train_mse.into());
    meta.insert("dataset_ids".into(), run.exp.dataset_ids().into());
    ModelFile::new(&r.best_model, meta).save(&a.out.join("best_model.json"))?;
    Ok(())
}

pub fn sweep(a: SweepArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let run = run_search(&a.data, &a.space, &a.lm, &a.scoring, Selection::Test, a.resume, &a.out, cfg)?;
    let grid = run.result.grid();
    let mut csv = String::from("n,d,test_corr\n");
    for (n, d, c) in &grid {
        let value = c.map(|v| format!("{v:?}")).unwrap_or_default();
        csv.push_str(&format!("{n},{d},{value}\n"));
    }
    write_text(&a.out.join("grid.csv"), &csv)?;
    let title = format!(
        "Test correlation by N and d (best N = {}, d = {}, r = {:.4})",
        run.result.best_n, run.result.best_d, run.result.max_corr
    );
    let plot = svg::heatmap(&run.space.neurons, run.space.d_max, &grid, &title);
    write_text(&a.out.join("heatmap.svg"), &plot)
}

pub fn train(a: TrainArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let lm = lm_config(&a.lm, cfg)?;
    let n = a.n_hidden.or(cfg.n_hidden).ok_or_else(|| usage("--n-hidden is required"))?;
    let d = a.delay.or(cfg.delay).ok_or_else(|| usage("--delay is required"))?;
    if n == 0 {
        return Err(usage("--n-hidden must be at least 1"));
    }
    let seed = pick(a.seed, cfg.seed, 0);
    let exp = experiment(&a.data, cfg)?;
    let (input, output) = training_series(&exp)?;
    let x = build_delay_matrix(&input, d)?;
    let (model, report) = lm_train(&init_model(d, n, seed)?, &x, &output.samples()[d..], &lm)?;
    if report.termination.is_failure() {
        return Err(CliError::Data(format!(
            "training failed: {}",
            report.diagnostic.unwrap_or_else(|| "non-finite residuals".into())
        )));
    }
    let mut meta = serde_json::Map::new();
    meta.insert("source".into(), "train".into());
    meta.insert("seed".into(), seed.into());
    meta.insert("train_mse".into(), report.final_mse.into());
    meta.insert("epochs".into(), report.epochs.len().into());
    meta.insert(
        "termination".into(),
        serde_json::to_value(report.termination).map_err(|e| CliError::Data(e.to_string()))?,
    );
    meta.insert("dataset_ids".into(), exp.dataset_ids().into());
    ModelFile::new(&model, meta).save(&a.out)?;
    println!(
        "trained N = {n}, d = {d}: train mse {:.6e} after {} epochs ({:?})",
        report.final_mse,
        report.epochs.len(),
        report.termination
    );
    Ok(())
}

pub fn predict(a: PredictArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let prime = prime_policy(&a.prime, cfg)?;
    let model = ModelFile::load(&a.model)?.to_model()?;
    let input = Recording::read(&a.input)?.channel(&a.channel)?;
    let state = DelayState::for_policy(prime, input.samples(), model.delay())?;
    let pred = predict_series(&model, &input, &state)?.with_label(a.output_channel.as_str());
    write_recording(&a.out, &[&pred])?;
    println!("wrote {} samples to {}", pred.len(), a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let sc = scoring(&a.scoring, cfg)?;
    let gamma = pick(a.baseline_gamma, cfg.baseline_gamma, 1e-3);
    let model = ModelFile::load(&a.model)?.to_model()?;
    let bd = pick(a.baseline_d, cfg.baseline_d, model.delay());
    let baseline_cfg = BaselineConfig::new(gamma, bd).map_err(usage)?;
    let exp = experiment(&a.data, cfg)?;
    let (input, output) = training_series(&exp)?;
    let baseline = fit_fir_ridge(&build_delay_matrix(&input, bd)?, &output.samples()[bd..], &baseline_cfg)?;
    let (test_in, test_out) = if sc.detrend_test {
        (detrend(&exp.test.pair.input)?, detrend(&exp.test.pair.output)?)
    } else {
        (exp.test.pair.input.clone(), exp.test.pair.output.clone())
    };
    let opts = EvalOptions {
        prime: sc.prime,
        range: sc.range,
        dataset_ids: exp.dataset_ids(),
    };
    let report = evaluate(&model, &baseline, gamma, &test_in, &test_out, &opts)?;
    let text = report.to_json()?;
    if let Some(path) = &a.out {
        write_text(path, &format!("{text}\n"))?;
    }
    println!("{text}");
    Ok(())
}

pub fn plot(a: PlotArgs) -> Result<(), CliError> {
    let pred = Recording::read(&a.prediction)?.channel(&a.prediction_channel)?;
    let truth = Recording::read(&a.truth)?.channel(&a.truth_channel)?;
    if pred.len() != truth.len() {
        return Err(CliError::Data(format!(
            "prediction has {} samples but truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    let (start, end) = a.range.unwrap_or((1, truth.len()));
    if end > truth.len() {
        return Err(CliError::Data(format!(
            "range {start}:{end} exceeds the {} available samples",
            truth.len()
        )));
    }
    let p = &pred.samples()[start - 1..end];
    let t = &truth.samples()[start - 1..end];
    let r = match pearson(t, p) {
        Ok(r) => format!("{r:.4}"),
        Err(_) => "undefined".to_string(),
    };
    let title = format!("Predicted vs recorded, samples {start}-{end}, r = {r}");
    write_text(&a.out, &svg::overlay(t, p, start, &title))?;
    let mut csv = String::from("sample,recorded,predicted\n");
    for (i, (tv, pv)) in t.iter().zip(p).enumerate() {
        csv.push_str(&format!("{},{tv:?},{pv:?}\n", start + i));
    }
    write_text(&sidecar(&a.out), &csv)?;
    println!("r = {r}");
    Ok(())
}

fn sidecar(svg: &Path) -> PathBuf {
    svg.with_extension("csv")
}

fn synthetic_spec(a: &GenArgs) -> Result<SyntheticSpec, CliError> {
    if let Some(path) = &a.spec {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let spec: SyntheticSpec =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        return Ok(spec);
    }
    let need = |name: &str| usage(format!("--{name} is required for this generator"));
    let kind = match a.kind.as_deref() {
        Some("fir-linear") => SyntheticKind::FirLinear {
            taps: a.taps.clone().ok_or_else(|| need("taps"))?,
            input_pole: a.input_pole.unwrap_or(0.5),
        },
        Some("teacher-tdann") => SyntheticKind::TeacherTdann {
            n_hidden: a.n_hidden.ok_or_else(|| need("n-hidden"))?,
            d: a.delay.ok_or_else(|| need("delay"))?,
            weight_scale: a.weight_scale.unwrap_or(2.0),
            input_pole: a.input_pole.unwrap_or(0.5),
        },
        Some("pseudo-cardiac") => SyntheticKind::PseudoCardiac {
            rhythm: match a.rhythm.as_deref() {
                Some("normal") => PseudoCardiacRhythm::Normal,
                Some("flutter") => PseudoCardiacRhythm::Flutter,
                Some(other) => return Err(usage(format!("--rhythm must be normal or flutter, got {other:?}"))),
                None => return Err(need("rhythm")),
            },
            beat_period: a.beat_period.ok_or_else(|| need("beat-period"))?,
            pulse_width: a.pulse_width.unwrap_or(2.0),
            transfer_delay: a.transfer_delay.unwrap_or(3),
            smoothing: a.smoothing.unwrap_or(3),
        },
        Some(other) => {
            return Err(usage(format!(
                "--kind must be fir-linear, teacher-tdann or pseudo-cardiac, got {other:?}"
            )))
        }
        None => return Err(usage("either --spec or --kind is required")),
    };
    Ok(SyntheticSpec {
        kind,
        length: a.length.ok_or_else(|| need("length"))?,
        noise_rms: a.noise_rms.unwrap_or(0.0),
        seed: a.seed.unwrap_or(0),
    })
}

pub fn gen_synthetic(a: GenArgs) -> Result<(), CliError> {
    let spec = synthetic_spec(&a)?;
    spec.validate().map_err(usage)?;
    if !(a.split > 0.0 && a.split < 1.0) {
        return Err(usage("--split must lie strictly between 0 and 1"));
    }
    let s = generate(&spec)?;
    write_recording(&a.out, &[&s.input, &s.output])?;
    let truth_path = a.truth.clone().unwrap_or_else(|| {
        let mut name = a.out.file_name().unwrap_or_default().to_os_string();
        name.push(".truth.json");
        a.out.with_file_name(name)
    });
    write_json(&truth_path, &s.ground_truth)?;

    if let Some(manifest_path) = &a.write_manifest {
        let n = spec.length;
        let k = ((n as f64 * a.split).round() as usize).clamp(1, n - 1);
        let id = a
            .out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "synthetic".into());
        let source = relative_source(manifest_path, &a.out)?;
        let entry = |role: Role, start: usize, end: usize| -> Result<ManifestEntry, CliError> {
            Ok(ManifestEntry {
                recording_id: id.clone(),
                rhythm: Rhythm::Synthetic,
                input_channel: "bsp".into(),
                output_channel: "hsp".into(),
                bounds: SegmentBounds::new(start, end)?,
                role,
                source_file: source.clone(),
                experiment: None,
            })
        };
        let manifest = ExperimentManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            description: Some(format!("synthetic split: training 1-{k}, testing {}-{n}", k + 1)),
            entries: vec![entry(Role::Training, 1, k)?, entry(Role::Testing, k + 1, n)?],
            base_dir: PathBuf::new(),
        };
        write_text(manifest_path, &format!("{}\n", manifest.to_json()?))?;
    }
    println!("wrote {} samples to {}", spec.length, a.out.display());
    Ok(())
}

/// Path of `recording` as seen from the manifest's directory.
fn relative_source(manifest: &Path, recording: &Path) -> Result<PathBuf, CliError> {
    let dir = manifest.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let rec_dir = recording.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let canon = |p: &Path| std::fs::canonicalize(p).map_err(|e| io_error(p, e));
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let name = recording.file_name().ok_or_else(|| usage("--out must name a file"))?;
    if canon(dir)? == canon(rec_dir)? {
        Ok(PathBuf::from(name))
    } else {
        Ok(canon(rec_dir)?.join(name))
    }
}
