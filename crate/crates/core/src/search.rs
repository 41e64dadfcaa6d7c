//! Exhaustive search over hidden-layer sizes and delay windows.
//!
//! Training pairs are concatenated and detrended, then every `(N, d)` pair is
//! visited in loop order (outer loop over the neuron list, inner loop over
//! `d = 1..=d_max`). Each configuration is trained with Levenberg-Marquardt,
//! replayed over the held-out input and scored by Pearson correlation. The
//! first configuration reaching a strictly larger correlation wins.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{pearson, CorrelationRange};
use crate::network::{init_model, predict_series, DelayState, PrimePolicy, TdannModel};
use crate::optimizer::{lm_train, LmConfig, Termination};
use crate::signal::{build_delay_matrix, concat_all, detrend, TimeSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub neurons: Vec<usize>,
    pub d_max: usize,
    pub restarts_per_config: usize,
    pub base_seed: u64,
}

impl Default for SearchSpace {
    /// Hidden sizes 1..=20, 40, 80 and 100; delays 1..=20; one training each.
    fn default() -> Self {
        Self {
            neurons: (1..=20).chain([40, 80, 100]).collect(),
            d_max: 20,
            restarts_per_config: 1,
            base_seed: 0,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.neurons.is_empty() {
            return Err(Error::InvalidInput("search space has no hidden-layer sizes".into()));
        }
        if self.neurons.contains(&0) {
            return Err(Error::InvalidInput("hidden-layer sizes must be positive".into()));
        }
        let mut seen = self.neurons.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.neurons.len() {
            return Err(Error::InvalidInput("hidden-layer sizes must be distinct".into()));
        }
        if self.d_max == 0 {
            return Err(Error::InvalidInput("d_max must be at least 1".into()));
        }
        if self.restarts_per_config == 0 {
            return Err(Error::InvalidInput("restarts_per_config must be at least 1".into()));
        }
        Ok(())
    }

    pub fn config_count(&self) -> usize {
        self.neurons.len() * self.d_max * self.restarts_per_config
    }

    /// Every `(n, d, restart)` in visiting order.
    pub fn configs(&self) -> Vec<ConfigKey> {
        let mut out = Vec::with_capacity(self.config_count());
        for &n in &self.neurons {
            for d in 1..=self.d_max {
                for restart in 0..self.restarts_per_config {
                    out.push(ConfigKey { n, d, restart });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConfigKey {
    pub n: usize,
    pub d: usize,
    pub restart: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Initialization seed for one configuration.
pub fn seed_for(base_seed: u64, n: usize, d: usize, restart: usize) -> u64 {
    [n as u64, d as u64, restart as u64]
        .into_iter()
        .fold(splitmix64(base_seed), |h, v| splitmix64(h ^ v))
}

/// Which held-out signal drives model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Select on the test pair, as the original protocol does.
    #[default]
    Test,
    /// Select on the mean correlation over validation pairs; test is reported only.
    Validation,
}

#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub jobs: usize,
    pub prime: PrimePolicy,
    pub range: CorrelationRange,
    /// Detrend held-out series before prediction and scoring.
    pub detrend_test: bool,
    pub selection: Selection,
    /// Line-delimited JSON run log; existing records are reused.
    pub log_path: Option<PathBuf>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            prime: PrimePolicy::InputHead,
            range: CorrelationRange::Full,
            detrend_test: false,
            selection: Selection::Test,
            log_path: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeriesPair {
    pub input: TimeSeries,
    pub output: TimeSeries,
}

impl SeriesPair {
    pub fn new(input: TimeSeries, output: TimeSeries) -> Result<Self> {
        if input.len() != output.len() {
            return Err(Error::dimension("input/output pair", input.len(), output.len()));
        }
        Ok(Self { input, output })
    }
}

#[derive(Debug, Clone)]
pub struct SearchData {
    pub train: Vec<SeriesPair>,
    pub validation: Vec<SeriesPair>,
    pub test: SeriesPair,
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRecord {
    pub n: usize,
    pub d: usize,
    pub restart: usize,
    pub seed: u64,
    pub train_mse: Option<f64>,
    pub test_corr: Option<f64>,
    pub validation_corr: Option<f64>,
    pub lm_termination: Termination,
    pub epochs: usize,
    pub diagnostic: Option<String>,
}

impl SearchRecord {
    pub fn key(&self) -> ConfigKey {
        ConfigKey {
            n: self.n,
            d: self.d,
            restart: self.restart,
        }
    }

    pub fn score(&self, selection: Selection) -> Option<f64> {
        match selection {
            Selection::Test => self.test_corr,
            Selection::Validation => self.validation_corr,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best_model: TdannModel,
    /// Selection score of the winner (test correlation unless selecting on validation).
    pub max_corr: f64,
    pub best_n: usize,
    pub best_d: usize,
    pub best_restart: usize,
    pub best_seed: u64,
    pub best_test_corr: Option<f64>,
    pub best_train_mse: Option<f64>,
    pub selection: Selection,
    /// Records in visiting order.
    pub full_log: Vec<SearchRecord>,
}

impl SearchResult {
    /// `(n, d, best test correlation over restarts)` in visiting order.
    pub fn grid(&self) -> Vec<(usize, usize, Option<f64>)> {
        let mut out: Vec<(usize, usize, Option<f64>)> = Vec::new();
        for r in &self.full_log {
            match out.last_mut() {
                Some(last) if last.0 == r.n && last.1 == r.d => {
                    last.2 = match (last.2, r.test_corr) {
                        (Some(a), Some(b)) => Some(a.max(b)),
                        (a, b) => a.or(b),
                    };
                }
                _ => out.push((r.n, r.d, r.test_corr)),
            }
        }
        out
    }
}

/// Training and held-out series after concatenation and detrending.
struct Prepared {
    train_input: TimeSeries,
    train_output: TimeSeries,
    validation: Vec<SeriesPair>,
    test: SeriesPair,
}

fn prepare(data: &SearchData, space: &SearchSpace, opts: &SearchOptions) -> Result<Prepared> {
    if data.train.is_empty() {
        return Err(Error::InvalidInput("at least one training pair is required".into()));
    }
    for (i, p) in data.train.iter().enumerate() {
        if p.input.len() != p.output.len() {
            return Err(Error::InvalidInput(format!(
                "training pair {} has input length {} but output length {}",
                i + 1,
                p.input.len(),
                p.output.len()
            )));
        }
    }
    let held_out = std::iter::once(("test", &data.test)).chain(data.validation.iter().map(|p| ("validation", p)));
    for (what, p) in held_out {
        if p.input.len() != p.output.len() {
            return Err(Error::InvalidInput(format!("{what} input and output lengths differ")));
        }
        if p.input.len() <= space.d_max {
            return Err(Error::InvalidInput(format!(
                "{what} series ({} samples) must be longer than d_max = {}",
                p.input.len(),
                space.d_max
            )));
        }
    }
    if opts.selection == Selection::Validation && data.validation.is_empty() {
        return Err(Error::InvalidInput("validation selection needs validation pairs".into()));
    }
    let train_input = detrend(&concat_all(data.train.iter().map(|p| &p.input))?)?;
    let train_output = detrend(&concat_all(data.train.iter().map(|p| &p.output))?)?;
    if train_input.len() <= space.d_max {
        return Err(Error::InvalidInput(format!(
            "training data ({} samples) must be longer than d_max = {}",
            train_input.len(),
            space.d_max
        )));
    }
    let held = |p: &SeriesPair| -> Result<SeriesPair> {
        if opts.detrend_test {
            SeriesPair::new(detrend(&p.input)?, detrend(&p.output)?)
        } else {
            Ok(p.clone())
        }
    };
    Ok(Prepared {
        train_input,
        train_output,
        validation: data.validation.iter().map(held).collect::<Result<_>>()?,
        test: held(&data.test)?,
    })
}

fn held_out_corr(model: &TdannModel, pair: &SeriesPair, opts: &SearchOptions) -> Result<f64> {
    let u = pair.input.samples();
    let prime = DelayState::for_policy(opts.prime, u, model.delay())?;
    let pred = predict_series(model, &pair.input, &prime)?;
    let start = opts.range.first_index(model.delay());
    pearson(&pair.output.samples()[start..], &pred.samples()[start..])
}

fn run_config(
    prep: &Prepared,
    key: ConfigKey,
    seed: u64,
    cfg: &LmConfig,
    opts: &SearchOptions,
) -> (SearchRecord, Option<TdannModel>) {
    let mut record = SearchRecord {
        n: key.n,
        d: key.d,
        restart: key.restart,
        seed,
        train_mse: None,
        test_corr: None,
        validation_corr: None,
        lm_termination: Termination::NonFinite,
        epochs: 0,
        diagnostic: None,
    };
    let trained = build_delay_matrix(&prep.train_input, key.d).and_then(|x| {
        let targets = &prep.train_output.samples()[key.d..];
        lm_train(&init_model(key.d, key.n, seed)?, &x, targets, cfg)
    });
    let (model, report) = match trained {
        Ok(t) => t,
        Err(e) => {
            record.diagnostic = Some(format!("training failed: {e}"));
            return (record, None);
        }
    };
    record.lm_termination = report.termination;
    record.epochs = report.epochs.len();
    if report.termination.is_failure() {
        record.diagnostic = report.diagnostic;
        return (record, None);
    }
    record.train_mse = Some(report.final_mse);

    let mut notes = Vec::new();
    match held_out_corr(&model, &prep.test, opts) {
        Ok(c) => record.test_corr = Some(c),
        Err(e) => notes.push(format!("test correlation missing: {e}")),
    }
    if !prep.validation.is_empty() {
        let corrs: Result<Vec<f64>> = prep
            .validation
            .iter()
            .map(|p| held_out_corr(&model, p, opts))
            .collect();
        match corrs {
            Ok(c) => record.validation_corr = Some(c.iter().sum::<f64>() / c.len() as f64),
            Err(e) => notes.push(format!("validation correlation missing: {e}")),
        }
    }
    if !notes.is_empty() {
        record.diagnostic = Some(notes.join("; "));
    }
    (record, Some(model))
}

/// Reads completed records, dropping a torn trailing line, and rewrites the
/// file so new records append cleanly.
fn resume_log(path: &Path, space: &SearchSpace) -> Result<HashMap<ConfigKey, SearchRecord>> {
    let mut done = HashMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut kept = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let record: SearchRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => {
                return Err(Error::Schema(format!(
                    "{}: run log line {} is not a record: {e}",
                    path.display(),
                    i + 1
                )))
            }
        };
        if record.seed != seed_for(space.base_seed, record.n, record.d, record.restart) {
            return Err(Error::Schema(format!(
                "{}: run log was produced with a different base seed",
                path.display()
            )));
        }
        kept.push(*line);
        done.insert(record.key(), record);
    }
    let mut rewritten = kept.join("\n");
    if !rewritten.is_empty() {
        rewritten.push('\n');
    }
    std::fs::write(path, rewritten).map_err(|e| Error::io(path, e))?;
    Ok(done)
}

fn append_record(log: &Mutex<File>, path: &Path, record: &SearchRecord) -> Result<()> {
    let mut line = serde_json::to_string(record)?;
    line.push('\n');
    let mut file = log.lock().unwrap_or_else(|p| p.into_inner());
    file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Runs the exhaustive search and returns the winning model with the full log.
pub fn grid_search(
    data: &SearchData,
    space: &SearchSpace,
    cfg: &LmConfig,
    opts: &SearchOptions,
) -> Result<SearchResult> {
    space.validate()?;
    cfg.validate()?;
    let prep = prepare(data, space, opts)?;

    let mut done = match &opts.log_path {
        Some(path) => resume_log(path, space)?,
        None => HashMap::new(),
    };
    let log = match &opts.log_path {
        Some(path) => Some(Mutex::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?,
        )),
        None => None,
    };

    let keys = space.configs();
    let pending: Vec<ConfigKey> = keys.iter().copied().filter(|k| !done.contains_key(k)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let fresh: Vec<(SearchRecord, Option<TdannModel>)> = pool.install(|| {
        pending
            .par_iter()
            .map(|&key| {
                let seed = seed_for(space.base_seed, key.n, key.d, key.restart);
                let out = run_config(&prep, key, seed, cfg, opts);
                if let (Some(log), Some(path)) = (&log, &opts.log_path) {
                    append_record(log, path, &out.0)?;
                }
                Ok(out)
            })
            .collect::<Result<_>>()
    })?;

    let mut models = HashMap::new();
    for (record, model) in fresh {
        if let Some(m) = model {
            models.insert(record.key(), m);
        }
        done.insert(record.key(), record);
    }
    let full_log: Vec<SearchRecord> = keys.iter().map(|k| done.remove(k).expect("every config ran")).collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, r) in full_log.iter().enumerate() {
        if let Some(score) = r.score(opts.selection) {
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
    }
    let (idx, max_corr) = best.ok_or_else(|| {
        Error::NoValidConfiguration(format!(
            "none of the {} configurations produced a usable correlation",
            full_log.len()
        ))
    })?;
    let winner = &full_log[idx];
    let best_model = match models.remove(&winner.key()) {
        Some(m) => m,
        // trained in an earlier run; training is deterministic so redo it
        None => run_config(&prep, winner.key(), winner.seed, cfg, opts)
            .1
            .ok_or_else(|| Error::NoValidConfiguration("could not retrain resumed winner".into()))?,
    };

    Ok(SearchResult {
        best_model,
        max_corr,
        best_n: winner.n,
        best_d: winner.d,
        best_restart: winner.restart,
        best_seed: winner.seed,
        best_test_corr: winner.test_corr,
        best_train_mse: winner.train_mse,
        selection: opts.selection,
        full_log,
    })
}
