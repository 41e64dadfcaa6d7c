//! Optional JSON config file whose keys mirror the long flag names.
//! A flag given on the command line always wins over the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub manifest: Option<PathBuf>,
    pub experiment: Option<String>,
    pub neurons: Option<Vec<usize>>,
    pub d_max: Option<usize>,
    pub restarts: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub lambda_init: Option<f64>,
    pub lambda_up: Option<f64>,
    pub lambda_down: Option<f64>,
    pub lambda_max: Option<f64>,
    pub max_epochs: Option<usize>,
    pub grad_tol: Option<f64>,
    pub mse_tol: Option<f64>,
    pub prime: Option<String>,
    pub corr_range: Option<String>,
    pub detrend_test: Option<bool>,
    pub select: Option<String>,
    pub n_hidden: Option<usize>,
    pub delay: Option<usize>,
    pub baseline_gamma: Option<f64>,
    pub baseline_d: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        let mut cfg: ConfigFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?;
        // paths inside the file are relative to the file itself
        if let (Some(m), Some(dir)) = (&cfg.manifest, path.parent()) {
            if m.is_relative() {
                cfg.manifest = Some(dir.join(m));
            }
        }
        Ok(cfg)
    }
}

/// Parses `1-20,40,80` into `[1, 2, ..., 20, 40, 80]`.
pub fn parse_neurons(s: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| format!("bad range {part:?}"))?;
                let b: usize = b.trim().parse().map_err(|_| format!("bad range {part:?}"))?;
                if a > b {
                    return Err(format!("empty range {part:?}"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| format!("bad neuron count {part:?}"))?),
        }
    }
    if out.is_empty() {
        return Err("neuron list is empty".into());
    }
    Ok(out)
}

/// Parses `START:END` or `START,END` (1-based, inclusive).
pub fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once([':', ','])
        .ok_or_else(|| format!("expected START:END, got {s:?}"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad range start {a:?}"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad range end {b:?}"))?;
    if a == 0 || b < a {
        return Err(format!("range {a}:{b} must satisfy 1 <= START <= END"));
    }
    Ok((a, b))
}
