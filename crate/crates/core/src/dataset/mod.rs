//! Recording files, experiment manifests and synthetic signal generators.
//!
//! A recording is a UTF-8 comma-separated file with one header row of channel
//! names and one row per sample. Leading `# key=value` lines carry optional
//! metadata (`sample_rate_hz`). A column named `sample` or `index` is treated
//! as 1-based sample numbering and validated rather than exposed as a channel.

pub mod synthetic;

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{SearchData, SeriesPair};
use crate::signal::{slice, SegmentBounds, TimeSeries};

pub use synthetic::{generate, GroundTruth, PseudoCardiacRhythm, Synthetic, SyntheticKind, SyntheticSpec};

const INDEX_COLUMNS: [&str; 2] = ["sample", "index"];

/// All channels of one recording file.
#[derive(Debug, Clone)]
pub struct Recording {
    pub path: PathBuf,
    pub channels: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub sample_rate_hz: Option<f64>,
}

impl Recording {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut sample_rate_hz = None;
        for line in text.lines().take_while(|l| l.trim_start().starts_with('#')) {
            let body = line.trim_start().trim_start_matches('#').trim();
            if let Some((key, value)) = body.split_once(['=', ':']) {
                if key.trim() == "sample_rate_hz" {
                    let hz: f64 = value.trim().parse().map_err(|_| Error::MalformedRow {
                        path: path.to_path_buf(),
                        row: 0,
                        message: format!("bad sample_rate_hz {:?}", value.trim()),
                    })?;
                    if !(hz.is_finite() && hz > 0.0) {
                        return Err(Error::MalformedRow {
                            path: path.to_path_buf(),
                            row: 0,
                            message: format!("sample_rate_hz must be > 0, got {hz}"),
                        });
                    }
                    sample_rate_hz = Some(hz);
                }
            }
        }

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| Error::MalformedRow {
                path: path.to_path_buf(),
                row: 0,
                message: format!("header: {e}"),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.is_empty() || headers.iter().any(String::is_empty) {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                row: 0,
                message: "header row must name every column".into(),
            });
        }
        let index_col = headers
            .iter()
            .position(|h| INDEX_COLUMNS.contains(&h.to_ascii_lowercase().as_str()));

        let mut columns = vec![Vec::new(); headers.len()];
        for (i, rec) in reader.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| Error::MalformedRow {
                path: path.to_path_buf(),
                row,
                message: e.to_string(),
            })?;
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::MalformedRow {
                    path: path.to_path_buf(),
                    row,
                    message: format!("column {:?}: cannot parse {field:?}", headers[c]),
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue {
                        path: path.to_path_buf(),
                        row,
                        channel: headers[c].clone(),
                    });
                }
                if Some(c) == index_col && v != row as f64 {
                    return Err(Error::MalformedRow {
                        path: path.to_path_buf(),
                        row,
                        message: format!("sample index {v} should be {row}"),
                    });
                }
                columns[c].push(v);
            }
        }

        let (mut channels, mut data) = (Vec::new(), Vec::new());
        for (c, (name, col)) in headers.into_iter().zip(columns).enumerate() {
            if Some(c) != index_col {
                channels.push(name);
                data.push(col);
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            channels,
            columns: data,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.columns.first().map(Vec::len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, name: &str) -> Result<TimeSeries> {
        let c = self
            .channels
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownChannel {
                path: self.path.clone(),
                channel: name.to_string(),
                available: self.channels.join(", "),
            })?;
        let mut ts = TimeSeries::new(self.columns[c].clone())
            .map_err(|e| Error::MalformedRow {
                path: self.path.clone(),
                row: 0,
                message: e.to_string(),
            })?
            .with_label(name);
        if let Some(hz) = self.sample_rate_hz {
            ts = ts.with_sample_rate(hz)?;
        }
        Ok(ts)
    }
}

pub fn load_recording(path: &Path, channel: &str) -> Result<TimeSeries> {
    Recording::read(path)?.channel(channel)
}

/// Writes equal-length channels with a 1-based `sample` column. Channel names
/// come from the series labels.
pub fn write_recording(path: &Path, channels: &[&TimeSeries]) -> Result<()> {
    let first = channels
        .first()
        .ok_or_else(|| Error::InvalidInput("nothing to write".into()))?;
    let n = first.len();
    let mut names = BTreeSet::new();
    for ts in channels {
        if ts.len() != n {
            return Err(Error::dimension("recording channel length", n, ts.len()));
        }
        let label = ts.label();
        if label.is_empty() || label.contains([',', '"', '\n']) || INDEX_COLUMNS.contains(&label) {
            return Err(Error::InvalidInput(format!("unusable channel name {label:?}")));
        }
        if !names.insert(label) {
            return Err(Error::InvalidInput(format!("duplicate channel name {label:?}")));
        }
    }
    let mut out = String::with_capacity(n * 24 * (channels.len() + 1));
    if let Some(hz) = first.sample_rate_hz() {
        out.push_str(&format!("# sample_rate_hz={hz:?}\n"));
    }
    out.push_str("sample");
    for ts in channels {
        out.push(',');
        out.push_str(ts.label());
    }
    out.push('\n');
    for t in 0..n {
        out.push_str(&(t + 1).to_string());
        for ts in channels {
            out.push(',');
            // Debug formatting is the shortest string that parses back exactly
            out.push_str(&format!("{:?}", ts.samples()[t]));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rhythm {
    Normal,
    VentricularFlutter,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Training,
    Validation,
    Testing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub recording_id: String,
    pub rhythm: Rhythm,
    pub input_channel: String,
    pub output_channel: String,
    pub bounds: SegmentBounds,
    pub role: Role,
    /// Relative paths resolve against the manifest's directory.
    pub source_file: PathBuf,
    /// Groups entries that form one train/validate/test experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentManifest {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let manifest_err = |message: String| Error::Manifest {
            path: base_dir.to_path_buf(),
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| manifest_err(e.to_string()))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == MANIFEST_SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(manifest_err(format!("unsupported schema_version {v}"))),
            None => return Err(manifest_err("missing schema_version".into())),
        }
        let mut manifest: ExperimentManifest =
            serde_json::from_value(value).map_err(|e| manifest_err(e.to_string()))?;
        manifest.base_dir = base_dir.to_path_buf();
        manifest.validate().map_err(manifest_err)?;
        Ok(manifest)
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.entries.is_empty() {
            return Err("manifest has no entries".into());
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if e.recording_id.trim().is_empty() {
                return Err("entry with empty recording_id".into());
            }
            if !seen.insert((e.recording_id.as_str(), e.role as u8)) {
                return Err(format!(
                    "recording {:?} listed twice with role {:?}",
                    e.recording_id, e.role
                ));
            }
        }
        for group in self.experiments() {
            let roles: Vec<Role> = self.entries_of(group.as_deref()).map(|e| e.role).collect();
            let name = group.as_deref().unwrap_or("<default>");
            if !roles.contains(&Role::Training) {
                return Err(format!("experiment {name} has no training entry"));
            }
            if !roles.contains(&Role::Testing) {
                return Err(format!("experiment {name} has no testing entry"));
            }
        }
        Ok(())
    }

    /// Distinct experiment groups in order of first appearance.
    pub fn experiments(&self) -> Vec<Option<String>> {
        let mut out: Vec<Option<String>> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.experiment) {
                out.push(e.experiment.clone());
            }
        }
        out
    }

    fn entries_of<'a>(&'a self, experiment: Option<&'a str>) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.entries
            .iter()
            .filter(move |e| e.experiment.as_deref() == experiment)
    }

    pub fn source_path(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.source_file.is_absolute() {
            entry.source_file.clone()
        } else {
            self.base_dir.join(&entry.source_file)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn load_manifest(path: &Path) -> Result<ExperimentManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    ExperimentManifest::from_json(&text, &base).map_err(|e| match e {
        Error::Manifest { message, .. } => Error::Manifest {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// A sliced input/output pair with its manifest provenance.
#[derive(Debug, Clone)]
pub struct ResolvedPair {
    pub recording_id: String,
    pub role: Role,
    pub bounds: SegmentBounds,
    pub pair: SeriesPair,
}

#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub experiment: Option<String>,
    pub train: Vec<ResolvedPair>,
    pub validation: Vec<ResolvedPair>,
    pub test: ResolvedPair,
    /// Hygiene findings such as training ranges overlapping held-out ranges.
    pub warnings: Vec<String>,
}

impl ResolvedExperiment {
    pub fn search_data(&self) -> SearchData {
        SearchData {
            train: self.train.iter().map(|p| p.pair.clone()).collect(),
            validation: self.validation.iter().map(|p| p.pair.clone()).collect(),
            test: self.test.pair.clone(),
        }
    }

    pub fn dataset_ids(&self) -> Vec<String> {
        self.train
            .iter()
            .chain(&self.validation)
            .chain(std::iter::once(&self.test))
            .map(|p| format!("{}:{:?}:{}-{}", p.recording_id, p.role, p.bounds.start(), p.bounds.end()).to_lowercase())
            .collect()
    }
}

/// Loads and slices every entry of one experiment group. `experiment` may be
/// omitted when the manifest holds a single group.
pub fn resolve(manifest: &ExperimentManifest, experiment: Option<&str>) -> Result<ResolvedExperiment> {
    let groups = manifest.experiments();
    let group: Option<String> = match experiment {
        Some(name) => {
            if !groups.iter().any(|g| g.as_deref() == Some(name)) {
                return Err(Error::Manifest {
                    path: manifest.base_dir.clone(),
                    message: format!("no experiment named {name:?}"),
                });
            }
            Some(name.to_string())
        }
        None if groups.len() == 1 => groups[0].clone(),
        None => {
            return Err(Error::Manifest {
                path: manifest.base_dir.clone(),
                message: format!(
                    "manifest holds several experiments ({}); choose one",
                    groups.iter().map(|g| g.as_deref().unwrap_or("<default>")).collect::<Vec<_>>().join(", ")
                ),
            })
        }
    };

    let mut cache: HashMap<PathBuf, Recording> = HashMap::new();
    let mut resolved = Vec::new();
    for entry in manifest.entries_of(group.as_deref()) {
        let path = manifest.source_path(entry);
        if !cache.contains_key(&path) {
            cache.insert(path.clone(), Recording::read(&path)?);
        }
        let rec = &cache[&path];
        if entry.bounds.end() > rec.len() {
            return Err(Error::Range(format!(
                "entry {} ({:?}): bounds ({}, {}) exceed the {} samples of {}",
                entry.recording_id,
                entry.role,
                entry.bounds.start(),
                entry.bounds.end(),
                rec.len(),
                path.display()
            )));
        }
        let input = slice(&rec.channel(&entry.input_channel)?, entry.bounds)?;
        let output = slice(&rec.channel(&entry.output_channel)?, entry.bounds)?;
        resolved.push((
            path,
            ResolvedPair {
                recording_id: entry.recording_id.clone(),
                role: entry.role,
                bounds: entry.bounds,
                pair: SeriesPair::new(input, output)?,
            },
        ));
    }

    let mut warnings = Vec::new();
    for (pa, a) in resolved.iter().filter(|(_, p)| p.role == Role::Training) {
        for (pb, b) in resolved.iter().filter(|(_, p)| p.role != Role::Training) {
            if a.recording_id == b.recording_id && pa == pb && a.bounds.overlaps(&b.bounds) {
                warnings.push(format!(
                    "recording {}: training samples {}-{} overlap {:?} samples {}-{}",
                    a.recording_id,
                    a.bounds.start(),
                    a.bounds.end(),
                    b.role,
                    b.bounds.start(),
                    b.bounds.end()
                ));
            }
        }
    }

    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut tests = Vec::new();
    for (_, p) in resolved {
        match p.role {
            Role::Training => train.push(p),
            Role::Validation => validation.push(p),
            Role::Testing => tests.push(p),
        }
    }
    if tests.len() != 1 {
        return Err(Error::Manifest {
            path: manifest.base_dir.clone(),
            message: format!("experiment needs exactly one testing entry, found {}", tests.len()),
        });
    }
    Ok(ResolvedExperiment {
        experiment: group,
        train,
        validation,
        test: tests.pop().expect("one test entry"),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn reads_named_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "bsp,hsp\n1.5,2\n-3,4.25\n");
        assert_eq!(load_recording(&p, "hsp").unwrap().samples(), &[2.0, 4.25]);
        assert_eq!(load_recording(&p, "bsp").unwrap().label(), "bsp");
        assert!(matches!(load_recording(&p, "ecg"), Err(Error::UnknownChannel { .. })));
    }

    #[test]
    fn nan_row_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "bsp,hsp\n1,2\n3,NaN\n5,6\n");
        match load_recording(&p, "bsp") {
            Err(Error::NonFiniteValue { row, channel, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(channel, "hsp");
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "bsp,hsp\n1,2\n3\n");
        assert!(matches!(load_recording(&p, "bsp"), Err(Error::MalformedRow { row: 2, .. })));
        let p = write(dir.path(), "s.csv", "bsp,hsp\n1,2\n3,x\n");
        assert!(matches!(load_recording(&p, "bsp"), Err(Error::MalformedRow { row: 2, .. })));
        assert!(matches!(
            load_recording(&dir.path().join("missing.csv"), "bsp"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn index_column_and_rate_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "# sample_rate_hz=250\nsample,bsp\n1,0.5\n2,0.25\n3,1\n");
        let ts = load_recording(&p, "bsp").unwrap();
        assert_eq!(ts.len(), 3);
        assert_eq!(ts.sample_rate_hz(), Some(250.0));
        let p = write(dir.path(), "bad.csv", "sample,bsp\n1,0.5\n3,0.25\n");
        assert!(load_recording(&p, "bsp").is_err());
    }

    #[test]
    fn write_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let a = TimeSeries::new(vec![0.1, -1e-300, 123456.789, 1.0 / 3.0])
            .unwrap()
            .with_label("bsp")
            .with_sample_rate(1000.0)
            .unwrap();
        let b = TimeSeries::new(vec![f64::MIN_POSITIVE, 2.0, -0.0, 7e22])
            .unwrap()
            .with_label("hsp")
            .with_sample_rate(1000.0)
            .unwrap();
        let p = dir.path().join("rt.csv");
        write_recording(&p, &[&a, &b]).unwrap();
        assert_eq!(load_recording(&p, "bsp").unwrap(), a);
        assert_eq!(load_recording(&p, "hsp").unwrap(), b);
    }

    fn entry(id: &str, role: Role, start: usize, end: usize) -> ManifestEntry {
        ManifestEntry {
            recording_id: id.into(),
            rhythm: Rhythm::Synthetic,
            input_channel: "bsp".into(),
            output_channel: "hsp".into(),
            bounds: SegmentBounds::new(start, end).unwrap(),
            role,
            source_file: PathBuf::from(format!("{id}.csv")),
            experiment: None,
        }
    }

    #[test]
    fn manifest_needs_testing_entry() {
        let m = ExperimentManifest {
            schema_version: 1,
            description: None,
            entries: vec![entry("a", Role::Training, 1, 10)],
            base_dir: PathBuf::new(),
        };
        let text = m.to_json().unwrap();
        assert!(matches!(
            ExperimentManifest::from_json(&text, Path::new(".")),
            Err(Error::Manifest { .. })
        ));
    }

    #[test]
    fn manifest_rejects_unknown_version_and_duplicates() {
        let m = ExperimentManifest {
            schema_version: 2,
            description: None,
            entries: vec![entry("a", Role::Training, 1, 10), entry("b", Role::Testing, 1, 10)],
            base_dir: PathBuf::new(),
        };
        assert!(ExperimentManifest::from_json(&m.to_json().unwrap(), Path::new(".")).is_err());
        let m = ExperimentManifest {
            schema_version: 1,
            description: None,
            entries: vec![
                entry("a", Role::Training, 1, 10),
                entry("a", Role::Training, 20, 30),
                entry("b", Role::Testing, 1, 10),
            ],
            base_dir: PathBuf::new(),
        };
        assert!(ExperimentManifest::from_json(&m.to_json().unwrap(), Path::new(".")).is_err());
    }

    fn recording(dir: &Path, id: &str, n: usize) {
        let u = TimeSeries::new((0..n).map(|t| (t as f64 * 0.3).sin()).collect())
            .unwrap()
            .with_label("bsp");
        let y = TimeSeries::new((0..n).map(|t| (t as f64 * 0.3).cos()).collect())
            .unwrap()
            .with_label("hsp");
        write_recording(&dir.join(format!("{id}.csv")), &[&u, &y]).unwrap();
    }

    #[test]
    fn resolve_slices_and_warns_on_overlap() {
        let dir = tempfile::tempdir().unwrap();
        recording(dir.path(), "a", 100);
        let m = ExperimentManifest {
            schema_version: 1,
            description: None,
            entries: vec![entry("a", Role::Training, 1, 60), entry("a", Role::Testing, 50, 100)],
            base_dir: dir.path().to_path_buf(),
        };
        let r = resolve(&m, None).unwrap();
        assert_eq!(r.train[0].pair.input.len(), 60);
        assert_eq!(r.test.pair.output.len(), 51);
        assert_eq!(r.warnings.len(), 1);

        let m = ExperimentManifest {
            entries: vec![entry("a", Role::Training, 1, 50), entry("a", Role::Testing, 51, 100)],
            ..m
        };
        assert!(resolve(&m, None).unwrap().warnings.is_empty());
    }

    #[test]
    fn resolve_range_error_names_entry() {
        let dir = tempfile::tempdir().unwrap();
        recording(dir.path(), "a", 100);
        let m = ExperimentManifest {
            schema_version: 1,
            description: None,
            entries: vec![entry("a", Role::Training, 1, 60), entry("a", Role::Testing, 61, 101)],
            base_dir: dir.path().to_path_buf(),
        };
        match resolve(&m, None) {
            Err(Error::Range(msg)) => assert!(msg.contains("entry a"), "{msg}"),
            other => panic!("expected range error, got {other:?}"),
        }
    }
}
