//! Output layout, record types and their readers and writers.

use std::path::{Path, PathBuf};

use cdbench_core::domains::{load_csv_dataset, CsvSchema};
use cdbench_core::engine::{load_checkpoint, save_checkpoint};
use cdbench_core::{DomainDataset, Method, MlpModel, ScenarioSpec, TeacherModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, CliResult};

/// Paths under an experiment's output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn scenario_dir(&self) -> PathBuf {
        self.root.join("scenario")
    }

    pub fn manifest(&self) -> PathBuf {
        self.scenario_dir().join("manifest.json")
    }

    pub fn teachers_dir(&self) -> PathBuf {
        self.root.join("teachers")
    }

    pub fn teacher_seed_dir(&self, seed: u64) -> PathBuf {
        self.teachers_dir().join(format!("seed_{seed}"))
    }

    pub fn teacher_checkpoint(&self, seed: u64, teacher: usize) -> PathBuf {
        self.teacher_seed_dir(seed).join(format!("teacher_{teacher}.ckpt"))
    }

    pub fn teacher_report(&self) -> PathBuf {
        self.teachers_dir().join("report.json")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.root.join("run")
    }

    pub fn sweep_dir(&self) -> PathBuf {
        self.root.join("sweep")
    }
}

/// File names inside one run directory.
pub mod run_files {
    pub const RESULTS: &str = "results.csv";
    pub const TIMING: &str = "timing.csv";
    pub const SUMMARY: &str = "summary.json";
    pub const RUN_INFO: &str = "run.json";
    pub const CHECKPOINTS: &str = "checkpoints";
    pub const CURVES: &str = "curves";
    pub const ANALYSIS: &str = "analysis";
    pub const SWEEP_RESULTS: &str = "sweep.csv";
    pub const SWEEP_INFO: &str = "sweep.json";
}

/// Final accuracy of one student on one domain after one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    pub method: Method,
    pub task: usize,
    pub teacher: usize,
    pub domain: usize,
    pub accuracy: f64,
}

/// Wall-clock cost of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub seed: u64,
    pub method: Method,
    pub task: usize,
    pub elapsed_seconds: f64,
}

/// One point of a per-domain accuracy curve of a single student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub task: usize,
    pub epoch: usize,
    pub domain: usize,
    pub accuracy: f64,
}

/// A [`ResultRow`] tagged with the ratio of the sweep block it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ed_ratio: f64,
    pub seed: u64,
    pub method: Method,
    pub task: usize,
    pub teacher: usize,
    pub domain: usize,
    pub accuracy: f64,
}

/// Index of a generated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioManifest {
    pub schema_version: u32,
    pub spec: ScenarioSpec,
    pub domains: Vec<DomainEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainEntry {
    pub domain: usize,
    pub file: String,
    /// `shared`, `teacher`, `external` or `unused`.
    pub role: String,
    pub train: usize,
    pub test: usize,
}

/// Writes `bytes` to a sibling temporary file and renames it into place, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

/// Reads typed rows; malformed input yields a data error naming the line.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|row| {
            row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                CliError::Data(format!("{} line {line}: {e}", path.display()))
            })
        })
        .collect()
}

/// Loads the generated scenario data, checking it still matches `spec`.
/// The ratio is not part of the data, so it may differ.
pub fn load_domains(layout: &Layout, spec: &ScenarioSpec) -> CliResult<Vec<DomainDataset>> {
    let path = layout.manifest();
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "no scenario at {}; run `cdbench gen` first",
            layout.scenario_dir().display()
        )));
    }
    let manifest: ScenarioManifest = read_json(&path)?;
    if manifest.spec.num_teachers() != spec.num_teachers() {
        return Err(CliError::Config(format!(
            "teacher count mismatch: config has {} teachers, {} has {}",
            spec.num_teachers(),
            path.display(),
            manifest.spec.num_teachers()
        )));
    }
    let mut on_disk = manifest.spec.clone();
    on_disk.ed_ratio = spec.ed_ratio;
    if &on_disk != spec {
        return Err(CliError::Config(format!(
            "scenario in config differs from {}; rerun `cdbench gen`",
            path.display()
        )));
    }
    let schema = CsvSchema::standard(spec.feature_dim);
    let mut domains = Vec::with_capacity(manifest.domains.len());
    for entry in &manifest.domains {
        let file = layout.scenario_dir().join(&entry.file);
        let mut loaded = load_csv_dataset(&file, &schema)?;
        match (loaded.pop(), loaded.is_empty()) {
            (Some(ds), true) if ds.domain == entry.domain => domains.push(ds),
            _ => {
                return Err(CliError::Data(format!(
                    "{} must hold exactly domain {}",
                    file.display(),
                    entry.domain
                )))
            }
        }
    }
    Ok(domains)
}

pub fn save_model(model: &MlpModel, path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    save_checkpoint(model, path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Loads one seed's teachers, which must match the spec's teacher count.
pub fn load_teachers(layout: &Layout, spec: &ScenarioSpec, seed: u64) -> CliResult<Vec<TeacherModel>> {
    let dir = layout.teacher_seed_dir(seed);
    let entries = std::fs::read_dir(&dir).map_err(|_| {
        CliError::Usage(format!(
            "no teachers for seed {seed} under {}; run `cdbench teachers` first",
            layout.teachers_dir().display()
        ))
    })?;
    let found = entries
        .filter_map(|e| e.ok())
        .filter(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.starts_with("teacher_") && name.ends_with(".ckpt")
        })
        .count();
    if found != spec.num_teachers() {
        return Err(CliError::Config(format!(
            "teacher count mismatch: spec has {} teachers, {} holds {found}",
            spec.num_teachers(),
            dir.display()
        )));
    }
    (0..spec.num_teachers())
        .map(|t| {
            let path = layout.teacher_checkpoint(seed, t);
            let model = load_checkpoint(&path).map_err(|e| match e {
                cdbench_core::Error::Io(io) => {
                    CliError::Usage(format!("{}: {io}", path.display()))
                }
                other => CliError::Data(format!("{}: {other}", path.display())),
            })?;
            Ok(TeacherModel {
                model,
                trained_domain_ids: spec.teacher_domains[t].clone(),
            })
        })
        .collect()
}
