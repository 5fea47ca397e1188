//! Aggregation of result rows into per-method statistics.

use std::collections::BTreeMap;

use cdbench_core::metrics::average_forgetting;
use cdbench_core::AccuracyMatrix;
use serde::{Deserialize, Serialize};

use crate::config::SCHEMA_VERSION;
use crate::error::{CliError, CliResult};
use crate::io::ResultRow;

/// Mean and population standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Stat {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    /// Accuracy after the last task, per domain.
    pub final_accuracy: BTreeMap<usize, Stat>,
    /// Mean forgetting over teacher-known domains at the last task; absent
    /// with a single task.
    pub average_forgetting: Option<Stat>,
    /// Mean final accuracy over domains only teachers have seen.
    pub unseen_accuracy: Option<Stat>,
    /// Mean final accuracy over every teacher-known domain.
    pub known_accuracy: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub ed_ratio: f64,
    pub seeds: Vec<u64>,
    pub tasks: usize,
    pub unseen_domains: Vec<usize>,
    pub known_domains: Vec<usize>,
    pub methods: BTreeMap<String, MethodSummary>,
}

/// Accuracy matrix of every (method, seed) cell in `rows`.
pub fn matrices(rows: &[ResultRow]) -> CliResult<BTreeMap<(String, u64), AccuracyMatrix>> {
    let mut cells: BTreeMap<(String, u64), BTreeMap<(usize, usize), f64>> = BTreeMap::new();
    for r in rows {
        let cell = cells.entry((r.method.name().to_string(), r.seed)).or_default();
        if cell.insert((r.domain, r.task), r.accuracy).is_some() {
            return Err(CliError::Data(format!(
                "duplicate row for method {} seed {} task {} domain {}",
                r.method.name(),
                r.seed,
                r.task,
                r.domain
            )));
        }
    }
    cells
        .into_iter()
        .map(|(key, cell)| {
            let mut domains: Vec<usize> = cell.keys().map(|&(d, _)| d).collect();
            domains.dedup();
            let tasks = cell.keys().map(|&(_, t)| t).max().map_or(0, |t| t + 1);
            let values = domains
                .iter()
                .map(|&d| {
                    (0..tasks)
                        .map(|t| {
                            cell.get(&(d, t)).copied().ok_or_else(|| {
                                CliError::Data(format!(
                                    "method {} seed {} has no row for task {t} domain {d}",
                                    key.0, key.1
                                ))
                            })
                        })
                        .collect::<CliResult<Vec<f64>>>()
                })
                .collect::<CliResult<Vec<_>>>()?;
            let matrix = AccuracyMatrix::new(domains, values)
                .map_err(|e| CliError::Data(format!("method {} seed {}: {e}", key.0, key.1)))?;
            Ok((key, matrix))
        })
        .collect()
}

/// Per-method statistics of a run's result rows.
pub fn summarize(
    rows: &[ResultRow],
    ed_ratio: f64,
    unseen_domains: &[usize],
    known_domains: &[usize],
) -> CliResult<RunSummary> {
    let cells = matrices(rows)?;
    let mut seeds: Vec<u64> = cells.keys().map(|(_, s)| *s).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let tasks = cells.values().map(AccuracyMatrix::num_tasks).max().unwrap_or(0);
    let mut by_method: BTreeMap<String, Vec<&AccuracyMatrix>> = BTreeMap::new();
    for ((method, _), a) in &cells {
        if a.num_tasks() != tasks {
            return Err(CliError::Data(format!("method {method} has a different task count")));
        }
        by_method.entry(method.clone()).or_default().push(a);
    }
    let data_err = |e: cdbench_core::Error| CliError::Data(e.to_string());
    let mut methods = BTreeMap::new();
    for (method, mats) in by_method {
        let mut final_accuracy = BTreeMap::new();
        for &d in mats[0].domains() {
            let values = mats
                .iter()
                .map(|a| a.final_accuracy(d))
                .collect::<Result<Vec<_>, _>>()
                .map_err(data_err)?;
            final_accuracy.insert(d, Stat::of(&values).expect("at least one seed"));
        }
        let mean_over = |domains: &[usize]| -> CliResult<Option<Stat>> {
            if domains.is_empty() {
                return Ok(None);
            }
            let values = mats
                .iter()
                .map(|a| a.mean_final(domains))
                .collect::<Result<Vec<_>, _>>()
                .map_err(data_err)?;
            Ok(Stat::of(&values))
        };
        let average_forgetting = if tasks >= 2 && !known_domains.is_empty() {
            let values = mats
                .iter()
                .map(|a| average_forgetting(a, known_domains, tasks - 1))
                .collect::<Result<Vec<_>, _>>()
                .map_err(data_err)?;
            Stat::of(&values)
        } else {
            None
        };
        methods.insert(
            method,
            MethodSummary {
                final_accuracy,
                average_forgetting,
                unseen_accuracy: mean_over(unseen_domains)?,
                known_accuracy: mean_over(known_domains)?,
            },
        );
    }
    Ok(RunSummary {
        schema_version: SCHEMA_VERSION,
        ed_ratio,
        seeds,
        tasks,
        unseen_domains: unseen_domains.to_vec(),
        known_domains: known_domains.to_vec(),
        methods,
    })
}

/// Orders rows by method name, seed, task and domain.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        (a.method.name(), a.seed, a.task, a.domain).cmp(&(b.method.name(), b.seed, b.task, b.domain))
    });
}
