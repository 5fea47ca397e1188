//! `analyze`: forgetting and transfer tables, entropy statistics and
//! accuracy curves from a run or sweep directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cdbench_core::metrics::{average_forgetting, entropy_report, forgetting, spearman, ukt_gain};
use cdbench_core::{AccuracyMatrix, Matrix, Method};
use serde::{Deserialize, Serialize};

use crate::commands::{read_results, RunInfo, SweepInfo};
use crate::config::SCHEMA_VERSION;
use crate::error::{CliError, CliResult};
use crate::io::{
    load_domains, load_teachers, read_csv, read_json, run_files, write_csv, write_json, CurveRow,
    Layout, ResultRow,
};
use crate::summary::{matrices, summarize, RunSummary, Stat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingRow {
    pub method: Method,
    pub seed: u64,
    pub domain: usize,
    pub task: usize,
    pub forgetting: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub seed: u64,
    pub teacher: usize,
    pub dataset: String,
    pub samples: usize,
    pub mean_entropy: f64,
    /// Empty when the entropies have zero variance.
    pub kurtosis: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub seed: u64,
    pub teacher: usize,
    pub dataset: String,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Seed-averaged accuracy of one domain at one evaluation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub task: usize,
    /// Empty when the curve was rebuilt from per-task results.
    pub epoch: Option<usize>,
    pub domain: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub seeds: usize,
}

/// Contents of `analysis/metrics.json` for one run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAnalysis {
    pub schema_version: u32,
    pub summary: RunSummary,
    /// Mean forgetting over teacher-known domains at the last task, per
    /// method and seed. Empty for single-task runs.
    pub average_forgetting: BTreeMap<String, BTreeMap<u64, f64>>,
    /// Forgetting of every domain at every task after the first.
    pub forgetting: Vec<ForgettingRow>,
    pub entropy: Vec<EntropyRow>,
    pub curve_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UktRow {
    pub ed_ratio: f64,
    pub method: Method,
    pub seed: u64,
    pub domain: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UktStat {
    pub ed_ratio: f64,
    pub method: String,
    pub domain: usize,
    pub gain: Stat,
}

/// Mean unseen-domain accuracy of one method across the sweep's ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioTrend {
    pub method: String,
    pub ed_ratios: Vec<f64>,
    pub unseen_accuracy: Vec<f64>,
    /// Rank correlation of accuracy with ratio; absent when undefined.
    pub spearman: Option<f64>,
}

/// Contents of `analysis/metrics.json` for a sweep directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAnalysis {
    pub schema_version: u32,
    /// Gains over the ratio-0 block; empty when the sweep has none.
    pub ukt_gain: Vec<UktStat>,
    pub trend: Vec<RatioTrend>,
}

/// What `analyze` produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Analysis {
    Run(Box<RunAnalysis>),
    Sweep(SweepAnalysis),
}

/// Analyzes a run or sweep directory, writing into its `analysis/`
/// subdirectory.
pub fn cmd_analyze(dir: &Path) -> CliResult<(PathBuf, Analysis)> {
    let out = dir.join(run_files::ANALYSIS);
    if dir.join(run_files::SWEEP_INFO).exists() {
        Ok((out, Analysis::Sweep(analyze_sweep(dir)?)))
    } else if dir.join(run_files::RESULTS).exists() {
        Ok((out, Analysis::Run(Box::new(analyze_run(dir)?))))
    } else {
        Err(CliError::Usage(format!(
            "{} holds neither {} nor {}",
            dir.display(),
            run_files::RESULTS,
            run_files::SWEEP_INFO
        )))
    }
}

fn domain_sets(info: Option<&RunInfo>, rows: &[ResultRow]) -> (Vec<usize>, Vec<usize>) {
    match info {
        Some(info) => (
            info.config.scenario.unseen_domains(),
            info.config.scenario.teacher_known_domains(),
        ),
        None => {
            let mut all: Vec<usize> = rows.iter().map(|r| r.domain).collect();
            all.sort_unstable();
            all.dedup();
            (Vec::new(), all)
        }
    }
}

/// Mean forgetting per method and seed.
type AverageForgetting = BTreeMap<String, BTreeMap<u64, f64>>;

/// (task, epoch, domain, accuracy) points of one student.
type CurvePoints = Vec<(usize, Option<usize>, usize, f64)>;

fn forgetting_tables(
    cells: &BTreeMap<(String, u64), AccuracyMatrix>,
    known: &[usize],
) -> CliResult<(Vec<ForgettingRow>, AverageForgetting)> {
    let data_err = |e: cdbench_core::Error| CliError::Data(e.to_string());
    let mut rows = Vec::new();
    let mut averages: AverageForgetting = BTreeMap::new();
    for ((method, seed), a) in cells {
        let m: Method = method.parse().map_err(|e: cdbench_core::Error| CliError::Data(e.to_string()))?;
        for &domain in a.domains() {
            for task in 1..a.num_tasks() {
                rows.push(ForgettingRow {
                    method: m,
                    seed: *seed,
                    domain,
                    task,
                    forgetting: forgetting(a, domain, task).map_err(data_err)?,
                });
            }
        }
        if a.num_tasks() >= 2 && !known.is_empty() {
            let f = average_forgetting(a, known, a.num_tasks() - 1).map_err(data_err)?;
            averages.entry(method.clone()).or_default().insert(*seed, f);
        }
    }
    Ok((rows, averages))
}

fn entropy_tables(
    dir: &Path,
    info: &RunInfo,
) -> CliResult<(Vec<EntropyRow>, Vec<HistogramRow>)> {
    let layout = Layout::new(dir.join(&info.root));
    let spec = &info.config.scenario;
    let domains = load_domains(&layout, spec)?;
    let params = info.config.analysis;
    let datasets: Vec<(String, Matrix)> = domains
        .iter()
        .map(|d| (format!("domain_{}", d.domain), d.test_features()))
        .collect();
    let mut rows = Vec::new();
    let mut hist = Vec::new();
    for &seed in &info.seeds {
        for (t, teacher) in load_teachers(&layout, spec, seed)?.iter().enumerate() {
            let report = entropy_report(
                &teacher.model,
                datasets.iter().map(|(n, m)| (n.clone(), m)),
                params.entropy_temperature,
                params.histogram_bins,
            )?;
            for (name, s) in report.datasets {
                rows.push(EntropyRow {
                    seed,
                    teacher: t,
                    dataset: name.clone(),
                    samples: s.histogram.entropies.len(),
                    mean_entropy: s.mean_entropy,
                    kurtosis: s.kurtosis,
                });
                for (bin, &count) in s.histogram.counts.iter().enumerate() {
                    hist.push(HistogramRow {
                        seed,
                        teacher: t,
                        dataset: name.clone(),
                        bin,
                        lower: s.histogram.edges[bin],
                        upper: s.histogram.edges[bin + 1],
                        count,
                    });
                }
            }
        }
    }
    Ok((rows, hist))
}

/// Seed-averaged curve per method, from the run's per-student curve files
/// or, when those are missing, from the per-task results.
fn curve_tables(dir: &Path, rows: &[ResultRow]) -> CliResult<BTreeMap<String, Vec<CurvePoint>>> {
    let mut per_method: BTreeMap<String, BTreeMap<u64, CurvePoints>> = BTreeMap::new();
    for r in rows {
        per_method
            .entry(r.method.name().to_string())
            .or_default()
            .entry(r.seed)
            .or_default();
    }
    for (method, seeds) in per_method.iter_mut() {
        for (seed, points) in seeds.iter_mut() {
            let file = dir
                .join(run_files::CURVES)
                .join(format!("{method}_seed_{seed}.csv"));
            if file.exists() {
                let curve: Vec<CurveRow> = read_csv(&file)?;
                points.extend(curve.iter().map(|c| (c.task, Some(c.epoch), c.domain, c.accuracy)));
            } else {
                points.extend(
                    rows.iter()
                        .filter(|r| r.method.name() == method && r.seed == *seed)
                        .map(|r| (r.task, None, r.domain, r.accuracy)),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    for (method, seeds) in per_method {
        let mut grouped: BTreeMap<(usize, Option<usize>), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
        for points in seeds.values() {
            for &(task, epoch, domain, acc) in points {
                grouped.entry((task, epoch)).or_default().entry(domain).or_default().push(acc);
            }
        }
        let mut curve = Vec::new();
        for (step, ((task, epoch), by_domain)) in grouped.into_iter().enumerate() {
            for (domain, values) in by_domain {
                let s = Stat::of(&values).expect("non-empty group");
                curve.push(CurvePoint {
                    step,
                    task,
                    epoch,
                    domain,
                    mean_accuracy: s.mean,
                    std_accuracy: s.std,
                    seeds: s.n,
                });
            }
        }
        out.insert(method, curve);
    }
    Ok(out)
}

fn analyze_run(dir: &Path) -> CliResult<RunAnalysis> {
    let rows = read_results(dir)?;
    if rows.is_empty() {
        return Err(CliError::Data(format!("{} has no rows", dir.join(run_files::RESULTS).display())));
    }
    let info_path = dir.join(run_files::RUN_INFO);
    let info: Option<RunInfo> = if info_path.exists() { Some(read_json(&info_path)?) } else { None };
    let (unseen, known) = domain_sets(info.as_ref(), &rows);
    let ed_ratio = info.as_ref().map_or(f64::NAN, |i| i.ed_ratio);
    let summary = summarize(&rows, if ed_ratio.is_nan() { 0.0 } else { ed_ratio }, &unseen, &known)?;
    let cells = matrices(&rows)?;
    let (forgetting, average_forgetting) = forgetting_tables(&cells, &known)?;
    let (entropy, histograms) = match &info {
        Some(info) => entropy_tables(dir, info)?,
        None => (Vec::new(), Vec::new()),
    };

    let out = dir.join(run_files::ANALYSIS);
    write_csv(&out.join("forgetting.csv"), &forgetting)?;
    write_csv(&out.join("entropy.csv"), &entropy)?;
    write_csv(&out.join("histograms.csv"), &histograms)?;
    let mut curve_files = Vec::new();
    for (method, curve) in curve_tables(dir, &rows)? {
        let name = format!("{}/{method}.csv", run_files::CURVES);
        write_csv(&out.join(&name), &curve)?;
        curve_files.push(name);
    }
    let analysis = RunAnalysis {
        schema_version: SCHEMA_VERSION,
        summary,
        average_forgetting,
        forgetting,
        entropy,
        curve_files,
    };
    write_json(&out.join("metrics.json"), &analysis)?;
    Ok(analysis)
}

fn analyze_sweep(dir: &Path) -> CliResult<SweepAnalysis> {
    let info: SweepInfo = read_json(&dir.join(run_files::SWEEP_INFO))?;
    let mut blocks = Vec::new();
    for (&ratio, block) in info.ed_ratios.iter().zip(&info.blocks) {
        let run = analyze_run(&dir.join(block))?;
        let cells = matrices(&read_results(&dir.join(block))?)?;
        blocks.push((ratio, run, cells));
    }

    let mut ukt_rows = Vec::new();
    if let Some((_, base_run, base)) = blocks.iter().find(|(r, _, _)| *r == 0.0) {
        let unseen = &base_run.summary.unseen_domains;
        for (ratio, _, cells) in &blocks {
            for ((method, seed), a) in cells {
                let Some(b) = base.get(&(method.clone(), *seed)) else { continue };
                let m: Method = method.parse().map_err(|e: cdbench_core::Error| CliError::Data(e.to_string()))?;
                let gains = ukt_gain(a, b, unseen).map_err(|e| CliError::Data(e.to_string()))?;
                ukt_rows.extend(gains.into_iter().map(|(domain, gain)| UktRow {
                    ed_ratio: *ratio,
                    method: m,
                    seed: *seed,
                    domain,
                    gain,
                }));
            }
        }
    }
    let mut grouped: BTreeMap<(usize, String, usize), (f64, Vec<f64>)> = BTreeMap::new();
    for (i, (ratio, _, _)) in blocks.iter().enumerate() {
        for r in ukt_rows.iter().filter(|r| r.ed_ratio == *ratio) {
            grouped
                .entry((i, r.method.name().to_string(), r.domain))
                .or_insert((*ratio, Vec::new()))
                .1
                .push(r.gain);
        }
    }
    let ukt_gain = grouped
        .into_iter()
        .map(|((_, method, domain), (ed_ratio, gains))| UktStat {
            ed_ratio,
            method,
            domain,
            gain: Stat::of(&gains).expect("non-empty group"),
        })
        .collect();

    let methods: Vec<String> = blocks
        .first()
        .map(|(_, run, _)| run.summary.methods.keys().cloned().collect())
        .unwrap_or_default();
    let mut trend = Vec::new();
    for method in methods {
        let mut ed_ratios = Vec::new();
        let mut unseen_accuracy = Vec::new();
        for (ratio, run, _) in &blocks {
            if let Some(s) = run.summary.methods.get(&method).and_then(|m| m.unseen_accuracy) {
                ed_ratios.push(*ratio);
                unseen_accuracy.push(s.mean);
            }
        }
        let rho = if ed_ratios.len() >= 2 {
            spearman(&ed_ratios, &unseen_accuracy).map_err(|e| CliError::Data(e.to_string()))?
        } else {
            None
        };
        trend.push(RatioTrend {
            method,
            ed_ratios,
            unseen_accuracy,
            spearman: rho,
        });
    }

    let out = dir.join(run_files::ANALYSIS);
    write_csv(&out.join("ukt_gain.csv"), &ukt_rows)?;
    let analysis = SweepAnalysis {
        schema_version: SCHEMA_VERSION,
        ukt_gain,
        trend,
    };
    write_json(&out.join("metrics.json"), &analysis)?;
    Ok(analysis)
}
