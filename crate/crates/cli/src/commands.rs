//! `gen`, `teachers`, `run` and `sweep`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cdbench_core::distill::tempered_entropies;
use cdbench_core::domains::{assemble_scenario, write_csv_domains};
use cdbench_core::engine::{evaluate_all, init_student, run_sequence, train_teachers};
use cdbench_core::{build_scenario, CdScenario, DomainDataset, Matrix, Method, TeacherModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{check_ratios, check_seeds, ratio_label, ExperimentConfig, SCHEMA_VERSION};
use crate::error::{io_err, CliError, CliResult};
use crate::io::{
    csv_bytes, load_domains, load_teachers, read_csv, run_files, save_model, write_atomic,
    write_csv, write_json, CurveRow, DomainEntry, Layout, ResultRow, ScenarioManifest, SweepRow,
    TimingRow,
};
use crate::summary::{sort_rows, summarize};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub jobs: Option<usize>,
    pub ratios: Option<Vec<f64>>,
}

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "CD_BENCH_THREADS";

struct Context {
    config: ExperimentConfig,
    layout: Layout,
    seeds: Vec<u64>,
    pool: rayon::ThreadPool,
}

fn context(config_path: &Path, overrides: &Overrides) -> CliResult<Context> {
    let config = ExperimentConfig::load(config_path)?;
    let seeds = overrides.seeds.clone().unwrap_or_else(|| config.run.seeds.clone());
    if seeds.is_empty() {
        return Err(CliError::Usage("--seeds needs at least one seed".into()));
    }
    check_seeds("--seeds", &seeds)?;
    let layout = Layout::new(overrides.out.clone().unwrap_or_else(|| config.output_dir.clone()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(overrides.jobs)?)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(Context {
        config,
        layout,
        seeds,
        pool,
    })
}

/// Worker count: `--jobs` (default: available cores), capped by the
/// environment variable.
pub fn thread_count(jobs: Option<usize>) -> CliResult<usize> {
    let wanted = match jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(cap) if cap > 0 => Ok(wanted.min(cap)),
            _ => Err(CliError::Config(format!(
                "{THREADS_ENV}: expected a positive integer, got '{v}'"
            ))),
        },
        Err(_) => Ok(wanted),
    }
}

fn role(spec: &cdbench_core::ScenarioSpec, domain: usize) -> &'static str {
    if spec.shared_domains.contains(&domain) {
        "shared"
    } else if spec.external_domains.contains(&domain) {
        "external"
    } else if spec.teacher_domains.iter().flatten().any(|&d| d == domain) {
        "teacher"
    } else {
        "unused"
    }
}

/// Generates the scenario and writes one CSV per domain plus a manifest.
/// Returns the scenario directory.
pub fn cmd_gen(config_path: &Path, overrides: &Overrides) -> CliResult<PathBuf> {
    let config = ExperimentConfig::load(config_path)?;
    let layout = Layout::new(overrides.out.clone().unwrap_or_else(|| config.output_dir.clone()));
    let scenario = build_scenario(&config.scenario)?;
    let dir = layout.scenario_dir();
    let mut entries = Vec::new();
    for ds in &scenario.domains {
        let file = format!("domain_{}.csv", ds.domain);
        let mut bytes = Vec::new();
        write_csv_domains(&mut bytes, &[ds])?;
        write_atomic(&dir.join(&file), &bytes)?;
        entries.push(DomainEntry {
            domain: ds.domain,
            file,
            role: role(&config.scenario, ds.domain).into(),
            train: ds.train.len(),
            test: ds.test.len(),
        });
    }
    write_json(
        &layout.manifest(),
        &ScenarioManifest {
            schema_version: SCHEMA_VERSION,
            spec: config.scenario.clone(),
            domains: entries,
        },
    )?;
    Ok(dir)
}

/// Test accuracies of one teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherQuality {
    pub seed: u64,
    pub teacher: usize,
    pub trained_domains: Vec<usize>,
    pub accuracies: BTreeMap<usize, f64>,
    /// Lowest accuracy over the teacher's training domains.
    pub min_in_domain: f64,
    pub meets_floor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherReport {
    pub schema_version: u32,
    pub accuracy_floor: f64,
    pub all_meet_floor: bool,
    pub teachers: Vec<TeacherQuality>,
}

/// Trains every teacher for every seed and writes checkpoints and a
/// quality report. Returns the report.
pub fn cmd_teachers(config_path: &Path, overrides: &Overrides) -> CliResult<TeacherReport> {
    let ctx = context(config_path, overrides)?;
    let spec = &ctx.config.scenario;
    let domains = load_domains(&ctx.layout, spec)?;
    let scenario = assemble_scenario(spec, domains)?;
    let teacher_cfg = ctx.config.teacher.to_config();
    let floor = ctx.config.teacher.accuracy_floor;

    let per_seed: Vec<Vec<TeacherQuality>> = ctx.pool.install(|| {
        ctx.seeds
            .par_iter()
            .map(|&seed| -> CliResult<Vec<TeacherQuality>> {
                let teachers = train_teachers(&scenario, &teacher_cfg, seed)?;
                let dir = ctx.layout.teacher_seed_dir(seed);
                if dir.exists() {
                    std::fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
                }
                teachers
                    .iter()
                    .enumerate()
                    .map(|(t, teacher)| {
                        save_model(&teacher.model, &ctx.layout.teacher_checkpoint(seed, t))?;
                        let accuracies = evaluate_all(&teacher.model, &scenario.domains)?;
                        let min_in_domain = teacher
                            .trained_domain_ids
                            .iter()
                            .map(|d| accuracies[d])
                            .fold(f64::INFINITY, f64::min);
                        Ok(TeacherQuality {
                            seed,
                            teacher: t,
                            trained_domains: teacher.trained_domain_ids.clone(),
                            accuracies,
                            min_in_domain,
                            meets_floor: min_in_domain >= floor,
                        })
                    })
                    .collect()
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let teachers: Vec<TeacherQuality> = per_seed.into_iter().flatten().collect();
    for q in teachers.iter().filter(|q| !q.meets_floor) {
        eprintln!(
            "warning: teacher {} (seed {}) reaches {:.3} on its own domains, below the floor {floor}",
            q.teacher, q.seed, q.min_in_domain
        );
    }
    let report = TeacherReport {
        schema_version: SCHEMA_VERSION,
        accuracy_floor: floor,
        all_meet_floor: teachers.iter().all(|q| q.meets_floor),
        teachers,
    };
    write_json(&ctx.layout.teacher_report(), &report)?;
    Ok(report)
}

/// Provenance of a run directory, read back by `analyze`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub ed_ratio: f64,
    pub seeds: Vec<u64>,
    /// Experiment root, relative to the run directory.
    pub root: String,
}

struct CellOutput {
    rows: Vec<ResultRow>,
    timing: Vec<TimingRow>,
}

/// External samples accepted by the entropy filter for one seed.
fn filter_external(
    scenario: &mut CdScenario,
    teacher: &TeacherModel,
    threshold: f64,
) -> CliResult<()> {
    let keep = |s: &cdbench_core::LabeledSample| -> bool {
        let x = Matrix::new(1, s.features.len(), s.features.clone()).expect("finite features");
        let logits = teacher.model.logits(&x).expect("dimensions checked at load");
        let h = tempered_entropies(&logits, 1.0).expect("positive temperature")[0];
        h <= threshold
    };
    scenario.select_distill(keep)?;
    Ok(())
}

/// Runs the method x seed grid for one ratio into `dir`.
/// Outputs of a previous run that would be inconsistent with a new one.
const RUN_OUTPUTS: [&str; 4] =
    [run_files::SUMMARY, run_files::CHECKPOINTS, run_files::CURVES, run_files::ANALYSIS];

fn remove_stale(dir: &Path, names: &[&str]) -> CliResult<()> {
    for name in names {
        let p = dir.join(name);
        if p.is_dir() {
            std::fs::remove_dir_all(&p).map_err(io_err(&p))?;
        } else if p.exists() {
            std::fs::remove_file(&p).map_err(io_err(&p))?;
        }
    }
    Ok(())
}

fn run_block(
    ctx: &Context,
    domains: &[DomainDataset],
    teachers: &BTreeMap<u64, Vec<TeacherModel>>,
    ed_ratio: f64,
    entropy_threshold: Option<f64>,
    dir: &Path,
    root_from_dir: &str,
) -> CliResult<Vec<ResultRow>> {
    let mut spec = ctx.config.scenario.clone();
    spec.ed_ratio = ed_ratio;
    let base = assemble_scenario(&spec, domains.to_vec())?;
    let scenarios: BTreeMap<u64, CdScenario> = ctx
        .seeds
        .iter()
        .map(|&seed| {
            let mut s = base.clone();
            if let (Some(h), true) = (entropy_threshold, ed_ratio > 0.0) {
                filter_external(&mut s, &teachers[&seed][0], h)?;
            }
            Ok((seed, s))
        })
        .collect::<CliResult<_>>()?;

    remove_stale(dir, &RUN_OUTPUTS)?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let cells: Vec<(Method, u64)> = ctx
        .config
        .methods
        .iter()
        .flat_map(|&m| ctx.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let outputs: Vec<CellOutput> = ctx.pool.install(|| {
        cells
            .par_iter()
            .map(|&(method, seed)| run_cell(ctx, &scenarios[&seed], &teachers[&seed], method, seed, dir))
            .collect::<CliResult<Vec<_>>>()
    })?;

    let mut rows: Vec<ResultRow> = outputs.iter().flat_map(|o| o.rows.clone()).collect();
    sort_rows(&mut rows);
    let mut timing: Vec<TimingRow> = outputs.into_iter().flat_map(|o| o.timing).collect();
    timing.sort_by(|a, b| (a.method.name(), a.seed, a.task).cmp(&(b.method.name(), b.seed, b.task)));

    write_csv(&dir.join(run_files::RESULTS), &rows)?;
    write_csv(&dir.join(run_files::TIMING), &timing)?;
    let mut config = ctx.config.clone();
    config.scenario.ed_ratio = ed_ratio;
    write_json(
        &dir.join(run_files::RUN_INFO),
        &RunInfo {
            schema_version: SCHEMA_VERSION,
            config,
            ed_ratio,
            seeds: ctx.seeds.clone(),
            root: root_from_dir.into(),
        },
    )?;
    let summary = summarize(
        &rows,
        ed_ratio,
        &spec.unseen_domains(),
        &spec.teacher_known_domains(),
    )?;
    write_json(&dir.join(run_files::SUMMARY), &summary)?;
    Ok(rows)
}

fn run_cell(
    ctx: &Context,
    scenario: &CdScenario,
    teachers: &[TeacherModel],
    method: Method,
    seed: u64,
    dir: &Path,
) -> CliResult<CellOutput> {
    let mut cfg = ctx.config.run_config(method);
    cfg.seeds = vec![seed];
    let student = init_student(scenario, &cfg, seed)?;
    let outcome = run_sequence(student, teachers, scenario, &cfg, seed)?;
    let name = method.name();

    let mut rows = Vec::new();
    let mut curve = Vec::new();
    for log in &outcome.logs {
        for (&domain, &accuracy) in &log.accuracies {
            rows.push(ResultRow {
                seed,
                method,
                task: log.task,
                teacher: log.teacher_id,
                domain,
                accuracy,
            });
        }
        if log.epoch_accuracies.is_empty() {
            curve.extend(log.accuracies.iter().map(|(&domain, &accuracy)| CurveRow {
                task: log.task,
                epoch: cfg.epochs - 1,
                domain,
                accuracy,
            }));
        } else {
            for (epoch, accs) in log.epoch_accuracies.iter().enumerate() {
                curve.extend(accs.iter().map(|(&domain, &accuracy)| CurveRow {
                    task: log.task,
                    epoch,
                    domain,
                    accuracy,
                }));
            }
        }
    }
    for ckpt in &outcome.checkpoints {
        let path = dir
            .join(run_files::CHECKPOINTS)
            .join(format!("{name}_seed_{seed}_task_{}.ckpt", ckpt.task));
        save_model(&ckpt.model, &path)?;
    }
    write_csv(
        &dir.join(run_files::CURVES).join(format!("{name}_seed_{seed}.csv")),
        &curve,
    )?;
    let timing = outcome
        .task_seconds
        .iter()
        .enumerate()
        .map(|(task, &elapsed_seconds)| TimingRow {
            seed,
            method,
            task,
            elapsed_seconds,
        })
        .collect();
    Ok(CellOutput { rows, timing })
}

type TeachersBySeed = BTreeMap<u64, Vec<TeacherModel>>;

fn load_inputs(ctx: &Context) -> CliResult<(Vec<DomainDataset>, TeachersBySeed)> {
    let domains = load_domains(&ctx.layout, &ctx.config.scenario)?;
    let dim = ctx.config.scenario.feature_dim;
    let classes = ctx.config.scenario.num_classes;
    let mut teachers = BTreeMap::new();
    for &seed in &ctx.seeds {
        let set = load_teachers(&ctx.layout, &ctx.config.scenario, seed)?;
        for (t, teacher) in set.iter().enumerate() {
            if teacher.model.input_dim() != dim || teacher.model.num_classes() != classes {
                return Err(CliError::Config(format!(
                    "teacher {t} for seed {seed} has shape {}x{}, config expects {dim}x{classes}",
                    teacher.model.input_dim(),
                    teacher.model.num_classes()
                )));
            }
        }
        teachers.insert(seed, set);
    }
    Ok((domains, teachers))
}

/// Runs every method over every seed at the config's ratio. Returns the run
/// directory.
pub fn cmd_run(config_path: &Path, overrides: &Overrides) -> CliResult<PathBuf> {
    let ctx = context(config_path, overrides)?;
    let dir = ctx.layout.run_dir();
    remove_stale(&dir, &RUN_OUTPUTS)?;
    let (domains, teachers) = load_inputs(&ctx)?;
    run_block(&ctx, &domains, &teachers, ctx.config.scenario.ed_ratio, None, &dir, "..")?;
    Ok(dir)
}

/// Index of a sweep directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepInfo {
    pub schema_version: u32,
    pub ed_ratios: Vec<f64>,
    /// Block directory per ratio, relative to the sweep directory.
    pub blocks: Vec<String>,
    pub external_entropy_threshold: Option<f64>,
}

/// One full run per ratio, all sharing the same teachers. Returns the sweep
/// directory.
pub fn cmd_sweep(config_path: &Path, overrides: &Overrides) -> CliResult<PathBuf> {
    let ctx = context(config_path, overrides)?;
    let sweep = ctx.config.sweep.clone();
    let ratios = match (&overrides.ratios, &sweep) {
        (Some(r), _) => {
            check_ratios("--ratio", r)?;
            r.clone()
        }
        (None, Some(s)) => s.ed_ratios.clone(),
        (None, None) => {
            return Err(CliError::Config(
                "sweep: no ratios given; set sweep.ed_ratios or pass --ratio".into(),
            ))
        }
    };
    let threshold = sweep.and_then(|s| s.external_entropy_threshold);
    let dir = ctx.layout.sweep_dir();
    remove_stale(&dir, &[run_files::SWEEP_INFO, run_files::SWEEP_RESULTS, run_files::ANALYSIS])?;
    let (domains, teachers) = load_inputs(&ctx)?;
    let mut all = Vec::new();
    let mut blocks = Vec::new();
    for &r in &ratios {
        let block = format!("ratio_{}", ratio_label(r));
        let rows = run_block(&ctx, &domains, &teachers, r, threshold, &dir.join(&block), "../..")?;
        all.extend(rows.into_iter().map(|row| SweepRow {
            ed_ratio: r,
            seed: row.seed,
            method: row.method,
            task: row.task,
            teacher: row.teacher,
            domain: row.domain,
            accuracy: row.accuracy,
        }));
        blocks.push(block);
    }
    write_atomic(&dir.join(run_files::SWEEP_RESULTS), &csv_bytes(&all)?)?;
    write_json(
        &dir.join(run_files::SWEEP_INFO),
        &SweepInfo {
            schema_version: SCHEMA_VERSION,
            ed_ratios: ratios,
            blocks,
            external_entropy_threshold: threshold,
        },
    )?;
    Ok(dir)
}

/// Reads a run directory's result rows.
pub fn read_results(dir: &Path) -> CliResult<Vec<ResultRow>> {
    read_csv(&dir.join(run_files::RESULTS))
}
