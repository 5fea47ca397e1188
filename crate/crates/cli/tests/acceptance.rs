//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use cdbench_cli::io::{read_csv, ResultRow};
use cdbench_core::distill::{
    dkd_loss_weighted, kl_kd_loss, ls_loss, mds_loss, se2d_loss, self_distill_loss,
};
use cdbench_core::domains::{load_csv_dataset, write_csv_domains, CsvSchema};
use cdbench_core::engine::{
    decode_checkpoint, encode_checkpoint, init_student, run_sequence, train_teachers,
    SequenceOutcome,
};
use cdbench_core::matrix::argmax;
use cdbench_core::metrics::{accuracy_matrix, average_forgetting, forgetting, kurtosis, spearman};
use cdbench_core::nn::{cross_entropy, init_mlp, softmax_t};
use cdbench_core::{
    build_scenario, AccuracyMatrix, CdScenario, ExternalKind, Matrix, Method, MlpModel, RunConfig,
    ScenarioSpec, TeacherConfig, TeacherModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

type Criterion = (u32, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_secs, || {
        format!("took {:.2}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

// ---------------------------------------------------------------- 1

struct GradInstance {
    model: MlpModel,
    x: Matrix,
    ext: Vec<usize>,
    teacher: Matrix,
    prev: Matrix,
    labels: Vec<usize>,
}

fn grad_instance(seed: u64) -> GradInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let b = rng.random_range(1..=4);
    let c = rng.random_range(2..=5);
    let d = rng.random_range(2..=8);
    let dims = [d, rng.random_range(2..=8), rng.random_range(2..=8), c];
    let mut model = init_mlp(seed, &dims).unwrap();
    let jitter: Vec<f64> = model
        .params()
        .map(|p| p + 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    model.assign_flat(&jitter).unwrap();
    let mut ext: Vec<usize> = (0..b).filter(|_| rng.random_bool(0.5)).collect();
    if ext.is_empty() {
        ext.push(0);
    }
    GradInstance {
        model,
        x: normal_matrix(&mut rng, b, d, 1.0),
        ext,
        teacher: normal_matrix(&mut rng, b, c, 2.0),
        prev: normal_matrix(&mut rng, b, c, 2.0),
        labels: (0..b).map(|_| rng.random_range(0..c)).collect(),
    }
}

type GradFn = fn(&GradInstance, &MlpModel) -> (f64, Vec<f64>);

fn through_net(g: &GradInstance, m: &MlpModel, f: impl Fn(&Matrix) -> (f64, Matrix)) -> (f64, Vec<f64>) {
    let (z, cache) = m.forward(&g.x).unwrap();
    let (loss, dz) = f(&z);
    (loss, m.backward(&cache, &dz).unwrap().flatten())
}

fn objectives() -> Vec<(&'static str, GradFn)> {
    vec![
        ("cross_entropy", |g, m| through_net(g, m, |z| cross_entropy(z, &g.labels).unwrap())),
        ("kl", |g, m| {
            through_net(g, m, |z| {
                let r = kl_kd_loss(z, &g.teacher, 4.0).unwrap();
                (r.loss, r.dlogits)
            })
        }),
        ("ls", |g, m| {
            through_net(g, m, |z| {
                let r = ls_loss(z, &g.teacher, 2.0).unwrap();
                (r.loss, r.dlogits)
            })
        }),
        ("dkd", |g, m| {
            through_net(g, m, |z| {
                let betas = vec![8.0; z.rows()];
                let r = dkd_loss_weighted(z, &g.teacher, 3.0, 1.0, &betas).unwrap();
                (r.loss, r.dlogits)
            })
        }),
        ("mds", |g, m| {
            through_net(g, m, |z| {
                let r = mds_loss(z, &g.teacher, 2.0, 0.25, 0.75).unwrap();
                (r.loss, r.dlogits)
            })
        }),
        ("self_distill", |g, m| {
            through_net(g, m, |z| {
                let r = self_distill_loss(z, &g.teacher, &g.prev, 5.0).unwrap();
                (r.loss, r.dlogits)
            })
        }),
        ("se2d", |g, m| {
            let x_ext = g.x.select_rows(&g.ext);
            let (za, ca) = m.forward(&g.x).unwrap();
            let (ze, ce) = m.forward(&x_ext).unwrap();
            let r = se2d_loss(&za, &g.teacher, &ze, &g.prev.select_rows(&g.ext), 5.0).unwrap();
            let ga = m.backward(&ca, &r.d_all).unwrap().flatten();
            let ge = m.backward(&ce, &r.d_ext).unwrap().flatten();
            (r.loss, ga.iter().zip(&ge).map(|(a, b)| a + b).collect())
        }),
    ]
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (name, f) in objectives() {
        for seed in 0..20 {
            let g = grad_instance(seed);
            let (_, analytic) = f(&g, &g.model);
            let base = g.model.flatten();
            let mut probe = g.model.clone();
            for (k, &a) in analytic.iter().enumerate() {
                let mut p = base.clone();
                p[k] += h;
                probe.assign_flat(&p).unwrap();
                let up = f(&g, &probe).0;
                p[k] = base[k] - h;
                probe.assign_flat(&p).unwrap();
                let down = f(&g, &probe).0;
                let n = (up - down) / (2.0 * h);
                let err = (a - n).abs() / (a.abs() + n.abs()).max(1e-4);
                ensure(err < 1e-4, || format!("{name} instance {seed} parameter {k}: {err:e}"))?;
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!("7 losses, {checked} partials, max relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (b, c) = (rng.random_range(1..=8), rng.random_range(2..=10));
        let z = normal_matrix(&mut rng, b, c, 3.0);
        for t in [1.0, 4.0, 10.0] {
            let l = kl_kd_loss(&z, &z, t).unwrap().loss;
            ensure(l == 0.0, || format!("kl(z, z, {t}) = {l:e}"))?;
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (b, c) = (rng.random_range(1..=8), rng.random_range(2..=10));
        let t = [1.0, 4.0, 10.0][rng.random_range(0..3)];
        let s = normal_matrix(&mut rng, b, c, 3.0);
        let z = normal_matrix(&mut rng, b, c, 3.0);
        let pt = softmax_t(&z, t).unwrap();
        let betas: Vec<f64> = (0..b).map(|r| 1.0 - pt.get(r, argmax(z.row(r)))).collect();
        let dkd = dkd_loss_weighted(&s, &z, t, 1.0, &betas).unwrap().loss;
        let kl = kl_kd_loss(&s, &z, t).unwrap().loss;
        worst = worst.max((dkd - kl).abs());
    }
    ensure(worst < 1e-9, || format!("dkd/kl gap {worst:e}"))?;
    for _ in 0..100 {
        let (b, c) = (rng.random_range(1..=8), rng.random_range(2..=10));
        let s = normal_matrix(&mut rng, b, c, 3.0);
        let z = normal_matrix(&mut rng, b, c, 3.0);
        let empty = Matrix::zeros(0, c);
        let se2d = se2d_loss(&s, &z, &empty, &empty, 4.0).unwrap();
        let kl = kl_kd_loss(&s, &z, 4.0).unwrap();
        ensure(se2d.loss == kl.loss && se2d.d_all == kl.dlogits, || {
            "se2d with no external rows differs from kl".into()
        })?;
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("identities hold; max dkd/kl gap {worst:.1e}"))
}

// ---------------------------------------------------- shared desk fixture

const SEEDS: [u64; 3] = [0, 1, 2];
const RATIOS: [f64; 4] = [0.0, 1.0 / 3.0, 0.5, 2.0 / 3.0];

fn desk_spec(ratio: f64, kind: ExternalKind) -> ScenarioSpec {
    ScenarioSpec::three_teacher(4, 8, 200, ratio, kind, 0)
}

struct Desk {
    teachers: BTreeMap<u64, Vec<TeacherModel>>,
    /// (method, ratio index, seed) -> accuracy matrix
    runs: BTreeMap<(Method, usize, u64), AccuracyMatrix>,
    elapsed: Duration,
}

fn desk() -> &'static Desk {
    static CELL: OnceLock<Desk> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let base = build_scenario(&desk_spec(0.5, ExternalKind::Related)).unwrap();
        let teachers: BTreeMap<u64, Vec<TeacherModel>> = std::thread::scope(|s| {
            let handles: Vec<_> = SEEDS
                .iter()
                .map(|&seed| {
                    let base = &base;
                    s.spawn(move || (seed, train_teachers(base, &TeacherConfig::desk_scale(), seed).unwrap()))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let scenarios: Vec<CdScenario> = RATIOS
            .iter()
            .map(|&r| build_scenario(&desk_spec(r, ExternalKind::Related)).unwrap())
            .collect();
        let mut jobs: Vec<(Method, usize, u64)> = Vec::new();
        for (ri, _) in RATIOS.iter().enumerate() {
            for &seed in &SEEDS {
                jobs.push((Method::Kl, ri, seed));
                if RATIOS[ri] == 0.5 {
                    jobs.push((Method::Se2d, ri, seed));
                }
            }
        }
        let runs = std::thread::scope(|s| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|&(method, ri, seed)| {
                    let (scenarios, teachers) = (&scenarios, &teachers);
                    s.spawn(move || {
                        let cfg = RunConfig::desk_scale(method);
                        let outcome = run(&scenarios[ri], &teachers[&seed], &cfg, seed);
                        ((method, ri, seed), accuracy_matrix(&outcome.logs).unwrap())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        Desk {
            teachers,
            runs,
            elapsed: start.elapsed(),
        }
    })
}

fn run(scenario: &CdScenario, teachers: &[TeacherModel], cfg: &RunConfig, seed: u64) -> SequenceOutcome {
    let student = init_student(scenario, cfg, seed).unwrap();
    run_sequence(student, teachers, scenario, cfg, seed).unwrap()
}

fn seed_mean(f: impl Fn(u64) -> f64) -> f64 {
    SEEDS.iter().map(|&s| f(s)).sum::<f64>() / SEEDS.len() as f64
}

fn unseen_mean(method: Method, ratio_index: usize) -> f64 {
    let d = desk();
    let unseen = desk_spec(0.0, ExternalKind::Related).unseen_domains();
    seed_mean(|s| d.runs[&(method, ratio_index, s)].mean_final(&unseen).unwrap())
}

fn known_domains() -> Vec<usize> {
    desk_spec(0.0, ExternalKind::Related).teacher_known_domains()
}

fn forgetting_mean(method: Method) -> f64 {
    let d = desk();
    seed_mean(|s| {
        let a = &d.runs[&(method, 2, s)];
        average_forgetting(a, &known_domains(), a.num_tasks() - 1).unwrap()
    })
}

// ---------------------------------------------------------------- 3-6

fn criterion_3() -> Outcome {
    let d = desk();
    let (without, with) = (unseen_mean(Method::Kl, 0), unseen_mean(Method::Kl, 2));
    let gain = 100.0 * (with - without);
    ensure(gain >= 10.0, || format!("gain {gain:.1} points"))?;
    within(d.elapsed, 300.0)?;
    Ok(format!(
        "unseen accuracy {:.1}% -> {:.1}% (+{gain:.1} points); desk fixture {:.1}s",
        100.0 * without,
        100.0 * with,
        d.elapsed.as_secs_f64()
    ))
}

fn criterion_4() -> Outcome {
    let acc: Vec<f64> = (0..RATIOS.len()).map(|ri| unseen_mean(Method::Kl, ri)).collect();
    let rho = spearman(&RATIOS, &acc).map_err(|e| e.to_string())?;
    let rho = rho.ok_or("accuracy is constant across ratios")?;
    ensure(rho > 0.0, || format!("spearman {rho}"))?;
    let shown: Vec<String> = acc.iter().map(|a| format!("{:.1}", 100.0 * a)).collect();
    Ok(format!("unseen accuracy [{}]% over ratios 0,1/3,1/2,2/3; spearman {rho:.2}", shown.join(", ")))
}

fn criterion_5() -> Outcome {
    let f = forgetting_mean(Method::Kl);
    ensure(f >= 0.05, || format!("kl forgetting {:.1} points", 100.0 * f))?;
    Ok(format!("kl average forgetting {:.1} points", 100.0 * f))
}

fn criterion_6() -> Outcome {
    let d = desk();
    let (fk, fs) = (forgetting_mean(Method::Kl), forgetting_mean(Method::Se2d));
    let known = known_domains();
    let acc = |m: Method| seed_mean(|s| d.runs[&(m, 2, s)].mean_final(&known).unwrap());
    let (ak, as_) = (acc(Method::Kl), acc(Method::Se2d));
    ensure(fs < fk, || format!("se2d forgetting {fs:.3} >= kl {fk:.3}"))?;
    ensure(as_ >= ak, || format!("se2d known accuracy {as_:.3} < kl {ak:.3}"))?;
    Ok(format!(
        "forgetting se2d {:.1} < kl {:.1} points; known-domain accuracy se2d {:.1}% >= kl {:.1}%",
        100.0 * fs,
        100.0 * fk,
        100.0 * as_,
        100.0 * ak
    ))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let d = desk();
    let scenario = build_scenario(&desk_spec(0.5, ExternalKind::Related))
        .unwrap()
        .without_internal();
    ensure(scenario.distill.internal_indices().is_empty(), || "internal rows remain".into())?;
    let mut compared = 0;
    for &seed in &SEEDS {
        let a = run(&scenario, &d.teachers[&seed], &RunConfig::desk_scale(Method::Se2d), seed);
        let b = run(&scenario, &d.teachers[&seed], &RunConfig::desk_scale(Method::SelfDistill), seed);
        ensure(a.logs == b.logs, || format!("seed {seed}: task logs differ"))?;
        for (x, y) in a.checkpoints.iter().zip(&b.checkpoints) {
            ensure(x.model == y.model, || format!("seed {seed}: task {} weights differ", x.task))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} task snapshots identical across {} seeds", SEEDS.len()))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut checked = 0usize;
    for len in 1..=5u32 {
        for code in 0..11usize.pow(len) {
            let mut c = code;
            let traj: Vec<f64> = (0..len)
                .map(|_| {
                    let v = (c % 11) as f64 / 10.0;
                    c /= 11;
                    v
                })
                .collect();
            let a = AccuracyMatrix::new(vec![7], vec![traj.clone()]).unwrap();
            ensure(forgetting(&a, 7, 0).is_err(), || "task 0 must be rejected".into())?;
            for t in 1..traj.len() {
                let mut best = traj[0];
                for &v in &traj[1..t] {
                    if v > best {
                        best = v;
                    }
                }
                let got = forgetting(&a, 7, t).unwrap();
                ensure(got == best - traj[t], || format!("{traj:?} at {t}: {got}"))?;
                checked += 1;
            }
        }
    }
    within(start.elapsed(), 1.0)?;
    Ok(format!("{checked} (trajectory, task) pairs match the max-scan"))
}

// ---------------------------------------------------------------- 9

fn mean_entropy(model: &MlpModel, x: &Matrix) -> f64 {
    let h = cdbench_core::distill::tempered_entropies(&model.logits(x).unwrap(), 1.0).unwrap();
    h.iter().sum::<f64>() / h.len() as f64
}

fn criterion_9() -> Outcome {
    let d = desk();
    let unrelated = build_scenario(&desk_spec(0.5, ExternalKind::Unrelated)).unwrap();
    let related = build_scenario(&desk_spec(0.5, ExternalKind::Related)).unwrap();
    ensure(unrelated.domains[..4] == related.domains[..4], || {
        "teacher domains differ between scenarios".into()
    })?;
    let ext = unrelated.domains[4].test_features();
    let mut worst_margin = f64::INFINITY;
    for &seed in &SEEDS {
        for (t, teacher) in d.teachers[&seed].iter().enumerate() {
            let own_rows: Vec<&[f64]> = teacher
                .trained_domain_ids
                .iter()
                .flat_map(|&id| unrelated.domains[id].test.iter().map(|s| s.features.as_slice()))
                .collect();
            let own = Matrix::from_rows(&own_rows, 8).unwrap();
            let (h_own, h_ext) = (mean_entropy(&teacher.model, &own), mean_entropy(&teacher.model, &ext));
            ensure(h_ext > h_own, || {
                format!("seed {seed} teacher {t}: unrelated {h_ext:.3} <= own {h_own:.3}")
            })?;
            worst_margin = worst_margin.min(h_ext - h_own);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
    let k = kurtosis(&draws).map_err(|e| e.to_string())?;
    ensure((k - 3.0).abs() <= 0.1, || format!("normal kurtosis {k}"))?;
    Ok(format!(
        "all 9 teachers flatter on unrelated data (min margin {worst_margin:.3} nats); normal kurtosis {k:.3}"
    ))
}

// ---------------------------------------------------------------- 10

fn cdbench(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cdbench"))
        .args(args)
        .env_remove("CD_BENCH_THREADS")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("cdbench {args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn pipeline(config: &Path, out: &Path, jobs: &str) -> Result<(), String> {
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    cdbench(&["gen", "--config", c, "--out", o])?;
    cdbench(&["teachers", "--config", c, "--out", o, "--jobs", jobs])?;
    cdbench(&["run", "--config", c, "--out", o, "--jobs", jobs])?;
    cdbench(&["sweep", "--config", c, "--out", o, "--jobs", jobs])?;
    cdbench(&["analyze", &format!("{o}/run")])?;
    cdbench(&["analyze", &format!("{o}/sweep")])
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&config, &a, "1")?;
    pipeline(&config, &b, "3")?;
    let files = files_under(&a);
    ensure(files == files_under(&b), || "reruns produced different file sets".into())?;
    let mut compared = 0;
    for f in &files {
        // wall-clock timings are the one intentionally non-reproducible output
        if f.file_name().is_some_and(|n| n == "timing.csv") {
            continue;
        }
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        ensure(x == y, || format!("{} differs between reruns", f.display()))?;
        compared += 1;
    }

    // checkpoints: f32 storage is the declared precision
    let ckpt = a.join("run/checkpoints/kl_seed_0_task_2.ckpt");
    let bytes = std::fs::read(&ckpt).unwrap();
    let model = decode_checkpoint(&bytes).map_err(|e| e.to_string())?;
    ensure(encode_checkpoint(&model).unwrap() == bytes, || "checkpoint re-encoding differs".into())?;
    let fresh = init_mlp(3, &[6, 16, 16, 3]).unwrap();
    let restored = decode_checkpoint(&encode_checkpoint(&fresh).unwrap()).unwrap();
    let exact = fresh
        .params()
        .zip(restored.params())
        .all(|(p, q)| (p as f32) as f64 == q);
    ensure(exact, || "checkpoint round-trip is not f32-exact".into())?;

    // CSV: scenario data reloads bit-for-bit, results reload to the summary
    let scenario = build_scenario(&desk_spec(0.5, ExternalKind::Related)).unwrap();
    let mut buf = Vec::new();
    let refs: Vec<_> = scenario.domains.iter().collect();
    write_csv_domains(&mut buf, &refs).unwrap();
    let path = tmp.path().join("domains.csv");
    std::fs::write(&path, &buf).unwrap();
    let back = load_csv_dataset(&path, &CsvSchema::standard(8)).map_err(|e| e.to_string())?;
    ensure(back == scenario.domains, || "scenario CSV round-trip differs".into())?;
    let rows: Vec<ResultRow> = read_csv(&a.join("run/results.csv")).map_err(|e| e.to_string())?;
    ensure(cdbench_cli::io::csv_bytes(&rows).unwrap() == std::fs::read(a.join("run/results.csv")).unwrap(), || {
        "results CSV does not re-serialize identically".into()
    })?;
    Ok(format!("{compared} output files byte-identical across reruns; checkpoint and CSV round-trips exact"))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "gradient suite", criterion_1),
        (2, "loss identities", criterion_2),
        (3, "unseen knowledge transfer", criterion_3),
        (4, "external-data ratio trend", criterion_4),
        (5, "unseen knowledge forgetting", criterion_5),
        (6, "se2d vs kl ordering", criterion_6),
        (7, "se2d equals self-distillation without internal data", criterion_7),
        (8, "forgetting formula oracle", criterion_8),
        (9, "entropy flatness and kurtosis", criterion_9),
        (10, "determinism and round-trips", criterion_10),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.2}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} [{secs:.2}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 10 criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
