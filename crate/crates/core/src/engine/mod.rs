//! Teacher pretraining, the continual distillation loop and evaluation.

mod checkpoint;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointRecord,
    MAGIC as CHECKPOINT_MAGIC,
};

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distill::{se2d_loss, self_distill_loss, LossResult, Method, MethodConfig};
use crate::domains::{balance_pair_stream, features_of, CdScenario, DistillSet, DomainDataset};
use crate::error::{invalid, shape, Result};
use crate::matrix::{argmax, Matrix};
use crate::nn::{cross_entropy, init_mlp, optimizer_step, MlpModel, OptimizerConfig, OptimizerState};

/// A trained teacher and the domains it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel {
    pub model: MlpModel,
    pub trained_domain_ids: Vec<usize>,
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

/// Supervised pretraining settings for teachers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TeacherConfig {
    /// 50 epochs of Adam at 1e-4, batch 64.
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            epochs: 50,
            batch_size: 64,
            optimizer: OptimizerConfig::adam(1e-4),
        }
    }
}

impl TeacherConfig {
    /// Small-model setting: same schedule, larger step size.
    pub fn desk_scale() -> Self {
        Self {
            optimizer: OptimizerConfig::adam(3e-3),
            ..Self::default()
        }
    }
}

/// Student distillation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub method: MethodConfig,
    #[serde(default = "default_hidden")]
    pub student_hidden: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Also evaluate every domain after each epoch.
    #[serde(default)]
    pub eval_per_epoch: bool,
    /// Compute teacher logits for the whole distillation set once per task
    /// instead of per batch. Results are identical.
    #[serde(default)]
    pub cache_teacher_logits: bool,
}

impl Default for RunConfig {
    /// Adam at 1e-4 for 3 epochs, batch 64, temperature 10, three seeds.
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 64,
            optimizer: OptimizerConfig::adam(1e-4),
            method: MethodConfig::new(Method::Kl),
            student_hidden: default_hidden(),
            seeds: vec![0, 1, 2],
            eval_per_epoch: false,
            cache_teacher_logits: false,
        }
    }
}

impl RunConfig {
    /// Small-model setting: more epochs and a larger step size.
    pub fn desk_scale(method: Method) -> Self {
        Self {
            epochs: 20,
            optimizer: OptimizerConfig::adam(3e-3),
            method: MethodConfig::new(method),
            ..Self::default()
        }
    }

    pub fn with_method(&self, method: Method) -> Self {
        let mut out = self.clone();
        out.method.method = method;
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds must not be empty"));
        }
        self.optimizer.validate()?;
        self.method.validate()
    }

    /// Short stable digest of the configuration.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Outcome of one distillation task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLog {
    pub task: usize,
    pub teacher_id: usize,
    /// Test accuracy per domain id after the task.
    pub accuracies: BTreeMap<usize, f64>,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss of the very first batch, before any update.
    pub first_batch_loss: f64,
    /// Per-epoch accuracies, filled when `eval_per_epoch` is set.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epoch_accuracies: Vec<BTreeMap<usize, f64>>,
}

/// Fraction of test samples whose argmax prediction (lowest index on ties)
/// equals the label.
pub fn evaluate(model: &MlpModel, test_set: &DomainDataset) -> Result<f64> {
    if test_set.test.is_empty() {
        return Err(invalid(format!("domain {} has an empty test set", test_set.domain)));
    }
    let features = features_of(test_set.test.iter());
    if features.cols() != model.input_dim() {
        return Err(shape(format!(
            "test features have {} columns, model expects {}",
            features.cols(),
            model.input_dim()
        )));
    }
    let logits = model.logits(&features)?;
    let correct = logits
        .iter_rows()
        .zip(&test_set.test)
        .filter(|(row, s)| argmax(row) == s.label)
        .count();
    Ok(correct as f64 / test_set.test.len() as f64)
}

pub fn evaluate_all(model: &MlpModel, domains: &[DomainDataset]) -> Result<BTreeMap<usize, f64>> {
    domains
        .iter()
        .map(|d| Ok((d.domain, evaluate(model, d)?)))
        .collect()
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Supervised cross-entropy training on the union of the domains' train
/// splits. Zero epochs returns the initialisation.
pub fn train_teacher(
    domains: &[&DomainDataset],
    config: &TeacherConfig,
    seed: u64,
) -> Result<TeacherModel> {
    let samples: Vec<_> = domains.iter().flat_map(|d| d.train.iter()).collect();
    if samples.is_empty() {
        return Err(invalid("teacher training data is empty"));
    }
    if config.batch_size == 0 {
        return Err(invalid("batch_size must be at least 1"));
    }
    let features = features_of(samples.iter().copied());
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let num_classes = domains
        .iter()
        .flat_map(|d| d.test.iter())
        .map(|s| s.label + 1)
        .fold(num_classes, usize::max);

    let mut dims = vec![features.cols()];
    dims.extend(&config.hidden);
    dims.push(num_classes);
    let mut model = init_mlp(seed, &dims)?;
    let mut opt = OptimizerState::new(config.optimizer, &model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ea_c4e5);
    for _ in 0..config.epochs {
        let order = shuffled(features.rows(), &mut rng);
        for chunk in order.chunks(config.batch_size) {
            let x = features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (logits, cache) = model.forward(&x)?;
            let (_, dlogits) = cross_entropy(&logits, &y)?;
            let grads = model.backward(&cache, &dlogits)?;
            optimizer_step(&mut model, &grads, &mut opt)?;
        }
    }
    Ok(TeacherModel {
        model,
        trained_domain_ids: domains.iter().map(|d| d.domain).collect(),
    })
}

/// Trains one teacher per entry of the scenario's teacher list. Teacher `t`
/// uses seed `seed * 1000 + t`.
pub fn train_teachers(
    scenario: &CdScenario,
    config: &TeacherConfig,
    seed: u64,
) -> Result<Vec<TeacherModel>> {
    (0..scenario.spec.num_teachers())
        .map(|t| {
            train_teacher(
                &scenario.teacher_domain_data(t),
                config,
                seed.wrapping_mul(1000).wrapping_add(t as u64),
            )
        })
        .collect()
}

/// Loss trace of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTrace {
    pub epoch_losses: Vec<f64>,
    pub first_batch_loss: f64,
    pub epoch_accuracies: Vec<BTreeMap<usize, f64>>,
}

struct TeacherLogits<'a> {
    teacher: &'a MlpModel,
    cached: Option<Matrix>,
}

impl TeacherLogits<'_> {
    fn rows(&self, features: &Matrix, idx: &[usize]) -> Result<Matrix> {
        match &self.cached {
            Some(all) => Ok(all.select_rows(idx)),
            None => self.teacher.logits(&features.select_rows(idx)),
        }
    }
}

/// One distillation task: trains `student` to imitate `teacher` on the
/// distillation set. Methods that use a checkpoint read `previous` (the
/// student frozen at the end of the last task); without one they reduce to
/// their teacher term.
///
/// SE2D with both internal and external rows steps over paired batches, one
/// internal and one external; the teacher term sees both halves and the
/// checkpoint term only the external half. Every other case walks shuffled
/// batches of the whole set.
pub fn distill_task(
    student: &mut MlpModel,
    teacher: &TeacherModel,
    distill: &DistillSet,
    previous: Option<&CheckpointRecord>,
    config: &RunConfig,
    seed: u64,
    eval_sets: Option<&[DomainDataset]>,
) -> Result<TaskTrace> {
    config.validate()?;
    if student.num_classes() != teacher.model.num_classes() {
        return Err(invalid(format!(
            "student predicts {} classes, teacher {}",
            student.num_classes(),
            teacher.model.num_classes()
        )));
    }
    if student.input_dim() != teacher.model.input_dim() || distill.features().cols() != student.input_dim() {
        return Err(shape("student, teacher and distillation set disagree on the feature width"));
    }
    if distill.is_empty() {
        return Err(invalid("distillation set is empty"));
    }
    let method = &config.method;
    let t = method.temperature;
    let checkpoint = previous.filter(|_| method.method.uses_checkpoint()).map(|c| &c.model);
    let features = distill.features();
    let teacher_logits = TeacherLogits {
        teacher: &teacher.model,
        cached: if config.cache_teacher_logits {
            Some(teacher.model.logits(features)?)
        } else {
            None
        },
    };
    let mut opt = OptimizerState::new(config.optimizer, student)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let internal = distill.internal_indices();
    let external = distill.external_indices();
    let paired = method.method == Method::Se2d
        && checkpoint.is_some()
        && !internal.is_empty()
        && !external.is_empty();
    let mut pair_stream = if paired {
        Some(balance_pair_stream(
            internal.len(),
            external.len(),
            config.batch_size,
            rng.random(),
        )?)
    } else {
        None
    };

    let mut trace = TaskTrace {
        epoch_losses: Vec::with_capacity(config.epochs),
        first_batch_loss: f64::NAN,
        epoch_accuracies: Vec::new(),
    };
    for _ in 0..config.epochs {
        // (rows of the batch, how many leading rows are internal-only)
        let batches: Vec<Vec<usize>> = match pair_stream.as_mut() {
            Some(stream) => stream
                .next_epoch()
                .into_iter()
                .map(|b| {
                    b.internal
                        .iter()
                        .map(|&i| internal[i])
                        .chain(b.external.iter().map(|&e| external[e]))
                        .collect()
                })
                .collect(),
            None => shuffled(distill.len(), &mut rng)
                .chunks(config.batch_size)
                .map(<[usize]>::to_vec)
                .collect(),
        };
        let mut epoch_loss = 0.0;
        for rows in &batches {
            let x = features.select_rows(rows);
            let (logits, cache) = student.forward(&x)?;
            let teacher_z = teacher_logits.rows(features, rows)?;
            let LossResult { loss, dlogits } = match (method.method, checkpoint) {
                (Method::SelfDistill, Some(prev)) => {
                    self_distill_loss(&logits, &teacher_z, &prev.logits(&x)?, t)?
                }
                (Method::Se2d, Some(prev)) => {
                    let ext_pos: Vec<usize> = (0..rows.len())
                        .filter(|&k| distill.is_external()[rows[k]])
                        .collect();
                    let s_ext = logits.select_rows(&ext_pos);
                    let prev_ext = prev.logits(&x.select_rows(&ext_pos))?;
                    let r = se2d_loss(&logits, &teacher_z, &s_ext, &prev_ext, t)?;
                    let mut d = r.d_all;
                    for (k, &pos) in ext_pos.iter().enumerate() {
                        for (a, b) in d.row_mut(pos).iter_mut().zip(r.d_ext.row(k)) {
                            *a += b;
                        }
                    }
                    LossResult {
                        loss: r.loss,
                        dlogits: d,
                    }
                }
                _ => method.teacher_loss(&logits, &teacher_z)?,
            };
            if trace.first_batch_loss.is_nan() {
                trace.first_batch_loss = loss;
            }
            epoch_loss += loss;
            let grads = student.backward(&cache, &dlogits)?;
            optimizer_step(student, &grads, &mut opt)?;
        }
        trace.epoch_losses.push(epoch_loss / batches.len() as f64);
        if let Some(sets) = eval_sets {
            trace.epoch_accuracies.push(evaluate_all(student, sets)?);
        }
    }
    Ok(trace)
}

/// Result of distilling a whole teacher sequence.
#[derive(Debug, Clone)]
pub struct SequenceOutcome {
    pub student: MlpModel,
    pub logs: Vec<TaskLog>,
    /// Student snapshot at the end of every task.
    pub checkpoints: Vec<CheckpointRecord>,
    /// Wall-clock seconds spent on each task, training and evaluation.
    pub task_seconds: Vec<f64>,
}

/// Fresh student for `scenario` under `config` and `seed`.
pub fn init_student(scenario: &CdScenario, config: &RunConfig, seed: u64) -> Result<MlpModel> {
    let mut dims = vec![scenario.spec.feature_dim];
    dims.extend(&config.student_hidden);
    dims.push(scenario.spec.num_classes);
    init_mlp(seed.wrapping_add(0x5eed_0000), &dims)
}

/// Distills the teachers into `student` one after another, evaluating on
/// every domain's test set after each task. Teachers are consumed in order
/// from the iterator, so a task can only reach its own teacher.
pub fn run_sequence<I, T>(
    mut student: MlpModel,
    teachers: I,
    scenario: &CdScenario,
    config: &RunConfig,
    seed: u64,
) -> Result<SequenceOutcome>
where
    I: IntoIterator<Item = T>,
    T: Borrow<TeacherModel>,
{
    config.validate()?;
    let hash = config.config_hash();
    let mut logs = Vec::new();
    let mut checkpoints: Vec<CheckpointRecord> = Vec::new();
    let mut task_seconds = Vec::new();
    for (task, teacher) in teachers.into_iter().enumerate() {
        let started = Instant::now();
        let trace = distill_task(
            &mut student,
            teacher.borrow(),
            &scenario.distill,
            checkpoints.last(),
            config,
            task_seed(seed, task),
            config.eval_per_epoch.then_some(scenario.domains.as_slice()),
        )?;
        logs.push(TaskLog {
            task,
            teacher_id: task,
            accuracies: evaluate_all(&student, &scenario.domains)?,
            epoch_losses: trace.epoch_losses,
            first_batch_loss: trace.first_batch_loss,
            epoch_accuracies: trace.epoch_accuracies,
        });
        checkpoints.push(CheckpointRecord {
            model: student.clone(),
            task,
            config_hash: hash.clone(),
        });
        task_seconds.push(started.elapsed().as_secs_f64());
    }
    if logs.is_empty() {
        return Err(invalid("teacher sequence is empty"));
    }
    Ok(SequenceOutcome {
        student,
        logs,
        checkpoints,
        task_seconds,
    })
}

fn task_seed(seed: u64, task: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(task as u64 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{build_scenario, generate_domain, ExternalKind, ScenarioSpec};
    use crate::nn::Layer;

    #[test]
    fn evaluate_perfect_and_constant_models() {
        let ds = generate_domain(1, 0, 3, 3, 10).unwrap();
        // constant logits: argmax tie picks class 0, a third of a balanced set
        let constant = MlpModel::from_layers(vec![Layer::new(Matrix::zeros(3, 3), vec![0.0; 3]).unwrap()])
            .unwrap();
        let acc = evaluate(&constant, &ds).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-12);
        let empty = DomainDataset {
            domain: 0,
            train: vec![],
            test: vec![],
        };
        assert!(evaluate(&constant, &empty).is_err());
        let wrong = init_mlp(0, &[4, 3]).unwrap();
        assert!(evaluate(&wrong, &ds).is_err());
    }

    #[test]
    fn zero_epoch_teacher_is_its_init() {
        let ds = generate_domain(1, 0, 4, 8, 10).unwrap();
        let cfg = TeacherConfig {
            epochs: 0,
            ..TeacherConfig::desk_scale()
        };
        let t = train_teacher(&[&ds], &cfg, 9).unwrap();
        assert_eq!(t.model, init_mlp(9, &[8, 32, 32, 4]).unwrap());
        assert_eq!(t.trained_domain_ids, vec![0]);
        assert!(train_teacher(&[], &cfg, 9).is_err());
    }

    #[test]
    fn teacher_as_student_starts_at_zero_loss() {
        let spec = ScenarioSpec::three_teacher(4, 8, 10, 0.5, ExternalKind::Related, 3);
        let sc = build_scenario(&spec).unwrap();
        let cfg = RunConfig {
            epochs: 1,
            ..RunConfig::desk_scale(Method::Kl)
        };
        let teacher = TeacherModel {
            model: init_student(&sc, &cfg, 1).unwrap(),
            trained_domain_ids: vec![0],
        };
        let mut student = teacher.model.clone();
        let trace = distill_task(&mut student, &teacher, &sc.distill, None, &cfg, 5, None).unwrap();
        assert_eq!(trace.first_batch_loss, 0.0);
    }

    #[test]
    fn class_count_mismatch_is_rejected() {
        let spec = ScenarioSpec::three_teacher(4, 8, 10, 0.5, ExternalKind::Related, 3);
        let sc = build_scenario(&spec).unwrap();
        let cfg = RunConfig::desk_scale(Method::Kl);
        let teacher = TeacherModel {
            model: init_mlp(0, &[8, 5]).unwrap(),
            trained_domain_ids: vec![0],
        };
        let mut student = init_student(&sc, &cfg, 0).unwrap();
        assert!(distill_task(&mut student, &teacher, &sc.distill, None, &cfg, 0, None).is_err());
        let none: Vec<TeacherModel> = vec![];
        assert!(run_sequence(student, none, &sc, &cfg, 0).is_err());
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = RunConfig::desk_scale(Method::Kl);
        assert_eq!(a.config_hash(), a.clone().config_hash());
        assert_ne!(a.config_hash(), a.with_method(Method::Se2d).config_hash());
        assert_eq!(a.config_hash().len(), 16);
    }
}
