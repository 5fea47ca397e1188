//! Experiment configuration file: parsing and validation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use cdbench_core::{Method, MethodConfig, OptimizerConfig, RunConfig, ScenarioSpec, TeacherConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Top-level experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub scenario: ScenarioSpec,
    /// Methods to run, each over every seed.
    pub methods: Vec<Method>,
    #[serde(default)]
    pub distill: DistillParams,
    #[serde(default)]
    pub teacher: TeacherParams,
    pub run: RunParams,
    /// Root directory for every output; relative paths resolve against the
    /// working directory.
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepParams>,
    #[serde(default)]
    pub analysis: AnalysisParams,
}

/// Hyperparameters shared by all distillation methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillParams {
    pub temperature: f64,
    pub dkd_alpha: f64,
    pub dkd_beta: f64,
    pub mds_low_q: f64,
    pub mds_high_q: f64,
}

impl Default for DistillParams {
    fn default() -> Self {
        let m = MethodConfig::new(Method::Kl);
        Self {
            temperature: m.temperature,
            dkd_alpha: m.dkd_alpha,
            dkd_beta: m.dkd_beta,
            mds_low_q: m.mds_low_q,
            mds_high_q: m.mds_high_q,
        }
    }
}

impl DistillParams {
    pub fn for_method(&self, method: Method) -> MethodConfig {
        MethodConfig {
            method,
            temperature: self.temperature,
            dkd_alpha: self.dkd_alpha,
            dkd_beta: self.dkd_beta,
            mds_low_q: self.mds_low_q,
            mds_high_q: self.mds_high_q,
        }
    }
}

/// Teacher pretraining and the quality bar reported for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherParams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Minimum test accuracy expected on each training domain.
    pub accuracy_floor: f64,
}

impl Default for TeacherParams {
    fn default() -> Self {
        let t = TeacherConfig::desk_scale();
        Self {
            hidden: t.hidden,
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: t.optimizer,
            accuracy_floor: 0.9,
        }
    }
}

impl TeacherParams {
    pub fn to_config(&self) -> TeacherConfig {
        TeacherConfig {
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
        }
    }
}

/// Student training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_hidden")]
    pub student_hidden: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Evaluate every domain after each epoch, not only after each task.
    #[serde(default)]
    pub eval_per_epoch: bool,
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

/// Ratio sweep settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParams {
    pub ed_ratios: Vec<f64>,
    /// Drop external samples whose entropy under the first teacher (at
    /// temperature 1) exceeds this value. Off when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_entropy_threshold: Option<f64>,
}

/// Settings of the `analyze` step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisParams {
    pub entropy_temperature: f64,
    pub histogram_bins: usize,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            entropy_temperature: 1.0,
            histogram_bins: 20,
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {msg}"))
}

impl ExperimentConfig {
    /// Reads and validates a configuration file.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(field(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        self.scenario.validate().map_err(|e| field("scenario", e))?;
        if self.methods.is_empty() {
            return Err(field("methods", "at least one method is required"));
        }
        let unique: BTreeSet<&str> = self.methods.iter().map(|m| m.name()).collect();
        if unique.len() != self.methods.len() {
            return Err(field("methods", "methods must not repeat"));
        }
        self.distill
            .for_method(Method::Kl)
            .validate()
            .map_err(|e| field("distill", e))?;

        let t = &self.teacher;
        if t.epochs == 0 {
            return Err(field("teacher.epochs", "must be at least 1"));
        }
        if t.batch_size == 0 {
            return Err(field("teacher.batch_size", "must be at least 1"));
        }
        t.optimizer.validate().map_err(|e| field("teacher.optimizer", e))?;
        if !(0.0..=1.0).contains(&t.accuracy_floor) {
            return Err(field("teacher.accuracy_floor", "must lie in [0, 1]"));
        }

        let r = &self.run;
        if r.epochs == 0 {
            return Err(field("run.epochs", "must be at least 1"));
        }
        if r.batch_size == 0 {
            return Err(field("run.batch_size", "must be at least 1"));
        }
        if r.seeds.is_empty() {
            return Err(field("run.seeds", "at least one seed is required"));
        }
        check_seeds("run.seeds", &r.seeds)?;
        r.optimizer.validate().map_err(|e| field("run.optimizer", e))?;

        if let Some(sweep) = &self.sweep {
            check_ratios("sweep.ed_ratios", &sweep.ed_ratios)?;
            if let Some(h) = sweep.external_entropy_threshold {
                if !(h >= 0.0 && h.is_finite()) {
                    return Err(field("sweep.external_entropy_threshold", "must be nonnegative"));
                }
            }
        }
        let a = &self.analysis;
        if !(a.entropy_temperature > 0.0 && a.entropy_temperature.is_finite()) {
            return Err(field("analysis.entropy_temperature", "must be positive"));
        }
        if a.histogram_bins < 2 {
            return Err(field("analysis.histogram_bins", "must be at least 2"));
        }
        Ok(())
    }

    /// Engine settings for one method.
    pub fn run_config(&self, method: Method) -> RunConfig {
        RunConfig {
            epochs: self.run.epochs,
            batch_size: self.run.batch_size,
            optimizer: self.run.optimizer,
            method: self.distill.for_method(method),
            student_hidden: self.run.student_hidden.clone(),
            seeds: self.run.seeds.clone(),
            eval_per_epoch: self.run.eval_per_epoch,
            cache_teacher_logits: false,
        }
    }
}

pub(crate) fn check_seeds(name: &str, seeds: &[u64]) -> CliResult<()> {
    let unique: BTreeSet<u64> = seeds.iter().copied().collect();
    if unique.len() != seeds.len() {
        return Err(field(name, "seeds must not repeat"));
    }
    Ok(())
}

pub(crate) fn check_ratios(name: &str, ratios: &[f64]) -> CliResult<()> {
    if ratios.is_empty() {
        return Err(field(name, "at least one ratio is required"));
    }
    for (i, r) in ratios.iter().enumerate() {
        if !(0.0..1.0).contains(r) {
            return Err(field(&format!("{name}[{i}]"), format!("ratio {r} is outside [0, 1)")));
        }
    }
    let labels: BTreeSet<String> = ratios.iter().map(|&r| ratio_label(r)).collect();
    if labels.len() != ratios.len() {
        return Err(field(name, "ratios must be distinct at four decimals"));
    }
    Ok(())
}

/// Directory-name form of a ratio.
pub fn ratio_label(r: f64) -> String {
    format!("{r:.4}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use cdbench_core::ExternalKind;

    fn sample() -> ExperimentConfig {
        ExperimentConfig {
            schema_version: 1,
            scenario: ScenarioSpec::three_teacher(3, 6, 20, 0.5, ExternalKind::Related, 0),
            methods: vec![Method::Kl, Method::Se2d],
            distill: DistillParams::default(),
            teacher: TeacherParams::default(),
            run: RunParams {
                epochs: 2,
                batch_size: 32,
                optimizer: OptimizerConfig::adam(3e-3),
                student_hidden: vec![16],
                seeds: vec![0, 1],
                eval_per_epoch: false,
            },
            output_dir: "out".into(),
            sweep: None,
            analysis: AnalysisParams::default(),
        }
    }

    fn json() -> serde_json::Value {
        serde_json::to_value(sample()).unwrap()
    }

    fn message(v: serde_json::Value) -> String {
        match ExperimentConfig::parse(&v.to_string()) {
            Err(CliError::Config(msg)) => msg,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn round_trips_through_json() {
        let text = serde_json::to_string_pretty(&sample()).unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), sample());
    }

    #[test]
    fn missing_field_is_named() {
        let mut v = json();
        v.as_object_mut().unwrap().remove("methods");
        assert!(message(v).contains("methods"));
        let mut v = json();
        v["run"].as_object_mut().unwrap().remove("seeds");
        assert!(message(v).contains("seeds"));
    }

    #[test]
    fn unknown_field_is_rejected() {
        let mut v = json();
        v["run"]["learning_rate"] = 0.1.into();
        assert!(message(v).contains("learning_rate"));
    }

    #[test]
    fn unknown_method_lists_valid_names() {
        let mut v = json();
        v["methods"] = serde_json::json!(["kl", "fitnet"]);
        let msg = message(v);
        assert!(msg.contains("fitnet"));
        for m in Method::ALL {
            assert!(msg.contains(m.name()), "{msg}");
        }
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let mut v = json();
        v["schema_version"] = 2.into();
        assert!(message(v).starts_with("schema_version"));
        let mut v = json();
        v["sweep"] = serde_json::json!({"ed_ratios": [0.0, 1.0]});
        assert!(message(v).starts_with("sweep.ed_ratios[1]"));
        let mut v = json();
        v["sweep"] = serde_json::json!({"ed_ratios": []});
        assert!(message(v).starts_with("sweep.ed_ratios"));
        let mut v = json();
        v["run"]["epochs"] = 0.into();
        assert!(message(v).starts_with("run.epochs"));
        let mut v = json();
        v["scenario"]["ed_ratio"] = 1.5.into();
        assert!(message(v).starts_with("scenario"));
    }
}
