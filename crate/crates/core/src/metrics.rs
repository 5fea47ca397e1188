//! Accuracy matrices and the statistics derived from them, plus teacher
//! entropy summaries used to judge how related an external dataset is.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::distill::tempered_entropies;
use crate::engine::TaskLog;
use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::nn::MlpModel;

/// `values[d][t]` is the accuracy on `domains[d]` after task `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    domains: Vec<usize>,
    values: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(domains: Vec<usize>, values: Vec<Vec<f64>>) -> Result<Self> {
        if domains.len() != values.len() {
            return Err(invalid("one accuracy row per domain is required"));
        }
        let tasks = values.first().map_or(0, Vec::len);
        if tasks == 0 {
            return Err(invalid("accuracy matrix needs at least one task"));
        }
        for row in &values {
            if row.len() != tasks {
                return Err(invalid("accuracy rows have different task counts"));
            }
            if row.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(invalid("accuracies must lie in [0, 1]"));
            }
        }
        Ok(Self { domains, values })
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn num_tasks(&self) -> usize {
        self.values[0].len()
    }

    fn row_of(&self, domain: usize) -> Result<&[f64]> {
        self.domains
            .iter()
            .position(|&d| d == domain)
            .map(|i| self.values[i].as_slice())
            .ok_or_else(|| invalid(format!("domain {domain} is not in the accuracy matrix")))
    }

    /// Accuracy trajectory of one domain across tasks.
    pub fn trajectory(&self, domain: usize) -> Result<&[f64]> {
        self.row_of(domain)
    }

    pub fn get(&self, domain: usize, task: usize) -> Result<f64> {
        self.row_of(domain)?
            .get(task)
            .copied()
            .ok_or_else(|| invalid(format!("task {task} out of range")))
    }

    pub fn final_accuracy(&self, domain: usize) -> Result<f64> {
        self.get(domain, self.num_tasks() - 1)
    }

    /// Mean final accuracy over `domains`.
    pub fn mean_final(&self, domains: &[usize]) -> Result<f64> {
        if domains.is_empty() {
            return Err(invalid("no domains to average"));
        }
        let total: f64 = domains
            .iter()
            .map(|&d| self.final_accuracy(d))
            .sum::<Result<f64>>()?;
        Ok(total / domains.len() as f64)
    }
}

/// Collects per-task evaluations into an [`AccuracyMatrix`]. Logs may come
/// in any order; they are sorted by task index.
pub fn accuracy_matrix(logs: &[TaskLog]) -> Result<AccuracyMatrix> {
    let mut sorted: Vec<&TaskLog> = logs.iter().collect();
    sorted.sort_by_key(|l| l.task);
    let first = sorted.first().ok_or_else(|| invalid("no task logs"))?;
    for (expected, log) in sorted.iter().enumerate() {
        if log.task != expected {
            return Err(invalid(format!("task logs skip or repeat task {expected}")));
        }
    }
    let domains: Vec<usize> = first.accuracies.keys().copied().collect();
    let values = domains
        .iter()
        .map(|d| {
            sorted
                .iter()
                .map(|log| {
                    log.accuracies.get(d).copied().ok_or_else(|| {
                        invalid(format!("task {} has no accuracy for domain {d}", log.task))
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    for log in &sorted {
        if log.accuracies.len() != domains.len() {
            return Err(invalid(format!("task {} logs a different domain set", log.task)));
        }
    }
    AccuracyMatrix::new(domains, values)
}

/// `max_{i<t} A[d][i] - A[d][t]`, unclamped.
pub fn forgetting(a: &AccuracyMatrix, domain: usize, task: usize) -> Result<f64> {
    if task == 0 {
        return Err(invalid("forgetting needs at least one earlier task"));
    }
    let row = a.row_of(domain)?;
    if task >= row.len() {
        return Err(invalid(format!("task {task} out of range")));
    }
    let best = row[..task].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(best - row[task])
}

/// Mean of [`forgetting`] over `domains` at `task`.
pub fn average_forgetting(a: &AccuracyMatrix, domains: &[usize], task: usize) -> Result<f64> {
    if domains.is_empty() {
        return Err(invalid("no domains to average"));
    }
    let total: f64 = domains
        .iter()
        .map(|&d| forgetting(a, d, task))
        .sum::<Result<f64>>()?;
    Ok(total / domains.len() as f64)
}

/// Final-accuracy gain on each unseen domain of a run that distilled with
/// external data over one that used internal data only.
pub fn ukt_gain(
    run_with_ed: &AccuracyMatrix,
    run_id_only: &AccuracyMatrix,
    unseen_domains: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    if run_with_ed.domains != run_id_only.domains || run_with_ed.num_tasks() != run_id_only.num_tasks()
    {
        return Err(invalid("accuracy matrices cover different domains or task counts"));
    }
    unseen_domains
        .iter()
        .map(|&d| Ok((d, run_with_ed.final_accuracy(d)? - run_id_only.final_accuracy(d)?)))
        .collect()
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("spearman needs two equally long series of length >= 2"));
    }
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                out[k] = avg;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Ok(None);
    }
    Ok(Some(cov / (vx * vy).sqrt()))
}

/// Equal-width histogram over `[0, ln C]` of per-sample entropies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyHistogram {
    pub entropies: Vec<f64>,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl EntropyHistogram {
    pub fn mean(&self) -> f64 {
        self.entropies.iter().sum::<f64>() / self.entropies.len() as f64
    }
}

pub fn entropy_histogram(
    model: &MlpModel,
    features: &Matrix,
    t: f64,
    bins: usize,
) -> Result<EntropyHistogram> {
    if bins < 2 {
        return Err(invalid("histogram needs at least two bins"));
    }
    if features.rows() == 0 {
        return Err(invalid("no samples to histogram"));
    }
    let entropies = tempered_entropies(&model.logits(features)?, t)?;
    let top = (model.num_classes() as f64).ln();
    let width = top / bins as f64;
    let edges = (0..=bins).map(|k| k as f64 * width).collect();
    let mut counts = vec![0; bins];
    for &h in &entropies {
        // values within rounding of ln C belong to the top bin
        let k = ((h / width).floor().max(0.0) as usize).min(bins - 1);
        let k = if top - h < 1e-9 { bins - 1 } else { k };
        counts[k] += 1;
    }
    Ok(EntropyHistogram {
        entropies,
        edges,
        counts,
    })
}

/// Pearson kurtosis `m4 / m2^2` with population moments (3 for a normal).
pub fn kurtosis(values: &[f64]) -> Result<f64> {
    if values.len() < 4 {
        return Err(invalid(format!("kurtosis needs at least 4 values, got {}", values.len())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(m2, m4), &v| {
        let d2 = (v - mean) * (v - mean);
        (m2 + d2, m4 + d2 * d2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 <= 1e-24 * mean.abs().max(1.0).powi(2) {
        return Err(Error::DegenerateVariance(
            "kurtosis is undefined for constant input".into(),
        ));
    }
    Ok(m4 / (m2 * m2))
}

/// Entropy statistics of one model over several named datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub datasets: BTreeMap<String, EntropySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySummary {
    pub mean_entropy: f64,
    /// `None` when the entropies have zero variance.
    pub kurtosis: Option<f64>,
    pub histogram: EntropyHistogram,
}

pub fn entropy_report<'a>(
    model: &MlpModel,
    datasets: impl IntoIterator<Item = (String, &'a Matrix)>,
    t: f64,
    bins: usize,
) -> Result<EntropyReport> {
    let mut out = BTreeMap::new();
    for (name, features) in datasets {
        let histogram = entropy_histogram(model, features, t, bins)?;
        let kurtosis = match kurtosis(&histogram.entropies) {
            Ok(k) => Some(k),
            Err(Error::DegenerateVariance(_)) => None,
            Err(e) => return Err(e),
        };
        out.insert(
            name,
            EntropySummary {
                mean_entropy: histogram.mean(),
                kurtosis,
                histogram,
            },
        );
    }
    Ok(EntropyReport { datasets: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_mlp, Layer};

    fn single_domain(traj: &[f64]) -> AccuracyMatrix {
        AccuracyMatrix::new(vec![1], vec![traj.to_vec()]).unwrap()
    }

    #[test]
    fn forgetting_examples() {
        let a = single_domain(&[0.6, 0.7, 0.5]);
        assert!((forgetting(&a, 1, 2).unwrap() - 0.2).abs() < 1e-12);
        let b = single_domain(&[0.5, 0.6]);
        assert!((forgetting(&b, 1, 1).unwrap() + 0.1).abs() < 1e-12);
        let c = single_domain(&[0.4, 0.4, 0.4]);
        assert_eq!(forgetting(&c, 1, 2).unwrap(), 0.0);
        assert!(forgetting(&c, 1, 0).is_err());
        assert!(forgetting(&c, 7, 1).is_err());
    }

    #[test]
    fn ukt_gain_is_final_difference() {
        let ed = AccuracyMatrix::new(vec![0, 1], vec![vec![0.9, 0.9], vec![0.5, 0.8]]).unwrap();
        let id = AccuracyMatrix::new(vec![0, 1], vec![vec![0.9, 0.9], vec![0.2, 0.3]]).unwrap();
        let g = ukt_gain(&ed, &id, &[1]).unwrap();
        assert!((g[&1] - 0.5).abs() < 1e-12);
        let same = ukt_gain(&ed, &ed, &[0, 1]).unwrap();
        assert!(same.values().all(|&v| v == 0.0));
        let short = AccuracyMatrix::new(vec![0, 1], vec![vec![0.9], vec![0.5]]).unwrap();
        assert!(ukt_gain(&ed, &short, &[1]).is_err());
    }

    #[test]
    fn accuracy_matrix_sorts_and_validates() {
        let log = |task: usize, a0: f64, a1: f64| TaskLog {
            task,
            teacher_id: task,
            accuracies: BTreeMap::from([(0, a0), (1, a1)]),
            epoch_losses: vec![],
            first_batch_loss: 0.0,
            epoch_accuracies: vec![],
        };
        let m = accuracy_matrix(&[log(1, 0.3, 0.4), log(0, 0.1, 0.2)]).unwrap();
        assert_eq!(m.trajectory(0).unwrap(), &[0.1, 0.3]);
        assert_eq!(m.trajectory(1).unwrap(), &[0.2, 0.4]);
        let one = accuracy_matrix(&[log(0, 0.5, 0.6)]).unwrap();
        assert_eq!((one.domains().len(), one.num_tasks()), (2, 1));
        let mut broken = log(1, 0.3, 0.4);
        broken.accuracies.remove(&1);
        assert!(accuracy_matrix(&[log(0, 0.1, 0.2), broken]).is_err());
    }

    #[test]
    fn spearman_with_one_inversion() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let r = spearman(&x, &[0.1, 0.5, 0.52, 0.51]).unwrap().unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert_eq!(spearman(&x, &[1.0; 4]).unwrap(), None);
        let tied = spearman(&x, &[0.0, 1.0, 1.0, 2.0]).unwrap().unwrap();
        assert!(tied > 0.9);
    }

    #[test]
    fn kurtosis_closed_forms() {
        let two_point: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        assert!((kurtosis(&two_point).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(kurtosis(&[2.0; 10]), Err(Error::DegenerateVariance(_))));
        assert!(kurtosis(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn entropy_histogram_extremes() {
        let x = Matrix::new(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, 3.0]).unwrap();
        let flat = MlpModel::from_layers(vec![Layer::new(Matrix::zeros(4, 2), vec![0.0; 4]).unwrap()])
            .unwrap();
        let h = entropy_histogram(&flat, &x, 1.0, 5).unwrap();
        assert_eq!(h.counts, vec![0, 0, 0, 0, 3]);
        let confident = MlpModel::from_layers(vec![Layer::new(
            Matrix::zeros(4, 2),
            vec![1e3, 0.0, 0.0, 0.0],
        )
        .unwrap()])
        .unwrap();
        let h = entropy_histogram(&confident, &x, 1.0, 5).unwrap();
        assert_eq!(h.counts, vec![3, 0, 0, 0, 0]);
        let random = init_mlp(2, &[2, 6, 4]).unwrap();
        let h = entropy_histogram(&random, &x, 2.0, 7).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 3);
        assert!(entropy_histogram(&random, &Matrix::zeros(0, 2), 1.0, 4).is_err());
        assert!(entropy_histogram(&random, &x, 1.0, 1).is_err());
    }
}
