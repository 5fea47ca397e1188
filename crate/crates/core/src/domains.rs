//! Synthetic domain-incremental data and the internal/external partition of
//! the distillation set.
//!
//! Every domain shares one class layout: `C` class means on a regular
//! simplex of radius 3. A domain rotates that layout and shifts it, then
//! draws unit-variance isotropic Gaussian samples around each mean, so label
//! semantics are shared while input distributions differ.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;

pub const LAYOUT_RADIUS: f64 = 3.0;
const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
    pub domain: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDataset {
    pub domain: usize,
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

impl DomainDataset {
    pub fn test_features(&self) -> Matrix {
        features_of(self.test.iter())
    }

    pub fn train_features(&self) -> Matrix {
        features_of(self.train.iter())
    }

    pub fn feature_dim(&self) -> usize {
        self.train
            .first()
            .or(self.test.first())
            .map_or(0, |s| s.features.len())
    }
}

pub(crate) fn features_of<'a>(samples: impl Iterator<Item = &'a LabeledSample>) -> Matrix {
    let rows: Vec<&[f64]> = samples.map(|s| s.features.as_slice()).collect();
    let cols = rows.first().map_or(0, |r| r.len());
    Matrix::from_rows(&rows, cols).expect("samples of one dataset share a width")
}

/// How one domain transforms the shared class layout: a rotation by `angle`
/// (radians) applied in every coordinate plane `(0,1), (2,3), ...`, then a
/// translation by `shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainGeometry {
    pub angle: f64,
    pub shift: Vec<f64>,
}

impl DomainGeometry {
    pub fn identity(d: usize) -> Self {
        Self {
            angle: 0.0,
            shift: vec![0.0; d],
        }
    }

    /// Rotation given in degrees, shift of `magnitude` along feature axis `axis`.
    pub fn axis_shift(d: usize, angle_deg: f64, axis: usize, magnitude: f64) -> Self {
        let mut shift = vec![0.0; d];
        shift[axis % d] = magnitude;
        Self {
            angle: angle_deg.to_radians(),
            shift,
        }
    }

    /// Geometry drawn from `(seed, domain_id)`: a uniform angle and a shift of
    /// norm in `[2, 5)` pointing away from the class-layout coordinates.
    pub fn drawn(seed: u64, domain_id: usize, num_classes: usize, d: usize) -> Self {
        let mut rng = stream_rng(seed, domain_id, 0);
        let angle = rng.random_range(0.0..2.0 * PI);
        let free: Vec<usize> = if num_classes < d {
            (num_classes..d).collect()
        } else {
            (0..d).collect()
        };
        let mut dir = vec![0.0; d];
        for &k in &free {
            dir[k] = rng.sample::<f64, _>(StandardNormal);
        }
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let magnitude = rng.random_range(2.0..5.0);
        Self {
            angle,
            shift: dir.iter().map(|v| v / norm * magnitude).collect(),
        }
    }

    fn apply(&self, point: &mut [f64]) {
        let (s, c) = self.angle.sin_cos();
        for pair in point.chunks_exact_mut(2) {
            let (x, y) = (pair[0], pair[1]);
            pair[0] = c * x - s * y;
            pair[1] = s * x + c * y;
        }
        for (p, t) in point.iter_mut().zip(&self.shift) {
            *p += t;
        }
    }
}

fn stream_rng(seed: u64, domain_id: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain_id as u64) << 8) | purpose);
    rng
}

/// Class means shared by all domains, at distance [`LAYOUT_RADIUS`] from the
/// origin. With `C <= d` they form a regular simplex in the first `C`
/// coordinates; otherwise a regular polygon in the first plane.
pub fn class_layout(num_classes: usize, d: usize) -> Vec<Vec<f64>> {
    if num_classes <= d {
        let centroid = 1.0 / num_classes as f64;
        let norm = ((1.0 - centroid).powi(2) + (num_classes - 1) as f64 * centroid * centroid).sqrt();
        (0..num_classes)
            .map(|c| {
                let mut v = vec![0.0; d];
                for (k, slot) in v.iter_mut().take(num_classes).enumerate() {
                    let e = if k == c { 1.0 } else { 0.0 };
                    *slot = (e - centroid) / norm * LAYOUT_RADIUS;
                }
                v
            })
            .collect()
    } else {
        (0..num_classes)
            .map(|c| {
                let a = 2.0 * PI * c as f64 / num_classes as f64;
                let mut v = vec![0.0; d];
                v[0] = LAYOUT_RADIUS * a.cos();
                v[1] = LAYOUT_RADIUS * a.sin();
                v
            })
            .collect()
    }
}

fn check_counts(num_classes: usize, d: usize, n_per_class: usize) -> Result<()> {
    if num_classes < 2 || d < 2 || n_per_class < 4 {
        return Err(invalid(format!(
            "need C >= 2, d >= 2, n_per_class >= 4; got C={num_classes}, d={d}, n={n_per_class}"
        )));
    }
    Ok(())
}

/// One domain with geometry drawn from `(seed, domain_id)`.
pub fn generate_domain(
    seed: u64,
    domain_id: usize,
    num_classes: usize,
    d: usize,
    n_per_class: usize,
) -> Result<DomainDataset> {
    check_counts(num_classes, d, n_per_class)?;
    let geometry = DomainGeometry::drawn(seed, domain_id, num_classes, d);
    generate_domain_with(seed, domain_id, &geometry, num_classes, d, n_per_class)
}

/// One domain with an explicit geometry. The first 80% of each class's
/// samples form the training split, the rest the test split.
pub fn generate_domain_with(
    seed: u64,
    domain_id: usize,
    geometry: &DomainGeometry,
    num_classes: usize,
    d: usize,
    n_per_class: usize,
) -> Result<DomainDataset> {
    check_counts(num_classes, d, n_per_class)?;
    if geometry.shift.len() != d || !geometry.angle.is_finite() {
        return Err(invalid(format!(
            "domain {domain_id}: geometry shift has {} entries for dimension {d}",
            geometry.shift.len()
        )));
    }
    let means: Vec<Vec<f64>> = class_layout(num_classes, d)
        .into_iter()
        .map(|mut m| {
            geometry.apply(&mut m);
            m
        })
        .collect();
    let mut rng = stream_rng(seed, domain_id, 1);
    let n_train = ((n_per_class as f64 * TRAIN_FRACTION).round() as usize).clamp(1, n_per_class - 1);
    let mut train = Vec::with_capacity(n_train * num_classes);
    let mut test = Vec::with_capacity((n_per_class - n_train) * num_classes);
    for (label, mean) in means.iter().enumerate() {
        for i in 0..n_per_class {
            let features = mean
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let sample = LabeledSample {
                features,
                label,
                domain: domain_id,
            };
            if i < n_train {
                train.push(sample);
            } else {
                test.push(sample);
            }
        }
    }
    Ok(DomainDataset {
        domain: domain_id,
        train,
        test,
    })
}

/// Declarative description of a continual-distillation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub num_domains: usize,
    /// Domains every teacher trains on; their training samples form the
    /// internal data.
    pub shared_domains: Vec<usize>,
    /// Full training domain list of each teacher, in teacher order.
    pub teacher_domains: Vec<Vec<usize>>,
    /// Domains no teacher sees; their training samples form the external data.
    pub external_domains: Vec<usize>,
    /// Target `|external| / |distillation set|`, in `[0, 1)`.
    pub ed_ratio: f64,
    pub samples_per_class: usize,
    pub seed: u64,
    /// Per-domain transforms, indexed by domain id. Drawn from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Vec<DomainGeometry>>,
}

/// Which flavour of external domain a preset scenario uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalKind {
    Related,
    Unrelated,
}

impl ScenarioSpec {
    /// Three teachers on domains `{0,1}, {0,2}, {0,3}` sharing domain 0, with
    /// external domain 4.
    ///
    /// Domain 0 is the plain layout at the origin. Domains 1-3 are displaced
    /// by 6 along the first axis orthogonal to the layout and rotated by 120,
    /// 180 and 240 degrees, so their label geometry conflicts with domain 0
    /// and with each other. A related external domain lies in the same region
    /// at 170 degrees, within 30 degrees of the exclusive domains' central
    /// orientation. An unrelated one is rotated 120 degrees away from that
    /// orientation (300 degrees) and moved to a region no teacher covers.
    pub fn three_teacher(
        num_classes: usize,
        feature_dim: usize,
        samples_per_class: usize,
        ed_ratio: f64,
        external: ExternalKind,
        seed: u64,
    ) -> Self {
        let d = feature_dim;
        let axis = num_classes.min(d - 1);
        let far = 6.0;
        let ext = match external {
            ExternalKind::Related => DomainGeometry::axis_shift(d, 170.0, axis, far),
            ExternalKind::Unrelated => {
                let mut g = DomainGeometry::axis_shift(d, 300.0, axis, 3.0);
                g.shift[(axis + 2) % d] += 4.0;
                g
            }
        };
        let geometry = vec![
            DomainGeometry::identity(d),
            DomainGeometry::axis_shift(d, 120.0, axis, far),
            DomainGeometry::axis_shift(d, 180.0, axis, far),
            DomainGeometry::axis_shift(d, 240.0, axis, far),
            ext,
        ];
        Self {
            num_classes,
            feature_dim,
            num_domains: 5,
            shared_domains: vec![0],
            teacher_domains: vec![vec![0, 1], vec![0, 2], vec![0, 3]],
            external_domains: vec![4],
            ed_ratio,
            samples_per_class,
            seed,
            geometry: Some(geometry),
        }
    }

    pub fn num_teachers(&self) -> usize {
        self.teacher_domains.len()
    }

    /// Domains some teacher knows but the distillation set does not contain.
    pub fn unseen_domains(&self) -> Vec<usize> {
        let shared: BTreeSet<_> = self.shared_domains.iter().copied().collect();
        let ext: BTreeSet<_> = self.external_domains.iter().copied().collect();
        let known: BTreeSet<usize> = self.teacher_domains.iter().flatten().copied().collect();
        known
            .into_iter()
            .filter(|d| !shared.contains(d) && !ext.contains(d))
            .collect()
    }

    /// Domains at least one teacher was trained on.
    pub fn teacher_known_domains(&self) -> Vec<usize> {
        let known: BTreeSet<usize> = self.teacher_domains.iter().flatten().copied().collect();
        known.into_iter().collect()
    }

    pub fn validate(&self) -> Result<()> {
        check_counts(self.num_classes, self.feature_dim, self.samples_per_class)?;
        if !(0.0..1.0).contains(&self.ed_ratio) {
            return Err(invalid(format!("ed_ratio must lie in [0, 1), got {}", self.ed_ratio)));
        }
        if self.teacher_domains.is_empty() {
            return Err(invalid("scenario needs at least one teacher"));
        }
        let in_range = |ids: &[usize], what: &str| -> Result<()> {
            match ids.iter().find(|&&d| d >= self.num_domains) {
                Some(d) => Err(invalid(format!(
                    "{what} references domain {d} but only {} domains exist",
                    self.num_domains
                ))),
                None => Ok(()),
            }
        };
        in_range(&self.shared_domains, "shared_domains")?;
        in_range(&self.external_domains, "external_domains")?;
        let shared: BTreeSet<_> = self.shared_domains.iter().copied().collect();
        let external: BTreeSet<_> = self.external_domains.iter().copied().collect();
        let mut exclusive_seen = BTreeSet::new();
        for (t, ids) in self.teacher_domains.iter().enumerate() {
            in_range(ids, &format!("teacher {t}"))?;
            let ids: BTreeSet<_> = ids.iter().copied().collect();
            if ids.is_empty() {
                return Err(invalid(format!("teacher {t} has no training domains")));
            }
            if let Some(d) = ids.intersection(&external).next() {
                return Err(invalid(format!(
                    "external domain {d} is in the training domains of teacher {t}"
                )));
            }
            if !shared.is_subset(&ids) {
                return Err(invalid(format!("teacher {t} does not train on every shared domain")));
            }
            for d in ids.difference(&shared) {
                if !exclusive_seen.insert(*d) {
                    return Err(invalid(format!(
                        "domain {d} is exclusive to more than one teacher"
                    )));
                }
            }
        }
        if let Some(g) = &self.geometry {
            if g.len() != self.num_domains {
                return Err(invalid(format!(
                    "geometry lists {} domains, expected {}",
                    g.len(),
                    self.num_domains
                )));
            }
        }
        Ok(())
    }
}

/// Reference to one training sample: `(domain, index into its train split)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRef {
    pub domain: usize,
    pub index: usize,
}

/// The unlabeled distillation set. Rows carry their domain id and whether
/// they are external, never a label.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillSet {
    features: Matrix,
    domains: Vec<usize>,
    external: Vec<bool>,
}

impl DistillSet {
    pub fn new(features: Matrix, domains: Vec<usize>, external: Vec<bool>) -> Result<Self> {
        if domains.len() != features.rows() || external.len() != features.rows() {
            return Err(invalid("distillation set tags do not match its rows"));
        }
        Ok(Self {
            features,
            domains,
            external,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn is_external(&self) -> &[bool] {
        &self.external
    }

    pub fn internal_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.external[i]).collect()
    }

    pub fn external_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.external[i]).collect()
    }

    pub fn external_count(&self) -> usize {
        self.external.iter().filter(|&&e| e).count()
    }

    /// Same set with every internal row removed.
    pub fn external_only(&self) -> DistillSet {
        let keep = self.external_indices();
        DistillSet {
            features: self.features.select_rows(&keep),
            domains: keep.iter().map(|&i| self.domains[i]).collect(),
            external: vec![true; keep.len()],
        }
    }
}

/// A fully materialised scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct CdScenario {
    pub spec: ScenarioSpec,
    /// Every generated domain, indexed by domain id.
    pub domains: Vec<DomainDataset>,
    /// Training samples of each teacher.
    pub teacher_sets: Vec<Vec<SampleRef>>,
    /// Internal data: training samples of the shared domains.
    pub internal: Vec<SampleRef>,
    /// External samples available for distillation.
    pub external: Vec<SampleRef>,
    /// Internal and external samples that actually enter the distillation set.
    pub distill_refs: Vec<SampleRef>,
    pub distill: DistillSet,
}

impl CdScenario {
    pub fn sample(&self, r: SampleRef) -> &LabeledSample {
        &self.domains[r.domain].train[r.index]
    }

    /// Domain datasets a teacher trains on.
    pub fn teacher_domain_data(&self, teacher: usize) -> Vec<&DomainDataset> {
        self.spec.teacher_domains[teacher]
            .iter()
            .map(|&d| &self.domains[d])
            .collect()
    }

    pub fn domain_ids(&self) -> Vec<usize> {
        self.domains.iter().map(|d| d.domain).collect()
    }

    /// The same scenario with no internal rows in the distillation set.
    pub fn without_internal(&self) -> CdScenario {
        let mut out = self.clone();
        out.distill_refs.retain(|r| self.spec.external_domains.contains(&r.domain));
        out.distill = self.distill.external_only();
        out
    }
}

fn domain_refs(ds: &DomainDataset) -> impl Iterator<Item = SampleRef> + '_ {
    (0..ds.train.len()).map(move |index| SampleRef {
        domain: ds.domain,
        index,
    })
}

/// Generates every domain and assembles teacher training sets and the
/// distillation set.
pub fn build_scenario(spec: &ScenarioSpec) -> Result<CdScenario> {
    spec.validate()?;
    let (c, d, n) = (spec.num_classes, spec.feature_dim, spec.samples_per_class);
    let domains = (0..spec.num_domains)
        .map(|id| match &spec.geometry {
            Some(g) => generate_domain_with(spec.seed, id, &g[id], c, d, n),
            None => generate_domain(spec.seed, id, c, d, n),
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_scenario(spec, domains)
}

/// Partitions already materialised domains (indexed by id) according to
/// `spec`.
pub fn assemble_scenario(spec: &ScenarioSpec, domains: Vec<DomainDataset>) -> Result<CdScenario> {
    spec.validate()?;
    if domains.len() != spec.num_domains
        || domains.iter().enumerate().any(|(i, ds)| ds.domain != i)
    {
        return Err(invalid(format!(
            "expected datasets for domains 0..{} in order",
            spec.num_domains
        )));
    }
    let d = spec.feature_dim;
    for ds in &domains {
        let bad = ds
            .train
            .iter()
            .chain(&ds.test)
            .find(|s| s.features.len() != d || s.label >= spec.num_classes);
        if let Some(s) = bad {
            return Err(invalid(format!(
                "domain {} has a sample with {} features and label {}",
                ds.domain,
                s.features.len(),
                s.label
            )));
        }
    }
    let teacher_sets = spec
        .teacher_domains
        .iter()
        .map(|ids| ids.iter().flat_map(|&id| domain_refs(&domains[id])).collect())
        .collect();
    let internal: Vec<SampleRef> = spec
        .shared_domains
        .iter()
        .flat_map(|&id| domain_refs(&domains[id]))
        .collect();
    let external: Vec<SampleRef> = spec
        .external_domains
        .iter()
        .flat_map(|&id| domain_refs(&domains[id]))
        .collect();
    let mut scenario = CdScenario {
        spec: spec.clone(),
        domains,
        teacher_sets,
        internal,
        external,
        distill_refs: Vec::new(),
        distill: DistillSet::new(Matrix::zeros(0, d), vec![], vec![])?,
    };
    scenario.select_distill(|_| true)?;
    Ok(scenario)
}

impl CdScenario {
    /// Rebuilds the distillation set from internal data and the external
    /// samples accepted by `keep_external`, mixed at the spec's ratio.
    pub fn select_distill(&mut self, keep_external: impl Fn(&LabeledSample) -> bool) -> Result<()> {
        let pool: Vec<SampleRef> = self
            .external
            .iter()
            .copied()
            .filter(|r| keep_external(self.sample(*r)))
            .collect();
        if self.spec.ed_ratio > 0.0 && pool.is_empty() {
            return Err(invalid("no external samples left to mix into the distillation set"));
        }
        let (int_part, ext_part) = mix_ratio(&self.internal, &pool, self.spec.ed_ratio)?;
        let refs: Vec<SampleRef> = int_part.iter().chain(&ext_part).copied().collect();
        let rows: Vec<&[f64]> = refs.iter().map(|r| self.sample(*r).features.as_slice()).collect();
        let features = Matrix::from_rows(&rows, self.spec.feature_dim)?;
        self.distill = DistillSet::new(
            features,
            refs.iter().map(|r| r.domain).collect(),
            (0..refs.len()).map(|i| i >= int_part.len()).collect(),
        )?;
        self.distill_refs = refs;
        Ok(())
    }
}

/// Evenly strided, order-preserving subsample of `k` out of `n` items.
fn strided(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| i * n / k).collect()
}

/// Combines internal and external pools so that the external share of the
/// result is `ed_ratio` (within one sample). The larger pool relative to the
/// target is subsampled deterministically; the other is used whole.
/// Returns `(internal part, external part)`.
pub fn mix_ratio<T: Clone>(internal: &[T], external: &[T], ed_ratio: f64) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&ed_ratio) {
        return Err(invalid(format!("ed_ratio must lie in [0, 1), got {ed_ratio}")));
    }
    if ed_ratio == 0.0 {
        return Ok((internal.to_vec(), Vec::new()));
    }
    let wanted_ext = (ed_ratio / (1.0 - ed_ratio) * internal.len() as f64).round() as usize;
    if wanted_ext <= external.len() {
        let ext = strided(external.len(), wanted_ext)
            .into_iter()
            .map(|i| external[i].clone())
            .collect();
        return Ok((internal.to_vec(), ext));
    }
    let wanted_int = ((1.0 - ed_ratio) / ed_ratio * external.len() as f64).round() as usize;
    let int = strided(internal.len(), wanted_int.min(internal.len()))
        .into_iter()
        .map(|i| internal[i].clone())
        .collect();
    Ok((int, external.to_vec()))
}

/// One step's worth of row indices from each pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedBatch {
    pub internal: Vec<usize>,
    pub external: Vec<usize>,
}

/// Epoch-wise generator of paired internal/external batches. The larger pool
/// is shuffled and visited once per epoch; the smaller one is resampled with
/// replacement to the same length, so both pools contribute equally many
/// batches.
#[derive(Debug, Clone)]
pub struct PairStream {
    n_internal: usize,
    n_external: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

pub fn balance_pair_stream(
    n_internal: usize,
    n_external: usize,
    batch_size: usize,
    seed: u64,
) -> Result<PairStream> {
    if n_internal == 0 || n_external == 0 {
        return Err(invalid("paired batching needs two non-empty pools"));
    }
    if batch_size == 0 {
        return Err(invalid("batch size must be positive"));
    }
    Ok(PairStream {
        n_internal,
        n_external,
        batch_size,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

impl PairStream {
    pub fn steps_per_epoch(&self) -> usize {
        self.n_internal.max(self.n_external).div_ceil(self.batch_size)
    }

    pub fn next_epoch(&mut self) -> Vec<PairedBatch> {
        let len = self.n_internal.max(self.n_external);
        let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
            if n == len {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(rng);
                idx
            } else {
                (0..len).map(|_| rng.random_range(0..n)).collect()
            }
        };
        let int = draw(self.n_internal, &mut self.rng);
        let ext = draw(self.n_external, &mut self.rng);
        int.chunks(self.batch_size)
            .zip(ext.chunks(self.batch_size))
            .map(|(i, e)| PairedBatch {
                internal: i.to_vec(),
                external: e.to_vec(),
            })
            .collect()
    }
}

/// Column mapping for tabular ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    pub domain_column: String,
    /// Optional column holding `train` or `test`. Without it every fifth row
    /// of a domain (in file order) goes to the test split.
    #[serde(default)]
    pub split_column: Option<String>,
}

impl CsvSchema {
    /// Schema matching [`write_csv_domains`] output for `d` features.
    pub fn standard(d: usize) -> Self {
        Self {
            feature_columns: (0..d).map(|k| format!("x{k}")).collect(),
            label_column: "label".into(),
            domain_column: "domain".into(),
            split_column: Some("split".into()),
        }
    }
}

fn format_err(line: u64, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("line {line}: {msg}"))
}

/// Reads a comma-separated file with a header row into one dataset per
/// distinct domain value, ordered by domain id.
pub fn load_csv_dataset(path: &Path, schema: &CsvSchema) -> Result<Vec<DomainDataset>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| format_err(1, e))?
        .clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| format_err(1, format!("missing column '{name}'")))
    };
    let feature_idx = schema
        .feature_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = column(&schema.label_column)?;
    let domain_idx = column(&schema.domain_column)?;
    let split_idx = schema.split_column.as_deref().map(column).transpose()?;

    let mut per_domain: BTreeMap<usize, DomainDataset> = BTreeMap::new();
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            format_err(line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");
        let features = feature_idx
            .iter()
            .zip(&schema.feature_columns)
            .map(|(&i, name)| {
                field(i)
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format_err(line, format!("column '{name}' is not a number: '{}'", field(i))))
            })
            .collect::<Result<Vec<_>>>()?;
        let int_field = |i: usize, name: &str| -> Result<usize> {
            field(i)
                .parse::<usize>()
                .map_err(|_| format_err(line, format!("column '{name}' is not an integer: '{}'", field(i))))
        };
        let label = int_field(label_idx, &schema.label_column)?;
        let domain = int_field(domain_idx, &schema.domain_column)?;
        let k = seen.entry(domain).or_insert(0);
        let is_test = match split_idx {
            Some(i) => match field(i) {
                "train" => false,
                "test" => true,
                other => return Err(format_err(line, format!("split must be train or test, got '{other}'"))),
            },
            None => *k % 5 == 4,
        };
        *k += 1;
        rows += 1;
        let ds = per_domain.entry(domain).or_insert_with(|| DomainDataset {
            domain,
            train: Vec::new(),
            test: Vec::new(),
        });
        let sample = LabeledSample {
            features,
            label,
            domain,
        };
        if is_test {
            ds.test.push(sample);
        } else {
            ds.train.push(sample);
        }
    }
    if rows == 0 {
        return Err(format_err(1, "file has no data rows"));
    }
    Ok(per_domain.into_values().collect())
}

/// Writes datasets in the [`CsvSchema::standard`] layout. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_csv_domains<W: Write>(out: W, datasets: &[&DomainDataset]) -> Result<()> {
    let d = datasets.iter().map(|ds| ds.feature_dim()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
    header.extend(["label", "domain", "split"].map(String::from));
    w.write_record(&header).map_err(csv_io)?;
    for ds in datasets {
        for (split, samples) in [("train", &ds.train), ("test", &ds.test)] {
            for s in samples.iter() {
                let mut rec: Vec<String> = s.features.iter().map(|v| format!("{v:?}")).collect();
                rec.push(s.label.to_string());
                rec.push(s.domain.to_string());
                rec.push(split.to_string());
                w.write_record(&rec).map_err(csv_io)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
