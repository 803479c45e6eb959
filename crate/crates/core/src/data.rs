//! Datasets: union-of-subspaces and covariant-coset generators, CSV
//! ingestion, and stratified splitting.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Label cell marking the optional feature-rank row of a CSV file.
pub const IMPORTANCE_LABEL: &str = "importance";
pub const LABEL_COLUMN: &str = "label";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Features from most to least important; `None` means column order.
    pub importance_order: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let n = features.first().map_or(0, Vec::len);
        let names = (0..n).map(|i| format!("x{i}")).collect();
        Self::with_names(names, features, labels, None)
    }

    pub fn with_names(
        feature_names: Vec<String>,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        importance_order: Option<Vec<usize>>,
    ) -> Result<Self> {
        let d = Self {
            feature_names,
            features,
            labels,
            importance_order,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.feature_names.len();
        if self.features.len() != self.labels.len() {
            return Err(Error::Dataset(format!(
                "{} feature rows but {} labels",
                self.features.len(),
                self.labels.len()
            )));
        }
        if let Some(i) = self.features.iter().position(|r| r.len() != n) {
            return Err(Error::Dataset(format!(
                "row {i} has {} features, expected {n}",
                self.features[i].len()
            )));
        }
        if self.features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("non-finite feature value".into()));
        }
        if let Some(order) = &self.importance_order {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                return Err(Error::Dataset("importance order is not a permutation".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    pub fn importance(&self) -> Vec<usize> {
        self.importance_order
            .clone()
            .unwrap_or_else(|| (0..self.n_features()).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            importance_order: self.importance_order.clone(),
        }
    }
}

/// Per-feature standardization fitted on one dataset and applied to others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Dataset("cannot standardize an empty dataset".into()));
        }
        let m = data.len() as f64;
        let n = data.n_features();
        let mean: Vec<f64> = (0..n)
            .map(|j| data.features.iter().map(|r| r[j]).sum::<f64>() / m)
            .collect();
        let std = (0..n)
            .map(|j| {
                let var = data.features.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / m;
                // constant columns are only shifted
                if var > 0.0 { var.sqrt() } else { 1.0 }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        for row in &mut out.features {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

/// Special-orthogonal matrix drawn from the Haar measure: QR of a Gaussian
/// matrix with the signs of `R`'s diagonal moved into `Q`, then one column
/// flipped if the determinant is negative.
pub fn haar_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if dim > 0 && q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceSpec {
    pub ambient_dim: usize,
    /// Subspace dimension per class.
    pub dims: Vec<usize>,
    pub samples_per_class: usize,
    /// Rotate each class's subspace away from the mutually orthogonal layout,
    /// keeping the subspaces linearly independent.
    pub rotate: bool,
    pub seed: u64,
}

impl SubspaceSpec {
    pub fn validate(&self) -> Result<()> {
        let total: usize = self.dims.iter().sum();
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::InvalidConfig("every class needs a positive subspace dimension".into()));
        }
        if total > self.ambient_dim {
            return Err(Error::InvalidConfig(format!(
                "subspace dimensions sum to {total}, more than the ambient {}",
                self.ambient_dim
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::InvalidConfig("samples per class must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceDataset {
    pub dataset: Dataset,
    /// Orthonormal basis (ambient × d_c) per class.
    pub bases: Vec<DMatrix<f64>>,
}

/// Orthonormal bases of `dims` mutually orthogonal subspaces of `R^ambient`.
pub fn orthogonal_bases<R: Rng + ?Sized>(ambient: usize, dims: &[usize], rng: &mut R) -> Vec<DMatrix<f64>> {
    let total: usize = dims.iter().sum();
    let g = DMatrix::from_fn(ambient, total, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let mut offset = 0;
    dims.iter()
        .map(|&d| {
            let b = q.columns(offset, d).into_owned();
            offset += d;
            b
        })
        .collect()
}

/// Uniform point on the unit sphere of the span of `basis`.
pub fn sphere_point<R: Rng + ?Sized>(basis: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
    loop {
        let c = nalgebra::DVector::from_fn(basis.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = c.norm();
        if norm > 1e-12 {
            return (basis * (c / norm)).iter().copied().collect();
        }
    }
}

pub fn gen_union_subspaces(spec: &SubspaceSpec) -> Result<SubspaceDataset> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed, &[0x5b5b]);
    let mut bases = orthogonal_bases(spec.ambient_dim, &spec.dims, &mut rng);
    if spec.rotate {
        // rotate inside the joint span so the subspaces stay independent
        let span = DMatrix::from_columns(
            &bases.iter().flat_map(|b| b.column_iter().map(|c| c.into_owned())).collect::<Vec<_>>(),
        );
        let total = span.ncols();
        let mut offset = spec.dims[0];
        for (c, &d) in spec.dims.iter().enumerate().skip(1) {
            let r = haar_rotation(total, &mut rng);
            let rotated = &span * r.columns(offset, d);
            bases[c] = rotated.qr().q();
            offset += d;
        }
    }
    let mut features = Vec::with_capacity(spec.samples_per_class * spec.dims.len());
    let mut labels = Vec::with_capacity(features.capacity());
    for (c, basis) in bases.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            features.push(sphere_point(basis, &mut rng));
            labels.push(c);
        }
    }
    Ok(SubspaceDataset {
        dataset: Dataset::new(features, labels)?,
        bases,
    })
}

/// How the integer multipliers of the subgroup step enter each qubit angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepPattern {
    /// An independent integer per qubit.
    Independent,
    /// One integer `s` for the sample, qubit `q` gets `w_q · s`.
    Tied(Vec<i64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariantSpec {
    pub n_qubits: usize,
    /// Subgroup step angle `θ`.
    pub theta: f64,
    /// Coset offset per class and qubit.
    pub offsets: Vec<Vec<f64>>,
    pub pattern: StepPattern,
    /// Inclusive range of the integer multipliers.
    pub s_range: (i64, i64),
    pub samples_per_class: usize,
    pub seed: u64,
}

fn is_multiple(v: f64, step: f64) -> bool {
    let k = (v / step).round();
    (v - k * step).abs() < 1e-9
}

/// `v` modulo `2π` is zero (rotations are periodic up to a global phase).
fn zero_mod_tau(v: f64) -> bool {
    is_multiple(v, TAU)
}

impl CovariantSpec {
    /// Two-qubit construction with classes `(t, −t)` and `(t, π − t)`,
    /// `t = sθ`, `θ = 2π/64`.
    pub fn bell(samples_per_class: usize, seed: u64) -> Self {
        Self {
            n_qubits: 2,
            theta: TAU / 64.0,
            offsets: vec![vec![0.0, 0.0], vec![0.0, PI]],
            pattern: StepPattern::Tied(vec![1, -1]),
            s_range: (0, 63),
            samples_per_class,
            seed,
        }
    }

    /// Whether offset difference `diff` lies in the subgroup, making two
    /// classes the same coset.
    fn in_subgroup(&self, diff: &[f64]) -> bool {
        match &self.pattern {
            StepPattern::Independent => diff.iter().all(|&d| zero_mod_tau(d) || is_multiple(d, self.theta)),
            StepPattern::Tied(w) => {
                let bound = (2.0 * TAU / self.theta.abs()).ceil() as i64 + 1;
                (-bound..=bound).any(|s| {
                    diff.iter()
                        .zip(w)
                        .all(|(&d, &wq)| zero_mod_tau(d - (s * wq) as f64 * self.theta))
                })
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 || self.samples_per_class == 0 {
            return Err(Error::InvalidConfig("empty covariant dataset".into()));
        }
        if !(self.theta.is_finite() && self.theta != 0.0) {
            return Err(Error::InvalidConfig("subgroup step must be finite and nonzero".into()));
        }
        if self.s_range.0 > self.s_range.1 {
            return Err(Error::InvalidConfig("empty multiplier range".into()));
        }
        if self.offsets.is_empty() || self.offsets.iter().any(|o| o.len() != self.n_qubits) {
            return Err(Error::InvalidConfig(format!(
                "need one {}-angle offset per class",
                self.n_qubits
            )));
        }
        if let StepPattern::Tied(w) = &self.pattern {
            if w.len() != self.n_qubits {
                return Err(Error::InvalidConfig("one weight per qubit required".into()));
            }
        }
        for a in 0..self.offsets.len() {
            for b in a + 1..self.offsets.len() {
                let diff: Vec<f64> = self.offsets[a]
                    .iter()
                    .zip(&self.offsets[b])
                    .map(|(x, y)| y - x)
                    .collect();
                if self.in_subgroup(&diff) {
                    return Err(Error::InvalidConfig(format!(
                        "classes {a} and {b} have offsets differing by a subgroup element"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Angles for multipliers `s` (one per qubit, or one for a tied pattern).
    pub fn angles(&self, class: usize, s: &[i64]) -> Vec<f64> {
        let offset = &self.offsets[class];
        (0..self.n_qubits)
            .map(|q| {
                let k = match &self.pattern {
                    StepPattern::Independent => s[q],
                    StepPattern::Tied(w) => w[q] * s[0],
                };
                k as f64 * self.theta + offset[q]
            })
            .collect()
    }
}

pub fn gen_covariant(spec: &CovariantSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed, &[0xc0fe]);
    let draws = match spec.pattern {
        StepPattern::Independent => spec.n_qubits,
        StepPattern::Tied(_) => 1,
    };
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for c in 0..spec.offsets.len() {
        for _ in 0..spec.samples_per_class {
            let s: Vec<i64> = (0..draws)
                .map(|_| rng.random_range(spec.s_range.0..=spec.s_range.1))
                .collect();
            features.push(spec.angles(c, &s));
            labels.push(c);
        }
    }
    Dataset::new(features, labels)
}

/// Writes the header `<feature names>,label`, an optional `importance` row of
/// feature ranks (0 = most important), then one row per sample.
pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = data.feature_names.clone();
    header.push(LABEL_COLUMN.into());
    w.write_record(&header)?;
    if let Some(order) = &data.importance_order {
        let mut rank = vec![0; order.len()];
        for (r, &f) in order.iter().enumerate() {
            rank[f] = r;
        }
        let mut rec: Vec<String> = rank.iter().map(usize::to_string).collect();
        rec.push(IMPORTANCE_LABEL.into());
        w.write_record(&rec)?;
    }
    for (row, label) in data.features.iter().zip(&data.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let label_col = header
        .iter()
        .position(|h| h.trim() == LABEL_COLUMN)
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing `{LABEL_COLUMN}` column"),
        })?;
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&i| i != label_col).collect();
    let feature_names = feature_cols.iter().map(|&i| header[i].trim().to_string()).collect();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut importance_order = None;
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |message: String| Error::Parse { line, message };
        let label = rec[label_col].trim();
        if label == IMPORTANCE_LABEL {
            if importance_order.is_some() || !features.is_empty() {
                return Err(err("importance row must come first and only once".into()));
            }
            let ranks = feature_cols
                .iter()
                .map(|&i| rec[i].trim().parse::<usize>().map_err(|_| err(format!("bad rank `{}`", &rec[i]))))
                .collect::<Result<Vec<_>>>()?;
            let mut order = vec![usize::MAX; ranks.len()];
            for (f, &rank) in ranks.iter().enumerate() {
                if rank >= order.len() || order[rank] != usize::MAX {
                    return Err(err("importance ranks are not a permutation".into()));
                }
                order[rank] = f;
            }
            importance_order = Some(order);
            continue;
        }
        let label = label
            .parse::<usize>()
            .map_err(|_| err(format!("label `{label}` is not a class id")))?;
        let row = feature_cols
            .iter()
            .map(|&i| {
                let v = rec[i].trim();
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| err(format!("`{v}` is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        features.push(row);
        labels.push(label);
    }
    Dataset::with_names(feature_names, features, labels, importance_order)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: in each class, `round(fraction · count)` samples go to
/// the training side, chosen by a seeded shuffle.
pub fn split_indices(data: &Dataset, fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, count) in data.class_counts() {
        if count < 2 {
            return Err(Error::Dataset(format!("class {class} has fewer than two samples")));
        }
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        members.shuffle(&mut seed::rng(seed, &[class as u64]));
        let k = ((fraction * count as f64).round() as usize).clamp(1, count - 1);
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let idx = split_indices(data, fraction, seed)?;
    Ok((data.subset(&idx.train), data.subset(&idx.test)))
}

/// Provenance record stored next to a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetManifest {
    UnionOfSubspaces(SubspaceSpec),
    Covariant(CovariantSpec),
    Csv { path: String },
}

impl DatasetManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
