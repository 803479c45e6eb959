//! Bit-flip-tolerant (BFT) fidelity kernel estimation.
//!
//! The BFT kernel `k^d(x, x')` is the probability mass of readout bitstrings
//! with Hamming weight at most `d` after running the kernel circuit. Every
//! matrix entry keeps its full Hamming-weight profile, so the matrices for all
//! tolerances come from the same shots.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featuremap::FeatureMapSpec;
use crate::linalg;
use crate::seed;
use crate::sim::{self, Circuit, NoiseModel, StateVector};

const SQUARE_TAG: u64 = 0x5155_4152;
const CROSS_TAG: u64 = 0x4352_4f53;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shots {
    /// Exact outcome probabilities (infinite shots).
    Exact,
    Sampled(u64),
}

impl Shots {
    pub fn label(&self) -> String {
        match self {
            Shots::Exact => "exact".into(),
            Shots::Sampled(s) => s.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    /// Bit-flip tolerance `d`.
    pub tolerance: usize,
    pub shots: Shots,
    pub estimate_diagonal: bool,
    pub master_seed: u64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            tolerance: 0,
            shots: Shots::Sampled(10_000),
            estimate_diagonal: true,
            master_seed: 0,
        }
    }
}

impl KernelConfig {
    pub fn exact(tolerance: usize) -> Self {
        Self {
            tolerance,
            shots: Shots::Exact,
            ..Self::default()
        }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        if self.tolerance > n_qubits {
            return Err(Error::ToleranceTooLarge {
                tolerance: self.tolerance,
                n_qubits,
            });
        }
        if self.shots == Shots::Sampled(0) {
            return Err(Error::ZeroShots);
        }
        Ok(())
    }
}

/// Per-entry Hamming-weight profiles: entry `(i, j)` holds the fraction of
/// readout mass at each weight `0..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileMatrix {
    pub n_qubits: usize,
    pub rows: usize,
    pub cols: usize,
    profiles: Vec<Vec<f64>>,
}

impl ProfileMatrix {
    pub fn profile(&self, i: usize, j: usize) -> &[f64] {
        &self.profiles[i * self.cols + j]
    }

    /// Kernel matrix at tolerance `d`; `d ≥ n` gives all ones.
    pub fn at(&self, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| {
            bft_value(self.profile(i, j), d, self.n_qubits)
        })
    }
}

fn bft_value(profile: &[f64], d: usize, n_qubits: usize) -> f64 {
    if d >= n_qubits {
        return 1.0;
    }
    profile[..=d].iter().sum::<f64>().clamp(0.0, 1.0)
}

fn unit_profile(n_qubits: usize) -> Vec<f64> {
    let mut p = vec![0.0; n_qubits + 1];
    p[0] = 1.0;
    p
}

/// Square kernel matrix with its repair metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrixEstimate {
    /// Assembled BFT values before repair, entries in `[0, 1]`.
    pub raw: DMatrix<f64>,
    /// PSD-repaired matrix used downstream.
    pub values: DMatrix<f64>,
    pub tolerance: usize,
    pub shots: Shots,
    pub psd_projected: bool,
    pub min_eigenvalue_before: f64,
}

impl KernelMatrixEstimate {
    pub fn from_raw(raw: DMatrix<f64>, tolerance: usize, shots: Shots) -> Result<Self> {
        let min_eigenvalue_before = linalg::min_eigenvalue(&raw);
        let (values, psd_projected) = if min_eigenvalue_before < 0.0 {
            (psd_project(&raw)?, true)
        } else {
            (raw.clone(), false)
        };
        Ok(Self {
            raw,
            values,
            tolerance,
            shots,
            psd_projected,
            min_eigenvalue_before,
        })
    }
}

/// Kernel evaluator for a fixed feature map, fiducial parameters and noise.
#[derive(Clone, Debug)]
pub struct KernelEstimator<'a> {
    spec: &'a FeatureMapSpec,
    noise: NoiseModel,
    fiducial_inverse: Circuit,
    psi: StateVector,
}

impl<'a> KernelEstimator<'a> {
    pub fn new(spec: &'a FeatureMapSpec, lambda: &[f64], noise: NoiseModel) -> Result<Self> {
        noise.validate()?;
        let fiducial = spec.build_fiducial(lambda)?;
        let psi = fiducial.run()?;
        Ok(Self {
            spec,
            noise,
            fiducial_inverse: fiducial.inverse(),
            psi,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.spec.n
    }

    pub fn fiducial_state(&self) -> &StateVector {
        &self.psi
    }

    /// `D(x) |ψ_λ⟩`.
    pub fn feature_state(&self, x: &[f64]) -> Result<StateVector> {
        let mut s = self.psi.clone();
        s.apply_circuit(&self.spec.build_embedding(x)?)?;
        Ok(s)
    }

    /// Noisy readout distribution of the kernel circuit for `(x, x')`.
    ///
    /// Same-axis rotations commute, so `D(x)† D(x')` is applied as a single
    /// layer of rotations by the angle differences.
    pub fn entry_distribution(&self, x: &[f64], x_prime: &[f64]) -> Result<Vec<f64>> {
        let a = self.spec.embedding_angles(x)?;
        let b = self.spec.embedding_angles(x_prime)?;
        let mut s = self.psi.clone();
        for (q, (ai, bi)) in a.iter().zip(&b).enumerate() {
            s.apply(&sim::Gate::rotation(self.spec.axes.gamma, q, bi - ai))?;
        }
        s.apply_circuit(&self.fiducial_inverse)?;
        sim::outcome_distribution(&s, &self.noise)
    }

    /// Hamming-weight profile of one entry, sampled with `seed` when shots
    /// are finite.
    pub fn entry_profile(&self, x: &[f64], x_prime: &[f64], shots: Shots, seed: u64) -> Result<Vec<f64>> {
        let dist = self.entry_distribution(x, x_prime)?;
        match shots {
            Shots::Exact => Ok(sim::weight_histogram(&dist)),
            Shots::Sampled(s) => Ok(sim::sample_counts(&dist, s, seed)?.weight_histogram()),
        }
    }

    /// Single BFT entry; `(i, j)` index the per-entry seed.
    pub fn estimate_entry(
        &self,
        x: &[f64],
        x_prime: &[f64],
        config: &KernelConfig,
        i: usize,
        j: usize,
    ) -> Result<f64> {
        config.validate(self.n_qubits())?;
        let seed = seed::derive(config.master_seed, &[SQUARE_TAG, i as u64, j as u64]);
        let profile = self.entry_profile(x, x_prime, config.shots, seed)?;
        Ok(bft_value(&profile, config.tolerance, self.n_qubits()))
    }

    /// Profiles for the upper triangle of `xs × xs`, mirrored exactly.
    pub fn profile_matrix(&self, xs: &[Vec<f64>], config: &KernelConfig) -> Result<ProfileMatrix> {
        config.validate(self.n_qubits())?;
        let m = xs.len();
        let n = self.n_qubits();
        let pairs: Vec<(usize, usize)> = (0..m)
            .flat_map(|i| (i..m).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j || config.estimate_diagonal)
            .collect();
        let computed: Vec<Vec<f64>> = pairs
            .par_iter()
            .map(|&(i, j)| {
                let seed = seed::derive(config.master_seed, &[SQUARE_TAG, i as u64, j as u64]);
                self.entry_profile(&xs[i], &xs[j], config.shots, seed)
            })
            .collect::<Result<_>>()?;
        let mut profiles = vec![Vec::new(); m * m];
        for ((i, j), p) in pairs.into_iter().zip(computed) {
            profiles[j * m + i] = p.clone();
            profiles[i * m + j] = p;
        }
        if !config.estimate_diagonal {
            for i in 0..m {
                profiles[i * m + i] = unit_profile(n);
            }
        }
        Ok(ProfileMatrix {
            n_qubits: n,
            rows: m,
            cols: m,
            profiles,
        })
    }

    /// Profiles for every `(test_i, train_j)` pair.
    pub fn profile_cross(
        &self,
        test: &[Vec<f64>],
        train: &[Vec<f64>],
        config: &KernelConfig,
    ) -> Result<ProfileMatrix> {
        config.validate(self.n_qubits())?;
        let cols = train.len();
        let profiles: Vec<Vec<f64>> = (0..test.len() * cols)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k / cols, k % cols);
                let seed = seed::derive(config.master_seed, &[CROSS_TAG, i as u64, j as u64]);
                self.entry_profile(&test[i], &train[j], config.shots, seed)
            })
            .collect::<Result<_>>()?;
        Ok(ProfileMatrix {
            n_qubits: self.n_qubits(),
            rows: test.len(),
            cols,
            profiles,
        })
    }

    fn exact_overlaps(&self, config: &KernelConfig) -> bool {
        config.shots == Shots::Exact && config.tolerance == 0 && self.noise.is_noiseless()
    }

    /// Raw square matrix at the configured tolerance.
    pub fn raw_matrix(&self, xs: &[Vec<f64>], config: &KernelConfig) -> Result<DMatrix<f64>> {
        config.validate(self.n_qubits())?;
        if xs.is_empty() {
            return Err(Error::Dataset("kernel of an empty dataset".into()));
        }
        if config.tolerance >= self.n_qubits() {
            return Ok(DMatrix::from_element(xs.len(), xs.len(), 1.0));
        }
        if self.exact_overlaps(config) {
            let states = self.feature_states(xs)?;
            return Ok(gram(&states, &states, true, config.estimate_diagonal));
        }
        Ok(self.profile_matrix(xs, config)?.at(config.tolerance))
    }

    /// Symmetric train matrix, repaired to PSD when needed.
    pub fn assemble_matrix(&self, xs: &[Vec<f64>], config: &KernelConfig) -> Result<KernelMatrixEstimate> {
        let raw = self.raw_matrix(xs, config)?;
        KernelMatrixEstimate::from_raw(raw, config.tolerance, config.shots)
    }

    /// Prediction-time matrix, `test × train`, without repair.
    pub fn assemble_cross_matrix(
        &self,
        test: &[Vec<f64>],
        train: &[Vec<f64>],
        config: &KernelConfig,
    ) -> Result<DMatrix<f64>> {
        config.validate(self.n_qubits())?;
        if config.tolerance >= self.n_qubits() {
            return Ok(DMatrix::from_element(test.len(), train.len(), 1.0));
        }
        if self.exact_overlaps(config) {
            let a = self.feature_states(test)?;
            let b = self.feature_states(train)?;
            return Ok(gram(&a, &b, false, true));
        }
        Ok(self.profile_cross(test, train, config)?.at(config.tolerance))
    }

    fn feature_states(&self, xs: &[Vec<f64>]) -> Result<Vec<StateVector>> {
        xs.par_iter().map(|x| self.feature_state(x)).collect()
    }
}

fn gram(a: &[StateVector], b: &[StateVector], symmetric: bool, diagonal: bool) -> DMatrix<f64> {
    let (rows, cols) = (a.len(), b.len());
    let entries: Vec<f64> = (0..rows * cols)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / cols, k % cols);
            if symmetric && i > j {
                return f64::NAN;
            }
            if symmetric && i == j && !diagonal {
                return 1.0;
            }
            let v = a[i].fidelity(&b[j]).expect("states share a register");
            v.clamp(0.0, 1.0)
        })
        .collect();
    let mut m = DMatrix::from_row_slice(rows, cols, &entries);
    if symmetric {
        for i in 0..rows {
            for j in 0..i {
                m[(i, j)] = m[(j, i)];
            }
        }
    }
    m
}

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues clipped to zero.
pub fn psd_project(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::ensure_symmetric(m)?;
    Ok(linalg::spectral_map(m, |l| l.max(0.0)))
}

/// Frobenius distance between `M/‖M‖` and `P/‖P‖`, where `P` is the PSD
/// projection of `M`. Zero for PSD input.
pub fn psd_distance_normalized(m: &DMatrix<f64>) -> Result<f64> {
    linalg::ensure_symmetric(m)?;
    let norm = m.norm();
    if norm == 0.0 {
        return Err(Error::Degenerate("zero matrix has no normalized form".into()));
    }
    if linalg::min_eigenvalue(m) >= 0.0 {
        return Ok(0.0);
    }
    let p = psd_project(m)?;
    let pnorm = p.norm();
    if pnorm == 0.0 {
        return Err(Error::Degenerate("PSD projection is zero".into()));
    }
    Ok((m / norm - p / pnorm).norm())
}

pub fn average_diagonal(m: &DMatrix<f64>) -> f64 {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return 0.0;
    }
    m.diagonal().sum() / k as f64
}

/// Slack on threshold comparisons, so that a diagonal of `1 − ε` from
/// roundoff still meets a threshold of 1.
const THRESHOLD_SLACK: f64 = 1e-12;

/// Smallest `d` whose average diagonal reaches `threshold`; `None` when no
/// tolerance does.
pub fn recommend_tolerance(avg_diagonal_by_d: &[f64], threshold: f64) -> Option<usize> {
    avg_diagonal_by_d
        .iter()
        .position(|&v| v >= threshold - THRESHOLD_SLACK)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub ns: Vec<usize>,
    pub noise: NoiseModel,
    pub shots: Shots,
    pub thresholds: Vec<f64>,
    /// Size of the random dataset evaluated per `n`.
    pub samples: usize,
    pub angle_scale: f64,
    pub master_seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            ns: vec![4, 8, 12],
            noise: NoiseModel::default(),
            shots: Shots::Sampled(10_000),
            thresholds: vec![0.9],
            samples: 8,
            angle_scale: 1.0,
            master_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub n: usize,
    pub d: usize,
    pub avg_diagonal: f64,
    pub psd_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub n: usize,
    pub threshold: f64,
    pub recommended_d: usize,
    /// False when no `d < n` reaches the threshold and `d = n` is reported.
    pub reachable: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub rows: Vec<CalibrationRow>,
    pub recommendations: Vec<Recommendation>,
}

impl CalibrationReport {
    pub fn recommended(&self, n: usize, threshold: f64) -> Option<&Recommendation> {
        self.recommendations
            .iter()
            .find(|r| r.n == n && r.threshold == threshold)
    }

    pub fn avg_diagonal_by_d(&self, n: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.n == n)
            .map(|r| r.avg_diagonal)
            .collect()
    }

    pub fn write_rows_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_recommendations_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.recommendations {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_rows_csv(path: &Path) -> Result<Vec<CalibrationRow>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }
}

/// Sweeps `d ∈ [0, n]` for every `n`, on a random dataset and random
/// fiducial parameters over a line coupling.
pub fn calibrate(config: &CalibrationConfig) -> Result<CalibrationReport> {
    use crate::featuremap::{Axes, CouplingMap};
    use rand::Rng;

    config.noise.validate()?;
    if let Some(&t) = config.thresholds.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::InvalidConfig(format!("threshold {t} outside (0, 1]")));
    }
    if config.samples == 0 {
        return Err(Error::InvalidConfig("calibration needs at least one sample".into()));
    }
    let mut report = CalibrationReport::default();
    for &n in &config.ns {
        if n == 0 {
            return Err(Error::InvalidConfig("register size must be positive".into()));
        }
        let spec = FeatureMapSpec::on_coupling(&CouplingMap::line(n), n, Axes::default(), config.angle_scale)?;
        let mut rng = seed::rng(config.master_seed, &[n as u64]);
        let tau = std::f64::consts::TAU;
        let lambda: Vec<f64> = (0..spec.n_params()).map(|_| rng.random_range(0.0..tau)).collect();
        let xs: Vec<Vec<f64>> = (0..config.samples)
            .map(|_| (0..n).map(|_| rng.random_range(0.0..tau)).collect())
            .collect();
        let estimator = KernelEstimator::new(&spec, &lambda, config.noise)?;
        let kc = KernelConfig {
            tolerance: 0,
            shots: config.shots,
            estimate_diagonal: true,
            master_seed: seed::derive(config.master_seed, &[n as u64, 1]),
        };
        let profiles = estimator.profile_matrix(&xs, &kc)?;
        let mut diag = Vec::with_capacity(n + 1);
        for d in 0..=n {
            let k = profiles.at(d);
            let avg = average_diagonal(&k);
            diag.push(avg);
            report.rows.push(CalibrationRow {
                n,
                d,
                avg_diagonal: avg,
                psd_distance: psd_distance_normalized(&k)?,
            });
        }
        for &threshold in &config.thresholds {
            let found = recommend_tolerance(&diag, threshold);
            report.recommendations.push(Recommendation {
                n,
                threshold,
                recommended_d: found.unwrap_or(n),
                reachable: found.is_some(),
            });
        }
    }
    Ok(report)
}

/// Writes a matrix as CSV: header `id,<column ids>`, one row per row id.
pub fn write_matrix_csv(path: &Path, row_ids: &[String], col_ids: &[String], m: &DMatrix<f64>) -> Result<()> {
    if row_ids.len() != m.nrows() || col_ids.len() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} ids for a {}x{} matrix",
            row_ids.len(),
            col_ids.len(),
            m.nrows(),
            m.ncols()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend(col_ids.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in row_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend((0..m.ncols()).map(|j| format!("{}", m[(i, j)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub struct LabeledMatrix {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn read_matrix_csv(path: &Path) -> Result<LabeledMatrix> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("id") {
        return Err(Error::Parse {
            line: 1,
            message: "first column must be `id`".into(),
        });
    }
    let col_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut row_ids = Vec::new();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        row_ids.push(rec.get(0).unwrap_or("").to_string());
        for field in rec.iter().skip(1) {
            data.push(field.trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("`{field}` is not a number"),
            })?);
        }
    }
    let values = DMatrix::from_row_slice(row_ids.len(), col_ids.len(), &data);
    Ok(LabeledMatrix {
        row_ids,
        col_ids,
        values,
    })
}
