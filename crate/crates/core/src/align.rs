//! Centered kernel alignment, class target kernels, SPSA-driven alignment of
//! the fiducial parameters, and the geometric difference between a classical
//! and a quantum kernel.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featuremap::FeatureMapSpec;
use crate::kernel::{psd_project, KernelConfig, KernelEstimator};
use crate::linalg;
use crate::seed;
use crate::sim::NoiseModel;
use crate::svc;

/// Centered norms below this count as a constant kernel.
const DEGENERATE_NORM: f64 = 1e-12;

/// `K − 1K/m − K1/m + 1K1/m²`.
pub fn center_matrix(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::ensure_square(k)?;
    let m = k.nrows();
    if m == 0 {
        return Ok(k.clone());
    }
    let mf = m as f64;
    let row_means: Vec<f64> = (0..m).map(|i| k.row(i).sum() / mf).collect();
    let col_means: Vec<f64> = (0..m).map(|j| k.column(j).sum() / mf).collect();
    let grand = row_means.iter().sum::<f64>() / mf;
    Ok(DMatrix::from_fn(m, m, |i, j| {
        k[(i, j)] - row_means[i] - col_means[j] + grand
    }))
}

/// Frobenius cosine of the centered matrices.
pub fn centered_alignment(target: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<f64> {
    if target.shape() != k.shape() {
        return Err(Error::DimensionMismatch(format!(
            "alignment of {:?} and {:?} matrices",
            target.shape(),
            k.shape()
        )));
    }
    let tc = center_matrix(target)?;
    let kc = center_matrix(k)?;
    let (tn, kn) = (tc.norm(), kc.norm());
    if tn < DEGENERATE_NORM || kn < DEGENERATE_NORM {
        return Err(Error::Degenerate(
            "centered kernel is zero (constant kernel or single sample)".into(),
        ));
    }
    Ok((linalg::frobenius_inner(&tc, &kc) / (tn * kn)).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// 1 within a class, 0 across.
    #[default]
    ZeroOne,
    /// 1 within a class, `−1/(C−1)` across.
    Shifted,
}

pub fn target_matrix(labels: &[usize], kind: TargetKind) -> Result<DMatrix<f64>> {
    if labels.is_empty() {
        return Err(Error::Dataset("target kernel of an empty label set".into()));
    }
    let off = match kind {
        TargetKind::ZeroOne => 0.0,
        TargetKind::Shifted => {
            let mut classes = labels.to_vec();
            classes.sort_unstable();
            classes.dedup();
            if classes.len() < 2 {
                return Err(Error::Dataset(
                    "shifted target needs at least two classes".into(),
                ));
            }
            -1.0 / (classes.len() as f64 - 1.0)
        }
    };
    let m = labels.len();
    Ok(DMatrix::from_fn(m, m, |i, j| {
        if labels[i] == labels[j] {
            1.0
        } else {
            off
        }
    }))
}

/// Automatic choice of the step gain `a` from the loss landscape at the start
/// point: `a` is set so the first update moves each parameter by about
/// `target_step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainCalibration {
    pub target_step: f64,
    pub samples: usize,
}

impl Default for GainCalibration {
    fn default() -> Self {
        Self {
            target_step: std::f64::consts::TAU / 10.0,
            samples: 25,
        }
    }
}

/// SPSA gains `a_k = a / (k + 1 + A)^alpha`, `c_k = c / (k + 1)^gamma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpsaConfig {
    pub iterations: usize,
    pub a: f64,
    pub c: f64,
    #[serde(rename = "A")]
    pub stability: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub seed: u64,
    pub calibration: Option<GainCalibration>,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            a: 0.1,
            c: 0.1,
            stability: 10.0,
            alpha: 0.602,
            gamma: 0.101,
            seed: 0,
            calibration: None,
        }
    }
}

impl SpsaConfig {
    /// Calibrated gains: `c = 0.2`, `A = 0`, `a` from the landscape.
    pub fn calibrated(iterations: usize, seed: u64) -> Self {
        Self {
            iterations,
            c: 0.2,
            stability: 0.0,
            seed,
            calibration: Some(GainCalibration::default()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.c > 0.0) {
            return Err(Error::InvalidConfig("SPSA gains a and c must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("SPSA needs at least one iteration".into()));
        }
        if self.stability < 0.0 {
            return Err(Error::InvalidConfig("SPSA stability constant must be nonnegative".into()));
        }
        if let Some(cal) = self.calibration {
            if !(cal.target_step > 0.0) || cal.samples == 0 {
                return Err(Error::InvalidConfig("invalid SPSA gain calibration".into()));
            }
        }
        Ok(())
    }

    fn a_k(&self, a: f64, k: usize) -> f64 {
        a / (k as f64 + 1.0 + self.stability).powf(self.alpha)
    }

    fn c_k(&self, k: usize) -> f64 {
        self.c / (k as f64 + 1.0).powf(self.gamma)
    }
}

/// Optimization history. Entry 0 is the start point; entry `k + 1` is the
/// iterate after update `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTrace {
    pub start_iteration: usize,
    pub losses: Vec<f64>,
    pub params: Vec<Vec<f64>>,
    pub best_params: Vec<f64>,
    pub best_loss: f64,
    /// Step gain actually used (after calibration, if any).
    pub gain_a: f64,
}

impl AlignmentTrace {
    pub fn final_params(&self) -> &[f64] {
        self.params.last().expect("trace holds the start point")
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trace holds the start point")
    }

    /// Writes `iteration,loss,p0,p1,…` records.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let dim = self.best_params.len();
        let mut header = vec!["iteration".to_string(), "loss".to_string()];
        header.extend((0..dim).map(|i| format!("p{i}")));
        w.write_record(&header)?;
        for (k, (loss, p)) in self.losses.iter().zip(&self.params).enumerate() {
            let mut rec = vec![(self.start_iteration + k).to_string(), format!("{loss}")];
            rec.extend(p.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Last recorded iterate of a trace file: `(iteration, params)`.
pub fn load_snapshot(path: &Path) -> Result<(usize, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut last: Option<(usize, Vec<f64>)> = None;
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |m: &str| Error::Parse {
            line,
            message: m.to_string(),
        };
        let it = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad iteration"))?;
        let params = rec
            .iter()
            .skip(2)
            .map(|f| f.parse::<f64>().map_err(|_| bad("bad parameter")))
            .collect::<Result<Vec<_>>>()?;
        last = Some((it, params));
    }
    last.ok_or_else(|| Error::Parse {
        line: 1,
        message: "trace has no iterates".into(),
    })
}

fn rademacher(dim: usize, master: u64, words: &[u64]) -> Vec<f64> {
    let mut rng = seed::rng(master, words);
    (0..dim)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect()
}

fn shifted(x: &[f64], delta: &[f64], scale: f64) -> Vec<f64> {
    x.iter().zip(delta).map(|(a, b)| a + scale * b).collect()
}

/// Minimizes `loss` by SPSA from `x0`. `start_iteration` continues the gain
/// schedule and perturbation stream of an earlier run.
pub fn spsa_minimize<F>(loss: F, x0: &[f64], config: &SpsaConfig, start_iteration: usize) -> Result<AlignmentTrace>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    let dim = x0.len();
    let gain_a = match config.calibration {
        None => config.a,
        Some(cal) => {
            let mut total = 0.0;
            for s in 0..cal.samples {
                let delta = rademacher(dim, config.seed, &[u64::MAX, s as u64]);
                let (fp, fm) = rayon::join(
                    || loss(&shifted(x0, &delta, config.c)),
                    || loss(&shifted(x0, &delta, -config.c)),
                );
                total += ((fp - fm) / (2.0 * config.c)).abs();
            }
            let mean = total / cal.samples as f64;
            if mean > 0.0 {
                cal.target_step * (config.stability + 1.0).powf(config.alpha) / mean
            } else {
                config.a
            }
        }
    };
    let mut x = x0.to_vec();
    let mut fx = loss(&x);
    let mut trace = AlignmentTrace {
        start_iteration,
        losses: vec![fx],
        params: vec![x.clone()],
        best_params: x.clone(),
        best_loss: fx,
        gain_a,
    };
    for k in start_iteration..start_iteration + config.iterations {
        let ck = config.c_k(k);
        let ak = config.a_k(gain_a, k);
        let delta = rademacher(dim, config.seed, &[k as u64]);
        let (fp, fm) = rayon::join(
            || loss(&shifted(&x, &delta, ck)),
            || loss(&shifted(&x, &delta, -ck)),
        );
        let g = (fp - fm) / (2.0 * ck);
        for (xi, di) in x.iter_mut().zip(&delta) {
            *xi -= ak * g * di;
        }
        fx = loss(&x);
        trace.losses.push(fx);
        trace.params.push(x.clone());
        if fx < trace.best_loss {
            trace.best_loss = fx;
            trace.best_params = x.clone();
        }
    }
    Ok(trace)
}

/// Everything the alignment loss needs besides the parameters.
#[derive(Clone, Debug)]
pub struct AlignmentProblem<'a> {
    pub spec: &'a FeatureMapSpec,
    pub xs: &'a [Vec<f64>],
    pub labels: &'a [usize],
    pub kernel: KernelConfig,
    pub noise: NoiseModel,
    pub target: TargetKind,
}

impl AlignmentProblem<'_> {
    /// `1 − A(K_t, K_λ)` on the repaired train kernel; 1 when the kernel is
    /// degenerate or cannot be evaluated.
    pub fn loss(&self, lambda: &[f64]) -> f64 {
        self.try_loss(lambda).unwrap_or(1.0)
    }

    fn try_loss(&self, lambda: &[f64]) -> Result<f64> {
        let target = target_matrix(self.labels, self.target)?;
        let est = KernelEstimator::new(self.spec, lambda, self.noise)?;
        let k = est.assemble_matrix(self.xs, &self.kernel)?;
        Ok(1.0 - centered_alignment(&target, &k.values)?)
    }
}

/// Uniform random fiducial parameters in `[0, 2π)`.
pub fn random_parameters(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed, &[0x1a3b_da7a]);
    (0..dim)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect()
}

/// Aligns the fiducial parameters of `problem.spec` to the class target.
pub fn align_kernel(problem: &AlignmentProblem<'_>, lambda0: &[f64], config: &SpsaConfig) -> Result<AlignmentTrace> {
    if lambda0.len() != problem.spec.n_params() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} fiducial parameters, got {}",
            problem.spec.n_params(),
            lambda0.len()
        )));
    }
    if problem.xs.len() != problem.labels.len() {
        return Err(Error::DimensionMismatch("samples and labels differ in length".into()));
    }
    problem.kernel.validate(problem.spec.n)?;
    problem.noise.validate()?;
    target_matrix(problem.labels, problem.target)?;
    spsa_minimize(|l| problem.loss(l), lambda0, config, 0)
}

/// `1e-8 · trace(K) / m`.
pub fn default_regularizer(k: &DMatrix<f64>) -> f64 {
    let m = k.nrows().max(1) as f64;
    1e-8 * k.trace() / m
}

/// `√‖√K_Q (K_C + reg·I)⁻¹ √K_Q‖₂`, both matrices repaired to PSD first.
pub fn geometric_difference(k_classical: &DMatrix<f64>, k_quantum: &DMatrix<f64>, regularizer: f64) -> Result<f64> {
    if k_classical.shape() != k_quantum.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} classical vs {:?} quantum kernel",
            k_classical.shape(),
            k_quantum.shape()
        )));
    }
    let kc = psd_project(k_classical)?;
    let kq = psd_project(k_quantum)?;
    let m = kc.nrows();
    let reg = kc + DMatrix::identity(m, m) * regularizer;
    let eig = linalg::sym_eigen(&reg);
    let largest = eig.eigenvalues.amax();
    let smallest = eig.eigenvalues.min();
    if smallest <= largest * 1e-15 || smallest <= 0.0 {
        return Err(Error::Singular(format!(
            "regularized classical kernel has eigenvalue {smallest:e}"
        )));
    }
    let inv = linalg::spectral_map(&reg, |l| 1.0 / l);
    let root = linalg::sqrt_psd(&kq);
    let sandwich = &root * inv * &root;
    let top = linalg::sym_eigen(&sandwich).eigenvalues.max();
    Ok(top.max(0.0).sqrt())
}

/// RBF bandwidth on a log grid minimizing `g_CQ` against `k_quantum`.
pub fn rbf_gamma_minimizing_gcq(
    xs: &[Vec<f64>],
    k_quantum: &DMatrix<f64>,
    gammas: &[f64],
) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &gamma in gammas {
        let kc = svc::rbf_matrix(xs, gamma)?;
        let g = geometric_difference(&kc, k_quantum, default_regularizer(&kc))?;
        if best.is_none_or(|(_, bg)| g < bg) {
            best = Some((gamma, g));
        }
    }
    best.ok_or_else(|| Error::InvalidConfig("empty bandwidth grid".into()))
}

/// `count` points spaced evenly in log10 between `lo` and `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect()
}
