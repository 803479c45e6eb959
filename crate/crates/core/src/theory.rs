//! Numerical checks of the covariant-kernel theory: coset covariance,
//! exact class kernels from group structure, sphere and subspace inner
//! product statistics, principal angles, and angle-encoded kernels on unions
//! of subspaces.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{haar_rotation, Dataset};
use crate::error::{Error, Result};
use crate::seed;
use crate::sim::{Axis, Circuit, Gate, StateVector};

/// Default tolerance of the exact (non-statistical) checks.
pub const EXACT_TOL: f64 = 1e-9;

/// Subgroup generators, one coset representative per class, and the
/// fiducial state.
#[derive(Clone, Debug)]
pub struct CovariantStructure {
    pub generators: Vec<Circuit>,
    pub cosets: Vec<Circuit>,
    pub psi: StateVector,
}

fn expectation(psi: &StateVector, circuit: &Circuit) -> Result<Complex64> {
    let mut s = psi.clone();
    s.apply_circuit(circuit)?;
    psi.inner(&s)
}

/// `(|00⟩ + |11⟩)/√2`.
pub fn bell_state() -> StateVector {
    let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
    let z = Complex64::new(0.0, 0.0);
    StateVector::from_amplitudes(vec![h, z, z, h]).expect("normalized")
}

impl CovariantStructure {
    /// Generator `RX(θ)⊗RX(−θ)`, cosets `I` and `I⊗RX(π)`, Bell fiducial.
    pub fn bell(theta: f64) -> Self {
        let generators = vec![Circuit::from_gates(2, vec![Gate::rx(0, theta), Gate::rx(1, -theta)]).unwrap()];
        let cosets = vec![
            Circuit::new(2),
            Circuit::from_gates(2, vec![Gate::rx(1, PI)]).unwrap(),
        ];
        Self {
            generators,
            cosets,
            psi: bell_state(),
        }
    }

    /// Single class, trivial subgroup, identity coset.
    pub fn trivial(n_qubits: usize) -> Result<Self> {
        Ok(Self {
            generators: vec![Circuit::new(n_qubits)],
            cosets: vec![Circuit::new(n_qubits)],
            psi: StateVector::zero(n_qubits)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    /// `max 1 − |⟨ψ|C_c† D|ψ⟩|` over the sampled unitaries.
    pub membership: f64,
    /// `max 1 − |⟨ψ|S|ψ⟩|` over the generators.
    pub invariance: f64,
    /// `max |⟨ψ|C_j† C_ℓ|ψ⟩|` over class pairs.
    pub orthogonality: f64,
    pub tolerance: f64,
    pub violations: Vec<String>,
}

impl CovarianceReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the three covariance conditions: every sampled unitary of class `c`
/// maps `ψ` into `C_c S ψ`, the generators fix `ψ` up to phase, and distinct
/// cosets send `ψ` to orthogonal states.
pub fn check_covariance(structure: &CovariantStructure, samples: &[(usize, Circuit)], tolerance: f64) -> Result<CovarianceReport> {
    let psi = &structure.psi;
    let mut violations = Vec::new();
    let mut membership: f64 = 0.0;
    for (idx, (class, unitary)) in samples.iter().enumerate() {
        let coset = structure.cosets.get(*class).ok_or_else(|| {
            Error::InvalidConfig(format!("sample {idx} has class {class} without a coset"))
        })?;
        let mut c = unitary.clone();
        c.append(&coset.inverse())?;
        let dev = 1.0 - expectation(psi, &c)?.norm();
        membership = membership.max(dev);
        if dev > tolerance {
            violations.push(format!("sample {idx} (class {class}) leaves its coset by {dev:e}"));
        }
    }
    let mut invariance: f64 = 0.0;
    for (g, gen) in structure.generators.iter().enumerate() {
        let dev = 1.0 - expectation(psi, gen)?.norm();
        invariance = invariance.max(dev);
        if dev > tolerance {
            violations.push(format!("generator {g} moves the fiducial state by {dev:e}"));
        }
    }
    let mut orthogonality: f64 = 0.0;
    for j in 0..structure.cosets.len() {
        for l in j + 1..structure.cosets.len() {
            let mut c = structure.cosets[l].clone();
            c.append(&structure.cosets[j].inverse())?;
            let overlap = expectation(psi, &c)?.norm();
            orthogonality = orthogonality.max(overlap);
            if overlap > tolerance {
                violations.push(format!("cosets {j} and {l} overlap by {overlap:e}"));
            }
        }
    }
    Ok(CovarianceReport {
        membership,
        invariance,
        orthogonality,
        tolerance,
        violations,
    })
}

/// `cos θ |ψ⟩ + sin θ |φ⟩` for a random unit `φ ⟂ ψ`.
pub fn perturb_state<R: Rng + ?Sized>(psi: &StateVector, angle: f64, rng: &mut R) -> Result<StateVector> {
    let dim = psi.amplitudes().len();
    let mut phi: Vec<Complex64> = (0..dim)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let overlap: Complex64 = psi.amplitudes().iter().zip(&phi).map(|(a, b)| a.conj() * b).sum();
    for (p, a) in phi.iter_mut().zip(psi.amplitudes()) {
        *p -= overlap * a;
    }
    let norm = phi.iter().map(|p| p.norm_sqr()).sum::<f64>().sqrt();
    let (s, c) = angle.sin_cos();
    let amps = psi
        .amplitudes()
        .iter()
        .zip(&phi)
        .map(|(a, p)| a * c + p * (s / norm))
        .collect();
    StateVector::from_amplitudes(amps)
}

/// `⊗_q R_axis(scale · x_q)` on `n` qubits.
pub fn angle_embedding(x: &[f64], axis: Axis, scale: f64) -> Circuit {
    let gates = x
        .iter()
        .enumerate()
        .map(|(q, &v)| Gate::rotation(axis, q, scale * v))
        .collect();
    Circuit::from_gates(x.len(), gates).expect("one gate per qubit")
}

/// `|⟨ψ| D(x)† D(x') |ψ⟩|²` for the angle embedding.
pub fn embedded_kernel(psi: &StateVector, axis: Axis, scale: f64, x: &[f64], x_prime: &[f64]) -> Result<f64> {
    let mut a = psi.clone();
    a.apply_circuit(&angle_embedding(x, axis, scale))?;
    let mut b = psi.clone();
    b.apply_circuit(&angle_embedding(x_prime, axis, scale))?;
    a.fidelity(&b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupKernelCheck {
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pairs: usize,
}

impl GroupKernelCheck {
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

/// Largest deviation of the embedded kernel from the class indicator over
/// all sample pairs.
pub fn verify_prop_group(data: &Dataset, psi: &StateVector, axis: Axis, scale: f64, tolerance: f64) -> Result<GroupKernelCheck> {
    let m = data.len();
    let states: Vec<StateVector> = data
        .features
        .iter()
        .map(|x| {
            let mut s = psi.clone();
            s.apply_circuit(&angle_embedding(x, axis, scale))?;
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for i in 0..m {
        for j in i..m {
            let k = states[i].fidelity(&states[j])?;
            let target = if data.labels[i] == data.labels[j] { 1.0 } else { 0.0 };
            worst = worst.max((k - target).abs());
        }
    }
    Ok(GroupKernelCheck {
        max_deviation: worst,
        tolerance,
        pairs: m * (m + 1) / 2,
    })
}

/// Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

impl McEstimate {
    fn from_moments(sum: f64, sum_sq: f64, trials: usize) -> Self {
        let n = trials as f64;
        let mean = sum / n;
        let var = if trials > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n).sqrt(),
            trials,
        }
    }

    /// Distance to `value` in standard errors.
    pub fn sigmas_from(&self, value: f64) -> f64 {
        if self.stderr == 0.0 {
            return if self.mean == value { 0.0 } else { f64::INFINITY };
        }
        (self.mean - value).abs() / self.stderr
    }

    /// `(self − other)` in units of the combined standard error.
    pub fn separation(&self, other: &McEstimate) -> f64 {
        let se = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        let diff = self.mean - other.mean;
        if se == 0.0 {
            return if diff > 0.0 { f64::INFINITY } else if diff < 0.0 { f64::NEG_INFINITY } else { 0.0 };
        }
        diff / se
    }
}

const CHUNK: usize = 8192;

/// Runs `trials` draws of `sample` split into fixed-size chunks, each with its
/// own derived RNG, so the estimate does not depend on the thread count.
pub fn monte_carlo<F>(trials: usize, master: u64, sample: F) -> McEstimate
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    let (sum, sum_sq) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seed::rng(master, &[c as u64]);
            let count = CHUNK.min(trials - c * CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let v = sample(&mut rng);
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    McEstimate::from_moments(sum, sum_sq, trials)
}

fn unit_gaussian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// `E[⟨x, x̄⟩²]` for independent uniform points on `S^{d−1}`.
pub fn mc_sphere_inner(d: usize, trials: usize, seed: u64) -> Result<McEstimate> {
    if d == 0 || trials == 0 {
        return Err(Error::InvalidConfig("dimension and trial count must be positive".into()));
    }
    Ok(monte_carlo(trials, seed, |rng| {
        let x = unit_gaussian(d, rng);
        let y = unit_gaussian(d, rng);
        x.dot(&y).powi(2)
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalAngles {
    /// Nondecreasing angles in `[0, π/2]`.
    pub angles: Vec<f64>,
    /// Aligned bases: `u_i`, `v_i` realize angle `i`.
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl PrincipalAngles {
    pub fn cosines(&self) -> Vec<f64> {
        self.angles.iter().map(|a| a.cos()).collect()
    }
}

fn check_orthonormal(b: &DMatrix<f64>, name: &str) -> Result<()> {
    let gram = b.transpose() * b;
    let dev = (gram - DMatrix::identity(b.ncols(), b.ncols())).amax();
    if b.ncols() == 0 || dev > 1e-8 {
        return Err(Error::Degenerate(format!(
            "basis {name} is not orthonormal (deviation {dev:e})"
        )));
    }
    Ok(())
}

/// Principal angles from the SVD of `AᵀB`.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<PrincipalAngles> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch("bases live in different ambient spaces".into()));
    }
    check_orthonormal(a, "A")?;
    check_orthonormal(b, "B")?;
    let svd = (a.transpose() * b).svd(true, true);
    let p = svd.u.expect("requested");
    let qt = svd.v_t.expect("requested");
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let angles = order
        .iter()
        .map(|&i| svd.singular_values[i].clamp(0.0, 1.0).acos())
        .collect();
    let p_sorted = DMatrix::from_columns(&order.iter().map(|&i| p.column(i).into_owned()).collect::<Vec<_>>());
    let q_sorted = DMatrix::from_columns(&order.iter().map(|&i| qt.row(i).transpose()).collect::<Vec<_>>());
    Ok(PrincipalAngles {
        angles,
        u: a * p_sorted,
        v: b * q_sorted,
    })
}

/// `max |⟨u_i, v_j⟩|` over `i ≠ j` for the aligned bases.
pub fn verify_orthogonality(pa: &PrincipalAngles) -> f64 {
    let cross = pa.u.transpose() * &pa.v;
    let mut worst: f64 = 0.0;
    for i in 0..cross.nrows() {
        for j in 0..cross.ncols() {
            if i != j {
                worst = worst.max(cross[(i, j)].abs());
            }
        }
    }
    worst
}

fn sphere_in<R: Rng + ?Sized>(basis: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    basis * unit_gaussian(basis.ncols(), rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalInequality {
    pub within: McEstimate,
    pub cross: McEstimate,
    /// `(1/d²) Σ cos² θ_j`, the exact cross expectation for equal dimensions.
    pub cross_bound: f64,
    pub angles: PrincipalAngles,
}

impl ClassicalInequality {
    /// `within − cross` in combined standard errors.
    pub fn separation(&self) -> f64 {
        self.within.separation(&self.cross)
    }
}

/// Estimates `E⟨x, x'⟩²` for two points of subspace `a`, and for one point of
/// `a` and one of `b`.
pub fn classical_inequality(a: &DMatrix<f64>, b: &DMatrix<f64>, trials: usize, seed: u64) -> Result<ClassicalInequality> {
    let angles = principal_angles(a, b)?;
    let d = a.ncols().max(b.ncols()) as f64;
    let cross_bound = angles.cosines().iter().map(|c| c * c).sum::<f64>() / (d * d);
    let within = monte_carlo(trials, seed::derive(seed, &[1]), |rng| {
        sphere_in(a, rng).dot(&sphere_in(a, rng)).powi(2)
    });
    let cross = monte_carlo(trials, seed::derive(seed, &[2]), |rng| {
        sphere_in(a, rng).dot(&sphere_in(b, rng)).powi(2)
    });
    Ok(ClassicalInequality {
        within,
        cross,
        cross_bound,
        angles,
    })
}

/// `Π cos²(s (x_i − y_i) / 2)`: the `|0ⁿ⟩` kernel of `⊗ RX(s x_i)`.
pub fn closed_form_kernel(x: &[f64], y: &[f64], scale: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (scale * (a - b) / 2.0).cos().powi(2))
        .product()
}

/// Same kernel evaluated on the simulator.
pub fn statevector_kernel(x: &[f64], y: &[f64], scale: f64) -> Result<f64> {
    embedded_kernel(&StateVector::zero(x.len())?, Axis::X, scale, x, y)
}

/// Relative placement of the two points' subspaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubspaceCase {
    Same,
    OrthogonalEqual,
    IndependentEqual,
    OrthogonalDouble,
    IndependentDouble,
}

impl SubspaceCase {
    pub const ALL: [SubspaceCase; 5] = [
        SubspaceCase::Same,
        SubspaceCase::OrthogonalEqual,
        SubspaceCase::IndependentEqual,
        SubspaceCase::OrthogonalDouble,
        SubspaceCase::IndependentDouble,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SubspaceCase::Same => "same",
            SubspaceCase::OrthogonalEqual => "orthogonal_equal",
            SubspaceCase::IndependentEqual => "independent_equal",
            SubspaceCase::OrthogonalDouble => "orthogonal_double",
            SubspaceCase::IndependentDouble => "independent_double",
        }
    }

    /// Dimension of the second point's subspace when the first has `d`.
    pub fn other_dim(&self, d: usize) -> usize {
        match self {
            SubspaceCase::OrthogonalDouble | SubspaceCase::IndependentDouble => 2 * d,
            _ => d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationRow {
    pub case: SubspaceCase,
    pub dim: usize,
    pub other_dim: usize,
    pub estimate: f64,
    pub stderr: f64,
}

/// Draws `x` uniformly on the sphere of the first `d` coordinates of
/// `R^{3d}` and `y` according to `case`, returning `k(x, y)` at angle scale
/// `scale`. Independent cases rotate `y` by a fresh Haar rotation of the span
/// of both subspaces.
fn subspace_kernel_sample<R: Rng + ?Sized>(case: SubspaceCase, d: usize, scale: f64, rng: &mut R) -> f64 {
    let n = 3 * d;
    let mut x = vec![0.0; n];
    for (i, v) in unit_gaussian(d, rng).iter().enumerate() {
        x[i] = *v;
    }
    let mut y = vec![0.0; n];
    match case {
        SubspaceCase::Same => {
            for (i, v) in unit_gaussian(d, rng).iter().enumerate() {
                y[i] = *v;
            }
        }
        SubspaceCase::OrthogonalEqual | SubspaceCase::IndependentEqual => {
            for (i, v) in unit_gaussian(d, rng).iter().enumerate() {
                y[d + i] = *v;
            }
        }
        SubspaceCase::OrthogonalDouble | SubspaceCase::IndependentDouble => {
            for (i, v) in unit_gaussian(2 * d, rng).iter().enumerate() {
                y[d + i] = *v;
            }
        }
    }
    let span = d + case.other_dim(d);
    if matches!(case, SubspaceCase::IndependentEqual | SubspaceCase::IndependentDouble) {
        let r = haar_rotation(span, rng);
        let rotated = &r * DVector::from_column_slice(&y[..span]);
        y[..span].copy_from_slice(rotated.as_slice());
    }
    closed_form_kernel(&x, &y, scale)
}

pub fn quantum_case_expectation(case: SubspaceCase, d: usize, trials: usize, scale: f64, seed: u64) -> McEstimate {
    let tag = SubspaceCase::ALL.iter().position(|c| *c == case).unwrap() as u64;
    monte_carlo(trials, seed::derive(seed, &[tag, d as u64]), |rng| {
        subspace_kernel_sample(case, d, scale, rng)
    })
}

/// Expectation of the angle-encoded kernel for every case and dimension.
pub fn quantum_subspace_expectations(dims: &[usize], trials: usize, scale: f64, seed: u64) -> Result<Vec<ExpectationRow>> {
    if dims.contains(&0) || trials == 0 {
        return Err(Error::InvalidConfig("dimensions and trial count must be positive".into()));
    }
    let mut rows = Vec::new();
    for &d in dims {
        for case in SubspaceCase::ALL {
            let e = quantum_case_expectation(case, d, trials, scale, seed);
            rows.push(ExpectationRow {
                case,
                dim: d,
                other_dim: case.other_dim(d),
                estimate: e.mean,
                stderr: e.stderr,
            });
        }
    }
    Ok(rows)
}

/// Per dimension, the smallest separation (in combined standard errors)
/// between the same-subspace expectation and any cross-subspace case.
pub fn same_subspace_margins(rows: &[ExpectationRow]) -> Vec<(usize, f64)> {
    let mut dims: Vec<usize> = rows.iter().map(|r| r.dim).collect();
    dims.dedup();
    dims.into_iter()
        .map(|d| {
            let at = |c: SubspaceCase| rows.iter().find(|r| r.dim == d && r.case == c);
            let Some(same) = at(SubspaceCase::Same) else {
                return (d, f64::NAN);
            };
            let margin = SubspaceCase::ALL[1..]
                .iter()
                .filter_map(|&c| at(c))
                .map(|r| {
                    let a = McEstimate { mean: same.estimate, stderr: same.stderr, trials: 0 };
                    let b = McEstimate { mean: r.estimate, stderr: r.stderr, trials: 0 };
                    a.separation(&b)
                })
                .fold(f64::INFINITY, f64::min);
            (d, margin)
        })
        .collect()
}

/// Writes `case,dim,other_dim,estimate,stderr` records.
pub fn write_expectations_csv(rows: &[ExpectationRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["case", "dim", "other_dim", "estimate", "stderr"])?;
    for r in rows {
        w.write_record(&[
            r.case.name().to_string(),
            r.dim.to_string(),
            r.other_dim.to_string(),
            format!("{}", r.estimate),
            format!("{}", r.stderr),
        ])?;
    }
    w.flush()?;
    Ok(())
}
