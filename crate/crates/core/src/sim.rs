//! Exact statevector simulation for the rotation/CZ circuit family, a
//! readout-flip plus global-depolarizing noise channel, and seeded shot
//! sampling.
//!
//! Qubit `q` is bit `q` of the basis index (qubit 0 is least significant).
//! Rotations use the half-angle convention, `RX(θ) = cos(θ/2) I − i sin(θ/2) X`.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Largest register the exact simulator accepts.
pub const MAX_QUBITS: usize = 24;

const NORM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Gate {
    Rotation { axis: Axis, qubit: usize, angle: f64 },
    Cz(usize, usize),
}

impl Gate {
    pub fn rx(qubit: usize, angle: f64) -> Self {
        Gate::Rotation { axis: Axis::X, qubit, angle }
    }

    pub fn ry(qubit: usize, angle: f64) -> Self {
        Gate::Rotation { axis: Axis::Y, qubit, angle }
    }

    pub fn rz(qubit: usize, angle: f64) -> Self {
        Gate::Rotation { axis: Axis::Z, qubit, angle }
    }

    pub fn rotation(axis: Axis, qubit: usize, angle: f64) -> Self {
        Gate::Rotation { axis, qubit, angle }
    }

    pub fn inverse(&self) -> Self {
        match *self {
            Gate::Rotation { axis, qubit, angle } => Gate::Rotation {
                axis,
                qubit,
                angle: -angle,
            },
            cz @ Gate::Cz(..) => cz,
        }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        let check = |q: usize| {
            if q >= n_qubits {
                Err(Error::QubitOutOfRange { qubit: q, n_qubits })
            } else {
                Ok(())
            }
        };
        match *self {
            Gate::Rotation { qubit, .. } => check(qubit),
            Gate::Cz(a, b) => {
                check(a)?;
                check(b)?;
                if a == b {
                    return Err(Error::DuplicateTarget(a));
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    n_qubits: usize,
    gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            gates: Vec::new(),
        }
    }

    pub fn from_gates(n_qubits: usize, gates: Vec<Gate>) -> Result<Self> {
        for g in &gates {
            g.validate(n_qubits)?;
        }
        Ok(Self { n_qubits, gates })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn push(&mut self, gate: Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        self.gates.push(gate);
        Ok(())
    }

    pub fn append(&mut self, other: &Circuit) -> Result<()> {
        if other.n_qubits != self.n_qubits {
            return Err(Error::DimensionMismatch(format!(
                "cannot append a {}-qubit circuit to a {}-qubit circuit",
                other.n_qubits, self.n_qubits
            )));
        }
        self.gates.extend_from_slice(&other.gates);
        Ok(())
    }

    /// The adjoint circuit: gates reversed, rotation angles negated.
    pub fn inverse(&self) -> Circuit {
        Circuit {
            n_qubits: self.n_qubits,
            gates: self.gates.iter().rev().map(Gate::inverse).collect(),
        }
    }

    pub fn cz_count(&self) -> usize {
        self.gates
            .iter()
            .filter(|g| matches!(g, Gate::Cz(..)))
            .count()
    }

    pub fn rotation_count(&self) -> usize {
        self.gates.len() - self.cz_count()
    }

    /// Runs the circuit on `|0…0⟩`.
    pub fn run(&self) -> Result<StateVector> {
        let mut state = StateVector::zero(self.n_qubits)?;
        state.apply_circuit(self)?;
        Ok(state)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

fn check_size(n_qubits: usize) -> Result<()> {
    if n_qubits > MAX_QUBITS {
        return Err(Error::TooManyQubits {
            requested: n_qubits,
            limit: MAX_QUBITS,
        });
    }
    Ok(())
}

impl StateVector {
    /// `|0…0⟩` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        check_size(n_qubits)?;
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { n_qubits, amps })
    }

    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        check_size(n_qubits)?;
        if index >= 1 << n_qubits {
            return Err(Error::DimensionMismatch(format!(
                "basis index {index} out of range for {n_qubits} qubits"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(Self { n_qubits, amps })
    }

    /// Wraps raw amplitudes; the length must be a power of two and the
    /// vector must be normalized.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let len = amps.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::DimensionMismatch(format!(
                "amplitude vector length {len} is not a power of two"
            )));
        }
        let n_qubits = len.trailing_zeros() as usize;
        check_size(n_qubits)?;
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::DimensionMismatch(format!(
                "inner product of {}- and {}-qubit states",
                self.n_qubits, other.n_qubits
            )));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// `|⟨self|other⟩|²`.
    pub fn fidelity(&self, other: &StateVector) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        match *gate {
            Gate::Rotation { axis, qubit, angle } => self.rotate(axis, qubit, angle),
            Gate::Cz(a, b) => self.cz(a, b),
        }
        Ok(())
    }

    pub fn apply_circuit(&mut self, circuit: &Circuit) -> Result<()> {
        if circuit.n_qubits != self.n_qubits {
            return Err(Error::DimensionMismatch(format!(
                "{}-qubit circuit on a {}-qubit state",
                circuit.n_qubits, self.n_qubits
            )));
        }
        for g in &circuit.gates {
            self.apply(g)?;
        }
        Ok(())
    }

    fn rotate(&mut self, axis: Axis, qubit: usize, angle: f64) {
        let (s, c) = (angle / 2.0).sin_cos();
        let stride = 1usize << qubit;
        match axis {
            Axis::X => {
                let ms = Complex64::new(0.0, -s);
                for_each_pair(&mut self.amps, stride, |a0, a1| {
                    let (x0, x1) = (*a0, *a1);
                    *a0 = x0 * c + x1 * ms;
                    *a1 = x0 * ms + x1 * c;
                });
            }
            Axis::Y => {
                for_each_pair(&mut self.amps, stride, |a0, a1| {
                    let (x0, x1) = (*a0, *a1);
                    *a0 = x0 * c - x1 * s;
                    *a1 = x0 * s + x1 * c;
                });
            }
            Axis::Z => {
                let p0 = Complex64::new(c, -s);
                let p1 = Complex64::new(c, s);
                for_each_pair(&mut self.amps, stride, |a0, a1| {
                    *a0 *= p0;
                    *a1 *= p1;
                });
            }
        }
    }

    fn cz(&mut self, a: usize, b: usize) {
        let mask = (1usize << a) | (1usize << b);
        for (i, amp) in self.amps.iter_mut().enumerate() {
            if i & mask == mask {
                *amp = -*amp;
            }
        }
    }
}

fn for_each_pair(
    amps: &mut [Complex64],
    stride: usize,
    mut f: impl FnMut(&mut Complex64, &mut Complex64),
) {
    for block in amps.chunks_exact_mut(2 * stride) {
        let (lo, hi) = block.split_at_mut(stride);
        for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
            f(a0, a1);
        }
    }
}

/// Readout noise: independent per-qubit flips `0→1` with probability `p01`
/// and `1→0` with `p10`, preceded by a global depolarizing mix with weight
/// `depolarizing`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub p01: f64,
    pub p10: f64,
    #[serde(default)]
    pub depolarizing: f64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn readout(p01: f64, p10: f64) -> Result<Self> {
        Self::new(p01, p10, 0.0)
    }

    pub fn new(p01: f64, p10: f64, depolarizing: f64) -> Result<Self> {
        let model = Self {
            p01,
            p10,
            depolarizing,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("p01", self.p01),
            ("p10", self.p10),
            ("depolarizing", self.depolarizing),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidProbability { name, value });
            }
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.p01 == 0.0 && self.p10 == 0.0 && self.depolarizing == 0.0
    }

    /// Pushes an ideal outcome distribution through the channel.
    pub fn apply(&self, ideal: &[f64], n_qubits: usize) -> Result<Vec<f64>> {
        self.validate()?;
        if ideal.len() != 1 << n_qubits {
            return Err(Error::DimensionMismatch(format!(
                "distribution of length {} for {n_qubits} qubits",
                ideal.len()
            )));
        }
        let mut p = ideal.to_vec();
        if self.depolarizing > 0.0 {
            let uniform = self.depolarizing / p.len() as f64;
            let keep = 1.0 - self.depolarizing;
            p.iter_mut().for_each(|v| *v = keep * *v + uniform);
        }
        if self.p01 > 0.0 || self.p10 > 0.0 {
            let (p01, p10) = (self.p01, self.p10);
            for q in 0..n_qubits {
                let stride = 1usize << q;
                for block in p.chunks_exact_mut(2 * stride) {
                    let (lo, hi) = block.split_at_mut(stride);
                    for (z, o) in lo.iter_mut().zip(hi.iter_mut()) {
                        let (pz, po) = (*z, *o);
                        *z = (1.0 - p01) * pz + p10 * po;
                        *o = p01 * pz + (1.0 - p10) * po;
                    }
                }
            }
        }
        Ok(p)
    }
}

/// Outcome distribution of measuring `state` in the computational basis
/// through the noise channel.
pub fn outcome_distribution(state: &StateVector, noise: &NoiseModel) -> Result<Vec<f64>> {
    let ideal = state.probabilities();
    if noise.is_noiseless() {
        return Ok(ideal);
    }
    noise.apply(&ideal, state.n_qubits)
}

/// Histogram of sampled bitstrings, keyed by basis index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotCounts {
    pub n_qubits: usize,
    pub shots: u64,
    pub counts: BTreeMap<usize, u64>,
}

impl ShotCounts {
    pub fn count(&self, index: usize) -> u64 {
        self.counts.get(&index).copied().unwrap_or(0)
    }

    /// Counts keyed by bitstring with qubit 0 rightmost.
    pub fn by_bitstring(&self) -> BTreeMap<String, u64> {
        self.counts
            .iter()
            .map(|(&k, &v)| (bitstring(k, self.n_qubits), v))
            .collect()
    }

    /// Fraction of shots whose bitstring has Hamming weight `≤ d`.
    pub fn fraction_weight_leq(&self, d: usize) -> f64 {
        let hits: u64 = self
            .counts
            .iter()
            .filter(|(&k, _)| (k.count_ones() as usize) <= d)
            .map(|(_, &v)| v)
            .sum();
        hits as f64 / self.shots as f64
    }

    /// Shot fraction per Hamming weight `0..=n`.
    pub fn weight_histogram(&self) -> Vec<f64> {
        let mut hist = vec![0.0; self.n_qubits + 1];
        for (&k, &v) in &self.counts {
            hist[k.count_ones() as usize] += v as f64;
        }
        let total = self.shots as f64;
        hist.iter_mut().for_each(|h| *h /= total);
        hist
    }
}

pub fn bitstring(index: usize, n_qubits: usize) -> String {
    (0..n_qubits)
        .rev()
        .map(|q| if index >> q & 1 == 1 { '1' } else { '0' })
        .collect()
}

/// Multinomial sample of `shots` outcomes from `dist`, drawn as a chain of
/// conditional binomials so the result depends only on `(dist, shots, seed)`.
pub fn sample_counts(dist: &[f64], shots: u64, seed: u64) -> Result<ShotCounts> {
    let mut rng = seed::rng(seed, &[]);
    sample_counts_with(dist, shots, &mut rng)
}

pub fn sample_counts_with<R: Rng + ?Sized>(
    dist: &[f64],
    shots: u64,
    rng: &mut R,
) -> Result<ShotCounts> {
    if shots == 0 {
        return Err(Error::ZeroShots);
    }
    if dist.is_empty() || !dist.len().is_power_of_two() {
        return Err(Error::DimensionMismatch(format!(
            "distribution length {} is not a power of two",
            dist.len()
        )));
    }
    if let Some(&bad) = dist.iter().find(|p| !p.is_finite() || **p < -NORM_TOL) {
        return Err(Error::InvalidProbability {
            name: "outcome probability",
            value: bad,
        });
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > NORM_TOL {
        return Err(Error::NotNormalized(total));
    }

    let n_qubits = dist.len().trailing_zeros() as usize;
    let mut counts = BTreeMap::new();
    let mut remaining = shots;
    let mut mass_left = total;
    for (index, &p) in dist.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let p = p.max(0.0);
        if p == 0.0 {
            mass_left -= p;
            continue;
        }
        let cond = if mass_left <= 0.0 {
            1.0
        } else {
            (p / mass_left).clamp(0.0, 1.0)
        };
        let k = if cond >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, cond)
                .expect("conditional probability is in [0, 1]")
                .sample(rng)
        };
        if k > 0 {
            counts.insert(index, k);
            remaining -= k;
        }
        mass_left -= p;
    }
    if remaining > 0 {
        // roundoff left a few shots unassigned; give them to the last outcome
        // with positive mass
        let last = dist
            .iter()
            .rposition(|&p| p > 0.0)
            .expect("normalized distribution has positive mass");
        *counts.entry(last).or_insert(0) += remaining;
    }
    Ok(ShotCounts {
        n_qubits,
        shots,
        counts,
    })
}

/// Probability mass on bitstrings of Hamming weight `≤ d`.
pub fn mass_weight_leq(dist: &[f64], d: usize) -> f64 {
    let n_qubits = dist.len().trailing_zeros() as usize;
    if d >= n_qubits {
        return 1.0;
    }
    dist.iter()
        .enumerate()
        .filter(|(i, _)| (i.count_ones() as usize) <= d)
        .map(|(_, p)| p)
        .sum()
}

/// Probability mass per Hamming weight `0..=n`.
pub fn weight_histogram(dist: &[f64]) -> Vec<f64> {
    let n_qubits = dist.len().trailing_zeros() as usize;
    let mut hist = vec![0.0; n_qubits + 1];
    for (i, p) in dist.iter().enumerate() {
        hist[i.count_ones() as usize] += p;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};
    use std::f64::consts::PI;

    fn random_state(n: usize, seed: u64) -> StateVector {
        let mut rng = seed::rng(seed, &[]);
        let mut c = Circuit::new(n);
        for _ in 0..4 {
            for q in 0..n {
                c.push(Gate::ry(q, rng.random_range(-PI..PI))).unwrap();
                c.push(Gate::rz(q, rng.random_range(-PI..PI))).unwrap();
            }
            for q in 1..n {
                c.push(Gate::Cz(q - 1, q)).unwrap();
            }
        }
        c.run().unwrap()
    }

    #[test]
    fn rx_pi_flips() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply(&Gate::rx(0, PI)).unwrap();
        assert!((s.probabilities()[1] - 1.0).abs() < 1e-15);
        // −i on |1⟩ under the half-angle convention
        assert!((s.amplitudes()[1] - Complex64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn rx_half_pi_is_balanced() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply(&Gate::rx(0, PI / 2.0)).unwrap();
        let p = s.probabilities();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rz_leaves_probabilities() {
        for theta in [0.3, 1.0, -2.2, 7.0] {
            let mut s = StateVector::zero(1).unwrap();
            s.apply(&Gate::rz(0, theta)).unwrap();
            let p = s.probabilities();
            assert!((p[0] - 1.0).abs() < 1e-15 && p[1] == 0.0);
        }
    }

    #[test]
    fn gate_target_errors() {
        let mut s = StateVector::zero(2).unwrap();
        assert!(matches!(
            s.apply(&Gate::rx(2, 0.1)),
            Err(Error::QubitOutOfRange { qubit: 2, .. })
        ));
        assert!(matches!(
            s.apply(&Gate::Cz(1, 1)),
            Err(Error::DuplicateTarget(1))
        ));
        assert!(Circuit::from_gates(2, vec![Gate::Cz(0, 3)]).is_err());
    }

    #[test]
    fn register_cap() {
        assert!(StateVector::zero(MAX_QUBITS + 1).is_err());
    }

    #[test]
    fn empty_circuit_is_identity() {
        let s = Circuit::new(2).run().unwrap();
        assert_eq!(s.amplitudes()[0], Complex64::new(1.0, 0.0));
        assert_eq!(s.norm_sqr(), 1.0);
    }

    #[test]
    fn flip_qubit_zero_gives_01() {
        let c = Circuit::from_gates(2, vec![Gate::rx(0, PI)]).unwrap();
        let s = c.run().unwrap();
        let counts = sample_counts(&s.probabilities(), 100, 3).unwrap();
        assert_eq!(counts.by_bitstring().get("01"), Some(&100));
    }

    #[test]
    fn circuit_then_inverse_returns_to_zero() {
        let mut rng = seed::rng(11, &[]);
        let mut c = Circuit::new(4);
        for q in 0..4 {
            c.push(Gate::rx(q, rng.random_range(-PI..PI))).unwrap();
            c.push(Gate::ry(q, rng.random_range(-PI..PI))).unwrap();
        }
        c.push(Gate::Cz(0, 1)).unwrap();
        c.push(Gate::Cz(2, 3)).unwrap();
        let mut full = c.clone();
        full.append(&c.inverse()).unwrap();
        let s = full.run().unwrap();
        assert!((s.amplitudes()[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn noiseless_distribution_is_exact() {
        let s = random_state(3, 5);
        let d = outcome_distribution(&s, &NoiseModel::noiseless()).unwrap();
        assert_eq!(d, s.probabilities());
    }

    #[test]
    fn direct_readout_flip() {
        let s = StateVector::zero(1).unwrap();
        let noise = NoiseModel::readout(0.1, 0.0).unwrap();
        let d = outcome_distribution(&s, &noise).unwrap();
        assert!((d[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn full_depolarizing_is_uniform() {
        let s = random_state(2, 8);
        let noise = NoiseModel::new(0.0, 0.0, 1.0).unwrap();
        let d = outcome_distribution(&s, &noise).unwrap();
        for p in d {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_noise_rejected() {
        assert!(NoiseModel::new(-0.1, 0.0, 0.0).is_err());
        assert!(NoiseModel::new(0.0, 1.5, 0.0).is_err());
        assert!(NoiseModel::new(0.0, 0.0, 2.0).is_err());
    }

    #[test]
    fn point_mass_sampling() {
        let mut dist = vec![0.0; 8];
        dist[0] = 1.0;
        let c = sample_counts(&dist, 777, 1).unwrap();
        assert_eq!(c.count(0), 777);
        assert_eq!(c.counts.len(), 1);
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = random_state(4, 2);
        let p = s.probabilities();
        assert_eq!(
            sample_counts(&p, 5000, 42).unwrap(),
            sample_counts(&p, 5000, 42).unwrap()
        );
        assert_ne!(
            sample_counts(&p, 5000, 42).unwrap(),
            sample_counts(&p, 5000, 43).unwrap()
        );
    }

    #[test]
    fn binomial_concentration() {
        let shots = 1_000_000u64;
        let c = sample_counts(&[0.5, 0.5], shots, 9).unwrap();
        let bound = 3.0 * (0.25 * shots as f64).sqrt();
        for k in 0..2 {
            assert!((c.count(k) as f64 - 500_000.0).abs() <= bound);
        }
    }

    #[test]
    fn sampling_rejects_bad_input() {
        assert!(matches!(
            sample_counts(&[0.5, 0.4], 10, 0),
            Err(Error::NotNormalized(_))
        ));
        assert!(matches!(
            sample_counts(&[0.5, 0.5], 0, 0),
            Err(Error::ZeroShots)
        ));
    }

    #[test]
    fn weight_mass() {
        let s = random_state(4, 3);
        let p = s.probabilities();
        assert_eq!(mass_weight_leq(&p, 4), 1.0);
        let mut point = vec![0.0; 16];
        point[0] = 1.0;
        assert_eq!(mass_weight_leq(&point, 0), 1.0);
        let accepted = (0..16usize).filter(|i| i.count_ones() <= 2).count();
        assert_eq!(accepted, 11);
        let hist = weight_histogram(&p);
        let cumulative: f64 = hist[..=2].iter().sum();
        assert!((cumulative - mass_weight_leq(&p, 2)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn norm_is_preserved(seed in any::<u64>(), n in 1usize..6) {
            let s = random_state(n, seed);
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn cz_and_rx_inverses(seed in any::<u64>(), theta in -10.0f64..10.0) {
            let s = random_state(3, seed);
            let mut t = s.clone();
            t.apply(&Gate::Cz(0, 2)).unwrap();
            t.apply(&Gate::Cz(0, 2)).unwrap();
            t.apply(&Gate::rx(1, theta)).unwrap();
            t.apply(&Gate::rx(1, -theta)).unwrap();
            let dist: f64 = s.amplitudes().iter().zip(t.amplitudes())
                .map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            prop_assert!(dist < 1e-12);
        }

        #[test]
        fn readout_channel_is_stochastic(
            seed in any::<u64>(),
            p01 in 0.0f64..1.0,
            p10 in 0.0f64..1.0,
            dep in 0.0f64..1.0,
        ) {
            let s = random_state(3, seed);
            let noise = NoiseModel::new(p01, p10, dep).unwrap();
            let d = outcome_distribution(&s, &noise).unwrap();
            let total: f64 = d.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(d.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn sampled_counts_sum_to_shots(seed in any::<u64>(), shots in 1u64..20000) {
            let s = random_state(3, seed);
            let c = sample_counts(&s.probabilities(), shots, seed).unwrap();
            prop_assert_eq!(c.counts.values().sum::<u64>(), shots);
        }
    }
}
