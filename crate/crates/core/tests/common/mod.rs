#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Minimum of `½ αᵀQα − Σα` over `0 ≤ α ≤ C`, `yᵀα = 0`, with
/// `Q_ij = y_i y_j K_ij`, found by enumerating which coordinates sit at 0,
/// sit at `C`, or are free, and solving the equality-constrained KKT system
/// for the free ones.
pub fn brute_force_dual(k: &DMatrix<f64>, y: &[f64], c: f64) -> (f64, Vec<f64>) {
    let m = y.len();
    let q = DMatrix::from_fn(m, m, |i, j| y[i] * y[j] * k[(i, j)]);
    let objective = |a: &[f64]| {
        let v = DVector::from_column_slice(a);
        0.5 * v.dot(&(&q * &v)) - v.sum()
    };
    let mut best = (f64::INFINITY, vec![0.0; m]);
    for code in 0..3usize.pow(m as u32) {
        let mut state = vec![0u8; m];
        let mut t = code;
        for s in state.iter_mut() {
            *s = (t % 3) as u8;
            t /= 3;
        }
        let free: Vec<usize> = (0..m).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state.iter().map(|&s| if s == 1 { c } else { 0.0 }).collect();
        if !free.is_empty() {
            let f = free.len();
            let mut lhs = DMatrix::zeros(f + 1, f + 1);
            let mut rhs = DVector::zeros(f + 1);
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    lhs[(r, s)] = q[(i, j)];
                }
                lhs[(r, f)] = y[i];
                lhs[(f, r)] = y[i];
                rhs[r] = 1.0 - (0..m).filter(|&j| state[j] == 1).map(|j| q[(i, j)] * c).sum::<f64>();
            }
            rhs[f] = -(0..m).filter(|&j| state[j] == 1).map(|j| y[j] * c).sum::<f64>();
            let Some(sol) = lhs.lu().solve(&rhs) else { continue };
            for (r, &i) in free.iter().enumerate() {
                alpha[i] = sol[r];
            }
        }
        let eq: f64 = alpha.iter().zip(y).map(|(a, b)| a * b).sum();
        if eq.abs() > 1e-9 || alpha.iter().any(|&a| a < -1e-9 || a > c + 1e-9) {
            continue;
        }
        let clipped: Vec<f64> = alpha.iter().map(|a| a.clamp(0.0, c)).collect();
        let obj = objective(&clipped);
        if obj < best.0 {
            best = (obj, clipped);
        }
    }
    best
}

/// RBF Gram matrix of `m` Gaussian points in `dim` dimensions.
pub fn random_rbf_instance(rng: &mut ChaCha8Rng, m: usize, dim: usize) -> DMatrix<f64> {
    let xs: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let gamma = rng.random_range(0.2..3.0);
    covkernel::svc::rbf_matrix(&xs, gamma).unwrap()
}

/// `±1` labels containing both signs.
pub fn random_signs(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    loop {
        let y: Vec<f64> = (0..m).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        if y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0) {
            return y;
        }
    }
}

/// `P(Binomial(n, p) ≤ d)` by direct summation.
pub fn binomial_cdf(n: usize, p: f64, d: usize) -> f64 {
    let mut total = 0.0;
    let mut coeff = 1.0;
    for k in 0..=d.min(n) {
        if k > 0 {
            coeff *= (n - k + 1) as f64 / k as f64;
        }
        total += coeff * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
    }
    total
}
