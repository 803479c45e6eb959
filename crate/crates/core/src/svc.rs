//! Support vector classification on precomputed kernels.
//!
//! The binary solver is SMO with second-order working-set selection, as in
//! libsvm, solving
//! `min ½ αᵀQα − Σα  s.t.  0 ≤ α ≤ C, yᵀα = 0` with `Q_ij = y_i y_j K_ij`.
//! Multiclass prediction is one-vs-one voting.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::seed;

pub const DEFAULT_C: f64 = 1.0;
pub const KKT_TOLERANCE: f64 = 1e-3;
const TAU: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryModel {
    pub alpha: Vec<f64>,
    /// Labels in `{+1, −1}`.
    pub y: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub iterations: usize,
}

impl BinaryModel {
    pub fn support(&self) -> Vec<usize> {
        (0..self.alpha.len()).filter(|&i| self.alpha[i] > 0.0).collect()
    }

    /// `Σ α_i y_i K(row, x_i) + b` for each row of `k_cross`.
    pub fn decision_function(&self, k_cross: &DMatrix<f64>) -> Result<Vec<f64>> {
        if k_cross.ncols() != self.alpha.len() {
            return Err(Error::DimensionMismatch(format!(
                "kernel rows have {} columns, model has {} training samples",
                k_cross.ncols(),
                self.alpha.len()
            )));
        }
        Ok((0..k_cross.nrows())
            .map(|r| self.decision_at(|i| k_cross[(r, i)]))
            .collect())
    }

    fn decision_at(&self, kernel: impl Fn(usize) -> f64) -> f64 {
        let mut f = self.bias;
        for i in 0..self.alpha.len() {
            if self.alpha[i] != 0.0 {
                f += self.alpha[i] * self.y[i] * kernel(i);
            }
        }
        f
    }

    /// `½ αᵀQα − Σα` on the training kernel.
    pub fn dual_objective(&self, k: &DMatrix<f64>) -> f64 {
        dual_objective(k, &self.y, &self.alpha)
    }

    /// Largest violation of the dual optimality conditions, `max_up − min_low`
    /// of `−y_t ∇_t`; zero or negative at an exact optimum.
    pub fn kkt_residual(&self, k: &DMatrix<f64>) -> f64 {
        let g = gradient(k, &self.y, &self.alpha);
        let (mut up, mut low) = (f64::NEG_INFINITY, f64::INFINITY);
        for t in 0..self.alpha.len() {
            let v = -self.y[t] * g[t];
            if in_up(self.y[t], self.alpha[t], self.c) {
                up = up.max(v);
            }
            if in_low(self.y[t], self.alpha[t], self.c) {
                low = low.min(v);
            }
        }
        if up.is_finite() && low.is_finite() {
            up - low
        } else {
            0.0
        }
    }
}

pub fn dual_objective(k: &DMatrix<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let m = alpha.len();
    let mut quad = 0.0;
    for i in 0..m {
        for j in 0..m {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[(i, j)];
        }
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

fn gradient(k: &DMatrix<f64>, y: &[f64], alpha: &[f64]) -> Vec<f64> {
    let m = alpha.len();
    (0..m)
        .map(|i| {
            (0..m).map(|j| y[i] * y[j] * k[(i, j)] * alpha[j]).sum::<f64>() - 1.0
        })
        .collect()
}

fn in_up(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

fn in_low(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

/// Fits a binary SVC; `y` holds `±1`.
pub fn fit_binary(k: &DMatrix<f64>, y: &[f64], c: f64) -> Result<BinaryModel> {
    linalg::ensure_symmetric(k)?;
    let m = y.len();
    if k.nrows() != m {
        return Err(Error::DimensionMismatch(format!(
            "{m} labels for a {0}x{0} kernel",
            k.nrows()
        )));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidConfig(format!("regularization C = {c} must be positive")));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidConfig("binary labels must be +1 or -1".into()));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::Dataset("binary SVC needs samples of both classes".into()));
    }

    let q = |i: usize, j: usize| y[i] * y[j] * k[(i, j)];
    let qd: Vec<f64> = (0..m).map(|i| k[(i, i)]).collect();
    let mut alpha = vec![0.0; m];
    let mut g = vec![-1.0; m];
    let max_iter = 10_000_000usize.max(100 * m);
    let mut iterations = 0;

    while iterations < max_iter {
        // working set: i maximizes −y∇ over the up set, j minimizes the
        // second-order objective decrease over the low set
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..m {
            if in_up(y[t], alpha[t], c) && -y[t] * g[t] >= gmax {
                gmax = -y[t] * g[t];
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else { break };
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut obj_min = f64::INFINITY;
        for t in 0..m {
            if !in_low(y[t], alpha[t], c) {
                continue;
            }
            let v = y[t] * g[t];
            gmax2 = gmax2.max(v);
            let grad_diff = gmax + v;
            if grad_diff > 0.0 {
                let quad = qd[i] + qd[t] - 2.0 * y[i] * q(i, t) * y[t];
                let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= obj_min {
                    obj_min = obj;
                    j_sel = Some(t);
                }
            }
        }
        if gmax + gmax2 < KKT_TOLERANCE {
            break;
        }
        let Some(j) = j_sel else { break };
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = q(i, j);
        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] + 2.0 * qij).max(TAU);
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * qij).max(TAU);
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..m {
            g[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    // bias: average of y∇ over free vectors, else midpoint of the bounds
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..m {
        let yg = y[t] * g[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    Ok(BinaryModel {
        alpha,
        y: y.to_vec(),
        bias: -rho,
        c,
        iterations,
    })
}

/// One binary machine of the one-vs-one ensemble; `+1` is `class_a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    pub class_a: usize,
    pub class_b: usize,
    /// Training-set indices of the pair's samples.
    pub indices: Vec<usize>,
    pub model: BinaryModel,
}

impl PairModel {
    fn decision(&self, k_cross: &DMatrix<f64>, row: usize) -> f64 {
        self.model.decision_at(|i| k_cross[(row, self.indices[i])])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MulticlassModel {
    pub classes: Vec<usize>,
    pub n_train: usize,
    pub pairs: Vec<PairModel>,
}

fn sorted_classes(labels: &[usize]) -> Vec<usize> {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
}

/// Trains one binary machine per class pair on the corresponding sub-block.
pub fn fit_multiclass(k: &DMatrix<f64>, labels: &[usize], c: f64) -> Result<MulticlassModel> {
    linalg::ensure_symmetric(k)?;
    if k.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for a {1}x{1} kernel",
            labels.len(),
            k.nrows()
        )));
    }
    let classes = sorted_classes(labels);
    if classes.len() < 2 {
        return Err(Error::Dataset("multiclass SVC needs at least two classes".into()));
    }
    let pair_list: Vec<(usize, usize)> = classes
        .iter()
        .enumerate()
        .flat_map(|(ia, &a)| classes[ia + 1..].iter().map(move |&b| (a, b)))
        .collect();
    let pairs = pair_list
        .par_iter()
        .map(|&(a, b)| {
            let indices: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] == a || labels[i] == b)
                .collect();
            let sub = DMatrix::from_fn(indices.len(), indices.len(), |r, s| {
                k[(indices[r], indices[s])]
            });
            let y: Vec<f64> = indices
                .iter()
                .map(|&i| if labels[i] == a { 1.0 } else { -1.0 })
                .collect();
            let model = fit_binary(&sub, &y, c)?;
            Ok(PairModel {
                class_a: a,
                class_b: b,
                indices,
                model,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MulticlassModel {
        classes,
        n_train: labels.len(),
        pairs,
    })
}

/// Decision value of one pair: `(class_a, class_b, f)`, `f ≥ 0` votes `a`.
pub type PairDecision = (usize, usize, f64);

/// Majority vote; ties go to the larger summed `|f|` over won votes, then to
/// the lowest class.
pub fn vote(classes: &[usize], decisions: &[PairDecision]) -> usize {
    let mut votes: BTreeMap<usize, (usize, f64)> = classes.iter().map(|&c| (c, (0, 0.0))).collect();
    for &(a, b, f) in decisions {
        let winner = if f >= 0.0 { a } else { b };
        let e = votes.entry(winner).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += f.abs();
    }
    let mut best = (classes[0], 0usize, f64::NEG_INFINITY);
    for (&class, &(v, mag)) in &votes {
        if v > best.1 || (v == best.1 && mag > best.2) {
            best = (class, v, mag);
        }
    }
    best.0
}

impl MulticlassModel {
    pub fn pair_decisions(&self, k_cross: &DMatrix<f64>) -> Result<Vec<Vec<PairDecision>>> {
        if k_cross.ncols() != self.n_train {
            return Err(Error::DimensionMismatch(format!(
                "kernel rows have {} columns, model was trained on {} samples",
                k_cross.ncols(),
                self.n_train
            )));
        }
        Ok((0..k_cross.nrows())
            .map(|r| {
                self.pairs
                    .iter()
                    .map(|p| (p.class_a, p.class_b, p.decision(k_cross, r)))
                    .collect()
            })
            .collect())
    }

    /// Predicted class per row of the `test × train` kernel.
    pub fn predict(&self, k_cross: &DMatrix<f64>) -> Result<Vec<usize>> {
        Ok(self
            .pair_decisions(k_cross)?
            .iter()
            .map(|d| vote(&self.classes, d))
            .collect())
    }

    /// Records `class_a,class_b,bias,index,coef` with `coef = α·y`.
    pub fn write_records(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["class_a", "class_b", "bias", "index", "coef", "c"])?;
        for p in &self.pairs {
            for (local, &index) in p.indices.iter().enumerate() {
                w.write_record(&[
                    p.class_a.to_string(),
                    p.class_b.to_string(),
                    format!("{}", p.model.bias),
                    index.to_string(),
                    format!("{}", p.model.alpha[local] * p.model.y[local]),
                    format!("{}", p.model.c),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_records(path: &Path, n_train: usize) -> Result<Self> {
        #[derive(Deserialize)]
        struct Rec {
            class_a: usize,
            class_b: usize,
            bias: f64,
            index: usize,
            coef: f64,
            c: f64,
        }
        let mut r = csv::Reader::from_path(path)?;
        let mut pairs: Vec<PairModel> = Vec::new();
        for rec in r.deserialize() {
            let rec: Rec = rec?;
            if rec.index >= n_train {
                return Err(Error::Dataset(format!(
                    "model index {} beyond {n_train} training samples",
                    rec.index
                )));
            }
            let same = pairs
                .last()
                .is_some_and(|p| p.class_a == rec.class_a && p.class_b == rec.class_b);
            if !same {
                pairs.push(PairModel {
                    class_a: rec.class_a,
                    class_b: rec.class_b,
                    indices: Vec::new(),
                    model: BinaryModel {
                        alpha: Vec::new(),
                        y: Vec::new(),
                        bias: rec.bias,
                        c: rec.c,
                        iterations: 0,
                    },
                });
            }
            let p = pairs.last_mut().expect("pushed above");
            p.indices.push(rec.index);
            // the sign of a zero coefficient is irrelevant to predictions
            let y = if rec.coef < 0.0 { -1.0 } else { 1.0 };
            p.model.alpha.push(rec.coef.abs());
            p.model.y.push(y);
        }
        let mut classes: Vec<usize> = pairs.iter().flat_map(|p| [p.class_a, p.class_b]).collect();
        classes.sort_unstable();
        classes.dedup();
        Ok(Self {
            classes,
            n_train,
            pairs,
        })
    }
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_rows(xs: &[Vec<f64>]) -> Result<()> {
    if let Some(first) = xs.first() {
        if xs.iter().any(|x| x.len() != first.len()) {
            return Err(Error::DimensionMismatch("ragged feature rows".into()));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassicalKernel {
    /// `exp(−γ‖x − x'‖²)`.
    Rbf { gamma: f64 },
    /// `γ1 exp(−‖x − x'‖²/2σ1²) + γ2 exp(−‖x − x'‖²/2σ2²)`.
    GeneralizedRbf {
        gamma1: f64,
        sigma1: f64,
        gamma2: f64,
        sigma2: f64,
    },
}

impl ClassicalKernel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ClassicalKernel::Rbf { gamma } => gamma > 0.0,
            ClassicalKernel::GeneralizedRbf {
                gamma1,
                sigma1,
                gamma2,
                sigma2,
            } => gamma1 > 0.0 && sigma1 > 0.0 && gamma2 > 0.0 && sigma2 > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("kernel parameters must be positive: {self:?}")))
        }
    }

    fn eval_sq(&self, d2: f64) -> f64 {
        match *self {
            ClassicalKernel::Rbf { gamma } => (-gamma * d2).exp(),
            ClassicalKernel::GeneralizedRbf {
                gamma1,
                sigma1,
                gamma2,
                sigma2,
            } => {
                gamma1 * (-d2 / (2.0 * sigma1 * sigma1)).exp()
                    + gamma2 * (-d2 / (2.0 * sigma2 * sigma2)).exp()
            }
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.eval_sq(sq_dist(a, b))
    }

    pub fn matrix(&self, xs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        self.validate()?;
        check_rows(xs)?;
        let m = xs.len();
        let mut k = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = self.eval(&xs[i], &xs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    pub fn cross(&self, test: &[Vec<f64>], train: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        self.validate()?;
        check_rows(test)?;
        check_rows(train)?;
        Ok(DMatrix::from_fn(test.len(), train.len(), |i, j| {
            self.eval(&test[i], &train[j])
        }))
    }
}

pub fn rbf_matrix(xs: &[Vec<f64>], gamma: f64) -> Result<DMatrix<f64>> {
    ClassicalKernel::Rbf { gamma }.matrix(xs)
}

pub fn generalized_rbf_matrix(
    xs: &[Vec<f64>],
    gamma1: f64,
    sigma1: f64,
    gamma2: f64,
    sigma2: f64,
) -> Result<DMatrix<f64>> {
    ClassicalKernel::GeneralizedRbf {
        gamma1,
        sigma1,
        gamma2,
        sigma2,
    }
    .matrix(xs)
}

/// Stratified fold index per sample: each class is shuffled with `seed` and
/// dealt round-robin into `k` folds.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidConfig("need at least two folds".into()));
    }
    let mut folds = vec![0; labels.len()];
    for class in sorted_classes(labels) {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut seed::rng(seed, &[class as u64]));
        for (pos, &i) in members.iter().enumerate() {
            folds[i] = pos % k;
        }
    }
    Ok(folds)
}

/// Mean held-out accuracy of a multiclass SVC over stratified folds.
pub fn cross_val_accuracy(k: &DMatrix<f64>, labels: &[usize], c: f64, folds: &[usize]) -> Result<f64> {
    let n_folds = folds.iter().max().map_or(0, |f| f + 1);
    let mut total = 0.0;
    let mut used = 0;
    for f in 0..n_folds {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == f).collect();
        if test.is_empty() {
            continue;
        }
        let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        if sorted_classes(&train_labels).len() < 2 {
            continue;
        }
        let k_train = DMatrix::from_fn(train.len(), train.len(), |r, s| k[(train[r], train[s])]);
        let k_test = DMatrix::from_fn(test.len(), train.len(), |r, s| k[(test[r], train[s])]);
        let model = fit_multiclass(&k_train, &train_labels, c)?;
        let pred = model.predict(&k_test)?;
        let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        total += accuracy(&pred, &truth);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Dataset("no usable cross-validation fold".into()));
    }
    Ok(total / used as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult<P> {
    pub best: P,
    pub best_index: usize,
    pub scores: Vec<f64>,
}

/// Picks the grid point with the highest cross-validated accuracy; the first
/// one wins ties. `build` returns the full kernel and the regularization `C`
/// for a grid point.
pub fn grid_search<P, F>(grid: &[P], build: F, labels: &[usize], n_folds: usize, seed: u64) -> Result<GridResult<P>>
where
    P: Clone + Sync,
    F: Fn(&P) -> Result<(DMatrix<f64>, f64)> + Sync,
{
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty hyperparameter grid".into()));
    }
    let folds = stratified_folds(labels, n_folds, seed)?;
    let scores = grid
        .par_iter()
        .map(|p| {
            let (k, c) = build(p)?;
            cross_val_accuracy(&k, labels, c, &folds)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best_index = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best_index] {
            best_index = i;
        }
    }
    Ok(GridResult {
        best: grid[best_index].clone(),
        best_index,
        scores,
    })
}
