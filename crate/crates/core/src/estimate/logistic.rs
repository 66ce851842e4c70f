//! Ridge-penalized multinomial and binary logistic regression.
//!
//! Both fitters minimize
//! `sum_r w_r * nll_r + (lambda / 2) * |W|^2`
//! where `w_r` is a row weight (duplicate rows are merged into one weighted
//! row before fitting) and the intercepts are not penalized.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{minimize, Objective, OptimOptions, OptimReport};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Logit assigned to absent classes by a constant (single-class) model.
const CONSTANT_LOGIT: f64 = 30.0;

fn row_key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Rows `(x, class)` for a multinomial model.
#[derive(Clone, Debug, PartialEq)]
pub struct MulticlassTask {
    pub dim: usize,
    pub n_classes: usize,
    pub features: Vec<f64>,
    pub targets: Vec<usize>,
    pub weights: Vec<f64>,
}

impl MulticlassTask {
    pub fn new(dim: usize, n_classes: usize) -> Self {
        Self { dim, n_classes, features: Vec::new(), targets: Vec::new(), weights: Vec::new() }
    }

    pub fn push(&mut self, x: &[f64], class: usize) {
        assert_eq!(x.len(), self.dim);
        assert!(class < self.n_classes);
        self.features.extend_from_slice(x);
        self.targets.push(class);
        self.weights.push(1.0);
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn x(&self, r: usize) -> &[f64] {
        &self.features[r * self.dim..(r + 1) * self.dim]
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut out = Self::new(self.dim, self.n_classes);
        for &r in rows {
            out.features.extend_from_slice(self.x(r));
            out.targets.push(self.targets[r]);
            out.weights.push(self.weights[r]);
        }
        out
    }

    /// Merges identical `(x, class)` rows into weighted rows, in a fixed
    /// order.
    pub fn compressed(&self) -> Self {
        let mut groups: BTreeMap<(Vec<u64>, usize), (usize, f64)> = BTreeMap::new();
        for r in 0..self.len() {
            let e = groups.entry((row_key(self.x(r)), self.targets[r])).or_insert((r, 0.0));
            e.1 += self.weights[r];
        }
        let mut out = Self::new(self.dim, self.n_classes);
        for ((_, class), (r, w)) in groups {
            out.features.extend_from_slice(self.x(r));
            out.targets.push(class);
            out.weights.push(w);
        }
        out
    }
}

/// Rows `(x, y)` with `y` in {0, 1} for a binary model.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryTask {
    pub dim: usize,
    pub features: Vec<f64>,
    pub targets: Vec<u8>,
    pub weights: Vec<f64>,
}

impl BinaryTask {
    pub fn new(dim: usize) -> Self {
        Self { dim, features: Vec::new(), targets: Vec::new(), weights: Vec::new() }
    }

    pub fn push(&mut self, x: &[f64], y: u8) {
        assert_eq!(x.len(), self.dim);
        assert!(y <= 1);
        self.features.extend_from_slice(x);
        self.targets.push(y);
        self.weights.push(1.0);
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn x(&self, r: usize) -> &[f64] {
        &self.features[r * self.dim..(r + 1) * self.dim]
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut out = Self::new(self.dim);
        for &r in rows {
            out.features.extend_from_slice(self.x(r));
            out.targets.push(self.targets[r]);
            out.weights.push(self.weights[r]);
        }
        out
    }

    pub fn compressed(&self) -> Self {
        let mut groups: BTreeMap<(Vec<u64>, u8), (usize, f64)> = BTreeMap::new();
        for r in 0..self.len() {
            let e = groups.entry((row_key(self.x(r)), self.targets[r])).or_insert((r, 0.0));
            e.1 += self.weights[r];
        }
        let mut out = Self::new(self.dim);
        for ((_, y), (r, w)) in groups {
            out.features.extend_from_slice(self.x(r));
            out.targets.push(y);
            out.weights.push(w);
        }
        out
    }
}

/// Softmax model over `n_classes` classes; weights are stored per class as
/// `dim` feature weights followed by the intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultinomialModel {
    pub n_classes: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
}

impl MultinomialModel {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        Self { n_classes, dim, weights: vec![0.0; n_classes * (dim + 1)] }
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let stride = self.dim + 1;
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * stride..(c + 1) * stride];
            *o = w[self.dim] + w[..self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes];
        self.logits_into(x, &mut p);
        softmax_in_place(&mut p);
        p
    }
}

/// Logistic model: `dim` feature weights followed by the intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryModel {
    pub dim: usize,
    pub weights: Vec<f64>,
}

impl BinaryModel {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, weights: vec![0.0; dim + 1] }
    }

    fn logit(&self, x: &[f64]) -> f64 {
        self.weights[self.dim] + self.weights[..self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `p(y = 1 | x)`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
    max + total.ln()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Penalized multinomial negative log-likelihood.
pub struct MultinomialObjective<'a> {
    pub task: &'a MulticlassTask,
    pub lambda: f64,
}

impl Objective for MultinomialObjective<'_> {
    fn n_params(&self) -> usize {
        self.task.n_classes * (self.task.dim + 1)
    }

    fn scale(&self) -> f64 {
        self.task.weights.iter().sum::<f64>().max(1.0)
    }

    fn eval(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let t = self.task;
        let (k, d) = (t.n_classes, t.dim);
        let stride = d + 1;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut z = vec![0.0; k];
        let mut loss = 0.0;
        for r in 0..t.len() {
            let x = t.x(r);
            for (c, zc) in z.iter_mut().enumerate() {
                let w = &params[c * stride..(c + 1) * stride];
                *zc = w[d] + w[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            let target_logit = z[t.targets[r]];
            let lse = softmax_in_place(&mut z);
            let wr = t.weights[r];
            loss += wr * (lse - target_logit);
            for (c, &pc) in z.iter().enumerate() {
                let resid = wr * (pc - f64::from(u8::from(c == t.targets[r])));
                let g = &mut grad[c * stride..(c + 1) * stride];
                g[..d].iter_mut().zip(x).for_each(|(gi, xi)| *gi += resid * xi);
                g[d] += resid;
            }
        }
        for c in 0..k {
            for j in 0..d {
                let w = params[c * stride + j];
                loss += 0.5 * self.lambda * w * w;
                grad[c * stride + j] += self.lambda * w;
            }
        }
        loss
    }
}

/// Penalized binary negative log-likelihood.
pub struct BinaryObjective<'a> {
    pub task: &'a BinaryTask,
    pub lambda: f64,
}

impl Objective for BinaryObjective<'_> {
    fn n_params(&self) -> usize {
        self.task.dim + 1
    }

    fn scale(&self) -> f64 {
        self.task.weights.iter().sum::<f64>().max(1.0)
    }

    fn eval(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let t = self.task;
        let d = t.dim;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for r in 0..t.len() {
            let x = t.x(r);
            let z = params[d] + params[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            let y = f64::from(t.targets[r]);
            let wr = t.weights[r];
            loss += wr * (softplus(z) - y * z);
            let resid = wr * (sigmoid(z) - y);
            grad[..d].iter_mut().zip(x).for_each(|(g, xi)| *g += resid * xi);
            grad[d] += resid;
        }
        for j in 0..d {
            loss += 0.5 * self.lambda * params[j] * params[j];
            grad[j] += self.lambda * params[j];
        }
        loss
    }
}

/// Unpenalized weighted NLL of a multinomial model on a task.
pub fn multinomial_nll(model: &MultinomialModel, task: &MulticlassTask) -> f64 {
    let mut z = vec![0.0; model.n_classes];
    (0..task.len())
        .map(|r| {
            model.logits_into(task.x(r), &mut z);
            let target = z[task.targets[r]];
            let lse = softmax_in_place(&mut z);
            task.weights[r] * (lse - target)
        })
        .sum()
}

/// Unpenalized weighted NLL of a binary model on a task.
pub fn binary_nll(model: &BinaryModel, task: &BinaryTask) -> f64 {
    (0..task.len())
        .map(|r| {
            let z = model.logit(task.x(r));
            task.weights[r] * (softplus(z) - f64::from(task.targets[r]) * z)
        })
        .sum()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("ridge strength {lambda} must be finite and >= 0")));
    }
    Ok(())
}

/// Fitted model plus optimizer diagnostics.
#[derive(Clone, Debug)]
pub struct Fit<M> {
    pub model: M,
    pub report: OptimReport,
}

pub fn fit_multinomial(task: &MulticlassTask, lambda: f64) -> Result<MultinomialModel> {
    fit_multinomial_with(task, lambda, &OptimOptions::default(), None).map(|f| f.model)
}

/// Fits a multinomial model; `warm` seeds the optimizer.
///
/// A task whose rows all carry one class yields a constant model that puts
/// probability `1 - O(e^-30)` on that class.
pub fn fit_multinomial_with(
    task: &MulticlassTask,
    lambda: f64,
    options: &OptimOptions,
    warm: Option<&MultinomialModel>,
) -> Result<Fit<MultinomialModel>> {
    check_lambda(lambda)?;
    if task.is_empty() {
        return Err(Error::Config("cannot fit a model on zero rows".into()));
    }
    let task = task.compressed();
    let mut model = MultinomialModel::zeros(task.n_classes, task.dim);
    if let Some(class) = single_class(&task.targets) {
        let stride = task.dim + 1;
        for c in 0..task.n_classes {
            model.weights[c * stride + task.dim] = if c == class { 0.0 } else { -CONSTANT_LOGIT };
        }
        return Ok(Fit { model, report: trivial_report() });
    }
    let start = warm
        .filter(|w| w.n_classes == task.n_classes && w.dim == task.dim)
        .map_or_else(|| model.weights.clone(), |w| w.weights.clone());
    let (weights, report) = minimize(&MultinomialObjective { task: &task, lambda }, start, options)?;
    model.weights = weights;
    Ok(Fit { model, report })
}

pub fn fit_binary(task: &BinaryTask, lambda: f64) -> Result<BinaryModel> {
    fit_binary_with(task, lambda, &OptimOptions::default(), None).map(|f| f.model)
}

/// Fits a binary model; a single-class task yields a constant model.
pub fn fit_binary_with(
    task: &BinaryTask,
    lambda: f64,
    options: &OptimOptions,
    warm: Option<&BinaryModel>,
) -> Result<Fit<BinaryModel>> {
    check_lambda(lambda)?;
    if task.is_empty() {
        return Err(Error::Config("cannot fit a model on zero rows".into()));
    }
    let task = task.compressed();
    let mut model = BinaryModel::zeros(task.dim);
    if let Some(y) = single_class(&task.targets) {
        model.weights[task.dim] = if y == 1 { CONSTANT_LOGIT } else { -CONSTANT_LOGIT };
        return Ok(Fit { model, report: trivial_report() });
    }
    let start = warm
        .filter(|w| w.dim == task.dim)
        .map_or_else(|| model.weights.clone(), |w| w.weights.clone());
    let (weights, report) = minimize(&BinaryObjective { task: &task, lambda }, start, options)?;
    model.weights = weights;
    Ok(Fit { model, report })
}

fn single_class<T: Copy + PartialEq>(targets: &[T]) -> Option<T> {
    let first = *targets.first()?;
    targets.iter().all(|&t| t == first).then_some(first)
}

fn trivial_report() -> OptimReport {
    OptimReport { iterations: 0, loss_history: Vec::new(), grad_norm: 0.0, converged: true }
}

/// Balanced fold labels for `n` rows from a seeded shuffle.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, &[0xf01d]));
    let mut out = vec![0; n];
    for (pos, &r) in idx.iter().enumerate() {
        out[r] = pos % folds.max(1);
    }
    out
}

/// Something that can be cross-validated over a ridge grid.
pub trait RidgeTask: Sized {
    type Model;
    fn n_rows(&self) -> usize;
    fn subset(&self, rows: &[usize]) -> Self;
    fn fit_warm(&self, lambda: f64, warm: Option<&Self::Model>) -> Result<Self::Model>;
    fn nll(model: &Self::Model, task: &Self) -> f64;
}

impl RidgeTask for MulticlassTask {
    type Model = MultinomialModel;

    fn n_rows(&self) -> usize {
        self.len()
    }

    fn subset(&self, rows: &[usize]) -> Self {
        MulticlassTask::subset(self, rows)
    }

    fn fit_warm(&self, lambda: f64, warm: Option<&MultinomialModel>) -> Result<MultinomialModel> {
        fit_multinomial_with(self, lambda, &OptimOptions::default(), warm).map(|f| f.model)
    }

    fn nll(model: &MultinomialModel, task: &Self) -> f64 {
        multinomial_nll(model, task)
    }
}

impl RidgeTask for BinaryTask {
    type Model = BinaryModel;

    fn n_rows(&self) -> usize {
        self.len()
    }

    fn subset(&self, rows: &[usize]) -> Self {
        BinaryTask::subset(self, rows)
    }

    fn fit_warm(&self, lambda: f64, warm: Option<&BinaryModel>) -> Result<BinaryModel> {
        fit_binary_with(self, lambda, &OptimOptions::default(), warm).map(|f| f.model)
    }

    fn nll(model: &BinaryModel, task: &Self) -> f64 {
        binary_nll(model, task)
    }
}

/// Held-out NLL per row for every grid value, in grid order.
pub fn cross_validated_nll<T: RidgeTask>(
    task: &T,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = task.n_rows();
    let folds = folds.min(n);
    if folds < 2 {
        return Ok(vec![0.0; grid.len()]);
    }
    let assignment = fold_assignment(n, folds, seed);
    // strongest penalty first so each fit warm-starts the next
    let mut by_strength: Vec<usize> = (0..grid.len()).collect();
    by_strength.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]).then(a.cmp(&b)));
    let mut totals = vec![0.0; grid.len()];
    for fold in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&r| assignment[r] != fold).collect();
        let held: Vec<usize> = (0..n).filter(|&r| assignment[r] == fold).collect();
        let (train, held) = (task.subset(&train), task.subset(&held));
        let mut warm: Option<T::Model> = None;
        for &g in &by_strength {
            let model = train.fit_warm(grid[g], warm.as_ref())?;
            totals[g] += T::nll(&model, &held);
            warm = Some(model);
        }
    }
    Ok(totals.into_iter().map(|t| t / n as f64).collect())
}

/// Grid value with the lowest mean held-out NLL; ties go to the smaller
/// value. Fold membership depends only on `seed` and the row index.
pub fn select_lambda<T: RidgeTask>(task: &T, grid: &[f64], folds: usize, seed: u64) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Config("empty ridge grid".into()));
    }
    for &l in grid {
        check_lambda(l)?;
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let scores = cross_validated_nll(task, grid, folds, seed)?;
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
    let mut best = order[0];
    for &g in &order[1..] {
        if scores[g] < scores[best] {
            best = g;
        }
    }
    Ok(grid[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_multiclass(seed: u64, n: usize, dim: usize, k: usize) -> MulticlassTask {
        let mut rng = stream(seed, &[]);
        let mut t = MulticlassTask::new(dim, k);
        for _ in 0..n {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            t.push(&x, rng.random_range(0..k));
        }
        t
    }

    #[test]
    fn probabilities_sum_to_one() {
        let task = random_multiclass(1, 40, 3, 4);
        let model = fit_multinomial(&task, 0.1).unwrap();
        for r in 0..task.len() {
            let p = model.predict_proba(task.x(r));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v > 0.0));
        }
        let extreme = model.predict_proba(&[1e3, -1e3, 1e3]);
        assert!((extreme.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_gives_constant_model() {
        let mut t = MulticlassTask::new(1, 3);
        for i in 0..10 {
            t.push(&[i as f64], 2);
        }
        let model = fit_multinomial(&t, 1.0).unwrap();
        assert!(model.predict_proba(&[5.0])[2] >= 1.0 - 1e-6);

        let mut b = BinaryTask::new(1);
        for i in 0..10 {
            b.push(&[i as f64], 1);
        }
        assert!(fit_binary(&b, 1.0).unwrap().predict(&[0.0]) >= 1.0 - 1e-6);
    }

    #[test]
    fn separable_binary_task_stays_finite_and_monotone() {
        let mut t = BinaryTask::new(1);
        for i in 0..20 {
            t.push(&[i as f64 - 9.5], u8::from(i >= 10));
        }
        let model = fit_binary(&t, 0.1).unwrap();
        assert!(model.weights.iter().all(|w| w.is_finite()));
        let preds: Vec<f64> = (-10..10).map(|v| model.predict(&[v as f64])).collect();
        assert!(preds.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn compression_preserves_objective() {
        let mut t = MulticlassTask::new(2, 3);
        for i in 0..30 {
            t.push(&[(i % 2) as f64, (i % 3) as f64], i % 3);
        }
        let c = t.compressed();
        assert!(c.len() < t.len());
        let params: Vec<f64> = (0..9).map(|i| 0.1 * i as f64 - 0.3).collect();
        let mut g1 = vec![0.0; 9];
        let mut g2 = vec![0.0; 9];
        let f1 = MultinomialObjective { task: &t, lambda: 0.5 }.eval(&params, &mut g1);
        let f2 = MultinomialObjective { task: &c, lambda: 0.5 }.eval(&params, &mut g2);
        assert!((f1 - f2).abs() < 1e-10);
        assert!(g1.iter().zip(&g2).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn negative_lambda_rejected() {
        let task = random_multiclass(2, 10, 1, 2);
        assert!(matches!(fit_multinomial(&task, -1.0), Err(Error::Config(_))));
        assert!(matches!(select_lambda(&task, &[], 3, 0), Err(Error::Config(_))));
    }

    #[test]
    fn single_value_grid() {
        let task = random_multiclass(3, 30, 2, 3);
        assert_eq!(select_lambda(&task, &[0.7], 3, 1).unwrap(), 0.7);
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let a = fold_assignment(10, 3, 5);
        assert_eq!(a, fold_assignment(10, 3, 5));
        assert_ne!(a, fold_assignment(10, 3, 6));
        for f in 0..3 {
            let c = a.iter().filter(|&&v| v == f).count();
            assert!((3..=4).contains(&c));
        }
    }
}
