//! Deterministic full-batch minimizer: limited-memory quasi-Newton
//! directions with Armijo backtracking. Every accepted step lowers the
//! objective, so the recorded loss sequence is non-increasing.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// A smooth objective. `eval` writes the gradient and returns the value.
pub trait Objective {
    fn n_params(&self) -> usize;
    fn eval(&self, params: &[f64], grad: &mut [f64]) -> f64;

    /// Divisor applied to the gradient norm before the convergence test,
    /// e.g. the number of rows behind a summed loss.
    fn scale(&self) -> f64 {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Stop once the gradient's Euclidean norm, divided by the objective's
    /// scale, is at or below this.
    pub grad_tol: f64,
    pub memory: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self { max_iter: 1000, grad_tol: 1e-6, memory: 10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimReport {
    pub iterations: usize,
    /// Objective value at the start and after every accepted step.
    pub loss_history: Vec<f64>,
    pub grad_norm: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn minimize<O: Objective + ?Sized>(
    obj: &O,
    start: Vec<f64>,
    options: &OptimOptions,
) -> Result<(Vec<f64>, OptimReport)> {
    const ARMIJO: f64 = 1e-4;
    const MAX_HALVINGS: usize = 60;

    let n = obj.n_params();
    assert_eq!(start.len(), n);
    let mut x = start;
    let mut grad = vec![0.0; n];
    let mut f = obj.eval(&x, &mut grad);
    if !f.is_finite() {
        return Err(Error::Numerical(format!("objective is {f} at the starting point")));
    }
    let mut history = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(options.memory);
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut alpha = vec![0.0; options.memory];
    let mut iterations = 0;
    let tol = options.grad_tol * obj.scale();
    let mut converged = norm(&grad) <= tol;

    while !converged && iterations < options.max_iter {
        // two-loop recursion
        dir.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g);
        for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
            alpha[k] = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= alpha[k] * yi);
        }
        let scale = pairs.back().map_or(1.0 / norm(&grad).max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        dir.iter_mut().for_each(|d| *d *= scale);
        for (k, (s, y, rho)) in pairs.iter().enumerate() {
            let beta = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (alpha[k] - beta) * si);
        }
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g / norm(&grad).max(1.0));
            slope = dot(&grad, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            trial.iter_mut().zip(&x).zip(&dir).for_each(|((t, xi), d)| *t = xi + step * d);
            let ft = obj.eval(&trial, &mut trial_grad);
            if ft.is_finite() && ft <= f + ARMIJO * step * slope && ft <= f {
                accepted = Some(ft);
                break;
            }
            step *= 0.5;
        }
        let Some(ft) = accepted else {
            // no decrease representable at this precision
            break;
        };
        iterations += 1;

        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if pairs.len() == options.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        f = ft;
        history.push(f);
        converged = norm(&grad) <= tol;
    }

    let grad_norm = norm(&grad);
    Ok((x, OptimReport { iterations, loss_history: history, grad_norm, converged }))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn n_params(&self) -> usize {
            2
        }

        fn eval(&self, p: &[f64], g: &mut [f64]) -> f64 {
            let (a, b) = (p[0], p[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        }
    }

    struct Quadratic(Vec<f64>);

    impl Objective for Quadratic {
        fn n_params(&self) -> usize {
            self.0.len()
        }

        fn eval(&self, p: &[f64], g: &mut [f64]) -> f64 {
            let mut f = 0.0;
            for (i, (&x, &c)) in p.iter().zip(&self.0).enumerate() {
                let w = (i + 1) as f64;
                g[i] = w * (x - c);
                f += 0.5 * w * (x - c) * (x - c);
            }
            f
        }
    }

    #[test]
    fn solves_quadratic() {
        let target = vec![1.0, -2.0, 3.0, 0.5];
        let (x, report) = minimize(&Quadratic(target.clone()), vec![0.0; 4], &OptimOptions::default()).unwrap();
        assert!(report.converged);
        for (a, b) in x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn solves_rosenbrock_monotonically() {
        let (x, report) = minimize(&Rosenbrock, vec![-1.2, 1.0], &OptimOptions::default()).unwrap();
        assert!(report.converged, "{report:?}");
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5);
        assert!(report.loss_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn respects_iteration_cap() {
        let opts = OptimOptions { max_iter: 3, ..Default::default() };
        let (_, report) = minimize(&Rosenbrock, vec![-1.2, 1.0], &opts).unwrap();
        assert_eq!(report.iterations, 3);
        assert!(!report.converged);
    }
}
