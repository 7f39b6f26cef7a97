//! Damped Newton ascent for smooth concave objectives.

use nalgebra::{DMatrix, DVector};

/// A smooth concave function to maximize.
pub trait ConcaveObjective {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Value, gradient, and the negated Hessian (positive semi-definite for a
    /// concave objective).
    fn value_grad_curvature(&self, x: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub max_iterations: usize,
    /// Stop once the gradient max-norm is at or below this.
    pub gradient_tolerance: f64,
    /// Largest allowed change of any coordinate in a single step.
    pub max_step: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            max_iterations: 1000,
            gradient_tolerance: 1e-8,
            max_step: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_max_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solves `(curvature + damping * I) d = grad`, raising the damping until the
/// Cholesky factorization succeeds.
fn newton_direction(curvature: &DMatrix<f64>, grad: &[f64]) -> Vec<f64> {
    let n = grad.len();
    let g = DVector::from_column_slice(grad);
    let scale = (0..n).map(|i| curvature[(i, i)].abs()).fold(1e-300, f64::max);
    let mut damping = 0.0;
    for _ in 0..40 {
        let mut m = curvature.clone();
        for i in 0..n {
            m[(i, i)] += damping;
        }
        if let Some(chol) = m.cholesky() {
            let d = chol.solve(&g);
            if d.iter().all(|v| v.is_finite()) {
                return d.iter().copied().collect();
            }
        }
        damping = if damping == 0.0 { 1e-12 * scale } else { damping * 10.0 };
    }
    // Curvature is unusable; fall back to the gradient direction.
    grad.to_vec()
}

/// Maximizes `obj` from `x0` with Newton steps and Armijo backtracking.
pub fn maximize<O: ConcaveObjective + ?Sized>(obj: &O, x0: Vec<f64>, cfg: &NewtonConfig) -> NewtonOutcome {
    let mut x = x0;
    let (mut f, mut g, mut h) = obj.value_grad_curvature(&x);
    let mut trace = vec![f];
    let mut iterations = 0;

    while iterations < cfg.max_iterations && max_norm(&g) > cfg.gradient_tolerance {
        let mut d = newton_direction(&h, &g);
        let step_norm = max_norm(&d);
        if step_norm > cfg.max_step {
            d.iter_mut().for_each(|v| *v *= cfg.max_step / step_norm);
        }
        let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        // Increases below this are indistinguishable from rounding in `f`.
        let noise = 1e-13 * (1.0 + f.abs());

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let fc = obj.value(&cand);
            if fc.is_finite() && (fc >= f + 1e-4 * t * slope || (t == 1.0 && slope <= noise && fc >= f - noise)) {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let Some(next) = accepted else { break };
        x = next;
        (f, g, h) = obj.value_grad_curvature(&x);
        trace.push(f);
        iterations += 1;
    }

    let gradient_max_norm = max_norm(&g);
    NewtonOutcome {
        x,
        value: f,
        gradient_max_norm,
        iterations,
        converged: gradient_max_norm <= cfg.gradient_tolerance,
        trace,
    }
}
