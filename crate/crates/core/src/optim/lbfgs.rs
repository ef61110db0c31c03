//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use crate::error::{Error, Result};

use super::line_search::{strong_wolfe, WolfeParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    /// Number of stored correction pairs.
    pub memory: usize,
    /// Convergence threshold on the max-abs gradient entry.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-8,
            max_iters: 500,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

impl LbfgsOptions {
    pub fn validate(&self) -> Result<()> {
        if self.memory < 1 {
            return Err(Error::config("optim.lbfgs.memory", "must be at least 1"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::config("optim.lbfgs.grad_tol", "must be positive"));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::config(
                "optim.lbfgs.c1",
                "need 0 < c1 < c2 < 1 for the strong Wolfe conditions",
            ));
        }
        Ok(())
    }
}

/// Smooth objective over a flat parameter vector.
pub trait Objective {
    /// Writes the gradient into `grad` and returns the value.
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub loss: f64,
    pub grad_max: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion: returns `-H g` for the implicit inverse Hessian `H`
/// with initial scaling `gamma = s'y / y'y` from the newest pair.
fn search_direction(grad: &[f64], history: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alpha = vec![0.0; history.len()];
    for (i, p) in history.iter().enumerate().rev() {
        let a = p.rho * dot(&p.s, &q);
        alpha[i] = a;
        q.iter_mut().zip(&p.y).for_each(|(qi, yi)| *qi -= a * yi);
    }
    let gamma = history
        .back()
        .map(|p| dot(&p.s, &p.y) / dot(&p.y, &p.y))
        .unwrap_or(1.0);
    q.iter_mut().for_each(|qi| *qi *= gamma);
    for (i, p) in history.iter().enumerate() {
        let b = p.rho * dot(&p.y, &q);
        q.iter_mut()
            .zip(&p.s)
            .for_each(|(qi, si)| *qi += (alpha[i] - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

/// Minimizes `objective` from `x0`. Hitting `max_iters` is reported through
/// `Minimum::converged`, not as an error.
pub fn minimize(objective: &impl Objective, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<Minimum> {
    opts.validate()?;
    let n = x0.len();
    let mut x = x0;
    let mut grad = vec![0.0; n];
    let mut loss = objective.evaluate(&x, &mut grad);
    if !loss.is_finite() {
        return Err(Error::LineSearch {
            iteration: 0,
            loss,
            grad_max: max_abs(&grad),
            reason: "objective is not finite at the starting point".into(),
        });
    }
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(opts.memory);
    let wolfe = WolfeParams {
        c1: opts.c1,
        c2: opts.c2,
        ..WolfeParams::default()
    };

    for iteration in 0..opts.max_iters {
        let grad_max = max_abs(&grad);
        if grad_max <= opts.grad_tol {
            return Ok(Minimum {
                x,
                loss,
                grad_max,
                iterations: iteration,
                converged: true,
            });
        }
        let mut direction = search_direction(&grad, &history);
        let mut dphi0 = dot(&grad, &direction);
        if !(dphi0 < 0.0) {
            history.clear();
            direction = grad.iter().map(|g| -g).collect();
            dphi0 = dot(&grad, &direction);
        }
        let t_init = if history.is_empty() {
            (1.0 / dot(&grad, &grad).sqrt()).min(1.0)
        } else {
            1.0
        };

        let mut trial = vec![0.0; n];
        let step = strong_wolfe(
            |t| {
                for ((xi, di), ti) in x.iter().zip(&direction).zip(trial.iter_mut()) {
                    *ti = xi + t * di;
                }
                let mut g = vec![0.0; n];
                let f = objective.evaluate(&trial, &mut g);
                let dphi = dot(&g, &direction);
                (f, g, dphi)
            },
            loss,
            dphi0,
            t_init,
            wolfe,
        )
        .map_err(|reason| Error::LineSearch {
            iteration,
            loss,
            grad_max,
            reason,
        })?;

        let s: Vec<f64> = direction.iter().map(|d| step.step * d).collect();
        let y: Vec<f64> = step.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        loss = step.loss;
        grad = step.grad;
        if sy > f64::EPSILON * dot(&y, &y) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back(Pair {
                s,
                y,
                rho: 1.0 / sy,
            });
        }
    }
    let grad_max = max_abs(&grad);
    Ok(Minimum {
        x,
        loss,
        grad_max,
        iterations: opts.max_iters,
        converged: grad_max <= opts.grad_tol,
    })
}
