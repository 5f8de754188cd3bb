//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsConfig {
    /// Number of stored curvature pairs.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once `‖∇f‖ ≤ grad_tol · max(1, ‖x‖)`.
    pub grad_tol: f64,
    /// Stop once an accepted step lowers `f` by less than
    /// `progress_tol · max(1, |f|)`. Zero disables the test.
    pub progress_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 2000,
            grad_tol: 1e-9,
            progress_tol: 0.0,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    ProgressTolerance,
    IterationLimit,
    LineSearchFailure,
    NonFiniteStart,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

impl LbfgsResult {
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::GradientTolerance | Termination::ProgressTolerance
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// One point along the search ray.
#[derive(Clone)]
struct Probe {
    alpha: f64,
    f: f64,
    slope: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

struct Ray<'a, F> {
    f: &'a mut F,
    x0: &'a [f64],
    d: &'a [f64],
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Ray<'_, F> {
    fn probe(&mut self, alpha: f64) -> Probe {
        let x: Vec<f64> = self.x0.iter().zip(self.d).map(|(a, b)| a + alpha * b).collect();
        let mut g = vec![0.0; x.len()];
        let f = (self.f)(&x, &mut g);
        self.evals += 1;
        let (f, slope) = if f.is_finite() && g.iter().all(|v| v.is_finite()) {
            (f, dot(&g, self.d))
        } else {
            (f64::INFINITY, f64::NAN)
        };
        Probe { alpha, f, slope, x, g }
    }
}

/// Minimizer of the cubic interpolating `(a, fa, da)` and `(b, fb, db)`,
/// safeguarded into the interior of the bracket.
fn cubic_step(lo: &Probe, hi: &Probe) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let width = b - a;
    let fallback = a + 0.5 * width;
    if !hi.f.is_finite() || !hi.slope.is_finite() {
        return fallback;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return fallback;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (right - left);
    if !t.is_finite() || t < left + margin || t > right - margin {
        fallback
    } else {
        t
    }
}

enum Search {
    Wolfe(Probe),
    /// Sufficient decrease only; the curvature pair may be unusable.
    Decrease(Probe),
    Failed,
}

fn strong_wolfe<F: FnMut(&[f64], &mut [f64]) -> f64>(
    ray: &mut Ray<'_, F>,
    f0: f64,
    slope0: f64,
    alpha0: f64,
    cfg: &LbfgsConfig,
) -> Search {
    let armijo = |p: &Probe| p.f <= f0 + cfg.c1 * p.alpha * slope0;
    let curvature = |p: &Probe| p.slope.abs() <= -cfg.c2 * slope0;
    let origin = Probe {
        alpha: 0.0,
        f: f0,
        slope: slope0,
        x: ray.x0.to_vec(),
        g: Vec::new(),
    };
    let mut prev = origin.clone();
    let mut alpha = alpha0;
    let mut budget = cfg.max_line_search;
    let (mut lo, mut hi);
    loop {
        if budget == 0 {
            return best_decrease(prev, f0);
        }
        budget -= 1;
        let cur = ray.probe(alpha);
        if !armijo(&cur) || (prev.alpha > 0.0 && cur.f >= prev.f) {
            lo = prev;
            hi = cur;
            break;
        }
        if curvature(&cur) {
            return Search::Wolfe(cur);
        }
        if cur.slope >= 0.0 {
            lo = cur;
            hi = prev;
            break;
        }
        alpha = 2.0 * cur.alpha;
        prev = cur;
    }
    while budget > 0 {
        budget -= 1;
        let a = cubic_step(&lo, &hi);
        if (a - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1e-300) {
            break;
        }
        let cur = ray.probe(a);
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Search::Wolfe(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    best_decrease(lo, f0)
}

fn best_decrease(p: Probe, f0: f64) -> Search {
    if p.alpha > 0.0 && p.f < f0 {
        Search::Decrease(p)
    } else {
        Search::Failed
    }
}

/// Minimizes `f` from `x0`. The callable writes the gradient into its second
/// argument and returns the objective value.
pub fn lbfgs_minimize<F>(mut f: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; dim];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    let mut history = vec![fx];
    let done = |termination, x, value, g: &[f64], iterations, evaluations, history| LbfgsResult {
        x,
        value,
        grad_norm: norm(g),
        iterations,
        evaluations,
        termination,
        history,
    };
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return done(Termination::NonFiniteStart, x, fx, &g, 0, evaluations, history);
    }
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut alphas = vec![0.0; cfg.memory];
    for iter in 0..cfg.max_iters {
        if norm(&g) <= cfg.grad_tol * norm(&x).max(1.0) {
            return done(Termination::GradientTolerance, x, fx, &g, iter, evaluations, history);
        }
        // Two-loop recursion for d = −H∇f.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        for (i, (s, y, rho)) in pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alphas[i] = a;
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
        }
        if let Some((s, y, _)) = pairs.back() {
            let scale = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= scale);
        }
        for (i, (s, y, rho)) in pairs.iter().enumerate() {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (alphas[i] - b) * si);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let alpha0 = if pairs.is_empty() { (1.0 / norm(&d)).min(1.0) } else { 1.0 };

        let mut ray = Ray { f: &mut f, x0: &x, d: &d, evals: 0 };
        let outcome = strong_wolfe(&mut ray, fx, slope, alpha0, cfg);
        evaluations += ray.evals;
        let step = match outcome {
            Search::Wolfe(p) | Search::Decrease(p) => p,
            Search::Failed => {
                return done(Termination::LineSearchFailure, x, fx, &g, iter, evaluations, history);
            }
        };
        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - step.f;
        x = step.x;
        g = step.g;
        fx = step.f;
        history.push(fx);
        if cfg.progress_tol > 0.0 && decrease <= cfg.progress_tol * fx.abs().max(1.0) {
            return done(Termination::ProgressTolerance, x, fx, &g, iter + 1, evaluations, history);
        }
    }
    let termination = if norm(&g) <= cfg.grad_tol * norm(&x).max(1.0) {
        Termination::GradientTolerance
    } else {
        Termination::IterationLimit
    };
    done(termination, x, fx, &g, cfg.max_iters, evaluations, history)
}
