//! Projected limited-memory BFGS for box-constrained minimisation.
//!
//! Variables at a bound whose gradient pushes outward are held fixed; the
//! two-loop recursion runs on the remaining free coordinates and the step is
//! projected back onto the box with an Armijo backtracking search. On
//! piecewise-linear objectives a failed line search at a kink is treated as
//! convergence.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LbfgsbConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the infinity norm of the projected gradient falls below this.
    pub tolerance: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Smallest accepted improvement in the objective.
    pub min_decrease: f64,
}

impl Default for LbfgsbConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 200,
            tolerance: 1e-6,
            armijo: 1e-4,
            max_backtracks: 30,
            min_decrease: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Termination {
    ProjectedGradient,
    LineSearch,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_evaluations: usize,
    pub termination: Termination,
    pub trace: Vec<TracePoint>,
}

pub fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, l), u) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*l, *u);
    }
}

/// `|| P(x - g) - x ||_inf`.
pub fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((x, g), (l, u))| ((x - g).clamp(*l, *u) - x).abs())
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x` with step `h`, one-sided where the box
/// cuts the stencil. The `2n` evaluations run in parallel.
pub fn central_difference<F>(f: &F, x: &[f64], h: f64, lower: &[f64], upper: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let n = x.len();
    let points: Vec<(usize, f64)> = (0..n)
        .flat_map(|i| {
            let hi = (x[i] + h).min(upper[i]);
            let lo = (x[i] - h).max(lower[i]);
            [(i, hi), (i, lo)]
        })
        .collect();
    let values: Vec<f64> = points
        .par_iter()
        .map(|(i, v)| {
            let mut p = x.to_vec();
            p[*i] = *v;
            f(&p)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((0..n)
        .map(|i| {
            let (hi, lo) = (points[2 * i].1, points[2 * i + 1].1);
            if hi > lo {
                (values[2 * i] - values[2 * i + 1]) / (hi - lo)
            } else {
                0.0
            }
        })
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f` over `[lower, upper]` from `x0`.
pub fn minimize<F, G>(
    f: F,
    grad: G,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    config: &LbfgsbConfig,
) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut fx = f(&x)?;
    let mut g = grad(&x)?;
    let mut evaluations = 1;
    let mut gradient_evaluations = 1;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut trace = Vec::new();
    let mut termination = Termination::MaxIter;
    let mut iterations = 0;

    for iter in 0..config.max_iter {
        let pg = projected_gradient_norm(&x, &g, lower, upper);
        trace.push(TracePoint {
            iter,
            objective: fx,
            grad_norm: pg,
        });
        if pg < config.tolerance {
            termination = Termination::ProjectedGradient;
            break;
        }
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let at_lower = x[i] <= lower[i] && g[i] > 0.0;
                let at_upper = x[i] >= upper[i] && g[i] < 0.0;
                !(at_lower || at_upper)
            })
            .collect();
        let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(&free).map(|(v, f)| if *f { *v } else { 0.0 }).collect() };

        // Two-loop recursion on the free subspace.
        let mut q = mask(&g);
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        let mut rho = vec![0.0; m];
        for k in (0..m).rev() {
            let s = mask(&s_hist[k]);
            let y = mask(&y_hist[k]);
            let sy = dot(&s, &y);
            if sy <= 1e-12 {
                continue;
            }
            rho[k] = 1.0 / sy;
            alpha[k] = rho[k] * dot(&s, &q);
            for (qi, yi) in q.iter_mut().zip(&y) {
                *qi -= alpha[k] * yi;
            }
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let (s, y) = (mask(s), mask(y));
            let yy = dot(&y, &y);
            let sy = dot(&s, &y);
            if yy > 0.0 && sy > 1e-12 {
                q.iter_mut().for_each(|v| *v *= sy / yy);
            }
        }
        for k in 0..m {
            if rho[k] == 0.0 {
                continue;
            }
            let s = mask(&s_hist[k]);
            let y = mask(&y_hist[k]);
            let beta = rho[k] * dot(&y, &q);
            for (qi, si) in q.iter_mut().zip(&s) {
                *qi += (alpha[k] - beta) * si;
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&d, &g) >= 0.0 {
            d = mask(&g).iter().map(|v| -v).collect();
            s_hist.clear();
            y_hist.clear();
        }

        // Projected Armijo backtracking.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..config.max_backtracks {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(x, d)| x + step * d).collect();
            project(&mut trial, lower, upper);
            let delta: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if delta.iter().all(|v| *v == 0.0) {
                break;
            }
            let ft = f(&trial)?;
            evaluations += 1;
            if ft <= fx + config.armijo * dot(&g, &delta) && ft < fx - config.min_decrease {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            termination = Termination::LineSearch;
            break;
        };
        let g_new = grad(&x_new)?;
        gradient_evaluations += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        // Backtracking does not enforce curvature; drop the history when the
        // new pair is unusable.
        if dot(&s, &y) > 1e-10 * dot(&y, &y).max(1e-300) {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > config.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        } else {
            s_hist.clear();
            y_hist.clear();
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        iterations = iter + 1;
    }
    if termination == Termination::MaxIter {
        trace.push(TracePoint {
            iter: iterations,
            objective: fx,
            grad_norm: projected_gradient_norm(&x, &g, lower, upper),
        });
    }
    Ok(OptimResult {
        x,
        fx,
        iterations,
        evaluations,
        gradient_evaluations,
        termination,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_with_active_bound() {
        // min (x-3)^2 + (y+1)^2 on [0,2] x [0,5] -> (2, 0)
        let f = |x: &[f64]| Ok((x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2));
        let g = |x: &[f64]| Ok(vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)]);
        let r = minimize(f, g, &[1.0, 4.0], &[0.0, 0.0], &[2.0, 5.0], &LbfgsbConfig::default()).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-8 && r.x[1].abs() < 1e-8, "{:?}", r.x);
        assert_eq!(r.termination, Termination::ProjectedGradient);
    }

    #[test]
    fn rosenbrock_interior() {
        let f = |x: &[f64]| Ok(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2));
        let g = |x: &[f64]| {
            Ok(vec![
                -400.0 * x[0] * (x[1] - x[0] * x[0]) - 2.0 * (1.0 - x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ])
        };
        let cfg = LbfgsbConfig {
            max_iter: 500,
            ..Default::default()
        };
        let r = minimize(f, g, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &cfg).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?} {:?} {}", r.x, r.termination, r.iterations);
    }

    #[test]
    fn trace_is_monotone() {
        let f = |x: &[f64]| Ok(x.iter().map(|v| (v - 0.3).abs()).sum::<f64>());
        let grad = |x: &[f64]| central_difference(&f, x, 1e-3, &[0.0; 3], &[1.0; 3]);
        let r = minimize(f, grad, &[1.0, 0.9, 0.0], &[0.0; 3], &[1.0; 3], &LbfgsbConfig::default()).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1].objective <= w[0].objective));
        assert!(r.fx < 0.01, "{}", r.fx);
    }

    #[test]
    fn finite_difference_of_linear_map_is_exact() {
        let c = [8.52, 4.46, 4.25, 9.70];
        let f = |x: &[f64]| Ok(x.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>());
        let g = central_difference(&f, &[5.0, 0.0, 10.0, 3.0], 1e-3, &[0.0; 4], &[10.0; 4]).unwrap();
        for (a, b) in g.iter().zip(&c) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
