//! Limited-memory quasi-Newton ascent with backtracking line search.
//! Internal to the estimator; written as a minimizer of the negated
//! objective to keep the update algebra in its textbook orientation.

pub(crate) struct MaxOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub memory: usize,
    pub armijo: f64,
    pub max_halvings: u32,
}

impl Default for MaxOptions {
    fn default() -> Self {
        MaxOptions {
            max_iter: 500,
            grad_tol: 1e-7,
            memory: 8,
            armijo: 1e-4,
            max_halvings: 40,
        }
    }
}

pub(crate) struct MaxOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximize `value_grad` (which returns the objective and its gradient)
/// starting from `x0`. Accepted steps never decrease the objective; the
/// iteration stops when the gradient max-norm drops below `grad_tol`, the
/// line search stalls, or `max_iter` is reached.
pub(crate) fn maximize<F>(mut value_grad: F, x0: Vec<f64>, opts: &MaxOptions) -> MaxOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    // minimize phi = -f
    let mut eval = |x: &[f64]| {
        let (f, g) = value_grad(x);
        (-f, g.into_iter().map(|v| -v).collect::<Vec<f64>>())
    };

    let dim = x0.len();
    let mut x = x0;
    let (mut fx, mut gx) = eval(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = inf_norm(&gx) < opts.grad_tol;

    while !converged && iterations < opts.max_iter {
        iterations += 1;

        // two-loop recursion for d = -H g
        let mut d = gx.clone();
        let mut alphas = vec![0.0; s_hist.len()];
        for i in (0..s_hist.len()).rev() {
            let a = rho_hist[i] * dot(&s_hist[i], &d);
            alphas[i] = a;
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= a * yj;
            }
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            for dj in &mut d {
                *dj *= gamma;
            }
        }
        for i in 0..s_hist.len() {
            let b = rho_hist[i] * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alphas[i] - b) * sj;
            }
        }
        for dj in &mut d {
            *dj = -*dj;
        }

        let mut slope = dot(&gx, &d);
        if slope.is_nan() || slope >= 0.0 || !slope.is_finite() {
            // not a descent direction: drop history, take steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = gx.iter().map(|g| -g).collect();
            slope = dot(&gx, &d);
            if slope.is_nan() || slope >= 0.0 {
                break;
            }
        }

        // backtracking with the sufficient-decrease condition; failed trials
        // shrink the step by quadratic interpolation (clamped to [0.1, 0.5]
        // of the previous trial), which escapes steep barrier walls much
        // faster than plain halving
        let mut step = 1.0f64;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = eval(&trial);
            if ft.is_finite() && ft <= fx + opts.armijo * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            let denom = 2.0 * (ft - fx - slope * step);
            let interp = if ft.is_finite() && denom > 0.0 {
                -slope * step * step / denom
            } else {
                0.5 * step
            };
            step = interp.clamp(0.1 * step, 0.5 * step);
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if !s_hist.is_empty() {
                // a stale metric can poison the direction; retry fresh
                s_hist.clear();
                y_hist.clear();
                rho_hist.clear();
                continue;
            }
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * s_norm * y_norm && sy.is_finite() {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
        }

        x = x_new;
        fx = f_new;
        gx = g_new;
        converged = inf_norm(&gx) < opts.grad_tol;
    }

    debug_assert_eq!(gx.len(), dim);
    MaxOutcome {
        grad_norm: inf_norm(&gx),
        value: -fx,
        x,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn maximizes_concave_quadratic() {
        // f(x) = -(x0-1)^2 - 2(x1+0.5)^2 + 3
        let out = maximize(
            |x: &[f64]| {
                let f = -(x[0] - 1.0).powi(2) - 2.0 * (x[1] + 0.5).powi(2) + 3.0;
                let g = vec![-2.0 * (x[0] - 1.0), -4.0 * (x[1] + 0.5)];
                (f, g)
            },
            vec![5.0, -4.0],
            &MaxOptions::default(),
        );
        assert!(out.converged);
        assert_abs_diff_eq!(out.x[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(out.x[1], -0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(out.value, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn handles_nonquadratic_objective() {
        // negated Rosenbrock, minimum at (1, 1)
        let out = maximize(
            |x: &[f64]| {
                let a = 1.0 - x[0];
                let b = x[1] - x[0] * x[0];
                let f = -(a * a + 100.0 * b * b);
                let g = vec![2.0 * a + 400.0 * x[0] * b, -200.0 * b];
                (f, g)
            },
            vec![-1.2, 1.0],
            &MaxOptions {
                max_iter: 2000,
                grad_tol: 1e-8,
                ..Default::default()
            },
        );
        assert!(out.converged, "grad norm {}", out.grad_norm);
        assert_abs_diff_eq!(out.x[0], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(out.x[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn ascent_is_monotone() {
        use std::cell::RefCell;
        let values = RefCell::new(Vec::new());
        let out = maximize(
            |x: &[f64]| {
                let f = -(x[0].powi(4)) + x[0];
                values.borrow_mut().push(f);
                (f, vec![-4.0 * x[0].powi(3) + 1.0])
            },
            vec![3.0],
            &MaxOptions::default(),
        );
        assert!(out.converged);
        // the accepted sequence is nondecreasing even if trial points dip
        let vals = values.borrow();
        let mut best = f64::MIN;
        let mut accepted = Vec::new();
        for &v in vals.iter() {
            if v >= best {
                best = v;
                accepted.push(v);
            }
        }
        assert!(accepted.windows(2).all(|w| w[1] >= w[0]));
        assert_abs_diff_eq!(out.x[0], 0.25f64.powf(1.0 / 3.0), epsilon = 1e-5);
    }

    #[test]
    fn immediate_convergence_at_stationary_start() {
        let out = maximize(
            |x: &[f64]| (-(x[0] * x[0]), vec![-2.0 * x[0]]),
            vec![0.0],
            &MaxOptions::default(),
        );
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.grad_norm, 0.0);
    }
}
