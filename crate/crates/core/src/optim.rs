//! Small unconstrained minimisers used by every fitting routine.
//!
//! Models map their constrained parameters onto `R^k` through smooth
//! transforms, so only unconstrained search is needed here. Objectives may
//! return non-finite values for infeasible points; those are treated as `+inf`.

/// Outcome of a single minimisation run.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Initial simplex edge, relative to `max(|x_i|, 1)`.
    pub initial_step: f64,
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_evals: 10_000, initial_step: 0.1, f_tol: 1e-10, x_tol: 1e-8 }
    }
}

#[inline]
fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Nelder–Mead simplex search (standard reflection/expansion/contraction/shrink coefficients).
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        sanitize(f(x))
    };
    if n == 0 {
        let value = eval(x0, &mut evals);
        return Minimum { x: vec![], value, evaluations: evals, converged: true };
    }

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        let step = opts.initial_step * v[i].abs().max(1.0);
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];
    let mut converged = false;

    while evals < opts.max_evals {
        // order: best first
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        values = idx.iter().map(|&i| values[i]).collect();

        let best = values[0];
        let worst = values[n];
        if best.is_finite() && worst.is_finite() {
            let spread = (worst - best).abs();
            let size = simplex[1..]
                .iter()
                .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0_f64, f64::max);
            if spread <= opts.f_tol * (1.0 + best.abs()) && size <= opts.x_tol {
                converged = true;
                break;
            }
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }

        for i in 0..n {
            trial[i] = centroid[i] + (centroid[i] - simplex[n][i]);
        }
        let fr = eval(&trial, &mut evals);
        if fr < values[0] {
            for i in 0..n {
                trial2[i] = centroid[i] + 2.0 * (centroid[i] - simplex[n][i]);
            }
            let fe = eval(&trial2, &mut evals);
            if fe < fr {
                simplex[n].copy_from_slice(&trial2);
                values[n] = fe;
            } else {
                simplex[n].copy_from_slice(&trial);
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n].copy_from_slice(&trial);
            values[n] = fr;
            continue;
        }
        // contraction
        let outside = fr < values[n];
        for i in 0..n {
            trial2[i] = if outside {
                centroid[i] + 0.5 * (trial[i] - centroid[i])
            } else {
                centroid[i] + 0.5 * (simplex[n][i] - centroid[i])
            };
        }
        let fc = eval(&trial2, &mut evals);
        if (outside && fc <= fr) || (!outside && fc < values[n]) {
            simplex[n].copy_from_slice(&trial2);
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for j in 1..=n {
            for i in 0..n {
                simplex[j][i] = simplex[0][i] + 0.5 * (simplex[j][i] - simplex[0][i]);
            }
            values[j] = eval(&simplex[j], &mut evals);
        }
    }

    let (bi, _) = values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("simplex is nonempty");
    Minimum { x: simplex[bi].clone(), value: values[bi], evaluations: evals, converged }
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iters: usize,
    /// Stop when the infinity norm of the gradient falls below this.
    pub g_tol: f64,
    /// Stop when an iteration improves the objective by less than this (relative).
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iters: 200, g_tol: 1e-8, f_tol: 1e-13 }
    }
}

fn numerical_gradient<F>(f: &mut F, x: &[f64], fx: f64, grad: &mut [f64], evals: &mut usize)
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = sanitize(f(&xp));
        xp[i] = x[i] - h;
        let fm = sanitize(f(&xp));
        xp[i] = x[i];
        *evals += 2;
        grad[i] = if fp.is_finite() && fm.is_finite() {
            (fp - fm) / (2.0 * h)
        } else if fp.is_finite() {
            (fp - fx) / h
        } else if fm.is_finite() {
            (fx - fm) / h
        } else {
            0.0
        };
    }
}

/// BFGS with central-difference gradients and a backtracking Armijo line search.
pub fn bfgs<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let mut fg = |x: &[f64], g: Option<&mut [f64]>| -> (f64, usize) {
        let fx = sanitize(f(x));
        match g {
            None => (fx, 1),
            Some(g) => {
                let mut evals = 1;
                numerical_gradient(&mut f, x, fx, g, &mut evals);
                (fx, evals)
            }
        }
    };
    bfgs_core(&mut fg, x0, opts)
}

/// BFGS with a caller-supplied gradient. `fg(x, Some(g))` must fill `g`.
pub fn bfgs_analytic<F>(mut fg: F, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64], Option<&mut [f64]>) -> f64,
{
    let mut wrapped = |x: &[f64], g: Option<&mut [f64]>| (sanitize(fg(x, g)), 1);
    bfgs_core(&mut wrapped, x0, opts)
}

fn bfgs_core<F>(fg: &mut F, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64], Option<&mut [f64]>) -> (f64, usize),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let (mut fx, mut evals) = fg(&x, Some(&mut g));
    if !fx.is_finite() || n == 0 {
        return Minimum { x, value: fx, evaluations: evals, converged: n == 0 };
    }

    // inverse Hessian approximation, row-major
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    let mut dir = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut converged = false;

    for _ in 0..opts.max_iters {
        if g.iter().fold(0.0_f64, |m, v| m.max(v.abs())) < opts.g_tol {
            converged = true;
            break;
        }
        for i in 0..n {
            dir[i] = -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>();
        }
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if slope >= 0.0 {
            // not a descent direction: reset to steepest descent
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
                dir[i] = -g[i];
            }
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }

        let mut step = 1.0;
        let mut f_new = f64::INFINITY;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            let (v, e) = fg(&x_new, None);
            f_new = v;
            evals += e;
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            converged = g.iter().fold(0.0_f64, |m, v| m.max(v.abs())) < opts.g_tol.sqrt();
            break;
        }
        let (_, e) = fg(&x_new, Some(&mut g_new));
        evals += e;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * (1.0 + fx.abs()) * 1e-4 {
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }

        let improvement = fx - f_new;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
        if improvement.abs() <= opts.f_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }

    Minimum { x, value: fx, evaluations: evals, converged }
}
