//! Forecast combination: simple average, median, the joint AL-score convex
//! combination and quantile LASSO regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::backtest::{al_score_point, quantile_loss_point};
use crate::distributions::TailEstimate;
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};

pub fn combine_simple_average(forecasts: &[f64]) -> Result<f64> {
    if forecasts.is_empty() {
        return Err(Error::InvalidInput("nothing to combine".into()));
    }
    Ok(forecasts.iter().sum::<f64>() / forecasts.len() as f64)
}

/// Middle order statistic; the midpoint of the two middle values for even counts.
pub fn combine_median(forecasts: &[f64]) -> Result<f64> {
    if forecasts.is_empty() {
        return Err(Error::InvalidInput("nothing to combine".into()));
    }
    let mut v = forecasts.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Convex weights for the VaR (`beta`) and ES (`gamma`) columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationWeights {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub window_id: usize,
}

impl CombinationWeights {
    pub fn equal(n: usize, h: usize, window_id: usize) -> Self {
        CombinationWeights { beta: vec![1.0 / n as f64; n], gamma: vec![1.0 / h as f64; h], window_id }
    }

    /// Simplex membership within `tol`.
    pub fn on_simplex(&self, tol: f64) -> bool {
        let ok = |w: &[f64]| w.iter().all(|&x| x >= -tol) && (w.iter().sum::<f64>() - 1.0).abs() <= tol;
        ok(&self.beta) && ok(&self.gamma)
    }
}

/// Row-major `time × models` panel stored column by column.
struct Columns {
    cols: Vec<Vec<f64>>,
    rows: usize,
}

impl Columns {
    fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<Self> {
        let t = rows.len();
        let k = rows.first().map_or(0, |r| r.len());
        if t == 0 || k == 0 {
            return Err(Error::InvalidInput(format!("{what} panel is empty")));
        }
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidInput(format!("{what} panel rows have different lengths")));
        }
        let cols = (0..k).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Ok(Columns { cols, rows: t })
    }

    fn combine_into(&self, w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (c, &wj) in self.cols.iter().zip(w) {
            if wj != 0.0 {
                for (o, &x) in out.iter_mut().zip(c) {
                    *o += wj * x;
                }
            }
        }
    }
}

/// Maps unconstrained coordinates to the simplex by squared normalisation,
/// which reaches every vertex exactly.
fn to_simplex(u: &[f64]) -> Vec<f64> {
    let s: f64 = u.iter().map(|x| x * x).sum();
    if !(s > 0.0) {
        return vec![1.0 / u.len() as f64; u.len()];
    }
    u.iter().map(|x| x * x / s).collect()
}

fn from_simplex(w: &[f64]) -> Vec<f64> {
    w.iter().map(|x| x.max(0.0).sqrt()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFit {
    pub weights: CombinationWeights,
    /// Mean AL log score of the combined pair on the training window.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct JointOptions {
    pub alpha: f64,
    /// Simplex-search starts beyond the exact candidates (equal weight and one-hot points).
    pub multi_starts: usize,
    pub max_evals: usize,
    pub window_id: usize,
    /// Start the search here instead of at the best candidates.
    pub warm_start: Option<CombinationWeights>,
}

impl JointOptions {
    pub fn new(alpha: f64) -> Self {
        JointOptions { alpha, multi_starts: 5, max_evals: 10_000, window_id: 0, warm_start: None }
    }
}

/// Penalty applied per unit of the largest crossing violation.
pub const CROSSING_PENALTY: f64 = 1e6;

/// Estimates convex VaR and ES weights minimising the mean AL log score, with
/// the combined ES kept at or below the combined VaR at every training row.
///
/// The search always considers the equal-weight and every single-model point,
/// so the returned objective never exceeds theirs.
pub fn fit_joint_combination(
    panel_var: &[Vec<f64>],
    panel_es: &[Vec<f64>],
    realized: &[f64],
    opts: &JointOptions,
) -> Result<JointFit> {
    let alpha = opts.alpha;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let v = Columns::from_rows(panel_var, "VaR")?;
    let e = Columns::from_rows(panel_es, "ES")?;
    if v.rows != realized.len() || e.rows != realized.len() {
        return Err(Error::InvalidInput(format!(
            "panels have {} and {} rows but there are {} realized returns",
            v.rows,
            e.rows,
            realized.len()
        )));
    }
    if let Some((j, t)) =
        e.cols.iter().enumerate().find_map(|(j, c)| c.iter().position(|&x| !(x < 0.0)).map(|t| (j, t)))
    {
        return Err(Error::Domain(format!("ES column {j} is not negative at row {t}")));
    }
    let (n, h, t) = (v.cols.len(), e.cols.len(), realized.len());

    let mut cv = vec![0.0; t];
    let mut ce = vec![0.0; t];
    // (score, max crossing violation) at given weights
    let mut evaluate = |beta: &[f64], gamma: &[f64]| -> (f64, f64) {
        v.combine_into(beta, &mut cv);
        e.combine_into(gamma, &mut ce);
        let mut score = 0.0;
        let mut viol = 0.0_f64;
        for i in 0..t {
            if !(ce[i] < 0.0) {
                return (f64::INFINITY, f64::INFINITY);
            }
            viol = viol.max(ce[i] - cv[i]);
            score += al_score_point(realized[i], cv[i], ce[i], alpha);
        }
        (score / t as f64, viol)
    };

    // exact candidates
    let mut candidates: Vec<(Vec<f64>, Vec<f64>)> = vec![(vec![1.0 / n as f64; n], vec![1.0 / h as f64; h])];
    let one_hot = |k: usize, i: usize| {
        let mut w = vec![0.0; k];
        w[i] = 1.0;
        w
    };
    if n == h {
        for i in 0..n {
            candidates.push((one_hot(n, i), one_hot(h, i)));
        }
    } else {
        for i in 0..n {
            for j in 0..h {
                candidates.push((one_hot(n, i), one_hot(h, j)));
            }
        }
    }
    if let Some(w) = &opts.warm_start {
        if w.beta.len() == n && w.gamma.len() == h {
            candidates.push((w.beta.clone(), w.gamma.clone()));
        }
    }

    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let consider =
        |score: f64, viol: f64, beta: Vec<f64>, gamma: Vec<f64>, best: &mut Option<(f64, Vec<f64>, Vec<f64>)>| {
            if score.is_finite() && viol <= 0.0 && best.as_ref().is_none_or(|b| score < b.0) {
                *best = Some((score, beta, gamma));
            }
        };
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for (k, (b, g)) in candidates.iter().enumerate() {
        let (s, viol) = evaluate(b, g);
        consider(s, viol, b.clone(), g.clone(), &mut best);
        if s.is_finite() && viol <= 0.0 {
            scored.push((s, k));
        }
    }
    if scored.is_empty() {
        return Err(Error::Infeasible("no convex combination keeps ES below VaR on the window".into()));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut objective = |x: &[f64]| {
        let beta = to_simplex(&x[..n]);
        let gamma = to_simplex(&x[n..]);
        let (s, viol) = evaluate(&beta, &gamma);
        if viol > 0.0 {
            s + CROSSING_PENALTY * viol
        } else {
            s
        }
    };
    let pack = |b: &[f64], g: &[f64]| -> Vec<f64> {
        let mut x = from_simplex(b);
        x.extend(from_simplex(g));
        // keep every coordinate movable
        for v in x.iter_mut() {
            if *v == 0.0 {
                *v = 1e-3;
            }
        }
        x
    };
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = opts.warm_start.as_ref().filter(|w| w.beta.len() == n && w.gamma.len() == h) {
        starts.push(pack(&w.beta, &w.gamma));
    } else {
        starts.push(pack(&candidates[0].0, &candidates[0].1));
        for &(_, k) in scored.iter().take(opts.multi_starts.saturating_sub(1)) {
            if k != 0 {
                starts.push(pack(&candidates[k].0, &candidates[k].1));
            }
        }
    }
    let nm = NelderMeadOptions { max_evals: opts.max_evals, initial_step: 0.2, f_tol: 1e-10, x_tol: 1e-7 };
    let mut found = Vec::new();
    for s in &starts {
        found.push(nelder_mead(&mut objective, s, &nm));
    }
    for m in found {
        let beta = to_simplex(&m.x[..n]);
        let gamma = to_simplex(&m.x[n..]);
        let (s, viol) = evaluate(&beta, &gamma);
        consider(s, viol, beta, gamma, &mut best);
    }
    let (objective, beta, gamma) = best.ok_or_else(|| Error::Internal("no feasible point retained".into()))?;
    Ok(JointFit { weights: CombinationWeights { beta, gamma, window_id: opts.window_id }, objective })
}

/// Applies combination weights to one row of forecasts. The flag reports
/// that the combined ES crossed the combined VaR and was moved just below it.
pub fn combined_forecast(
    weights: &CombinationWeights,
    var_row: &[f64],
    es_row: &[f64],
    alpha: f64,
) -> Result<(TailEstimate, bool)> {
    if var_row.len() != weights.beta.len() || es_row.len() != weights.gamma.len() {
        return Err(Error::InvalidInput(format!(
            "weights cover {} VaR and {} ES columns, row has {} and {}",
            weights.beta.len(),
            weights.gamma.len(),
            var_row.len(),
            es_row.len()
        )));
    }
    let var: f64 = weights.beta.iter().zip(var_row).map(|(w, x)| w * x).sum();
    let mut es: f64 = weights.gamma.iter().zip(es_row).map(|(w, x)| w * x).sum();
    let clamped = es >= var;
    if clamped {
        es = var - 1e-8;
    }
    Ok((TailEstimate { var, es, alpha }, clamped))
}

/// Fitted quantile LASSO combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoComboSpec {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub tau: f64,
}

impl LassoComboSpec {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Solves `min c′x  s.t.  Ax = b, 0 ≤ x ≤ u` by a primal-dual interior-point
/// method with Mehrotra's predictor-corrector, starting from the interior
/// point `x0` (which must satisfy `Ax0 = b`). Returns the equality multipliers.
fn bounded_lp(a: &DMatrix<f64>, c: &DVector<f64>, u: &DVector<f64>, x0: &DVector<f64>) -> Result<DVector<f64>> {
    const STEP: f64 = 0.99995;
    const TOL: f64 = 1e-10;
    let n = a.ncols();
    let p = a.nrows();
    let b = a * x0;
    let mut x = x0.clone();
    let mut s = u - &x;

    let solve = |m: DMatrix<f64>, rhs: &DVector<f64>| -> Option<DVector<f64>> {
        let ridge = 1e-13 * m.diagonal().max().max(1e-300);
        let m = m + DMatrix::identity(p, p) * ridge;
        match m.clone().cholesky() {
            Some(ch) => Some(ch.solve(rhs)),
            None => m.lu().solve(rhs),
        }
    };

    let aat = a * a.transpose();
    let mut y = solve(aat, &(a * c)).ok_or_else(|| Error::fitting("singular design in quantile regression", None))?;
    let r = c - a.transpose() * &y;
    let delta = 0.1 * r.iter().map(|v| v.abs()).sum::<f64>() / n as f64 + 1e-3;
    let mut z = r.map(|v| v.max(0.0) + delta);
    let mut w = r.map(|v| (-v).max(0.0) + delta);

    let max_step = |v: &DVector<f64>, dv: &DVector<f64>| -> f64 {
        let mut step = f64::INFINITY;
        for i in 0..v.len() {
            if dv[i] < 0.0 {
                step = step.min(-v[i] / dv[i]);
            }
        }
        step
    };

    for _ in 0..200 {
        let gap = x.dot(&z) + s.dot(&w);
        let r_p = &b - a * &x;
        let r_d = c - a.transpose() * &y - &z + &w;
        let scale = 1.0 + c.dot(&x).abs();
        if gap <= TOL * scale && r_p.amax() <= 1e-9 * (1.0 + b.amax()) && r_d.amax() <= 1e-9 * (1.0 + c.amax()) {
            return Ok(y);
        }
        let mu = gap / (2 * n) as f64;

        let d = DVector::from_fn(n, |i, _| 1.0 / (z[i] / x[i] + w[i] / s[i]));
        let mut adat = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let col = a.column(i);
            for r1 in 0..p {
                let f = d[i] * col[r1];
                for r2 in r1..p {
                    adat[(r1, r2)] += f * col[r2];
                }
            }
        }
        for r1 in 0..p {
            for r2 in 0..r1 {
                adat[(r1, r2)] = adat[(r2, r1)];
            }
        }
        let ch = {
            let ridge = 1e-13 * adat.diagonal().max().max(1e-300);
            (adat.clone() + DMatrix::identity(p, p) * ridge).cholesky()
        };
        let direction = |r_xz: &DVector<f64>,
                         r_sw: &DVector<f64>|
         -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            let q = DVector::from_fn(n, |i, _| r_d[i] - r_xz[i] / x[i] + r_sw[i] / s[i]);
            let rhs = &r_p + a * d.component_mul(&q);
            let dy = match &ch {
                Some(ch) => ch.solve(&rhs),
                None => adat.clone().lu().solve(&rhs)?,
            };
            let dx = d.component_mul(&(a.transpose() * &dy - &q));
            let dz = DVector::from_fn(n, |i, _| (r_xz[i] - z[i] * dx[i]) / x[i]);
            let dw = DVector::from_fn(n, |i, _| (r_sw[i] + w[i] * dx[i]) / s[i]);
            Some((dx, dy, dz, dw))
        };

        // predictor
        let r_xz = -x.component_mul(&z);
        let r_sw = -s.component_mul(&w);
        let (dx, _, dz, dw) =
            direction(&r_xz, &r_sw).ok_or_else(|| Error::fitting("singular normal equations", None))?;
        let ds = -&dx;
        let ap = (STEP * max_step(&x, &dx).min(max_step(&s, &ds))).min(1.0);
        let ad = (STEP * max_step(&z, &dz).min(max_step(&w, &dw))).min(1.0);
        let mu_aff = ((&x + &dx * ap).dot(&(&z + &dz * ad)) + (&s + &ds * ap).dot(&(&w + &dw * ad))) / (2 * n) as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // corrector
        let r_xz = DVector::from_fn(n, |i, _| sigma * mu - x[i] * z[i] - dx[i] * dz[i]);
        let r_sw = DVector::from_fn(n, |i, _| sigma * mu - s[i] * w[i] - ds[i] * dw[i]);
        let (dx, dy, dz, dw) =
            direction(&r_xz, &r_sw).ok_or_else(|| Error::fitting("singular normal equations", None))?;
        let ds = -&dx;
        let ap = (STEP * max_step(&x, &dx).min(max_step(&s, &ds))).min(1.0);
        let ad = (STEP * max_step(&z, &dz).min(max_step(&w, &dw))).min(1.0);
        x += &dx * ap;
        s += &ds * ap;
        y += &dy * ad;
        z += &dz * ad;
        w += &dw * ad;
    }
    Err(Error::fitting("interior-point quantile regression did not converge", Some(y.iter().map(|v| -v).collect())))
}

/// Minimises `Σρ_τ(y − β₀ − βᵀx) + λ‖β‖₁` with the intercept unpenalised.
///
/// `predictors` is `time × p`. The penalty enters as `2p` pseudo-observations
/// `(0, ±λe_j)`, whose check losses add up to `λ|β_j|`.
pub fn fit_quantile_lasso(predictors: &[Vec<f64>], response: &[f64], tau: f64, lambda: f64) -> Result<LassoComboSpec> {
    let t = response.len();
    let p = predictors.first().map_or(0, |r| r.len());
    if predictors.len() != t {
        return Err(Error::InvalidInput(format!("{} predictor rows for {t} responses", predictors.len())));
    }
    if p == 0 || predictors.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidInput("predictor rows must share a positive width".into()));
    }
    if t < 10 * p {
        return Err(Error::InsufficientData(format!("{p} predictors need at least {} observations, got {t}", 10 * p)));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("tau must be in (0, 1), got {tau}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    if predictors.iter().flatten().chain(response).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in quantile regression data".into()));
    }

    // centre and scale predictors for conditioning
    let means: Vec<f64> = (0..p).map(|j| predictors.iter().map(|r| r[j]).sum::<f64>() / t as f64).collect();
    let sds: Vec<f64> = (0..p)
        .map(|j| {
            let v = predictors.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / t as f64;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let extra = if lambda > 0.0 { 2 * p } else { 0 };
    let rows = t + extra;
    // A is the transposed design: (p + 1) × rows
    let mut a = DMatrix::zeros(p + 1, rows);
    let mut c = DVector::zeros(rows);
    for i in 0..t {
        a[(0, i)] = 1.0;
        for j in 0..p {
            a[(j + 1, i)] = (predictors[i][j] - means[j]) / sds[j];
        }
        c[i] = -response[i];
    }
    for j in 0..extra / 2 {
        // penalty on the slope of the standardised predictor j is λ·sd_j·|β̃_j / sd_j|.
        // Above max(τ, 1−τ)·Σ|z_ij| the slope is zero at every optimum, so larger
        // penalties are capped to keep the interior-point system well scaled.
        let bound = tau.max(1.0 - tau) * (0..t).map(|i| a[(j + 1, i)].abs()).sum::<f64>();
        let scaled = (lambda / sds[j]).min(2.0 * bound);
        a[(j + 1, t + 2 * j)] = scaled;
        a[(j + 1, t + 2 * j + 1)] = -scaled;
    }
    let u = DVector::from_element(rows, 1.0);
    let x0 = DVector::from_element(rows, 1.0 - tau);
    let psi = bounded_lp(&a, &c, &u, &x0)?;
    let coefs: Vec<f64> = (0..p).map(|j| -psi[j + 1] / sds[j]).collect();
    let intercept = -psi[0] - coefs.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok(LassoComboSpec { intercept, coefficients: coefs, lambda, tau })
}

/// Penalty grid searched by [`fit_quantile_lasso_cv`].
pub const LAMBDA_GRID: [f64; 5] = [0.0, 0.01, 0.1, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoSelection {
    pub spec: LassoComboSpec,
    /// Quantile loss on the held-out quarter for each grid value.
    pub validation_losses: Vec<(f64, f64)>,
}

/// Chooses `λ` from `grid` by quantile loss on the last quarter of the window,
/// then refits on the whole window.
pub fn fit_quantile_lasso_cv(
    predictors: &[Vec<f64>],
    response: &[f64],
    tau: f64,
    grid: &[f64],
) -> Result<LassoSelection> {
    let t = response.len();
    let split = t - t / 4;
    let mut losses = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let fit = match fit_quantile_lasso(&predictors[..split], &response[..split], tau, lambda) {
            Ok(f) => f,
            Err(Error::InsufficientData(m)) => return Err(Error::InsufficientData(m)),
            Err(_) => continue,
        };
        let loss: f64 = (split..t).map(|i| quantile_loss_point(response[i], fit.predict(&predictors[i]), tau)).sum();
        losses.push((lambda, loss));
        if best.is_none_or(|(_, l)| loss < l) {
            best = Some((lambda, loss));
        }
    }
    let (lambda, _) = best.ok_or_else(|| Error::fitting("quantile LASSO failed for every penalty", None))?;
    let spec = fit_quantile_lasso(predictors, response, tau, lambda)?;
    Ok(LassoSelection { spec, validation_losses: losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_and_median() {
        assert_eq!(combine_simple_average(&[-1.0, -2.0, -3.0]).unwrap(), -2.0);
        assert_eq!(combine_median(&[-1.0, -2.0, -3.0]).unwrap(), -2.0);
        assert_eq!(combine_median(&[-1.0, -2.0, -3.0, -10.0]).unwrap(), -2.5);
        assert!(combine_median(&[]).is_err());
        assert_eq!(combine_simple_average(&[-4.2]).unwrap(), -4.2);
    }

    #[test]
    fn simplex_map_reaches_vertices() {
        assert_eq!(to_simplex(&[0.0, 2.0, 0.0]), vec![0.0, 1.0, 0.0]);
        let w = to_simplex(&[1.0, -1.0]);
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn single_model_combination() {
        let var: Vec<Vec<f64>> = (0..200).map(|i| vec![-1.0 - 0.1 * (i % 7) as f64]).collect();
        let es: Vec<Vec<f64>> = var.iter().map(|r| vec![r[0] * 1.3]).collect();
        let realized: Vec<f64> = (0..200).map(|i| ((i * 37) % 17) as f64 / 8.0 - 1.0).collect();
        let fit = fit_joint_combination(&var, &es, &realized, &JointOptions::new(0.05)).unwrap();
        assert_eq!(fit.weights.beta, vec![1.0]);
        assert_eq!(fit.weights.gamma, vec![1.0]);
    }

    #[test]
    fn clamp_flag() {
        let w = CombinationWeights { beta: vec![1.0, 0.0], gamma: vec![0.0, 1.0], window_id: 0 };
        let (f, clamped) = combined_forecast(&w, &[-2.0, -1.0], &[-3.0, -1.5], 0.05).unwrap();
        assert!(clamped && f.es < f.var);
        let (f, clamped) = combined_forecast(&w, &[-1.0, -1.0], &[-3.0, -1.5], 0.05).unwrap();
        assert!(!clamped && f.es == -1.5 && f.var == -1.0);
    }

    #[test]
    fn lasso_exact_fit() {
        let y: Vec<f64> = (0..100).map(|i| ((i * 31) % 23) as f64 - 11.0).collect();
        let x: Vec<Vec<f64>> = y.iter().map(|&v| vec![v]).collect();
        let f = fit_quantile_lasso(&x, &y, 0.05, 0.0).unwrap();
        let loss: f64 = y.iter().map(|&v| quantile_loss_point(v, f.predict(&[v]), 0.05)).sum();
        assert!(loss < 1e-6, "{f:?}");
    }

    #[test]
    fn heavy_penalty_gives_empirical_quantile() {
        let y: Vec<f64> = (0..400).map(|i| (((i * 7919) % 400) as f64 / 40.0) - 5.0).collect();
        let x: Vec<Vec<f64>> = (0..400).map(|i| vec![((i * 13) % 29) as f64, ((i * 17) % 31) as f64]).collect();
        let f = fit_quantile_lasso(&x, &y, 0.1, 1e6).unwrap();
        assert!(f.coefficients.iter().all(|b| b.abs() < 1e-6), "{f:?}");
        let below = y.iter().filter(|&&v| v < f.intercept - 1e-9).count();
        let at_or_below = y.iter().filter(|&&v| v <= f.intercept + 1e-9).count();
        assert!(below <= 40 && at_or_below >= 40, "{below} {at_or_below}");
    }
}
