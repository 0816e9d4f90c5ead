//! Conditional-variance models and their one-step VaR/ES forecasts.
//!
//! Every family shares the same recursion skeleton: `σ²_1` is the sample
//! variance of the window, `ε_t = r_t − μ`, and `σ²_{t+1}` follows from
//! `(ε_t, σ²_t)`. Fitting maximises the conditional log-likelihood jointly in
//! the mean, the variance parameters and the residual shape parameters, over
//! unconstrained coordinates that map onto the feasible region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{DistKind, DistributionSpec, SkewT, TailEstimate, LAMBDA_MAX, NU_MAX, NU_MIN};
use crate::error::{Error, Result};
use crate::optim::{bfgs_analytic, BfgsOptions};

/// Recommended EWMA decay for high-frequency data.
pub const EWMA_THETA: f64 = 0.94;

const MAX_PERSISTENCE: f64 = 0.99999;
const MAX_EGARCH_BETA: f64 = 0.9999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VolFamily {
    Ewma,
    Garch11,
    Egarch11,
    GjrGarch11,
}

impl VolFamily {
    pub fn label(self) -> &'static str {
        match self {
            VolFamily::Ewma => "EWMA",
            VolFamily::Garch11 => "GARCH",
            VolFamily::Egarch11 => "EGARCH",
            VolFamily::GjrGarch11 => "GJRGARCH",
        }
    }
}

/// Variance-equation parameters, one variant per family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum VolParams {
    Ewma {
        theta: f64,
    },
    Garch {
        omega: f64,
        alpha: f64,
        beta: f64,
    },
    /// `ln σ²_{t+1} = ω + α|ε_t|/σ_t + γ ε_t/σ_t + β ln σ²_t`
    Egarch {
        omega: f64,
        alpha: f64,
        gamma: f64,
        beta: f64,
    },
    /// `σ²_{t+1} = ω + (α + γ I(ε_t < 0)) ε_t² + β σ²_t`
    GjrGarch {
        omega: f64,
        alpha: f64,
        gamma: f64,
        beta: f64,
    },
}

impl VolParams {
    pub fn family(&self) -> VolFamily {
        match self {
            VolParams::Ewma { .. } => VolFamily::Ewma,
            VolParams::Garch { .. } => VolFamily::Garch11,
            VolParams::Egarch { .. } => VolFamily::Egarch11,
            VolParams::GjrGarch { .. } => VolFamily::GjrGarch11,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            VolParams::Ewma { theta } => theta > 0.0 && theta <= 1.0,
            VolParams::Garch { omega, alpha, beta } => omega > 0.0 && alpha >= 0.0 && beta >= 0.0 && alpha + beta < 1.0,
            VolParams::GjrGarch { omega, alpha, gamma, beta } => {
                omega > 0.0 && alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0 && alpha + gamma / 2.0 + beta < 1.0
            }
            VolParams::Egarch { omega, alpha, gamma, beta } => {
                beta.abs() < 1.0 && omega.is_finite() && alpha.is_finite() && gamma.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("infeasible variance parameters {self:?}")))
        }
    }

    /// `σ²_{t+1}` from `(ε_t, σ²_t)`.
    #[inline]
    pub fn next_variance(&self, eps: f64, sigma2: f64) -> f64 {
        match *self {
            VolParams::Ewma { theta } => ewma_step(eps, sigma2, theta),
            VolParams::Garch { omega, alpha, beta } => omega + alpha * eps * eps + beta * sigma2,
            VolParams::GjrGarch { omega, alpha, gamma, beta } => {
                let lev = if eps < 0.0 { gamma } else { 0.0 };
                omega + (alpha + lev) * eps * eps + beta * sigma2
            }
            VolParams::Egarch { omega, alpha, gamma, beta } => {
                let s = sigma2.sqrt();
                let ln = omega + alpha * eps.abs() / s + gamma * eps / s + beta * sigma2.ln();
                ln.clamp(-700.0, 700.0).exp()
            }
        }
    }

    fn names(&self) -> &'static [&'static str] {
        match self {
            VolParams::Ewma { .. } => &["theta"],
            VolParams::Garch { .. } => &["omega", "alpha", "beta"],
            VolParams::Egarch { .. } | VolParams::GjrGarch { .. } => &["omega", "alpha", "gamma", "beta"],
        }
    }

    fn values(&self) -> Vec<f64> {
        match *self {
            VolParams::Ewma { theta } => vec![theta],
            VolParams::Garch { omega, alpha, beta } => vec![omega, alpha, beta],
            VolParams::Egarch { omega, alpha, gamma, beta } | VolParams::GjrGarch { omega, alpha, gamma, beta } => {
                vec![omega, alpha, gamma, beta]
            }
        }
    }

    /// `(name, value)` pairs in declaration order.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        self.names().iter().copied().zip(self.values()).collect()
    }
}

/// `σ²_{t+1} = (1 − θ) r_t² + θ σ²_t`
#[inline]
pub fn ewma_step(r: f64, sigma2: f64, theta: f64) -> f64 {
    (1.0 - theta) * r * r + theta * sigma2
}

/// A fitted (or hand-specified) volatility model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolModelSpec {
    pub params: VolParams,
    pub dist: DistributionSpec,
    /// Constant conditional mean.
    pub mean: f64,
}

impl VolModelSpec {
    pub fn family(&self) -> VolFamily {
        self.params.family()
    }
}

/// Last in-sample values needed for the next forecast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolState {
    pub sigma2: f64,
    pub eps: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolFit {
    pub spec: VolModelSpec,
    pub state: VolState,
    pub loglik: f64,
    pub converged: bool,
    /// Optimum sat on a boundary of the transformed region (persistence or ν clipped).
    pub projected: bool,
}

/// Log-likelihood and end state of a spec on a window.
pub fn log_likelihood(spec: &VolModelSpec, returns: &[f64]) -> Result<(f64, VolState)> {
    let sigma2_0 = sample_variance(returns)?;
    Ok(run_filter(spec, returns, sigma2_0))
}

fn sample_variance(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::InsufficientData("variance needs two observations".into()));
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1.0);
    if !(v > 1e-24 * (1.0 + m * m)) {
        return Err(Error::Degenerate("window has zero variance".into()));
    }
    Ok(v)
}

fn run_filter(spec: &VolModelSpec, returns: &[f64], sigma2_0: f64) -> (f64, VolState) {
    match spec.dist {
        DistributionSpec::Normal => {
            const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
            filter_with(spec, returns, sigma2_0, |z| -0.5 * z * z - HALF_LN_2PI)
        }
        DistributionSpec::StudentT { nu } => {
            let d = SkewT::new(nu, 0.0);
            filter_with(spec, returns, sigma2_0, |z| d.ln_pdf(z))
        }
        DistributionSpec::SkewT { nu, lambda } => {
            let d = SkewT::new(nu, lambda);
            filter_with(spec, returns, sigma2_0, |z| d.ln_pdf(z))
        }
        other => filter_with(spec, returns, sigma2_0, |z| other.ln_pdf(z)),
    }
}

#[inline]
fn filter_with<D: Fn(f64) -> f64>(
    spec: &VolModelSpec,
    returns: &[f64],
    sigma2_0: f64,
    ln_density: D,
) -> (f64, VolState) {
    let p = spec.params;
    let mut sigma2 = sigma2_0;
    let mut ll = 0.0;
    let mut eps = 0.0;
    let mut last_sigma2 = sigma2;
    for &r in returns {
        eps = r - spec.mean;
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return (f64::NEG_INFINITY, VolState { sigma2, eps, r });
        }
        let s = sigma2.sqrt();
        ll += ln_density(eps / s) - s.ln();
        last_sigma2 = sigma2;
        sigma2 = p.next_variance(eps, sigma2);
    }
    let r = returns.last().copied().unwrap_or(0.0);
    (ll, VolState { sigma2: last_sigma2, eps, r })
}

/// Natural coordinates used by the analytic gradient: the mean, the free
/// variance parameters, then the shape parameters.
fn natural_coords(spec: &VolModelSpec) -> Vec<f64> {
    let mut v = vec![spec.mean];
    if !matches!(spec.params, VolParams::Ewma { .. }) {
        v.extend(spec.params.values());
    }
    match spec.dist {
        DistributionSpec::StudentT { nu } => v.push(nu),
        DistributionSpec::SkewT { nu, lambda } => v.extend([nu, lambda]),
        _ => {}
    }
    v
}

/// Log-likelihood and its gradient in natural coordinates.
fn filter_grad(spec: &VolModelSpec, returns: &[f64], sigma2_0: f64, grad: &mut [f64]) -> f64 {
    let p = spec.params;
    let kv = match p {
        VolParams::Ewma { .. } => 0,
        VolParams::Garch { .. } => 3,
        _ => 4,
    };
    let nh = 1 + kv;
    let (skew, with_lambda) = match spec.dist {
        DistributionSpec::StudentT { nu } => (Some(SkewT::new(nu, 0.0)), false),
        DistributionSpec::SkewT { nu, lambda } => (Some(SkewT::new(nu, lambda)), true),
        _ => (None, false),
    };
    let cd = skew.map(|d| d.constant_derivatives());
    grad.iter_mut().for_each(|g| *g = 0.0);

    // derivatives of σ²_t with respect to (μ, variance parameters)
    let mut dh = [0.0_f64; 5];
    let mut dn = [0.0_f64; 5];
    let mut h = sigma2_0;
    let mut ll = 0.0;
    for &r in returns {
        if !(h > 0.0) || !h.is_finite() {
            return f64::NEG_INFINITY;
        }
        let eps = r - spec.mean;
        let s = h.sqrt();
        let z = eps / s;
        let (f, f_z) = match (&skew, &cd) {
            (Some(d), Some(c)) => {
                let (f, fz, fnu, fl) = d.ln_pdf_grad(z, c);
                grad[nh] += fnu;
                if with_lambda {
                    grad[nh + 1] += fl;
                }
                (f, fz)
            }
            _ => match spec.dist {
                DistributionSpec::Normal => (-0.5 * z * z - 0.918_938_533_204_672_7, -z),
                DistributionSpec::Laplace => (-z.abs() - std::f64::consts::LN_2, -z.signum()),
                other => {
                    let e = 1e-6;
                    (other.ln_pdf(z), (other.ln_pdf(z + e) - other.ln_pdf(z - e)) / (2.0 * e))
                }
            },
        };
        ll += f - s.ln();
        let dl_dh = -0.5 * (f_z * z + 1.0) / h;
        grad[0] += -f_z / s;
        for i in 0..nh {
            grad[i] += dl_dh * dh[i];
        }

        match p {
            VolParams::Ewma { theta } => {
                dn[0] = -2.0 * (1.0 - theta) * eps + theta * dh[0];
            }
            VolParams::Garch { alpha, beta, .. } => {
                dn[0] = -2.0 * alpha * eps + beta * dh[0];
                dn[1] = 1.0 + beta * dh[1];
                dn[2] = eps * eps + beta * dh[2];
                dn[3] = h + beta * dh[3];
            }
            VolParams::GjrGarch { alpha, gamma, beta, .. } => {
                let ind = if eps < 0.0 { 1.0 } else { 0.0 };
                dn[0] = -2.0 * (alpha + gamma * ind) * eps + beta * dh[0];
                dn[1] = 1.0 + beta * dh[1];
                dn[2] = eps * eps + beta * dh[2];
                dn[3] = ind * eps * eps + beta * dh[3];
                dn[4] = h + beta * dh[4];
            }
            VolParams::Egarch { alpha, gamma, beta, .. } => {
                let h_next = p.next_variance(eps, h);
                let dl_dh_prev = -0.5 * (alpha * eps.abs() + gamma * eps) / (h * s) + beta / h;
                let direct = [(-alpha * eps.signum() - gamma) / s, 1.0, eps.abs() / s, eps / s, h.ln()];
                for i in 0..nh {
                    dn[i] = h_next * (direct[i] + dl_dh_prev * dh[i]);
                }
            }
        }
        dh[..nh].copy_from_slice(&dn[..nh]);
        h = p.next_variance(eps, h);
    }
    ll
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub seed: u64,
    /// Previous window's solution; tried first.
    pub warm_start: Option<VolModelSpec>,
    /// Extra random starts. The default start is always tried when no warm start is given.
    pub multi_starts: usize,
    pub bfgs: BfgsOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { seed: 0, warm_start: None, multi_starts: 3, bfgs: BfgsOptions::default() }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Maps unconstrained coordinates onto a feasible spec, and back.
#[derive(Debug, Clone, Copy)]
struct Transform {
    family: VolFamily,
    dist: DistKind,
}

impl Transform {
    fn vol_len(&self) -> usize {
        match self.family {
            VolFamily::Ewma => 0,
            VolFamily::Garch11 => 3,
            VolFamily::Egarch11 | VolFamily::GjrGarch11 => 4,
        }
    }

    fn dist_len(&self) -> usize {
        match self.dist {
            DistKind::StudentT => 1,
            DistKind::SkewT => 2,
            _ => 0,
        }
    }

    fn len(&self) -> usize {
        1 + self.vol_len() + self.dist_len()
    }

    fn decode(&self, x: &[f64]) -> VolModelSpec {
        let mean = x[0];
        let v = &x[1..1 + self.vol_len()];
        let params = match self.family {
            VolFamily::Ewma => VolParams::Ewma { theta: EWMA_THETA },
            VolFamily::Garch11 => {
                let p = MAX_PERSISTENCE * sigmoid(v[1]);
                let share = sigmoid(v[2]);
                VolParams::Garch { omega: v[0].exp(), alpha: p * share, beta: p * (1.0 - share) }
            }
            VolFamily::GjrGarch11 => {
                let p = MAX_PERSISTENCE * sigmoid(v[1]);
                let (e0, e1, e2) = (1.0, v[2].exp(), v[3].exp());
                let s = e0 + e1 + e2;
                VolParams::GjrGarch { omega: v[0].exp(), alpha: p * e0 / s, gamma: 2.0 * p * e1 / s, beta: p * e2 / s }
            }
            VolFamily::Egarch11 => {
                VolParams::Egarch { omega: v[0], alpha: v[1], gamma: v[2], beta: MAX_EGARCH_BETA * v[3].tanh() }
            }
        };
        let d = &x[1 + self.vol_len()..];
        let nu = |u: f64| (NU_MIN + u.exp()).min(NU_MAX);
        let dist = match self.dist {
            DistKind::StudentT => DistributionSpec::StudentT { nu: nu(d[0]) },
            DistKind::SkewT => DistributionSpec::SkewT { nu: nu(d[0]), lambda: LAMBDA_MAX * d[1].tanh() },
            DistKind::Laplace => DistributionSpec::Laplace,
            _ => DistributionSpec::Normal,
        };
        let mean = if self.family == VolFamily::Ewma { 0.0 } else { mean };
        VolModelSpec { params, dist, mean }
    }

    fn encode(&self, spec: &VolModelSpec) -> Vec<f64> {
        let mut x = vec![spec.mean];
        match spec.params {
            VolParams::Ewma { .. } => {}
            VolParams::Garch { omega, alpha, beta } => {
                let p = (alpha + beta).max(1e-8);
                x.extend([omega.max(1e-300).ln(), logit(p / MAX_PERSISTENCE), logit(alpha / p)]);
            }
            VolParams::GjrGarch { omega, alpha, gamma, beta } => {
                let (a, g, b) = (alpha.max(1e-10), (gamma / 2.0).max(1e-10), beta.max(1e-10));
                let p = a + g + b;
                x.extend([omega.max(1e-300).ln(), logit(p / MAX_PERSISTENCE), (g / a).ln(), (b / a).ln()]);
            }
            VolParams::Egarch { omega, alpha, gamma, beta } => {
                x.extend([omega, alpha, gamma, (beta / MAX_EGARCH_BETA).clamp(-0.999_999, 0.999_999).atanh()]);
            }
        }
        match spec.dist {
            DistributionSpec::StudentT { nu } => x.push((nu - NU_MIN).max(1e-6).ln()),
            DistributionSpec::SkewT { nu, lambda } => {
                x.push((nu - NU_MIN).max(1e-6).ln());
                x.push((lambda / LAMBDA_MAX).clamp(-0.999_999, 0.999_999).atanh());
            }
            _ => {}
        }
        x
    }

    fn default_start(&self, mean: f64, var: f64) -> VolModelSpec {
        let params = match self.family {
            VolFamily::Ewma => VolParams::Ewma { theta: EWMA_THETA },
            VolFamily::Garch11 => VolParams::Garch { omega: 0.05 * var, alpha: 0.05, beta: 0.9 },
            VolFamily::GjrGarch11 => VolParams::GjrGarch { omega: 0.05 * var, alpha: 0.03, gamma: 0.06, beta: 0.9 },
            VolFamily::Egarch11 => VolParams::Egarch { omega: 0.05 * var.ln(), alpha: 0.1, gamma: 0.0, beta: 0.95 },
        };
        let dist = match self.dist {
            DistKind::StudentT => DistributionSpec::StudentT { nu: 8.0 },
            DistKind::SkewT => DistributionSpec::SkewT { nu: 8.0, lambda: 0.0 },
            DistKind::Laplace => DistributionSpec::Laplace,
            _ => DistributionSpec::Normal,
        };
        VolModelSpec { params, dist, mean }
    }
}

/// Fits a volatility model by maximum likelihood on `window`.
pub fn fit_garch_family(window: &[f64], family: VolFamily, dist_kind: DistKind, opts: &FitOptions) -> Result<VolFit> {
    if window.len() < 250 {
        return Err(Error::InsufficientData(format!(
            "volatility fit needs at least 250 observations, got {}",
            window.len()
        )));
    }
    if matches!(dist_kind, DistKind::AsymmetricLaplace) {
        return Err(Error::Domain("asymmetric Laplace is not a supported innovation law".into()));
    }
    let var = sample_variance(window)?;
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;

    let tr = Transform { family, dist: dist_kind };
    if family == VolFamily::Ewma && dist_kind == DistKind::Normal {
        // nothing to estimate
        let spec = tr.decode(&tr.encode(&tr.default_start(0.0, var)));
        let (loglik, state) = run_filter(&spec, window, var);
        return Ok(VolFit { spec, state, loglik, converged: true, projected: false });
    }

    let k = tr.len();
    let mut g_nat = vec![0.0; k];
    let mut objective = |x: &[f64], g: Option<&mut [f64]>| {
        let spec = tr.decode(x);
        match g {
            None => -run_filter(&spec, window, var).0 / n,
            Some(g) => {
                let nat = natural_coords(&spec);
                let ll = filter_grad(&spec, window, var, &mut g_nat[..nat.len()]);
                // chain rule through the transform, Jacobian by central differences
                let mut xp = x.to_vec();
                for j in 0..k {
                    let step = 1e-5 * x[j].abs().max(1.0);
                    xp[j] = x[j] + step;
                    let up = natural_coords(&tr.decode(&xp));
                    xp[j] = x[j] - step;
                    let dn = natural_coords(&tr.decode(&xp));
                    xp[j] = x[j];
                    g[j] = -(0..nat.len()).map(|i| g_nat[i] * (up[i] - dn[i]) / (2.0 * step)).sum::<f64>() / n;
                }
                -ll / n
            }
        }
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    match &opts.warm_start {
        Some(w) if w.family() == family && w.dist.kind() == dist_kind => starts.push(tr.encode(w)),
        _ => starts.push(tr.encode(&tr.default_start(mean, var))),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let base = tr.encode(&tr.default_start(mean, var));
    let sd = var.sqrt();
    for _ in 0..opts.multi_starts {
        let mut x = base.clone();
        x[0] += rng.gen_range(-0.2..0.2) * sd;
        for v in x.iter_mut().skip(1) {
            *v += rng.gen_range(-1.0..1.0);
        }
        starts.push(x);
    }

    let mut best: Option<crate::optim::Minimum> = None;
    for s in &starts {
        let m = bfgs_analytic(&mut objective, s, &opts.bfgs);
        if m.value.is_finite() && best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    // a warm start can sit in a collapsed region; the default start is the fallback
    if opts.warm_start.is_some() && starts[0] != base {
        let fallback = objective(&base, None);
        if best.as_ref().is_none_or(|b| !(b.value <= fallback)) {
            let m = bfgs_analytic(&mut objective, &base, &opts.bfgs);
            if m.value.is_finite() && best.as_ref().is_none_or(|b| m.value < b.value) {
                best = Some(m);
            }
        }
    }
    let best = best.ok_or_else(|| {
        Error::fitting(
            format!("{} likelihood not finite at any start", family.label()),
            Some(tr.decode(&starts[0]).params.values()),
        )
    })?;

    let spec = tr.decode(&best.x);
    spec.params.validate().map_err(|e| Error::fitting(e.to_string(), Some(spec.params.values())))?;
    let (loglik, state) = run_filter(&spec, window, var);
    let projected = match spec.params {
        VolParams::Garch { alpha, beta, .. } => alpha + beta > 0.9999,
        VolParams::GjrGarch { alpha, gamma, beta, .. } => alpha + gamma / 2.0 + beta > 0.9999,
        VolParams::Egarch { beta, .. } => beta.abs() > 0.999,
        VolParams::Ewma { .. } => false,
    } || matches!(spec.dist, DistributionSpec::StudentT { nu } | DistributionSpec::SkewT { nu, .. } if nu >= NU_MAX);
    Ok(VolFit { spec, state, loglik, converged: best.converged, projected })
}

/// One-step VaR/ES: advance the variance recursion once, then apply the
/// residual law's location-scale estimator.
pub fn forecast_var_es(spec: &VolModelSpec, state: &VolState, alpha: f64) -> Result<TailEstimate> {
    let sigma2 = spec.params.next_variance(state.eps, state.sigma2);
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Internal(format!("non-positive forecast variance {sigma2}")));
    }
    spec.dist.tail_estimate(spec.mean, sigma2.sqrt(), alpha)
}

/// Simulates `n` returns from a spec after discarding `burn_in` draws.
pub fn simulate<R: Rng + ?Sized>(spec: &VolModelSpec, n: usize, burn_in: usize, rng: &mut R) -> Vec<f64> {
    let mut sigma2 = match spec.params {
        VolParams::Garch { omega, alpha, beta } => omega / (1.0 - alpha - beta),
        VolParams::GjrGarch { omega, alpha, gamma, beta } => omega / (1.0 - alpha - gamma / 2.0 - beta),
        VolParams::Egarch { omega, beta, .. } => (omega / (1.0 - beta)).exp(),
        VolParams::Ewma { .. } => 1.0,
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n + burn_in {
        let eps = sigma2.sqrt() * spec.dist.sample(rng);
        if i >= burn_in {
            out.push(spec.mean + eps);
        }
        sigma2 = spec.params.next_variance(eps, sigma2);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ewma_examples() {
        assert!((ewma_step(1.0, 2.0, 0.94) - 1.94).abs() < 1e-12);
        assert_eq!(ewma_step(5.0, 2.0, 1.0), 2.0);
    }

    #[test]
    fn validation() {
        assert!(VolParams::Garch { omega: 0.1, alpha: 0.5, beta: 0.5 }.validate().is_err());
        assert!(VolParams::Garch { omega: 0.1, alpha: 0.1, beta: 0.8 }.validate().is_ok());
        assert!(VolParams::GjrGarch { omega: 0.1, alpha: 0.1, gamma: 0.2, beta: 0.85 }.validate().is_err());
        assert!(VolParams::Egarch { omega: 0.0, alpha: 0.1, gamma: -0.1, beta: 1.0 }.validate().is_err());
        assert!(VolParams::Ewma { theta: 0.0 }.validate().is_err());
    }

    #[test]
    fn gjr_zero_innovation_takes_symmetric_branch() {
        let p = VolParams::GjrGarch { omega: 0.1, alpha: 0.1, gamma: 0.2, beta: 0.5 };
        assert_eq!(p.next_variance(0.0, 1.0), 0.1 + 0.5);
        assert!((p.next_variance(-1.0, 1.0) - (0.1 + 0.3 + 0.5)).abs() < 1e-15);
        assert!((p.next_variance(1.0, 1.0) - (0.1 + 0.1 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn transform_round_trip() {
        let cases = [
            (
                VolFamily::Garch11,
                DistKind::StudentT,
                VolModelSpec {
                    params: VolParams::Garch { omega: 0.05, alpha: 0.1, beta: 0.85 },
                    dist: DistributionSpec::StudentT { nu: 6.0 },
                    mean: 0.02,
                },
            ),
            (
                VolFamily::GjrGarch11,
                DistKind::SkewT,
                VolModelSpec {
                    params: VolParams::GjrGarch { omega: 0.05, alpha: 0.05, gamma: 0.1, beta: 0.8 },
                    dist: DistributionSpec::SkewT { nu: 5.0, lambda: -0.2 },
                    mean: -0.01,
                },
            ),
            (
                VolFamily::Egarch11,
                DistKind::Normal,
                VolModelSpec {
                    params: VolParams::Egarch { omega: 0.02, alpha: 0.2, gamma: -0.05, beta: 0.9 },
                    dist: DistributionSpec::Normal,
                    mean: 0.0,
                },
            ),
        ];
        for (family, dist, spec) in cases {
            let tr = Transform { family, dist };
            let back = tr.decode(&tr.encode(&spec));
            for ((_, a), (_, b)) in spec.params.named().iter().zip(back.params.named()) {
                assert!((a - b).abs() < 1e-9, "{spec:?} vs {back:?}");
            }
            assert_eq!(tr.len(), tr.encode(&spec).len());
        }
    }

    #[test]
    fn likelihood_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = VolModelSpec {
            params: VolParams::GjrGarch { omega: 0.05, alpha: 0.05, gamma: 0.1, beta: 0.85 },
            dist: DistributionSpec::SkewT { nu: 6.0, lambda: -0.2 },
            mean: 0.01,
        };
        let r = simulate(&truth, 400, 100, &mut rng);
        let v0 = sample_variance(&r).unwrap();
        let specs = [
            truth,
            VolModelSpec {
                params: VolParams::Garch { omega: 0.05, alpha: 0.08, beta: 0.9 },
                dist: DistributionSpec::StudentT { nu: 5.0 },
                mean: 0.02,
            },
            VolModelSpec {
                params: VolParams::Egarch { omega: 0.01, alpha: 0.15, gamma: -0.05, beta: 0.95 },
                dist: DistributionSpec::Normal,
                mean: -0.01,
            },
            VolModelSpec {
                params: VolParams::Ewma { theta: 0.94 },
                dist: DistributionSpec::SkewT { nu: 7.0, lambda: 0.1 },
                mean: 0.0,
            },
        ];
        for spec in specs {
            let nat = natural_coords(&spec);
            let mut g = vec![0.0; nat.len()];
            let ll = filter_grad(&spec, &r, v0, &mut g);
            assert!((ll - run_filter(&spec, &r, v0).0).abs() < 1e-8);
            for i in 0..nat.len() {
                let h = 1e-6 * nat[i].abs().max(1e-2);
                let mut up = nat.clone();
                up[i] += h;
                let mut dn = nat.clone();
                dn[i] -= h;
                let num = (run_filter(&rebuild(&spec, &up), &r, v0).0 - run_filter(&rebuild(&spec, &dn), &r, v0).0)
                    / (2.0 * h);
                assert!((g[i] - num).abs() < 1e-4 * (1.0 + num.abs()), "{spec:?} coord {i}: {} vs {num}", g[i]);
            }
        }
    }

    fn rebuild(spec: &VolModelSpec, nat: &[f64]) -> VolModelSpec {
        let mut it = nat.iter().copied();
        let mean = it.next().unwrap();
        let mut nx = || it.next().unwrap();
        let params = match spec.params {
            VolParams::Ewma { theta } => VolParams::Ewma { theta },
            VolParams::Garch { .. } => VolParams::Garch { omega: nx(), alpha: nx(), beta: nx() },
            VolParams::GjrGarch { .. } => VolParams::GjrGarch { omega: nx(), alpha: nx(), gamma: nx(), beta: nx() },
            VolParams::Egarch { .. } => VolParams::Egarch { omega: nx(), alpha: nx(), gamma: nx(), beta: nx() },
        };
        let dist = match spec.dist {
            DistributionSpec::StudentT { .. } => DistributionSpec::StudentT { nu: nx() },
            DistributionSpec::SkewT { .. } => DistributionSpec::SkewT { nu: nx(), lambda: nx() },
            d => d,
        };
        VolModelSpec { params, dist, mean }
    }

    #[test]
    fn constant_window_is_degenerate() {
        let w = vec![0.3; 300];
        let r = fit_garch_family(&w, VolFamily::Garch11, DistKind::Normal, &FitOptions::default());
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn short_window_rejected() {
        let w: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let r = fit_garch_family(&w, VolFamily::Garch11, DistKind::Normal, &FitOptions::default());
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn ewma_forecast_matches_normal_estimator() {
        let spec = VolModelSpec { params: VolParams::Ewma { theta: 0.94 }, dist: DistributionSpec::Normal, mean: 0.0 };
        // choose state so that σ²_{t+1} = 0.06·r² + 0.94·σ² = 1
        let state = VolState { sigma2: 1.0, eps: 1.0, r: 1.0 };
        let f = forecast_var_es(&spec, &state, 0.05).unwrap();
        assert!((f.var + 1.644_853_626_951_472).abs() < 1e-9);
    }

    #[test]
    fn forecast_monotone_in_alpha_and_scale() {
        let spec = VolModelSpec {
            params: VolParams::Garch { omega: 0.05, alpha: 0.1, beta: 0.85 },
            dist: DistributionSpec::StudentT { nu: 5.0 },
            mean: 0.01,
        };
        let st = VolState { sigma2: 1.2, eps: -0.7, r: -0.69 };
        let f1 = forecast_var_es(&spec, &st, 0.01).unwrap();
        let f5 = forecast_var_es(&spec, &st, 0.05).unwrap();
        assert!(f1.var < f5.var && f1.es < f5.es);
    }
}
