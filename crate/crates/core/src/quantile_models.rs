//! Direct tail models: historical simulation, CAViaR, CAViaR-ES and CARE.
//!
//! All recursions are stated for the lower tail, so VaR and ES paths are
//! negative. Paths have length `n + 1`: element `t` is the forecast for
//! `returns[t]`, and the last element is the one-step forecast beyond the
//! window.
//!
//! Fits work on the window divided by its standard deviation, which keeps
//! simplex steps meaningful whatever the return units; the parameters are
//! mapped back before they are returned.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backtest::{al_score_point, quantile_loss_point};
use crate::distributions::TailEstimate;
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, Minimum, NelderMeadOptions};
use crate::series::quantile_sorted;

/// Smoothing constant of the adaptive CAViaR indicator.
pub const ADA_G: f64 = 10.0;
/// Observations used for the initial quantile of every recursion.
pub const INITIAL_SPAN: usize = 300;
/// Minimum window accepted by the recursive fits.
pub const MIN_WINDOW: usize = 300;

/// Historical-simulation VaR and ES from the empirical lower tail of `window`.
pub fn hs_forecast(window: &[f64], alpha: f64) -> Result<TailEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let n = window.len();
    if (n as f64) * alpha < 1.0 - 1e-9 {
        return Err(Error::InsufficientData(format!(
            "historical simulation at alpha {alpha} needs at least {} observations, got {n}",
            (1.0 / alpha).ceil()
        )));
    }
    let mut sorted = window.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((alpha * n as f64 - 1e-9).ceil() as usize).max(1);
    let var = sorted[k - 1];
    let below: Vec<f64> = sorted.iter().copied().take_while(|&r| r < var).collect();
    let tail: Vec<f64> =
        if below.is_empty() { sorted.iter().copied().take_while(|&r| r <= var).collect() } else { below };
    let es = tail.iter().sum::<f64>() / tail.len() as f64;
    Ok(TailEstimate { var, es, alpha })
}

/// Empirical `alpha`-quantile of the first [`INITIAL_SPAN`] observations.
pub fn initial_quantile(window: &[f64], alpha: f64) -> f64 {
    let mut head = window[..window.len().min(INITIAL_SPAN)].to_vec();
    head.sort_by(f64::total_cmp);
    quantile_sorted(&head, alpha)
}

/// Sample `tau`-expectile: minimiser of `Σ|τ − I(r < μ)|(r − μ)²`.
pub fn sample_expectile(x: &[f64], tau: f64) -> f64 {
    let mut mu = x.iter().sum::<f64>() / x.len() as f64;
    for _ in 0..200 {
        let (mut sw, mut swr) = (0.0, 0.0);
        for &r in x {
            let w = if r < mu { 1.0 - tau } else { tau };
            sw += w;
            swr += w * r;
        }
        let next = swr / sw;
        if (next - mu).abs() <= 1e-14 * (1.0 + mu.abs()) {
            return next;
        }
        mu = next;
    }
    mu
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaviarForm {
    /// `VaR_t = β₁ + β₂ VaR_{t−1} + β₃|r_{t−1}|`
    Sav,
    /// `VaR_t = β₁ + β₂ VaR_{t−1} + β₃ r⁺_{t−1} + β₄ r⁻_{t−1}`
    As,
    /// `VaR_t = −√(β₁ + β₂ VaR²_{t−1} + β₃ r²_{t−1})`
    Ig,
    /// `VaR_t = VaR_{t−1} + β₁([1 + exp(G(r_{t−1} − VaR_{t−1}))]⁻¹ − α)`
    Ada,
}

impl CaviarForm {
    pub fn n_betas(self) -> usize {
        match self {
            CaviarForm::Sav | CaviarForm::Ig => 3,
            CaviarForm::As => 4,
            CaviarForm::Ada => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CaviarForm::Sav => "SAV",
            CaviarForm::As => "AS",
            CaviarForm::Ig => "IG",
            CaviarForm::Ada => "ADA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaviarSpec {
    pub form: CaviarForm,
    pub betas: Vec<f64>,
    /// Only used by the adaptive form.
    pub smoothing_g: f64,
    pub alpha: f64,
}

impl CaviarSpec {
    pub fn new(form: CaviarForm, betas: Vec<f64>, alpha: f64) -> Result<Self> {
        let spec = CaviarSpec { form, betas, smoothing_g: ADA_G, alpha };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.len() != self.form.n_betas() {
            return Err(Error::InvalidInput(format!(
                "CAViaR-{} takes {} betas, got {}",
                self.form.label(),
                self.form.n_betas(),
                self.betas.len()
            )));
        }
        if self.form == CaviarForm::Ig && self.betas.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::Domain("CAViaR-IG betas must be positive".into()));
        }
        if !(self.smoothing_g > 0.0 && self.smoothing_g.is_finite()) {
            return Err(Error::Domain("smoothing constant must be positive and finite".into()));
        }
        Ok(())
    }
}

#[inline]
fn caviar_step(form: CaviarForm, b: &[f64], g: f64, alpha: f64, v: f64, r: f64) -> f64 {
    match form {
        CaviarForm::Sav => b[0] + b[1] * v + b[2] * r.abs(),
        CaviarForm::As => b[0] + b[1] * v + b[2] * r.max(0.0) + b[3] * (-r).max(0.0),
        CaviarForm::Ig => {
            let inner = b[0] + b[1] * v * v + b[2] * r * r;
            if inner >= 0.0 {
                -inner.sqrt()
            } else {
                f64::NAN
            }
        }
        CaviarForm::Ada => v + b[0] * (1.0 / (1.0 + (g * (r - v)).exp()) - alpha),
    }
}

/// VaR recursion over `returns` started at `v0`; length `returns.len() + 1`.
pub fn caviar_path(spec: &CaviarSpec, returns: &[f64], v0: f64) -> Result<Vec<f64>> {
    spec.validate()?;
    if !(v0 < 0.0) {
        return Err(Error::Domain(format!("initial VaR must be negative, got {v0}")));
    }
    let mut path = Vec::with_capacity(returns.len() + 1);
    let mut v = v0;
    path.push(v);
    for &r in returns {
        v = caviar_step(spec.form, &spec.betas, spec.smoothing_g, spec.alpha, v, r);
        if !v.is_finite() {
            return Err(Error::Domain(format!("CAViaR-{} recursion left the feasible region", spec.form.label())));
        }
        path.push(v);
    }
    Ok(path)
}

/// Fits keep the autoregressive coefficient inside the unit interval.
#[inline]
fn explosive(b: &[f64]) -> bool {
    !(b[1].abs() < 1.0)
}

/// Mean quantile loss of a CAViaR path against the window; `+inf` if infeasible.
fn caviar_objective(form: CaviarForm, b: &[f64], g: f64, alpha: f64, returns: &[f64], v0: f64) -> f64 {
    if form != CaviarForm::Ada && explosive(b) {
        return f64::INFINITY;
    }
    let mut v = v0;
    let mut acc = 0.0;
    for &r in returns {
        acc += quantile_loss_point(r, v, alpha);
        v = caviar_step(form, b, g, alpha, v, r);
        if !v.is_finite() {
            return f64::INFINITY;
        }
    }
    acc / returns.len() as f64
}

/// Options shared by the simplex-based fits.
#[derive(Debug, Clone)]
pub struct QuantileFitOptions {
    pub seed: u64,
    /// Random starts tried on a cold fit.
    pub multi_starts: usize,
    /// Evaluation cap per start on a cold fit.
    pub max_evals: usize,
    /// Evaluation cap when starting from a previous solution.
    pub warm_max_evals: usize,
}

impl Default for QuantileFitOptions {
    fn default() -> Self {
        Self { seed: 0, multi_starts: 5, max_evals: 10_000, warm_max_evals: 3_000 }
    }
}

impl QuantileFitOptions {
    fn cold(&self) -> NelderMeadOptions {
        NelderMeadOptions { max_evals: self.max_evals, ..NelderMeadOptions::default() }
    }

    fn warm(&self) -> NelderMeadOptions {
        NelderMeadOptions { max_evals: self.warm_max_evals, initial_step: 0.005, f_tol: 1e-8, x_tol: 1e-4 }
    }
}

fn check_window(window: &[f64], alpha: f64) -> Result<f64> {
    if window.len() < MIN_WINDOW {
        return Err(Error::InsufficientData(format!(
            "recursive tail models need at least {MIN_WINDOW} observations, got {}",
            window.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let n = window.len() as f64;
    let m = window.iter().sum::<f64>() / n;
    let sd = (window.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 1e-12 * (1.0 + m.abs())) {
        return Err(Error::Degenerate("window has zero variance".into()));
    }
    Ok(sd)
}

// Free coordinates for CAViaR betas on the unit-variance scale.
fn caviar_decode(form: CaviarForm, x: &[f64]) -> Vec<f64> {
    match form {
        CaviarForm::Ig => x.iter().map(|v| v.exp()).collect(),
        _ => x.to_vec(),
    }
}

fn caviar_encode(form: CaviarForm, b: &[f64]) -> Vec<f64> {
    match form {
        CaviarForm::Ig => b.iter().map(|v| v.max(1e-300).ln()).collect(),
        _ => b.to_vec(),
    }
}

/// Betas expressed on returns divided by `s`.
fn caviar_to_unit(form: CaviarForm, b: &[f64], s: f64) -> Vec<f64> {
    let mut out = b.to_vec();
    match form {
        CaviarForm::Sav | CaviarForm::As | CaviarForm::Ada => out[0] /= s,
        CaviarForm::Ig => out[0] /= s * s,
    }
    out
}

fn caviar_from_unit(form: CaviarForm, b: &[f64], s: f64) -> Vec<f64> {
    caviar_to_unit(form, b, 1.0 / s)
}

/// A start on the unit scale whose fixed point is near `q`.
fn caviar_start(form: CaviarForm, q: f64, mean_abs: f64, mean_sq: f64, persistence: f64, share: f64) -> Vec<f64> {
    let p = persistence;
    match form {
        CaviarForm::Sav => {
            let b3 = share * (1.0 - p) * q / mean_abs;
            vec![q * (1.0 - p) - b3 * mean_abs, p, b3]
        }
        CaviarForm::As => {
            let b4 = share * (1.0 - p) * q / (0.5 * mean_abs);
            let b3 = 0.3 * b4;
            vec![q * (1.0 - p) - 0.5 * (b3 + b4) * mean_abs, p, b3, b4]
        }
        CaviarForm::Ig => {
            let b3 = share * (1.0 - p) * q * q / mean_sq;
            vec![(q * q * (1.0 - p) - b3 * mean_sq).max(1e-4 * q * q), p, b3]
        }
        CaviarForm::Ada => vec![-(1.0 + 2.0 * share)],
    }
}

fn best_of(a: Option<Minimum>, b: Minimum) -> Option<Minimum> {
    match a {
        Some(a) if a.value <= b.value => Some(a),
        _ if b.value.is_finite() => Some(b),
        a => a,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaviarFit {
    pub spec: CaviarSpec,
    pub v0: f64,
    /// Mean quantile loss on the window.
    pub objective: f64,
    /// VaR forecast for the observation after the window.
    pub next_var: f64,
}

/// Fits a CAViaR model by minimising the mean quantile loss on `window`.
pub fn fit_caviar(
    window: &[f64],
    form: CaviarForm,
    alpha: f64,
    opts: &QuantileFitOptions,
    warm_start: Option<&CaviarSpec>,
) -> Result<CaviarFit> {
    let s = check_window(window, alpha)?;
    let unit: Vec<f64> = window.iter().map(|r| r / s).collect();
    let v0 = initial_quantile(window, alpha);
    if !(v0 < 0.0) {
        return Err(Error::Domain(format!("initial {alpha}-quantile {v0} is not negative")));
    }
    let q = v0 / s;
    let g = ADA_G * s;
    let objective = |x: &[f64]| caviar_objective(form, &caviar_decode(form, x), g, alpha, &unit, q);

    let mut best = None;
    if let Some(w) = warm_start.filter(|w| w.form == form) {
        let x0 = caviar_encode(form, &caviar_to_unit(form, &w.betas, s));
        best = best_of(best, nelder_mead(objective, &x0, &opts.warm()));
    }
    if best.is_none() {
        let mean_abs = unit.iter().map(|r| r.abs()).sum::<f64>() / unit.len() as f64;
        let mean_sq = unit.iter().map(|r| r * r).sum::<f64>() / unit.len() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut starts = vec![caviar_start(form, q, mean_abs, mean_sq, 0.8, 0.5)];
        for _ in 1..opts.multi_starts.max(1) {
            let p = rng.gen_range(0.5..0.97);
            let share = rng.gen_range(0.1..0.9);
            starts.push(caviar_start(form, q, mean_abs, mean_sq, p, share));
        }
        for st in starts {
            best = best_of(best, nelder_mead(objective, &caviar_encode(form, &st), &opts.cold()));
        }
    }
    let best = best.ok_or_else(|| Error::fitting(format!("CAViaR-{}: no feasible start", form.label()), None))?;
    let betas = caviar_from_unit(form, &caviar_decode(form, &best.x), s);
    let spec = CaviarSpec { form, betas, smoothing_g: ADA_G, alpha };
    let path = caviar_path(&spec, window, v0).map_err(|e| Error::fitting(e.to_string(), Some(spec.betas.clone())))?;
    let objective = caviar_objective(form, &spec.betas, spec.smoothing_g, alpha, window, v0);
    Ok(CaviarFit { next_var: path[window.len()], spec, v0, objective })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EsConnection {
    /// `ES_t = (1 + exp(γ₀)) VaR_t`
    Exp,
    /// `ES_t = VaR_t − x_t`, with `x_t` updated on violations only.
    Ar,
}

impl EsConnection {
    pub fn n_gammas(self) -> usize {
        match self {
            EsConnection::Exp => 1,
            EsConnection::Ar => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EsConnection::Exp => "EXP",
            EsConnection::Ar => "AR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaviarEsSpec {
    pub caviar: CaviarSpec,
    pub connection: EsConnection,
    pub gammas: Vec<f64>,
}

impl CaviarEsSpec {
    pub fn validate(&self) -> Result<()> {
        self.caviar.validate()?;
        if self.gammas.len() != self.connection.n_gammas() {
            return Err(Error::InvalidInput(format!(
                "{} connection takes {} gammas, got {}",
                self.connection.label(),
                self.connection.n_gammas(),
                self.gammas.len()
            )));
        }
        if self.connection == EsConnection::Ar && self.gammas.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::Domain("AR connection gammas must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Starting exceedance for the AR connection: mean of `v0 − r` over `r < v0`.
pub fn initial_exceedance(window: &[f64], v0: f64) -> f64 {
    let (sum, count) = window.iter().filter(|&&r| r < v0).fold((0.0, 0usize), |(s, c), &r| (s + (v0 - r), c + 1));
    if count == 0 {
        0.1 * v0.abs()
    } else {
        sum / count as f64
    }
}

/// Runs VaR and ES jointly; calls `visit(t, var_t, es_t)` for every in-window
/// row and returns the out-of-window pair, or `None` if the path left the
/// feasible region.
#[inline]
fn caviar_es_run<F: FnMut(usize, f64, f64)>(
    form: CaviarForm,
    b: &[f64],
    g: f64,
    alpha: f64,
    connection: EsConnection,
    gammas: &[f64],
    returns: &[f64],
    v0: f64,
    x0: f64,
    mut visit: F,
) -> Option<(f64, f64)> {
    let mut v = v0;
    let mut x = x0;
    let mult = 1.0 + gammas[0].exp();
    let es_of = |v: f64, x: f64| match connection {
        EsConnection::Exp => mult * v,
        EsConnection::Ar => v - x,
    };
    for (t, &r) in returns.iter().enumerate() {
        visit(t, v, es_of(v, x));
        if connection == EsConnection::Ar && r <= v {
            x = gammas[0] + gammas[1] * (v - r) + gammas[2] * x;
        }
        v = caviar_step(form, b, g, alpha, v, r);
        if !v.is_finite() || !x.is_finite() {
            return None;
        }
    }
    Some((v, es_of(v, x)))
}

/// VaR and ES paths of a CAViaR-ES spec; each of length `returns.len() + 1`.
pub fn caviar_es_paths(spec: &CaviarEsSpec, returns: &[f64], v0: f64, x0: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    let c = &spec.caviar;
    let mut vs = Vec::with_capacity(returns.len() + 1);
    let mut es = Vec::with_capacity(returns.len() + 1);
    let last = caviar_es_run(
        c.form,
        &c.betas,
        c.smoothing_g,
        c.alpha,
        spec.connection,
        &spec.gammas,
        returns,
        v0,
        x0,
        |_, v, e| {
            vs.push(v);
            es.push(e);
        },
    )
    .ok_or_else(|| Error::Domain("CAViaR-ES recursion left the feasible region".into()))?;
    vs.push(last.0);
    es.push(last.1);
    Ok((vs, es))
}

#[allow(clippy::too_many_arguments)]
fn caviar_es_objective(
    form: CaviarForm,
    b: &[f64],
    g: f64,
    alpha: f64,
    connection: EsConnection,
    gammas: &[f64],
    returns: &[f64],
    v0: f64,
    x0: f64,
) -> f64 {
    if form != CaviarForm::Ada && explosive(b) {
        return f64::INFINITY;
    }
    // AL score summed as n·(−ln(1−α)) + Σ ln(−e) − Σ (r − v)(α − I)/(α e),
    // with the logarithms taken over running products
    let mut lin = 0.0;
    let mut ln_sum = 0.0;
    let mut prod = 1.0_f64;
    let mut ok = true;
    let end = caviar_es_run(form, b, g, alpha, connection, gammas, returns, v0, x0, |t, v, e| {
        if !(e < 0.0) || !(e < v) {
            ok = false;
        } else if ok {
            let r = returns[t];
            let ind = if r <= v { 1.0 } else { 0.0 };
            lin += (r - v) * (alpha - ind) / e;
            prod *= -e;
            if !(1e-100..=1e100).contains(&prod) {
                ln_sum += prod.ln();
                prod = 1.0;
            }
        }
    });
    if ok && end.is_some() {
        let n = returns.len() as f64;
        (-(1.0 - alpha).ln() * n + ln_sum + prod.ln() - lin / alpha) / n
    } else {
        f64::INFINITY
    }
}

fn gamma_decode(connection: EsConnection, x: &[f64]) -> Vec<f64> {
    match connection {
        EsConnection::Exp => x.to_vec(),
        EsConnection::Ar => x.iter().map(|v| v * v).collect(),
    }
}

fn gamma_encode(connection: EsConnection, g: &[f64]) -> Vec<f64> {
    match connection {
        EsConnection::Exp => g.to_vec(),
        EsConnection::Ar => g.iter().map(|v| v.max(0.0).sqrt()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaviarEsFit {
    pub spec: CaviarEsSpec,
    pub v0: f64,
    pub x0: f64,
    /// Mean AL log score on the window.
    pub objective: f64,
    pub next: TailEstimate,
}

/// Fits VaR and ES jointly by minimising the mean AL log score.
///
/// A cold fit starts from a quantile-loss CAViaR fit combined with the best
/// connection parameters on a small grid, so the joint optimum never scores
/// worse than that two-stage estimate.
pub fn fit_caviar_es(
    window: &[f64],
    form: CaviarForm,
    connection: EsConnection,
    alpha: f64,
    opts: &QuantileFitOptions,
    warm_start: Option<&CaviarEsSpec>,
) -> Result<CaviarEsFit> {
    let s = check_window(window, alpha)?;
    let unit: Vec<f64> = window.iter().map(|r| r / s).collect();
    let v0 = initial_quantile(window, alpha);
    if !(v0 < 0.0) {
        return Err(Error::Domain(format!("initial {alpha}-quantile {v0} is not negative")));
    }
    let x0 = initial_exceedance(window, v0);
    let (q, xq, g) = (v0 / s, x0 / s, ADA_G * s);
    let nb = form.n_betas();
    let to_unit_gammas = |gm: &[f64]| -> Vec<f64> {
        let mut out = gm.to_vec();
        if connection == EsConnection::Ar {
            out[0] /= s;
        }
        out
    };
    let objective = |x: &[f64]| {
        let b = caviar_decode(form, &x[..nb]);
        let gm = gamma_decode(connection, &x[nb..]);
        caviar_es_objective(form, &b, g, alpha, connection, &gm, &unit, q, xq)
    };
    let pack = |b: &[f64], gm: &[f64]| -> Vec<f64> {
        let mut x = caviar_encode(form, b);
        x.extend(gamma_encode(connection, gm));
        x
    };

    let mut best = None;
    if let Some(w) = warm_start.filter(|w| w.caviar.form == form && w.connection == connection) {
        let x = pack(&caviar_to_unit(form, &w.caviar.betas, s), &to_unit_gammas(&w.gammas));
        best = best_of(best, nelder_mead(objective, &x, &opts.warm()));
    }
    if best.is_none() {
        let stage1 = fit_caviar(window, form, alpha, opts, None)?;
        let b = caviar_to_unit(form, &stage1.spec.betas, s);
        let grid: Vec<Vec<f64>> = match connection {
            EsConnection::Exp => (-30..=10).map(|k| vec![k as f64 * 0.1]).collect(),
            EsConnection::Ar => {
                let mut v = Vec::new();
                for &g0 in &[0.0, 0.05, 0.2] {
                    for &g1 in &[0.05, 0.2, 0.5] {
                        for &g2 in &[0.5, 0.8, 0.95] {
                            v.push(vec![g0 * xq.max(0.1), g1, g2]);
                        }
                    }
                }
                v
            }
        };
        let mut two_stage: Option<(f64, Vec<f64>)> = None;
        for gm in grid {
            let x = pack(&b, &gm);
            let f = objective(&x);
            if f.is_finite() && two_stage.as_ref().is_none_or(|(bf, _)| f < *bf) {
                two_stage = Some((f, x));
            }
        }
        let (f2, x2) = two_stage.ok_or_else(|| {
            Error::Infeasible(format!("CAViaR-ES-{}-{}: no feasible start", form.label(), connection.label()))
        })?;
        best = Some(Minimum { x: x2.clone(), value: f2, evaluations: 0, converged: false });
        best = best_of(best, nelder_mead(objective, &x2, &opts.cold()));
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
        for _ in 1..opts.multi_starts.max(1) {
            let mut x = x2.clone();
            for v in x.iter_mut() {
                *v += rng.gen_range(-0.1..0.1) * v.abs().max(0.1);
            }
            best = best_of(best, nelder_mead(objective, &x, &opts.cold()));
        }
    }
    let best = best.ok_or_else(|| {
        Error::Infeasible(format!("CAViaR-ES-{}-{}: no feasible start", form.label(), connection.label()))
    })?;

    let betas = caviar_from_unit(form, &caviar_decode(form, &best.x[..nb]), s);
    let mut gammas = gamma_decode(connection, &best.x[nb..]);
    if connection == EsConnection::Ar {
        gammas[0] *= s;
    }
    let spec = CaviarEsSpec { caviar: CaviarSpec { form, betas, smoothing_g: ADA_G, alpha }, connection, gammas };
    let (vs, es) = caviar_es_paths(&spec, window, v0, x0)
        .map_err(|e| Error::fitting(e.to_string(), Some(spec.caviar.betas.clone())))?;
    let n = window.len();
    let next = TailEstimate { var: vs[n], es: es[n], alpha };
    let objective = (0..n).map(|t| al_score_point(window[t], vs[t], es[t], alpha)).sum::<f64>() / n as f64;
    Ok(CaviarEsFit { spec, v0, x0, objective, next })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CareForm {
    /// `μ_t = β₁ + β₂ μ_{t−1} + β₃|r_{t−1}|`
    Sav,
    /// `μ_t = β₁ + β₂ μ_{t−1} + (β₃ I(r_{t−1} > 0) + β₄ I(r_{t−1} < 0))|r_{t−1}|`
    As,
    /// `μ_t = −√(β₁ + β₂ μ²_{t−1} + β₃ r²_{t−1})`
    Ig,
}

impl CareForm {
    pub fn n_betas(self) -> usize {
        match self {
            CareForm::As => 4,
            _ => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CareForm::Sav => "SAV",
            CareForm::As => "AS",
            CareForm::Ig => "IG",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CareSpec {
    pub form: CareForm,
    pub betas: Vec<f64>,
    pub tau: f64,
}

impl CareSpec {
    pub fn validate(&self) -> Result<()> {
        if self.betas.len() != self.form.n_betas() {
            return Err(Error::InvalidInput(format!(
                "CARE-{} takes {} betas, got {}",
                self.form.label(),
                self.form.n_betas(),
                self.betas.len()
            )));
        }
        if self.form == CareForm::Ig && self.betas.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::Domain("CARE-IG betas must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau < 0.5) {
            return Err(Error::Domain(format!("expectile level must be in (0, 0.5), got {}", self.tau)));
        }
        Ok(())
    }
}

#[inline]
fn care_step(form: CareForm, b: &[f64], mu: f64, r: f64) -> f64 {
    match form {
        CareForm::Sav => b[0] + b[1] * mu + b[2] * r.abs(),
        CareForm::As => {
            let slope = if r > 0.0 {
                b[2]
            } else if r < 0.0 {
                b[3]
            } else {
                0.0
            };
            b[0] + b[1] * mu + slope * r.abs()
        }
        CareForm::Ig => {
            let inner = b[0] + b[1] * mu * mu + b[2] * r * r;
            if inner >= 0.0 {
                -inner.sqrt()
            } else {
                f64::NAN
            }
        }
    }
}

/// Expectile recursion started at `mu0`; length `returns.len() + 1`.
pub fn care_path(spec: &CareSpec, returns: &[f64], mu0: f64) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut path = Vec::with_capacity(returns.len() + 1);
    let mut mu = mu0;
    path.push(mu);
    for &r in returns {
        mu = care_step(spec.form, &spec.betas, mu, r);
        if !mu.is_finite() {
            return Err(Error::Domain(format!("CARE-{} recursion left the feasible region", spec.form.label())));
        }
        path.push(mu);
    }
    Ok(path)
}

/// Mean asymmetric squared loss of a CARE path; `+inf` if infeasible.
fn care_objective(form: CareForm, b: &[f64], tau: f64, returns: &[f64], mu0: f64) -> f64 {
    if explosive(b) {
        return f64::INFINITY;
    }
    let mut mu = mu0;
    let mut acc = 0.0;
    for &r in returns {
        let d = r - mu;
        acc += if r < mu { 1.0 - tau } else { tau } * d * d;
        mu = care_step(form, b, mu, r);
        if !mu.is_finite() {
            return f64::INFINITY;
        }
    }
    acc / returns.len() as f64
}

fn care_decode(form: CareForm, x: &[f64]) -> Vec<f64> {
    match form {
        CareForm::Ig => x.iter().map(|v| v.exp()).collect(),
        _ => x.to_vec(),
    }
}

fn care_encode(form: CareForm, b: &[f64]) -> Vec<f64> {
    match form {
        CareForm::Ig => b.iter().map(|v| v.max(1e-300).ln()).collect(),
        _ => b.to_vec(),
    }
}

fn care_to_unit(form: CareForm, b: &[f64], s: f64) -> Vec<f64> {
    let mut out = b.to_vec();
    match form {
        CareForm::Ig => out[0] /= s * s,
        _ => out[0] /= s,
    }
    out
}

/// How the expectile level is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TauPolicy {
    /// Bisection so that the in-sample share of returns below the fitted path equals `alpha`.
    Calibrated,
    /// Use the given level as is.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CareFit {
    pub spec: CareSpec,
    pub mu0: f64,
    /// Mean asymmetric squared loss at `spec.tau`.
    pub objective: f64,
    /// Share of in-window returns below the fitted path.
    pub coverage: f64,
    /// Expectile forecast for the observation after the window.
    pub next_mu: f64,
}

fn fit_care_at_tau(
    window: &[f64],
    unit: &[f64],
    s: f64,
    form: CareForm,
    tau: f64,
    opts: &QuantileFitOptions,
    warm_start: Option<&[f64]>,
) -> Result<CareFit> {
    let mu0 = sample_expectile(&window[..window.len().min(INITIAL_SPAN)], tau);
    let m0 = mu0 / s;
    let objective = |x: &[f64]| care_objective(form, &care_decode(form, x), tau, unit, m0);
    let mut best = None;
    if let Some(w) = warm_start {
        let x0 = care_encode(form, &care_to_unit(form, w, s));
        best = best_of(best, nelder_mead(objective, &x0, &opts.warm()));
    }
    if best.is_none() {
        let mean_abs = unit.iter().map(|r| r.abs()).sum::<f64>() / unit.len() as f64;
        let mean_sq = unit.iter().map(|r| r * r).sum::<f64>() / unit.len() as f64;
        let lvl = m0.min(-1e-3);
        let start = |p: f64, share: f64| -> Vec<f64> {
            match form {
                CareForm::Sav => caviar_start(CaviarForm::Sav, lvl, mean_abs, mean_sq, p, share),
                CareForm::As => caviar_start(CaviarForm::As, lvl, mean_abs, mean_sq, p, share),
                CareForm::Ig => caviar_start(CaviarForm::Ig, lvl, mean_abs, mean_sq, p, share),
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xca7e);
        let mut starts = vec![start(0.8, 0.5)];
        for _ in 1..opts.multi_starts.max(1) {
            starts.push(start(rng.gen_range(0.5..0.97), rng.gen_range(0.1..0.9)));
        }
        for st in starts {
            best = best_of(best, nelder_mead(objective, &care_encode(form, &st), &opts.cold()));
        }
    }
    let best = best.ok_or_else(|| Error::fitting(format!("CARE-{}: no feasible start", form.label()), None))?;
    let betas = care_to_unit(form, &care_decode(form, &best.x), 1.0 / s);
    let spec = CareSpec { form, betas, tau };
    let path = care_path(&spec, window, mu0).map_err(|e| Error::fitting(e.to_string(), Some(spec.betas.clone())))?;
    let n = window.len();
    let below = (0..n).filter(|&t| window[t] < path[t]).count();
    Ok(CareFit {
        objective: care_objective(form, &spec.betas, tau, window, mu0),
        coverage: below as f64 / n as f64,
        next_mu: path[n],
        spec,
        mu0,
    })
}

/// Largest number of refits spent calibrating the expectile level.
pub const CARE_MAX_REFITS: usize = 30;

/// Fits a CARE model; with [`TauPolicy::Calibrated`] the expectile level is
/// found by bisection on in-sample coverage.
pub fn fit_care(
    window: &[f64],
    form: CareForm,
    alpha: f64,
    policy: TauPolicy,
    opts: &QuantileFitOptions,
    warm_start: Option<&CareSpec>,
) -> Result<CareFit> {
    let s = check_window(window, alpha)?;
    let unit: Vec<f64> = window.iter().map(|r| r / s).collect();
    let warm = warm_start.filter(|w| w.form == form);
    match policy {
        TauPolicy::Fixed(tau) => {
            if !(tau > 0.0 && tau < 0.5) {
                return Err(Error::Domain(format!("expectile level must be in (0, 0.5), got {tau}")));
            }
            fit_care_at_tau(window, &unit, s, form, tau, opts, warm.map(|w| w.betas.as_slice()))
        }
        TauPolicy::Calibrated => {
            // bisection in ln τ; coverage rises with τ
            let (mut lo, mut hi) = (1e-5_f64.ln(), 0.5_f64.ln());
            let mut prev: Option<Vec<f64>> = warm.map(|w| w.betas.clone());
            let mut refits = 0;
            let probe = |tau: f64, prev: &mut Option<Vec<f64>>, refits: &mut usize| -> Result<CareFit> {
                *refits += 1;
                let fit = fit_care_at_tau(window, &unit, s, form, tau.min(0.4999), opts, prev.as_deref())?;
                *prev = Some(fit.spec.betas.clone());
                Ok(fit)
            };
            // start from the previous level when one is known
            let mut best = if let Some(w) = warm {
                let guess = w.tau.ln();
                let f = probe(w.tau, &mut prev, &mut refits)?;
                if f.coverage > alpha {
                    hi = guess;
                } else {
                    lo = guess;
                }
                Some(f)
            } else {
                let f_lo = probe(lo.exp(), &mut prev, &mut refits)?;
                let f_hi = probe(0.4999, &mut prev, &mut refits)?;
                if f_lo.coverage > alpha || f_hi.coverage < alpha {
                    return Err(Error::Convergence {
                        message: format!("CARE-{} coverage does not bracket {alpha}", form.label()),
                        lo: 1e-5,
                        hi: 0.5,
                    });
                }
                Some(if (f_lo.coverage - alpha).abs() <= (f_hi.coverage - alpha).abs() { f_lo } else { f_hi })
            };
            let tol = 0.5 / window.len() as f64;
            while refits < CARE_MAX_REFITS {
                if best.as_ref().is_some_and(|b| (b.coverage - alpha).abs() <= tol) {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let f = probe(mid.exp(), &mut prev, &mut refits)?;
                if f.coverage > alpha {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if best.as_ref().is_none_or(|b| (f.coverage - alpha).abs() < (b.coverage - alpha).abs()) {
                    best = Some(f);
                }
            }
            best.ok_or_else(|| Error::Internal("calibration produced no fit".into()))
        }
    }
}

/// VaR and ES implied by an expectile forecast.
pub fn care_var_es(spec: &CareSpec, mu_tau: f64, alpha: f64) -> Result<TailEstimate> {
    let tau = spec.tau;
    if !(tau > 0.0 && tau < 0.5) {
        return Err(Error::Domain(format!("expectile level must be in (0, 0.5), got {tau}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if !(mu_tau < 0.0) {
        return Err(Error::Domain(format!("expectile forecast {mu_tau} is not negative")));
    }
    let es = (1.0 + tau / ((1.0 - 2.0 * tau) * alpha)) * mu_tau;
    Ok(TailEstimate { var: mu_tau, es, alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn hs_example() {
        let mut w = vec![-5.0, -4.0, -3.0, -2.0, -1.0];
        w.extend((0..95).map(|i| i as f64 * 0.1));
        let f = hs_forecast(&w, 0.05).unwrap();
        assert_eq!(f.var, -1.0);
        assert!((f.es + 3.5).abs() < 1e-12);
    }

    #[test]
    fn hs_constant_window_uses_fallback() {
        let f = hs_forecast(&[-0.4; 50], 0.05).unwrap();
        assert_eq!(f.var, -0.4);
        assert!((f.es + 0.4).abs() < 1e-15);
    }

    #[test]
    fn hs_short_window() {
        assert!(matches!(hs_forecast(&[1.0; 19], 0.05), Err(Error::InsufficientData(_))));
        assert!(hs_forecast(&[1.0; 20], 0.05).is_ok());
    }

    #[test]
    fn identity_recursions_hold_level() {
        let r = normals(50, 1);
        let sav = CaviarSpec::new(CaviarForm::Sav, vec![0.0, 1.0, 0.0], 0.05).unwrap();
        assert!(caviar_path(&sav, &r, -1.3).unwrap().iter().all(|&v| v == -1.3));
        let ig = CaviarSpec::new(CaviarForm::Ig, vec![1e-300, 1.0, 1e-300], 0.05).unwrap();
        assert!(caviar_path(&ig, &r, -2.0).unwrap().iter().all(|&v| (v + 2.0).abs() < 1e-12));
    }

    #[test]
    fn ada_step_without_violation() {
        let spec = CaviarSpec::new(CaviarForm::Ada, vec![0.4], 0.05).unwrap();
        let p = caviar_path(&spec, &[3.0], -2.0).unwrap();
        let expected = -2.0 + 0.4 * (1.0 / (1.0 + (10.0_f64 * 5.0).exp()) - 0.05);
        assert_eq!(p[1], expected);
    }

    #[test]
    fn ig_rejects_nonpositive_betas() {
        assert!(CaviarSpec::new(CaviarForm::Ig, vec![0.1, 0.0, 0.1], 0.05).is_err());
    }

    #[test]
    fn sample_expectile_at_half_is_mean() {
        let x = normals(500, 2);
        let m = x.iter().sum::<f64>() / 500.0;
        assert!((sample_expectile(&x, 0.5) - m).abs() < 1e-12);
    }

    #[test]
    fn care_es_multiplier() {
        let spec = CareSpec { form: CareForm::Sav, betas: vec![0.0, 1.0, 0.0], tau: 0.0135 };
        let f = care_var_es(&spec, -1.0, 0.05).unwrap();
        assert!((f.es + (1.0 + 0.0135 / (0.973 * 0.05))).abs() < 1e-12);
        assert!(f.es < f.var);
        let bad = CareSpec { tau: 0.5, ..spec };
        assert!(care_var_es(&bad, -1.0, 0.05).is_err());
    }

    #[test]
    fn caviar_fit_tracks_iid_quantile() {
        let x = normals(1000, 3);
        let fit = fit_caviar(&x, CaviarForm::Sav, 0.05, &QuantileFitOptions::default(), None).unwrap();
        let mut s = x.clone();
        s.sort_by(f64::total_cmp);
        let q = quantile_sorted(&s, 0.05);
        assert!((fit.next_var - q).abs() < 0.15, "{} vs {q}", fit.next_var);
    }

    #[test]
    fn ada_fit_matches_constant_quantile() {
        let x = normals(1000, 3);
        let fit = fit_caviar(&x, CaviarForm::Ada, 0.05, &QuantileFitOptions::default(), None).unwrap();
        let mut s = x.clone();
        s.sort_by(f64::total_cmp);
        let q = quantile_sorted(&s, 0.05);
        let flat = x.iter().map(|&r| quantile_loss_point(r, q, 0.05)).sum::<f64>() / x.len() as f64;
        assert!(fit.objective < flat * 1.02, "{} vs {flat}", fit.objective);
        assert!((fit.next_var - q).abs() < 0.3, "{} vs {q}", fit.next_var);
    }

    #[test]
    fn caviar_es_paths_never_cross() {
        let x = normals(800, 4);
        let opts = QuantileFitOptions { max_evals: 2000, ..Default::default() };
        for (form, conn) in [(CaviarForm::Sav, EsConnection::Ar), (CaviarForm::As, EsConnection::Exp)] {
            let fit = fit_caviar_es(&x, form, conn, 0.05, &opts, None).unwrap();
            let (v, e) = caviar_es_paths(&fit.spec, &x, fit.v0, fit.x0).unwrap();
            assert!(v.iter().zip(&e).all(|(v, e)| e < v && *e < 0.0));
            assert!(fit.next.es < fit.next.var);
        }
    }

    #[test]
    fn care_calibration_on_normal_sample() {
        let x = normals(3000, 5);
        let opts = QuantileFitOptions { max_evals: 2000, multi_starts: 2, ..Default::default() };
        let fit = fit_care(&x, CareForm::Sav, 0.05, TauPolicy::Calibrated, &opts, None).unwrap();
        assert!((fit.coverage - 0.05).abs() < 0.01, "{}", fit.coverage);
        assert!((fit.spec.tau - 0.0124).abs() < 0.006, "{}", fit.spec.tau);
    }
}
