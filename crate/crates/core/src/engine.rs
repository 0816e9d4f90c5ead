//! Rolling-window forecasting, rolling combination, the simulation data
//! generator and the simulation study.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backtest::{dq_test, quantile_loss, violation_ratio, HitSequence};
use crate::combination::{
    combine_median, combine_simple_average, combined_forecast, fit_joint_combination, fit_quantile_lasso_cv,
    CombinationWeights, JointFit, JointOptions, LassoComboSpec, LAMBDA_GRID,
};
use crate::distributions::{nominal_es_level, DistKind, NominalClass, TailEstimate};
use crate::error::{Error, Result};
use crate::optim::BfgsOptions;
use crate::quantile_models::{
    care_path, care_var_es, caviar_es_paths, fit_care, fit_caviar_es, hs_forecast, initial_exceedance,
    initial_quantile, sample_expectile, CareForm, CareSpec, CaviarEsSpec, CaviarForm, EsConnection, QuantileFitOptions,
    TauPolicy, INITIAL_SPAN,
};
use crate::series::{hourly_grid, parse_timestamp, ReturnSeries};
use crate::volatility::{fit_garch_family, forecast_var_es, log_likelihood, FitOptions, VolFamily, VolModelSpec};

/// A forecasting model that can be rolled through a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelId {
    /// Historical simulation on the trailing `hs_window` returns.
    Hs,
    Vol(VolFamily, DistKind),
    CaviarEs(CaviarForm, EsConnection),
    Care(CareForm),
}

impl ModelId {
    /// Nominal class used to backtest this model's ES column.
    pub fn nominal_class(self) -> NominalClass {
        match self {
            ModelId::Vol(_, d) => NominalClass::Parametric(d),
            _ => NominalClass::Semiparametric,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelId::Hs => write!(f, "HS"),
            ModelId::Vol(VolFamily::Ewma, DistKind::Normal) => write!(f, "EWMA"),
            ModelId::Vol(fam, d) => write!(f, "{}-{}", fam.label(), d.suffix()),
            ModelId::CaviarEs(form, c) => write!(f, "CAViaR-ES-{}-{}", form.label(), c.label()),
            ModelId::Care(form) => write!(f, "CARE-{}", form.label()),
        }
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("unknown model id {s:?}"));
        let t = s.trim();
        if t.eq_ignore_ascii_case("HS") {
            return Ok(ModelId::Hs);
        }
        if t.eq_ignore_ascii_case("EWMA") {
            return Ok(ModelId::Vol(VolFamily::Ewma, DistKind::Normal));
        }
        let upper = t.to_ascii_uppercase();
        if let Some(rest) = upper.strip_prefix("CAVIAR-ES-") {
            let (form, conn) = rest.split_once('-').ok_or_else(bad)?;
            let form = caviar_form(form).ok_or_else(bad)?;
            let conn = match conn {
                "EXP" => EsConnection::Exp,
                "AR" => EsConnection::Ar,
                _ => return Err(bad()),
            };
            return Ok(ModelId::CaviarEs(form, conn));
        }
        if let Some(rest) = upper.strip_prefix("CARE-") {
            return Ok(ModelId::Care(match rest {
                "SAV" => CareForm::Sav,
                "AS" => CareForm::As,
                "IG" => CareForm::Ig,
                _ => return Err(bad()),
            }));
        }
        let (fam, dist) = upper.split_once('-').ok_or_else(bad)?;
        let fam = match fam {
            "EWMA" => VolFamily::Ewma,
            "GARCH" => VolFamily::Garch11,
            "EGARCH" => VolFamily::Egarch11,
            "GJRGARCH" | "GJR" => VolFamily::GjrGarch11,
            _ => return Err(bad()),
        };
        let dist = DistKind::from_suffix(dist).filter(|d| *d != DistKind::AsymmetricLaplace).ok_or_else(bad)?;
        Ok(ModelId::Vol(fam, dist))
    }
}

fn caviar_form(s: &str) -> Option<CaviarForm> {
    Some(match s {
        "SAV" => CaviarForm::Sav,
        "AS" => CaviarForm::As,
        "IG" => CaviarForm::Ig,
        "ADA" => CaviarForm::Ada,
        _ => return None,
    })
}

impl Serialize for ModelId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ModelId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a comma-separated model list.
pub fn parse_model_list(s: &str) -> Result<Vec<ModelId>> {
    let models: Vec<ModelId> = s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    if models.is_empty() {
        return Err(Error::InvalidInput("empty model list".into()));
    }
    Ok(models)
}

/// The nine individual models of the simulation study.
pub fn study_models() -> Vec<ModelId> {
    vec![
        ModelId::Vol(VolFamily::Ewma, DistKind::Normal),
        ModelId::Vol(VolFamily::Garch11, DistKind::Normal),
        ModelId::Vol(VolFamily::Garch11, DistKind::StudentT),
        ModelId::Vol(VolFamily::GjrGarch11, DistKind::Normal),
        ModelId::Vol(VolFamily::GjrGarch11, DistKind::StudentT),
        ModelId::Care(CareForm::As),
        ModelId::Care(CareForm::Sav),
        ModelId::CaviarEs(CaviarForm::Sav, EsConnection::Ar),
        ModelId::CaviarEs(CaviarForm::As, EsConnection::Exp),
    ]
}

/// Default model list for rolling runs: historical simulation plus the study models.
pub fn default_models() -> Vec<ModelId> {
    let mut m = vec![ModelId::Hs];
    m.extend(study_models());
    m
}

/// How CARE models pick their expectile level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CareTau {
    /// Calibrate so that in-sample coverage matches alpha.
    #[default]
    Calibrated,
    /// Use the expectile level equal to alpha.
    Alpha,
}

impl CareTau {
    fn policy(self, alpha: f64) -> TauPolicy {
        match self {
            CareTau::Calibrated => TauPolicy::Calibrated,
            CareTau::Alpha => TauPolicy::Fixed(alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingPlan {
    pub initial_window: usize,
    pub hs_window: usize,
    pub combo_window: usize,
    pub eval_tail: usize,
    pub alphas: Vec<f64>,
    pub models: Vec<ModelId>,
    pub seed: u64,
    #[serde(default)]
    pub care_tau: CareTau,
}

impl Default for RollingPlan {
    fn default() -> Self {
        RollingPlan {
            initial_window: 2000,
            hs_window: 168,
            combo_window: 1251,
            eval_tail: 1200,
            alphas: vec![0.01, 0.05],
            models: default_models(),
            seed: 0,
            care_tau: CareTau::Calibrated,
        }
    }
}

impl RollingPlan {
    pub fn validate(&self, series_len: usize) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::InvalidInput("no alpha levels requested".into()));
        }
        if let Some(a) = self.alphas.iter().find(|&&a| a != 0.01 && a != 0.05) {
            return Err(Error::InvalidInput(format!("alpha {a} not in {{0.01, 0.05}}")));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidInput("empty model list".into()));
        }
        if self.initial_window + 1 > series_len {
            return Err(Error::InsufficientData(format!(
                "initial window {} needs a series of at least {} returns, got {series_len}",
                self.initial_window,
                self.initial_window + 1
            )));
        }
        if self.models.contains(&ModelId::Hs) && (self.hs_window == 0 || self.hs_window > self.initial_window) {
            return Err(Error::InvalidInput(format!(
                "hs window {} must lie in [1, {}]",
                self.hs_window, self.initial_window
            )));
        }
        Ok(())
    }
}

/// Aligned one-step forecasts: row `t` holds every model's forecast of `realized[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPanel {
    pub model_ids: Vec<String>,
    pub timestamps: Vec<NaiveDateTime>,
    /// `time × models`.
    pub var: Vec<Vec<f64>>,
    /// `time × models`.
    pub es: Vec<Vec<f64>>,
    pub realized: Vec<f64>,
    pub alpha: f64,
}

impl ForecastPanel {
    pub fn len(&self) -> usize {
        self.realized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realized.is_empty()
    }

    pub fn column_index(&self, model: &str) -> Option<usize> {
        self.model_ids.iter().position(|m| m == model)
    }

    pub fn var_column(&self, j: usize) -> Vec<f64> {
        self.var.iter().map(|r| r[j]).collect()
    }

    pub fn es_column(&self, j: usize) -> Vec<f64> {
        self.es.iter().map(|r| r[j]).collect()
    }

    /// Rows `[start, end)`.
    pub fn rows(&self, start: usize, end: usize) -> ForecastPanel {
        ForecastPanel {
            model_ids: self.model_ids.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
            var: self.var[start..end].to_vec(),
            es: self.es[start..end].to_vec(),
            realized: self.realized[start..end].to_vec(),
            alpha: self.alpha,
        }
    }

    fn check(&self) -> Result<()> {
        let t = self.realized.len();
        let k = self.model_ids.len();
        if self.timestamps.len() != t || self.var.len() != t || self.es.len() != t {
            return Err(Error::Internal("panel parts have different lengths".into()));
        }
        if self.var.iter().chain(&self.es).any(|r| r.len() != k) {
            return Err(Error::Internal("panel row width differs from model count".into()));
        }
        Ok(())
    }
}

/// Level at which a model's ES column is backtested.
pub fn es_level_for(model_id: &str, alpha: f64) -> Result<f64> {
    let class = model_id.parse::<ModelId>().map(ModelId::nominal_class).unwrap_or(NominalClass::Semiparametric);
    nominal_es_level(class, None, alpha)
}

/// What happened to a model at a forecast origin that failed to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellIssue {
    pub model: String,
    pub alpha: f64,
    /// Row of the panel (forecast index) at which the fit failed.
    pub row: usize,
    pub message: String,
    /// `true` when the column was dropped, `false` when the previous parameters were reused.
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingRun {
    /// One panel per requested alpha, in plan order.
    pub panels: Vec<ForecastPanel>,
    pub issues: Vec<CellIssue>,
}

#[derive(Debug, Clone)]
enum Fitted {
    None,
    Vol(VolModelSpec),
    CaviarEs(CaviarEsSpec),
    Care(CareSpec),
}

fn warm_bfgs() -> BfgsOptions {
    BfgsOptions { max_iters: 200, g_tol: 1e-6, f_tol: 1e-10 }
}

/// Refits `model` on `window` and forecasts the next return.
fn fit_and_forecast(
    model: ModelId,
    window: &[f64],
    hs_window: usize,
    alpha: f64,
    care_tau: CareTau,
    seed: u64,
    prev: &Fitted,
) -> Result<(TailEstimate, Fitted)> {
    match model {
        ModelId::Hs => Ok((hs_forecast(&window[window.len() - hs_window..], alpha)?, Fitted::None)),
        ModelId::Vol(family, dist) => {
            let warm = match prev {
                Fitted::Vol(s) => Some(*s),
                _ => None,
            };
            let opts = if warm.is_some() {
                FitOptions { seed, warm_start: warm, multi_starts: 0, bfgs: warm_bfgs() }
            } else {
                FitOptions { seed, ..FitOptions::default() }
            };
            let fit = fit_garch_family(window, family, dist, &opts)?;
            let f = forecast_var_es(&fit.spec, &fit.state, alpha)?;
            Ok((f, Fitted::Vol(fit.spec)))
        }
        ModelId::CaviarEs(form, conn) => {
            let warm = match prev {
                Fitted::CaviarEs(s) => Some(s),
                _ => None,
            };
            let opts = QuantileFitOptions { seed, ..QuantileFitOptions::default() };
            let fit = fit_caviar_es(window, form, conn, alpha, &opts, warm)?;
            Ok((fit.next, Fitted::CaviarEs(fit.spec)))
        }
        ModelId::Care(form) => {
            let warm = match prev {
                Fitted::Care(s) => Some(s),
                _ => None,
            };
            let opts = QuantileFitOptions { seed, ..QuantileFitOptions::default() };
            let fit = fit_care(window, form, alpha, care_tau.policy(alpha), &opts, warm)?;
            let f = care_var_es(&fit.spec, fit.next_mu, alpha)?;
            Ok((f, Fitted::Care(fit.spec)))
        }
    }
}

/// Runs previously fitted parameters through `window` without refitting.
fn forecast_with(fitted: &Fitted, window: &[f64], alpha: f64) -> Result<TailEstimate> {
    match fitted {
        Fitted::None => Err(Error::InvalidInput("no earlier parameters to reuse".into())),
        Fitted::Vol(spec) => {
            let (_, state) = log_likelihood(spec, window)?;
            forecast_var_es(spec, &state, alpha)
        }
        Fitted::CaviarEs(spec) => {
            let v0 = initial_quantile(window, alpha);
            let x0 = initial_exceedance(window, v0);
            let (v, e) = caviar_es_paths(spec, window, v0, x0)?;
            Ok(TailEstimate { var: v[window.len()], es: e[window.len()], alpha })
        }
        Fitted::Care(spec) => {
            let mu0 = sample_expectile(&window[..window.len().min(INITIAL_SPAN)], spec.tau);
            let path = care_path(spec, window, mu0)?;
            care_var_es(spec, path[window.len()], alpha)
        }
    }
}

fn valid_forecast(f: &TailEstimate) -> Result<()> {
    if f.var.is_finite() && f.es.is_finite() && f.es < f.var {
        Ok(())
    } else {
        Err(Error::Domain(format!("invalid forecast pair var {} es {}", f.var, f.es)))
    }
}

/// Per-cell seed derived from the plan seed, model position, alpha position and row.
fn cell_seed(seed: u64, model: usize, alpha: usize, row: usize) -> u64 {
    let mut x = seed ^ ((model as u64) << 48) ^ ((alpha as u64) << 40) ^ row as u64;
    // splitmix64 finaliser
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

struct Column {
    var: Vec<f64>,
    es: Vec<f64>,
    issues: Vec<CellIssue>,
    dropped: bool,
}

fn roll_column(
    returns: &[f64],
    plan: &RollingPlan,
    model: ModelId,
    model_pos: usize,
    alpha: f64,
    alpha_pos: usize,
) -> Result<Column> {
    let t0 = plan.initial_window;
    let rows = returns.len() - t0;
    let mut col =
        Column { var: Vec::with_capacity(rows), es: Vec::with_capacity(rows), issues: Vec::new(), dropped: false };
    let mut fitted = Fitted::None;
    let name = model.to_string();
    for row in 0..rows {
        // the window ends just before the return being forecast
        let window = &returns[row..row + t0];
        let seed = cell_seed(plan.seed, model_pos, alpha_pos, row);
        let attempt = fit_and_forecast(model, window, plan.hs_window, alpha, plan.care_tau, seed, &fitted)
            .and_then(|(f, next)| valid_forecast(&f).map(|_| (f, next)));
        let f = match attempt {
            Ok((f, next)) => {
                fitted = next;
                f
            }
            Err(e) if e.is_internal() => return Err(e),
            Err(e) => {
                let reused = forecast_with(&fitted, window, alpha).and_then(|f| valid_forecast(&f).map(|_| f));
                match reused {
                    Ok(f) => {
                        col.issues.push(CellIssue {
                            model: name.clone(),
                            alpha,
                            row,
                            message: e.to_string(),
                            dropped: false,
                        });
                        f
                    }
                    Err(_) => {
                        col.issues.push(CellIssue {
                            model: name.clone(),
                            alpha,
                            row,
                            message: e.to_string(),
                            dropped: true,
                        });
                        col.dropped = true;
                        return Ok(col);
                    }
                }
            }
        };
        col.var.push(f.var);
        col.es.push(f.es);
    }
    Ok(col)
}

/// Rolls every model of the plan through the series. Each forecast for
/// `returns[t]` is computed from `returns[t - initial_window .. t]` only.
///
/// Models are rolled on separate threads; the result does not depend on scheduling.
pub fn run_rolling(series: &ReturnSeries, plan: &RollingPlan) -> Result<RollingRun> {
    plan.validate(series.len())?;
    let returns = series.returns();
    let t0 = plan.initial_window;
    let jobs: Vec<(usize, ModelId, usize, f64)> = plan
        .alphas
        .iter()
        .enumerate()
        .flat_map(|(ai, &a)| plan.models.iter().enumerate().map(move |(mi, &m)| (mi, m, ai, a)))
        .collect();
    let results: Vec<Result<Column>> = std::thread::scope(|scope| {
        let handles: Vec<_> =
            jobs.iter().map(|&(mi, m, ai, a)| scope.spawn(move || roll_column(returns, plan, m, mi, a, ai))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Internal("forecast worker panicked".into()))))
            .collect()
    });

    let rows = returns.len() - t0;
    let mut panels = Vec::new();
    let mut issues = Vec::new();
    let mut results = results.into_iter();
    for &alpha in &plan.alphas {
        let mut panel = ForecastPanel {
            model_ids: Vec::new(),
            timestamps: series.timestamps()[t0..].to_vec(),
            var: vec![Vec::new(); rows],
            es: vec![Vec::new(); rows],
            realized: returns[t0..].to_vec(),
            alpha,
        };
        for &model in &plan.models {
            let col = results.next().ok_or_else(|| Error::Internal("missing forecast column".into()))??;
            issues.extend(col.issues);
            if col.dropped {
                continue;
            }
            panel.model_ids.push(model.to_string());
            for (r, (v, e)) in col.var.into_iter().zip(col.es).enumerate() {
                panel.var[r].push(v);
                panel.es[r].push(e);
            }
        }
        if panel.model_ids.is_empty() {
            return Err(Error::fitting(format!("every model failed at alpha {alpha}"), None));
        }
        panel.check()?;
        panels.push(panel);
    }
    Ok(RollingRun { panels, issues })
}

pub const SIMPLE_AVERAGE: &str = "SIMPLE-AVERAGE";
pub const MEDIAN: &str = "MEDIAN";
pub const JOINT_AL: &str = "JOINT-AL";

/// Evaluation cap for warm-started joint fits in the rolling combination.
pub const JOINT_WARM_EVALS: usize = 2_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationRun {
    /// The last `time - combo_window` rows of the input panel with the three combined columns appended.
    pub panel: ForecastPanel,
    /// Joint weights used for each output row.
    pub weights: Vec<CombinationWeights>,
    /// Output rows at which the joint fit was infeasible and equal weights were used.
    pub fallback_rows: Vec<usize>,
    /// Output rows at which a combined ES was moved below its VaR.
    pub clamped_rows: Vec<usize>,
}

/// Re-estimates combination weights on each trailing `combo_window` rows and
/// forecasts the next row.
pub fn run_combination(panel: &ForecastPanel, plan: &RollingPlan) -> Result<CombinationRun> {
    panel.check()?;
    let n = plan.combo_window;
    if n == 0 || panel.len() < n + 1 {
        return Err(Error::InsufficientData(format!(
            "combination window {n} needs a panel of at least {} rows, got {}",
            n + 1,
            panel.len()
        )));
    }
    for name in [SIMPLE_AVERAGE, MEDIAN, JOINT_AL] {
        if panel.column_index(name).is_some() {
            return Err(Error::InvalidInput(format!("panel already holds a {name} column")));
        }
    }
    let alpha = panel.alpha;
    let mut out = panel.rows(n, panel.len());
    out.model_ids.extend([SIMPLE_AVERAGE, MEDIAN, JOINT_AL].map(String::from));
    let mut weights = Vec::new();
    let mut fallback_rows = Vec::new();
    let mut clamped_rows = Vec::new();
    let mut prev: Option<CombinationWeights> = None;
    let k = panel.model_ids.len();
    for t in n..panel.len() {
        let row = t - n;
        let lo = t - n;
        let opts = JointOptions {
            alpha,
            multi_starts: 5,
            max_evals: if prev.is_some() { JOINT_WARM_EVALS } else { 10_000 },
            window_id: row,
            warm_start: prev.clone(),
        };
        let w = match fit_joint_combination(&panel.var[lo..t], &panel.es[lo..t], &panel.realized[lo..t], &opts) {
            Ok(JointFit { weights, .. }) => weights,
            Err(Error::Infeasible(_)) | Err(Error::Domain(_)) => {
                fallback_rows.push(row);
                CombinationWeights::equal(k, k, row)
            }
            Err(e) => return Err(e),
        };
        let (var_row, es_row) = (&panel.var[t], &panel.es[t]);
        let mut push = |v: f64, e: f64, clamp_row: &mut Vec<usize>| {
            let e = if e >= v {
                clamp_row.push(row);
                v - 1e-8
            } else {
                e
            };
            out.var[row].push(v);
            out.es[row].push(e);
        };
        push(combine_simple_average(var_row)?, combine_simple_average(es_row)?, &mut clamped_rows);
        push(combine_median(var_row)?, combine_median(es_row)?, &mut clamped_rows);
        let (f, clamped) = combined_forecast(&w, var_row, es_row, alpha)?;
        if clamped {
            clamped_rows.push(row);
        }
        out.var[row].push(f.var);
        out.es[row].push(f.es);
        prev = Some(w.clone());
        weights.push(w);
    }
    clamped_rows.dedup();
    out.check()?;
    Ok(CombinationRun { panel: out, weights, fallback_rows, clamped_rows })
}

/// Burn-in discarded by [`simulate_dgp`].
pub const DGP_BURN_IN: usize = 500;

/// Simulates the EGARCH(1,1) process
/// `ln σ²ₜ₊₁ = 0.025 + 0.25(|εₜ| + 0.035εₜ)/σₜ + 0.065 ln σ²ₜ`,
/// `rₜ = 0.025 + εₜ`, `εₜ = 0.85σₜzₜ` with standard Laplace `zₜ`.
pub fn simulate_dgp(n: usize, seed: u64) -> Result<ReturnSeries> {
    if n < 100 {
        return Err(Error::InvalidInput(format!("simulated series needs at least 100 points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // start at the stationary mean of ln σ², using E|z| = 1
    let mut ln_s2: f64 = (0.025 + 0.25 * 0.85) / (1.0 - 0.065);
    let mut out = Vec::with_capacity(n);
    for i in 0..n + DGP_BURN_IN {
        let sigma = (0.5 * ln_s2).exp();
        let u: f64 = rng.gen::<f64>() - 0.5;
        let z = -u.signum() * (1.0 - 2.0 * u.abs()).ln();
        let eps = 0.85 * sigma * z;
        if i >= DGP_BURN_IN {
            out.push(0.025 + eps);
        }
        ln_s2 = 0.025 + 0.25 * (eps.abs() + 0.035 * eps) / sigma + 0.065 * ln_s2;
    }
    ReturnSeries::from_returns(out)
}

/// Simulation-study sizes.
pub const STUDY_SAMPLE: usize = 3500;
pub const STUDY_WINDOW: usize = 1000;
pub const STUDY_ALPHA: f64 = 0.05;

/// Expectile levels for the ES LASSO variants, with their labels.
pub const QLASSO_ES_LEVELS: [(&str, f64); 4] =
    [("QLASSO-N", 0.0196), ("QLASSO-T(4)", 0.0164), ("QLASSO-T(6)", 0.0175), ("QLASSO-AL", 0.0184)];

/// Backtest of one series at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub level: f64,
    pub vrate: f64,
    pub vratio: f64,
    pub dq4_stat: f64,
    pub dq4_p: f64,
    /// DQ with four lags not rejected at 5%.
    pub dq4_accept: bool,
    pub qlf: f64,
    /// Rank of `qlf` among rows with the same kind of series (1 is lowest).
    pub qlf_rank: usize,
}

fn level_metrics(returns: &[f64], forecasts: &[f64], level: f64) -> Result<LevelMetrics> {
    let (vrate, vratio) = violation_ratio(returns, forecasts, level)?;
    let hits = HitSequence::new(returns, forecasts, level)?;
    let dq = dq_test(&hits, forecasts, 4)?;
    Ok(LevelMetrics {
        level,
        vrate,
        vratio,
        dq4_stat: dq.stat,
        dq4_p: dq.p_value,
        dq4_accept: dq.p_value >= 0.05,
        qlf: quantile_loss(returns, forecasts, level)?,
        qlf_rank: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub model: String,
    pub var: Option<LevelMetrics>,
    pub es: Option<LevelMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub seed: u64,
    pub rows: Vec<StudyRow>,
    /// Rolling forecasts of the individual models.
    pub panel: ForecastPanel,
    pub issues: Vec<CellIssue>,
    /// Combinations fitted on panel rows `[0, fit_end)`.
    pub qlasso_var: LassoComboSpec,
    pub qlasso_es: Vec<(String, LassoComboSpec)>,
    pub joint: JointFit,
    pub fit_end: usize,
    /// Every row of the table is evaluated on panel rows `[eval_start, len)`.
    pub eval_start: usize,
}

impl StudyOutput {
    pub fn row(&self, model: &str) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.model == model)
    }
}

fn assign_ranks(rows: &mut [StudyRow], pick: fn(&mut StudyRow) -> Option<&mut LevelMetrics>) {
    let mut q: Vec<(f64, usize)> =
        rows.iter_mut().enumerate().filter_map(|(i, r)| pick(r).map(|m| (m.qlf, i))).collect();
    q.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (rank, (_, i)) in q.into_iter().enumerate() {
        if let Some(m) = pick(&mut rows[i]) {
            m.qlf_rank = rank + 1;
        }
    }
}

/// How the LASSO combinations of the study are estimated and evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StudyProtocol {
    /// Fit on the whole forecast panel and evaluate every row on the same panel.
    #[default]
    InSample,
    /// Fit on the first half of the panel and evaluate every row on the second half.
    SplitSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct StudyOptions {
    pub protocol: StudyProtocol,
}

/// [`run_simulation_study_with`] under default options.
pub fn run_simulation_study(seed: u64) -> Result<StudyOutput> {
    run_simulation_study_with(seed, &StudyOptions::default())
}

/// Simulates the DGP, rolls the nine study models with a window of 1000,
/// combines VaR and ES by quantile LASSO and backtests every series.
pub fn run_simulation_study_with(seed: u64, opts: &StudyOptions) -> Result<StudyOutput> {
    let series = simulate_dgp(STUDY_SAMPLE, seed)?;
    let plan = RollingPlan {
        initial_window: STUDY_WINDOW,
        alphas: vec![STUDY_ALPHA],
        models: study_models(),
        seed,
        care_tau: CareTau::Alpha,
        ..RollingPlan::default()
    };
    let run = run_rolling(&series, &plan)?;
    let panel = run.panels.into_iter().next().ok_or_else(|| Error::Internal("no panel produced".into()))?;
    let t = panel.len();
    let (fit_end, eval_start) = match opts.protocol {
        StudyProtocol::InSample => (t, 0),
        StudyProtocol::SplitSample => (t / 2, t / 2),
    };
    let realized = &panel.realized;
    let train_y = &realized[..fit_end];
    let test_y = &realized[eval_start..];

    let mut rows = Vec::new();
    for (j, id) in panel.model_ids.iter().enumerate() {
        let var = panel.var_column(j);
        let es = panel.es_column(j);
        let level = es_level_for(id, STUDY_ALPHA)?;
        rows.push(StudyRow {
            model: id.clone(),
            var: Some(level_metrics(test_y, &var[eval_start..], STUDY_ALPHA)?),
            es: Some(level_metrics(test_y, &es[eval_start..], level)?),
        });
    }

    let qlasso_var = fit_quantile_lasso_cv(&panel.var[..fit_end], train_y, STUDY_ALPHA, &LAMBDA_GRID)?.spec;
    let pred: Vec<f64> = panel.var[eval_start..].iter().map(|x| qlasso_var.predict(x)).collect();
    rows.push(StudyRow { model: "QLASSO".into(), var: Some(level_metrics(test_y, &pred, STUDY_ALPHA)?), es: None });

    let mut qlasso_es = Vec::new();
    for (name, tau) in QLASSO_ES_LEVELS {
        let spec = fit_quantile_lasso_cv(&panel.es[..fit_end], train_y, tau, &LAMBDA_GRID)?.spec;
        let pred: Vec<f64> = panel.es[eval_start..].iter().map(|x| spec.predict(x)).collect();
        rows.push(StudyRow { model: name.into(), var: None, es: Some(level_metrics(test_y, &pred, tau)?) });
        qlasso_es.push((name.to_string(), spec));
    }
    assign_ranks(&mut rows, |r| r.var.as_mut());
    assign_ranks(&mut rows, |r| r.es.as_mut());

    let joint =
        fit_joint_combination(&panel.var[..fit_end], &panel.es[..fit_end], train_y, &JointOptions::new(STUDY_ALPHA))?;
    Ok(StudyOutput { seed, rows, panel, issues: run.issues, qlasso_var, qlasso_es, joint, fit_end, eval_start })
}

/// Writes the study table as comma-separated values.
pub fn write_study_csv<W: Write>(out: &StudyOutput, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "model",
        "var_vrate",
        "var_vratio",
        "var_dq4_p",
        "var_dq4",
        "var_qlf",
        "var_qlf_rank",
        "es_level",
        "es_vrate",
        "es_vratio",
        "es_dq4_p",
        "es_dq4",
        "es_qlf",
        "es_qlf_rank",
    ])?;
    let accept = |b: bool| if b { "ACCEPT" } else { "REJECT" };
    for r in &out.rows {
        let mut rec = vec![r.model.clone()];
        match &r.var {
            Some(m) => rec.extend([
                m.vrate.to_string(),
                m.vratio.to_string(),
                m.dq4_p.to_string(),
                accept(m.dq4_accept).to_string(),
                m.qlf.to_string(),
                m.qlf_rank.to_string(),
            ]),
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        match &r.es {
            Some(m) => rec.extend([
                m.level.to_string(),
                m.vrate.to_string(),
                m.vratio.to_string(),
                m.dq4_p.to_string(),
                accept(m.dq4_accept).to_string(),
                m.qlf.to_string(),
                m.qlf_rank.to_string(),
            ]),
            None => rec.extend(std::iter::repeat_n(String::new(), 7)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Writes panels in long form with header `timestamp,model,alpha,var,es,realized`.
pub fn write_panels<W: Write>(panels: &[ForecastPanel], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "model", "alpha", "var", "es", "realized"])?;
    for p in panels {
        p.check()?;
        for (j, m) in p.model_ids.iter().enumerate() {
            for t in 0..p.len() {
                w.write_record([
                    p.timestamps[t].format(TIMESTAMP_FORMAT).to_string(),
                    m.clone(),
                    p.alpha.to_string(),
                    p.var[t][j].to_string(),
                    p.es[t][j].to_string(),
                    p.realized[t].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads panels written by [`write_panels`] or produced elsewhere in the same
/// layout. Every model must cover the same timestamps with the same realized
/// returns; panels are returned in order of first appearance of each alpha.
pub fn read_panels<R: Read>(reader: R) -> Result<Vec<ForecastPanel>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let expected = ["timestamp", "model", "alpha", "var", "es", "realized"];
    if headers != expected {
        return Err(Error::Parse { line: 1, message: format!("expected header {}", expected.join(",")) });
    }
    struct Building {
        alpha: f64,
        models: Vec<String>,
        cells: HashMap<(NaiveDateTime, usize), (f64, f64)>,
        realized: HashMap<NaiveDateTime, f64>,
        times: Vec<NaiveDateTime>,
    }
    let mut panels: Vec<Building> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if rec.len() != 6 {
            return Err(Error::Parse { line, message: format!("expected 6 columns, found {}", rec.len()) });
        }
        let num = |k: usize, what: &str| -> Result<f64> {
            rec[k].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                line,
                message: format!("column {what}: {:?} is not a finite number", &rec[k]),
            })
        };
        let ts = parse_timestamp(&rec[0])
            .ok_or_else(|| Error::Parse { line, message: format!("column timestamp: cannot parse {:?}", &rec[0]) })?;
        let model = rec[1].to_string();
        if model.is_empty() {
            return Err(Error::Parse { line, message: "column model: empty".into() });
        }
        let (alpha, var, es, realized) = (num(2, "alpha")?, num(3, "var")?, num(4, "es")?, num(5, "realized")?);
        let b = match panels.iter().position(|p| p.alpha == alpha) {
            Some(k) => &mut panels[k],
            None => {
                panels.push(Building {
                    alpha,
                    models: Vec::new(),
                    cells: HashMap::new(),
                    realized: HashMap::new(),
                    times: Vec::new(),
                });
                panels.last_mut().expect("just pushed")
            }
        };
        let mj = match b.models.iter().position(|m| *m == model) {
            Some(j) => j,
            None => {
                b.models.push(model);
                b.models.len() - 1
            }
        };
        match b.realized.get(&ts) {
            Some(&r) if r != realized => {
                return Err(Error::Parse {
                    line,
                    message: format!("column realized: {realized} disagrees with {r} for {ts}"),
                })
            }
            Some(_) => {}
            None => {
                b.realized.insert(ts, realized);
                b.times.push(ts);
            }
        }
        if b.cells.insert((ts, mj), (var, es)).is_some() {
            return Err(Error::Parse { line, message: format!("duplicate row for model {} at {ts}", b.models[mj]) });
        }
    }
    if panels.is_empty() {
        return Err(Error::Parse { line: 1, message: "panel file has no rows".into() });
    }
    let mut out = Vec::new();
    for mut b in panels {
        b.times.sort();
        let mut var = Vec::with_capacity(b.times.len());
        let mut es = Vec::with_capacity(b.times.len());
        for ts in &b.times {
            let mut vr = Vec::with_capacity(b.models.len());
            let mut er = Vec::with_capacity(b.models.len());
            for (j, m) in b.models.iter().enumerate() {
                let &(v, e) = b.cells.get(&(*ts, j)).ok_or_else(|| Error::Parse {
                    line: 0,
                    message: format!("model {m} has no forecast at {ts} for alpha {}", b.alpha),
                })?;
                vr.push(v);
                er.push(e);
            }
            var.push(vr);
            es.push(er);
        }
        let realized = b.times.iter().map(|t| b.realized[t]).collect();
        out.push(ForecastPanel { model_ids: b.models, timestamps: b.times, var, es, realized, alpha: b.alpha });
    }
    Ok(out)
}

/// Builds a panel from raw columns on an hourly grid.
pub fn panel_from_columns(
    model_ids: Vec<String>,
    var_cols: &[Vec<f64>],
    es_cols: &[Vec<f64>],
    realized: Vec<f64>,
    alpha: f64,
) -> Result<ForecastPanel> {
    let t = realized.len();
    if var_cols.len() != model_ids.len() || es_cols.len() != model_ids.len() {
        return Err(Error::InvalidInput("column count differs from model count".into()));
    }
    if var_cols.iter().chain(es_cols).any(|c| c.len() != t) {
        return Err(Error::InvalidInput("column length differs from realized length".into()));
    }
    let var = (0..t).map(|i| var_cols.iter().map(|c| c[i]).collect()).collect();
    let es = (0..t).map(|i| es_cols.iter().map(|c| c[i]).collect()).collect();
    Ok(ForecastPanel { model_ids, timestamps: hourly_grid(t), var, es, realized, alpha })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_ids_round_trip() {
        for m in default_models() {
            assert_eq!(m.to_string().parse::<ModelId>().unwrap(), m);
        }
        assert_eq!("GARCH-N".parse::<ModelId>().unwrap().to_string(), "GARCH-N");
        assert_eq!("caviar-es-ada-exp".parse::<ModelId>().unwrap().to_string(), "CAViaR-ES-ADA-EXP");
        assert!("GARCH-AL".parse::<ModelId>().is_err());
        assert!("FOO".parse::<ModelId>().is_err());
    }

    #[test]
    fn dgp_is_deterministic_and_sized() {
        let a = simulate_dgp(3500, 11).unwrap();
        let b = simulate_dgp(3500, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3500);
        assert_ne!(a, simulate_dgp(3500, 12).unwrap());
        assert!(simulate_dgp(99, 0).is_err());
    }

    #[test]
    fn rolling_counts_and_alignment() {
        let s = simulate_dgp(700, 3).unwrap();
        let plan = RollingPlan {
            initial_window: 600,
            hs_window: 168,
            alphas: vec![0.05],
            models: vec![ModelId::Hs, "EWMA".parse().unwrap()],
            ..RollingPlan::default()
        };
        let run = run_rolling(&s, &plan).unwrap();
        let p = &run.panels[0];
        assert_eq!(p.len(), 100);
        assert_eq!(p.realized, s.returns()[600..].to_vec());
        assert_eq!(p.timestamps, s.timestamps()[600..].to_vec());
        // HS row 0 uses the 168 returns before index 600
        let hs = hs_forecast(&s.returns()[432..600], 0.05).unwrap();
        assert_eq!(p.var[0][0], hs.var);
        assert_eq!(p.es[0][0], hs.es);
    }

    #[test]
    fn constant_series_drops_ewma_column() {
        let s = ReturnSeries::from_returns(vec![0.5; 400]).unwrap();
        let plan = RollingPlan {
            initial_window: 300,
            alphas: vec![0.05],
            models: vec!["EWMA".parse().unwrap(), ModelId::Hs],
            ..RollingPlan::default()
        };
        let run = run_rolling(&s, &plan);
        match run {
            Ok(r) => {
                assert!(!r.panels[0].model_ids.contains(&"EWMA".to_string()));
                assert!(r.issues.iter().any(|i| i.model == "EWMA" && i.dropped));
            }
            Err(e) => assert!(!e.is_internal(), "{e}"),
        }
    }

    #[test]
    fn too_short_series() {
        let s = simulate_dgp(200, 0).unwrap();
        let err = run_rolling(&s, &RollingPlan::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn single_model_combination_reproduces_model() {
        let n = 60;
        let var: Vec<f64> = (0..n).map(|i| -1.0 - 0.01 * (i % 5) as f64).collect();
        let es: Vec<f64> = var.iter().map(|v| v * 1.4).collect();
        let realized: Vec<f64> = (0..n).map(|i| ((i * 13) % 11) as f64 / 5.0 - 1.2).collect();
        let p =
            panel_from_columns(vec!["M".into()], std::slice::from_ref(&var), std::slice::from_ref(&es), realized, 0.05)
                .unwrap();
        let plan = RollingPlan { combo_window: 40, ..RollingPlan::default() };
        let c = run_combination(&p, &plan).unwrap();
        assert_eq!(c.panel.len(), 20);
        for r in 0..20 {
            for j in 1..4 {
                assert_eq!(c.panel.var[r][j], var[40 + r]);
                assert_eq!(c.panel.es[r][j], es[40 + r]);
            }
        }
    }

    #[test]
    fn panel_csv_round_trip() {
        let p = panel_from_columns(
            vec!["A".into(), "B".into()],
            &[vec![-1.0, -1.1, -1.2], vec![-0.9, -0.8, -0.7]],
            &[vec![-1.5, -1.6, -1.7], vec![-1.2, -1.3, -1.4]],
            vec![0.1, -0.2, 0.3],
            0.05,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_panels(std::slice::from_ref(&p), &mut buf).unwrap();
        let back = read_panels(buf.as_slice()).unwrap();
        assert_eq!(back, vec![p]);
    }

    #[test]
    fn panel_csv_errors_name_the_line() {
        let text = "timestamp,model,alpha,var,es,realized\n2000-01-01 00:00:00,A,0.05,-1,-2,0.1\n2000-01-01 01:00:00,A,0.05,abc,-2,0.1\n";
        match read_panels(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("var"));
            }
            other => panic!("{other:?}"),
        }
    }
}
