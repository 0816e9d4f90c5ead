//! Forecast evaluation: violation ratios, coverage tests, loss functions and
//! the model confidence set.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// `(r − v)(α − I(r < v))`
#[inline]
pub fn quantile_loss_point(r: f64, v: f64, alpha: f64) -> f64 {
    (r - v) * (alpha - if r < v { 1.0 } else { 0.0 })
}

/// AL log score of one `(VaR, ES)` pair; requires `es < 0`.
#[inline]
pub fn al_score_point(r: f64, v: f64, es: f64, alpha: f64) -> f64 {
    let ind = if r <= v { 1.0 } else { 0.0 };
    -((alpha - 1.0) / es).ln() - (r - v) * (alpha - ind) / (alpha * es)
}

fn check_aligned(returns: &[f64], forecasts: &[f64]) -> Result<()> {
    if returns.is_empty() {
        return Err(Error::InsufficientData("no observations to evaluate".into()));
    }
    if returns.len() != forecasts.len() {
        return Err(Error::InvalidInput(format!("{} returns but {} forecasts", returns.len(), forecasts.len())));
    }
    Ok(())
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("level must be in (0, 1), got {level}")))
    }
}

/// Violation indicators `I(r_t < f_t)` and their deviations from the level.
#[derive(Debug, Clone, PartialEq)]
pub struct HitSequence {
    pub hits: Vec<u8>,
    pub alpha: f64,
    pub demeaned: Vec<f64>,
}

impl HitSequence {
    pub fn new(returns: &[f64], forecasts: &[f64], alpha: f64) -> Result<Self> {
        check_aligned(returns, forecasts)?;
        check_level(alpha)?;
        let hits: Vec<u8> = returns.iter().zip(forecasts).map(|(r, f)| u8::from(r < f)).collect();
        Ok(Self::from_hits(hits, alpha))
    }

    pub fn from_hits(hits: Vec<u8>, alpha: f64) -> Self {
        let demeaned = hits.iter().map(|&h| h as f64 - alpha).collect();
        HitSequence { hits, alpha, demeaned }
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn violations(&self) -> usize {
        self.hits.iter().map(|&h| h as usize).sum()
    }
}

/// `(vrate, vratio)`: share of returns below the forecasts, and that share over `level`.
pub fn violation_ratio(returns: &[f64], forecasts: &[f64], level: f64) -> Result<(f64, f64)> {
    let h = HitSequence::new(returns, forecasts, level)?;
    let vrate = h.violations() as f64 / h.len() as f64;
    Ok((vrate, vrate / level))
}

/// A test statistic with its asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub stat: f64,
    pub p_value: f64,
}

impl TestResult {
    pub fn rejects(&self, significance: f64) -> bool {
        self.p_value < significance
    }
}

fn chi2_sf(stat: f64, dof: f64) -> f64 {
    let d = ChiSquared::new(dof).expect("positive degrees of freedom");
    d.sf(stat.max(0.0)).clamp(0.0, 1.0)
}

/// `a ln b` with `0 ln 0 = 0`.
fn xlny(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * b.ln()
    }
}

/// Kupiec unconditional coverage likelihood ratio, χ²(1).
pub fn uc_test(hits: &HitSequence) -> TestResult {
    let m = hits.len() as f64;
    let n = hits.violations() as f64;
    let a = hits.alpha;
    let p = n / m;
    let restricted = xlny(m - n, 1.0 - a) + xlny(n, a);
    let unrestricted = xlny(m - n, 1.0 - p) + xlny(n, p);
    let stat = (2.0 * (unrestricted - restricted)).max(0.0);
    TestResult { stat, p_value: chi2_sf(stat, 1.0) }
}

/// Christoffersen independence likelihood ratio from first-order transition counts.
pub fn independence_stat(hits: &HitSequence) -> f64 {
    let mut n = [[0.0_f64; 2]; 2];
    for w in hits.hits.windows(2) {
        n[w[0] as usize][w[1] as usize] += 1.0;
    }
    let (n00, n01, n10, n11) = (n[0][0], n[0][1], n[1][0], n[1][1]);
    let total = n00 + n01 + n10 + n11;
    if total == 0.0 {
        return 0.0;
    }
    let pi = (n01 + n11) / total;
    let pi01 = if n00 + n01 > 0.0 { n01 / (n00 + n01) } else { 0.0 };
    let pi11 = if n10 + n11 > 0.0 { n11 / (n10 + n11) } else { 0.0 };
    let restricted = xlny(n00 + n10, 1.0 - pi) + xlny(n01 + n11, pi);
    let unrestricted = xlny(n00, 1.0 - pi01) + xlny(n01, pi01) + xlny(n10, 1.0 - pi11) + xlny(n11, pi11);
    (2.0 * (unrestricted - restricted)).max(0.0)
}

/// Christoffersen conditional coverage: UC plus independence, χ²(2).
pub fn cc_test(hits: &HitSequence) -> Result<TestResult> {
    if hits.len() < 2 {
        return Err(Error::InsufficientData("conditional coverage needs two observations".into()));
    }
    let stat = uc_test(hits).stat + independence_stat(hits);
    Ok(TestResult { stat, p_value: chi2_sf(stat, 2.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqResult {
    pub stat: f64,
    pub p_value: f64,
    /// `W′W` was singular and a pseudo-inverse was used.
    pub rank_deficient: bool,
}

/// Dynamic quantile test with `k` lagged hits, χ²(k + 2).
///
/// The regressors at row `t` are `(1, H_{t−1}, …, H_{t−k}, VaR_t)`; lags before
/// the first observation are zero.
pub fn dq_test(hits: &HitSequence, forecasts: &[f64], k: usize) -> Result<DqResult> {
    let m = hits.len();
    if forecasts.len() != m {
        return Err(Error::InvalidInput(format!("{m} hits but {} forecasts", forecasts.len())));
    }
    if k == 0 {
        return Err(Error::InvalidInput("dq test needs at least one lag".into()));
    }
    if m < k + 10 {
        return Err(Error::InsufficientData(format!("dq test with {k} lags needs {} observations", k + 10)));
    }
    let h = &hits.demeaned;
    let cols = k + 2;
    let w = DMatrix::from_fn(m, cols, |t, j| match j {
        0 => 1.0,
        j if j <= k => {
            if t >= j {
                h[t - j]
            } else {
                0.0
            }
        }
        _ => forecasts[t],
    });
    let hv = DVector::from_column_slice(h);
    let wtw = w.transpose() * &w;
    let wth = w.transpose() * &hv;
    let svd = wtw.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let rank_deficient = !(smin > 1e-12 * smax);
    let inv = if rank_deficient {
        svd.pseudo_inverse(1e-12 * smax).map_err(|e| Error::Internal(e.to_string()))?
    } else {
        wtw.try_inverse().ok_or_else(|| Error::Internal("regressor cross-product not invertible".into()))?
    };
    let a = hits.alpha;
    let stat = ((wth.transpose() * inv * &wth)[(0, 0)] / (a * (1.0 - a))).max(0.0);
    Ok(DqResult { stat, p_value: chi2_sf(stat, cols as f64), rank_deficient })
}

/// Total quantile loss `Σ(r_t − VaR_t)(α − I(r_t < VaR_t))`.
pub fn quantile_loss(returns: &[f64], var: &[f64], alpha: f64) -> Result<f64> {
    check_aligned(returns, var)?;
    Ok(returns.iter().zip(var).map(|(&r, &v)| quantile_loss_point(r, v, alpha)).sum())
}

/// Per-observation AL log scores.
pub fn al_log_scores(returns: &[f64], var: &[f64], es: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_aligned(returns, var)?;
    check_aligned(returns, es)?;
    check_level(alpha)?;
    if let Some(t) = es.iter().position(|&e| !(e < 0.0)) {
        return Err(Error::Domain(format!("ES forecast at index {t} is {}, must be negative", es[t])));
    }
    Ok((0..returns.len()).map(|t| al_score_point(returns[t], var[t], es[t], alpha)).collect())
}

/// Mean AL log score.
pub fn al_log_score(returns: &[f64], var: &[f64], es: &[f64], alpha: f64) -> Result<f64> {
    let s = al_log_scores(returns, var, es, alpha)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsOptions {
    pub bootstrap_reps: usize,
    pub block_length_mean: f64,
    pub seed: u64,
}

impl Default for McsOptions {
    fn default() -> Self {
        Self { bootstrap_reps: 1000, block_length_mean: 10.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsResult {
    /// Indices of the models in the set at the requested confidence.
    pub included: Vec<usize>,
    /// Elimination p-values, monotone along the elimination order.
    pub p_values: Vec<f64>,
    /// Every loss differential was constant; all models were kept.
    pub degenerate: bool,
}

impl McsResult {
    /// Models in the set at another confidence level, from the same p-values.
    pub fn included_at(&self, confidence: f64) -> Vec<usize> {
        (0..self.p_values.len()).filter(|&i| self.p_values[i] >= 1.0 - confidence).collect()
    }
}

/// Stationary-bootstrap resample of `0..n` with geometric block lengths.
pub fn stationary_bootstrap_indices<R: Rng + ?Sized>(n: usize, block_mean: f64, rng: &mut R) -> Vec<usize> {
    let p = 1.0 / block_mean.max(1.0);
    let mut out = Vec::with_capacity(n);
    let mut i = rng.gen_range(0..n);
    for _ in 0..n {
        out.push(i);
        i = if rng.gen::<f64>() < p { rng.gen_range(0..n) } else { (i + 1) % n };
    }
    out
}

/// Model confidence set with the range statistic `max |t_ij|`.
///
/// `losses[i]` is the loss series of model `i`. Models with identical loss
/// series are eliminated together.
pub fn model_confidence_set(losses: &[Vec<f64>], confidence: f64, opts: &McsOptions) -> Result<McsResult> {
    let k = losses.len();
    if k < 2 {
        return Err(Error::InvalidInput("model confidence set needs at least two models".into()));
    }
    let n = losses[0].len();
    if losses.iter().any(|l| l.len() != n) {
        return Err(Error::InvalidInput("loss series have different lengths".into()));
    }
    if n < 100 {
        return Err(Error::InsufficientData(format!("model confidence set needs 100 observations, got {n}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Domain(format!("confidence must be in (0, 1), got {confidence}")));
    }
    let reps = opts.bootstrap_reps.max(1);

    let mean = |l: &[f64]| l.iter().sum::<f64>() / n as f64;
    let means: Vec<f64> = losses.iter().map(|l| mean(l)).collect();
    // boot[b][i]: resampled mean loss of model i
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut boot = vec![vec![0.0; k]; reps];
    for row in boot.iter_mut() {
        let idx = stationary_bootstrap_indices(n, opts.block_length_mean, &mut rng);
        for (i, l) in losses.iter().enumerate() {
            row[i] = idx.iter().map(|&t| l[t]).sum::<f64>() / n as f64;
        }
    }

    let tiny = 1e-24 * (1.0 + means.iter().map(|m| m * m).fold(0.0, f64::max));
    let pair_var = |i: usize, j: usize| -> f64 {
        let d = means[i] - means[j];
        boot.iter().map(|b| (b[i] - b[j] - d).powi(2)).sum::<f64>() / reps as f64
    };
    let degenerate = (0..k).all(|i| (0..k).all(|j| pair_var(i, j) <= tiny));
    if degenerate {
        return Ok(McsResult { included: (0..k).collect(), p_values: vec![1.0; k], degenerate: true });
    }

    let identical = |i: usize, j: usize| losses[i] == losses[j];
    let mut alive: Vec<usize> = (0..k).collect();
    let mut p_values = vec![1.0; k];
    let mut running = 0.0_f64;
    while alive.len() > 1 {
        let m = alive.len();
        // pairwise range statistic
        let mut t_obs = 0.0_f64;
        let mut sds = vec![vec![0.0; m]; m];
        for a in 0..m {
            for b in (a + 1)..m {
                let (i, j) = (alive[a], alive[b]);
                let sd = pair_var(i, j).sqrt();
                sds[a][b] = sd;
                let d = means[i] - means[j];
                let t = if sd > tiny.sqrt() {
                    d.abs() / sd
                } else if d.abs() > 1e-12 * (1.0 + means[i].abs()) {
                    f64::INFINITY
                } else {
                    0.0
                };
                t_obs = t_obs.max(t);
            }
        }
        let mut exceed = 0usize;
        for bs in &boot {
            let mut t_b = 0.0_f64;
            for a in 0..m {
                for b in (a + 1)..m {
                    let sd = sds[a][b];
                    if sd > tiny.sqrt() {
                        let (i, j) = (alive[a], alive[b]);
                        let centred = (bs[i] - bs[j]) - (means[i] - means[j]);
                        t_b = t_b.max(centred.abs() / sd);
                    }
                }
            }
            if t_b >= t_obs {
                exceed += 1;
            }
        }
        let p = exceed as f64 / reps as f64;
        running = running.max(p);

        // eliminate the model with the largest standardised mean loss differential
        let mut worst = alive[0];
        let mut worst_t = f64::NEG_INFINITY;
        for &i in &alive {
            let di = alive.iter().map(|&j| means[i] - means[j]).sum::<f64>() / m as f64;
            let var = boot
                .iter()
                .map(|b| {
                    let bi = alive.iter().map(|&j| b[i] - b[j]).sum::<f64>() / m as f64;
                    (bi - di).powi(2)
                })
                .sum::<f64>()
                / reps as f64;
            let t = if var.sqrt() > tiny.sqrt() {
                di / var.sqrt()
            } else if di.abs() > 1e-12 * (1.0 + means[i].abs()) {
                di.signum() * f64::INFINITY
            } else {
                0.0
            };
            if t > worst_t {
                worst_t = t;
                worst = i;
            }
        }
        let group: Vec<usize> = alive.iter().copied().filter(|&j| identical(worst, j)).collect();
        if group.len() == alive.len() {
            break;
        }
        for &g in &group {
            p_values[g] = running;
        }
        alive.retain(|j| !group.contains(j));
    }
    let included = (0..k).filter(|&i| p_values[i] >= 1.0 - confidence).collect();
    Ok(McsResult { included, p_values, degenerate: false })
}

/// Evaluation of one forecast column at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub model_id: String,
    pub alpha: f64,
    pub n: usize,
    pub vrate: f64,
    pub vratio: f64,
    pub uc_stat: f64,
    pub uc_p: f64,
    pub cc_stat: f64,
    pub cc_p: f64,
    pub dq1_stat: f64,
    pub dq1_p: f64,
    pub dq4_stat: f64,
    pub dq4_p: f64,
    pub qlf: f64,
    pub al_score: Option<f64>,
    /// Level at which the ES column was backtested as if it were a VaR column.
    pub es_level: Option<f64>,
    pub es_rate: Option<f64>,
    pub es_ratio: Option<f64>,
    pub es_dq4_p: Option<f64>,
    pub es_qlf: Option<f64>,
    pub mcs75: Option<bool>,
    pub mcs90: Option<bool>,
}

/// Coverage, independence and loss summary of one series backtested at `level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub rate: f64,
    pub ratio: f64,
    pub uc: TestResult,
    pub cc: TestResult,
    pub dq1: DqResult,
    pub dq4: DqResult,
    pub qlf: f64,
}

/// Backtests a forecast series at `level`.
pub fn summarize_series(returns: &[f64], forecasts: &[f64], level: f64) -> Result<SeriesSummary> {
    let hits = HitSequence::new(returns, forecasts, level)?;
    let (rate, ratio) = violation_ratio(returns, forecasts, level)?;
    Ok(SeriesSummary {
        rate,
        ratio,
        uc: uc_test(&hits),
        cc: cc_test(&hits)?,
        dq1: dq_test(&hits, forecasts, 1)?,
        dq4: dq_test(&hits, forecasts, 4)?,
        qlf: quantile_loss(returns, forecasts, level)?,
    })
}

impl BacktestReport {
    /// Runs every test on a VaR column and, when given, its ES column at `es_level`.
    pub fn evaluate(
        model_id: &str,
        returns: &[f64],
        var: &[f64],
        es: Option<(&[f64], f64)>,
        alpha: f64,
    ) -> Result<Self> {
        let v = summarize_series(returns, var, alpha)?;
        let (mut al_score, mut es_level, mut es_rate, mut es_ratio, mut es_dq4_p, mut es_qlf) =
            (None, None, None, None, None, None);
        if let Some((es, level)) = es {
            let s = summarize_series(returns, es, level)?;
            al_score = al_log_score(returns, var, es, alpha).ok();
            es_level = Some(level);
            es_rate = Some(s.rate);
            es_ratio = Some(s.ratio);
            es_dq4_p = Some(s.dq4.p_value);
            es_qlf = Some(s.qlf);
        }
        Ok(BacktestReport {
            model_id: model_id.to_string(),
            alpha,
            n: returns.len(),
            vrate: v.rate,
            vratio: v.ratio,
            uc_stat: v.uc.stat,
            uc_p: v.uc.p_value,
            cc_stat: v.cc.stat,
            cc_p: v.cc.p_value,
            dq1_stat: v.dq1.stat,
            dq1_p: v.dq1.p_value,
            dq4_stat: v.dq4.stat,
            dq4_p: v.dq4.p_value,
            qlf: v.qlf,
            al_score,
            es_level,
            es_rate,
            es_ratio,
            es_dq4_p,
            es_qlf,
            mcs75: None,
            mcs90: None,
        })
    }

    /// `key = value` lines, one block per report.
    pub fn to_key_value(&self) -> String {
        let json = serde_json::to_value(self).expect("report serialises");
        let mut out = String::new();
        if let serde_json::Value::Object(map) = json {
            for (k, v) in map {
                let v = match v {
                    serde_json::Value::Null => "NA".to_string(),
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}

/// Writes reports as a comma-separated table with a header row.
pub fn write_reports_csv<W: Write>(reports: &[BacktestReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert!((quantile_loss(&[-2.0], &[-1.0], 0.05).unwrap() - 0.95).abs() < 1e-15);
        assert!((quantile_loss(&[0.0], &[-1.0], 0.05).unwrap() - 0.05).abs() < 1e-15);
        let s1 = al_log_score(&[-2.0], &[-1.0], &[-2.0], 0.05).unwrap();
        assert!((s1 - (-(0.475_f64).ln() + 9.5)).abs() < 1e-12);
        let s2 = al_log_score(&[0.0], &[-1.0], &[-2.0], 0.05).unwrap();
        assert!((s2 - 1.244_44).abs() < 1e-5);
    }

    #[test]
    fn al_score_rejects_nonnegative_es() {
        let e = al_log_score(&[0.0, 0.0], &[-1.0, -1.0], &[-2.0, 0.0], 0.05).unwrap_err();
        assert!(e.to_string().contains("index 1"));
    }

    #[test]
    fn exact_coverage_gives_zero_uc() {
        let mut hits = vec![0u8; 1200];
        for i in 0..60 {
            hits[i * 20] = 1;
        }
        let h = HitSequence::from_hits(hits, 0.05);
        let uc = uc_test(&h);
        assert!(uc.stat.abs() < 1e-9 && (uc.p_value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_violation_dq() {
        let h = HitSequence::from_hits(vec![0; 1200], 0.05);
        let var: Vec<f64> = (0..1200).map(|i| -1.0 - 0.1 * ((i as f64) * 0.37).sin()).collect();
        let dq = dq_test(&h, &var, 4).unwrap();
        assert!((dq.stat - 1200.0 * 0.05 / 0.95).abs() < 1e-8, "{}", dq.stat);
        let flat = dq_test(&h, &vec![-1.0; 1200], 1).unwrap();
        assert!(flat.rank_deficient);
        assert!((flat.stat - 1200.0 * 0.05 / 0.95).abs() < 1e-6);
    }

    #[test]
    fn alternating_hits_inflate_cc() {
        let hits: Vec<u8> = (0..200).map(|i| u8::from(i % 2 == 0)).collect();
        let h = HitSequence::from_hits(hits, 0.5);
        assert!(cc_test(&h).unwrap().stat > uc_test(&h).stat + 10.0);
    }

    #[test]
    fn identical_columns_are_kept() {
        let l: Vec<f64> = (0..300).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
        let r = model_confidence_set(&[l.clone(), l], 0.75, &McsOptions { bootstrap_reps: 200, ..Default::default() })
            .unwrap();
        assert_eq!(r.included, vec![0, 1]);
        assert_eq!(r.p_values, vec![1.0, 1.0]);
    }
}
