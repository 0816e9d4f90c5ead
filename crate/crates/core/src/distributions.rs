//! Residual distributions and closed-form VaR/ES estimators.
//!
//! All location-scale estimators return lower-tail values: for `alpha < 0.5`
//! the result satisfies `es < var < mu`. The normal and Student-t formulas
//! negate the tail-density term so ES sits below VaR; the skew-t estimator
//! uses the exact truncated first moment of Hansen's density.
//!
//! Student-t and skew-t are parametrised to have zero mean and unit variance,
//! so `sigma` is always the conditional standard deviation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::optim::{bfgs, BfgsOptions};

pub const NU_MIN: f64 = 2.05;
pub const NU_MAX: f64 = 100.0;
pub const LAMBDA_MAX: f64 = 0.99;

const SKEW_T_BRACKET: f64 = 50.0;
const SKEW_T_TOL: f64 = 1e-10;

/// Family of a residual law, without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DistKind {
    Normal,
    StudentT,
    SkewT,
    Laplace,
    AsymmetricLaplace,
}

impl DistKind {
    /// Suffix used in model names, e.g. `GARCH-T`.
    pub fn suffix(self) -> &'static str {
        match self {
            DistKind::Normal => "N",
            DistKind::StudentT => "T",
            DistKind::SkewT => "SKT",
            DistKind::Laplace => "L",
            DistKind::AsymmetricLaplace => "AL",
        }
    }

    pub fn from_suffix(s: &str) -> Option<Self> {
        Some(match s {
            "N" => DistKind::Normal,
            "T" => DistKind::StudentT,
            "SKT" => DistKind::SkewT,
            "L" => DistKind::Laplace,
            "AL" => DistKind::AsymmetricLaplace,
            _ => return None,
        })
    }
}

/// A residual law with its fitted shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum DistributionSpec {
    Normal,
    StudentT {
        nu: f64,
    },
    SkewT {
        nu: f64,
        lambda: f64,
    },
    /// Standard Laplace `L(0, 1)`, density `exp(-|z|) / 2`.
    Laplace,
    /// Asymmetric Laplace with quantile level `p` at zero.
    AsymmetricLaplace {
        p: f64,
    },
}

impl DistributionSpec {
    pub fn student_t(nu: f64) -> Result<Self> {
        check_nu_bounded(nu)?;
        Ok(DistributionSpec::StudentT { nu })
    }

    pub fn skew_t(nu: f64, lambda: f64) -> Result<Self> {
        check_nu_bounded(nu)?;
        if !(lambda.abs() < LAMBDA_MAX) {
            return Err(Error::Domain(format!("skew-t lambda {lambda} outside (-0.99, 0.99)")));
        }
        Ok(DistributionSpec::SkewT { nu, lambda })
    }

    pub fn kind(&self) -> DistKind {
        match self {
            DistributionSpec::Normal => DistKind::Normal,
            DistributionSpec::StudentT { .. } => DistKind::StudentT,
            DistributionSpec::SkewT { .. } => DistKind::SkewT,
            DistributionSpec::Laplace => DistKind::Laplace,
            DistributionSpec::AsymmetricLaplace { .. } => DistKind::AsymmetricLaplace,
        }
    }

    /// Density of the standardised law at `z`.
    pub fn pdf(&self, z: f64) -> f64 {
        match *self {
            DistributionSpec::Normal => std_normal().pdf(z),
            DistributionSpec::StudentT { nu } => SkewT::new(nu, 0.0).pdf(z),
            DistributionSpec::SkewT { nu, lambda } => SkewT::new(nu, lambda).pdf(z),
            DistributionSpec::Laplace => 0.5 * (-z.abs()).exp(),
            DistributionSpec::AsymmetricLaplace { p } => {
                p * (1.0 - p) * (-z * (p - if z <= 0.0 { 1.0 } else { 0.0 })).exp()
            }
        }
    }

    /// Log density of the standardised law; used by the likelihoods.
    pub fn ln_pdf(&self, z: f64) -> f64 {
        match *self {
            DistributionSpec::Normal => -0.5 * (z * z + LN_2PI),
            DistributionSpec::StudentT { nu } => SkewT::new(nu, 0.0).ln_pdf(z),
            DistributionSpec::SkewT { nu, lambda } => SkewT::new(nu, lambda).ln_pdf(z),
            _ => self.pdf(z).ln(),
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        match *self {
            DistributionSpec::Normal => std_normal().cdf(z),
            DistributionSpec::StudentT { nu } => SkewT::new(nu, 0.0).cdf(z),
            DistributionSpec::SkewT { nu, lambda } => SkewT::new(nu, lambda).cdf(z),
            DistributionSpec::Laplace => {
                if z < 0.0 {
                    0.5 * z.exp()
                } else {
                    1.0 - 0.5 * (-z).exp()
                }
            }
            DistributionSpec::AsymmetricLaplace { p } => {
                if z <= 0.0 {
                    p * ((1.0 - p) * z).exp()
                } else {
                    1.0 - (1.0 - p) * (-p * z).exp()
                }
            }
        }
    }

    /// Draw one standardised innovation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DistributionSpec::Normal => rng.sample(rand_distr::StandardNormal),
            DistributionSpec::StudentT { nu } => {
                let t: f64 = rng.sample(rand_distr::StudentT::new(nu).expect("nu > 0"));
                t * ((nu - 2.0) / nu).sqrt()
            }
            DistributionSpec::SkewT { nu, lambda } => {
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                SkewT::new(nu, lambda).quantile_closed_form(u)
            }
            DistributionSpec::Laplace => {
                let u: f64 = rng.gen_range(-0.5..0.5);
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            DistributionSpec::AsymmetricLaplace { p } => {
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                if u <= p {
                    (u / p).ln() / (1.0 - p)
                } else {
                    -((1.0 - u) / (1.0 - p)).ln() / p
                }
            }
        }
    }

    /// VaR/ES for a location-scale member of this family.
    pub fn tail_estimate(&self, mu: f64, sigma: f64, alpha: f64) -> Result<TailEstimate> {
        match *self {
            DistributionSpec::Normal => var_es_normal(mu, sigma, alpha),
            DistributionSpec::StudentT { nu } => var_es_student_t(mu, sigma, nu, alpha),
            DistributionSpec::SkewT { nu, lambda } => var_es_skew_t(mu, sigma, nu, lambda, alpha),
            _ => Err(Error::Domain(format!("no closed-form VaR/ES estimator for {:?}", self.kind()))),
        }
    }
}

fn check_nu_bounded(nu: f64) -> Result<()> {
    if !(nu > NU_MIN && nu <= NU_MAX) {
        return Err(Error::Domain(format!("degrees of freedom {nu} outside (2.05, 100]")));
    }
    Ok(())
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// One-step VaR/ES pair at tail probability `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub var: f64,
    pub es: f64,
    pub alpha: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0, 0.5)")));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("scale {sigma} must be positive and finite")));
    }
    Ok(())
}

pub fn var_es_normal(mu: f64, sigma: f64, alpha: f64) -> Result<TailEstimate> {
    check_alpha(alpha)?;
    check_sigma(sigma)?;
    let n = std_normal();
    let q = n.inverse_cdf(alpha);
    let tail = -n.pdf(q) / alpha;
    Ok(TailEstimate { var: mu + sigma * q, es: mu + sigma * tail, alpha })
}

/// Quantile of the (non-standardised) Student-t with `nu` degrees of freedom.
///
/// Starts from the incomplete-beta inversion and polishes with Newton steps
/// on the CDF, which brings it to near machine precision.
pub fn student_t_quantile(nu: f64, p: f64) -> f64 {
    let t = StudentsT::new(0.0, 1.0, nu).expect("nu > 0");
    let mut x = t.inverse_cdf(p);
    for _ in 0..3 {
        let d = t.pdf(x);
        if d <= 0.0 || !x.is_finite() {
            break;
        }
        let step = (t.cdf(x) - p) / d;
        x -= step;
        if step.abs() < 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

pub fn var_es_student_t(mu: f64, sigma: f64, nu: f64, alpha: f64) -> Result<TailEstimate> {
    check_alpha(alpha)?;
    check_sigma(sigma)?;
    if !(nu > 2.0) {
        return Err(Error::Domain(format!("degrees of freedom {nu} must exceed 2")));
    }
    let t = StudentsT::new(0.0, 1.0, nu).expect("nu > 2");
    let q = student_t_quantile(nu, alpha);
    let scale = ((nu - 2.0) / nu).sqrt();
    let tail = -(t.pdf(q) / alpha) * ((nu + q * q) / (nu - 1.0)) * scale;
    Ok(TailEstimate { var: mu + sigma * q * scale, es: mu + sigma * tail, alpha })
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConstantDerivatives {
    a_nu: f64,
    a_lambda: f64,
    b_nu: f64,
    b_lambda: f64,
    ln_c_nu: f64,
}

/// Hansen's skewed Student-t with zero mean and unit variance.
#[derive(Debug, Clone, Copy)]
pub struct SkewT {
    pub nu: f64,
    pub lambda: f64,
    a: f64,
    b: f64,
    c: f64,
    ln_bc: f64,
}

impl SkewT {
    pub fn new(nu: f64, lambda: f64) -> Self {
        let ln_c = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (std::f64::consts::PI * (nu - 2.0)).ln();
        let c = ln_c.exp();
        let a = 4.0 * lambda * c * (nu - 2.0) / (nu - 1.0);
        let b = (1.0 + 3.0 * lambda * lambda - a * a).sqrt();
        SkewT { nu, lambda, a, b, c, ln_bc: b.ln() + ln_c }
    }

    /// The knot `-a/b` where the two density branches meet.
    pub fn knot(&self) -> f64 {
        -self.a / self.b
    }

    pub fn constants(&self) -> (f64, f64, f64) {
        (self.a, self.b, self.c)
    }

    #[inline]
    fn branch_scale(&self, z: f64) -> f64 {
        if z < self.knot() {
            1.0 - self.lambda
        } else {
            1.0 + self.lambda
        }
    }

    #[inline]
    pub fn ln_pdf(&self, z: f64) -> f64 {
        let u = (self.b * z + self.a) / self.branch_scale(z);
        self.ln_bc - 0.5 * (self.nu + 1.0) * (u * u / (self.nu - 2.0)).ln_1p()
    }

    pub fn pdf(&self, z: f64) -> f64 {
        self.ln_pdf(z).exp()
    }

    /// Derivatives of `(a, b, ln c)` with respect to `ν` and `λ`.
    pub(crate) fn constant_derivatives(&self) -> ConstantDerivatives {
        let (nu, lambda, a, b, c) = (self.nu, self.lambda, self.a, self.b, self.c);
        let ln_c_nu = 0.5 * digamma((nu + 1.0) / 2.0) - 0.5 * digamma(nu / 2.0) - 0.5 / (nu - 2.0);
        let c_nu = c * ln_c_nu;
        let a_nu = 4.0 * lambda * (c_nu * (nu - 2.0) / (nu - 1.0) + c / ((nu - 1.0) * (nu - 1.0)));
        let a_lambda = 4.0 * c * (nu - 2.0) / (nu - 1.0);
        ConstantDerivatives {
            a_nu,
            a_lambda,
            b_nu: -a * a_nu / b,
            b_lambda: (3.0 * lambda - a * a_lambda) / b,
            ln_c_nu,
        }
    }

    /// Log density with its derivatives in `z`, `ν` and `λ`.
    #[inline]
    pub(crate) fn ln_pdf_grad(&self, z: f64, d: &ConstantDerivatives) -> (f64, f64, f64, f64) {
        let (nu, a, b) = (self.nu, self.a, self.b);
        let left = z < self.knot();
        let s = if left { 1.0 - self.lambda } else { 1.0 + self.lambda };
        let u = (b * z + a) / s;
        let nm2 = nu - 2.0;
        let q = nm2 + u * u;
        let l1p = (u * u / nm2).ln_1p();
        let f = self.ln_bc - 0.5 * (nu + 1.0) * l1p;
        let f_u = -(nu + 1.0) * u / q;
        let f_z = f_u * b / s;
        let f_a = f_u / s;
        let f_b = 1.0 / b + f_u * z / s;
        let f_nu_explicit = -0.5 * l1p + 0.5 * (nu + 1.0) * u * u / (nm2 * q);
        let f_s = -f_u * u / s;
        let ds_dl = if left { -1.0 } else { 1.0 };
        let f_nu = f_nu_explicit + f_a * d.a_nu + f_b * d.b_nu + d.ln_c_nu;
        let f_lambda = f_s * ds_dl + f_a * d.a_lambda + f_b * d.b_lambda;
        (f, f_z, f_nu, f_lambda)
    }

    fn t(&self) -> StudentsT {
        StudentsT::new(0.0, 1.0, self.nu).expect("nu > 2")
    }

    /// Piecewise CDF: left branch for `z < -a/b`, right branch otherwise.
    pub fn cdf(&self, z: f64) -> f64 {
        if z < self.knot() {
            self.cdf_left(z)
        } else {
            self.cdf_right(z)
        }
    }

    pub(crate) fn cdf_left(&self, z: f64) -> f64 {
        let w = (self.nu / (self.nu - 2.0)).sqrt();
        let l = 1.0 - self.lambda;
        l * self.t().cdf(w * (self.b * z + self.a) / l)
    }

    pub(crate) fn cdf_right(&self, z: f64) -> f64 {
        let w = (self.nu / (self.nu - 2.0)).sqrt();
        let r = 1.0 + self.lambda;
        (1.0 - self.lambda) / 2.0 + r * (self.t().cdf(w * (self.b * z + self.a) / r) - 0.5)
    }

    /// Quantile by bisection on the CDF over `[-50, 50]`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        let (mut lo, mut hi) = (-SKEW_T_BRACKET, SKEW_T_BRACKET);
        if !(self.cdf(lo) <= p && self.cdf(hi) >= p) {
            return Err(Error::Convergence { message: format!("skew-t quantile {p} not bracketed"), lo, hi });
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < SKEW_T_TOL {
                return Ok(0.5 * (lo + hi));
            }
        }
        Err(Error::Convergence { message: "skew-t bisection did not converge".into(), lo, hi })
    }

    /// Direct inversion through the Student-t quantile. Used for sampling.
    pub(crate) fn quantile_closed_form(&self, p: f64) -> f64 {
        let w = ((self.nu - 2.0) / self.nu).sqrt();
        let split = (1.0 - self.lambda) / 2.0;
        let u = if p < split {
            (1.0 - self.lambda) * w * student_t_quantile(self.nu, p / (1.0 - self.lambda))
        } else {
            (1.0 + self.lambda) * w * student_t_quantile(self.nu, 0.5 + (p - split) / (1.0 + self.lambda))
        };
        (u - self.a) / self.b
    }

    /// `E[z | z < q]` where `alpha = P(z < q)`.
    pub fn tail_mean(&self, q: f64, alpha: f64) -> f64 {
        let nu = self.nu;
        let k = (nu - 2.0) / (1.0 - nu);
        let g = |u: f64| (1.0 + u * u / (nu - 2.0)).powf((1.0 - nu) / 2.0);
        let l = 1.0 - self.lambda;
        let integral = if q < self.knot() {
            self.c * l * l / self.b * k * g((self.b * q + self.a) / l)
        } else {
            let r = 1.0 + self.lambda;
            self.c / self.b * k * (l * l + r * r * (g((self.b * q + self.a) / r) - 1.0))
        };
        integral / alpha - self.a / self.b
    }
}

pub fn var_es_skew_t(mu: f64, sigma: f64, nu: f64, lambda: f64, alpha: f64) -> Result<TailEstimate> {
    check_alpha(alpha)?;
    check_sigma(sigma)?;
    if !(nu > 2.0) {
        return Err(Error::Domain(format!("degrees of freedom {nu} must exceed 2")));
    }
    if !(lambda.abs() < 1.0) {
        return Err(Error::Domain(format!("skewness {lambda} outside (-1, 1)")));
    }
    let d = SkewT::new(nu, lambda);
    let q = d.quantile(alpha)?;
    let tail = d.tail_mean(q, alpha);
    Ok(TailEstimate { var: mu + sigma * q, es: mu + sigma * tail, alpha })
}

fn sigmoid_free(x: f64) -> f64 {
    // ν = 2.05 + exp(u)
    NU_MIN + x.exp()
}

/// Maximum-likelihood fit of the residual law's shape parameters.
///
/// Residuals are standardised to zero mean and unit variance before fitting.
/// `nu` is clipped to `(2.05, 100]` and `lambda` to `(-0.99, 0.99)`.
pub fn fit_distribution(residuals: &[f64], kind: DistKind) -> Result<DistributionSpec> {
    if residuals.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "distribution fit needs at least 100 residuals, got {}",
            residuals.len()
        )));
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Degenerate("residuals have zero or non-finite variance".into()));
    }
    let sd = var.sqrt();
    let z: Vec<f64> = residuals.iter().map(|r| (r - mean) / sd).collect();

    let clip_nu = |u: f64| sigmoid_free(u).min(NU_MAX);
    let clip_lambda = |v: f64| v.tanh().clamp(-LAMBDA_MAX + 1e-9, LAMBDA_MAX - 1e-9);

    let (starts, objective): (Vec<Vec<f64>>, Box<dyn Fn(&[f64]) -> f64>) = match kind {
        DistKind::Normal => return Ok(DistributionSpec::Normal),
        DistKind::Laplace => return Ok(DistributionSpec::Laplace),
        DistKind::AsymmetricLaplace => return Err(Error::Domain("asymmetric Laplace has no shape fit".into())),
        DistKind::StudentT => (
            vec![vec![(6.0 - NU_MIN).ln()], vec![(3.0 - NU_MIN).ln()], vec![(20.0 - NU_MIN).ln()]],
            Box::new(|p: &[f64]| {
                let d = SkewT::new(clip_nu(p[0]), 0.0);
                -z.iter().map(|&x| d.ln_pdf(x)).sum::<f64>() / n
            }),
        ),
        DistKind::SkewT => (
            vec![vec![(6.0 - NU_MIN).ln(), 0.0], vec![(3.0 - NU_MIN).ln(), 0.3], vec![(20.0 - NU_MIN).ln(), -0.3]],
            Box::new(|p: &[f64]| {
                let d = SkewT::new(clip_nu(p[0]), clip_lambda(p[1]));
                -z.iter().map(|&x| d.ln_pdf(x)).sum::<f64>() / n
            }),
        ),
    };

    let opts = BfgsOptions { max_iters: 200, g_tol: 1e-8, f_tol: 1e-12 };
    let best = starts
        .iter()
        .map(|s| {
            // keep the log-ν coordinate inside the region where clipping is inactive-ish
            bfgs(|p: &[f64]| if p[0] > 10.0 { f64::INFINITY } else { objective(p) }, s, &opts)
        })
        .filter(|m| m.value.is_finite())
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or_else(|| Error::fitting("no finite likelihood from any start", None))?;

    let nu = clip_nu(best.x[0]);
    Ok(match kind {
        DistKind::StudentT => DistributionSpec::StudentT { nu },
        _ => DistributionSpec::SkewT { nu, lambda: clip_lambda(best.x[1]) },
    })
}

/// Families that index the nominal-level table for ES backtesting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NominalClass {
    /// A parametric model with the given residual law.
    Parametric(DistKind),
    /// Historical simulation, CAViaR-ES, CARE and combinations.
    Semiparametric,
}

const NOMINAL_LEVELS: [(&str, f64, f64); 7] = [
    ("N", 0.0038, 0.0196),
    ("AL", 0.0037, 0.0184),
    ("t10", 0.0036, 0.0184),
    ("t6", 0.0034, 0.0175),
    ("t4", 0.0032, 0.0164),
    ("skt6", 0.0034, 0.0175),
    ("skt4", 0.0032, 0.0164),
];

fn table_cell(column: &str, alpha: f64) -> f64 {
    let row = NOMINAL_LEVELS.iter().find(|r| r.0 == column).expect("known column");
    if alpha == 0.01 {
        row.1
    } else {
        row.2
    }
}

/// Quantile level `δ_α` at which an ES series is backtested as if it were VaR.
///
/// Student-t columns are tabulated at 4, 6 and 10 degrees of freedom and
/// skew-t at 4 and 6; `nu` picks the nearest column. With `nu = None` the
/// 4-df column is used, the convention applied to fitted parametric models.
pub fn nominal_es_level(class: NominalClass, nu: Option<f64>, alpha: f64) -> Result<f64> {
    if alpha != 0.01 && alpha != 0.05 {
        return Err(Error::Lookup(format!("no nominal ES level tabulated for alpha {alpha}")));
    }
    let nearest = |cols: &[(f64, &'static str)]| -> &'static str {
        let v = nu.unwrap_or(4.0);
        cols.iter().min_by(|a, b| (a.0 - v).abs().total_cmp(&(b.0 - v).abs())).map(|c| c.1).expect("nonempty")
    };
    let column = match class {
        NominalClass::Semiparametric => return Ok(if alpha == 0.01 { 0.0036 } else { 0.018 }),
        NominalClass::Parametric(DistKind::Normal) => "N",
        NominalClass::Parametric(DistKind::AsymmetricLaplace) => "AL",
        NominalClass::Parametric(DistKind::StudentT) => nearest(&[(4.0, "t4"), (6.0, "t6"), (10.0, "t10")]),
        NominalClass::Parametric(DistKind::SkewT) => nearest(&[(4.0, "skt4"), (6.0, "skt6")]),
        NominalClass::Parametric(DistKind::Laplace) => {
            return Err(Error::Lookup("no nominal ES level tabulated for Laplace".into()))
        }
    };
    Ok(table_cell(column, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn skew_t_log_density_gradient_matches_finite_differences() {
        for &(nu, lambda) in &[(5.0, -0.3), (8.0, 0.0), (3.5, 0.6)] {
            let d = SkewT::new(nu, lambda);
            let cd = d.constant_derivatives();
            for &z in &[-3.0, -0.7, -0.05, 0.4, 2.5] {
                let (f, fz, fnu, fl) = d.ln_pdf_grad(z, &cd);
                assert!((f - d.ln_pdf(z)).abs() < 1e-12);
                let h = 1e-6;
                let nz = (d.ln_pdf(z + h) - d.ln_pdf(z - h)) / (2.0 * h);
                let nn = (SkewT::new(nu + h, lambda).ln_pdf(z) - SkewT::new(nu - h, lambda).ln_pdf(z)) / (2.0 * h);
                let nl = (SkewT::new(nu, lambda + h).ln_pdf(z) - SkewT::new(nu, lambda - h).ln_pdf(z)) / (2.0 * h);
                assert!((fz - nz).abs() < 1e-6, "z {fz} {nz}");
                assert!((fnu - nn).abs() < 1e-6, "nu {fnu} {nn}");
                assert!((fl - nl).abs() < 1e-6, "lambda {fl} {nl}");
            }
        }
    }

    #[test]
    fn normal_standard_values() {
        let t = var_es_normal(0.0, 1.0, 0.05).unwrap();
        assert!((t.var + 1.644_853_626_951_472).abs() < 1e-10);
        assert!((t.es + 2.062_712_807_352_81).abs() < 1e-9);
    }

    #[test]
    fn degenerate_sigma_and_bad_alpha_rejected() {
        assert!(matches!(var_es_normal(0.0, 0.0, 0.05), Err(Error::Domain(_))));
        assert!(matches!(var_es_normal(0.0, 1.0, 0.5), Err(Error::Domain(_))));
        assert!(matches!(var_es_normal(0.0, 1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(var_es_student_t(0.0, 1.0, 2.0, 0.05), Err(Error::Domain(_))));
    }

    #[test]
    fn location_scale_identity() {
        let base = var_es_normal(0.0, 1.0, 0.01).unwrap();
        let t = var_es_normal(0.3, 2.0, 0.01).unwrap();
        assert!((t.var - (0.3 + 2.0 * base.var)).abs() < 1e-12);
        assert!((t.es - (0.3 + 2.0 * base.es)).abs() < 1e-12);
    }

    #[test]
    fn student_t_large_nu_approaches_normal() {
        let n = var_es_normal(0.0, 1.0, 0.05).unwrap();
        let t = var_es_student_t(0.0, 1.0, 200.0, 0.05).unwrap();
        assert!((n.var - t.var).abs() < 1e-3);
        // the unit-variance ES gap at nu = 200 is still about 4.4e-3
        assert!((n.es - t.es).abs() < 5e-3);
        let t = var_es_student_t(0.0, 1.0, 1000.0, 0.05).unwrap();
        assert!((n.es - t.es).abs() < 1e-3);
    }

    #[test]
    fn fat_tails_raise_es_to_var_ratio() {
        let n = var_es_normal(0.0, 1.0, 0.01).unwrap();
        let t = var_es_student_t(0.0, 1.0, 4.0, 0.01).unwrap();
        assert!(t.es / t.var > n.es / n.var);
    }

    #[test]
    fn skew_t_with_zero_lambda_is_student_t() {
        for &(nu, alpha) in &[(4.0, 0.01), (6.0, 0.05), (30.0, 0.025)] {
            let s = var_es_skew_t(0.1, 1.3, nu, 0.0, alpha).unwrap();
            let t = var_es_student_t(0.1, 1.3, nu, alpha).unwrap();
            assert!((s.var - t.var).abs() < 1e-8, "{s:?} {t:?}");
            assert!((s.es - t.es).abs() < 1e-8, "{s:?} {t:?}");
        }
    }

    #[test]
    fn skew_t_cdf_branches_agree_at_knot() {
        for &(nu, lambda) in &[(6.0, 0.2), (4.0, -0.5), (3.0, 0.9), (50.0, 0.0)] {
            let d = SkewT::new(nu, lambda);
            let k = d.knot();
            assert!((d.cdf_left(k) - d.cdf_right(k)).abs() < 1e-10);
            assert!((d.cdf_right(k) - (1.0 - lambda) / 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn skew_t_bisection_matches_direct_inversion() {
        let d = SkewT::new(5.0, 0.4);
        for &p in &[0.001, 0.01, 0.05, 0.2, 0.5, 0.9] {
            let a = d.quantile(p).unwrap();
            let b = d.quantile_closed_form(p);
            assert!((a - b).abs() < 1e-9, "p={p}: {a} vs {b}");
        }
    }

    #[test]
    fn skew_t_quantile_right_of_knot() {
        // lambda large and positive puts the knot below the 5% point
        let t = var_es_skew_t(0.0, 1.0, 5.0, 0.95, 0.05).unwrap();
        let d = SkewT::new(5.0, 0.95);
        assert!(t.var > d.knot());
        assert!(t.es < t.var);
    }

    #[test]
    fn nominal_levels_table() {
        let n = NominalClass::Parametric(DistKind::Normal);
        assert_eq!(nominal_es_level(n, None, 0.01).unwrap(), 0.0038);
        assert_eq!(nominal_es_level(n, None, 0.05).unwrap(), 0.0196);
        let t = NominalClass::Parametric(DistKind::StudentT);
        assert_eq!(nominal_es_level(t, Some(6.2), 0.05).unwrap(), 0.0175);
        assert_eq!(nominal_es_level(t, Some(4.0), 0.01).unwrap(), 0.0032);
        assert_eq!(nominal_es_level(t, Some(40.0), 0.05).unwrap(), 0.0184);
        assert_eq!(nominal_es_level(NominalClass::Semiparametric, None, 0.05).unwrap(), 0.018);
        assert_eq!(nominal_es_level(NominalClass::Semiparametric, None, 0.01).unwrap(), 0.0036);
        assert!(matches!(nominal_es_level(n, None, 0.025), Err(Error::Lookup(_))));
        let l = NominalClass::Parametric(DistKind::Laplace);
        assert!(matches!(nominal_es_level(l, None, 0.05), Err(Error::Lookup(_))));
    }

    #[test]
    fn spec_constructors_enforce_bounds() {
        assert!(DistributionSpec::student_t(2.0).is_err());
        assert!(DistributionSpec::student_t(150.0).is_err());
        assert!(DistributionSpec::skew_t(5.0, 0.995).is_err());
        assert!(DistributionSpec::skew_t(5.0, 0.5).is_ok());
    }

    #[test]
    fn fit_needs_enough_data() {
        let r = vec![0.1; 50];
        assert!(matches!(fit_distribution(&r, DistKind::StudentT), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn samplers_have_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for spec in [DistributionSpec::StudentT { nu: 8.0 }, DistributionSpec::SkewT { nu: 8.0, lambda: 0.3 }] {
            let xs: Vec<f64> = (0..200_000).map(|_| spec.sample(&mut rng)).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
            assert!(m.abs() < 0.02, "{spec:?} mean {m}");
            assert!((v - 1.0).abs() < 0.05, "{spec:?} var {v}");
        }
    }
}
