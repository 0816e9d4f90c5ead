//! Closed-form VaR and ES under normal, Student-t and skew-t residuals.

use tailrisk::distributions::{
    nominal_es_level, var_es_normal, var_es_skew_t, var_es_student_t, DistKind, NominalClass,
};

fn main() -> tailrisk::Result<()> {
    let (mu, sigma) = (0.02, 1.3);
    for alpha in [0.01, 0.05] {
        let n = var_es_normal(mu, sigma, alpha)?;
        let t = var_es_student_t(mu, sigma, 5.0, alpha)?;
        let s = var_es_skew_t(mu, sigma, 5.0, -0.2, alpha)?;
        println!("alpha {alpha}");
        println!("  normal       VaR {:8.4}  ES {:8.4}", n.var, n.es);
        println!("  student-t(5) VaR {:8.4}  ES {:8.4}", t.var, t.es);
        println!("  skew-t(5,-.2) VaR {:7.4}  ES {:8.4}", s.var, s.es);
        let lvl = nominal_es_level(NominalClass::Parametric(DistKind::StudentT), Some(6.0), alpha)?;
        println!("  ES of a t(6) model is backtested as a VaR at level {lvl}");
    }
    Ok(())
}
