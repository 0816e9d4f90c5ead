//! CARE expectile models with a calibrated and a fixed expectile level.

use tailrisk::engine::simulate_dgp;
use tailrisk::quantile_models::{care_var_es, fit_care, CareForm, QuantileFitOptions, TauPolicy};

fn main() -> tailrisk::Result<()> {
    let series = simulate_dgp(1000, 9)?;
    let window = series.returns();
    let alpha = 0.05;
    for form in [CareForm::Sav, CareForm::As, CareForm::Ig] {
        for policy in [TauPolicy::Calibrated, TauPolicy::Fixed(alpha)] {
            let fit = fit_care(window, form, alpha, policy, &QuantileFitOptions::default(), None)?;
            let f = care_var_es(&fit.spec, fit.next_mu, alpha)?;
            println!(
                "CARE-{:<3} {:<16} tau {:.4}  coverage {:.3}  VaR {:7.3}  ES {:7.3}",
                form.label(),
                format!("{policy:?}"),
                fit.spec.tau,
                fit.coverage,
                f.var,
                f.es
            );
        }
    }
    Ok(())
}
