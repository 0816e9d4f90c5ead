//! Fit GARCH, GJR-GARCH and EGARCH by maximum likelihood and forecast one step.

use tailrisk::distributions::DistKind;
use tailrisk::engine::simulate_dgp;
use tailrisk::volatility::{fit_garch_family, forecast_var_es, FitOptions, VolFamily};

fn main() -> tailrisk::Result<()> {
    let series = simulate_dgp(1500, 3)?;
    let window = series.returns();
    for family in [VolFamily::Ewma, VolFamily::Garch11, VolFamily::GjrGarch11, VolFamily::Egarch11] {
        for dist in [DistKind::Normal, DistKind::StudentT, DistKind::SkewT] {
            let fit = fit_garch_family(window, family, dist, &FitOptions::default())?;
            let f = forecast_var_es(&fit.spec, &fit.state, 0.01)?;
            let params: Vec<String> = fit.spec.params.named().iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
            println!(
                "{:>8}-{:<3} loglik {:10.2}  VaR {:7.3}  ES {:7.3}  {}",
                family.label(),
                dist.suffix(),
                fit.loglik,
                f.var,
                f.es,
                params.join(" ")
            );
        }
    }
    Ok(())
}
