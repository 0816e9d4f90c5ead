//! Historical simulation, CAViaR and joint CAViaR-ES fits on one window.

use tailrisk::engine::simulate_dgp;
use tailrisk::quantile_models::{fit_caviar, fit_caviar_es, hs_forecast, CaviarForm, EsConnection, QuantileFitOptions};

fn main() -> tailrisk::Result<()> {
    let series = simulate_dgp(1000, 5)?;
    let window = series.returns();
    let alpha = 0.05;
    let opts = QuantileFitOptions::default();

    let hs = hs_forecast(&window[window.len() - 168..], alpha)?;
    println!("HS-168            VaR {:7.3}  ES {:7.3}", hs.var, hs.es);

    for form in [CaviarForm::Sav, CaviarForm::As, CaviarForm::Ig, CaviarForm::Ada] {
        let fit = fit_caviar(window, form, alpha, &opts, None)?;
        println!("CAViaR-{:<4}       VaR {:7.3}  loss {:.5}", form.label(), fit.next_var, fit.objective);
    }
    for (form, conn) in [(CaviarForm::Sav, EsConnection::Ar), (CaviarForm::As, EsConnection::Exp)] {
        let fit = fit_caviar_es(window, form, conn, alpha, &opts, None)?;
        println!(
            "CAViaR-ES-{}-{:<3}  VaR {:7.3}  ES {:7.3}  AL score {:.4}",
            form.label(),
            conn.label(),
            fit.next.var,
            fit.next.es,
            fit.objective
        );
    }
    Ok(())
}
