//! Quantile LASSO combination of VaR forecasts with penalty chosen on a hold-out.

use tailrisk::backtest::quantile_loss;
use tailrisk::combination::{fit_quantile_lasso, fit_quantile_lasso_cv, LAMBDA_GRID};
use tailrisk::engine::{run_rolling, simulate_dgp, RollingPlan};

fn main() -> tailrisk::Result<()> {
    let series = simulate_dgp(1600, 2)?;
    let plan = RollingPlan {
        initial_window: 1000,
        alphas: vec![0.05],
        models: tailrisk::engine::parse_model_list("HS,EWMA,GARCH-N,GARCH-T")?,
        ..RollingPlan::default()
    };
    let panel = &run_rolling(&series, &plan)?.panels[0];
    let sel = fit_quantile_lasso_cv(&panel.var, &panel.realized, 0.05, &LAMBDA_GRID)?;
    println!("hold-out losses by lambda: {:?}", sel.validation_losses);
    println!(
        "chosen lambda {}: intercept {:.4}, slopes {:?}",
        sel.spec.lambda, sel.spec.intercept, sel.spec.coefficients
    );
    let fitted: Vec<f64> = panel.var.iter().map(|x| sel.spec.predict(x)).collect();
    println!("in-sample QLF of the combination {:.3}", quantile_loss(&panel.realized, &fitted, 0.05)?);

    let heavy = fit_quantile_lasso(&panel.var, &panel.realized, 0.05, 1e4)?;
    println!("with lambda 1e4 every slope is shrunk to zero: {:?}", heavy.coefficients);
    Ok(())
}
