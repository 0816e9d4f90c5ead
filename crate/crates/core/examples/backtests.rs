//! Coverage tests, losses and the model confidence set for three forecasters.

use tailrisk::backtest::{al_log_scores, model_confidence_set, BacktestReport, McsOptions};
use tailrisk::distributions::var_es_normal;
use tailrisk::engine::simulate_dgp;

fn main() -> tailrisk::Result<()> {
    let alpha = 0.05;
    let returns = simulate_dgp(1200, 1)?.returns().to_vec();
    let good = var_es_normal(0.0, 1.4, alpha)?;
    let loose = var_es_normal(0.0, 2.5, alpha)?;
    let tight = var_es_normal(0.0, 0.7, alpha)?;
    let mut losses = Vec::new();
    for (name, f) in [("sd-1.4", good), ("sd-2.5", loose), ("sd-0.7", tight)] {
        let var = vec![f.var; returns.len()];
        let es = vec![f.es; returns.len()];
        let r = BacktestReport::evaluate(name, &returns, &var, Some((&es, 0.018)), alpha)?;
        println!(
            "{name}: vratio {:.2}  UC p {:.3}  CC p {:.3}  DQ4 p {:.3}  QLF {:.2}  AL {:.4}",
            r.vratio,
            r.uc_p,
            r.cc_p,
            r.dq4_p,
            r.qlf,
            r.al_score.unwrap_or(f64::NAN)
        );
        losses.push(al_log_scores(&returns, &var, &es, alpha)?);
    }
    let mcs = model_confidence_set(&losses, 0.75, &McsOptions::default())?;
    println!("MCS p-values {:?}", mcs.p_values);
    println!("75% set {:?}, 90% set {:?}", mcs.included_at(0.75), mcs.included_at(0.90));
    Ok(())
}
