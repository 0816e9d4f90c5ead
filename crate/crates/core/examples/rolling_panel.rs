//! Rolling one-step forecasts, rolling combination and panel export.

use tailrisk::engine::{parse_model_list, run_combination, run_rolling, simulate_dgp, write_panels, RollingPlan};

fn main() -> tailrisk::Result<()> {
    let series = simulate_dgp(1500, 8)?;
    let plan = RollingPlan {
        initial_window: 1000,
        combo_window: 250,
        alphas: vec![0.01, 0.05],
        models: parse_model_list("HS,EWMA,GARCH-T,CAViaR-ES-AS-EXP")?,
        seed: 8,
        ..RollingPlan::default()
    };
    let run = run_rolling(&series, &plan)?;
    let mut combined = Vec::new();
    for panel in &run.panels {
        let c = run_combination(panel, &plan)?;
        let last = c.weights.last().unwrap();
        println!(
            "alpha {}: {} forecasts, {} combined; last joint VaR weights {:?}",
            panel.alpha,
            panel.len(),
            c.panel.len(),
            last.beta.iter().map(|w| (w * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
        combined.push(c.panel);
    }
    let mut out = Vec::new();
    write_panels(&combined, &mut out)?;
    let text = String::from_utf8(out).unwrap();
    for line in text.lines().take(4) {
        println!("{line}");
    }
    Ok(())
}
