//! Log returns, descriptive statistics and the ADF test on a simulated price path.

use tailrisk::engine::simulate_dgp;
use tailrisk::series::{adf_test, describe, log_returns, ReturnSeries};

fn main() -> tailrisk::Result<()> {
    let sim = simulate_dgp(2000, 7)?;
    let mut prices = vec![100.0];
    for r in sim.returns() {
        let last = *prices.last().unwrap();
        prices.push(last * (r / 100.0).exp());
    }
    let returns = ReturnSeries::from_returns(log_returns(&prices)?)?;
    let stats = describe(&returns)?;
    println!("n = {}, mean = {:.4}, sd = {:.4}", stats.count, stats.mean, stats.std);
    println!("skewness = {:.3}, kurtosis = {:.3}", stats.skewness, stats.kurtosis);

    let adf = adf_test(&returns, 12)?;
    println!(
        "ADF statistic {:.2} (p = {:.4}, {} lags), unit root rejected: {}",
        adf.statistic, adf.p_value, adf.lags, adf.reject
    );
    Ok(())
}
