//! Joint AL-score combination of an accurate and a biased forecaster.

use tailrisk::backtest::al_log_score;
use tailrisk::combination::{fit_joint_combination, JointOptions};
use tailrisk::distributions::var_es_normal;

fn main() -> tailrisk::Result<()> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let alpha = 0.05;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let z = Normal::new(0.0, 1.0).unwrap();
    let sigmas: Vec<f64> = (0..1000).map(|t| 1.0 + 0.5 * ((t as f64) / 40.0).sin().abs()).collect();
    let realized: Vec<f64> = sigmas.iter().map(|s| s * z.sample(&mut rng)).collect();
    let mut var = Vec::new();
    let mut es = Vec::new();
    for s in &sigmas {
        let truth = var_es_normal(0.0, *s, alpha)?;
        let biased = var_es_normal(0.0, 0.6 * s, alpha)?;
        var.push(vec![truth.var, biased.var]);
        es.push(vec![truth.es, biased.es]);
    }
    let fit = fit_joint_combination(&var, &es, &realized, &JointOptions::new(alpha))?;
    println!("VaR weights {:?}", fit.weights.beta);
    println!("ES weights  {:?}", fit.weights.gamma);
    for j in 0..2 {
        let v: Vec<f64> = var.iter().map(|r| r[j]).collect();
        let e: Vec<f64> = es.iter().map(|r| r[j]).collect();
        println!("model {j} alone: mean AL score {:.5}", al_log_score(&realized, &v, &e, alpha)?);
    }
    println!("combined:       mean AL score {:.5}", fit.objective);
    Ok(())
}
