//! One replication of the EGARCH-Laplace simulation study.

use tailrisk::engine::{run_simulation_study, write_study_csv};

fn main() -> tailrisk::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let study = run_simulation_study(seed)?;
    write_study_csv(&study, std::io::stdout())?;
    println!("joint AL weights on the same panel: {:?}", study.joint.weights.beta);
    Ok(())
}
