//! Held-out depth error of the distilled student for each sparsity weight μ.
//!
//! cargo run --release --example mu_sweep -- [seed]

use nrsfm_core::pipeline::{format_mu_sweep, run_mu_sweep, BenchmarkConfig, MU_SWEEP};

fn main() -> nrsfm_core::Result<()> {
    env_logger::init();
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    print!("{}", format_mu_sweep(&run_mu_sweep(&BenchmarkConfig::default(), seed, &MU_SWEEP)?));
    Ok(())
}
