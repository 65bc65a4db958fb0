//! Held-out depth error of flat depth, the teacher, the hard-label student
//! and the distilled student on the mirror-ambiguity benchmark.
//!
//! cargo run --release --example ambiguity_benchmark -- [seeds]

use nrsfm_core::pipeline::{run_benchmark, BenchmarkConfig, MethodScores};

fn row(name: &str, m: &MethodScores) {
    println!(
        "{name:<10} all {:.4}{}  ambiguous {:.4}  plain {:.4}",
        m.all.error,
        if m.all.reflected { " (reflected)" } else { "" },
        m.ambiguous.map_or(f64::NAN, |s| s.error),
        m.plain.map_or(f64::NAN, |s| s.error)
    );
}

fn main() -> nrsfm_core::Result<()> {
    env_logger::init();
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = BenchmarkConfig::default();
    for seed in 0..seeds {
        let start = std::time::Instant::now();
        let r = run_benchmark(&cfg, seed)?;
        println!("seed {seed} ({:.1}s)", start.elapsed().as_secs_f64());
        row("flat", &r.flat);
        row("teacher", &r.teacher);
        row("baseline", &r.baseline);
        row("distill", &r.distill);
    }
    Ok(())
}
