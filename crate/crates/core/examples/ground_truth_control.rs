//! Control for the ambiguity benchmark: the hard-label student trained on
//! ground-truth depth instead of teacher depth, scored on the same split.
//!
//! cargo run --release --example ground_truth_control -- [seed]

use nalgebra::DVector;
use nrsfm_core::nrsfm::TeacherOutput;
use nrsfm_core::pipeline::{depth_score, split_dataset, student_depths, student_samples, BenchmarkConfig};
use nrsfm_core::sparse::DictionaryStack;
use nrsfm_core::student::{train_student, StudentMode};
use nrsfm_core::synth::{generate, normalize};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> nrsfm_core::Result<()> {
    env_logger::init();
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = BenchmarkConfig::default();
    let data = normalize(&generate(&nrsfm_core::synth::SynthConfig { seed, ..cfg.synth.clone() })?.dataset)?;
    let (train, test) = split_dataset(&data, cfg.test_fraction)?;
    let oracle: Vec<TeacherOutput> = train
        .samples
        .iter()
        .map(|s| {
            let gt = s.gt_camera_frame().expect("synthetic ground truth");
            TeacherOutput {
                camera: s.cam.expect("synthetic camera"),
                phi: DVector::zeros(cfg.nrsfm.level_sizes[0]),
                depth: gt.depths(),
                shape: gt,
                loss: 0.0,
            }
        })
        .collect();
    // Only the hard-label objective runs, so the dictionaries are never read.
    let dicts = DictionaryStack::random(data.points().unwrap_or(0), &cfg.nrsfm.level_sizes, 0.0, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let samples = student_samples(&train, &oracle, &dicts, None)?;
    let net = train_student(&samples, StudentMode::Baseline, &cfg.student)?.net;
    let gt: Vec<_> = test.samples.iter().filter_map(|s| s.gt_camera_frame()).collect();
    println!("ground-truth-trained student: {:?}", depth_score(&student_depths(&net, &test)?, &gt)?);
    Ok(())
}
