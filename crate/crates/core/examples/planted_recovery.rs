//! Dictionary learning on a noiseless planted dataset (P = 8, 500 samples).
//! With `planted` as the sizes argument the planted dictionaries are used
//! as-is, which is the oracle run behind the frozen camera-angle threshold.
//!
//! cargo run --release --example planted_recovery -- [epochs] [seed] [lr] [sizes|planted]

use std::time::Instant;

use nalgebra::DMatrix;
use nrsfm_core::camera::principal_angle_deg;
use nrsfm_core::geometry::pa_mpjpe;
use nrsfm_core::nrsfm::{teacher_outputs, train_dictionaries, TrainConfig};
use nrsfm_core::synth::{generate, normalize, SynthConfig};

fn bbox_diagonal(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| (c.max() - c.min()).powi(2)).sum::<f64>().sqrt()
}

fn main() -> nrsfm_core::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let lr = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let planted = args.get(4).is_some_and(|s| s == "planted");
    let sizes: Vec<usize> = match args.get(4) {
        Some(s) if !planted => s.split(',').filter_map(|v| v.parse().ok()).collect(),
        _ => vec![32, 16],
    };

    let data = generate(&SynthConfig {
        points: 8,
        level_sizes: vec![16, 8],
        samples: 500,
        seed,
        ..SynthConfig::default()
    })?;
    let ds = normalize(&data.dataset)?;
    let cfg = TrainConfig {
        level_sizes: sizes,
        epochs,
        seed,
        lr,
        patience: 15,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let teacher = if planted {
        teacher_outputs(&ds.observations(), &data.planted, &cfg)?
    } else {
        let out = train_dictionaries(&ds.observations(), &cfg)?;
        for h in &out.history {
            println!("epoch {:3} lr {:.0e} loss {:.5} reproj {:.5}", h.epoch, h.lr, h.loss, h.reprojection);
        }
        out.teacher
    };
    println!("time {:.1}s", start.elapsed().as_secs_f64());

    let (mut reproj, mut pa, mut angles) = (0.0, 0.0, Vec::new());
    for (s, t) in ds.samples.iter().zip(&teacher) {
        let pred = t.camera_frame_shape();
        let xy = pred.matrix().columns(0, 2).into_owned() - s.w.matrix();
        reproj += xy.row_iter().map(|r| r.norm()).sum::<f64>() / s.points() as f64 / bbox_diagonal(s.w.matrix());
        let gt = s.gt_camera_frame().expect("synthetic samples carry ground truth");
        pa += pa_mpjpe(&pred, &gt)? / bbox_diagonal(gt.matrix());
        angles.push(principal_angle_deg(t.camera.matrix(), s.cam.expect("synthetic camera").matrix()));
    }
    angles.sort_by(f64::total_cmp);
    let n = ds.len() as f64;
    println!("per-point reprojection / 2D bbox diagonal {:.4}", reproj / n);
    println!("PA-MPJPE / 3D bbox diagonal {:.4}", pa / n);
    println!("median camera principal angle {:.1} deg", angles[angles.len() / 2]);
    Ok(())
}
