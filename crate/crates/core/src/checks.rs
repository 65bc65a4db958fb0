//! Quick randomized invariant suites, runnable from the command line.

use nalgebra::{DMatrix, DVector, Matrix3x2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_difference_check, FdConfig, ParameterSet};
use crate::camera::estimate_camera;
use crate::checkpoint::{decode_dictionary, decode_student, encode_dictionary, encode_student};
use crate::distill::{distill_loss, exact_loss_oracle, project_to_subspace, DistillContext, DistillObjective};
use crate::error::{Error, Result};
use crate::geometry::{
    depth_error, mpjpe, orthonormality_error, pa_mpjpe, project, scale_by_bone_length, Projection2D, Shape3D,
};
use crate::nrsfm::{stack_to_params, NrsfmObjective};
use crate::sparse::DictionaryStack;
use crate::student::{PoseRegressor, StudentMode, StudentObjective, StudentSample};
use crate::synth::{generate, random_rotation, sample_from_line, sample_to_line, Skeleton, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_owned(),
        passed,
        detail,
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn uniform_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn random_context(rng: &mut ChaCha8Rng, p: usize, k: usize, mu: f64) -> Result<DistillContext> {
    let phi = DVector::from_fn(k, |_, _| rng.random_range(0.0..1.0));
    let b_xy = uniform_matrix(rng, 2 * p, k);
    let b_z = uniform_matrix(rng, p, k);
    let w = uniform_vector(rng, 2 * p);
    DistillContext::from_parts(b_xy, b_z, phi, w, mu)
}

fn camera_orthonormality(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (mut worst, mut solved) = (0.0f64, 0);
    for _ in 0..50 {
        let p = rng.random_range(4..10);
        let dicts = DictionaryStack::random(p, &[12, 6], 0.01, rng)?;
        let w = Projection2D::new(uniform_matrix(rng, p, 2))?;
        match estimate_camera(&w, &dicts, 10) {
            Ok(cam) => {
                worst = worst.max(orthonormality_error(cam.matrix()));
                solved += 1;
            }
            Err(Error::DegenerateObservation(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(result(
        "camera orthonormality",
        worst <= 1e-8 && solved > 0,
        format!("{solved} cameras, max |MᵀM − I| = {worst:.2e}"),
    ))
}

fn projection_exactness(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for i in 0..200 {
        let p = [4, 8][i % 2];
        let k = [12, 16, 32][i % 3];
        let ctx = random_context(rng, p, k, 0.3)?;
        let z = uniform_vector(rng, p);
        let phi = project_to_subspace(&ctx, &z)?;
        worst = worst.max((&ctx.b_z * phi - &z).amax());
    }
    Ok(result("subspace projection exactness", worst <= 1e-8, format!("max residual {worst:.2e}")))
}

fn upper_bound(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let ctx = random_context(rng, 4, 12, 0.3)?;
        let z = uniform_vector(rng, 4);
        let (bound, _) = distill_loss(&ctx, &z)?;
        let exact = exact_loss_oracle(&ctx, &z, 20_000)?;
        worst = worst.min(bound - exact.value);
    }
    Ok(result(
        "distillation loss bounds the exact loss",
        worst >= -1e-6,
        format!("min(bound − oracle) = {worst:.2e}"),
    ))
}

fn convexity(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let ctx = random_context(rng, 5, 16, 0.3)?;
        let a = uniform_vector(rng, 5);
        let b = uniform_vector(rng, 5);
        let mid = (&a + &b) * 0.5;
        let f = |z: &DVector<f64>| distill_loss(&ctx, z).map(|v| v.0);
        worst = worst.max(f(&mid)? - 0.5 * (f(&a)? + f(&b)?));
    }
    Ok(result(
        "distillation loss convexity",
        worst <= 1e-9,
        format!("max midpoint excess {worst:.2e}"),
    ))
}

fn gradients(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let fd = |seed: u64| FdConfig {
        seed,
        ..FdConfig::default()
    };
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for inst in 0..3 {
        let dicts = DictionaryStack::random(4, &[10, 6], 0.01, rng)?;
        let objective = NrsfmObjective {
            observations: (0..2).map(|_| uniform_vector(rng, 8)).collect(),
            cameras: vec![Matrix3x2::identity(); 2],
            camera_iters: Some(4),
            lambda: 0.01,
            squared: false,
        };
        worst = worst.max(finite_difference_check(&objective, &stack_to_params(&dicts), &fd(inst))?.max_rel_error);
    }
    out.push(result("dictionary loss gradient", worst <= 1e-4, format!("max relative error {worst:.2e}")));

    for mode in [StudentMode::Distill, StudentMode::Baseline] {
        let mut worst = 0.0f64;
        for inst in 0..3 {
            let samples: Vec<StudentSample> = (0..3)
                .map(|_| {
                    let ctx = random_context(rng, 3, 10, 0.3)?;
                    Ok(StudentSample {
                        id: "s".into(),
                        features: uniform_vector(rng, 6),
                        w: uniform_vector(rng, 6),
                        teacher_depth: Some(ctx.teacher_depth()),
                        context: Some(ctx),
                        gt: None,
                    })
                })
                .collect::<Result<_>>()?;
            let net = PoseRegressor::new(6, &[8, 7], 3, rng)?;
            let objective = StudentObjective {
                samples: samples.iter().collect(),
                widths: net.widths().to_vec(),
                mode,
                depth_weight: 1.0,
            };
            worst = worst.max(finite_difference_check(&objective, net.params(), &fd(inst))?.max_rel_error);
        }
        out.push(result(
            &format!("student {mode} gradient"),
            worst <= 1e-4,
            format!("max relative error {worst:.2e}"),
        ));
    }

    let mut worst = 0.0f64;
    for inst in 0..5 {
        let ctx = random_context(rng, 5, 16, 0.3)?;
        let z = uniform_vector(rng, 5);
        let params = ParameterSet::new().with("z", DMatrix::from_column_slice(5, 1, z.as_slice()))?;
        worst = worst.max(finite_difference_check(&DistillObjective(ctx), &params, &fd(inst))?.max_rel_error);
    }
    out.push(result("distillation loss gradient", worst <= 1e-4, format!("max relative error {worst:.2e}")));
    Ok(out)
}

fn metric_invariances(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let skeleton = Skeleton::human();
    let topo = skeleton.topology();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let gt = Shape3D::new(uniform_matrix(rng, 15, 3))?;
        let pred = Shape3D::new(uniform_matrix(rng, 15, 3))?;
        let r = random_rotation(rng);
        let t = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let shift = |s: &Shape3D, t: &Vector3<f64>| {
            let mut m = s.matrix().clone();
            for mut row in m.row_iter_mut() {
                row += t.transpose();
            }
            Shape3D::new(m)
        };
        let rigid = shift(&gt.rotate(&r).scale(rng.random_range(0.5..2.0)), &t)?;
        worst = worst.max(pa_mpjpe(&rigid, &gt)?);
        worst = worst.max((mpjpe(&shift(&pred, &t)?, &gt, 0)? - mpjpe(&pred, &gt, 0)?).abs());
        let z_only = Vector3::new(0.0, 0.0, t.z);
        worst = worst.max((depth_error(&shift(&pred, &z_only)?, &gt, 0)? - depth_error(&pred, &gt, 0)?).abs());
        let once = scale_by_bone_length(&pred, &gt, &topo)?;
        let twice = scale_by_bone_length(&once, &gt, &topo)?;
        worst = worst.max((once.matrix() - twice.matrix()).amax());
    }
    Ok(result("metric invariances", worst <= 1e-8, format!("max violation {worst:.2e}")))
}

fn serialization(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let dicts = DictionaryStack::random(6, &[12, 5, 2], 0.02, rng)?;
    let bytes = encode_dictionary(&dicts)?;
    let dict_ok = encode_dictionary(&decode_dictionary(&bytes)?)? == bytes;
    let net = PoseRegressor::new(9, &[7, 5], 4, rng)?;
    let bytes = encode_student(&net)?;
    let student_ok = encode_student(&decode_student(&bytes)?)? == bytes;
    let data = generate(&SynthConfig {
        samples: 10,
        noise: 0.01,
        ambiguity: 0.4,
        seed: rng.random(),
        ..SynthConfig::default()
    })?;
    let mut lines_ok = true;
    for s in &data.dataset.samples {
        let line = sample_to_line(s)?;
        lines_ok &= sample_to_line(&sample_from_line(&line, "check")?)? == line;
    }
    Ok(result(
        "serialization round trip",
        dict_ok && student_ok && lines_ok,
        format!("dictionary {dict_ok}, student {student_ok}, dataset {lines_ok}"),
    ))
}

fn synthetic_consistency(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let data = generate(&SynthConfig {
        samples: 40,
        ambiguity: 1.0,
        seed: rng.random(),
        ..SynthConfig::default()
    })?;
    let mut worst = 0.0f64;
    let mut min_depth_gap = f64::INFINITY;
    let samples = &data.dataset.samples;
    for s in samples {
        let (gt, cam) = (s.gt.as_ref().expect("generated"), s.cam.as_ref().expect("generated"));
        worst = worst.max((project(gt, cam).matrix() - s.w.matrix()).amax());
    }
    for pair in samples.chunks(2).filter(|c| c.len() == 2) {
        worst = worst.max((pair[0].w.matrix() - pair[1].w.matrix()).amax());
        let za = pair[0].gt_camera_frame().expect("generated").depths();
        let zb = pair[1].gt_camera_frame().expect("generated").depths();
        min_depth_gap = min_depth_gap.min((za - zb).norm());
    }
    Ok(result(
        "synthetic data consistency",
        worst <= 1e-12 && min_depth_gap > 0.0,
        format!("max 2D mismatch {worst:.2e}, min mirror depth gap {min_depth_gap:.3}"),
    ))
}

/// Runs every suite with one seed; failures are reported, not raised.
pub fn run_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![
        camera_orthonormality(&mut rng)?,
        projection_exactness(&mut rng)?,
        upper_bound(&mut rng)?,
        convexity(&mut rng)?,
    ];
    out.extend(gradients(&mut rng)?);
    out.push(metric_invariances(&mut rng)?);
    out.push(serialization(&mut rng)?);
    out.push(synthetic_consistency(&mut rng)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        let results = run_checks(0).unwrap();
        assert_eq!(results.len(), 11);
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
