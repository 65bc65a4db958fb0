//! Teacher → student plumbing and the held-out depth comparison between the
//! teacher, the hard-label student and the distilled student.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distill::build_context;
use crate::error::{Error, Result};
use crate::geometry::Shape3D;
use crate::nrsfm::{teacher_outputs, train_dictionaries, TeacherOutput, TrainConfig};
use crate::sparse::DictionaryStack;
use crate::student::{train_student, PoseRegressor, StudentConfig, StudentMode, StudentSample, ROOT_JOINT};
use crate::synth::{generate, normalize, Dataset, Group, SynthConfig};

/// Student samples for `ds`, one per teacher output. Distillation contexts
/// are only built when `mu` is given.
pub fn student_samples(ds: &Dataset, teacher: &[TeacherOutput], dicts: &DictionaryStack, mu: Option<f64>) -> Result<Vec<StudentSample>> {
    if ds.len() != teacher.len() {
        return Err(Error::dim(format!("{} samples but {} teacher outputs", ds.len(), teacher.len())));
    }
    ds.samples
        .par_iter()
        .zip(teacher)
        .map(|(s, t)| {
            let features = s
                .features
                .as_ref()
                .ok_or_else(|| Error::format(format!("sample {}", s.id), "student training needs features"))?;
            let context = mu.map(|mu| build_context(&s.w, dicts, t, mu)).transpose()?;
            Ok(StudentSample {
                id: s.id.clone(),
                features: DVector::from_column_slice(features),
                w: s.w.vectorize(),
                context,
                teacher_depth: Some(t.depth.clone()),
                gt: s.gt_camera_frame(),
            })
        })
        .collect()
}

/// Mean root-aligned depth error, allowing one global depth reflection for
/// the whole prediction set (weak perspective cannot fix the overall sign).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthScore {
    pub error: f64,
    pub reflected: bool,
    pub samples: usize,
}

fn root_aligned_error(z: &DVector<f64>, gt: &Shape3D, sign: f64) -> f64 {
    let g = gt.depths();
    let (rz, rg) = (z[ROOT_JOINT], g[ROOT_JOINT]);
    z.iter()
        .zip(g.iter())
        .map(|(a, b)| (sign * (a - rz) - (b - rg)).abs())
        .sum::<f64>()
        / z.len() as f64
}

pub fn depth_score(pred: &[DVector<f64>], gt: &[Shape3D]) -> Result<DepthScore> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::dim(format!("{} predictions for {} ground-truth shapes", pred.len(), gt.len())));
    }
    if let Some((z, g)) = pred.iter().zip(gt).find(|(z, g)| z.len() != g.points()) {
        return Err(Error::dim(format!("depth vector of length {} for {} landmarks", z.len(), g.points())));
    }
    let mean = |sign: f64| pred.iter().zip(gt).map(|(z, g)| root_aligned_error(z, g, sign)).sum::<f64>() / pred.len() as f64;
    let (direct, flipped) = (mean(1.0), mean(-1.0));
    Ok(DepthScore {
        error: direct.min(flipped),
        reflected: flipped < direct,
        samples: pred.len(),
    })
}

/// Splits off the last `fraction` of samples as a test set, never separating
/// the two members of an ambiguous pair.
pub fn split_dataset(ds: &Dataset, fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::config("test_fraction", "must lie in [0, 1)"));
    }
    let mut cut = ds.len() - (fraction * ds.len() as f64).round() as usize;
    let pair_key = |i: usize| ds.samples[i].id.split_once('_').map(|(k, _)| k.to_owned());
    while cut > 0 && cut < ds.len() && pair_key(cut).is_some() && pair_key(cut) == pair_key(cut - 1) {
        cut += 1;
    }
    if cut == 0 {
        return Err(Error::Contract("split leaves no training samples".into()));
    }
    Ok((
        Dataset {
            samples: ds.samples[..cut].to_vec(),
        },
        Dataset {
            samples: ds.samples[cut..].to_vec(),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub synth: SynthConfig,
    pub nrsfm: TrainConfig,
    pub student: StudentConfig,
    pub test_fraction: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            synth: SynthConfig {
                samples: 1200,
                ambiguity: 0.5,
                feature_noise: 0.02,
                ..SynthConfig::default()
            },
            nrsfm: TrainConfig {
                level_sizes: vec![32, 16],
                epochs: 60,
                lr: 3e-3,
                ..TrainConfig::default()
            },
            student: StudentConfig {
                hidden: vec![128, 128, 128],
                epochs: 40,
                ..StudentConfig::default()
            },
            test_fraction: 0.25,
        }
    }
}

/// Held-out depth errors, overall and per sample group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub all: DepthScore,
    pub ambiguous: Option<DepthScore>,
    pub plain: Option<DepthScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub seed: u64,
    /// Zero depth everywhere, for scale.
    pub flat: MethodScores,
    pub teacher: MethodScores,
    pub baseline: MethodScores,
    pub distill: MethodScores,
}

fn score_groups(ds: &Dataset, pred: &[DVector<f64>]) -> Result<MethodScores> {
    let gt: Vec<Shape3D> = ds
        .samples
        .iter()
        .map(|s| s.gt_camera_frame().ok_or_else(|| Error::format(format!("sample {}", s.id), "evaluation needs gt and cam")))
        .collect::<Result<_>>()?;
    let subset = |group: Group| -> Result<Option<DepthScore>> {
        let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.samples[i].group == group.as_str()).collect();
        if idx.is_empty() {
            return Ok(None);
        }
        let p: Vec<DVector<f64>> = idx.iter().map(|&i| pred[i].clone()).collect();
        let g: Vec<Shape3D> = idx.iter().map(|&i| gt[i].clone()).collect();
        depth_score(&p, &g).map(Some)
    };
    Ok(MethodScores {
        all: depth_score(pred, &gt)?,
        ambiguous: subset(Group::Ambiguous)?,
        plain: subset(Group::Plain)?,
    })
}

/// Full `P×3` camera-frame predictions of `net` for every sample.
pub fn student_shapes(net: &PoseRegressor, ds: &Dataset) -> Result<Vec<Shape3D>> {
    ds.samples
        .par_iter()
        .map(|s| {
            let f = s
                .features
                .as_ref()
                .ok_or_else(|| Error::format(format!("sample {}", s.id), "student evaluation needs features"))?;
            net.predict_shape(&DVector::from_column_slice(f))
        })
        .collect()
}

pub fn student_depths(net: &PoseRegressor, ds: &Dataset) -> Result<Vec<DVector<f64>>> {
    ds.samples
        .par_iter()
        .map(|s| {
            let f = s
                .features
                .as_ref()
                .ok_or_else(|| Error::format(format!("sample {}", s.id), "student evaluation needs features"))?;
            Ok(net.forward(&DVector::from_column_slice(f))?.1)
        })
        .collect()
}

/// Splits, teacher and training-split student samples shared by every
/// student trained on one benchmark seed.
#[derive(Debug, Clone)]
pub struct PreparedBenchmark {
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    pub dicts: DictionaryStack,
    pub train_teacher: Vec<TeacherOutput>,
    pub test_teacher: Vec<TeacherOutput>,
}

/// Generates the data and trains the teacher on the training split's 2D
/// observations.
pub fn prepare_benchmark(cfg: &BenchmarkConfig, seed: u64) -> Result<PreparedBenchmark> {
    let synth = SynthConfig { seed, ..cfg.synth.clone() };
    let data = normalize(&generate(&synth)?.dataset)?;
    let (train, test) = split_dataset(&data, cfg.test_fraction)?;
    let nrsfm = TrainConfig { seed, ..cfg.nrsfm.clone() };
    let teacher = train_dictionaries(&train.observations(), &nrsfm)?;
    let test_teacher = teacher_outputs(&test.observations(), &teacher.dicts, &nrsfm)?;
    Ok(PreparedBenchmark {
        seed,
        train,
        test,
        dicts: teacher.dicts,
        train_teacher: teacher.teacher,
        test_teacher,
    })
}

/// Trains one student on the prepared training split and scores it on the
/// held-out split.
pub fn score_student(prep: &PreparedBenchmark, mode: StudentMode, cfg: &StudentConfig) -> Result<MethodScores> {
    let mu = (mode == StudentMode::Distill).then_some(cfg.mu);
    let samples = student_samples(&prep.train, &prep.train_teacher, &prep.dicts, mu)?;
    let student_cfg = StudentConfig {
        seed: prep.seed,
        ..cfg.clone()
    };
    let out = train_student(&samples, mode, &student_cfg)?;
    score_groups(&prep.test, &student_depths(&out.net, &prep.test)?)
}

/// Teacher, hard-label student and distilled student on held-out data.
pub fn run_benchmark(cfg: &BenchmarkConfig, seed: u64) -> Result<BenchmarkResult> {
    let prep = prepare_benchmark(cfg, seed)?;
    let teacher_depths: Vec<DVector<f64>> = prep.test_teacher.iter().map(|t| t.depth.clone()).collect();
    let flat: Vec<DVector<f64>> = prep.test.samples.iter().map(|s| DVector::zeros(s.points())).collect();
    Ok(BenchmarkResult {
        seed,
        flat: score_groups(&prep.test, &flat)?,
        teacher: score_groups(&prep.test, &teacher_depths)?,
        baseline: score_student(&prep, StudentMode::Baseline, &cfg.student)?,
        distill: score_student(&prep, StudentMode::Distill, &cfg.student)?,
    })
}

/// The L1 weights compared by the sweep.
pub const MU_SWEEP: [f64; 4] = [0.01, 0.1, 0.3, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuSweepRow {
    pub mu: f64,
    pub scores: MethodScores,
}

/// Distilled students for each `mu`, all sharing one teacher run.
pub fn run_mu_sweep(cfg: &BenchmarkConfig, seed: u64, mus: &[f64]) -> Result<Vec<MuSweepRow>> {
    let prep = prepare_benchmark(cfg, seed)?;
    mus.iter()
        .map(|&mu| {
            let student = StudentConfig { mu, ..cfg.student.clone() };
            student.validate()?;
            Ok(MuSweepRow {
                mu,
                scores: score_student(&prep, StudentMode::Distill, &student)?,
            })
        })
        .collect()
}

pub fn format_mu_sweep(rows: &[MuSweepRow]) -> String {
    let fmt = |s: Option<DepthScore>| s.map_or_else(|| format!("{:>10}", "-"), |s| format!("{:>10.6}", s.error));
    let mut out = format!("{:>6}  {:>10}  {:>10}  {:>10}\n", "mu", "all", "ambiguous", "plain");
    for r in rows {
        out.push_str(&format!(
            "{:>6}  {}  {}  {}\n",
            r.mu,
            fmt(Some(r.scores.all)),
            fmt(r.scores.ambiguous),
            fmt(r.scores.plain)
        ));
    }
    out
}
