use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use nrsfm_core::checkpoint::{load_dictionary, load_student, save_dictionary, save_student};
use nrsfm_core::checks::run_checks;
use nrsfm_core::evaluate::{evaluate_shapes, format_table, has_ground_truth, MetricRow};
use nrsfm_core::geometry::Shape3D;
use nrsfm_core::nrsfm::{
    continue_training, read_teacher_file, train_dictionaries, write_teacher_file, TeacherOutput, TeacherRecord,
    TrainState,
};
use nrsfm_core::pipeline::{student_samples, student_shapes};
use nrsfm_core::sparse::DictionaryStack;
use nrsfm_core::student::{train_student, StudentMode};
use nrsfm_core::synth::{generate, normalize, read_dataset, write_dataset, Dataset};
use nrsfm_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::manifest::{write_json, RunManifest};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const PLANTED_FILE: &str = "planted.nrsd";
pub const DICTIONARY_FILE: &str = "dictionary.nrsd";
pub const TEACHER_FILE: &str = "teacher.jsonl";
pub const NRSFM_LOG_FILE: &str = "nrsfm_log.jsonl";
pub const STATE_FILE: &str = "train_state.json";
pub const STUDENT_FILE: &str = "student.nrss";
pub const STUDENT_LOG_FILE: &str = "student_log.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const TABLE_FILE: &str = "metrics.txt";
pub const CHECKS_FILE: &str = "checks.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for r in rows {
        let line = serde_json::to_string(r).map_err(|e| Error::Format {
            context: path.display().to_string(),
            reason: e.to_string(),
        })?;
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        context: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Reads a dataset and applies the per-sample bounding-box normalisation
/// (idempotent on already-normalised files).
fn load_normalized(path: &Path) -> Result<Dataset> {
    normalize(&read_dataset(path)?)
}

fn seconds(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let start = Instant::now();
    create_dir(out)?;
    let generated = generate(&cfg.synth)?;
    let dataset = normalize(&generated.dataset)?;
    let mut manifest = RunManifest::new("synth", cfg);
    let path = out.join(DATASET_FILE);
    write_dataset(&path, &dataset)?;
    manifest.output(&path)?;
    let planted = out.join(PLANTED_FILE);
    save_dictionary(&planted, &generated.planted)?;
    manifest.output(&planted)?;
    manifest.timings.insert("total".into(), seconds(start));
    manifest.write(out)?;
    info!("wrote {} samples to {}", dataset.len(), path.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metrics {
    Available(MetricRow),
    Unavailable(String),
}

fn teacher_metrics(ds: &Dataset, teacher: &[TeacherOutput]) -> Result<Metrics> {
    if !has_ground_truth(ds) {
        return Ok(Metrics::Unavailable("unavailable".into()));
    }
    let shapes: Vec<Shape3D> = teacher.iter().map(TeacherOutput::camera_frame_shape).collect();
    let mut row = evaluate_shapes("teacher", &shapes, ds)?;
    row.per_sample.clear();
    Ok(Metrics::Available(row))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NrsfmSummary {
    pub epochs: usize,
    pub final_loss: f64,
    /// Mean per-landmark distance between the teacher's projected shape and `w`.
    pub reprojection_error: f64,
    pub metrics: Metrics,
}

fn reprojection_error(ds: &Dataset, teacher: &[TeacherOutput]) -> f64 {
    let total: f64 = ds
        .samples
        .iter()
        .zip(teacher)
        .map(|(s, t)| {
            let xy = t.camera_frame_shape().matrix().columns(0, 2).into_owned();
            (xy - s.w.matrix()).row_iter().map(|r| r.norm()).sum::<f64>() / s.points() as f64
        })
        .sum();
    total / ds.len() as f64
}

pub fn train_nrsfm(cfg: &RunConfig, dataset: &Path, out: &Path, resume: bool) -> Result<()> {
    let start = Instant::now();
    let ds = load_normalized(dataset)?;
    create_dir(out)?;
    let mut manifest = RunManifest::new("train-nrsfm", cfg);
    manifest.input(dataset)?;
    let obs = ds.observations();
    let (dict_path, state_path) = (out.join(DICTIONARY_FILE), out.join(STATE_FILE));
    let outcome = if resume {
        let dicts = load_dictionary(&dict_path)?;
        let state: TrainState = read_json(&state_path)?;
        info!("resuming after epoch {}", state.epochs_done);
        manifest.input(&dict_path)?;
        continue_training(&obs, &cfg.nrsfm, dicts, state)?
    } else {
        train_dictionaries(&obs, &cfg.nrsfm)?
    };
    manifest.timings.insert("training".into(), seconds(start));

    save_dictionary(&dict_path, &outcome.dicts)?;
    write_json(&state_path, &outcome.state)?;
    let records: Vec<TeacherRecord> = ds
        .samples
        .iter()
        .zip(&outcome.teacher)
        .map(|(s, t)| TeacherRecord::from_output(s.id.clone(), t))
        .collect();
    let teacher_path = out.join(TEACHER_FILE);
    write_teacher_file(&teacher_path, &records)?;
    let log_path = out.join(NRSFM_LOG_FILE);
    write_json_lines(&log_path, &outcome.history)?;
    let summary = NrsfmSummary {
        epochs: outcome.state.epochs_done,
        final_loss: outcome.history.last().map_or(f64::NAN, |h| h.loss),
        reprojection_error: reprojection_error(&ds, &outcome.teacher),
        metrics: teacher_metrics(&ds, &outcome.teacher)?,
    };
    let metrics_path = out.join(METRICS_FILE);
    write_json(&metrics_path, &summary)?;
    for p in [&dict_path, &state_path, &teacher_path, &log_path, &metrics_path] {
        manifest.output(p)?;
    }
    manifest.timings.insert("total".into(), seconds(start));
    manifest.write(out)?;
    Ok(())
}

/// Teacher records aligned with the dataset, checked by id.
fn load_teacher(path: &Path, ds: &Dataset, dicts: &DictionaryStack) -> Result<Vec<TeacherOutput>> {
    let records = read_teacher_file(path)?;
    if records.len() != ds.len() {
        return Err(Error::Format {
            context: path.display().to_string(),
            reason: format!("{} teacher records for {} samples", records.len(), ds.len()),
        });
    }
    records
        .iter()
        .zip(&ds.samples)
        .map(|(r, s)| {
            if r.id != s.id {
                return Err(Error::Format {
                    context: path.display().to_string(),
                    reason: format!("teacher record {} does not match sample {}", r.id, s.id),
                });
            }
            r.to_output(dicts.d1())
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StudentSummary {
    pub mode: StudentMode,
    pub epochs: usize,
    pub final_loss: f64,
    pub final_val_loss: f64,
    /// Held-out (validation split) depth error at the last epoch.
    pub val_depth_error: Option<f64>,
}

pub fn train_student_cmd(
    cfg: &RunConfig,
    dataset: &Path,
    teacher: &Path,
    dictionary: &Path,
    mode: StudentMode,
    out: &Path,
) -> Result<()> {
    let start = Instant::now();
    let ds = load_normalized(dataset)?;
    let dicts = load_dictionary(dictionary)?;
    let outputs = load_teacher(teacher, &ds, &dicts)?;
    create_dir(out)?;
    let mut manifest = RunManifest::new("train-student", cfg);
    for p in [dataset, teacher, dictionary] {
        manifest.input(p)?;
    }
    let mu = (mode == StudentMode::Distill).then_some(cfg.student.mu);
    let samples = student_samples(&ds, &outputs, &dicts, mu)?;
    let outcome = train_student(&samples, mode, &cfg.student)?;
    manifest.timings.insert("training".into(), seconds(start));

    let net_path = out.join(STUDENT_FILE);
    save_student(&net_path, &outcome.net)?;
    let log_path = out.join(STUDENT_LOG_FILE);
    write_json_lines(&log_path, &outcome.history)?;
    let last = outcome.history.last();
    let summary = StudentSummary {
        mode,
        epochs: outcome.history.len(),
        final_loss: last.map_or(f64::NAN, |h| h.loss),
        final_val_loss: last.map_or(f64::NAN, |h| h.val_loss),
        val_depth_error: last.and_then(|h| h.val_depth_error),
    };
    let metrics_path = out.join(METRICS_FILE);
    write_json(&metrics_path, &summary)?;
    for p in [&net_path, &log_path, &metrics_path] {
        manifest.output(p)?;
    }
    manifest.timings.insert("total".into(), seconds(start));
    manifest.write(out)?;
    Ok(())
}

pub struct EvalInputs {
    pub dataset: PathBuf,
    pub teacher: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub students: Vec<PathBuf>,
    pub ground_truth: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
}

/// Returns the plain-text table, which is also written to the output directory.
pub fn eval(cfg: &RunConfig, inputs: &EvalInputs, out: &Path) -> Result<String> {
    let start = Instant::now();
    let ds = load_normalized(&inputs.dataset)?;
    let mut manifest = RunManifest::new("eval", cfg);
    manifest.input(&inputs.dataset)?;
    let mut rows = Vec::new();
    if inputs.ground_truth {
        let shapes: Vec<Shape3D> = ds
            .samples
            .iter()
            .map(|s| {
                s.gt_camera_frame().ok_or_else(|| Error::Format {
                    context: format!("sample {}", s.id),
                    reason: "evaluation needs gt and cam".into(),
                })
            })
            .collect::<Result<_>>()?;
        rows.push(evaluate_shapes("ground-truth", &shapes, &ds)?);
    }
    match (&inputs.teacher, &inputs.dictionary) {
        (Some(t), Some(d)) => {
            let dicts = load_dictionary(d)?;
            let outputs = load_teacher(t, &ds, &dicts)?;
            manifest.input(t)?;
            manifest.input(d)?;
            let shapes: Vec<Shape3D> = outputs.iter().map(TeacherOutput::camera_frame_shape).collect();
            rows.push(evaluate_shapes("teacher", &shapes, &ds)?);
        }
        (None, None) => {}
        _ => {
            return Err(Error::Config {
                field: "teacher".into(),
                reason: "--teacher and --dictionary must be given together".into(),
            })
        }
    }
    for path in &inputs.students {
        let net = load_student(path)?;
        manifest.input(path)?;
        let shapes = student_shapes(&net, &ds)?;
        rows.push(evaluate_shapes(&format!("student:{}", path.display()), &shapes, &ds)?);
    }
    if rows.is_empty() {
        return Err(Error::Config {
            field: "eval".into(),
            reason: "nothing to evaluate; pass --teacher/--dictionary, --student or --ground-truth".into(),
        });
    }
    create_dir(out)?;
    let table = format_table(&rows);
    let metrics_path = out.join(METRICS_FILE);
    write_json(&metrics_path, &EvalReport { rows })?;
    let table_path = out.join(TABLE_FILE);
    std::fs::write(&table_path, &table).map_err(io_err(&table_path))?;
    manifest.output(&metrics_path)?;
    manifest.output(&table_path)?;
    manifest.timings.insert("total".into(), seconds(start));
    manifest.write(out)?;
    Ok(table)
}

/// Runs the invariant suites; returns whether all passed.
pub fn check(cfg: &RunConfig, seed: u64, out: Option<&Path>) -> Result<bool> {
    let start = Instant::now();
    let results = run_checks(seed)?;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if let Some(out) = out {
        create_dir(out)?;
        let mut manifest = RunManifest::new("check", cfg);
        let path = out.join(CHECKS_FILE);
        write_json(&path, &results)?;
        manifest.output(&path)?;
        manifest.timings.insert("total".into(), seconds(start));
        manifest.write(out)?;
    }
    Ok(results.iter().all(|r| r.passed))
}
