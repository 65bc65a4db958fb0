//! Dictionary learning: per-sample cameras from the block-sparse estimator,
//! codes from the rotated-dictionary encoder/decoder, and Adam on the
//! reprojection-plus-sparsity loss with hand-derived adjoints.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::{debug, info};
use nalgebra::{DMatrix, DVector, Matrix3x2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sign, Differentiable, GradientRecord, ParameterSet};
use crate::camera::{camera_backward, estimate_camera, estimate_camera_trace, DEFAULT_CAMERA_ITERS};
use crate::error::{Error, Result};
use crate::geometry::{CameraMatrix, Projection2D, Shape3D};
use crate::jsonl;
use crate::optim::{Adam, PlateauSchedule};
use crate::sparse::{decode_trace_raw, encode_trace_raw, reconstruct_shape, DictionaryStack, DEFAULT_BIAS_INIT};

/// Sparsity weight λ chosen by cross-validation for the published runs.
pub const DEFAULT_SPARSITY_WEIGHT: f64 = 0.01;
/// Six-level hierarchy of the published runs, lowest level first.
pub const DEFAULT_LEVEL_SIZES: [usize; 6] = [256, 128, 64, 32, 16, 8];
/// Base step of the published schedule.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
/// Batch size of the published runs.
pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub level_sizes: Vec<usize>,
    pub lambda: f64,
    pub lr: f64,
    /// Step-size multiplier applied on a plateau of the evaluation loss.
    pub lr_drop: f64,
    pub min_lr: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub camera_iters: usize,
    /// Backpropagate through the camera estimator; when off, cameras are
    /// estimated per batch and held fixed.
    pub camera_gradient: bool,
    /// Use `‖r‖²` instead of `‖r‖` for the reprojection term.
    pub squared_residual: bool,
    pub bias_init: f64,
    /// Number of leading samples forming the fixed evaluation subset.
    pub eval_subset: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            level_sizes: DEFAULT_LEVEL_SIZES.to_vec(),
            lambda: DEFAULT_SPARSITY_WEIGHT,
            lr: DEFAULT_LEARNING_RATE,
            lr_drop: 0.1,
            min_lr: 1e-5,
            patience: 3,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 50,
            seed: 0,
            camera_iters: DEFAULT_CAMERA_ITERS,
            camera_gradient: true,
            squared_residual: false,
            bias_init: DEFAULT_BIAS_INIT,
            eval_subset: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.level_sizes.is_empty() {
            return Err(Error::config("level_sizes", "at least one level is required"));
        }
        if self.level_sizes.windows(2).any(|w| w[1] >= w[0]) || self.level_sizes.contains(&0) {
            return Err(Error::config("level_sizes", "sizes must be positive and strictly decreasing"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and >= 0"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.lr_drop > 0.0 && self.lr_drop <= 1.0) {
            return Err(Error::config("lr_drop", "must lie in (0, 1]"));
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.lr) {
            return Err(Error::config("min_lr", "must lie in (0, lr]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.camera_iters == 0 {
            return Err(Error::config("camera_iters", "must be >= 1"));
        }
        if !(self.bias_init >= 0.0 && self.bias_init.is_finite()) {
            return Err(Error::config("bias_init", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Teacher result for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOutput {
    pub camera: CameraMatrix,
    /// Level-1 code after the encode/decode pass.
    pub phi: DVector<f64>,
    /// `[D₁φ]_{P×3}` in the dictionary frame.
    pub shape: Shape3D,
    /// `B_zφ`: landmark depths in the camera frame.
    pub depth: DVector<f64>,
    pub loss: f64,
}

impl TeacherOutput {
    /// Reconstruction in the camera frame, `[D₁φ]·R`.
    pub fn camera_frame_shape(&self) -> Shape3D {
        self.shape.rotate(&self.camera.rotation())
    }
}

/// Reprojection and sparsity terms of the dictionary loss.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub reprojection: f64,
    /// `‖φ̃₁‖₁`, before weighting.
    pub l1: f64,
    pub lambda: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.reprojection + self.lambda * self.l1
    }
}

/// Image-plane rows of the rotated dictionary: block `p` is `Mᵀ·D₁[3p..3p+3, :]`.
pub fn projected_dictionary(d1: &DMatrix<f64>, cam: &Matrix3x2<f64>) -> Result<DMatrix<f64>> {
    if !d1.nrows().is_multiple_of(3) {
        return Err(Error::dim(format!("level-1 dictionary has {} rows", d1.nrows())));
    }
    let points = d1.nrows() / 3;
    let mt = cam.transpose();
    let mut b_xy = DMatrix::zeros(2 * points, d1.ncols());
    for p in 0..points {
        b_xy.rows_mut(2 * p, 2).copy_from(&(mt * d1.rows(3 * p, 3)));
    }
    Ok(b_xy)
}

/// Depth rows of the rotated dictionary, `B_z`; block `p` is `m₃ᵀ·D₁[3p..3p+3, :]`.
pub fn depth_dictionary(d1: &DMatrix<f64>, cam: &CameraMatrix) -> Result<DMatrix<f64>> {
    if !d1.nrows().is_multiple_of(3) {
        return Err(Error::dim(format!("level-1 dictionary has {} rows", d1.nrows())));
    }
    let r = cam.rotation();
    let m3 = r.column(2).transpose();
    let points = d1.nrows() / 3;
    let mut b_z = DMatrix::zeros(points, d1.ncols());
    for p in 0..points {
        b_z.row_mut(p).copy_from(&(m3 * d1.rows(3 * p, 3)));
    }
    Ok(b_z)
}

struct Forward {
    b_xy: DMatrix<f64>,
    enc_pre: Vec<DVector<f64>>,
    enc_codes: Vec<DVector<f64>>,
    dec_pre: Vec<Option<DVector<f64>>>,
    dec_codes: Vec<DVector<f64>>,
    residual: DVector<f64>,
    parts: LossParts,
}

impl Forward {
    fn phi(&self) -> &DVector<f64> {
        &self.dec_codes[0]
    }
}

fn check_observation(w: &DVector<f64>, levels: &[DMatrix<f64>]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::dim("empty dictionary stack"));
    }
    if 3 * w.len() != 2 * levels[0].nrows() {
        return Err(Error::dim(format!(
            "observation has {} entries, dictionary has {} rows",
            w.len(),
            levels[0].nrows()
        )));
    }
    Ok(())
}

fn forward(
    w: &DVector<f64>,
    levels: &[DMatrix<f64>],
    biases: &[DVector<f64>],
    cam: &Matrix3x2<f64>,
    lambda: f64,
    squared: bool,
) -> Result<Forward> {
    check_observation(w, levels)?;
    let b_xy = projected_dictionary(&levels[0], cam)?;
    let enc = encode_trace_raw(w, &b_xy, levels, biases)?;
    let top = enc.codes.last().expect("non-empty stack").clone();
    let dec = decode_trace_raw(&top, levels, biases)?;
    let phi = &dec.codes[0];
    let residual = &b_xy * phi - w;
    let norm = residual.norm();
    let parts = LossParts {
        reprojection: if squared { norm * norm } else { norm },
        l1: phi.iter().map(|v| v.abs()).sum(),
        lambda,
    };
    Ok(Forward {
        b_xy,
        enc_pre: enc.pre,
        enc_codes: enc.codes,
        dec_pre: dec.pre,
        dec_codes: dec.codes,
        residual,
        parts,
    })
}

struct Backward {
    d_levels: Vec<DMatrix<f64>>,
    d_biases: Vec<DVector<f64>>,
    d_camera: Matrix3x2<f64>,
}

fn backward(fwd: &Forward, w: &DVector<f64>, levels: &[DMatrix<f64>], cam: &Matrix3x2<f64>, squared: bool) -> Backward {
    let n = levels.len();
    let mut d_levels: Vec<DMatrix<f64>> = levels.iter().map(|d| DMatrix::zeros(d.nrows(), d.ncols())).collect();
    let mut d_biases: Vec<DVector<f64>> = levels.iter().map(|d| DVector::zeros(d.ncols())).collect();

    let norm = fwd.residual.norm();
    let d_r = if squared {
        &fwd.residual * 2.0
    } else if norm > 0.0 {
        &fwd.residual / norm
    } else {
        DVector::zeros(fwd.residual.len())
    };
    let phi = fwd.phi();
    let mut d_bxy = &d_r * phi.transpose();
    let mut d_code = fwd.b_xy.tr_mul(&d_r) + phi.map(|v| fwd.parts.lambda * sign(v) as f64);

    // Decoder, from φ̃₁ back up to the encoder output at the top level.
    for i in 0..n - 1 {
        let g = fwd.dec_pre[i].as_ref().expect("decoder pre-activation");
        let d_g = d_code.zip_map(g, |d, gv| if gv > 0.0 { d } else { 0.0 });
        d_levels[i + 1] += &d_g * fwd.dec_codes[i + 1].transpose();
        d_biases[i] -= &d_g;
        d_code = levels[i + 1].tr_mul(&d_g);
    }

    // Encoder, top level down to the observation.
    for i in (0..n).rev() {
        let d_a = d_code.zip_map(&fwd.enc_pre[i], |d, a| if a > 0.0 { d } else { 0.0 });
        d_biases[i] -= &d_a;
        if i > 0 {
            d_levels[i] += &fwd.enc_codes[i - 1] * d_a.transpose();
            d_code = &levels[i] * &d_a;
        } else {
            d_bxy += w * d_a.transpose();
        }
    }

    // B_xy block p = Mᵀ·D₁ block p.
    let points = w.len() / 2;
    let mut d_camera = Matrix3x2::zeros();
    for p in 0..points {
        let g = d_bxy.rows(2 * p, 2);
        d_camera += levels[0].rows(3 * p, 3) * g.transpose();
        let mut rows = d_levels[0].rows_mut(3 * p, 3);
        rows += cam * g;
    }
    Backward {
        d_levels,
        d_biases,
        d_camera,
    }
}

fn kink_signature(fwd: &Forward, out: &mut Vec<i8>) {
    for a in &fwd.enc_pre {
        out.extend(a.iter().map(|&v| sign(v)));
    }
    for g in fwd.dec_pre.iter().flatten() {
        out.extend(g.iter().map(|&v| sign(v)));
    }
    out.push(sign(fwd.residual.norm()));
}

/// `‖[D₁φ̃₁]M - W‖ + λ‖φ̃₁‖₁`, with `φ̃₁` from the encoder/decoder under the fixed camera.
pub fn nrsfm_loss(w: &Projection2D, dicts: &DictionaryStack, cam: &CameraMatrix, lambda: f64, squared: bool) -> Result<LossParts> {
    Ok(forward(&w.vectorize(), dicts.levels(), dicts.biases(), cam.matrix(), lambda, squared)?.parts)
}

/// Code estimate `φ̃₁` for an observation under a given camera.
pub fn estimate_code(w: &Projection2D, dicts: &DictionaryStack, cam: &CameraMatrix) -> Result<DVector<f64>> {
    let fwd = forward(&w.vectorize(), dicts.levels(), dicts.biases(), cam.matrix(), 0.0, false)?;
    Ok(fwd.dec_codes.into_iter().next().expect("non-empty stack"))
}

pub fn level_name(i: usize) -> String {
    format!("D{}", i + 1)
}

pub fn bias_name(i: usize) -> String {
    format!("b{}", i + 1)
}

/// Flattens a stack into `D1, b1, D2, b2, …` (biases as column matrices).
pub fn stack_to_params(dicts: &DictionaryStack) -> ParameterSet {
    let mut p = ParameterSet::new();
    for (i, (d, b)) in dicts.levels().iter().zip(dicts.biases()).enumerate() {
        p.insert(level_name(i), d.clone()).expect("unique names");
        p.insert(bias_name(i), DMatrix::from_column_slice(b.len(), 1, b.as_slice()))
            .expect("unique names");
    }
    p
}

type LevelsAndBiases = (Vec<DMatrix<f64>>, Vec<DVector<f64>>);

fn split_params(params: &ParameterSet) -> Result<LevelsAndBiases> {
    let n = params.len() / 2;
    if n == 0 || !params.len().is_multiple_of(2) {
        return Err(Error::Contract("dictionary parameters must come in level/bias pairs".into()));
    }
    let mut levels = Vec::with_capacity(n);
    let mut biases = Vec::with_capacity(n);
    for i in 0..n {
        let d = params
            .get(&level_name(i))
            .ok_or_else(|| Error::Contract(format!("missing `{}`", level_name(i))))?;
        let b = params
            .get(&bias_name(i))
            .ok_or_else(|| Error::Contract(format!("missing `{}`", bias_name(i))))?;
        levels.push(d.clone());
        biases.push(DVector::from_column_slice(b.as_slice()));
    }
    Ok((levels, biases))
}

pub fn params_to_stack(params: &ParameterSet, points: usize) -> Result<DictionaryStack> {
    let (levels, biases) = split_params(params)?;
    DictionaryStack::new(points, levels, biases)
}

fn grad_to_record(params: &ParameterSet, d_levels: Vec<DMatrix<f64>>, d_biases: Vec<DVector<f64>>) -> GradientRecord {
    let mut g = params.zeros_like();
    for (i, (d, b)) in d_levels.into_iter().zip(d_biases).enumerate() {
        *g.get_mut(&level_name(i)).expect("level") = d;
        g.get_mut(&bias_name(i)).expect("bias").copy_from_slice(b.as_slice());
    }
    g
}

/// Mean dictionary loss over observations, as a function of the dictionary
/// parameters.
///
/// With `camera_iters = Some(n)` every camera is re-estimated from the
/// parameters and differentiated through; `cameras` then only serve as
/// fallbacks for observations whose block code is degenerate.
#[derive(Debug, Clone)]
pub struct NrsfmObjective {
    pub observations: Vec<DVector<f64>>,
    pub cameras: Vec<Matrix3x2<f64>>,
    pub camera_iters: Option<usize>,
    pub lambda: f64,
    pub squared: bool,
}

struct SampleEval {
    parts: LossParts,
    camera: Matrix3x2<f64>,
    grad: Option<Backward>,
    kinks: Vec<i8>,
}

impl NrsfmObjective {
    fn sample(&self, i: usize, levels: &[DMatrix<f64>], biases: &[DVector<f64>], want_grad: bool, want_kinks: bool) -> Result<SampleEval> {
        let w = &self.observations[i];
        let trace = match self.camera_iters {
            None => None,
            Some(iters) => {
                let wm = DMatrix::from_fn(w.len() / 2, 2, |p, j| w[2 * p + j]);
                match estimate_camera_trace(&wm, levels, biases, iters) {
                    Ok(t) => Some((wm, t)),
                    Err(Error::DegenerateObservation(_)) => None,
                    Err(e) => return Err(e),
                }
            }
        };
        let camera = trace.as_ref().map_or(self.cameras[i], |(_, t)| *t.camera.matrix());
        let fwd = forward(w, levels, biases, &camera, self.lambda, self.squared)?;
        let mut kinks = Vec::new();
        if want_kinks {
            kink_signature(&fwd, &mut kinks);
            match &trace {
                Some((_, t)) => t.kink_signature(biases, &mut kinks),
                None => kinks.push(-1),
            }
        }
        let grad = want_grad.then(|| {
            let mut g = backward(&fwd, w, levels, &camera, self.squared);
            if let Some((wm, t)) = &trace {
                camera_backward(wm, levels, biases, t, &g.d_camera, &mut g.d_levels, &mut g.d_biases);
            }
            g
        });
        Ok(SampleEval {
            parts: fwd.parts,
            camera,
            grad,
            kinks,
        })
    }

    fn check(&self) -> Result<()> {
        if self.observations.is_empty() || self.observations.len() != self.cameras.len() {
            return Err(Error::Contract("objective needs one camera per observation".into()));
        }
        Ok(())
    }

    /// Mean loss parts, gradient, and the camera used for each observation.
    /// Per-sample terms are evaluated in parallel and summed in sample order.
    pub fn evaluate_with_cameras(&self, params: &ParameterSet) -> Result<(LossParts, GradientRecord, Vec<Matrix3x2<f64>>)> {
        self.check()?;
        let (levels, biases) = split_params(params)?;
        let per: Vec<SampleEval> = (0..self.observations.len())
            .into_par_iter()
            .map(|i| self.sample(i, &levels, &biases, true, false))
            .collect::<Result<_>>()?;
        let scale = 1.0 / per.len() as f64;
        let mut parts = LossParts {
            lambda: self.lambda,
            ..LossParts::default()
        };
        let mut grad = params.zeros_like();
        let mut cameras = Vec::with_capacity(per.len());
        for e in per {
            parts.reprojection += e.parts.reprojection;
            parts.l1 += e.parts.l1;
            let g = e.grad.expect("gradient requested");
            grad.add_assign(&grad_to_record(params, g.d_levels, g.d_biases));
            cameras.push(e.camera);
        }
        parts.reprojection *= scale;
        parts.l1 *= scale;
        grad.scale_mut(scale);
        Ok((parts, grad, cameras))
    }

    pub fn evaluate(&self, params: &ParameterSet) -> Result<(LossParts, GradientRecord)> {
        let (parts, grad, _) = self.evaluate_with_cameras(params)?;
        Ok((parts, grad))
    }
}

impl Differentiable for NrsfmObjective {
    fn value_and_grad(&self, params: &ParameterSet) -> Result<(f64, GradientRecord)> {
        let (parts, grad) = self.evaluate(params)?;
        Ok((parts.total(), grad))
    }

    fn value(&self, params: &ParameterSet) -> Result<f64> {
        self.check()?;
        let (levels, biases) = split_params(params)?;
        let mut total = 0.0;
        for i in 0..self.observations.len() {
            total += self.sample(i, &levels, &biases, false, false)?.parts.total();
        }
        Ok(total / self.observations.len() as f64)
    }

    fn kink_signature(&self, params: &ParameterSet) -> Result<Vec<i8>> {
        self.check()?;
        let (levels, biases) = split_params(params)?;
        let mut out = Vec::new();
        for i in 0..self.observations.len() {
            out.extend(self.sample(i, &levels, &biases, false, true)?.kinks);
        }
        Ok(out)
    }
}

/// Loss after one training epoch on the fixed evaluation subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub reprojection: f64,
    pub l1: f64,
}

/// Everything needed to continue training from a saved dictionary stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_done: usize,
    pub schedule: PlateauSchedule,
    pub history: Vec<EpochLog>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub dicts: DictionaryStack,
    pub teacher: Vec<TeacherOutput>,
    /// Entry 0 is the evaluation loss before the first update.
    pub history: Vec<EpochLog>,
    pub state: TrainState,
}

fn camera_or_fallback(w: &Projection2D, dicts: &DictionaryStack, iters: usize, previous: Option<CameraMatrix>) -> Result<CameraMatrix> {
    match estimate_camera(w, dicts, iters) {
        Ok(c) => Ok(c),
        Err(Error::DegenerateObservation(reason)) => {
            debug!("camera estimate degenerate ({reason}); keeping previous camera");
            Ok(previous.unwrap_or_else(CameraMatrix::identity))
        }
        Err(e) => Err(e),
    }
}

fn estimate_cameras(
    obs: &[Projection2D],
    idx: &[usize],
    dicts: &DictionaryStack,
    iters: usize,
    previous: &[Option<CameraMatrix>],
) -> Result<Vec<CameraMatrix>> {
    idx.par_iter()
        .map(|&i| camera_or_fallback(&obs[i], dicts, iters, previous[i]))
        .collect()
}

/// Mean loss parts over `idx`, cameras re-estimated with the current dictionaries.
pub fn evaluate_loss(obs: &[Projection2D], idx: &[usize], dicts: &DictionaryStack, cfg: &TrainConfig) -> Result<LossParts> {
    let none = vec![None; obs.len()];
    let cams = estimate_cameras(obs, idx, dicts, cfg.camera_iters, &none)?;
    let parts: Vec<LossParts> = idx
        .par_iter()
        .zip(cams.par_iter())
        .map(|(&i, cam)| nrsfm_loss(&obs[i], dicts, cam, cfg.lambda, cfg.squared_residual))
        .collect::<Result<_>>()?;
    let mut mean = LossParts {
        lambda: cfg.lambda,
        ..LossParts::default()
    };
    for p in &parts {
        mean.reprojection += p.reprojection;
        mean.l1 += p.l1;
    }
    mean.reprojection /= parts.len() as f64;
    mean.l1 /= parts.len() as f64;
    Ok(mean)
}

fn check_dataset(obs: &[Projection2D]) -> Result<usize> {
    let first = obs.first().ok_or_else(|| Error::Contract("dataset is empty".into()))?;
    let points = first.points();
    if let Some((i, w)) = obs.iter().enumerate().find(|(_, w)| w.points() != points) {
        return Err(Error::dim(format!("sample {i} has {} landmarks, expected {points}", w.points())));
    }
    Ok(points)
}

/// Learns a dictionary stack from observations and records the teacher outputs.
pub fn train_dictionaries(obs: &[Projection2D], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let points = check_dataset(obs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dicts = DictionaryStack::random(points, &cfg.level_sizes, cfg.bias_init, &mut rng)?;
    let state = TrainState {
        epochs_done: 0,
        schedule: PlateauSchedule::new(cfg.lr, cfg.lr_drop, cfg.min_lr, cfg.patience),
        history: Vec::new(),
    };
    continue_training(obs, cfg, dicts, state)
}

/// Runs the remaining epochs of `cfg.epochs` starting from `dicts` and `state`.
pub fn continue_training(obs: &[Projection2D], cfg: &TrainConfig, dicts: DictionaryStack, mut state: TrainState) -> Result<TrainOutcome> {
    cfg.validate()?;
    let points = check_dataset(obs)?;
    if dicts.points() != points {
        return Err(Error::dim(format!(
            "dictionaries expect {} landmarks, dataset has {points}",
            dicts.points()
        )));
    }
    let eval_idx: Vec<usize> = (0..obs.len().min(cfg.eval_subset.max(1))).collect();
    let mut params = stack_to_params(&dicts);
    let mut current = dicts;
    let mut adam = Adam::new(&params);
    let mut cameras: Vec<Option<CameraMatrix>> = vec![None; obs.len()];
    // Shuffles depend on the epoch index only, so a resumed run replays the same order.
    let mut order: Vec<usize> = (0..obs.len()).collect();

    if state.history.is_empty() {
        let p = evaluate_loss(obs, &eval_idx, &current, cfg)?;
        state.history.push(EpochLog {
            epoch: 0,
            lr: state.schedule.lr,
            loss: p.total(),
            reprojection: p.reprojection,
            l1: p.l1,
        });
    }

    for epoch in state.epochs_done + 1..=cfg.epochs {
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.sort_unstable();
        order.shuffle(&mut epoch_rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let fallback: Vec<Matrix3x2<f64>> = if cfg.camera_gradient {
                batch
                    .iter()
                    .map(|&i| *cameras[i].unwrap_or_else(CameraMatrix::identity).matrix())
                    .collect()
            } else {
                estimate_cameras(obs, batch, &current, cfg.camera_iters, &cameras)?
                    .iter()
                    .map(|c| *c.matrix())
                    .collect()
            };
            let objective = NrsfmObjective {
                observations: batch.iter().map(|&i| obs[i].vectorize()).collect(),
                cameras: fallback,
                camera_iters: cfg.camera_gradient.then_some(cfg.camera_iters),
                lambda: cfg.lambda,
                squared: cfg.squared_residual,
            };
            let (parts, grad, used) = objective.evaluate_with_cameras(&params)?;
            for (&i, c) in batch.iter().zip(&used) {
                cameras[i] = Some(CameraMatrix::new(*c)?);
            }
            if !parts.total().is_finite() || !grad.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite dictionary loss at epoch {epoch}, batch {b} (reprojection {}, l1 {})",
                    parts.reprojection, parts.l1
                )));
            }
            adam.step(&mut params, &grad, state.schedule.lr)?;
            for i in 0..current.n_levels() {
                params
                    .get_mut(&bias_name(i))
                    .expect("bias")
                    .apply(|v| *v = v.max(0.0));
            }
            current = params_to_stack(&params, points)?;
        }
        let p = evaluate_loss(obs, &eval_idx, &current, cfg)?;
        if !p.total().is_finite() {
            return Err(Error::Numerical(format!("non-finite evaluation loss after epoch {epoch}")));
        }
        let log = EpochLog {
            epoch,
            lr: state.schedule.lr,
            loss: p.total(),
            reprojection: p.reprojection,
            l1: p.l1,
        };
        info!(
            "epoch {epoch}: loss {:.6} (reprojection {:.6}, l1 {:.4}), lr {:.1e}",
            log.loss, log.reprojection, log.l1, log.lr
        );
        if state.schedule.observe(p.total()) {
            info!("plateau: step size now {:.1e}", state.schedule.lr);
        }
        state.history.push(log);
        state.epochs_done = epoch;
    }

    let teacher = teacher_outputs(obs, &current, cfg)?;
    Ok(TrainOutcome {
        dicts: current,
        teacher,
        history: state.history.clone(),
        state,
    })
}

/// Full pass recording camera, code, reconstruction and depth per observation.
pub fn teacher_outputs(obs: &[Projection2D], dicts: &DictionaryStack, cfg: &TrainConfig) -> Result<Vec<TeacherOutput>> {
    obs.par_iter()
        .map(|w| {
            let camera = camera_or_fallback(w, dicts, cfg.camera_iters, None)?;
            teacher_output_for_camera(w, dicts, camera, cfg.lambda, cfg.squared_residual)
        })
        .collect()
}

/// Code, shape and depth of one observation under a given camera.
pub fn teacher_output_for_camera(w: &Projection2D, dicts: &DictionaryStack, camera: CameraMatrix, lambda: f64, squared: bool) -> Result<TeacherOutput> {
    let fwd = forward(&w.vectorize(), dicts.levels(), dicts.biases(), camera.matrix(), lambda, squared)?;
    let phi = fwd.dec_codes[0].clone();
    let shape = reconstruct_shape(&phi, dicts.d1())?;
    let depth = depth_dictionary(dicts.d1(), &camera)? * &phi;
    Ok(TeacherOutput {
        camera,
        phi,
        shape,
        depth,
        loss: fwd.parts.total(),
    })
}

/// `B_zφ` for a teacher record, recomputed from the dictionary.
pub fn teacher_depth(t: &TeacherOutput, d1: &DMatrix<f64>) -> Result<DVector<f64>> {
    if t.phi.len() != d1.ncols() {
        return Err(Error::dim(format!(
            "teacher code has {} entries, dictionary has {} atoms",
            t.phi.len(),
            d1.ncols()
        )));
    }
    Ok(depth_dictionary(d1, &t.camera)? * &t.phi)
}

/// One line of a teacher file.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherRecord {
    pub id: String,
    pub camera: CameraMatrix,
    pub phi: DVector<f64>,
    pub depth: DVector<f64>,
    pub loss: f64,
}

impl TeacherRecord {
    pub fn from_output(id: impl Into<String>, t: &TeacherOutput) -> Self {
        TeacherRecord {
            id: id.into(),
            camera: t.camera,
            phi: t.phi.clone(),
            depth: t.depth.clone(),
            loss: t.loss,
        }
    }

    /// Rebuilds the full output given the dictionary that produced it.
    pub fn to_output(&self, d1: &DMatrix<f64>) -> Result<TeacherOutput> {
        Ok(TeacherOutput {
            camera: self.camera,
            phi: self.phi.clone(),
            shape: reconstruct_shape(&self.phi, d1)?,
            depth: self.depth.clone(),
            loss: self.loss,
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTeacher {
    id: String,
    #[serde(rename = "M")]
    m: Vec<f64>,
    phi: Vec<f64>,
    depth: Vec<f64>,
    loss: f64,
}

pub fn write_teacher_file(path: &Path, records: &[TeacherRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let mut line = String::from("{");
        jsonl::push_string_field(&mut line, "id", &r.id);
        line.push(',');
        jsonl::push_array_field(&mut line, "M", &r.camera.to_column_vec())?;
        line.push(',');
        jsonl::push_array_field(&mut line, "phi", r.phi.as_slice())?;
        line.push(',');
        jsonl::push_array_field(&mut line, "depth", r.depth.as_slice())?;
        line.push(',');
        jsonl::push_float_field(&mut line, "loss", r.loss)?;
        line.push_str("}\n");
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_teacher_file(path: &Path) -> Result<Vec<TeacherRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let context = |n: usize| format!("{}:{}", path.display(), n + 1);
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTeacher = serde_json::from_str(&line).map_err(|e| Error::format(context(n), e.to_string()))?;
        if raw.depth.is_empty() {
            return Err(Error::format(context(n), "empty depth vector"));
        }
        let camera = CameraMatrix::from_column_slice(&raw.m).map_err(|e| Error::format(context(n), e.to_string()))?;
        records.push(TeacherRecord {
            id: raw.id,
            camera,
            phi: DVector::from_vec(raw.phi),
            depth: DVector::from_vec(raw.depth),
            loss: raw.loss,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, FdConfig};
    use crate::geometry::project;
    use crate::sparse::{rotate_dictionary, split_xy_z};
    use nalgebra::{Rotation3, Vector3};
    use rand::Rng;

    fn random_camera(rng: &mut ChaCha8Rng) -> CameraMatrix {
        let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
        let r = Rotation3::new(axis * rng.random_range(-3.0..3.0)).into_inner();
        CameraMatrix::new(r.fixed_view::<3, 2>(0, 0).into_owned()).unwrap()
    }

    fn random_stack(rng: &mut ChaCha8Rng, points: usize, sizes: &[usize]) -> DictionaryStack {
        let mut d = DictionaryStack::random(points, sizes, 0.0, rng).unwrap();
        let biases = d.biases().iter().map(|b| b.map(|_| rng.random_range(0.02..0.2))).collect();
        d = DictionaryStack::new(points, d.levels().to_vec(), biases).unwrap();
        d
    }

    fn random_observation(rng: &mut ChaCha8Rng, points: usize) -> Projection2D {
        Projection2D::new(DMatrix::from_fn(points, 2, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn projected_dictionary_matches_rotate_then_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d1 = DMatrix::from_fn(12, 7, |_, _| rng.random_range(-1.0..1.0));
        let cam = random_camera(&mut rng);
        let (b_xy, b_z) = split_xy_z(&rotate_dictionary(&d1, &cam.rotation()).unwrap()).unwrap();
        assert!((projected_dictionary(&d1, cam.matrix()).unwrap() - b_xy).amax() < 1e-14);
        assert!((depth_dictionary(&d1, &cam).unwrap() - b_z).amax() < 1e-14);
    }

    #[test]
    fn perfect_reconstruction_gives_zero_loss() {
        // D₁ = I₃ on one landmark, no thresholds: the encoder/decoder is the identity on xy.
        let dicts = DictionaryStack::new(1, vec![DMatrix::identity(3, 3)], vec![DVector::zeros(3)]).unwrap();
        let w = Projection2D::new(DMatrix::from_row_slice(1, 2, &[0.3, 0.7])).unwrap();
        let parts = nrsfm_loss(&w, &dicts, &CameraMatrix::identity(), 0.0, false).unwrap();
        assert!(parts.total().abs() < 1e-15);
    }

    #[test]
    fn sparsity_term_arithmetic() {
        // φ̃ = (3, 7, 0) reproduces w exactly; ‖φ̃‖₁ = 10.
        let dicts = DictionaryStack::new(1, vec![DMatrix::identity(3, 3)], vec![DVector::zeros(3)]).unwrap();
        let w = Projection2D::new(DMatrix::from_row_slice(1, 2, &[3.0, 7.0])).unwrap();
        let parts = nrsfm_loss(&w, &dicts, &CameraMatrix::identity(), DEFAULT_SPARSITY_WEIGHT, false).unwrap();
        assert!(parts.reprojection.abs() < 1e-15);
        assert_eq!(parts.l1, 10.0);
        assert!((parts.total() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_compositional_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let dicts = random_stack(&mut rng, 5, &[9, 4]);
            let cam = random_camera(&mut rng);
            let w = random_observation(&mut rng, 5);
            let parts = nrsfm_loss(&w, &dicts, &cam, 0.01, false).unwrap();

            let b = rotate_dictionary(dicts.d1(), &cam.rotation()).unwrap();
            let (b_xy, _) = split_xy_z(&b).unwrap();
            let codes = crate::sparse::encode(&w.vectorize(), &b_xy, &dicts).unwrap();
            let phi = crate::sparse::decode(codes.last().unwrap(), &dicts).unwrap();
            let shape = reconstruct_shape(phi.values(), dicts.d1()).unwrap();
            let reproj = (project(&shape, &cam).matrix() - w.matrix()).norm();
            let expected = reproj + 0.01 * phi.values().sum();
            assert!((parts.total() - expected).abs() < 1e-12);
            assert!((parts.reprojection + parts.lambda * parts.l1 - parts.total()).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_passes_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for inst in 0..10 {
            let sizes: &[usize] = if inst % 2 == 0 { &[10, 6, 3] } else { &[8] };
            let dicts = random_stack(&mut rng, 4, sizes);
            let n = 3;
            let objective = NrsfmObjective {
                observations: (0..n).map(|_| random_observation(&mut rng, 4).vectorize()).collect(),
                cameras: (0..n).map(|_| *random_camera(&mut rng).matrix()).collect(),
                camera_iters: None,
                lambda: 0.01,
                squared: inst % 3 == 0,
            };
            let cfg = FdConfig {
                seed: inst,
                ..FdConfig::default()
            };
            let report = finite_difference_check(&objective, &stack_to_params(&dicts), &cfg).unwrap();
            assert!(report.passed(), "instance {inst}: {report:?}");
            assert!(report.checked > 50);
        }
    }

    #[test]
    fn end_to_end_gradient_passes_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for inst in 0..10 {
            let sizes: &[usize] = if inst % 2 == 0 { &[10, 6, 3] } else { &[8] };
            let dicts = random_stack(&mut rng, 4, sizes);
            let n = 2;
            let objective = NrsfmObjective {
                observations: (0..n).map(|_| random_observation(&mut rng, 4).vectorize()).collect(),
                cameras: vec![Matrix3x2::identity(); n],
                camera_iters: Some(3 + inst as usize % 3),
                lambda: 0.01,
                squared: inst % 3 == 0,
            };
            let cfg = FdConfig {
                seed: inst,
                ..FdConfig::default()
            };
            let report = finite_difference_check(&objective, &stack_to_params(&dicts), &cfg).unwrap();
            assert!(report.passed(), "instance {inst}: {report:?}");
            assert!(report.checked > 50);
        }
    }

    #[test]
    fn residual_scales_with_observation() {
        // Zero biases: the encoder/decoder is positively homogeneous, so the
        // zero-λ loss scales linearly with W.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dicts = DictionaryStack::random(5, &[9, 4], 0.0, &mut rng).unwrap();
        let cam = random_camera(&mut rng);
        let w = random_observation(&mut rng, 5);
        let base = nrsfm_loss(&w, &dicts, &cam, 0.0, false).unwrap().total();
        for s in [0.5, 2.0, 7.0] {
            let scaled = Projection2D::new(w.matrix() * s).unwrap();
            let l = nrsfm_loss(&scaled, &dicts, &cam, 0.0, false).unwrap().total();
            assert!((l - s * base).abs() < 1e-12 * (1.0 + l));
        }
    }

    #[test]
    fn teacher_depth_examples() {
        let d1 = DMatrix::<f64>::identity(3, 3);
        let cam = CameraMatrix::identity();
        let t = TeacherOutput {
            camera: cam,
            phi: DVector::from_vec(vec![0.5, 1.0, 2.0]),
            shape: reconstruct_shape(&DVector::from_vec(vec![0.5, 1.0, 2.0]), &d1).unwrap(),
            depth: DVector::zeros(1),
            loss: 0.0,
        };
        assert_eq!(teacher_depth(&t, &d1).unwrap().as_slice(), &[2.0]);
        let zero = TeacherOutput {
            phi: DVector::zeros(3),
            ..t.clone()
        };
        assert_eq!(teacher_depth(&zero, &d1).unwrap().as_slice(), &[0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d1 = DMatrix::from_fn(18, 10, |_, _| rng.random_range(-1.0..1.0));
        let phi = DVector::from_fn(10, |_, _| rng.random_range(0.0..1.0));
        let cam = random_camera(&mut rng);
        let t = TeacherOutput {
            camera: cam,
            shape: reconstruct_shape(&phi, &d1).unwrap(),
            phi,
            depth: DVector::zeros(6),
            loss: 0.0,
        };
        let oracle = t.shape.rotate(&cam.rotation()).depths();
        assert!((teacher_depth(&t, &d1).unwrap() - oracle).amax() < 1e-12);
    }

    #[test]
    fn planted_training_reduces_loss_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let planted = DictionaryStack::random(6, &[8, 4], 0.0, &mut rng).unwrap();
        let obs: Vec<Projection2D> = (0..64)
            .map(|_| {
                let phi = DVector::from_fn(8, |_, _| if rng.random_bool(0.3) { rng.random_range(0.0..1.0) } else { 0.0 });
                let shape = reconstruct_shape(&phi, planted.d1()).unwrap();
                project(&shape, &random_camera(&mut rng))
            })
            .collect();
        let cfg = TrainConfig {
            level_sizes: vec![8, 4],
            epochs: 4,
            batch_size: 16,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let a = train_dictionaries(&obs, &cfg).unwrap();
        let b = train_dictionaries(&obs, &cfg).unwrap();
        assert_eq!(a.dicts, b.dicts);
        assert_eq!(a.history, b.history);
        assert!(a.history.last().unwrap().loss <= a.history[1].loss);
        for t in &a.teacher {
            assert!(crate::geometry::orthonormality_error(t.camera.matrix()) <= 1e-8);
            assert_eq!(t.depth.len(), 6);
            assert!(t.phi.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn resumed_training_matches_uninterrupted_schedule_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let obs: Vec<Projection2D> = (0..20).map(|_| random_observation(&mut rng, 5)).collect();
        let cfg = TrainConfig {
            level_sizes: vec![6, 3],
            epochs: 2,
            ..TrainConfig::default()
        };
        let first = train_dictionaries(&obs, &cfg).unwrap();
        let more = TrainConfig { epochs: 4, ..cfg.clone() };
        let resumed = continue_training(&obs, &more, first.dicts.clone(), first.state.clone()).unwrap();
        assert_eq!(resumed.history.len(), 5);
        assert_eq!(resumed.state.epochs_done, 4);
        assert_eq!(&resumed.history[..3], &first.history[..]);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(train_dictionaries(&[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn large_sparsity_weight_collapses_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let obs: Vec<Projection2D> = (0..32).map(|_| random_observation(&mut rng, 5)).collect();
        let cfg = TrainConfig {
            level_sizes: vec![8, 4],
            lambda: 1e3,
            epochs: 40,
            batch_size: 8,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let out = train_dictionaries(&obs, &cfg).unwrap();
        let mean_l1: f64 = out.teacher.iter().map(|t| t.phi.sum()).sum::<f64>() / obs.len() as f64;
        let mean_w: f64 = obs.iter().map(|w| w.matrix().norm()).sum::<f64>() / obs.len() as f64;
        let mean_reproj: f64 = out.history.last().unwrap().reprojection;
        assert!(mean_l1 < 1e-3, "mean code mass {mean_l1}");
        assert!((mean_reproj - mean_w).abs() < 0.05 * mean_w, "{mean_reproj} vs {mean_w}");
    }

    #[test]
    fn teacher_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.jsonl");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let records: Vec<TeacherRecord> = (0..3)
            .map(|i| TeacherRecord {
                id: format!("s{i}"),
                camera: random_camera(&mut rng),
                phi: DVector::from_fn(5, |_, _| rng.random_range(0.0..1.0)),
                depth: DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0)),
                loss: rng.random_range(0.0..1.0),
            })
            .collect();
        write_teacher_file(&path, &records).unwrap();
        assert_eq!(read_teacher_file(&path).unwrap(), records);
    }
}
