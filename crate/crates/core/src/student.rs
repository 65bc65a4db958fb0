//! Feature-conditioned pose regressor and its two depth objectives: the
//! distillation loss over depth hypotheses and L1 regression to teacher depth.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sign, Differentiable, GradientRecord, ParameterSet};
use crate::distill::{distill_kink_signature, distill_loss, DistillContext, DEFAULT_MU};
use crate::error::{Error, Result};
use crate::geometry::Shape3D;
use crate::optim::{Adam, PlateauSchedule};

pub const DEFAULT_HIDDEN: [usize; 3] = [256, 256, 256];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudentMode {
    /// 2D L1 plus the distillation loss on predicted depth.
    Distill,
    /// 2D L1 plus L1 regression to the teacher's depth.
    Baseline,
}

impl std::str::FromStr for StudentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distill" => Ok(StudentMode::Distill),
            "baseline" => Ok(StudentMode::Baseline),
            other => Err(Error::config("mode", format!("unknown student mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for StudentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StudentMode::Distill => "distill",
            StudentMode::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub lr_drop: f64,
    pub min_lr: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weight of the L1 code regulariser inside the distillation loss.
    pub mu: f64,
    /// Weight of the depth term relative to the 2D term.
    pub depth_weight: f64,
    /// Fraction of training samples held out to drive the step-size schedule.
    pub validation_fraction: f64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            hidden: DEFAULT_HIDDEN.to_vec(),
            lr: 1e-3,
            lr_drop: 0.1,
            min_lr: 1e-5,
            patience: 3,
            batch_size: 32,
            epochs: 50,
            seed: 0,
            mu: DEFAULT_MU,
            depth_weight: 1.0,
            validation_fraction: 0.1,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer widths must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.lr) {
            return Err(Error::config("min_lr", "must lie in (0, lr]"));
        }
        if !(self.lr_drop > 0.0 && self.lr_drop < 1.0) {
            return Err(Error::config("lr_drop", "must lie in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be positive"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::config("mu", "must be finite and >= 0"));
        }
        if !(self.depth_weight >= 0.0 && self.depth_weight.is_finite()) {
            return Err(Error::config("depth_weight", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Fully connected ReLU network from features to a `P×3` image-coordinate pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRegressor {
    widths: Vec<usize>,
    params: ParameterSet,
}

fn tensor<'a>(params: &'a ParameterSet, name: &str) -> Result<&'a DMatrix<f64>> {
    params
        .get(name)
        .ok_or_else(|| Error::dim(format!("network parameters lack tensor {name}")))
}

fn weight_name(l: usize) -> String {
    format!("W{}", l + 1)
}

fn bias_name(l: usize) -> String {
    format!("c{}", l + 1)
}

impl PoseRegressor {
    /// He-initialised weights, zero biases.
    pub fn new(input: usize, hidden: &[usize], points: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(3 * points);
        let mut params = ParameterSet::new();
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            params.insert(weight_name(l), DMatrix::from_fn(fan_out, fan_in, |_, _| normal.sample(rng)))?;
            params.insert(bias_name(l), DMatrix::zeros(fan_out, 1))?;
        }
        Self::from_params(widths, params)
    }

    pub fn from_params(widths: Vec<usize>, params: ParameterSet) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) || !widths.last().unwrap().is_multiple_of(3) {
            return Err(Error::dim(format!("invalid layer widths {widths:?}")));
        }
        if params.len() != 2 * (widths.len() - 1) {
            return Err(Error::dim(format!("expected {} tensors, got {}", 2 * (widths.len() - 1), params.len())));
        }
        for l in 0..widths.len() - 1 {
            let w = tensor(&params, &weight_name(l))?;
            let b = tensor(&params, &bias_name(l))?;
            if w.shape() != (widths[l + 1], widths[l]) || b.shape() != (widths[l + 1], 1) {
                return Err(Error::dim(format!("layer {} has shapes {:?} and {:?}", l + 1, w.shape(), b.shape())));
            }
        }
        if !params.is_finite() {
            return Err(Error::Numerical("network weights are not finite".into()));
        }
        Ok(PoseRegressor { widths, params })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn points(&self) -> usize {
        self.widths.last().unwrap() / 3
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn weight(&self, l: usize) -> &DMatrix<f64> {
        self.params.get(&weight_name(l)).expect("validated at construction")
    }

    pub fn bias(&self, l: usize) -> &DMatrix<f64> {
        self.params.get(&bias_name(l)).expect("validated at construction")
    }

    /// Interleaved `x,y` (length 2P) and `z` (length P) outputs.
    pub fn forward(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        student_forward(self, x)
    }

    /// The output as a `P×3` shape.
    pub fn predict_shape(&self, x: &DVector<f64>) -> Result<Shape3D> {
        let y = forward_trace(&self.params, &self.widths, x)?.output();
        Shape3D::from_vectorized(y.as_slice())
    }
}

struct Trace {
    /// Layer inputs; `acts[0]` is the feature vector.
    acts: Vec<DVector<f64>>,
    /// Pre-activations of every layer; the last one is the network output.
    pre: Vec<DVector<f64>>,
}

impl Trace {
    fn output(&self) -> DVector<f64> {
        self.pre.last().expect("at least one layer").clone()
    }
}

fn forward_trace(params: &ParameterSet, widths: &[usize], x: &DVector<f64>) -> Result<Trace> {
    if x.len() != widths[0] {
        return Err(Error::dim(format!("feature vector has {} entries, network expects {}", x.len(), widths[0])));
    }
    let layers = widths.len() - 1;
    let mut acts = vec![x.clone()];
    let mut pre = Vec::with_capacity(layers);
    for l in 0..layers {
        let w = tensor(params, &weight_name(l))?;
        let b = tensor(params, &bias_name(l))?;
        let z = w * &acts[l] + b.column(0);
        if l + 1 < layers {
            acts.push(z.map(|v| v.max(0.0)));
        }
        pre.push(z);
    }
    Ok(Trace { acts, pre })
}

fn split_output(y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let p = y.len() / 3;
    let xy = DVector::from_fn(2 * p, |i, _| y[3 * (i / 2) + i % 2]);
    let z = DVector::from_fn(p, |i, _| y[3 * i + 2]);
    (xy, z)
}

pub fn student_forward(net: &PoseRegressor, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    Ok(split_output(&forward_trace(&net.params, &net.widths, x)?.output()))
}

/// Accumulates parameter gradients for one sample given `∂L/∂output`.
fn backward_trace(params: &ParameterSet, trace: &Trace, d_out: DVector<f64>, grad: &mut GradientRecord) {
    let layers = trace.pre.len();
    let mut delta = d_out;
    for l in (0..layers).rev() {
        {
            let gw = grad.get_mut(&weight_name(l)).expect("congruent gradient");
            gw.ger(1.0, &delta, &trace.acts[l], 1.0);
        }
        {
            let gb = grad.get_mut(&bias_name(l)).expect("congruent gradient");
            let mut col = gb.column_mut(0);
            col += &delta;
        }
        if l > 0 {
            let w = params.get(&weight_name(l)).expect("validated parameters");
            let mut back = w.tr_mul(&delta);
            for (v, p) in back.iter_mut().zip(trace.pre[l - 1].iter()) {
                if *p <= 0.0 {
                    *v = 0.0;
                }
            }
            delta = back;
        }
    }
}

/// One training example. `gt` is only read by evaluation code.
#[derive(Debug, Clone)]
pub struct StudentSample {
    pub id: String,
    pub features: DVector<f64>,
    pub w: DVector<f64>,
    pub context: Option<DistillContext>,
    pub teacher_depth: Option<DVector<f64>>,
    pub gt: Option<Shape3D>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StudentLoss {
    pub xy: f64,
    pub depth: f64,
    pub depth_weight: f64,
}

impl StudentLoss {
    pub fn total(&self) -> f64 {
        self.xy + self.depth_weight * self.depth
    }
}

/// Mean student objective over a set of samples, as a function of the
/// network parameters.
pub struct StudentObjective<'a> {
    pub samples: Vec<&'a StudentSample>,
    pub widths: Vec<usize>,
    pub mode: StudentMode,
    pub depth_weight: f64,
}

impl<'a> StudentObjective<'a> {
    fn depth_term(&self, s: &StudentSample, z: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        match self.mode {
            StudentMode::Distill => {
                let ctx = s
                    .context
                    .as_ref()
                    .ok_or_else(|| Error::Contract(format!("sample {} has no distillation context", s.id)))?;
                distill_loss(ctx, z)
            }
            StudentMode::Baseline => {
                let t = s
                    .teacher_depth
                    .as_ref()
                    .ok_or_else(|| Error::Contract(format!("sample {} has no teacher depth", s.id)))?;
                if t.len() != z.len() {
                    return Err(Error::dim(format!("teacher depth has {} entries, expected {}", t.len(), z.len())));
                }
                let d = z - t;
                Ok((d.lp_norm(1), d.map(|v| sign(v) as f64)))
            }
        }
    }

    fn sample(&self, params: &ParameterSet, s: &StudentSample, grad: Option<&mut GradientRecord>) -> Result<StudentLoss> {
        let trace = forward_trace(params, &self.widths, &s.features)?;
        let (xy, z) = split_output(&trace.output());
        if xy.len() != s.w.len() {
            return Err(Error::dim(format!("sample {} has {} 2D values, network predicts {}", s.id, s.w.len(), xy.len())));
        }
        let r = &xy - &s.w;
        let (depth, d_z) = self.depth_term(s, &z)?;
        if let Some(grad) = grad {
            let p = z.len();
            let mut d_out = DVector::zeros(3 * p);
            for i in 0..p {
                d_out[3 * i] = sign(r[2 * i]) as f64;
                d_out[3 * i + 1] = sign(r[2 * i + 1]) as f64;
                d_out[3 * i + 2] = self.depth_weight * d_z[i];
            }
            backward_trace(params, &trace, d_out, grad);
        }
        Ok(StudentLoss {
            xy: r.lp_norm(1),
            depth,
            depth_weight: self.depth_weight,
        })
    }

    fn check(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Contract("student objective needs at least one sample".into()));
        }
        Ok(())
    }

    fn mean(&self, parts: impl Iterator<Item = StudentLoss>) -> StudentLoss {
        let mut out = StudentLoss {
            depth_weight: self.depth_weight,
            ..StudentLoss::default()
        };
        for l in parts {
            out.xy += l.xy;
            out.depth += l.depth;
        }
        let n = self.samples.len() as f64;
        out.xy /= n;
        out.depth /= n;
        out
    }

    pub fn loss(&self, params: &ParameterSet) -> Result<StudentLoss> {
        self.check()?;
        let parts: Vec<StudentLoss> = self
            .samples
            .par_iter()
            .map(|s| self.sample(params, s, None))
            .collect::<Result<_>>()?;
        Ok(self.mean(parts.into_iter()))
    }

    /// Mean loss and gradient; per-sample gradients are computed in parallel
    /// and summed in sample order.
    pub fn evaluate(&self, params: &ParameterSet) -> Result<(StudentLoss, GradientRecord)> {
        self.check()?;
        let per: Vec<(StudentLoss, GradientRecord)> = self
            .samples
            .par_iter()
            .map(|s| {
                let mut g = params.zeros_like();
                let l = self.sample(params, s, Some(&mut g))?;
                Ok((l, g))
            })
            .collect::<Result<_>>()?;
        let mut grad = params.zeros_like();
        for (_, g) in &per {
            grad.add_assign(g);
        }
        grad.scale_mut(1.0 / per.len() as f64);
        Ok((self.mean(per.into_iter().map(|(l, _)| l)), grad))
    }
}

impl Differentiable for StudentObjective<'_> {
    fn value_and_grad(&self, params: &ParameterSet) -> Result<(f64, GradientRecord)> {
        let (l, g) = self.evaluate(params)?;
        Ok((l.total(), g))
    }

    fn value(&self, params: &ParameterSet) -> Result<f64> {
        Ok(self.loss(params)?.total())
    }

    fn kink_signature(&self, params: &ParameterSet) -> Result<Vec<i8>> {
        let mut out = Vec::new();
        for s in &self.samples {
            let trace = forward_trace(params, &self.widths, &s.features)?;
            for pre in &trace.pre[..trace.pre.len() - 1] {
                out.extend(pre.iter().map(|&v| sign(v)));
            }
            let (xy, z) = split_output(&trace.output());
            out.extend((&xy - &s.w).iter().map(|&v| sign(v)));
            match self.mode {
                StudentMode::Distill => {
                    if let Some(ctx) = &s.context {
                        distill_kink_signature(ctx, &z, &mut out)?;
                    }
                }
                StudentMode::Baseline => {
                    if let Some(t) = &s.teacher_depth {
                        out.extend((&z - t).iter().map(|&v| sign(v)));
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentEpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_xy: f64,
    pub loss_depth: f64,
    pub val_loss: f64,
    /// Mean depth error against ground truth on the training samples that
    /// carry it; evaluation only.
    pub depth_error: Option<f64>,
    /// The same on the held-out validation samples.
    pub val_depth_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StudentOutcome {
    pub net: PoseRegressor,
    pub history: Vec<StudentEpochLog>,
}

/// Root joint used for depth alignment in every evaluation.
pub const ROOT_JOINT: usize = 0;

/// Mean root-aligned depth error of `net` over the samples with ground truth.
pub fn mean_depth_error(net: &PoseRegressor, samples: &[&StudentSample]) -> Result<Option<f64>> {
    let errors: Vec<f64> = samples
        .par_iter()
        .filter_map(|s| s.gt.as_ref().map(|gt| (s, gt)))
        .map(|(s, gt)| crate::geometry::depth_error(&net.predict_shape(&s.features)?, gt, ROOT_JOINT))
        .collect::<Result<_>>()?;
    Ok((!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64))
}

fn check_samples(samples: &[StudentSample]) -> Result<(usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Contract("student training needs at least one sample".into()))?;
    let (f, p2) = (first.features.len(), first.w.len());
    if f == 0 || p2 == 0 || p2 % 2 != 0 {
        return Err(Error::dim(format!("sample {} has {} features and {} 2D values", first.id, f, p2)));
    }
    if let Some(s) = samples.iter().find(|s| s.features.len() != f || s.w.len() != p2) {
        return Err(Error::dim(format!("sample {} does not match the first sample's dimensions", s.id)));
    }
    Ok((f, p2 / 2))
}

/// Trains a fresh network with Adam; the step size drops by `lr_drop` when
/// the held-out objective plateaus.
pub fn train_student(samples: &[StudentSample], mode: StudentMode, cfg: &StudentConfig) -> Result<StudentOutcome> {
    cfg.validate()?;
    let (features, points) = check_samples(samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = PoseRegressor::new(features, &cfg.hidden, points, &mut rng)?;

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if samples.len() > 1 { (cfg.validation_fraction * samples.len() as f64).round() as usize } else { 0 };
    let (val_idx, train_idx) = order.split_at(n_val.min(samples.len() - 1));
    let train: Vec<&StudentSample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let val: Vec<&StudentSample> = val_idx.iter().map(|&i| &samples[i]).collect();
    fn objective<'s>(set: Vec<&'s StudentSample>, widths: &[usize], mode: StudentMode, cfg: &StudentConfig) -> StudentObjective<'s> {
        StudentObjective {
            samples: set,
            widths: widths.to_vec(),
            mode,
            depth_weight: cfg.depth_weight,
        }
    }
    let monitor = objective(if val.is_empty() { train.clone() } else { val.clone() }, &net.widths, mode, cfg);

    let mut adam = Adam::new(&net.params);
    let mut schedule = PlateauSchedule::new(cfg.lr, cfg.lr_drop, cfg.min_lr, cfg.patience);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch_order = train.clone();
    for epoch in 1..=cfg.epochs {
        batch_order.shuffle(&mut rng);
        let lr = schedule.lr;
        let mut sums = StudentLoss::default();
        for batch in batch_order.chunks(cfg.batch_size) {
            let obj = objective(batch.to_vec(), &net.widths, mode, cfg);
            let (loss, grad) = obj.evaluate(&net.params)?;
            if !loss.total().is_finite() || !grad.is_finite() {
                return Err(Error::Numerical(format!(
                    "student loss became non-finite in epoch {epoch} (2D {}, depth {})",
                    loss.xy, loss.depth
                )));
            }
            let w = batch.len() as f64;
            sums.xy += loss.xy * w;
            sums.depth += loss.depth * w;
            adam.step(&mut net.params, &grad, lr)?;
        }
        let n = batch_order.len() as f64;
        let val_loss = monitor.loss(&net.params)?.total();
        schedule.observe(val_loss);
        let entry = StudentEpochLog {
            epoch,
            lr,
            loss: (sums.xy + cfg.depth_weight * sums.depth) / n,
            loss_xy: sums.xy / n,
            loss_depth: sums.depth / n,
            val_loss,
            depth_error: mean_depth_error(&net, &train)?,
            val_depth_error: mean_depth_error(&net, &val)?,
        };
        log::info!(
            "student {mode} epoch {epoch}: loss {:.6} (2D {:.6}, depth {:.6}) val {:.6} lr {:.1e}",
            entry.loss,
            entry.loss_xy,
            entry.loss_depth,
            entry.val_loss,
            lr
        );
        history.push(entry);
    }
    Ok(StudentOutcome { net, history })
}

pub fn train_student_distill(samples: &[StudentSample], cfg: &StudentConfig) -> Result<StudentOutcome> {
    train_student(samples, StudentMode::Distill, cfg)
}

pub fn train_student_baseline(samples: &[StudentSample], cfg: &StudentConfig) -> Result<StudentOutcome> {
    train_student(samples, StudentMode::Baseline, cfg)
}
