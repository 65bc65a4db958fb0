//! Value-and-gradient contract for every trainable computation, plus a
//! central finite-difference harness that checks hand-derived adjoints.
//!
//! Non-smooth primitives (ReLU, soft-thresholding, `|·|`, `‖·‖₂` at zero)
//! take subgradient 0 at the kink. Objectives report the signs of all their
//! non-smooth inputs through [`Differentiable::kink_signature`]; the harness
//! skips any coordinate whose perturbation interval changes that signature.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Named real tensors with fixed shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    tensors: Vec<DMatrix<f64>>,
}

/// Partial derivatives of a scalar loss, congruent with a [`ParameterSet`].
pub type GradientRecord = ParameterSet;

impl Default for ParameterSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: DMatrix<f64>) -> Result<()> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, tensor: DMatrix<f64>) -> Result<Self> {
        self.insert(name, tensor)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DMatrix<f64>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[DMatrix<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DMatrix<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| DMatrix::zeros(t.nrows(), t.ncols()))
                .collect(),
        }
    }

    pub fn is_congruent(&self, other: &ParameterSet) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn add_assign(&mut self, other: &ParameterSet) {
        debug_assert!(self.is_congruent(other));
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn scale_mut(&mut self, s: f64) {
        for t in &mut self.tensors {
            *t *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }
}

/// A scalar loss over a [`ParameterSet`] with fixed inputs.
pub trait Differentiable {
    fn value_and_grad(&self, params: &ParameterSet) -> Result<(f64, GradientRecord)>;

    fn value(&self, params: &ParameterSet) -> Result<f64> {
        Ok(self.value_and_grad(params)?.0)
    }

    /// Sign (−1, 0, +1) of every input to a non-smooth primitive.
    fn kink_signature(&self, _params: &ParameterSet) -> Result<Vec<i8>> {
        Ok(Vec::new())
    }
}

/// Evaluates `loss` and checks the gradient is congruent with `params`.
pub fn value_and_grad(loss: &dyn Differentiable, params: &ParameterSet) -> Result<(f64, GradientRecord)> {
    let (value, grad) = loss.value_and_grad(params)?;
    if !grad.is_congruent(params) {
        return Err(Error::Contract("gradient is not shape-congruent with its parameters".into()));
    }
    Ok((value, grad))
}

#[inline]
pub fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// `(‖r‖₂, ∂‖r‖₂/∂r)`, with the zero subgradient at `r = 0`.
pub fn l2_norm_with_grad(r: &DVector<f64>) -> (f64, DVector<f64>) {
    let n = r.norm();
    if n > 0.0 {
        (n, r / n)
    } else {
        (0.0, DVector::zeros(r.len()))
    }
}

/// `(‖x‖₁, sign(x))`, with sign(0) = 0.
pub fn l1_norm_with_grad(x: &DVector<f64>) -> (f64, DVector<f64>) {
    (x.iter().map(|v| v.abs()).sum(), x.map(|v| sign(v) as f64))
}

/// Settings of the finite-difference harness.
#[derive(Debug, Clone)]
pub struct FdConfig {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates sampled per tensor (all of them when the tensor is smaller).
    pub samples_per_tensor: usize,
    /// Coordinates within `kink_radius·eps` of a kink are skipped.
    pub kink_radius: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            eps: 1e-5,
            tol: 1e-4,
            samples_per_tensor: 50,
            kink_radius: 10.0,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdWorst {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub worst: Option<FdWorst>,
    pub tol: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

/// Compares analytic gradients with central differences on sampled coordinates.
///
/// Relative error is `|g - ĝ| / max(|g|, |ĝ|, floor)`.
pub fn finite_difference_check(loss: &dyn Differentiable, params: &ParameterSet, cfg: &FdConfig) -> Result<FdReport> {
    let (_, grad) = value_and_grad(loss, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    let mut report = FdReport {
        checked: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
        worst: None,
        tol: cfg.tol,
    };
    let base_signature = loss.kink_signature(params)?;
    let radius = cfg.kink_radius * cfg.eps;

    for t in 0..params.len() {
        let len = params.tensors[t].len();
        if len == 0 {
            continue;
        }
        let indices: Vec<usize> = if len <= cfg.samples_per_tensor {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, cfg.samples_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for idx in indices {
            let x0 = params.tensors[t].as_slice()[idx];
            if !base_signature.is_empty() {
                work.tensors[t].as_mut_slice()[idx] = x0 - radius;
                let lo = loss.kink_signature(&work)?;
                work.tensors[t].as_mut_slice()[idx] = x0 + radius;
                let hi = loss.kink_signature(&work)?;
                work.tensors[t].as_mut_slice()[idx] = x0;
                if lo != base_signature || hi != base_signature {
                    report.skipped_kinks += 1;
                    continue;
                }
            }
            work.tensors[t].as_mut_slice()[idx] = x0 + cfg.eps;
            let up = loss.value(&work)?;
            work.tensors[t].as_mut_slice()[idx] = x0 - cfg.eps;
            let down = loss.value(&work)?;
            work.tensors[t].as_mut_slice()[idx] = x0;
            let numeric = (up - down) / (2.0 * cfg.eps);
            let analytic = grad.tensors[t].as_slice()[idx];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor);
            if !rel.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient check at `{}`[{idx}]",
                    params.names[t]
                )));
            }
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some(FdWorst {
                    tensor: params.names[t].clone(),
                    index: idx,
                    analytic,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
