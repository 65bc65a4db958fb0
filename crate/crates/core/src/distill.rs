//! Depth-hypothesis subspaces, their closed-form projection, and the convex
//! upper-bound distillation loss used to train the student on depth.

use nalgebra::{DMatrix, DVector};

use crate::autodiff::{sign, Differentiable, GradientRecord, ParameterSet};
use crate::error::{Error, Result};
use crate::geometry::{rotation_from_camera, CameraMatrix, Projection2D};
use crate::nrsfm::TeacherOutput;
use crate::sparse::{rotate_dictionary, split_xy_z, DictionaryStack};

pub const DEFAULT_MU: f64 = 0.3;
/// Gram matrices with a smallest eigenvalue below this get a ridge.
pub const GRAM_EIGEN_FLOOR: f64 = 1e-8;

/// Everything needed to evaluate the distillation loss of one sample.
#[derive(Debug, Clone)]
pub struct DistillContext {
    pub b_xy: DMatrix<f64>,
    pub b_z: DMatrix<f64>,
    pub b_z_pinv: DMatrix<f64>,
    pub phi: DVector<f64>,
    pub w: DVector<f64>,
    pub mu: f64,
    /// Ridge added to `B_zB_zᵀ` when it was near-singular; 0 otherwise.
    pub ridge: f64,
}

/// `B_zᵀ(B_zB_zᵀ + εI)⁻¹`, with `ε = 0` unless the Gram matrix is near-singular.
/// Returns the right inverse and the ridge used.
pub fn right_inverse(b_z: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let (p, k) = b_z.shape();
    if p == 0 || k < p {
        return Err(Error::Contract(format!("right inverse needs K₁ ≥ P, got {p}×{k}")));
    }
    if b_z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("depth dictionary has non-finite entries".into()));
    }
    let gram = b_z * b_z.transpose();
    let min_eig = gram.clone().symmetric_eigen().eigenvalues.min();
    let ridge = if min_eig >= GRAM_EIGEN_FLOOR { 0.0 } else { GRAM_EIGEN_FLOOR * gram.trace() / p as f64 };
    let reg = &gram + DMatrix::identity(p, p) * ridge;
    let chol = reg
        .cholesky()
        .ok_or_else(|| Error::Numerical("depth Gram matrix is not positive definite".into()))?;
    // (B_zB_zᵀ + εI)⁻¹B_z, transposed.
    Ok((chol.solve(b_z).transpose(), ridge))
}

impl DistillContext {
    pub fn from_parts(b_xy: DMatrix<f64>, b_z: DMatrix<f64>, phi: DVector<f64>, w: DVector<f64>, mu: f64) -> Result<Self> {
        let (p, k) = b_z.shape();
        if b_xy.shape() != (2 * p, k) || phi.len() != k || w.len() != 2 * p {
            return Err(Error::dim(format!(
                "context parts: B_xy {:?}, B_z {:?}, φ {}, w {}",
                b_xy.shape(),
                b_z.shape(),
                phi.len(),
                w.len()
            )));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::Contract(format!("μ must be non-negative, got {mu}")));
        }
        let (b_z_pinv, ridge) = right_inverse(&b_z)?;
        Ok(DistillContext {
            b_xy,
            b_z,
            b_z_pinv,
            phi,
            w,
            mu,
            ridge,
        })
    }

    pub fn points(&self) -> usize {
        self.b_z.nrows()
    }

    /// `B_zφ_nrsfm`, the teacher's depth in this context.
    pub fn teacher_depth(&self) -> DVector<f64> {
        &self.b_z * &self.phi
    }
}

/// Rotates `D₁` into the teacher camera's frame and caches the right inverse.
pub fn build_context(w: &Projection2D, dicts: &DictionaryStack, teacher: &TeacherOutput, mu: f64) -> Result<DistillContext> {
    context_for_camera(w, dicts.d1(), &teacher.camera, teacher.phi.clone(), mu)
}

pub fn context_for_camera(w: &Projection2D, d1: &DMatrix<f64>, camera: &CameraMatrix, phi: DVector<f64>, mu: f64) -> Result<DistillContext> {
    let r = rotation_from_camera(camera.matrix())?;
    let (b_xy, b_z) = split_xy_z(&rotate_dictionary(d1, &r)?)?;
    DistillContext::from_parts(b_xy, b_z, phi, w.vectorize(), mu)
}

fn check_depth(ctx: &DistillContext, z: &DVector<f64>) -> Result<()> {
    if z.len() != ctx.points() {
        return Err(Error::dim(format!("depth hypothesis has {} entries, expected {}", z.len(), ctx.points())));
    }
    Ok(())
}

/// `φ̃ = φ_nrsfm + B_z†(z′ − B_zφ_nrsfm)`: the Euclidean projection of the
/// teacher code onto `{φ : B_zφ = z′}`. Entries may be negative.
pub fn project_to_subspace(ctx: &DistillContext, z: &DVector<f64>) -> Result<DVector<f64>> {
    check_depth(ctx, z)?;
    Ok(&ctx.phi + &ctx.b_z_pinv * (z - ctx.teacher_depth()))
}

/// `‖B_xyφ − w‖₂ + μ‖φ‖₁`.
pub fn code_cost(ctx: &DistillContext, phi: &DVector<f64>) -> f64 {
    (&ctx.b_xy * phi - &ctx.w).norm() + ctx.mu * phi.lp_norm(1)
}

/// Distillation loss `L̃(z′) = code_cost(φ̃(z′))` and its gradient in `z′`.
pub fn distill_loss(ctx: &DistillContext, z: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let phi = project_to_subspace(ctx, z)?;
    let r = &ctx.b_xy * &phi - &ctx.w;
    let rn = r.norm();
    let mut d_phi = phi.map(|v| ctx.mu * sign(v) as f64);
    if rn > 0.0 {
        d_phi += ctx.b_xy.tr_mul(&r) / rn;
    }
    let loss = rn + ctx.mu * phi.lp_norm(1);
    Ok((loss, ctx.b_z_pinv.tr_mul(&d_phi)))
}

/// Sign pattern of `φ̃(z′)` and of the residual norm, for kink detection.
pub fn distill_kink_signature(ctx: &DistillContext, z: &DVector<f64>, out: &mut Vec<i8>) -> Result<()> {
    let phi = project_to_subspace(ctx, z)?;
    out.extend(phi.iter().map(|&v| sign(v)));
    out.push(sign((&ctx.b_xy * &phi - &ctx.w).norm()));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimum of `code_cost` over `{φ : B_zφ = z′}` by ADMM on the splitting
/// `r = B_xyφ − w`, `u = φ`, with `φ` kept exactly in the subspace.
///
/// Reference solver for tests on small instances; the reported value is the
/// cost of a feasible iterate, so it never undercuts the true minimum.
pub fn exact_loss_oracle(ctx: &DistillContext, z: &DVector<f64>, iters: usize) -> Result<OracleResult> {
    check_depth(ctx, z)?;
    let (p, k) = ctx.b_z.shape();
    let m = 2 * p;
    let rho = 1.0;
    // x-update: min_φ ½‖Aφ − v‖² s.t. B_zφ = z′, with A = [B_xy; I].
    // KKT: [AᵀA  B_zᵀ; B_z 0] [φ; ν] = [Aᵀv; z′].
    let ata = ctx.b_xy.tr_mul(&ctx.b_xy) + DMatrix::identity(k, k);
    let mut kkt = DMatrix::zeros(k + p, k + p);
    kkt.view_mut((0, 0), (k, k)).copy_from(&ata);
    kkt.view_mut((0, k), (k, p)).copy_from(&ctx.b_z.transpose());
    kkt.view_mut((k, 0), (p, k)).copy_from(&ctx.b_z);
    let lu = kkt.lu();
    if !lu.is_invertible() {
        return Err(Error::Numerical("oracle KKT system is singular".into()));
    }
    let solve_x = |v_r: &DVector<f64>, v_u: &DVector<f64>| -> Result<DVector<f64>> {
        let mut rhs = DVector::zeros(k + p);
        rhs.rows_mut(0, k).copy_from(&(ctx.b_xy.tr_mul(v_r) + v_u));
        rhs.rows_mut(k, p).copy_from(z);
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("oracle KKT solve failed".into()))?;
        Ok(sol.rows(0, k).into_owned())
    };

    // Start from the minimum-norm point of the subspace, independent of φ̃.
    let mut phi = solve_x(&DVector::zeros(m), &DVector::zeros(k))?;
    let mut r = &ctx.b_xy * &phi - &ctx.w;
    let mut u = phi.clone();
    let mut y_r = DVector::zeros(m);
    let mut y_u = DVector::zeros(k);
    let mut best = code_cost(ctx, &phi);
    for it in 1..=iters {
        // The affine offset w moves into the r-block: r = B_xyφ − w.
        phi = solve_x(&(&r + &ctx.w - &y_r), &(&u - &y_u))?;
        let ax_r = &ctx.b_xy * &phi - &ctx.w;
        let r_prev = r.clone();
        let u_prev = u.clone();
        // r-update: prox of ‖·‖₂/ρ.
        let v = &ax_r + &y_r;
        let vn = v.norm();
        r = if vn > 1.0 / rho { v * (1.0 - 1.0 / (rho * vn)) } else { DVector::zeros(m) };
        // u-update: prox of μ‖·‖₁/ρ.
        let t = ctx.mu / rho;
        u = (&phi + &y_u).map(|x| x.signum() * (x.abs() - t).max(0.0));
        y_r += &ax_r - &r;
        y_u += &phi - &u;
        best = best.min(code_cost(ctx, &phi));
        let primal = ((&ax_r - &r).norm_squared() + (&phi - &u).norm_squared()).sqrt();
        let dual = rho * ((&r - &r_prev).norm_squared() + (&u - &u_prev).norm_squared()).sqrt();
        if primal < 1e-10 && dual < 1e-10 {
            return Ok(OracleResult {
                value: best,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(OracleResult {
        value: best,
        iterations: iters,
        converged: false,
    })
}

/// The distillation loss as a function of a single `P×1` parameter `"z"`.
pub struct DistillObjective(pub DistillContext);

impl DistillObjective {
    fn depth(params: &ParameterSet) -> Result<DVector<f64>> {
        let z = params
            .get("z")
            .ok_or_else(|| Error::dim("distillation objective expects a tensor named z"))?;
        Ok(DVector::from_column_slice(z.as_slice()))
    }
}

impl Differentiable for DistillObjective {
    fn value_and_grad(&self, params: &ParameterSet) -> Result<(f64, GradientRecord)> {
        let (l, g) = distill_loss(&self.0, &Self::depth(params)?)?;
        let mut grad = params.zeros_like();
        grad.get_mut("z").expect("checked above").copy_from_slice(g.as_slice());
        Ok((l, grad))
    }

    fn kink_signature(&self, params: &ParameterSet) -> Result<Vec<i8>> {
        let mut out = Vec::new();
        distill_kink_signature(&self.0, &Self::depth(params)?, &mut out)?;
        Ok(out)
    }
}
