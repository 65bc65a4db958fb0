//! Camera estimation from a single 2D observation.
//!
//! The observation is block-sparse coded through the dictionary stack with
//! every code entry replaced by a `3×2` block. The top-level blocks `Πₖ` are
//! then factored as `cₖ·M` by alternating closed-form updates.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3x2};

use crate::autodiff::sign;
use crate::error::{Error, Result};
use crate::geometry::{orthonormalize_camera, CameraMatrix, Projection2D};
use crate::sparse::{soft, DictionaryStack};

pub const DEFAULT_CAMERA_ITERS: usize = 20;
const EARLY_EXIT_IMPROVEMENT: f64 = 1e-10;

/// Stack of `K` blocks `Πₖ ∈ ℝ^{3×2}`, stored as a `3K×2` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCodes(DMatrix<f64>);

impl BlockCodes {
    pub fn new(psi: DMatrix<f64>) -> Result<Self> {
        if psi.ncols() != 2 || !psi.nrows().is_multiple_of(3) || psi.nrows() == 0 {
            return Err(Error::dim(format!(
                "block codes must be 3K×2, got {}×{}",
                psi.nrows(),
                psi.ncols()
            )));
        }
        Ok(BlockCodes(psi))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn blocks(&self) -> usize {
        self.0.nrows() / 3
    }

    pub fn block(&self, k: usize) -> Matrix3x2<f64> {
        self.0.fixed_view::<3, 2>(3 * k, 0).into_owned()
    }
}

/// Sum of all entries.
pub fn grandsum<R: nalgebra::Dim, C: nalgebra::Dim, S: nalgebra::storage::Storage<f64, R, C>>(
    a: &nalgebra::Matrix<f64, R, C, S>,
) -> f64 {
    a.iter().sum()
}

/// Pre-activations and block codes of every level of one block-encoder pass.
#[derive(Debug, Clone)]
pub(crate) struct BlockTrace {
    pub pre: Vec<DMatrix<f64>>,
    pub psi: Vec<DMatrix<f64>>,
}

pub(crate) fn block_encode_trace(w: &DMatrix<f64>, levels: &[DMatrix<f64>], biases: &[DVector<f64>]) -> BlockTrace {
    let d1 = &levels[0];
    let points = w.nrows();
    let k1 = d1.ncols();
    let b1 = &biases[0];

    // D₁♯ᵀW: entry (3k + c, j) = Σ_p D₁[3p + c, k]·W[p, j]
    let mut pre = DMatrix::zeros(3 * k1, 2);
    for k in 0..k1 {
        for c in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for p in 0..points {
                    acc += d1[(3 * p + c, k)] * w[(p, j)];
                }
                pre[(3 * k + c, j)] = acc;
            }
        }
    }
    let psi = DMatrix::from_fn(3 * k1, 2, |r, j| soft(pre[(r, j)], b1[r / 3]));
    let mut trace = BlockTrace {
        pre: vec![pre],
        psi: vec![psi],
    };

    for (d, b) in levels.iter().zip(biases).skip(1) {
        let prev = trace.psi.last().expect("level 1 present");
        let (k_prev, k_next) = (d.nrows(), d.ncols());
        let mut pre = DMatrix::zeros(3 * k_next, 2);
        for k in 0..k_next {
            let mut block = Matrix3x2::zeros();
            for jdx in 0..k_prev {
                let weight = d[(jdx, k)];
                if weight != 0.0 {
                    block += prev.fixed_view::<3, 2>(3 * jdx, 0) * weight;
                }
            }
            pre.fixed_view_mut::<3, 2>(3 * k, 0).copy_from(&block);
        }
        let psi = DMatrix::from_fn(3 * k_next, 2, |r, j| soft(pre[(r, j)], b[r / 3]));
        trace.pre.push(pre);
        trace.psi.push(psi);
    }
    trace
}

/// Top-level block code of `W`:
/// `Ψ₁ = soft(D₁♯ᵀW, b₁⊗1)`, `Ψᵢ = soft((Dᵢ⊗I₃)ᵀΨᵢ₋₁, bᵢ⊗1)`.
///
/// The Kronecker products are applied block-wise: block `k` of `(Dᵢ⊗I₃)ᵀΨ`
/// is `Σⱼ Dᵢ[j,k]·Πⱼ`.
pub fn block_encode(w: &Projection2D, dicts: &DictionaryStack) -> Result<BlockCodes> {
    let points = dicts.points();
    if w.points() != points {
        return Err(Error::dim(format!(
            "observation has {} landmarks, dictionaries expect {points}",
            w.points()
        )));
    }
    let mut trace = block_encode_trace(w.matrix(), dicts.levels(), dicts.biases());
    BlockCodes::new(trace.psi.pop().expect("non-empty stack"))
}

/// `Σₖ ‖Πₖ - cₖM‖²_F`.
pub fn factorization_objective(psi: &BlockCodes, cam: &Matrix3x2<f64>, c: &DVector<f64>) -> f64 {
    (0..psi.blocks())
        .map(|k| (psi.block(k) - cam * c[k]).norm_squared())
        .sum()
}

/// Result of the rank-1 block factorization.
#[derive(Debug, Clone)]
pub struct CameraFactorization {
    pub camera: CameraMatrix,
    pub code: DVector<f64>,
    /// Objective after each completed round.
    pub objective_trace: Vec<f64>,
}

/// One completed round: `A = Σ cₖΠₖ`, `M = polar(A)`, `sₖ = ½·grandsum(Πₖ ⊙ M)`.
#[derive(Debug, Clone)]
pub(crate) struct FactorRound {
    pub a: Matrix3x2<f64>,
    pub m: Matrix3x2<f64>,
    pub s: DVector<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct FactorTrace {
    pub c0: DVector<f64>,
    pub rounds: Vec<FactorRound>,
}

pub(crate) fn factor_camera_trace(psi: &BlockCodes, iters: usize) -> Result<(CameraFactorization, FactorTrace)> {
    let blocks: Vec<Matrix3x2<f64>> = (0..psi.blocks()).map(|k| psi.block(k)).collect();
    if blocks.iter().all(|b| b.iter().all(|&v| v == 0.0)) {
        return Err(Error::DegenerateObservation("block code is identically zero".into()));
    }
    if blocks.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numerical("block code has non-finite entries".into()));
    }
    let c0 = DVector::from_iterator(
        blocks.len(),
        blocks.iter().map(|b| b.norm() / std::f64::consts::SQRT_2),
    );
    let mut code = c0.clone();
    let mut camera: Option<CameraMatrix> = None;
    let mut objective_trace = Vec::with_capacity(iters);
    let mut rounds = Vec::with_capacity(iters);
    for _ in 0..iters.max(1) {
        let weighted = blocks
            .iter()
            .zip(code.iter())
            .fold(Matrix3x2::zeros(), |acc, (b, &c)| acc + b * c);
        let next = match orthonormalize_camera(&weighted) {
            Ok(m) => m,
            Err(e) => match camera {
                // Codes collapsed onto a rank-deficient combination; keep the last camera.
                Some(_) => break,
                None => {
                    return Err(Error::DegenerateObservation(format!(
                        "initial block combination is degenerate: {e}"
                    )))
                }
            },
        };
        let s = DVector::from_iterator(
            blocks.len(),
            blocks.iter().map(|b| 0.5 * grandsum(&b.component_mul(next.matrix()))),
        );
        code = s.map(|v| v.max(0.0));
        rounds.push(FactorRound {
            a: weighted,
            m: *next.matrix(),
            s,
        });
        camera = Some(next);
        let obj = factorization_objective(psi, next.matrix(), &code);
        let improved = objective_trace
            .last()
            .map_or(f64::INFINITY, |prev: &f64| prev - obj);
        objective_trace.push(obj);
        if improved < EARLY_EXIT_IMPROVEMENT {
            break;
        }
    }
    Ok((
        CameraFactorization {
            camera: camera.expect("at least one round runs"),
            code,
            objective_trace,
        },
        FactorTrace { c0, rounds },
    ))
}

/// Alternating minimization of `‖Ψₙ - φₙ⊗M‖²` over orthonormal `M` and `φₙ ≥ 0`.
///
/// Starts from `cₖ = ‖Πₖ‖_F/√2`. Each round sets `M` to the polar factor of
/// `Σₖ cₖΠₖ`, then `cₖ = max(0, ½·grandsum(Πₖ ⊙ M))`.
pub fn factor_camera(psi: &BlockCodes, iters: usize) -> Result<CameraFactorization> {
    Ok(factor_camera_trace(psi, iters)?.0)
}

/// Camera estimate for one observation.
pub fn estimate_camera(w: &Projection2D, dicts: &DictionaryStack, iters: usize) -> Result<CameraMatrix> {
    let psi = block_encode(w, dicts)?;
    Ok(factor_camera(&psi, iters)?.camera)
}

/// Largest principal angle, in degrees, between the column spaces of two
/// orthonormal cameras.
pub fn principal_angle_deg(a: &Matrix3x2<f64>, b: &Matrix3x2<f64>) -> f64 {
    (a.transpose() * b).singular_values().min().clamp(-1.0, 1.0).acos().to_degrees()
}

/// Forward record of a full camera estimate, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct CameraTrace {
    pub blocks: BlockTrace,
    pub factor: FactorTrace,
    pub camera: CameraMatrix,
}

pub(crate) fn estimate_camera_trace(
    w: &DMatrix<f64>,
    levels: &[DMatrix<f64>],
    biases: &[DVector<f64>],
    iters: usize,
) -> Result<CameraTrace> {
    let blocks = block_encode_trace(w, levels, biases);
    let psi = BlockCodes::new(blocks.psi.last().expect("non-empty stack").clone())?;
    let (fact, factor) = factor_camera_trace(&psi, iters)?;
    Ok(CameraTrace {
        blocks,
        factor,
        camera: fact.camera,
    })
}

impl CameraTrace {
    /// Signs of every non-smooth input along the camera path, plus the round count.
    pub fn kink_signature(&self, biases: &[DVector<f64>], out: &mut Vec<i8>) {
        for (pre, b) in self.blocks.pre.iter().zip(biases) {
            for (r, &x) in pre.iter().enumerate() {
                let t = b[(r % pre.nrows()) / 3];
                out.push(sign(x.abs() - t));
                out.push(sign(x));
            }
        }
        for round in &self.factor.rounds {
            out.extend(round.s.iter().map(|&v| sign(v)));
        }
        out.push(self.factor.rounds.len() as i8);
    }
}

/// Vector-Jacobian product of the polar factor `M = A(AᵀA)^{-1/2}` of a full-rank `3×2` matrix.
pub(crate) fn polar_adjoint(a: &Matrix3x2<f64>, d_m: &Matrix3x2<f64>) -> Matrix3x2<f64> {
    let svd = a.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let sigma = svd.singular_values;
    let v = v_t.transpose();
    let m = u * v_t;
    let p_inv = v * Matrix2::from_diagonal(&sigma.map(|x| 1.0 / x)) * v_t;
    let h = m.transpose() * d_m * p_inv;
    let hs = v_t * (h + h.transpose()) * v;
    let y = Matrix2::from_fn(|i, j| hs[(i, j)] / (sigma[i] + sigma[j]));
    d_m * p_inv - a * (v * y * v_t)
}

/// Accumulates the gradient of a loss with respect to the dictionaries and
/// biases, given `∂L/∂M` at the estimated camera.
pub(crate) fn camera_backward(
    w: &DMatrix<f64>,
    levels: &[DMatrix<f64>],
    biases: &[DVector<f64>],
    trace: &CameraTrace,
    d_m: &Matrix3x2<f64>,
    d_levels: &mut [DMatrix<f64>],
    d_biases: &mut [DVector<f64>],
) {
    let n = levels.len();
    let top = trace.blocks.psi.last().expect("non-empty stack");
    let k = top.nrows() / 3;
    let block = |k: usize| top.fixed_view::<3, 2>(3 * k, 0).into_owned();
    let rounds = &trace.factor.rounds;
    let mut d_top = DMatrix::zeros(3 * k, 2);

    // Unroll the alternating rounds backwards.
    let mut d_mt = *d_m;
    let mut d_c = DVector::zeros(k);
    for t in (0..rounds.len()).rev() {
        let round = &rounds[t];
        for kk in 0..k {
            let d_s = if round.s[kk] > 0.0 { d_c[kk] } else { 0.0 };
            if d_s != 0.0 {
                let mut view = d_top.fixed_view_mut::<3, 2>(3 * kk, 0);
                view += round.m * (0.5 * d_s);
                d_mt += block(kk) * (0.5 * d_s);
            }
        }
        let d_a = polar_adjoint(&round.a, &d_mt);
        let prev_c = if t == 0 {
            trace.factor.c0.clone()
        } else {
            rounds[t - 1].s.map(|v| v.max(0.0))
        };
        for kk in 0..k {
            d_c[kk] = grandsum(&d_a.component_mul(&block(kk)));
            let mut view = d_top.fixed_view_mut::<3, 2>(3 * kk, 0);
            view += d_a * prev_c[kk];
        }
        d_mt = Matrix3x2::zeros();
    }
    for kk in 0..k {
        let b = block(kk);
        let norm = b.norm();
        if norm > 0.0 {
            let mut view = d_top.fixed_view_mut::<3, 2>(3 * kk, 0);
            view += b * (d_c[kk] / (norm * std::f64::consts::SQRT_2));
        }
    }

    // Soft-threshold cascade, top level down.
    let mut d_psi = d_top;
    for i in (0..n).rev() {
        let pre = &trace.blocks.pre[i];
        let b = &biases[i];
        let mut d_pre = DMatrix::zeros(pre.nrows(), 2);
        for r in 0..pre.nrows() {
            for j in 0..2 {
                let x = pre[(r, j)];
                let t = b[r / 3];
                if x.abs() > t {
                    d_pre[(r, j)] = d_psi[(r, j)];
                    d_biases[i][r / 3] -= d_psi[(r, j)] * x.signum();
                }
            }
        }
        if i > 0 {
            let prev = &trace.blocks.psi[i - 1];
            let d = &levels[i];
            let mut d_prev = DMatrix::zeros(prev.nrows(), 2);
            for kk in 0..d.ncols() {
                let g = d_pre.fixed_view::<3, 2>(3 * kk, 0).into_owned();
                for jdx in 0..d.nrows() {
                    let pj = prev.fixed_view::<3, 2>(3 * jdx, 0);
                    d_levels[i][(jdx, kk)] += grandsum(&g.component_mul(&pj));
                    let mut view = d_prev.fixed_view_mut::<3, 2>(3 * jdx, 0);
                    view += g * d[(jdx, kk)];
                }
            }
            d_psi = d_prev;
        } else {
            let points = w.nrows();
            for kk in 0..levels[0].ncols() {
                for c in 0..3 {
                    for p in 0..points {
                        d_levels[0][(3 * p + c, kk)] +=
                            d_pre[(3 * kk + c, 0)] * w[(p, 0)] + d_pre[(3 * kk + c, 1)] * w[(p, 1)];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, Shape3D};
    use crate::sparse::{reconstruct_shape, sharp_layout, soft_threshold};
    use nalgebra::{Matrix2, Matrix3, Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_camera(rng: &mut ChaCha8Rng) -> CameraMatrix {
        let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
        let r = Rotation3::new(axis * rng.random_range(-3.0..3.0)).into_inner();
        CameraMatrix::new(r.fixed_view::<3, 2>(0, 0).into_owned()).unwrap()
    }

    fn dense_block_encode(w: &Projection2D, dicts: &DictionaryStack) -> DMatrix<f64> {
        let sharp = sharp_layout(dicts.d1()).unwrap();
        let thresholds = |b: &DVector<f64>| DMatrix::from_fn(3 * b.len(), 2, |r, _| b[r / 3]);
        let mut psi = soft_threshold(&(sharp.matrix().transpose() * w.matrix()), &thresholds(&dicts.biases()[0]));
        for (d, b) in dicts.levels().iter().zip(dicts.biases()).skip(1) {
            let kron = d.kronecker(&Matrix3::<f64>::identity());
            psi = soft_threshold(&(kron.transpose() * psi), &thresholds(b));
        }
        psi
    }

    #[test]
    fn polar_adjoint_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let a = Matrix3x2::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let g = Matrix3x2::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let f = |x: &Matrix3x2<f64>| orthonormalize_camera(x).unwrap().matrix().dot(&g);
            let d = polar_adjoint(&a, &g);
            let eps = 1e-6;
            for i in 0..6 {
                let mut ap = a;
                let mut am = a;
                ap[i] += eps;
                am[i] -= eps;
                let fd = (f(&ap) - f(&am)) / (2.0 * eps);
                assert!((fd - d[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", d[i]);
            }
        }
    }

    #[test]
    fn grandsum_examples() {
        assert_eq!(grandsum(&Matrix3x2::<f64>::zeros()), 0.0);
        assert_eq!(grandsum(&Matrix3x2::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0)), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Matrix3x2::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let mut acc = 0.0;
        for r in 0..3 {
            for c in 0..2 {
                acc += a[(r, c)];
            }
        }
        assert!((grandsum(&a) - acc).abs() < 1e-15);
    }

    #[test]
    fn zero_observation_gives_zero_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dicts = DictionaryStack::random(3, &[4, 2], 0.01, &mut rng).unwrap();
        let w = Projection2D::new(DMatrix::zeros(3, 2)).unwrap();
        let psi = block_encode(&w, &dicts).unwrap();
        assert!(psi.matrix().iter().all(|&v| v == 0.0));
        assert!(matches!(estimate_camera(&w, &dicts, 20), Err(Error::DegenerateObservation(_))));
    }

    #[test]
    fn unthresholded_single_level_is_plain_product() {
        // D₁♯ with orthonormal rows: P = 1, K = 1, D₁ = e₁
        let d1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let dicts = DictionaryStack::new(1, vec![d1.clone()], vec![DVector::zeros(1)]).unwrap();
        let w = Projection2D::new(DMatrix::from_row_slice(1, 2, &[0.3, -0.7])).unwrap();
        let psi = block_encode(&w, &dicts).unwrap();
        let sharp = sharp_layout(&d1).unwrap();
        assert_eq!(psi.matrix(), &(sharp.matrix().transpose() * w.matrix()));
    }

    #[test]
    fn block_encode_matches_dense_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (p, sizes) in [(2usize, vec![3usize, 2]), (3, vec![4, 3, 1]), (1, vec![4, 2])] {
            let dicts = DictionaryStack::random(p, &sizes, 0.0, &mut rng).unwrap();
            let biases = dicts.biases().iter().map(|b| b.map(|_| rng.random_range(0.0..0.2))).collect();
            let dicts = DictionaryStack::new(p, dicts.levels().to_vec(), biases).unwrap();
            let w = Projection2D::new(DMatrix::from_fn(p, 2, |_, _| rng.random_range(-1.0..1.0))).unwrap();
            let fast = block_encode(&w, &dicts).unwrap();
            let dense = dense_block_encode(&w, &dicts);
            assert!((fast.matrix() - dense).amax() < 1e-12);
        }
    }

    #[test]
    fn single_orthonormal_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m0 = random_camera(&mut rng);
        let psi = BlockCodes::new(DMatrix::from_column_slice(3, 2, m0.matrix().as_slice())).unwrap();
        let out = factor_camera(&psi, 20).unwrap();
        assert!((out.camera.matrix() - m0.matrix()).amax() < 1e-12);
        assert!((out.code[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn consistent_factorization_recovered_in_one_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m0 = random_camera(&mut rng);
        let c = DVector::from_vec(vec![0.5, 0.0, 2.0, 1.25]);
        let kron = c.kronecker(m0.matrix());
        let psi = BlockCodes::new(DMatrix::from_column_slice(kron.nrows(), 2, kron.as_slice())).unwrap();
        let out = factor_camera(&psi, 1).unwrap();
        assert!((out.camera.matrix() - m0.matrix()).amax() < 1e-8);
        assert!((out.code - c).amax() < 1e-8);
    }

    #[test]
    fn factorization_beats_random_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = BlockCodes::new(DMatrix::from_fn(12, 2, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let out = factor_camera(&psi, 20).unwrap();
        let best = factorization_objective(&psi, out.camera.matrix(), &out.code);
        for _ in 0..100_000 {
            let m = random_camera(&mut rng);
            let c = DVector::from_fn(4, |_, _| rng.random_range(0.0..1.5));
            assert!(best <= factorization_objective(&psi, m.matrix(), &c) + 1e-12);
        }
    }

    #[test]
    fn objective_is_monotone_and_outputs_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..30 {
            let psi = BlockCodes::new(DMatrix::from_fn(15, 2, |_, _| rng.random_range(-1.0..1.0))).unwrap();
            let out = factor_camera(&psi, 50).unwrap();
            for pair in out.objective_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-9);
            }
            let gram = out.camera.matrix().transpose() * out.camera.matrix();
            assert!((gram - Matrix2::identity()).amax() <= 1e-8);
            assert!(out.code.iter().all(|&c| c >= 0.0));
        }
    }

    #[test]
    fn in_plane_rotation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let psi = DMatrix::from_fn(12, 2, |_, _| rng.random_range(-1.0..1.0));
            let angle: f64 = rng.random_range(-3.0..3.0);
            let q = Matrix2::new(angle.cos(), -angle.sin(), angle.sin(), angle.cos());
            let rotated = DMatrix::from_fn(12, 2, |r, c| {
                let block = psi.fixed_view::<3, 2>(3 * (r / 3), 0) * q;
                block[(r % 3, c)]
            });
            let a = factor_camera(&BlockCodes::new(psi).unwrap(), 20).unwrap();
            let b = factor_camera(&BlockCodes::new(rotated).unwrap(), 20).unwrap();
            let last_a = *a.objective_trace.last().unwrap();
            let last_b = *b.objective_trace.last().unwrap();
            assert!((last_a - last_b).abs() < 1e-9);
            assert!((a.camera.matrix() * q - b.camera.matrix()).amax() < 1e-8);
        }
    }

    #[test]
    fn estimated_camera_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dicts = DictionaryStack::random(6, &[12, 6], 0.0, &mut rng).unwrap();
        let phi = DVector::from_fn(12, |_, _| rng.random_range(0.0..1.0));
        let shape: Shape3D = reconstruct_shape(&phi, dicts.d1()).unwrap();
        let w = project(&shape, &CameraMatrix::identity());
        let m = estimate_camera(&w, &dicts, 20).unwrap();
        let gram = m.matrix().transpose() * m.matrix();
        assert!((gram - Matrix2::identity()).amax() <= 1e-8);
    }

    #[test]
    fn principal_angle_of_tilted_planes() {
        let a = Matrix3x2::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        assert!(principal_angle_deg(&a, &a) < 1e-6);
        let t = 30f64.to_radians();
        let b = Matrix3x2::new(1.0, 0.0, 0.0, t.cos(), 0.0, t.sin());
        assert!((principal_angle_deg(&a, &b) - 30.0).abs() < 1e-9);
        // Column order and signs do not change the subspace.
        let c = Matrix3x2::new(0.0, -1.0, t.cos(), 0.0, t.sin(), 0.0);
        assert!((principal_angle_deg(&a, &c) - 30.0).abs() < 1e-9);
    }

}
