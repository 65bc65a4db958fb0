//! Hierarchical dictionaries and the feed-forward code estimator.
//!
//! Level 1 is a `3P×K₁` dictionary whose rows are grouped per landmark
//! (`x, y, z` of point 0, then point 1, …). Deeper levels `Dᵢ` are `Kᵢ₋₁×Kᵢ`.
//! Codes are non-negative; the encoder and decoder are single ReLU passes
//! with the dictionaries as tied weights.

use nalgebra::{allocator::Allocator, DMatrix, DVector, DefaultAllocator, Dim, Matrix, Matrix3, OMatrix};
use nalgebra::storage::Storage;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::Shape3D;

/// Default threshold every bias starts from.
pub const DEFAULT_BIAS_INIT: f64 = 0.01;

/// `sign(x)·max(|x| - b, 0)`.
#[inline]
pub fn soft(x: f64, b: f64) -> f64 {
    if x > b {
        x - b
    } else if x < -b {
        x + b
    } else {
        0.0
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Elementwise soft-thresholding of `x` by the matching thresholds in `b`.
pub fn soft_threshold<R, C, S1, S2>(x: &Matrix<f64, R, C, S1>, b: &Matrix<f64, R, C, S2>) -> OMatrix<f64, R, C>
where
    R: Dim,
    C: Dim,
    S1: Storage<f64, R, C>,
    S2: Storage<f64, R, C>,
    DefaultAllocator: Allocator<R, C>,
{
    assert_eq!(x.shape(), b.shape(), "soft_threshold: threshold shape mismatch");
    x.zip_map(b, soft)
}

/// Stack of dictionaries `D₁ … Dₙ` with their non-negative thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryStack {
    points: usize,
    levels: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

impl DictionaryStack {
    pub fn new(points: usize, levels: Vec<DMatrix<f64>>, biases: Vec<DVector<f64>>) -> Result<Self> {
        let stack = DictionaryStack {
            points,
            levels,
            biases,
        };
        stack.validate()?;
        Ok(stack)
    }

    /// Gaussian init with std `1/√Kᵢ`; columns of `D₁` are rescaled to unit norm.
    pub fn random<R: Rng + ?Sized>(points: usize, sizes: &[usize], bias_init: f64, rng: &mut R) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Contract("dictionary stack needs at least one level".into()));
        }
        let mut levels = Vec::with_capacity(sizes.len());
        let mut rows = 3 * points;
        for &k in sizes {
            if k == 0 {
                return Err(Error::Contract("dictionary level of size 0".into()));
            }
            let normal = Normal::new(0.0, 1.0 / (k as f64).sqrt()).expect("finite std");
            let d = DMatrix::from_fn(rows, k, |_, _| normal.sample(rng));
            levels.push(d);
            rows = k;
        }
        for mut col in levels[0].column_iter_mut() {
            let n = col.norm();
            if n > 0.0 {
                col /= n;
            }
        }
        let biases = sizes.iter().map(|&k| DVector::from_element(k, bias_init)).collect();
        Self::new(points, levels, biases)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Contract("dictionary stack needs at least one level".into()));
        }
        if self.points == 0 {
            return Err(Error::Contract("dictionary stack needs at least one landmark".into()));
        }
        if self.levels.len() != self.biases.len() {
            return Err(Error::dim(format!(
                "{} levels but {} bias vectors",
                self.levels.len(),
                self.biases.len()
            )));
        }
        let mut rows = 3 * self.points;
        let mut prev_k = usize::MAX;
        for (i, (d, b)) in self.levels.iter().zip(&self.biases).enumerate() {
            if d.nrows() != rows {
                return Err(Error::dim(format!(
                    "level {} has {} rows, expected {rows}",
                    i + 1,
                    d.nrows()
                )));
            }
            let k = d.ncols();
            if k == 0 || k >= prev_k {
                return Err(Error::Contract(format!(
                    "level sizes must be positive and strictly decreasing (level {} has {k})",
                    i + 1
                )));
            }
            if b.len() != k {
                return Err(Error::dim(format!(
                    "bias {} has length {}, expected {k}",
                    i + 1,
                    b.len()
                )));
            }
            if b.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Contract(format!("bias {} must be finite and non-negative", i + 1)));
            }
            if d.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("level {} has non-finite entries", i + 1)));
            }
            rows = k;
            prev_k = k;
        }
        Ok(())
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|d| d.ncols()).collect()
    }

    pub fn levels(&self) -> &[DMatrix<f64>] {
        &self.levels
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn d1(&self) -> &DMatrix<f64> {
        &self.levels[0]
    }
}

/// Non-negative code at one level of the hierarchy (levels are 1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct CodeVector {
    level: usize,
    values: DVector<f64>,
}

impl CodeVector {
    pub fn new(level: usize, values: DVector<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Contract(format!("code entries must be non-negative, found {v}")));
        }
        Ok(CodeVector { level, values })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Level-1 dictionary in the `P×3K₁` layout: `d♯[p, 3k + c] = D₁[3p + c, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SharpDictionary(DMatrix<f64>);

impl SharpDictionary {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn atoms(&self) -> usize {
        self.0.ncols() / 3
    }
}

pub fn sharp_layout(d1: &DMatrix<f64>) -> Result<SharpDictionary> {
    if !d1.nrows().is_multiple_of(3) {
        return Err(Error::dim(format!("level-1 dictionary has {} rows", d1.nrows())));
    }
    let (points, atoms) = (d1.nrows() / 3, d1.ncols());
    Ok(SharpDictionary(DMatrix::from_fn(points, 3 * atoms, |p, col| {
        d1[(3 * p + col % 3, col / 3)]
    })))
}

pub fn unsharp_layout(d_sharp: &SharpDictionary) -> DMatrix<f64> {
    let m = &d_sharp.0;
    let (points, atoms) = (m.nrows(), m.ncols() / 3);
    DMatrix::from_fn(3 * points, atoms, |row, k| m[(row / 3, 3 * k + row % 3)])
}

/// Rotates every landmark block of `D₁` so that
/// `[B·φ]_{P×3} = [D₁·φ]_{P×3}·R` for every code `φ`.
pub fn rotate_dictionary(d1: &DMatrix<f64>, r: &Matrix3<f64>) -> Result<DMatrix<f64>> {
    if !d1.nrows().is_multiple_of(3) {
        return Err(Error::dim(format!("level-1 dictionary has {} rows", d1.nrows())));
    }
    if (r.transpose() * r - Matrix3::identity()).amax() > 1e-8 || (r.determinant() - 1.0).abs() > 1e-8 {
        return Err(Error::Contract("rotate_dictionary needs a proper rotation".into()));
    }
    let points = d1.nrows() / 3;
    let rt = r.transpose();
    let mut b = DMatrix::zeros(d1.nrows(), d1.ncols());
    for p in 0..points {
        let block = d1.rows(3 * p, 3);
        b.rows_mut(3 * p, 3).copy_from(&(rt * block));
    }
    Ok(b)
}

/// Splits a rotated dictionary into its image-plane rows `B_xy` (`2P×K₁`,
/// order `x¹, y¹, x², …`) and its depth rows `B_z` (`P×K₁`).
pub fn split_xy_z(b: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !b.nrows().is_multiple_of(3) {
        return Err(Error::dim(format!("rotated dictionary has {} rows", b.nrows())));
    }
    let points = b.nrows() / 3;
    let b_xy = DMatrix::from_fn(2 * points, b.ncols(), |row, k| b[(3 * (row / 2) + row % 2, k)]);
    let b_z = DMatrix::from_fn(points, b.ncols(), |p, k| b[(3 * p + 2, k)]);
    Ok((b_xy, b_z))
}

/// Pre-activations and codes of one encoder pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub pre: Vec<DVector<f64>>,
    pub codes: Vec<DVector<f64>>,
}

pub(crate) fn encode_trace(w: &DVector<f64>, b_xy: &DMatrix<f64>, dicts: &DictionaryStack) -> Result<EncodeTrace> {
    encode_trace_raw(w, b_xy, &dicts.levels, &dicts.biases)
}

pub(crate) fn encode_trace_raw(
    w: &DVector<f64>,
    b_xy: &DMatrix<f64>,
    levels: &[DMatrix<f64>],
    biases: &[DVector<f64>],
) -> Result<EncodeTrace> {
    if b_xy.nrows() != w.len() || b_xy.ncols() != levels[0].ncols() {
        return Err(Error::dim(format!(
            "encoder: B_xy is {}×{}, observation has {} entries, K₁ = {}",
            b_xy.nrows(),
            b_xy.ncols(),
            w.len(),
            levels[0].ncols()
        )));
    }
    let n = levels.len();
    let mut pre = Vec::with_capacity(n);
    let mut codes = Vec::with_capacity(n);
    let a1 = b_xy.tr_mul(w) - &biases[0];
    codes.push(a1.map(relu));
    pre.push(a1);
    for i in 1..n {
        let a = levels[i].tr_mul(&codes[i - 1]) - &biases[i];
        codes.push(a.map(relu));
        pre.push(a);
    }
    Ok(EncodeTrace { pre, codes })
}

/// Feed-forward code estimate: `φ₁ = ReLU(B_xyᵀw - b₁)`,
/// `φᵢ = ReLU(Dᵢᵀφᵢ₋₁ - bᵢ)`.
pub fn encode(w: &DVector<f64>, b_xy: &DMatrix<f64>, dicts: &DictionaryStack) -> Result<Vec<CodeVector>> {
    let trace = encode_trace(w, b_xy, dicts)?;
    trace
        .codes
        .into_iter()
        .enumerate()
        .map(|(i, c)| CodeVector::new(i + 1, c))
        .collect()
}

/// Pre-activations of a decoder pass; `pre[i]` produces the level-`i+1` code.
#[derive(Debug, Clone)]
pub struct DecodeTrace {
    pub pre: Vec<Option<DVector<f64>>>,
    pub codes: Vec<DVector<f64>>,
}

pub(crate) fn decode_trace(phi_n: &DVector<f64>, dicts: &DictionaryStack) -> Result<DecodeTrace> {
    decode_trace_raw(phi_n, &dicts.levels, &dicts.biases)
}

pub(crate) fn decode_trace_raw(
    phi_n: &DVector<f64>,
    levels: &[DMatrix<f64>],
    biases: &[DVector<f64>],
) -> Result<DecodeTrace> {
    let n = levels.len();
    if phi_n.len() != levels[n - 1].ncols() {
        return Err(Error::dim(format!(
            "decoder input has {} entries, top level has {}",
            phi_n.len(),
            levels[n - 1].ncols()
        )));
    }
    let mut pre = vec![None; n];
    let mut codes = vec![DVector::zeros(0); n];
    codes[n - 1] = phi_n.clone();
    for i in (1..n).rev() {
        // Dᵢ₊₁ maps level i+1 to level i; the produced level keeps its own threshold.
        let g = &levels[i] * &codes[i] - &biases[i - 1];
        codes[i - 1] = g.map(relu);
        pre[i - 1] = Some(g);
    }
    Ok(DecodeTrace { pre, codes })
}

/// Decoder cascade `φᵢ₋₁ = ReLU(Dᵢφᵢ - bᵢ₋₁)` from the top code down to `φ₁`.
pub fn decode(phi_n: &CodeVector, dicts: &DictionaryStack) -> Result<CodeVector> {
    let mut trace = decode_trace(phi_n.values(), dicts)?;
    CodeVector::new(1, trace.codes.swap_remove(0))
}

/// `[D₁φ₁]_{P×3}`.
pub fn reconstruct_shape(phi1: &DVector<f64>, d1: &DMatrix<f64>) -> Result<Shape3D> {
    if phi1.len() != d1.ncols() {
        return Err(Error::dim(format!(
            "code has {} entries, dictionary has {} atoms",
            phi1.len(),
            d1.ncols()
        )));
    }
    Shape3D::from_vectorized((d1 * phi1).as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Shape3D;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let axis = nalgebra::Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
        Rotation3::new(axis * rng.random_range(-3.0..3.0)).into_inner()
    }

    #[test]
    fn soft_threshold_definition() {
        assert!((soft(0.5, 0.2) - 0.3).abs() < 1e-15);
        assert!((soft(-0.5, 0.2) + 0.3).abs() < 1e-15);
        assert_eq!(soft(0.1, 0.2), 0.0);
        let x = DVector::from_vec(vec![0.5, -0.5, 0.1]);
        let b = DVector::from_element(3, 0.2);
        let y = soft_threshold(&x, &b);
        assert!((y - DVector::from_vec(vec![0.3, -0.3, 0.0])).amax() < 1e-15);
    }

    proptest! {
        #[test]
        fn soft_threshold_is_one_lipschitz(x in -10.0f64..10.0, y in -10.0f64..10.0, b in 0.0f64..3.0) {
            prop_assert!((soft(x, b) - soft(y, b)).abs() <= (x - y).abs() * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn stack_validation() {
        let d1 = DMatrix::zeros(6, 3);
        let d2 = DMatrix::zeros(3, 2);
        assert!(DictionaryStack::new(2, vec![d1.clone(), d2.clone()], vec![DVector::zeros(3), DVector::zeros(2)]).is_ok());
        // wrong chaining
        assert!(DictionaryStack::new(2, vec![d1.clone(), DMatrix::zeros(4, 2)], vec![DVector::zeros(3), DVector::zeros(2)]).is_err());
        // negative bias
        assert!(DictionaryStack::new(2, vec![d1.clone()], vec![DVector::from_element(3, -0.1)]).is_err());
        // non-decreasing sizes
        assert!(DictionaryStack::new(2, vec![d1, DMatrix::zeros(3, 3)], vec![DVector::zeros(3), DVector::zeros(3)]).is_err());
    }

    #[test]
    fn random_init_has_unit_level_one_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = DictionaryStack::random(5, &[20, 10, 4], DEFAULT_BIAS_INIT, &mut rng).unwrap();
        for col in s.d1().column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(s.level_sizes(), vec![20, 10, 4]);
        assert!(s.biases().iter().all(|b| b.iter().all(|&v| v == DEFAULT_BIAS_INIT)));
    }

    #[test]
    fn rotate_identity_and_half_turn() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d1 = random_matrix(&mut rng, 9, 4);
        assert_eq!(rotate_dictionary(&d1, &Matrix3::identity()).unwrap(), d1);

        let d = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let half_turn = Rotation3::from_axis_angle(&nalgebra::Vector3::z_axis(), std::f64::consts::PI).into_inner();
        let b = rotate_dictionary(&d, &half_turn).unwrap();
        assert!((b - DMatrix::from_column_slice(3, 1, &[-1.0, -2.0, 3.0])).amax() < 1e-12);
    }

    #[test]
    fn rotate_rejects_non_rotation() {
        let d1 = DMatrix::zeros(3, 2);
        let reflect = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, -1.0));
        assert!(rotate_dictionary(&d1, &reflect).is_err());
    }

    #[test]
    fn rotated_reconstruction_equals_rotated_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d1 = random_matrix(&mut rng, 15, 7);
        let r = random_rotation(&mut rng);
        let b = rotate_dictionary(&d1, &r).unwrap();
        for _ in 0..100 {
            let phi = DVector::from_fn(7, |_, _| rng.random_range(0.0..1.0));
            let lhs = reconstruct_shape(&phi, &b).unwrap();
            let shape = reconstruct_shape(&phi, &d1).unwrap();
            let rhs = shape.matrix() * r;
            assert!((lhs.matrix() - rhs).amax() < 1e-12);
        }
    }

    #[test]
    fn split_partitions_rows() {
        let b = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (xy, z) = split_xy_z(&b).unwrap();
        assert_eq!(xy, DMatrix::from_row_slice(2, 2, &[1.0, 4.0, 2.0, 5.0]));
        assert_eq!(z, DMatrix::from_row_slice(1, 2, &[3.0, 6.0]));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_matrix(&mut rng, 12, 5);
        let (xy, z) = split_xy_z(&b).unwrap();
        let rebuilt = DMatrix::from_fn(12, 5, |row, k| {
            let p = row / 3;
            match row % 3 {
                2 => z[(p, k)],
                c => xy[(2 * p + c, k)],
            }
        });
        assert_eq!(rebuilt, b);

        let phi = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let full = reconstruct_shape(&phi, &b).unwrap();
        let proj = &xy * &phi;
        let depth = &z * &phi;
        for p in 0..4 {
            assert!((full.matrix()[(p, 0)] - proj[2 * p]).abs() < 1e-14);
            assert!((full.matrix()[(p, 1)] - proj[2 * p + 1]).abs() < 1e-14);
            assert!((full.matrix()[(p, 2)] - depth[p]).abs() < 1e-14);
        }
    }

    fn toy_stack(levels: Vec<DMatrix<f64>>, biases: Vec<DVector<f64>>) -> DictionaryStack {
        let points = levels[0].nrows() / 3;
        DictionaryStack::new(points, levels, biases).unwrap()
    }

    #[test]
    fn encode_zero_and_saturation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d1 = random_matrix(&mut rng, 6, 3);
        let d2 = random_matrix(&mut rng, 3, 2);
        let zero_bias = toy_stack(vec![d1.clone(), d2.clone()], vec![DVector::zeros(3), DVector::zeros(2)]);
        let (b_xy, _) = split_xy_z(&d1).unwrap();
        let codes = encode(&DVector::zeros(4), &b_xy, &zero_bias).unwrap();
        assert!(codes.iter().all(|c| c.nnz() == 0));

        let huge = toy_stack(vec![d1, d2], vec![DVector::from_element(3, 1e6), DVector::from_element(2, 1e6)]);
        let w = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let codes = encode(&w, &b_xy, &huge).unwrap();
        assert!(codes.iter().all(|c| c.nnz() == 0));
    }

    #[test]
    fn encode_hand_evaluated_toy() {
        // P = 2, K₁ = 3
        let b_xy = DMatrix::from_row_slice(4, 3, &[
            1.0, 0.0, -1.0,
            0.0, 2.0, 1.0,
            1.0, 1.0, 0.0,
            -1.0, 0.0, 0.5,
        ]);
        let d1 = DMatrix::from_fn(6, 3, |row, k| if row % 3 == 2 { 0.0 } else { b_xy[(2 * (row / 3) + row % 3, k)] });
        let stack = toy_stack(vec![d1], vec![DVector::from_vec(vec![0.5, 0.1, 0.2])]);
        let w = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
        // Bᵀw = (1·1 + 0·2 + 1·(-1) + (-1)·0.5, 0·1 + 2·2 + 1·(-1) + 0, -1·1 + 1·2 + 0 + 0.5·0.5)
        //     = (-0.5, 3.0, 1.25)
        let codes = encode(&w, &b_xy, &stack).unwrap();
        let expected = DVector::from_vec(vec![0.0, 2.9, 1.05]);
        assert!((codes[0].values() - expected).amax() < 1e-14);
    }

    #[test]
    fn decode_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d1 = random_matrix(&mut rng, 6, 3);
        let d2 = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 0.5, 2.0, -1.0, 0.0]);
        let stack = toy_stack(vec![d1.clone(), d2.clone()], vec![DVector::from_vec(vec![0.1, 0.2, 0.0]), DVector::zeros(2)]);
        let top = CodeVector::new(2, DVector::from_vec(vec![1.0, 0.25])).unwrap();
        // D₂φ₂ = (0.75, 1.0, -1.0); minus b₁ = (0.65, 0.8, -1.0); ReLU → (0.65, 0.8, 0)
        let phi1 = decode(&top, &stack).unwrap();
        assert_eq!(phi1.level(), 1);
        assert!((phi1.values() - DVector::from_vec(vec![0.65, 0.8, 0.0])).amax() < 1e-14);

        let zero_bias = toy_stack(vec![d1.clone(), d2], vec![DVector::zeros(3), DVector::zeros(2)]);
        let zero = CodeVector::new(2, DVector::zeros(2)).unwrap();
        assert_eq!(decode(&zero, &zero_bias).unwrap().nnz(), 0);

        let single = toy_stack(vec![d1], vec![DVector::zeros(3)]);
        let phi = CodeVector::new(1, DVector::from_vec(vec![0.3, 0.0, 2.0])).unwrap();
        assert_eq!(decode(&phi, &single).unwrap(), phi);
    }

    #[test]
    fn reconstruct_examples() {
        let d1 = DMatrix::identity(3, 3);
        let s = reconstruct_shape(&DVector::from_vec(vec![1.0, 2.0, 3.0]), &d1).unwrap();
        assert_eq!(s.matrix(), &DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]));
        assert_eq!(reconstruct_shape(&DVector::zeros(3), &d1).unwrap(), Shape3D::zeros(1));

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d1 = random_matrix(&mut rng, 12, 6);
        let phi = DVector::from_fn(6, |_, _| rng.random_range(0.0..1.0));
        let s = reconstruct_shape(&phi, &d1).unwrap();
        for p in 0..4 {
            for c in 0..3 {
                let acc: f64 = (0..6).map(|k| d1[(3 * p + c, k)] * phi[k]).sum();
                assert!((s.matrix()[(p, c)] - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn sharp_layout_examples() {
        let d1 = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let sharp = sharp_layout(&d1).unwrap();
        assert_eq!(sharp.matrix(), &DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d1 = random_matrix(&mut rng, 15, 8);
        let sharp = sharp_layout(&d1).unwrap();
        assert_eq!(unsharp_layout(&sharp), d1);

        // D♯(φ ⊗ I₃) with the Kronecker product materialized.
        let phi = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let kron = phi.kronecker(&Matrix3::<f64>::identity());
        let lhs = sharp.matrix() * kron;
        let rhs = reconstruct_shape(&phi, &d1).unwrap();
        assert!((lhs - rhs.matrix()).amax() < 1e-12);
    }

    #[test]
    fn larger_thresholds_never_add_nonzeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let stack = DictionaryStack::random(4, &[10, 6, 3], 0.0, &mut rng).unwrap();
        let (b_xy, _) = split_xy_z(stack.d1()).unwrap();
        for _ in 0..50 {
            let w = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
            let level = rng.random_range(0..3);
            let idx = rng.random_range(0..stack.level_sizes()[level]);
            let mut bumped = stack.clone();
            bumped.biases[level][idx] += rng.random_range(0.0..0.5);
            let before = encode(&w, &b_xy, &stack).unwrap();
            let after = encode(&w, &b_xy, &bumped).unwrap();
            assert!(after[level].nnz() <= before[level].nnz());
        }
    }
}
