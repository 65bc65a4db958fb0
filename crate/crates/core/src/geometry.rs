//! Weak-perspective camera model, rigid alignment and pose metrics.
//!
//! Shapes are stored as `P×3` matrices (one landmark per row) and 2D
//! observations as `P×2` matrices. The vectorized form of a projection is
//! `u₁, v₁, u₂, v₂, …` and of a shape `x₁, y₁, z₁, x₂, …`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x2, Vector3};

use crate::error::{Error, Result};

/// Tolerance on `MᵀM = I₂` for a camera to count as orthonormal.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Orthonormal 3×2 weak-perspective camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraMatrix(Matrix3x2<f64>);

impl CameraMatrix {
    pub fn new(m: Matrix3x2<f64>) -> Result<Self> {
        let err = orthonormality_error(&m);
        if !err.is_finite() || err > ORTHONORMAL_TOL {
            return Err(Error::DegenerateCamera(format!(
                "columns are not orthonormal (max |MᵀM - I| = {err:e})"
            )));
        }
        Ok(CameraMatrix(m))
    }

    pub fn identity() -> Self {
        CameraMatrix(Matrix3x2::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0))
    }

    /// Builds a camera from six values in column-major order (m₁ then m₂).
    pub fn from_column_slice(values: &[f64]) -> Result<Self> {
        if values.len() != 6 {
            return Err(Error::dim(format!(
                "camera needs 6 values, got {}",
                values.len()
            )));
        }
        Self::new(Matrix3x2::from_column_slice(values))
    }

    pub fn to_column_vec(&self) -> Vec<f64> {
        self.0.as_slice().to_vec()
    }

    pub fn matrix(&self) -> &Matrix3x2<f64> {
        &self.0
    }

    /// `R = [m₁, m₂, m₁ × m₂]`.
    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_columns(&self.0)
    }
}

/// Max-abs deviation of `MᵀM` from the 2×2 identity.
pub fn orthonormality_error(m: &Matrix3x2<f64>) -> f64 {
    let gram = m.transpose() * m;
    (gram - nalgebra::Matrix2::identity()).amax()
}

/// Landmark positions, `P×3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape3D(DMatrix<f64>);

impl Shape3D {
    pub fn new(s: DMatrix<f64>) -> Result<Self> {
        if s.ncols() != 3 || s.nrows() == 0 {
            return Err(Error::dim(format!(
                "shape must be P×3 with P ≥ 1, got {}×{}",
                s.nrows(),
                s.ncols()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateShape("non-finite coordinate".into()));
        }
        Ok(Shape3D(s))
    }

    pub fn zeros(points: usize) -> Self {
        Shape3D(DMatrix::zeros(points, 3))
    }

    /// Reads `x₁, y₁, z₁, x₂, …`.
    pub fn from_vectorized(values: &[f64]) -> Result<Self> {
        if !values.len().is_multiple_of(3) {
            return Err(Error::dim(format!(
                "vectorized shape length {} is not a multiple of 3",
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(values.len() / 3, 3, values))
    }

    pub fn vectorize(&self) -> Vec<f64> {
        self.0.transpose().as_slice().to_vec()
    }

    pub fn points(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn point(&self, p: usize) -> Vector3<f64> {
        Vector3::new(self.0[(p, 0)], self.0[(p, 1)], self.0[(p, 2)])
    }

    /// Right-multiplies every landmark row by `r`.
    pub fn rotate(&self, r: &Matrix3<f64>) -> Shape3D {
        Shape3D(dynamic(&self.0 * r))
    }

    pub fn scale(&self, s: f64) -> Shape3D {
        Shape3D(&self.0 * s)
    }

    pub fn depths(&self) -> DVector<f64> {
        self.0.column(2).into_owned()
    }
}

/// Image-plane observation, `P×2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D(DMatrix<f64>);

impl Projection2D {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if w.ncols() != 2 || w.nrows() == 0 {
            return Err(Error::dim(format!(
                "projection must be P×2 with P ≥ 1, got {}×{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateObservation("non-finite coordinate".into()));
        }
        Ok(Projection2D(w))
    }

    /// Reads `u₁, v₁, u₂, v₂, …`.
    pub fn from_vectorized(values: &[f64]) -> Result<Self> {
        if !values.len().is_multiple_of(2) {
            return Err(Error::dim(format!(
                "vectorized projection length {} is odd",
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(values.len() / 2, 2, values))
    }

    pub fn vectorize(&self) -> DVector<f64> {
        DVector::from_column_slice(self.0.transpose().as_slice())
    }

    pub fn points(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Bone list of an articulated shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonTopology {
    edges: Vec<(usize, usize)>,
    points: usize,
}

impl SkeletonTopology {
    pub fn new(points: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::Contract("skeleton has no bones".into()));
        }
        for &(a, b) in &edges {
            if a >= points || b >= points {
                return Err(Error::Contract(format!(
                    "bone ({a}, {b}) out of range for {points} landmarks"
                )));
            }
            if a == b {
                return Err(Error::Contract(format!("bone ({a}, {b}) is a self-loop")));
            }
        }
        Ok(SkeletonTopology { edges, points })
    }

    /// Tree given as a parent list (`None` marks the root).
    pub fn from_parents(parents: &[Option<usize>]) -> Result<Self> {
        let edges = parents
            .iter()
            .enumerate()
            .filter_map(|(child, parent)| parent.map(|p| (p, child)))
            .collect();
        Self::new(parents.len(), edges)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn mean_bone_length(&self, shape: &Shape3D) -> f64 {
        let total: f64 = self
            .edges
            .iter()
            .map(|&(a, b)| (shape.point(a) - shape.point(b)).norm())
            .sum();
        total / self.edges.len() as f64
    }
}

fn dynamic<C: nalgebra::Dim>(m: nalgebra::OMatrix<f64, nalgebra::Dyn, C>) -> DMatrix<f64>
where
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<nalgebra::Dyn, C>,
{
    DMatrix::from_column_slice(m.nrows(), m.ncols(), m.as_slice())
}

fn check_same_points(a: &Shape3D, b: &Shape3D) -> Result<()> {
    if a.points() != b.points() {
        return Err(Error::dim(format!(
            "shapes have {} and {} landmarks",
            a.points(),
            b.points()
        )));
    }
    Ok(())
}

/// Weak-perspective projection `W = S·M`.
pub fn project(shape: &Shape3D, cam: &CameraMatrix) -> Projection2D {
    Projection2D(dynamic(shape.matrix() * cam.matrix()))
}

fn rotation_columns(m: &Matrix3x2<f64>) -> Matrix3<f64> {
    let m1: Vector3<f64> = m.column(0).into_owned();
    let m2: Vector3<f64> = m.column(1).into_owned();
    Matrix3::from_columns(&[m1, m2, m1.cross(&m2)])
}

/// Completes a camera to the rotation `[m₁, m₂, m₁ × m₂]`.
pub fn rotation_from_camera(m: &Matrix3x2<f64>) -> Result<Matrix3<f64>> {
    let err = orthonormality_error(m);
    if !err.is_finite() || err > ORTHONORMAL_TOL {
        return Err(Error::DegenerateCamera(format!(
            "cannot complete a non-orthonormal camera (max |MᵀM - I| = {err:e})"
        )));
    }
    Ok(rotation_columns(m))
}

/// Nearest orthonormal-column matrix in Frobenius norm (polar factor).
pub fn orthonormalize_camera(a: &Matrix3x2<f64>) -> Result<CameraMatrix> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCamera("non-finite entries".into()));
    }
    let svd = a.svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if smax == 0.0 || smin <= 1e-12 * smax {
        return Err(Error::DegenerateCamera(format!(
            "rank < 2 (singular values {smax:e}, {smin:e})"
        )));
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let polar = u * v_t;
    // Re-orthonormalize the two columns to squeeze out rounding from the SVD.
    let c1 = polar.column(0).normalize();
    let c2 = polar.column(1) - c1 * c1.dot(&polar.column(1));
    let c2 = c2.normalize();
    CameraMatrix::new(Matrix3x2::from_columns(&[c1, c2]))
}

/// Similarity transform `x ↦ s·x·R + t` (row-vector convention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, shape: &Shape3D) -> Shape3D {
        let mut out = shape.matrix() * self.rotation * self.scale;
        for mut row in out.row_iter_mut() {
            row += self.translation.transpose();
        }
        Shape3D(dynamic(out))
    }
}

fn centroid(m: &DMatrix<f64>) -> Vector3<f64> {
    let mean = m.row_mean();
    Vector3::new(mean[0], mean[1], mean[2])
}

fn centered(m: &DMatrix<f64>, c: &Vector3<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        row -= c.transpose();
    }
    out
}

/// Least-squares similarity mapping `pred` onto `gt`.
pub fn procrustes_transform(pred: &Shape3D, gt: &Shape3D) -> Result<Similarity> {
    check_same_points(pred, gt)?;
    let mu_p = centroid(pred.matrix());
    let mu_g = centroid(gt.matrix());
    let xp = centered(pred.matrix(), &mu_p);
    let xg = centered(gt.matrix(), &mu_g);
    let gt_spread = xg.norm();
    if gt_spread <= f64::EPSILON * (1.0 + mu_g.norm()) {
        return Err(Error::AlignmentUndefined(
            "ground-truth landmarks all coincide".into(),
        ));
    }
    let pred_spread2 = xp.norm_squared();
    if pred_spread2 == 0.0 {
        // Every candidate rotation is optimal; collapse onto the target centroid.
        return Ok(Similarity {
            scale: 0.0,
            rotation: Matrix3::identity(),
            translation: mu_g,
        });
    }

    let h: Matrix3<f64> = (xp.transpose() * &xg).fixed_view::<3, 3>(0, 0).into_owned();
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        // nalgebra sorts singular values descending, so index 2 is the smallest.
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
    let scale = trace / pred_spread2;
    let translation = mu_g - (mu_p.transpose() * rotation * scale).transpose();
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

/// `pred` after the best similarity alignment onto `gt`.
pub fn procrustes_align(pred: &Shape3D, gt: &Shape3D) -> Result<Shape3D> {
    Ok(procrustes_transform(pred, gt)?.apply(pred))
}

/// Rescales `pred` so its mean bone length matches `gt`.
pub fn scale_by_bone_length(
    pred: &Shape3D,
    gt: &Shape3D,
    topo: &SkeletonTopology,
) -> Result<Shape3D> {
    check_same_points(pred, gt)?;
    if topo.points() != pred.points() {
        return Err(Error::dim(format!(
            "topology has {} landmarks, shapes have {}",
            topo.points(),
            pred.points()
        )));
    }
    let pred_len = topo.mean_bone_length(pred);
    if pred_len == 0.0 || !pred_len.is_finite() {
        return Err(Error::DegenerateShape(
            "prediction has zero mean bone length".into(),
        ));
    }
    let ratio = topo.mean_bone_length(gt) / pred_len;
    if ratio == 1.0 {
        return Ok(pred.clone());
    }
    Ok(pred.scale(ratio))
}

fn mean_row_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = a - b;
    let total: f64 = diff.row_iter().map(|r| r.norm()).sum();
    total / diff.nrows() as f64
}

fn root_relative(s: &Shape3D, root: usize) -> DMatrix<f64> {
    centered(s.matrix(), &s.point(root))
}

fn check_root(s: &Shape3D, root: usize) -> Result<()> {
    if root >= s.points() {
        return Err(Error::Contract(format!(
            "root index {root} out of range for {} landmarks",
            s.points()
        )));
    }
    Ok(())
}

/// Mean per-joint position error after aligning the root joints.
pub fn mpjpe(pred: &Shape3D, gt: &Shape3D, root: usize) -> Result<f64> {
    check_same_points(pred, gt)?;
    check_root(pred, root)?;
    Ok(mean_row_distance(
        &root_relative(pred, root),
        &root_relative(gt, root),
    ))
}

/// Mean per-joint position error after similarity alignment.
pub fn pa_mpjpe(pred: &Shape3D, gt: &Shape3D) -> Result<f64> {
    let aligned = procrustes_align(pred, gt)?;
    Ok(mean_row_distance(aligned.matrix(), gt.matrix()))
}

/// Mean absolute depth difference after aligning root-joint depth.
pub fn depth_error(pred: &Shape3D, gt: &Shape3D, root: usize) -> Result<f64> {
    check_same_points(pred, gt)?;
    check_root(pred, root)?;
    let zp = pred.matrix().column(2);
    let zg = gt.matrix().column(2);
    let (rp, rg) = (zp[root], zg[root]);
    let total: f64 = zp
        .iter()
        .zip(zg.iter())
        .map(|(a, b)| ((a - rp) - (b - rg)).abs())
        .sum();
    Ok(total / pred.points() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(-3.0..3.0);
        Rotation3::new(axis.normalize() * angle).into_inner()
    }

    fn random_shape(rng: &mut ChaCha8Rng, p: usize) -> Shape3D {
        Shape3D::new(DMatrix::from_fn(p, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn random_camera(rng: &mut ChaCha8Rng) -> CameraMatrix {
        let r = random_rotation(rng);
        CameraMatrix::new(r.fixed_view::<3, 2>(0, 0).into_owned()).unwrap()
    }

    #[test]
    fn identity_camera_keeps_first_two_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_shape(&mut rng, 6);
        let w = project(&s, &CameraMatrix::identity());
        assert_eq!(w.matrix(), &s.matrix().columns(0, 2).into_owned());
        let zero = project(&Shape3D::zeros(4), &random_camera(&mut rng));
        assert!(zero.matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_matches_per_entry_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_shape(&mut rng, 8);
        let cam = random_camera(&mut rng);
        let w = project(&s, &cam);
        for p in 0..8 {
            for j in 0..2 {
                let mut acc = 0.0;
                for c in 0..3 {
                    acc += s.matrix()[(p, c)] * cam.matrix()[(c, j)];
                }
                assert!(close(w.matrix()[(p, j)], acc, 1e-14));
            }
        }
    }

    #[test]
    fn rotation_from_identity_and_swapped_cameras() {
        let r = rotation_from_camera(CameraMatrix::identity().matrix()).unwrap();
        assert_eq!(r, Matrix3::identity());

        let swapped = Matrix3x2::new(0.0, 1.0, 1.0, 0.0, 0.0, 0.0);
        let r = rotation_from_camera(&swapped).unwrap();
        let expected = Matrix3::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0);
        assert_eq!(r, expected);
        assert!(close(r.determinant(), 1.0, 1e-12));
    }

    #[test]
    fn rotation_rejects_non_orthonormal_camera() {
        let bad = Matrix3x2::new(2.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        assert!(matches!(
            rotation_from_camera(&bad),
            Err(Error::DegenerateCamera(_))
        ));
        assert!(CameraMatrix::new(bad).is_err());
    }

    #[test]
    fn orthonormalize_fixed_point_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = random_camera(&mut rng);
        let again = orthonormalize_camera(cam.matrix()).unwrap();
        assert!((again.matrix() - cam.matrix()).amax() < 1e-12);

        let scaled = CameraMatrix::identity().matrix() * 3.0;
        let out = orthonormalize_camera(&scaled).unwrap();
        assert!((out.matrix() - CameraMatrix::identity().matrix()).amax() < 1e-15);
    }

    #[test]
    fn orthonormalize_rejects_rank_one() {
        let a = Matrix3x2::new(1.0, 2.0, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            orthonormalize_camera(&a),
            Err(Error::DegenerateCamera(_))
        ));
    }

    #[test]
    fn orthonormalize_beats_random_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Matrix3x2::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let best = orthonormalize_camera(&a).unwrap();
        let best_dist = (a - best.matrix()).norm();
        for _ in 0..10_000 {
            let cand = random_camera(&mut rng);
            assert!(best_dist <= (a - cand.matrix()).norm() + 1e-12);
        }
    }

    #[test]
    fn procrustes_recovers_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_shape(&mut rng, 10);
        assert!((procrustes_align(&gt, &gt).unwrap().matrix() - gt.matrix()).amax() < 1e-12);

        let r = random_rotation(&mut rng);
        let t = Vector3::new(0.3, -2.0, 5.0);
        let moved = Similarity {
            scale: 1.7,
            rotation: r,
            translation: t,
        }
        .apply(&gt);
        let aligned = procrustes_align(&moved, &gt).unwrap();
        assert!((aligned.matrix() - gt.matrix()).amax() < 1e-10);
        assert!(pa_mpjpe(&moved, &gt).unwrap() < 1e-8);
    }

    #[test]
    fn procrustes_rejects_collapsed_ground_truth() {
        let gt = Shape3D::new(DMatrix::from_element(4, 3, 2.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pred = random_shape(&mut rng, 4);
        assert!(matches!(
            procrustes_align(&pred, &gt),
            Err(Error::AlignmentUndefined(_))
        ));
    }

    #[test]
    fn procrustes_never_reflects() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let gt = random_shape(&mut rng, 5);
            let mirrored = gt.rotate(&Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0)));
            let t = procrustes_transform(&mirrored, &gt).unwrap();
            assert!(close(t.rotation.determinant(), 1.0, 1e-10));
        }
    }

    fn human_like() -> SkeletonTopology {
        SkeletonTopology::from_parents(&[None, Some(0), Some(1), Some(0), Some(3)]).unwrap()
    }

    #[test]
    fn bone_length_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let topo = human_like();
        let gt = random_shape(&mut rng, 5);
        let doubled = gt.scale(2.0);
        let back = scale_by_bone_length(&doubled, &gt, &topo).unwrap();
        assert!((back.matrix() - gt.matrix()).amax() < 1e-15);
        assert_eq!(scale_by_bone_length(&gt, &gt, &topo).unwrap(), gt);

        let pred = random_shape(&mut rng, 5);
        let out = scale_by_bone_length(&pred, &gt, &topo).unwrap();
        assert!(close(
            topo.mean_bone_length(&out),
            topo.mean_bone_length(&gt),
            1e-10
        ));
        let twice = scale_by_bone_length(&out, &gt, &topo).unwrap();
        assert!((twice.matrix() - out.matrix()).amax() <= 1e-12);
    }

    #[test]
    fn bone_length_rejects_collapsed_prediction() {
        let topo = human_like();
        let gt = Shape3D::new(DMatrix::from_fn(5, 3, |r, c| (r * 3 + c) as f64)).unwrap();
        let pred = Shape3D::new(DMatrix::from_element(5, 3, 1.0)).unwrap();
        assert!(matches!(
            scale_by_bone_length(&pred, &gt, &topo),
            Err(Error::DegenerateShape(_))
        ));
    }

    #[test]
    fn topology_validation() {
        assert!(SkeletonTopology::new(3, vec![]).is_err());
        assert!(SkeletonTopology::new(3, vec![(0, 3)]).is_err());
        assert!(SkeletonTopology::new(3, vec![(1, 1)]).is_err());
    }

    #[test]
    fn mpjpe_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gt = random_shape(&mut rng, 7);
        assert_eq!(mpjpe(&gt, &gt, 0).unwrap(), 0.0);

        let shifted = Shape3D::new(gt.matrix().map(|v| v + 4.0)).unwrap();
        assert!(mpjpe(&shifted, &gt, 0).unwrap() < 1e-14);

        let mut moved = gt.matrix().clone();
        moved[(3, 0)] += 3.0;
        moved[(3, 1)] += 4.0;
        let moved = Shape3D::new(moved).unwrap();
        assert!(close(mpjpe(&moved, &gt, 0).unwrap(), 5.0 / 7.0, 1e-14));
        assert!(mpjpe(&moved, &gt, 9).is_err());
    }

    #[test]
    fn depth_error_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let gt = random_shape(&mut rng, 6);
        assert_eq!(depth_error(&gt, &gt, 0).unwrap(), 0.0);

        let mut lifted = gt.matrix().clone();
        lifted.column_mut(2).add_scalar_mut(2.5);
        let lifted = Shape3D::new(lifted).unwrap();
        assert!(depth_error(&lifted, &gt, 0).unwrap() < 1e-14);

        let mut bumped = gt.matrix().clone();
        bumped[(4, 2)] += 6.0;
        let bumped = Shape3D::new(bumped).unwrap();
        assert!(close(depth_error(&bumped, &gt, 0).unwrap(), 1.0, 1e-14));
    }

    #[test]
    fn vectorization_orders() {
        let s = Shape3D::from_vectorized(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(s.matrix()[(1, 0)], 4.0);
        assert_eq!(s.vectorize(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = Projection2D::from_vectorized(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(w.matrix()[(1, 0)], 3.0);
        assert_eq!(w.vectorize().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
