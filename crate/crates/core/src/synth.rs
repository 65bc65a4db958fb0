//! Synthetic articulated shapes from a planted dictionary stack, observed by
//! random weak-perspective cameras, with optional mirror-depth pairs whose
//! 2D projections coincide.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, CameraMatrix, Projection2D, Shape3D, SkeletonTopology};
use crate::jsonl;
use crate::sparse::{reconstruct_shape, DictionaryStack};

const MIRROR_RETRIES: usize = 100;

/// Parent of each joint in the 15-joint human-like tree.
///
/// 0 pelvis; 1–3 right hip, knee, ankle; 4–6 left hip, knee, ankle;
/// 7 thorax; 8 head; 9–11 left shoulder, elbow, wrist; 12–14 right shoulder, elbow, wrist.
pub const HUMAN_PARENTS: [Option<usize>; 15] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(0),
    Some(4),
    Some(5),
    Some(0),
    Some(7),
    Some(7),
    Some(9),
    Some(10),
    Some(7),
    Some(12),
    Some(13),
];

const HUMAN_BONE_LENGTHS: [f64; 15] = [0.0, 0.12, 0.45, 0.45, 0.12, 0.45, 0.45, 0.5, 0.25, 0.18, 0.3, 0.28, 0.18, 0.3, 0.28];

/// Rest direction of each bone; limbs point down, the trunk up.
const HUMAN_REST: [[f64; 3]; 15] = [
    [0.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
];

/// Limb joints whose subtree may be mirrored: knees, ankles, elbows, wrists.
const HUMAN_LIMBS: [usize; 8] = [2, 3, 5, 6, 10, 11, 13, 14];

/// Tree skeleton with bone lengths and rest directions for atom synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub parents: Vec<Option<usize>>,
    pub bone_lengths: Vec<f64>,
    rest: Vec<Vector3<f64>>,
    /// Maximum deviation (radians) of a bone from its rest direction.
    spread: Vec<f64>,
    pub mirrorable: Vec<usize>,
}

impl Skeleton {
    pub fn human() -> Self {
        let spread = (0..15)
            .map(|j| if HUMAN_LIMBS.contains(&j) { 1.4 } else { 0.25 })
            .collect();
        Skeleton {
            parents: HUMAN_PARENTS.to_vec(),
            bone_lengths: HUMAN_BONE_LENGTHS.to_vec(),
            rest: HUMAN_REST.iter().map(|d| Vector3::from_row_slice(d)).collect(),
            spread,
            mirrorable: HUMAN_LIMBS.to_vec(),
        }
    }

    /// Heap-ordered tree (`parent(j) = (j-1)/2`) with unconstrained bone directions.
    pub fn generic(points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::config("points", "at least 2 landmarks are required"));
        }
        let parents: Vec<Option<usize>> = (0..points).map(|j| (j > 0).then(|| (j - 1) / 2)).collect();
        let bone_lengths = (0..points).map(|j| if j == 0 { 0.0 } else { 0.3 + 0.05 * (j % 4) as f64 }).collect();
        Ok(Skeleton {
            parents,
            bone_lengths,
            rest: vec![Vector3::y(); points],
            spread: vec![std::f64::consts::PI; points],
            mirrorable: (1..points).collect(),
        })
    }

    pub fn for_points(points: usize) -> Result<Self> {
        if points == HUMAN_PARENTS.len() {
            Ok(Self::human())
        } else {
            Self::generic(points)
        }
    }

    pub fn points(&self) -> usize {
        self.parents.len()
    }

    pub fn topology(&self) -> SkeletonTopology {
        SkeletonTopology::from_parents(&self.parents).expect("valid tree")
    }

    /// Joints in the subtree rooted at `j`, including `j`.
    pub fn subtree(&self, j: usize) -> Vec<usize> {
        let mut out = vec![j];
        let mut k = 0;
        while k < out.len() {
            let node = out[k];
            out.extend((0..self.points()).filter(|&c| self.parents[c] == Some(node)));
            k += 1;
        }
        out
    }

    /// Random pose with every bone within its spread of the rest direction, centred.
    fn random_pose<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let mut joints = vec![Vector3::zeros(); self.points()];
        for j in 1..self.points() {
            let parent = self.parents[j].expect("non-root");
            let dir = perturbed_direction(&self.rest[j], self.spread[j], rng);
            joints[j] = joints[parent] + dir * self.bone_lengths[j];
        }
        let mean = joints.iter().sum::<Vector3<f64>>() / joints.len() as f64;
        DMatrix::from_fn(self.points(), 3, |p, c| joints[p][c] - mean[c])
    }
}

/// Direction at angle ≤ `spread` from `rest`, uniform over the cap.
fn perturbed_direction<R: Rng + ?Sized>(rest: &Vector3<f64>, spread: f64, rng: &mut R) -> Vector3<f64> {
    let rest = rest.normalize();
    let cos_min = spread.min(std::f64::consts::PI).cos();
    let cos_t = rng.random_range(cos_min..=1.0);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let helper = if rest.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = rest.cross(&helper).normalize();
    let v = rest.cross(&u);
    rest * cos_t + (u * phi.cos() + v * phi.sin()) * sin_t
}

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle).into_inner()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CameraDistribution {
    /// Uniformly random rotations.
    Random,
    /// Rotation about the vertical axis within ±`range_deg`, after a fixed tilt.
    Azimuth { range_deg: f64, elevation_deg: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub points: usize,
    pub level_sizes: Vec<usize>,
    pub samples: usize,
    pub camera: CameraDistribution,
    /// Std of the Gaussian noise added to the 2D observations.
    pub noise: f64,
    /// Fraction of samples emitted in mirror-depth pairs.
    pub ambiguity: f64,
    /// Feature noise: 2D noise std and flip probability of each depth-order bit.
    pub feature_noise: f64,
    /// Active top-level atoms per sample.
    pub active_atoms: usize,
    /// Nonzeros per column of the planted upper levels.
    pub level_fan_in: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            points: 15,
            level_sizes: vec![16, 8],
            samples: 1000,
            camera: CameraDistribution::Random,
            noise: 0.0,
            ambiguity: 0.0,
            feature_noise: 0.05,
            active_atoms: 2,
            level_fan_in: 3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points < 2 {
            return Err(Error::config("points", "at least 2 landmarks are required"));
        }
        if self.level_sizes.is_empty() || self.level_sizes.contains(&0) {
            return Err(Error::config("level_sizes", "need at least one positive level size"));
        }
        if self.samples == 0 {
            return Err(Error::config("samples", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return Err(Error::config("ambiguity", "must lie in [0, 1]"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise", "must be finite and >= 0"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::config("feature_noise", "must be finite and >= 0"));
        }
        let top = *self.level_sizes.last().expect("non-empty");
        if self.active_atoms == 0 || self.active_atoms > top {
            return Err(Error::config("active_atoms", format!("must lie in 1..={top}")));
        }
        if self.level_fan_in == 0 {
            return Err(Error::config("level_fan_in", "must be >= 1"));
        }
        if let CameraDistribution::Azimuth { range_deg, elevation_deg } = self.camera {
            if !(range_deg.is_finite() && elevation_deg.is_finite() && range_deg >= 0.0) {
                return Err(Error::config("camera", "azimuth range must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Ambiguous,
    Plain,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Ambiguous => "ambiguous",
            Group::Plain => "plain",
        }
    }
}

/// One observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub w: Projection2D,
    /// Ground truth in the world frame.
    pub gt: Option<Shape3D>,
    pub cam: Option<CameraMatrix>,
    pub features: Option<Vec<f64>>,
    pub group: String,
    /// Factor the stored coordinates were divided by; not serialized.
    pub scale: f64,
}

impl Sample {
    pub fn points(&self) -> usize {
        self.w.points()
    }

    /// Ground truth in the camera frame, `gt·R`.
    pub fn gt_camera_frame(&self) -> Option<Shape3D> {
        match (&self.gt, &self.cam) {
            (Some(gt), Some(cam)) => Some(gt.rotate(&cam.rotation())),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn points(&self) -> Option<usize> {
        self.samples.first().map(Sample::points)
    }

    pub fn observations(&self) -> Vec<Projection2D> {
        self.samples.iter().map(|s| s.w.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let points = self.points().ok_or_else(|| Error::format("dataset", "no samples"))?;
        for s in &self.samples {
            if s.points() != points {
                return Err(Error::format(
                    format!("sample {}", s.id),
                    format!("{} landmarks, expected {points}", s.points()),
                ));
            }
            if s.gt.as_ref().is_some_and(|g| g.points() != points) {
                return Err(Error::format(format!("sample {}", s.id), "gt landmark count differs from w"));
            }
        }
        Ok(())
    }
}

/// Generator output: the dataset and the model that produced it.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub planted: DictionaryStack,
    pub skeleton: Skeleton,
}

fn planted_stack<R: Rng + ?Sized>(cfg: &SynthConfig, skeleton: &Skeleton, rng: &mut R) -> Result<DictionaryStack> {
    let k1 = cfg.level_sizes[0];
    let mut d1 = DMatrix::zeros(3 * cfg.points, k1);
    for k in 0..k1 {
        let pose = skeleton.random_pose(rng);
        for p in 0..cfg.points {
            for c in 0..3 {
                d1[(3 * p + c, k)] = pose[(p, c)];
            }
        }
    }
    let mut levels = vec![d1];
    for pair in cfg.level_sizes.windows(2) {
        let (rows, cols) = (pair[0], pair[1]);
        let mut d = DMatrix::zeros(rows, cols);
        for col in 0..cols {
            let mut idx: Vec<usize> = (0..rows).collect();
            idx.shuffle(rng);
            for &r in idx.iter().take(cfg.level_fan_in.min(rows)) {
                d[(r, col)] = rng.random_range(0.2..1.0);
            }
        }
        levels.push(d);
    }
    let biases = cfg.level_sizes.iter().map(|&k| DVector::zeros(k)).collect();
    DictionaryStack::new(cfg.points, levels, biases)
}

/// Level-1 code from a sparse non-negative top code, scaled so `Σφ₁ = 1`.
fn planted_code<R: Rng + ?Sized>(stack: &DictionaryStack, active: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let top = *stack.level_sizes().last().expect("non-empty");
        let mut idx: Vec<usize> = (0..top).collect();
        idx.shuffle(rng);
        let mut phi = DVector::zeros(top);
        for &k in idx.iter().take(active) {
            phi[k] = rng.random_range(0.1..1.0);
        }
        for d in stack.levels()[1..].iter().rev() {
            phi = d * phi;
        }
        let total = phi.sum();
        if total > 0.0 {
            return phi / total;
        }
    }
}

fn draw_camera<R: Rng + ?Sized>(dist: CameraDistribution, rng: &mut R) -> CameraMatrix {
    let r = match dist {
        CameraDistribution::Random => random_rotation(rng),
        CameraDistribution::Azimuth { range_deg, elevation_deg } => {
            let az = rng.random_range(-1.0..=1.0) * range_deg.to_radians();
            let yaw = Rotation3::from_axis_angle(&Vector3::y_axis(), az);
            let tilt = Rotation3::from_axis_angle(&Vector3::x_axis(), elevation_deg.to_radians());
            (yaw * tilt).into_inner()
        }
    };
    CameraMatrix::new(r.fixed_view::<3, 2>(0, 0).into_owned()).expect("rotation columns are orthonormal")
}

/// Reflects the camera-frame depth of the subtree at `joint` about its parent.
pub fn mirror_subtree(cam_shape: &Shape3D, skeleton: &Skeleton, joint: usize) -> Result<Shape3D> {
    let parent = skeleton.parents[joint].ok_or_else(|| Error::Contract("cannot mirror the root".into()))?;
    let mut m = cam_shape.matrix().clone();
    let pivot = m[(parent, 2)];
    for j in skeleton.subtree(joint) {
        m[(j, 2)] = 2.0 * pivot - m[(j, 2)];
    }
    Shape3D::new(m)
}

fn centered_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = m.row_mean();
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] - mean[c])
}

fn bbox_diagonal(w: &DMatrix<f64>) -> f64 {
    let span = |c: usize| {
        let col = w.column(c);
        col.max() - col.min()
    };
    (span(0).powi(2) + span(1).powi(2)).sqrt()
}

/// Student features: per-sample normalized noisy 2D, then one ±1 depth-order
/// bit per bone (child behind parent → +1), each flipped with probability
/// `feature_noise` (capped at ½).
fn features<R: Rng + ?Sized>(w: &Projection2D, cam_shape: &Shape3D, skeleton: &Skeleton, feature_noise: f64, rng: &mut R) -> Vec<f64> {
    let centered = centered_rows(w.matrix());
    let diag = bbox_diagonal(&centered);
    let scale = if diag > 0.0 { diag } else { 1.0 };
    let normal = Normal::new(0.0, feature_noise).expect("finite std");
    let mut out = Vec::with_capacity(w.points() * 3);
    for p in 0..w.points() {
        for c in 0..2 {
            out.push(centered[(p, c)] / scale + normal.sample(rng));
        }
    }
    let flip = feature_noise.min(0.5);
    for j in 1..skeleton.points() {
        let parent = skeleton.parents[j].expect("non-root");
        let bit = if cam_shape.matrix()[(j, 2)] >= cam_shape.matrix()[(parent, 2)] { 1.0 } else { -1.0 };
        out.push(if rng.random_bool(flip) { -bit } else { bit });
    }
    out
}

fn add_noise<R: Rng + ?Sized>(w: &Projection2D, sigma: f64, rng: &mut R) -> Projection2D {
    if sigma == 0.0 {
        return w.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("finite std");
    Projection2D::new(w.matrix().map(|v| v + normal.sample(rng))).expect("finite observation")
}

/// Draws a dataset; deterministic in `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let skeleton = Skeleton::for_points(cfg.points)?;
    let planted = planted_stack(cfg, &skeleton, &mut rng)?;
    let min_gap = 0.1 * skeleton.bone_lengths.iter().skip(1).sum::<f64>() / (cfg.points - 1) as f64;

    let pairs = ((cfg.ambiguity * cfg.samples as f64).round() as usize / 2).min(cfg.samples / 2);
    let plain = cfg.samples - 2 * pairs;
    let mut slots: Vec<bool> = std::iter::repeat_n(true, pairs).chain(std::iter::repeat_n(false, plain)).collect();
    slots.shuffle(&mut rng);

    let mut samples = Vec::with_capacity(cfg.samples);
    let (mut n_pair, mut n_plain) = (0usize, 0usize);
    for is_pair in slots {
        if !is_pair {
            let phi = planted_code(&planted, cfg.active_atoms, &mut rng);
            let shape = reconstruct_shape(&phi, planted.d1())?;
            let cam = draw_camera(cfg.camera, &mut rng);
            let clean = project(&shape, &cam);
            let feat = features(&clean, &shape.rotate(&cam.rotation()), &skeleton, cfg.feature_noise, &mut rng);
            samples.push(Sample {
                id: format!("p{n_plain:06}"),
                w: add_noise(&clean, cfg.noise, &mut rng),
                gt: Some(shape),
                cam: Some(cam),
                features: Some(feat),
                group: Group::Plain.as_str().into(),
                scale: 1.0,
            });
            n_plain += 1;
            continue;
        }
        let mut built = None;
        for _ in 0..MIRROR_RETRIES {
            let phi = planted_code(&planted, cfg.active_atoms, &mut rng);
            let shape = reconstruct_shape(&phi, planted.d1())?;
            let cam = draw_camera(cfg.camera, &mut rng);
            let r = cam.rotation();
            let cam_shape = shape.rotate(&r);
            let joint = *skeleton.mirrorable.choose(&mut rng).expect("mirrorable joints");
            let parent = skeleton.parents[joint].expect("non-root");
            let gap = (cam_shape.matrix()[(joint, 2)] - cam_shape.matrix()[(parent, 2)]).abs();
            if gap < min_gap {
                continue;
            }
            let mirrored = mirror_subtree(&cam_shape, &skeleton, joint)?;
            built = Some((shape, cam, cam_shape, mirrored.rotate(&r.transpose())));
            break;
        }
        let (shape, cam, cam_shape, mirrored_world) = built.ok_or_else(|| {
            Error::DegenerateShape(format!("no mirrorable limb found after {MIRROR_RETRIES} draws"))
        })?;
        let clean = project(&shape, &cam);
        for (member, (world, in_cam)) in [(shape.clone(), cam_shape.clone()), (mirrored_world.clone(), mirrored_world.rotate(&cam.rotation()))]
            .into_iter()
            .enumerate()
        {
            let feat = features(&clean, &in_cam, &skeleton, cfg.feature_noise, &mut rng);
            samples.push(Sample {
                id: format!("a{n_pair:06}_{member}"),
                w: add_noise(&clean, cfg.noise, &mut rng),
                gt: Some(world),
                cam: Some(cam),
                features: Some(feat),
                group: Group::Ambiguous.as_str().into(),
                scale: 1.0,
            });
        }
        n_pair += 1;
    }
    Ok(SynthOutput {
        dataset: Dataset { samples },
        planted,
        skeleton,
    })
}

/// Centres each observation and divides it by its 2D bounding-box diagonal.
/// Ground truth is centred and divided by the same factor; features are untouched.
pub fn normalize(dataset: &Dataset) -> Result<Dataset> {
    let mut out = dataset.clone();
    for s in &mut out.samples {
        let centered = centered_rows(s.w.matrix());
        let diag = bbox_diagonal(&centered);
        if !(diag > 0.0 && diag.is_finite()) {
            return Err(Error::DegenerateObservation(format!(
                "sample {} has a zero-size bounding box",
                s.id
            )));
        }
        s.w = Projection2D::new(centered / diag)?;
        if let Some(gt) = &s.gt {
            s.gt = Some(Shape3D::new(centered_rows(gt.matrix()) / diag)?);
        }
        s.scale *= diag;
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSample {
    id: String,
    p: usize,
    w: Vec<f64>,
    #[serde(default)]
    gt: Option<Vec<f64>>,
    #[serde(default)]
    cam: Option<Vec<f64>>,
    #[serde(default)]
    feat: Option<Vec<f64>>,
    group: String,
}

pub fn sample_to_line(s: &Sample) -> Result<String> {
    let mut line = String::from("{");
    jsonl::push_string_field(&mut line, "id", &s.id);
    line.push(',');
    jsonl::push_key(&mut line, "p");
    line.push_str(&s.points().to_string());
    line.push(',');
    jsonl::push_array_field(&mut line, "w", s.w.vectorize().as_slice())?;
    if let Some(gt) = &s.gt {
        line.push(',');
        jsonl::push_array_field(&mut line, "gt", &gt.vectorize())?;
    }
    if let Some(cam) = &s.cam {
        line.push(',');
        jsonl::push_array_field(&mut line, "cam", &cam.to_column_vec())?;
    }
    if let Some(f) = &s.features {
        line.push(',');
        jsonl::push_array_field(&mut line, "feat", f)?;
    }
    line.push(',');
    jsonl::push_string_field(&mut line, "group", &s.group);
    line.push('}');
    Ok(line)
}

pub fn sample_from_line(line: &str, context: &str) -> Result<Sample> {
    let raw: RawSample = serde_json::from_str(line).map_err(|e| Error::format(context, e.to_string()))?;
    let bad = |reason: String| Error::format(context, reason);
    if raw.w.len() != 2 * raw.p {
        return Err(bad(format!("`w` has {} values, expected {}", raw.w.len(), 2 * raw.p)));
    }
    let w = Projection2D::from_vectorized(&raw.w).map_err(|e| bad(e.to_string()))?;
    let gt = match raw.gt {
        Some(v) if v.len() != 3 * raw.p => return Err(bad(format!("`gt` has {} values, expected {}", v.len(), 3 * raw.p))),
        Some(v) => Some(Shape3D::from_vectorized(&v).map_err(|e| bad(e.to_string()))?),
        None => None,
    };
    let cam = raw
        .cam
        .map(|v| CameraMatrix::from_column_slice(&v))
        .transpose()
        .map_err(|e| bad(e.to_string()))?;
    Ok(Sample {
        id: raw.id,
        w,
        gt,
        cam,
        features: raw.feat,
        group: raw.group,
        scale: 1.0,
    })
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in &dataset.samples {
        let mut line = sample_to_line(s)?;
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(sample_from_line(&line, &format!("{}:{}", path.display(), n + 1))?);
    }
    let dataset = Dataset { samples };
    dataset.validate()?;
    Ok(dataset)
}
