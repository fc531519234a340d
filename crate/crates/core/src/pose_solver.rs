//! Perspective-n-Point: EPnP initialization, Gauss-Newton reprojection
//! refinement, and a seeded RANSAC loop.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SymmetricEigen, Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{nearest_rotation, CameraIntrinsics, Pose};
use crate::matching::CorrespondenceSet;
use crate::scalar::RealScalar;

pub const MIN_SAMPLE: usize = 4;
/// Gauss-Newton steps after the closed-form solution.
pub const REFINE_STEPS: usize = 10;
const PLANAR_RATIO: f64 = 1e-6;
const COLLINEAR_RATIO: f64 = 1e-9;
const BATCH: usize = 32;
/// Below this size P3P candidates are added to the EPnP ones.
const P3P_CANDIDATE_MAX_POINTS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no solution places all points in front of the camera")]
    NoValidSolution,
    #[error("need at least 4 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("no hypothesis reached 4 inliers (best {0})")]
    NoConsensus(usize),
    #[error("invalid RANSAC parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub max_iterations: usize,
    pub inlier_threshold_px: f64,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { max_iterations: 1000, inlier_threshold_px: 3.0, confidence: 0.99, seed: 0 }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.max_iterations < 1 {
            return Err(SolverError::InvalidParams("max_iterations must be >= 1".into()));
        }
        if !(self.inlier_threshold_px > 0.0) {
            return Err(SolverError::InvalidParams("inlier_threshold_px must be > 0".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(SolverError::InvalidParams("confidence must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate<T: RealScalar> {
    pub pose: Pose<T>,
    pub inlier_indices: Vec<usize>,
    pub mean_inlier_reproj_px: T,
    pub num_ransac_iters_run: usize,
}

/// Pixel reprojection errors; `None` for points at or behind the camera.
pub fn reprojection_errors<T: RealScalar>(
    pose: &Pose<T>,
    object_pts: &[Vector3<T>],
    image_pts: &[Vector2<T>],
    k: &CameraIntrinsics<T>,
) -> Vec<Option<T>> {
    object_pts
        .iter()
        .zip(image_pts)
        .map(|(x, u)| {
            let p = pose.transform_point(x);
            (p.z > T::zero()).then(|| (k.project(&p) - u).norm())
        })
        .collect()
}

/// EPnP followed by Gauss-Newton refinement of the reprojection error.
/// Every closed-form candidate is refined and the lowest-cost one kept.
pub fn solve_pnp<T: RealScalar>(
    object_pts: &[Vector3<T>],
    image_pts: &[Vector2<T>],
    k: &CameraIntrinsics<T>,
) -> Result<Pose<T>, SolverError> {
    let n = object_pts.len();
    if n < MIN_SAMPLE || image_pts.len() != n {
        return Err(SolverError::DegenerateConfiguration(format!("need >= 4 paired points, got {n}")));
    }
    let normalized: Vec<Vector2<T>> = image_pts.iter().map(|u| k.normalize(u)).collect();
    let pose = epnp(object_pts, &normalized)?;
    if object_pts.iter().all(|x| pose.transform_point(x).z > T::zero()) {
        Ok(pose)
    } else {
        Err(SolverError::NoValidSolution)
    }
}

struct ControlFrame<T: RealScalar> {
    /// Control points in the object frame; 4 general, 3 planar.
    points: Vec<Vector3<T>>,
    /// Barycentric weights of each input point.
    alphas: Vec<Vec<T>>,
}

fn control_frame<T: RealScalar>(pts: &[Vector3<T>]) -> Result<ControlFrame<T>, SolverError> {
    let n = T::lit(pts.len() as f64);
    let c0 = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - c0;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].as_f64().total_cmp(&eig.eigenvalues[a].as_f64()));
    let sv: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].as_f64().max(0.0).sqrt()).collect();
    if !(sv[0] > 0.0) || sv[1] <= COLLINEAR_RATIO * sv[0] {
        return Err(SolverError::DegenerateConfiguration("points are collinear or coincident".into()));
    }
    let planar = sv[2] < PLANAR_RATIO * sv[0];
    let axes = if planar { 2 } else { 3 };
    let mut points = vec![c0];
    let mut basis = Vec::new();
    for &i in order.iter().take(axes) {
        let dir: Vector3<T> = eig.eigenvectors.column(i).into();
        let scale = (eig.eigenvalues[i] / n).max(T::zero()).sqrt();
        basis.push(dir * scale);
        points.push(c0 + dir * scale);
    }
    let alphas = pts
        .iter()
        .map(|p| {
            let d = p - c0;
            // basis vectors are orthogonal, so coordinates are projections
            let coords: Vec<T> = basis.iter().map(|b| d.dot(b) / b.norm_squared()).collect();
            let a0 = T::one() - coords.iter().fold(T::zero(), |s, &c| s + c);
            std::iter::once(a0).chain(coords).collect()
        })
        .collect();
    Ok(ControlFrame { points, alphas })
}

fn epnp<T: RealScalar>(object_pts: &[Vector3<T>], normalized: &[Vector2<T>]) -> Result<Pose<T>, SolverError> {
    let frame = control_frame(object_pts)?;
    let nc = frame.points.len();
    let n = object_pts.len();
    let mut m = DMatrix::<T>::zeros(2 * n, 3 * nc);
    for (i, (a, x)) in frame.alphas.iter().zip(normalized).enumerate() {
        for j in 0..nc {
            m[(2 * i, 3 * j)] = a[j];
            m[(2 * i, 3 * j + 2)] = -a[j] * x.x;
            m[(2 * i + 1, 3 * j + 1)] = a[j];
            m[(2 * i + 1, 3 * j + 2)] = -a[j] * x.y;
        }
    }
    let mtm = m.transpose() * &m;
    let eig = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..3 * nc).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].as_f64().total_cmp(&eig.eigenvalues[b].as_f64()));
    let kernel: Vec<DVector<T>> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();

    let pairs: Vec<(usize, usize)> = (0..nc).flat_map(|a| (a + 1..nc).map(move |b| (a, b))).collect();
    let world_d2: Vec<T> = pairs.iter().map(|&(a, b)| (frame.points[a] - frame.points[b]).norm_squared()).collect();
    let max_dims = if nc == 4 { 4 } else { 2 };

    let mut candidates: Vec<Vec<T>> = Vec::new();
    for dims in 1..=max_dims {
        if let Some(b) = initial_betas(&kernel[..dims], &pairs, &world_d2) {
            candidates.push(refine_betas(&kernel[..dims], &pairs, &world_d2, b));
        }
    }
    // lower-dimensional solutions also seed the full-kernel solve
    let lower: Vec<Vec<T>> = candidates.iter().filter(|b| b.len() < max_dims).cloned().collect();
    for mut b in lower {
        b.resize(max_dims, T::zero());
        candidates.push(refine_betas(&kernel[..max_dims], &pairs, &world_d2, b));
    }
    let mut initial: Vec<Pose<T>> = candidates
        .iter()
        .filter_map(|b| pose_from_betas(&kernel[..b.len()], b, &frame, object_pts))
        .collect();
    if n <= P3P_CANDIDATE_MAX_POINTS {
        for tri in [[0, 1, 2], [1, 2, 3]] {
            initial.extend(p3p(tri.map(|i| object_pts[i]), tri.map(|i| normalized[i])));
        }
    }
    let mut best: Option<(T, Pose<T>)> = None;
    for pose in &initial {
        let pose = refine(pose, object_pts, normalized, REFINE_STEPS);
        let Some(cost) = normalized_cost(&pose, object_pts, normalized) else { continue };
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, pose));
        }
    }
    best.map(|(_, p)| p).ok_or(SolverError::NoValidSolution)
}

/// Poses consistent with three points, from Grunert's quartic in the depth
/// ratios. Complex roots contribute their real part; the caller ranks
/// candidates by residual.
fn p3p<T: RealScalar>(world: [Vector3<T>; 3], normalized: [Vector2<T>; 3]) -> Vec<Pose<T>> {
    let f: Vec<Vector3<T>> = normalized.iter().map(|u| Vector3::new(u.x, u.y, T::one()).normalize()).collect();
    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    if b2 == T::zero() {
        return Vec::new();
    }
    let (ca, cb, cg) = (f[1].dot(&f[2]), f[0].dot(&f[2]), f[0].dot(&f[1]));
    let (one, two, four) = (T::one(), T::lit(2.0), T::lit(4.0));
    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let coeffs = [
        (one + amc) * (one + amc) - four * a2 / b2 * cg * cg,
        four * (-amc * (one + amc) * cb + two * a2 / b2 * cg * cg * cb - (one - apc) * ca * cg),
        two * (amc * amc - one + two * amc * amc * cb * cb + two * (b2 - c2) / b2 * ca * ca - four * apc * ca * cb * cg
            + two * (b2 - a2) / b2 * cg * cg),
        four * (amc * (one - amc) * cb - (one - apc) * ca * cg + two * c2 / b2 * ca * ca * cb),
        (amc - one) * (amc - one) - four * c2 / b2 * ca * ca,
    ];
    let lead = coeffs[4];
    if lead.abs() < T::lit(1e-14) {
        return Vec::new();
    }
    let mut companion = nalgebra::Matrix4::<T>::zeros();
    for i in 0..3 {
        companion[(i + 1, i)] = one;
    }
    for i in 0..4 {
        companion[(i, 3)] = -coeffs[i] / lead;
    }
    let roots = companion.complex_eigenvalues();
    let mut out = Vec::new();
    for root in roots.iter() {
        let v = root.re;
        let den = two * (cg - v * ca);
        if den == T::zero() {
            continue;
        }
        let u = ((amc - one) * v * v - two * amc * cb * v + one + amc) / den;
        let d = one + v * v - two * v * cb;
        if !(d > T::zero()) || !(u > T::zero()) || !(v > T::zero()) {
            continue;
        }
        let s1 = (b2 / d).sqrt();
        let cam = [f[0] * s1, f[1] * (u * s1), f[2] * (v * s1)];
        if let Some(p) = procrustes(&world, &cam) {
            out.push(p);
        }
    }
    out
}

/// Difference of kernel vector `v` between control points `a` and `b`.
fn diff<T: RealScalar>(v: &DVector<T>, a: usize, b: usize) -> Vector3<T> {
    Vector3::new(v[3 * a] - v[3 * b], v[3 * a + 1] - v[3 * b + 1], v[3 * a + 2] - v[3 * b + 2])
}

/// Linearized estimate of the kernel weights from the preserved control
/// point distances.
fn initial_betas<T: RealScalar>(kernel: &[DVector<T>], pairs: &[(usize, usize)], world_d2: &[T]) -> Option<Vec<T>> {
    let dims = kernel.len();
    if dims == 1 {
        let (mut num, mut den) = (T::zero(), T::zero());
        for (&(a, b), &w) in pairs.iter().zip(world_d2) {
            let c = diff(&kernel[0], a, b).norm();
            num += c * w.sqrt();
            den += c * c;
        }
        return (den > T::zero()).then(|| vec![num / den]);
    }
    // unknowns: products β_i β_j for i ≤ j (or only β_1 β_j when dims = 4)
    let monos: Vec<(usize, usize)> = if dims == 4 {
        (0..4).map(|j| (0, j)).collect()
    } else {
        (0..dims).flat_map(|i| (i..dims).map(move |j| (i, j))).collect()
    };
    let mut l = DMatrix::<T>::zeros(pairs.len(), monos.len());
    for (r, &(a, b)) in pairs.iter().enumerate() {
        let d: Vec<Vector3<T>> = kernel.iter().map(|v| diff(v, a, b)).collect();
        for (c, &(i, j)) in monos.iter().enumerate() {
            l[(r, c)] = if i == j { d[i].norm_squared() } else { d[i].dot(&d[j]) * T::lit(2.0) };
        }
    }
    let rho = DVector::from_column_slice(world_d2);
    let x = l.svd(true, true).solve(&rho, T::lit(1e-12)).ok()?;
    let idx = |i: usize, j: usize| monos.iter().position(|&m| m == (i.min(j), i.max(j)));
    let b11 = x[idx(0, 0)?];
    let b1 = b11.abs().sqrt();
    if b1 == T::zero() {
        return None;
    }
    let betas = (0..dims)
        .map(|j| {
            if j == 0 {
                b1
            } else if dims == 4 {
                x[idx(0, j).expect("mono")] / b1
            } else {
                let bjj = x[idx(j, j).expect("mono")];
                let sign = if x[idx(0, j).expect("mono")] < T::zero() { -T::one() } else { T::one() };
                bjj.abs().sqrt() * sign
            }
        })
        .collect();
    Some(betas)
}

/// Gauss-Newton on `‖Σ β_k Δv_k‖² = ‖Δc_world‖²` over control point pairs.
fn refine_betas<T: RealScalar>(kernel: &[DVector<T>], pairs: &[(usize, usize)], world_d2: &[T], mut betas: Vec<T>) -> Vec<T> {
    let dims = kernel.len();
    let two = T::lit(2.0);
    for _ in 0..10 {
        let mut j = DMatrix::<T>::zeros(pairs.len(), dims);
        let mut r = DVector::<T>::zeros(pairs.len());
        for (row, (&(a, b), &w)) in pairs.iter().zip(world_d2).enumerate() {
            let d: Vec<Vector3<T>> = kernel.iter().map(|v| diff(v, a, b)).collect();
            let s = d.iter().zip(&betas).fold(Vector3::zeros(), |acc, (dk, &bk)| acc + dk * bk);
            r[row] = s.norm_squared() - w;
            for c in 0..dims {
                j[(row, c)] = two * s.dot(&d[c]);
            }
        }
        let Some(step) = j.clone().svd(true, true).solve(&r, T::lit(1e-12)).ok() else { break };
        for c in 0..dims {
            betas[c] -= step[c];
        }
    }
    betas
}

fn pose_from_betas<T: RealScalar>(
    kernel: &[DVector<T>],
    betas: &[T],
    frame: &ControlFrame<T>,
    object_pts: &[Vector3<T>],
) -> Option<Pose<T>> {
    let nc = frame.points.len();
    let x = kernel.iter().zip(betas).fold(DVector::<T>::zeros(3 * nc), |acc, (v, &b)| acc + v * b);
    let ctrl: Vec<Vector3<T>> = (0..nc).map(|j| Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2])).collect();
    let mut cam: Vec<Vector3<T>> = frame
        .alphas
        .iter()
        .map(|a| a.iter().zip(&ctrl).fold(Vector3::zeros(), |s, (&w, c)| s + c * w))
        .collect();
    let zsum = cam.iter().fold(T::zero(), |s, p| s + p.z);
    if zsum < T::zero() {
        cam.iter_mut().for_each(|p| *p = -*p);
    }
    procrustes(object_pts, &cam)
}

/// Rigid transform mapping `src` onto `dst` in the least-squares sense.
fn procrustes<T: RealScalar>(src: &[Vector3<T>], dst: &[Vector3<T>]) -> Option<Pose<T>> {
    let n = T::lit(src.len() as f64);
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - cd) * (s - cs).transpose();
    }
    if !h.iter().all(|v| v.as_f64().is_finite()) {
        return None;
    }
    let r = nearest_rotation(&h);
    let t = cd - r * cs;
    Pose::from_approx_rotation(r, t).ok()
}

fn normalized_cost<T: RealScalar>(pose: &Pose<T>, object_pts: &[Vector3<T>], normalized: &[Vector2<T>]) -> Option<T> {
    let mut c = T::zero();
    for (x, u) in object_pts.iter().zip(normalized) {
        let p = pose.transform_point(x);
        if p.z <= T::zero() {
            return None;
        }
        c += (Vector2::new(p.x / p.z, p.y / p.z) - u).norm_squared();
    }
    Some(c)
}

/// Damped Gauss-Newton on normalized-plane reprojection error with left
/// perturbations of the pose.
fn refine<T: RealScalar>(pose: &Pose<T>, object_pts: &[Vector3<T>], normalized: &[Vector2<T>], steps: usize) -> Pose<T> {
    let mut current = *pose;
    let Some(mut cost) = normalized_cost(&current, object_pts, normalized) else { return current };
    let mut lambda = T::lit(1e-6);
    for _ in 0..steps {
        let mut jtj = Matrix6::<T>::zeros();
        let mut jtr = Vector6::<T>::zeros();
        for (x, u) in object_pts.iter().zip(normalized) {
            let p = current.transform_point(x);
            let iz = T::one() / p.z;
            let (a, b) = (p.x * iz, p.y * iz);
            let r = [a - u.x, b - u.y];
            // d(a, b)/dp
            let dp = [[iz, T::zero(), -a * iz], [T::zero(), iz, -b * iz]];
            for row in 0..2 {
                let g = Vector3::new(dp[row][0], dp[row][1], dp[row][2]);
                // dp/dω = −[p]×, dp/dδt = I
                let jw = p.cross(&g);
                let jrow = Vector6::new(jw.x, jw.y, jw.z, g.x, g.y, g.z);
                jtj += jrow * jrow.transpose();
                jtr += jrow * r[row];
            }
        }
        let mut improved = false;
        for _ in 0..8 {
            let mut a = jtj;
            for d in 0..6 {
                a[(d, d)] += lambda * (T::one() + jtj[(d, d)]);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= T::lit(10.0);
                continue;
            };
            let cand = current.perturbed(&step.fixed_rows::<3>(0).into(), &step.fixed_rows::<3>(3).into());
            match normalized_cost(&cand, object_pts, normalized) {
                Some(c) if c <= cost => {
                    current = cand;
                    cost = c;
                    lambda = (lambda * T::lit(0.1)).max(T::lit(1e-12));
                    improved = true;
                    break;
                }
                _ => lambda *= T::lit(10.0),
            }
        }
        if !improved || cost == T::zero() {
            break;
        }
    }
    current
}

fn inliers_of<T: RealScalar>(
    pose: &Pose<T>,
    object_pts: &[Vector3<T>],
    image_pts: &[Vector2<T>],
    k: &CameraIntrinsics<T>,
    threshold: f64,
) -> (Vec<usize>, f64) {
    let mut idx = Vec::new();
    let mut sum = 0.0;
    for (i, e) in reprojection_errors(pose, object_pts, image_pts, k).into_iter().enumerate() {
        if let Some(e) = e {
            if e.as_f64() <= threshold {
                idx.push(i);
                sum += e.as_f64();
            }
        }
    }
    (idx, sum)
}

/// Iterations needed so that an all-inlier sample is drawn with the given
/// confidence: smallest `k` with `(1 − w⁴)^k < 1 − confidence`.
pub fn required_iterations(inlier_ratio: f64, confidence: f64) -> usize {
    let p_good = inlier_ratio.powi(MIN_SAMPLE as i32);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return usize::MAX;
    }
    let k = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if !k.is_finite() || k >= usize::MAX as f64 {
        return usize::MAX;
    }
    // strict inequality
    let f = k.floor() as usize;
    if (1.0 - p_good).powi(f as i32) < 1.0 - confidence {
        f.max(1)
    } else {
        f + 1
    }
}

/// The 4 indices drawn by RANSAC iteration `iteration`.
pub fn ransac_sample(seed: u64, iteration: usize, n: usize) -> [usize; MIN_SAMPLE] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    let s = rand::seq::index::sample(&mut rng, n, MIN_SAMPLE);
    [s.index(0), s.index(1), s.index(2), s.index(3)]
}

/// Seeded hypothesize-and-verify over minimal samples, followed by a refit
/// on the consensus set.
///
/// Samples are evaluated in parallel batches but reduced in iteration order,
/// so the result equals the sequential loop and is deterministic per seed.
pub fn ransac_pnp<T: RealScalar>(
    corr: &CorrespondenceSet<T>,
    k: &CameraIntrinsics<T>,
    params: &RansacParams,
) -> Result<PoseEstimate<T>, SolverError> {
    params.validate()?;
    let n = corr.len();
    if n < MIN_SAMPLE {
        return Err(SolverError::TooFewCorrespondences(n));
    }
    let obj = corr.object_points();
    let img = corr.image_points();
    let thr = params.inlier_threshold_px;

    let mut best: Option<(usize, Vec<usize>)> = None;
    let mut required = params.max_iterations;
    let mut run = 0usize;
    'outer: while run < required.min(params.max_iterations) {
        let end = (run + BATCH).min(params.max_iterations);
        let batch: Vec<Option<Vec<usize>>> = (run..end)
            .into_par_iter()
            .map(|it| {
                let s = ransac_sample(params.seed, it, n);
                let o: Vec<Vector3<T>> = s.iter().map(|&i| obj[i]).collect();
                let u: Vec<Vector2<T>> = s.iter().map(|&i| img[i]).collect();
                let pose = solve_pnp(&o, &u, k).ok()?;
                Some(inliers_of(&pose, &obj, &img, k, thr).0)
            })
            .collect();
        for (offset, hyp) in batch.into_iter().enumerate() {
            let it = run + offset;
            if let Some(inl) = hyp {
                if best.as_ref().is_none_or(|(_, b)| inl.len() > b.len()) {
                    let w = inl.len() as f64 / n as f64;
                    required = required_iterations(w, params.confidence);
                    best = Some((it, inl));
                }
            }
            if it + 1 >= required.min(params.max_iterations) {
                run = it + 1;
                break 'outer;
            }
        }
        run = end;
    }

    let (_, mut inliers) = best.ok_or(SolverError::NoConsensus(0))?;
    if inliers.len() < MIN_SAMPLE {
        return Err(SolverError::NoConsensus(inliers.len()));
    }
    let mut pose = None;
    for _ in 0..3 {
        let o: Vec<Vector3<T>> = inliers.iter().map(|&i| obj[i]).collect();
        let u: Vec<Vector2<T>> = inliers.iter().map(|&i| img[i]).collect();
        let Ok(p) = solve_pnp(&o, &u, k) else { break };
        let (next, _) = inliers_of(&p, &obj, &img, k, thr);
        if next.len() < inliers.len() && pose.is_some() {
            break;
        }
        let done = next == inliers;
        pose = Some(p);
        inliers = next;
        if done {
            break;
        }
    }
    let pose = pose.ok_or(SolverError::NoValidSolution)?;
    let (inliers, sum) = inliers_of(&pose, &obj, &img, k, thr);
    if inliers.len() < MIN_SAMPLE {
        return Err(SolverError::NoConsensus(inliers.len()));
    }
    Ok(PoseEstimate {
        pose,
        mean_inlier_reproj_px: T::lit(sum / inliers.len() as f64),
        inlier_indices: inliers,
        num_ransac_iters_run: run,
    })
}
