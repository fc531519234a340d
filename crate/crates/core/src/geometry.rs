//! Rigid transforms, pinhole intrinsics and projection.
//!
//! Conventions follow BOP/OpenCV: the camera looks along +z with x to the
//! right and y down, rotations map object (world) coordinates into the camera
//! frame, and every length is in millimeters.

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::RealScalar;

/// Minimum camera-frame depth (mm) accepted by [`transform_and_project`].
pub const MIN_DEPTH_MM: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (max |RᵀR − I| = {deviation:e}, det = {det})")]
    NotOrthonormal { deviation: f64, det: f64 },
    #[error("pose contains non-finite values")]
    NonFinite,
    #[error("point {index} has non-positive camera depth z = {z} mm")]
    NonPositiveDepth { index: usize, z: f64 },
    #[error("degenerate view: eye and target coincide")]
    DegenerateView,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Rigid transform `x ↦ R·x + t` (object → camera), translation in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: RealScalar> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
}

/// Largest entry of `|RᵀR − I|`.
pub fn orthonormality_deviation<T: RealScalar>(r: &Matrix3<T>) -> f64 {
    let e = r.transpose() * r - Matrix3::identity();
    e.iter().map(|v| v.abs().as_f64()).fold(0.0, f64::max)
}

impl<T: RealScalar> Pose<T> {
    /// Validated constructor.
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let deviation = orthonormality_deviation(&rotation);
        let det = rotation.determinant().as_f64();
        if deviation >= T::ORTHONORMAL_TOL || det <= 0.0 {
            return Err(GeometryError::NotOrthonormal { deviation, det });
        }
        Ok(Self { rotation, translation })
    }

    /// Builds a pose from a nearly orthonormal matrix by projecting it onto
    /// SO(3) (closest rotation in the Frobenius sense).
    pub fn from_approx_rotation(
        rotation: Matrix3<T>,
        translation: Vector3<T>,
    ) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Self::new(nearest_rotation(&rotation), translation)
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<T>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// Row-major rotation and translation, as stored in BOP files.
    pub fn from_row_major(r: &[T; 9], t: &[T; 3]) -> Result<Self, GeometryError> {
        Self::new(Matrix3::from_row_slice(r), Vector3::new(t[0], t[1], t[2]))
    }

    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    pub fn rotation_row_major(&self) -> [T; 9] {
        let r = &self.rotation;
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]]
    }

    pub fn translation_array(&self) -> [T; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose<T>) -> Pose<T> {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose<T> {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Camera center in object coordinates, `−Rᵀt`.
    pub fn camera_center(&self) -> Vector3<T> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Left-multiplies by `exp([ω]×)` and adds `δt`: `x ↦ exp(ω)(R x + t) + δt`.
    pub(crate) fn perturbed(&self, omega: &Vector3<T>, delta_t: &Vector3<T>) -> Pose<T> {
        let dr = axis_angle_matrix(omega);
        Pose {
            rotation: nearest_rotation(&(dr * self.rotation)),
            translation: dr * self.translation + delta_t,
        }
    }

    pub fn cast<U: RealScalar>(&self) -> Pose<U> {
        Pose {
            rotation: self.rotation.map(|v| U::lit(v.as_f64())),
            translation: self.translation.map(|v| U::lit(v.as_f64())),
        }
    }
}

/// Closest rotation matrix (det +1) to `m` via SVD.
pub fn nearest_rotation<T: RealScalar>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < T::zero() {
        d[(2, 2)] = -T::one();
    }
    u * d * v_t
}

/// Rodrigues formula; `omega` is the rotation vector (axis × angle).
pub fn axis_angle_matrix<T: RealScalar>(omega: &Vector3<T>) -> Matrix3<T> {
    let theta = omega.norm();
    let k = skew(omega);
    if theta < T::lit(1e-12) {
        return Matrix3::identity() + k;
    }
    let a = theta.sin() / theta;
    let b = (T::one() - theta.cos()) / (theta * theta);
    Matrix3::identity() + k * a + k * k * b
}

pub fn skew<T: RealScalar>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(T::zero(), -v.z, v.y, v.z, T::zero(), -v.x, -v.y, v.x, T::zero())
}

/// Uniformly distributed random rotation.
pub fn random_rotation<T: RealScalar, R: Rng + ?Sized>(rng: &mut R) -> Matrix3<T> {
    // Shoemake's method.
    let u1: f64 = rng.random();
    let u2: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let u3: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = nalgebra::Quaternion::new(b * u3.cos(), a * u2.sin(), a * u2.cos(), b * u3.sin());
    let m = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
    nearest_rotation(&m.map(T::lit))
}

/// Pinhole intrinsics in pixels. Integer pixel coordinates address pixel
/// centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<T: RealScalar> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: RealScalar> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_string()));
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be non-zero");
        }
        let (w, h) = (T::lit(self.width as f64), T::lit(self.height as f64));
        if !(self.cx >= T::zero() && self.cx < w && self.cy >= T::zero() && self.cy < h) {
            return bad("principal point outside the image");
        }
        Ok(())
    }

    /// Projects a camera-frame point. No depth check.
    #[inline]
    pub fn project(&self, p: &Vector3<T>) -> Vector2<T> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Normalized image coordinates `((u − cx)/fx, (v − cy)/fy)`.
    #[inline]
    pub fn normalize(&self, px: &Vector2<T>) -> Vector2<T> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    /// Intrinsics of the image obtained by scaling by `scale` after shifting
    /// the origin to `(offset_x, offset_y)`.
    pub fn cropped(&self, scale: T, offset_x: T, offset_y: T, width: u32, height: u32) -> Self {
        Self {
            fx: self.fx * scale,
            fy: self.fy * scale,
            cx: (self.cx - offset_x) * scale,
            cy: (self.cy - offset_y) * scale,
            width,
            height,
        }
    }

    pub fn cast<U: RealScalar>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            fx: U::lit(self.fx.as_f64()),
            fy: U::lit(self.fy.as_f64()),
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
            width: self.width,
            height: self.height,
        }
    }
}

/// Transforms object points into the camera frame and projects them.
pub fn transform_and_project<T: RealScalar>(
    points: &[Vector3<T>],
    pose: &Pose<T>,
    k: &CameraIntrinsics<T>,
) -> Result<Vec<Vector2<T>>, GeometryError> {
    points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let pc = pose.transform_point(p);
            if pc.z <= T::lit(MIN_DEPTH_MM) {
                return Err(GeometryError::NonPositiveDepth { index, z: pc.z.as_f64() });
            }
            Ok(k.project(&pc))
        })
        .collect()
}

/// Camera pose at `eye` looking at `target`, mapping world → camera.
///
/// The camera y axis is aligned with `−up_hint` (image y points down). If the
/// view direction is within ~2.6° of `up_hint` the world x axis is used
/// instead, and the world y axis if that is parallel too.
pub fn look_at_pose<T: RealScalar>(
    eye: &Vector3<T>,
    target: &Vector3<T>,
    up_hint: &Vector3<T>,
) -> Result<Pose<T>, GeometryError> {
    let dir = target - eye;
    let dist = dir.norm();
    if !(dist > T::lit(1e-6)) {
        return Err(GeometryError::DegenerateView);
    }
    let z = dir / dist;
    let parallel = |u: &Vector3<T>| {
        let n = u.norm();
        n < T::lit(1e-12) || (z.dot(u) / n).abs() > T::lit(0.999)
    };
    let mut up = *up_hint;
    if parallel(&up) {
        up = Vector3::x();
        if parallel(&up) {
            up = Vector3::y();
        }
    }
    let down = -up;
    let y = (down - z * z.dot(&down)).normalize();
    let x = y.cross(&z);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let r = nearest_rotation(&r);
    let t = -(r * eye);
    Pose::new(r, t)
}

/// Geodesic angle between the rotations of two poses, in `[0, π]`.
pub fn rotation_angle_between<T: RealScalar>(a: &Pose<T>, b: &Pose<T>) -> T {
    let trace = (a.rotation.transpose() * b.rotation).trace();
    let c = (trace - T::one()) / T::lit(2.0);
    let c = c.clamp(-T::one(), T::one());
    c.acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn at(t: [f64; 3]) -> Pose<f64> {
        Pose::from_translation(Vector3::new(t[0], t[1], t[2]))
    }

    #[test]
    fn principal_point_projection() {
        let px = transform_and_project(&[Vector3::zeros()], &at([0.0, 0.0, 1000.0]), &k()).unwrap();
        assert_eq!(px[0], Vector2::new(320.0, 240.0));
        let px =
            transform_and_project(&[Vector3::new(100.0, 0.0, 0.0)], &at([0.0, 0.0, 1000.0]), &k())
                .unwrap();
        assert_eq!(px[0], Vector2::new(370.0, 240.0));
    }

    #[test]
    fn behind_camera_is_rejected() {
        let pts = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, 0.0, -2000.0)];
        let err = transform_and_project(&pts, &at([0.0, 0.0, 1000.0]), &k()).unwrap_err();
        assert!(matches!(err, GeometryError::NonPositiveDepth { index: 1, .. }));
    }

    #[test]
    fn projection_matches_scalar_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = random_rotation::<f64, _>(&mut rng);
        let pose = Pose::new(r, Vector3::new(12.0, -30.0, 900.0)).unwrap();
        let pts: Vec<Vector3<f64>> = (0..50)
            .map(|_| Vector3::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0)))
            .collect();
        let got = transform_and_project(&pts, &pose, &k()).unwrap();
        let rm = pose.rotation_row_major();
        let t = pose.translation_array();
        for (p, g) in pts.iter().zip(&got) {
            // independent scalar evaluation of x_c = R p + t
            let mut c = [0.0; 3];
            for i in 0..3 {
                c[i] = rm[3 * i] * p.x + rm[3 * i + 1] * p.y + rm[3 * i + 2] * p.z + t[i];
            }
            let u = 500.0 * c[0] / c[2] + 320.0;
            let v = 500.0 * c[1] / c[2] + 240.0;
            assert!((g.x - u).abs() < 1e-9 && (g.y - v).abs() < 1e-9);
        }
    }

    #[test]
    fn axial_look_at() {
        let pose: Pose<f64> = look_at_pose(&Vector3::new(0.0, 0.0, 700.0), &Vector3::zeros(), &Vector3::z())
            .unwrap();
        assert!((pose.translation().norm() - 700.0).abs() < 1e-9);
        let px = transform_and_project(&[Vector3::zeros()], &pose, &k()).unwrap();
        assert!((px[0] - Vector2::new(320.0, 240.0)).norm() < 1e-6);
        assert!(orthonormality_deviation(pose.rotation()) < 1e-12);
        // fallback picked the world x axis: camera y is −x
        assert!((pose.rotation().row(1).transpose() - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn look_at_camera_center_is_eye() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let eye = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                .normalize()
                * 350.0;
            let pose: Pose<f64> = look_at_pose(&eye, &Vector3::zeros(), &Vector3::z()).unwrap();
            assert!((pose.camera_center() - eye).norm() < 1e-9);
            assert!((pose.camera_center().norm() - 350.0).abs() < 1e-9);
            let c = pose.transform_point(&Vector3::zeros());
            assert!(c.x.abs() < 1e-9 && c.y.abs() < 1e-9 && c.z > 0.0);
        }
    }

    #[test]
    fn degenerate_look_at() {
        let e = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(look_at_pose(&e, &e, &Vector3::z()).unwrap_err(), GeometryError::DegenerateView);
    }

    #[test]
    fn angle_basics() {
        let a = Pose::<f64>::identity();
        assert_eq!(rotation_angle_between(&a, &a), 0.0);
        let rz = axis_angle_matrix(&Vector3::new(0.0, 0.0, std::f64::consts::PI));
        let b = Pose::new(rz, Vector3::zeros()).unwrap();
        assert!((rotation_angle_between(&a, &b) - std::f64::consts::PI).abs() < 1e-7);
    }

    #[test]
    fn angle_is_a_metric_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let poses: Vec<Pose<f64>> = (0..1000)
            .map(|_| Pose::new(random_rotation(&mut rng), Vector3::zeros()).unwrap())
            .collect();
        for w in poses.windows(3) {
            let (a, b, c) = (&w[0], &w[1], &w[2]);
            let ab = rotation_angle_between(a, b);
            assert!(ab >= 0.0);
            assert!((ab - rotation_angle_between(b, a)).abs() < 1e-9);
            assert!(rotation_angle_between(a, c) <= ab + rotation_angle_between(b, c) + 1e-9);
            assert!(rotation_angle_between(a, a) < 1e-7);
        }
    }

    #[test]
    fn invalid_rotation_rejected() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(Pose::new(m, Vector3::zeros()), Err(GeometryError::NotOrthonormal { .. })));
        let refl = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(refl, Vector3::zeros()).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
    }

    #[test]
    fn f32_pose_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = Pose::<f32>::new(random_rotation(&mut rng), Vector3::new(1.0, 2.0, 300.0)).unwrap();
        let x = Vector3::new(10.0f32, -4.0, 7.5);
        let back = p.inverse().transform_point(&p.transform_point(&x));
        assert!((back - x).norm() < 1e-3);
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, proptest};

        proptest! {
            #[test]
            fn inverse_roundtrips(seed in any::<u64>(), x in -500.0f64..500.0, y in -500.0f64..500.0, z in -500.0f64..500.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = Pose::new(random_rotation(&mut rng), Vector3::new(x, z, y)).unwrap();
                let pt = Vector3::new(y, x, z);
                let back = p.inverse().transform_point(&p.transform_point(&pt));
                prop_assert!((back - pt).norm() < 1e-9);
                let pp = p.inverse().inverse();
                prop_assert!((pp.rotation() - p.rotation()).amax() < 1e-9);
                prop_assert!((pp.translation() - p.translation()).amax() < 1e-9);
            }

            #[test]
            fn composition_is_associative(s in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let mk = |rng: &mut ChaCha8Rng| Pose::new(random_rotation(rng), Vector3::new(rng.random_range(-100.0..100.0), 0.5, 3.0)).unwrap();
                let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
                let l = a.compose(&b).compose(&c);
                let r = a.compose(&b.compose(&c));
                prop_assert!((l.rotation() - r.rotation()).amax() < 1e-9);
                prop_assert!((l.translation() - r.translation()).amax() < 1e-9);
            }
        }
    }
}
