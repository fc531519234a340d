//! BOP-style pose error metrics, symmetry handling and Average Recall.

mod dataset;
mod results;

use std::path::PathBuf;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::axis_angle_matrix;
use crate::scalar::RealScalar;
use crate::{CameraIntrinsics, Pose, TriMesh};

pub use dataset::{
    load_bop_scene, load_models_info, mask_path, model_path, scene_dir, write_bop_scene, write_models_info, GtInstance,
    ModelInfo, SceneAnnotation,
};
pub use results::{read_results_csv, write_results_csv, EstimateRecord, RESULTS_HEADER};

/// Label for the reported recall: VSD is not part of the average.
pub const AR_LABEL: &str = "AR(MSSD,MSPD)";
pub const CONTINUOUS_SYMMETRY_STEPS: usize = 64;
/// Vertices used for metrics on large meshes.
pub const METRIC_MAX_VERTICES: usize = 10_000;
pub const THRESHOLD_STEPS: usize = 10;

#[derive(Debug, Error)]
pub enum BopError {
    #[error("missing file {path}")]
    MissingFile { path: PathBuf },
    #[error("schema error in {file}: key '{key}': {msg}")]
    SchemaError { file: String, key: String, msg: String },
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("JSON error in {path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("results CSV {path} line {line}: {msg}")]
    Csv { path: String, line: usize, msg: String },
    #[error("no error reports to aggregate")]
    EmptyReportSet,
}

/// Rotation about `axis` through `offset`, sampled at `steps` angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSymmetry {
    pub axis: [f64; 3],
    #[serde(default)]
    pub offset: [f64; 3],
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_steps() -> usize {
    CONTINUOUS_SYMMETRY_STEPS
}

/// Object-frame transforms that leave the object's appearance unchanged.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SymmetrySet {
    pub discrete: Vec<Pose>,
    pub continuous: Vec<ContinuousSymmetry>,
}

impl SymmetrySet {
    pub fn none() -> Self {
        Self::default()
    }

    /// Every combination of a sampled continuous rotation and a discrete
    /// symmetry; the identity comes first.
    pub fn transforms(&self) -> Vec<Pose> {
        let mut disc = vec![Pose::identity()];
        disc.extend(self.discrete.iter().copied());
        let mut cont = vec![Pose::identity()];
        for c in &self.continuous {
            let axis = Vector3::from(c.axis);
            let n = axis.norm();
            if n == 0.0 {
                continue;
            }
            let offset = Vector3::from(c.offset);
            for i in 1..c.steps.max(1) {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / c.steps as f64;
                let r = axis_angle_matrix(&(axis / n * angle));
                cont.push(Pose::from_approx_rotation(r, offset - r * offset).expect("rotation"));
            }
        }
        cont.iter().flat_map(|c| disc.iter().map(move |d| c.compose(d))).collect()
    }
}

/// Errors of one estimate against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mssd: f64,
    pub mspd: f64,
    pub add: f64,
    pub adi: f64,
    pub diameter: f64,
    pub image_width: u32,
}

impl ErrorReport {
    /// A ground-truth instance without an estimate: fails every threshold.
    pub fn missing(diameter: f64, image_width: u32) -> Self {
        let inf = f64::INFINITY;
        Self { mssd: inf, mspd: inf, add: inf, adi: inf, diameter, image_width }
    }

    pub fn mssd_thresholds(&self) -> [f64; THRESHOLD_STEPS] {
        std::array::from_fn(|k| self.diameter * 0.05 * (k + 1) as f64)
    }

    pub fn mspd_thresholds(&self) -> [f64; THRESHOLD_STEPS] {
        let r = self.image_width as f64 / 640.0;
        std::array::from_fn(|k| 5.0 * r * (k + 1) as f64)
    }

    pub fn mssd_passed(&self) -> [bool; THRESHOLD_STEPS] {
        self.mssd_thresholds().map(|t| self.mssd < t)
    }

    pub fn mspd_passed(&self) -> [bool; THRESHOLD_STEPS] {
        self.mspd_thresholds().map(|t| self.mspd < t)
    }

    pub fn add_passed(&self, fraction: f64) -> bool {
        self.add < fraction * self.diameter
    }
}

/// Deterministic stride subsample to at most [`METRIC_MAX_VERTICES`].
pub fn metric_vertices<T: RealScalar>(mesh: &crate::mesh::TriMesh<T>) -> Vec<Vector3<f64>> {
    mesh.subsampled_vertices(METRIC_MAX_VERTICES).iter().map(|v| v.map(|x| x.as_f64())).collect()
}

pub fn mssd(est: &Pose, gt: &Pose, pts: &[Vector3<f64>], syms: &[Pose]) -> f64 {
    let est_pts: Vec<_> = pts.iter().map(|x| est.transform_point(x)).collect();
    syms.par_iter()
        .map(|s| {
            let g = gt.compose(s);
            pts.iter()
                .zip(&est_pts)
                .map(|(x, e)| (e - g.transform_point(x)).norm())
                .fold(0.0, f64::max)
        })
        .reduce(|| f64::INFINITY, f64::min)
}

pub fn mspd(est: &Pose, gt: &Pose, pts: &[Vector3<f64>], syms: &[Pose], k: &CameraIntrinsics) -> f64 {
    let est_px: Vec<_> = pts.iter().map(|x| k.project(&est.transform_point(x))).collect();
    syms.par_iter()
        .map(|s| {
            let g = gt.compose(s);
            pts.iter()
                .zip(&est_px)
                .map(|(x, e)| (e - k.project(&g.transform_point(x))).norm())
                .fold(0.0, f64::max)
        })
        .reduce(|| f64::INFINITY, f64::min)
}

pub fn add(est: &Pose, gt: &Pose, pts: &[Vector3<f64>]) -> f64 {
    let sum: f64 = pts.iter().map(|x| (est.transform_point(x) - gt.transform_point(x)).norm()).sum();
    sum / pts.len() as f64
}

/// Mean over ground-truth points of the distance to the closest estimated point.
pub fn adi(est: &Pose, gt: &Pose, pts: &[Vector3<f64>]) -> f64 {
    let e: Vec<Vector3<f64>> = pts.iter().map(|x| est.transform_point(x)).collect();
    let nearest: Vec<f64> = pts
        .par_iter()
        .map(|x| {
            let g = gt.transform_point(x);
            e.iter().map(|y| (y - g).norm_squared()).fold(f64::INFINITY, f64::min).sqrt()
        })
        .collect();
    nearest.iter().sum::<f64>() / pts.len() as f64
}

/// All four errors for one estimate. MSSD and MSPD minimize over `sym`.
pub fn pose_error_metrics(
    est: &Pose,
    gt: &Pose,
    mesh: &TriMesh,
    sym: &SymmetrySet,
    k: &CameraIntrinsics,
) -> ErrorReport {
    let pts = metric_vertices(mesh);
    pose_error_metrics_on(est, gt, &pts, mesh.diameter(), sym, k)
}

/// As [`pose_error_metrics`] over a prepared vertex list.
pub fn pose_error_metrics_on(
    est: &Pose,
    gt: &Pose,
    pts: &[Vector3<f64>],
    diameter: f64,
    sym: &SymmetrySet,
    k: &CameraIntrinsics,
) -> ErrorReport {
    let syms = sym.transforms();
    ErrorReport {
        mssd: mssd(est, gt, pts, &syms),
        mspd: mspd(est, gt, pts, &syms, k),
        add: add(est, gt, pts),
        adi: adi(est, gt, pts),
        diameter,
        image_width: k.width,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub ar_mssd: f64,
    pub ar_mspd: f64,
    /// Mean of the two above.
    pub ar: f64,
    /// Fraction of instances with ADD below 0.1 of the diameter.
    pub add_01d: f64,
    pub instances: usize,
}

pub fn average_recall(reports: &[ErrorReport]) -> Result<RecallSummary, BopError> {
    if reports.is_empty() {
        return Err(BopError::EmptyReportSet);
    }
    let total = (reports.len() * THRESHOLD_STEPS) as f64;
    let count = |f: fn(&ErrorReport) -> [bool; THRESHOLD_STEPS]| {
        reports.iter().map(|r| f(r).iter().filter(|&&p| p).count()).sum::<usize>()
    };
    let mssd_hits = count(ErrorReport::mssd_passed);
    let mspd_hits = count(ErrorReport::mspd_passed);
    let add_01d = reports.iter().filter(|r| r.add_passed(0.1)).count() as f64 / reports.len() as f64;
    Ok(RecallSummary {
        ar_mssd: mssd_hits as f64 / total,
        ar_mspd: mspd_hits as f64 / total,
        ar: (mssd_hits + mspd_hits) as f64 / (2.0 * total),
        add_01d,
        instances: reports.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_rotation;
    use crate::synthetic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(572.0, 572.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn z180() -> Pose {
        Pose::new(axis_angle_matrix(&Vector3::new(0.0, 0.0, std::f64::consts::PI)), Vector3::zeros()).unwrap()
    }

    #[test]
    fn identical_poses_score_zero() {
        let mesh = synthetic::bumpy_ellipsoid(1, 0);
        let gt = Pose::from_translation(Vector3::new(0.0, 0.0, 600.0));
        let r = pose_error_metrics(&gt, &gt, &mesh, &SymmetrySet::none(), &k());
        assert_eq!((r.mssd, r.mspd, r.add, r.adi), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(average_recall(&[r]).unwrap().ar, 1.0);
    }

    #[test]
    fn rigid_offset_gives_exact_mssd() {
        let mesh = synthetic::box_mesh([50.0, 60.0, 70.0]);
        let gt = Pose::from_translation(Vector3::new(0.0, 0.0, 600.0));
        let est = Pose::from_translation(Vector3::new(5.0, 0.0, 600.0));
        let r = pose_error_metrics(&est, &gt, &mesh, &SymmetrySet::none(), &k());
        assert_eq!(r.mssd, 5.0);
        assert_eq!(r.add, 5.0);
    }

    #[test]
    fn symmetric_estimate_has_zero_mssd() {
        let mesh = synthetic::box_mesh([50.0, 30.0, 70.0]);
        let gt = Pose::new(random_rotation(&mut ChaCha8Rng::seed_from_u64(1)), Vector3::new(10.0, -5.0, 700.0)).unwrap();
        let est = gt.compose(&z180());
        let sym = SymmetrySet { discrete: vec![z180()], continuous: vec![] };
        let r = pose_error_metrics(&est, &gt, &mesh, &sym, &k());
        assert!(r.mssd < 1e-9 && r.mspd < 1e-9);
        assert!(r.add > 10.0);
        // box vertices map onto each other, so ADI vanishes too
        assert!(r.adi < 1e-9);
        let none = pose_error_metrics(&est, &gt, &mesh, &SymmetrySet::none(), &k());
        assert!(none.mssd > 10.0);
    }

    #[test]
    fn continuous_samples_include_identity_and_close_the_circle() {
        let sym = SymmetrySet {
            discrete: vec![z180()],
            continuous: vec![ContinuousSymmetry { axis: [0.0, 0.0, 1.0], offset: [0.0, 0.0, 5.0], steps: 64 }],
        };
        let t = sym.transforms();
        assert_eq!(t.len(), 64 * 2);
        assert_eq!(t[0], Pose::identity());
        // offset lies on the axis, so every transform fixes it
        for s in &t {
            assert!((s.transform_point(&Vector3::new(0.0, 0.0, 5.0)) - Vector3::new(0.0, 0.0, 5.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn hand_enumerated_recall() {
        let r = ErrorReport { mssd: 0.26 * 100.0, mspd: 1e9, add: 1.0, adi: 1.0, diameter: 100.0, image_width: 640 };
        let s = average_recall(&[r]).unwrap();
        assert_eq!(s.ar_mssd, 0.5);
        assert_eq!(s.ar_mspd, 0.0);
        assert_eq!(s.ar, 0.25);
        // thresholds are strict: an error equal to 5r fails the first rung
        let e = ErrorReport { mssd: 1e9, mspd: 5.0, add: 1.0, adi: 1.0, diameter: 100.0, image_width: 640 };
        assert_eq!(average_recall(&[e]).unwrap().ar_mspd, 0.9);
        // the pixel ladder scales with image width
        let w = ErrorReport { mspd: 12.0, image_width: 1280, ..e };
        assert_eq!(w.mspd_thresholds()[0], 10.0);
        assert_eq!(average_recall(&[w]).unwrap().ar_mspd, 0.9);
        let missing = ErrorReport::missing(100.0, 640);
        let s = average_recall(&[missing]).unwrap();
        assert_eq!((s.ar, s.add_01d), (0.0, 0.0));
        assert!(matches!(average_recall(&[]), Err(BopError::EmptyReportSet)));
    }

    #[test]
    fn recall_is_monotone_in_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut reports: Vec<ErrorReport> = (0..20)
            .map(|_| ErrorReport {
                mssd: rng.random_range(0.0..60.0),
                mspd: rng.random_range(0.0..60.0),
                add: 1.0,
                adi: 1.0,
                diameter: 100.0,
                image_width: 640,
            })
            .collect();
        let before = average_recall(&reports).unwrap().ar;
        for r in reports.iter_mut().step_by(2) {
            r.mssd *= 0.5;
            r.mspd *= 0.7;
        }
        assert!(average_recall(&reports).unwrap().ar >= before);
    }
}
