//! Model-free end-to-end check: a procedural object, rendered templates and
//! held-out query views, estimated with oracle descriptors.

use std::time::Instant;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{estimate_instance, oracle_query, ObjectTemplates, QueryDescriptors};
use crate::descriptors::{DescriptorGrid, GlobalDescriptor, DEFAULT_OUT_SIZE, DEFAULT_PATCH_SIZE, DEFAULT_STRIDE};
use crate::geometry::{random_rotation, rotation_angle_between};
use crate::matching::DEFAULT_TOP_K;
use crate::pose_solver::RansacParams;
use crate::render::{
    min_angular_separation, rasterize_coordinate_map, render_templates, sample_viewpoints, TemplateRenderConfig,
    TemplateStore,
};
use crate::{synthetic, Pose};

pub const DEFAULT_SELFTEST_SEED: u64 = 0;
pub const MIN_QUERIES: usize = 30;
pub const MAX_MEDIAN_ROTATION_DEG: f64 = 5.0;
pub const MAX_MEDIAN_TRANSLATION_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelftestOptions {
    pub seed: u64,
    pub template_count: usize,
    pub queries: usize,
    pub top_k: usize,
    /// Replaces query descriptors with random unit vectors.
    pub random_descriptors: bool,
    /// Uses template poses as query poses.
    pub queries_at_template_poses: bool,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SELFTEST_SEED,
            template_count: 300,
            queries: 40,
            top_k: DEFAULT_TOP_K,
            random_descriptors: false,
            queries_at_template_poses: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub rotation_deg: f64,
    pub translation_mm: f64,
    /// Failure stage, when the pipeline produced no pose.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub options: SelftestOptions,
    pub diameter_mm: f64,
    pub queries: usize,
    pub successes: usize,
    pub median_rotation_deg: f64,
    pub median_translation_mm: f64,
    pub median_translation_fraction: f64,
    pub min_template_spacing_deg: f64,
    /// Median rotation error is below half the template spacing.
    pub finer_than_templates: bool,
    pub passed: bool,
    pub runtime_s: f64,
    pub outcomes: Vec<QueryOutcome>,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::INFINITY
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// A pose whose object center projects into the middle of the image at a
/// distance of 2 to 3.5 diameters.
fn random_query_pose(rng: &mut ChaCha8Rng, diameter: f64, k: &crate::CameraIntrinsics) -> Pose {
    let z = diameter * rng.random_range(2.0..3.5);
    let px = Vector2::new(rng.random_range(220.0..420.0), rng.random_range(160.0..320.0));
    let ray = k.normalize(&px);
    Pose::new(random_rotation(rng), Vector3::new(ray.x * z, ray.y * z, z)).expect("rotation")
}

fn randomized(q: &QueryDescriptors, rng: &mut ChaCha8Rng) -> QueryDescriptors {
    let g = &q.grid;
    let data: Vec<f32> = (0..g.len() * g.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grid = DescriptorGrid::new(g.rows(), g.cols(), g.dim(), data, g.valid().to_vec(), g.patch_size(), g.stride(), "random")
        .expect("random grid");
    let global = GlobalDescriptor::new((0..g.dim()).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("random global");
    QueryDescriptors { grid, global, crop: q.crop }
}

pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mesh = synthetic::bumpy_ellipsoid(3, opts.seed);
    let d = mesh.diameter();
    let render_cfg = TemplateRenderConfig::default_for_object();
    let k = render_cfg.intrinsics;
    let views = sample_viewpoints(opts.template_count.max(1), 2.5 * d).expect("viewpoints");
    let records = render_templates(&mesh, &views, &render_cfg).expect("templates render");
    let templates = ObjectTemplates::oracle(TemplateStore::from_records(1, &mesh, records), DEFAULT_PATCH_SIZE, DEFAULT_STRIDE);
    let spacing = min_angular_separation(&views.iter().map(|v| v.pose).collect::<Vec<_>>()).to_degrees();
    let all: Vec<usize> = (0..templates.records.len()).collect();
    let ransac = RansacParams { seed: opts.seed, ..RansacParams::default() };

    let poses: Vec<Pose> = (0..opts.queries)
        .map(|i| {
            if opts.queries_at_template_poses {
                views[i % views.len()].pose
            } else {
                random_query_pose(&mut rng, d, &k)
            }
        })
        .collect();
    let outcomes: Vec<QueryOutcome> = poses
        .iter()
        .enumerate()
        .map(|(i, gt)| {
            let render = rasterize_coordinate_map(&mesh, gt, &k);
            let query = oracle_query(&render.coord_map, &render.mask, 1.2, DEFAULT_OUT_SIZE, DEFAULT_PATCH_SIZE, DEFAULT_STRIDE)
                .map(|q| if opts.random_descriptors { randomized(&q, &mut rng) } else { q });
            let params = RansacParams { seed: ransac.seed.wrapping_add(i as u64), ..ransac };
            match query.and_then(|q| estimate_instance(&q, &templates, &all, &k, opts.top_k, &params)) {
                Ok(est) => QueryOutcome {
                    rotation_deg: rotation_angle_between(&est.pose, gt).to_degrees(),
                    translation_mm: (est.pose.translation() - gt.translation()).norm(),
                    failure: None,
                },
                Err(f) => QueryOutcome { rotation_deg: f64::INFINITY, translation_mm: f64::INFINITY, failure: Some(f.stage) },
            }
        })
        .collect();

    let rot: Vec<f64> = outcomes.iter().map(|o| o.rotation_deg).collect();
    let trans: Vec<f64> = outcomes.iter().map(|o| o.translation_mm).collect();
    let median_rotation_deg = median(&rot);
    let median_translation_mm = median(&trans);
    let median_translation_fraction = median_translation_mm / d;
    let passed = outcomes.len() >= MIN_QUERIES
        && median_rotation_deg < MAX_MEDIAN_ROTATION_DEG
        && median_translation_fraction < MAX_MEDIAN_TRANSLATION_FRACTION;
    SelftestReport {
        options: *opts,
        diameter_mm: d,
        queries: outcomes.len(),
        successes: outcomes.iter().filter(|o| o.failure.is_none()).count(),
        median_rotation_deg,
        median_translation_mm,
        median_translation_fraction,
        min_template_spacing_deg: spacing,
        finer_than_templates: median_rotation_deg < spacing / 2.0,
        passed,
        runtime_s: start.elapsed().as_secs_f64(),
        outcomes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[1.0, f64::INFINITY, f64::INFINITY]), f64::INFINITY);
    }

    #[test]
    fn small_selftest_passes_and_negative_control_fails() {
        let base = SelftestOptions { template_count: 100, queries: 30, ..Default::default() };
        let ok = run_selftest(&base);
        assert!(ok.passed, "{:?}", (ok.median_rotation_deg, ok.median_translation_fraction));
        let bad = run_selftest(&SelftestOptions { random_descriptors: true, ..base });
        assert!(!bad.passed, "{:?}", (bad.median_rotation_deg, bad.median_translation_fraction));
    }

    #[test]
    fn template_poses_are_recovered_within_a_degree() {
        let r = run_selftest(&SelftestOptions { template_count: 100, queries: 30, queries_at_template_poses: true, ..Default::default() });
        assert!(r.median_rotation_deg < 1.0, "{}", r.median_rotation_deg);
    }
}
