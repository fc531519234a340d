//! End-to-end orchestration: template stores, per-instance estimation over a
//! BOP-layout dataset, evaluation and ablation sweeps.

mod config;
pub mod selftest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    DescriptorBackend, PipelineConfig, DEFAULT_CROP_PAD, DEFAULT_RADIUS_FACTOR, DEFAULT_TEMPLATE_COUNT,
};

use crate::bop_eval::{
    self, load_bop_scene, load_models_info, model_path, read_results_csv, write_results_csv, BopError, ErrorReport,
    EstimateRecord, RecallSummary, SceneAnnotation, SymmetrySet, AR_LABEL,
};
use crate::descriptors::{
    crop_nearest, oracle_descriptors, pool_global, CropTransform, DescriptorError, DescriptorGrid, GlobalDescriptor,
    Tensor, TensorData, ORACLE_DIM,
};
use crate::matching::{lift_correspondences, match_template, mutual_nearest_neighbors};
use crate::mesh::{load_mesh, MeshError, NocsFrame, NocsValue};
use crate::pose_solver::{ransac_pnp, RansacParams};
use crate::raster::{read_mask_png, PixelBox, Raster};
use crate::render::{
    build_template_store, farthest_point_order, object_store_dir, sample_viewpoints, RenderError, TemplateManifest,
    TemplateRecord, TemplateRenderConfig, TemplateStore,
};
use crate::{CameraIntrinsics, Pose, TriMesh};

pub mod stage {
    pub const SEGMENTATION_MISSING: &str = "segmentation-missing";
    pub const MODEL_MISSING: &str = "model-missing";
    pub const CROP: &str = "crop";
    pub const DESCRIPTORS: &str = "descriptors";
    pub const TEMPLATE_MATCH: &str = "template-match";
    pub const CORRESPONDENCES: &str = "correspondences";
    pub const PNP: &str = "pnp";
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Bop(#[from] BopError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error("invalid data: {0}")]
    Data(String),
}

impl PipelineError {
    /// Process exit code: 2 for configuration errors, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Why one instance produced no estimate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

impl StageFailure {
    fn new(stage: &str, message: impl ToString) -> Self {
        Self { stage: stage.to_string(), message: message.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub scene_id: u32,
    pub im_id: u32,
    /// Instance ordinal within the image.
    pub instance: usize,
    pub obj_id: u32,
    pub stage: String,
    pub message: String,
}

/// Templates of one object with their descriptors.
#[derive(Debug, Clone)]
pub struct ObjectTemplates {
    pub object_id: u32,
    pub frame: NocsFrame,
    pub diameter: f64,
    pub records: Vec<TemplateRecord>,
    /// `None` for templates without usable descriptors.
    pub grids: Vec<Option<DescriptorGrid>>,
    pub globals: Vec<Option<GlobalDescriptor>>,
    /// Template indices in farthest-point order of their viewing directions.
    pub selection_order: Vec<usize>,
}

fn selection_order(records: &[TemplateRecord]) -> Vec<usize> {
    let dirs: Vec<Vector3<f64>> = records.iter().map(|r| r.pose.camera_center().normalize()).collect();
    farthest_point_order(&dirs, dirs.len())
}

impl ObjectTemplates {
    /// Oracle descriptors computed from each template's coordinate map.
    pub fn oracle(store: TemplateStore, patch_size: u32, stride: u32) -> Self {
        let (grids, globals): (Vec<_>, Vec<_>) = store
            .records
            .par_iter()
            .map(|r| {
                if r.empty_render {
                    return (None, None);
                }
                let grid = oracle_descriptors(&r.render_output(store.frame).coord_map, patch_size, stride, ORACLE_DIM).ok();
                let global = grid.as_ref().and_then(|g| pool_global(g).ok());
                match global {
                    Some(g) => (grid, Some(g)),
                    None => (None, None),
                }
            })
            .unzip();
        let selection_order = selection_order(&store.records);
        Self {
            object_id: store.object_id,
            frame: store.frame,
            diameter: store.diameter,
            records: store.records,
            grids,
            globals,
            selection_order,
        }
    }

    /// Descriptors read from `view_<k>.local.zst6` / `view_<k>.global.zst6`
    /// in the object's store directory.
    pub fn archive(store: TemplateStore, dir: &Path) -> Result<Self, PipelineError> {
        let loaded = store
            .records
            .par_iter()
            .map(|r| {
                let stem = format!("view_{:04}", r.index);
                let local = dir.join(format!("{stem}.local.zst6"));
                let global = dir.join(format!("{stem}.global.zst6"));
                if r.empty_render || !local.exists() {
                    return Ok((None, None));
                }
                Ok((Some(DescriptorGrid::read(&local)?), Some(GlobalDescriptor::read(&global)?)))
            })
            .collect::<Result<Vec<_>, DescriptorError>>()?;
        let (grids, globals) = loaded.into_iter().unzip();
        let selection_order = selection_order(&store.records);
        Ok(Self {
            object_id: store.object_id,
            frame: store.frame,
            diameter: store.diameter,
            records: store.records,
            grids,
            globals,
            selection_order,
        })
    }

    /// The first `count` templates in farthest-point order.
    pub fn subset(&self, count: usize) -> Vec<usize> {
        let mut s: Vec<usize> = self.selection_order.iter().copied().take(count).collect();
        s.sort_unstable();
        s
    }
}

/// Descriptors of one query crop.
#[derive(Debug, Clone)]
pub struct QueryDescriptors {
    pub grid: DescriptorGrid,
    pub global: GlobalDescriptor,
    pub crop: CropTransform,
}

/// Oracle query descriptors from a full-image coordinate map and an instance
/// mask; pixels outside the mask are background.
pub fn oracle_query(
    coord_map: &Raster<Option<NocsValue>>,
    mask: &Raster<bool>,
    crop_pad: f64,
    out_size: usize,
    patch_size: u32,
    stride: u32,
) -> Result<QueryDescriptors, StageFailure> {
    if (coord_map.width(), coord_map.height()) != (mask.width(), mask.height()) {
        return Err(StageFailure::new(stage::CROP, "mask and coordinate map sizes differ"));
    }
    let bbox = PixelBox::from_mask(mask).ok_or_else(|| StageFailure::new(stage::CROP, "empty mask"))?;
    let masked = Raster::from_vec(
        mask.width(),
        mask.height(),
        coord_map.data().iter().zip(mask.data()).map(|(c, &m)| if m { *c } else { None }).collect(),
    );
    let (crop_map, crop) =
        crop_nearest(&masked, &bbox, crop_pad, out_size).map_err(|e| StageFailure::new(stage::CROP, e))?;
    let grid = oracle_descriptors(&crop_map, patch_size, stride, ORACLE_DIM)
        .map_err(|e| StageFailure::new(stage::DESCRIPTORS, e))?;
    let global = pool_global(&grid).map_err(|e| StageFailure::new(stage::DESCRIPTORS, e))?;
    Ok(QueryDescriptors { grid, global, crop })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceEstimate {
    pub pose: Pose,
    /// Inlier fraction of the lifted correspondences.
    pub score: f64,
    pub template_index: usize,
    pub correspondences: usize,
    pub inliers: usize,
}

/// Retrieval, mutual matching, lifting and RANSAC-PnP for one query
/// against the `allowed` templates of one object.
pub fn estimate_instance(
    query: &QueryDescriptors,
    templates: &ObjectTemplates,
    allowed: &[usize],
    k: &CameraIntrinsics,
    top_k: usize,
    ransac: &RansacParams,
) -> Result<InstanceEstimate, StageFailure> {
    let usable: Vec<usize> = allowed.iter().copied().filter(|&i| templates.globals[i].is_some()).collect();
    let globals: Vec<GlobalDescriptor> =
        usable.iter().map(|&i| templates.globals[i].clone().expect("usable template")).collect();
    let ranked = match_template(&query.global, &globals).map_err(|e| StageFailure::new(stage::TEMPLATE_MATCH, e))?;
    let t = usable[ranked[0].template_index];
    let grid = templates.grids[t].as_ref().expect("usable template has a grid");
    let matches =
        mutual_nearest_neighbors(&query.grid, grid).map_err(|e| StageFailure::new(stage::CORRESPONDENCES, e))?;
    let corr = lift_correspondences(&matches, &query.grid, grid, &templates.records[t], &templates.frame, &query.crop, top_k)
        .map_err(|e| StageFailure::new(stage::CORRESPONDENCES, e))?;
    let est = ransac_pnp(&corr, k, ransac).map_err(|e| StageFailure::new(stage::PNP, e))?;
    Ok(InstanceEstimate {
        pose: est.pose,
        score: est.inlier_indices.len() as f64 / corr.len() as f64,
        template_index: templates.records[t].index,
        correspondences: corr.len(),
        inliers: est.inlier_indices.len(),
    })
}

/// Path of the object-coordinate map used by the oracle backend for one
/// ground-truth instance.
pub fn coord_path(scene_dir: &Path, im_id: u32, gt_index: usize) -> PathBuf {
    scene_dir.join("coord").join(format!("{im_id:06}_{gt_index:06}.zst6"))
}

/// Stem of the externally exported descriptor files of one query instance.
pub fn query_descriptor_stem(scene_dir: &Path, im_id: u32, instance: usize) -> PathBuf {
    scene_dir.join("descriptors").join(format!("{im_id:06}_{instance:06}"))
}

/// Quantized coordinate tensor (`rows × cols × 3`, u16) to a raster.
pub fn coord_map_from_tensor(t: &Tensor) -> Result<Raster<Option<NocsValue>>, String> {
    let TensorData::U16(data) = &t.data else { return Err("coordinate map must be uint16".into()) };
    if t.dim != 3 {
        return Err(format!("coordinate map needs 3 channels, got {}", t.dim));
    }
    let px = data.chunks_exact(3).map(|c| Some(NocsValue::from_quantized([c[0], c[1], c[2]]))).collect();
    Ok(Raster::from_vec(t.cols as usize, t.rows as usize, px))
}

pub fn coord_map_to_tensor(map: &Raster<Option<NocsValue>>) -> Tensor {
    let data = map.data().iter().flat_map(|c| c.map(|v| v.quantize()).unwrap_or([0; 3])).collect();
    Tensor::new(map.height() as u32, map.width() as u32, 3, TensorData::U16(data)).expect("coord map shape")
}

/// One entry of a detections JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub scene_id: u32,
    pub im_id: u32,
    pub obj_id: u32,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    /// Relative paths resolve against the JSON file's directory.
    pub mask_png_path: PathBuf,
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>, PipelineError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut dets: Vec<Detection> =
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for d in &mut dets {
        if d.mask_png_path.is_relative() {
            d.mask_png_path = base.join(&d.mask_png_path);
        }
    }
    Ok(dets)
}

fn split_root(cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    Ok(cfg.require(&cfg.dataset, "dataset")?.join(&cfg.split))
}

/// Scene ids from the config, or every numeric directory of the split.
pub fn scene_ids(cfg: &PipelineConfig) -> Result<Vec<u32>, PipelineError> {
    if !cfg.scenes.is_empty() {
        return Ok(cfg.scenes.clone());
    }
    let root = split_root(cfg)?;
    let mut ids: Vec<u32> = std::fs::read_dir(&root)
        .map_err(io_err(&root))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.parse().ok()))
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

pub fn load_annotations(cfg: &PipelineConfig) -> Result<Vec<SceneAnnotation>, PipelineError> {
    let root = split_root(cfg)?;
    let mut out = Vec::new();
    for s in scene_ids(cfg)? {
        out.extend(load_bop_scene(&root, s)?);
    }
    Ok(out)
}

/// Object ids that have a mesh under `<dataset>/models`.
pub fn dataset_object_ids(dataset: &Path) -> Result<Vec<u32>, PipelineError> {
    let dir = dataset.join("models");
    let mut ids: Vec<u32> = std::fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_str()?.to_string();
            name.strip_prefix("obj_")?.strip_suffix(".ply")?.parse().ok()
        })
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Renders a template store for every model of the dataset.
pub fn render_templates_for_dataset(cfg: &PipelineConfig) -> Result<Vec<TemplateManifest>, PipelineError> {
    cfg.validate()?;
    let dataset = cfg.require(&cfg.dataset, "dataset")?;
    let store = cfg.require(&cfg.store, "store")?;
    let render = TemplateRenderConfig { crop_pad: cfg.crop_pad, out_size: cfg.out_size, ..TemplateRenderConfig::default_for_object() };
    let mut manifests = Vec::new();
    for id in dataset_object_ids(dataset)? {
        let mesh: TriMesh = load_mesh(model_path(dataset, id))?;
        let views = sample_viewpoints(cfg.template_count, cfg.radius_factor * mesh.diameter())?;
        log::info!("object {id}: rendering {} templates", views.len());
        manifests.push(build_template_store(&mesh, &views, &render, id, &object_store_dir(store, id))?);
    }
    Ok(manifests)
}

/// One query instance, prepared up to its descriptors.
#[derive(Debug, Clone)]
struct PreparedInstance {
    scene_id: u32,
    im_id: u32,
    instance: usize,
    obj_id: u32,
    k: CameraIntrinsics,
    query: Result<QueryDescriptors, StageFailure>,
}

/// Templates and query descriptors loaded once and reused across runs that
/// vary only the template count, `top_k` or RANSAC settings.
#[derive(Debug, Clone)]
pub struct Workspace {
    cfg: PipelineConfig,
    templates: BTreeMap<u32, ObjectTemplates>,
    instances: Vec<PreparedInstance>,
}

struct InstanceSource {
    obj_id: u32,
    mask_path: PathBuf,
    /// Ground-truth index whose coordinate map the oracle reads.
    gt_index: Option<usize>,
}

fn mask_overlap(a: &Raster<bool>, b: &Raster<bool>) -> usize {
    a.data().iter().zip(b.data()).filter(|(&x, &y)| x && y).count()
}

impl Workspace {
    pub fn prepare(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let store_root = cfg.require(&cfg.store, "store")?;
        let root = split_root(cfg)?;
        let annotations = load_annotations(cfg)?;
        let detections = cfg.masks.as_deref().map(read_detections).transpose()?;

        let mut templates = BTreeMap::new();
        let mut wanted: Vec<u32> = match &detections {
            Some(d) => d.iter().map(|d| d.obj_id).collect(),
            None => annotations.iter().flat_map(|a| a.gt.iter().map(|g| g.object_id)).collect(),
        };
        wanted.sort_unstable();
        wanted.dedup();
        for id in wanted {
            let dir = object_store_dir(store_root, id);
            if !dir.join(crate::render::MANIFEST_FILE).exists() {
                log::warn!("no template store for object {id} in {}", store_root.display());
                continue;
            }
            let store = TemplateStore::load(&dir)?;
            let t = match cfg.descriptor_backend {
                DescriptorBackend::Oracle => ObjectTemplates::oracle(store, cfg.patch_size, cfg.stride),
                DescriptorBackend::Archive => ObjectTemplates::archive(store, &dir)?,
            };
            templates.insert(id, t);
        }

        let mut jobs = Vec::new();
        for a in &annotations {
            let sources: Vec<InstanceSource> = match &detections {
                None => a
                    .gt
                    .iter()
                    .enumerate()
                    .map(|(i, g)| InstanceSource { obj_id: g.object_id, mask_path: g.mask_path.clone(), gt_index: Some(i) })
                    .collect(),
                Some(d) => d
                    .iter()
                    .filter(|d| d.scene_id == a.scene_id && d.im_id == a.image_id)
                    .map(|d| InstanceSource { obj_id: d.obj_id, mask_path: d.mask_png_path.clone(), gt_index: None })
                    .collect(),
            };
            for (instance, src) in sources.into_iter().enumerate() {
                jobs.push((a, instance, src));
            }
        }
        let instances = jobs
            .into_par_iter()
            .map(|(a, instance, src)| PreparedInstance {
                scene_id: a.scene_id,
                im_id: a.image_id,
                instance,
                obj_id: src.obj_id,
                k: a.k,
                query: prepare_query(cfg, &root, a, instance, &src, templates.contains_key(&src.obj_id)),
            })
            .collect();
        Ok(Self { cfg: cfg.clone(), templates, instances })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    /// Estimates every instance with the given knobs. Results come back in
    /// instance order.
    pub fn run(&self, template_count: usize, top_k: usize, ransac: &RansacParams) -> (Vec<EstimateRecord>, Vec<Diagnostic>) {
        let subsets: BTreeMap<u32, Vec<usize>> =
            self.templates.iter().map(|(&id, t)| (id, t.subset(template_count))).collect();
        let outcomes: Vec<Result<EstimateRecord, Diagnostic>> = self
            .instances
            .par_iter()
            .enumerate()
            .map(|(ordinal, inst)| {
                let fail = |f: StageFailure| Diagnostic {
                    scene_id: inst.scene_id,
                    im_id: inst.im_id,
                    instance: inst.instance,
                    obj_id: inst.obj_id,
                    stage: f.stage,
                    message: f.message,
                };
                let query = inst.query.as_ref().map_err(|f| fail(f.clone()))?;
                let templates = &self.templates[&inst.obj_id];
                let params = RansacParams { seed: instance_seed(ransac.seed, ordinal), ..*ransac };
                let est = estimate_instance(query, templates, &subsets[&inst.obj_id], &inst.k, top_k, &params).map_err(fail)?;
                Ok(EstimateRecord {
                    scene_id: inst.scene_id,
                    im_id: inst.im_id,
                    obj_id: inst.obj_id,
                    score: est.score,
                    pose: est.pose,
                    time: -1.0,
                })
            })
            .collect();
        let mut records = Vec::new();
        let mut diagnostics = Vec::new();
        for o in outcomes {
            match o {
                Ok(r) => records.push(r),
                Err(d) => diagnostics.push(d),
            }
        }
        (records, diagnostics)
    }
}

fn instance_seed(seed: u64, ordinal: usize) -> u64 {
    seed ^ (ordinal as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn prepare_query(
    cfg: &PipelineConfig,
    split_root: &Path,
    a: &SceneAnnotation,
    instance: usize,
    src: &InstanceSource,
    has_templates: bool,
) -> Result<QueryDescriptors, StageFailure> {
    if !has_templates {
        return Err(StageFailure::new(stage::MODEL_MISSING, format!("no templates for object {}", src.obj_id)));
    }
    if !src.mask_path.is_file() {
        return Err(StageFailure::new(stage::SEGMENTATION_MISSING, src.mask_path.display()));
    }
    let mask = read_mask_png(&src.mask_path).map_err(|e| StageFailure::new(stage::SEGMENTATION_MISSING, e))?;
    let scene_dir = bop_eval::scene_dir(split_root, a.scene_id);
    match cfg.descriptor_backend {
        DescriptorBackend::Oracle => {
            let gt_index = match src.gt_index {
                Some(i) => i,
                None => best_gt_for_mask(a, src.obj_id, &mask)
                    .ok_or_else(|| StageFailure::new(stage::DESCRIPTORS, "detection overlaps no ground-truth instance"))?,
            };
            let path = coord_path(&scene_dir, a.image_id, gt_index);
            let t = Tensor::read(&path).map_err(|e| StageFailure::new(stage::DESCRIPTORS, e))?;
            let coord = coord_map_from_tensor(&t).map_err(|e| StageFailure::new(stage::DESCRIPTORS, e))?;
            oracle_query(&coord, &mask, cfg.crop_pad, cfg.out_size, cfg.patch_size, cfg.stride)
        }
        DescriptorBackend::Archive => {
            let bbox = PixelBox::from_mask(&mask).ok_or_else(|| StageFailure::new(stage::CROP, "empty mask"))?;
            let crop = CropTransform::from_bbox(&bbox, cfg.crop_pad, cfg.out_size)
                .map_err(|e| StageFailure::new(stage::CROP, e))?;
            let stem = query_descriptor_stem(&scene_dir, a.image_id, instance);
            let local = PathBuf::from(format!("{}.local.zst6", stem.display()));
            let global = PathBuf::from(format!("{}.global.zst6", stem.display()));
            let grid = DescriptorGrid::read(&local).map_err(|e| StageFailure::new(stage::DESCRIPTORS, e))?;
            let global = GlobalDescriptor::read(&global).map_err(|e| StageFailure::new(stage::DESCRIPTORS, e))?;
            Ok(QueryDescriptors { grid, global, crop })
        }
    }
}

/// Ground-truth instance of `obj_id` whose visible mask overlaps `mask` most.
fn best_gt_for_mask(a: &SceneAnnotation, obj_id: u32, mask: &Raster<bool>) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (i, g) in a.gt.iter().enumerate().filter(|(_, g)| g.object_id == obj_id) {
        let Ok(m) = read_mask_png(&g.mask_path) else { continue };
        if (m.width(), m.height()) != (mask.width(), mask.height()) {
            continue;
        }
        let o = mask_overlap(&m, mask);
        if o > 0 && best.is_none_or(|(_, bo)| o > bo) {
            best = Some((i, o));
        }
    }
    best.map(|(i, _)| i)
}

/// `results.csv` → `results.diagnostics.json`.
pub fn diagnostics_path(results: &Path) -> PathBuf {
    results.with_extension("diagnostics.json")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSummary {
    pub estimates: usize,
    pub failures: usize,
    pub results: PathBuf,
}

/// Estimates every instance of the configured scenes and writes the
/// results CSV plus a diagnostics JSON next to it.
pub fn estimate(cfg: &PipelineConfig) -> Result<EstimateSummary, PipelineError> {
    let results = cfg.require(&cfg.results, "results")?.to_path_buf();
    let ws = Workspace::prepare(cfg)?;
    let (records, diagnostics) = ws.run(cfg.template_count, cfg.correspondence_top_k, &cfg.ransac_params());
    write_results_csv(&records, &results)?;
    write_json(&diagnostics, &diagnostics_path(&results))?;
    Ok(EstimateSummary { estimates: records.len(), failures: diagnostics.len(), results })
}

/// Ground truth, meshes and symmetry annotations for scoring.
#[derive(Debug, Clone)]
pub struct EvalContext {
    annotations: Vec<SceneAnnotation>,
    models: BTreeMap<u32, EvalModel>,
}

#[derive(Debug, Clone)]
struct EvalModel {
    points: Vec<Vector3<f64>>,
    diameter: f64,
    symmetries: Vec<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub scene_id: u32,
    pub im_id: u32,
    pub gt_index: usize,
    pub obj_id: u32,
    pub estimated: bool,
    pub errors: ErrorReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metric: String,
    pub summary: RecallSummary,
    pub instances: Vec<InstanceReport>,
}

impl EvalContext {
    pub fn load(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let dataset = cfg.require(&cfg.dataset, "dataset")?;
        let annotations = load_annotations(cfg)?;
        let info_path = dataset.join("models").join("models_info.json");
        let info = if info_path.exists() { load_models_info(&info_path)? } else { BTreeMap::new() };
        let mut ids: Vec<u32> = annotations.iter().flat_map(|a| a.gt.iter().map(|g| g.object_id)).collect();
        ids.sort_unstable();
        ids.dedup();
        let models = ids
            .par_iter()
            .map(|&id| {
                let mesh: TriMesh = load_mesh(model_path(dataset, id))?;
                let (diameter, sym) = match info.get(&id) {
                    Some(i) => (i.diameter, i.symmetries.clone()),
                    None => (mesh.diameter(), SymmetrySet::none()),
                };
                Ok((id, EvalModel { points: bop_eval::metric_vertices(&mesh), diameter, symmetries: sym.transforms() }))
            })
            .collect::<Result<BTreeMap<_, _>, PipelineError>>()?;
        Ok(Self { annotations, models })
    }

    pub fn instance_count(&self) -> usize {
        self.annotations.iter().map(|a| a.gt.len()).sum()
    }

    /// Scores every ground-truth instance. Estimates of one object in one
    /// image are assigned greedily by descending score to the unassigned
    /// instance with the lowest MSSD; instances left over count as missing.
    pub fn evaluate(&self, records: &[EstimateRecord]) -> Result<EvaluationReport, PipelineError> {
        let mut by_image: BTreeMap<(u32, u32, u32), Vec<&EstimateRecord>> = BTreeMap::new();
        for r in records {
            by_image.entry((r.scene_id, r.im_id, r.obj_id)).or_default().push(r);
        }
        let per_image: Vec<Vec<InstanceReport>> = self
            .annotations
            .par_iter()
            .map(|a| {
                let mut reports: Vec<Option<InstanceReport>> = vec![None; a.gt.len()];
                let mut objs: Vec<u32> = a.gt.iter().map(|g| g.object_id).collect();
                objs.sort_unstable();
                objs.dedup();
                for obj in objs {
                    let model = &self.models[&obj];
                    let mut ests = by_image.get(&(a.scene_id, a.image_id, obj)).cloned().unwrap_or_default();
                    ests.sort_by(|x, y| y.score.total_cmp(&x.score));
                    for e in ests {
                        let best = a
                            .gt
                            .iter()
                            .enumerate()
                            .filter(|(i, g)| g.object_id == obj && reports[*i].is_none())
                            .map(|(i, g)| (i, bop_eval::mssd(&e.pose, &g.pose, &model.points, &model.symmetries)))
                            .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
                        let Some((i, _)) = best else { break };
                        let gt = &a.gt[i].pose;
                        let errors = ErrorReport {
                            mssd: bop_eval::mssd(&e.pose, gt, &model.points, &model.symmetries),
                            mspd: bop_eval::mspd(&e.pose, gt, &model.points, &model.symmetries, &a.k),
                            add: bop_eval::add(&e.pose, gt, &model.points),
                            adi: bop_eval::adi(&e.pose, gt, &model.points),
                            diameter: model.diameter,
                            image_width: a.k.width,
                        };
                        reports[i] = Some(InstanceReport {
                            scene_id: a.scene_id,
                            im_id: a.image_id,
                            gt_index: i,
                            obj_id: obj,
                            estimated: true,
                            errors,
                        });
                    }
                }
                reports
                    .into_iter()
                    .enumerate()
                    .map(|(i, r)| {
                        r.unwrap_or_else(|| {
                            let obj = a.gt[i].object_id;
                            InstanceReport {
                                scene_id: a.scene_id,
                                im_id: a.image_id,
                                gt_index: i,
                                obj_id: obj,
                                estimated: false,
                                errors: ErrorReport::missing(self.models[&obj].diameter, a.k.width),
                            }
                        })
                    })
                    .collect()
            })
            .collect();
        let instances: Vec<InstanceReport> = per_image.into_iter().flatten().collect();
        let errors: Vec<ErrorReport> = instances.iter().map(|r| r.errors).collect();
        let summary = bop_eval::average_recall(&errors)?;
        Ok(EvaluationReport { metric: AR_LABEL.to_string(), summary, instances })
    }
}

/// Scores a results CSV against the dataset and writes a JSON report.
pub fn evaluate(cfg: &PipelineConfig, report_path: &Path) -> Result<EvaluationReport, PipelineError> {
    let results = cfg.require(&cfg.results, "results")?;
    let records = read_results_csv(results)?;
    let report = EvalContext::load(cfg)?.evaluate(&records)?;
    write_json(&report, report_path)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Templates,
    Correspondences,
}

impl std::str::FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "templates" => Ok(Self::Templates),
            "correspondences" => Ok(Self::Correspondences),
            other => Err(format!("unknown sweep '{other}' (expected templates or correspondences)")),
        }
    }
}

pub const ABLATION_HEADER: &str = "value,ar";

/// AR for each value of one knob, all other settings fixed.
pub fn ablate(cfg: &PipelineConfig, sweep: Sweep, values: &[usize]) -> Result<Vec<(usize, f64)>, PipelineError> {
    if values.is_empty() {
        return Err(PipelineError::Config("ablation needs at least one value".into()));
    }
    for &v in values {
        let probe = match sweep {
            Sweep::Templates => PipelineConfig { template_count: v, ..cfg.clone() },
            Sweep::Correspondences => PipelineConfig { correspondence_top_k: v, ..cfg.clone() },
        };
        probe.validate()?;
    }
    let ws = Workspace::prepare(cfg)?;
    let eval = EvalContext::load(cfg)?;
    let ransac = cfg.ransac_params();
    values
        .iter()
        .map(|&v| {
            let (records, _) = match sweep {
                Sweep::Templates => ws.run(v, cfg.correspondence_top_k, &ransac),
                Sweep::Correspondences => ws.run(cfg.template_count, v, &ransac),
            };
            let ar = eval.evaluate(&records)?.summary.ar;
            log::info!("{sweep:?} = {v}: AR {ar:.4}");
            Ok((v, ar))
        })
        .collect()
}

pub fn write_ablation_csv(rows: &[(usize, f64)], path: &Path) -> Result<(), PipelineError> {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for (v, ar) in rows {
        out.push_str(&format!("{v},{ar:.6}\n"));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, out).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{rasterize_coordinate_map, render_templates};
    use crate::synthetic;

    fn templates(n: usize) -> (TriMesh, ObjectTemplates) {
        let mesh = synthetic::bumpy_ellipsoid(3, 4);
        let views = sample_viewpoints(n, 2.5 * mesh.diameter()).unwrap();
        let records = render_templates(&mesh, &views, &TemplateRenderConfig::default_for_object()).unwrap();
        let store = TemplateStore::from_records(1, &mesh, records);
        (mesh, ObjectTemplates::oracle(store, 8, 8))
    }

    #[test]
    fn subset_is_farthest_prefix() {
        let (_, t) = templates(40);
        assert_eq!(t.subset(40), (0..40).collect::<Vec<_>>());
        assert_eq!(t.subset(5).len(), 5);
        assert!(t.subset(5).iter().all(|i| t.subset(10).contains(i)));
        assert_eq!(t.subset(1000).len(), 40);
    }

    #[test]
    fn estimates_a_template_view() {
        let (mesh, t) = templates(60);
        let k = TemplateRenderConfig::default_for_object().intrinsics;
        let pose = t.records[7].pose;
        let r = rasterize_coordinate_map(&mesh, &pose, &k);
        let q = oracle_query(&r.coord_map, &r.mask, 1.2, 224, 8, 8).unwrap();
        let all: Vec<usize> = (0..t.records.len()).collect();
        let est = estimate_instance(&q, &t, &all, &k, 20, &RansacParams::default()).unwrap();
        assert_eq!(est.template_index, 7);
        let deg = crate::geometry::rotation_angle_between(&est.pose, &pose).to_degrees();
        assert!(deg < 2.0, "rotation error {deg}");
        assert!((est.pose.translation() - pose.translation()).norm() < 0.03 * mesh.diameter());
    }

    #[test]
    fn empty_query_mask_is_a_crop_failure() {
        let coord = Raster::filled(32, 32, None);
        let mask = Raster::filled(32, 32, false);
        assert_eq!(oracle_query(&coord, &mask, 1.2, 224, 8, 8).unwrap_err().stage, stage::CROP);
    }

    #[test]
    fn coord_tensor_roundtrip() {
        let mut m = Raster::filled(5, 4, None);
        *m.get_mut(2, 1) = Some(NocsValue::new(0.25, 0.5, 1.0).unwrap());
        let back = coord_map_from_tensor(&coord_map_to_tensor(&m)).unwrap();
        assert_eq!(*back.get(2, 1), Some(NocsValue::from_quantized(NocsValue::new(0.25, 0.5, 1.0).unwrap().quantize())));
        assert_eq!((back.width(), back.height()), (5, 4));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::Data("x".into()).exit_code(), 3);
    }

    #[test]
    fn diagnostics_path_sits_beside_results() {
        assert_eq!(diagnostics_path(Path::new("out/r.csv")), PathBuf::from("out/r.diagnostics.json"));
    }

    #[test]
    fn empty_sweep_is_config_error() {
        assert!(matches!(ablate(&PipelineConfig::default(), Sweep::Templates, &[]), Err(PipelineError::Config(_))));
    }
}
