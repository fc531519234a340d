//! BOP directory layout: per-scene camera and ground-truth JSON, visible
//! masks, and `models_info.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use super::{BopError, ContinuousSymmetry, SymmetrySet};
use crate::geometry::orthonormality_deviation;
use crate::{CameraIntrinsics, Pose};

const ROTATION_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub object_id: u32,
    pub pose: Pose,
    pub mask_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneAnnotation {
    pub scene_id: u32,
    pub image_id: u32,
    pub k: CameraIntrinsics,
    pub gt: Vec<GtInstance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelInfo {
    pub diameter: f64,
    pub symmetries: SymmetrySet,
}

pub fn scene_dir(split_root: &Path, scene_id: u32) -> PathBuf {
    split_root.join(format!("{scene_id:06}"))
}

pub fn mask_path(scene_dir: &Path, image_id: u32, gt_index: usize) -> PathBuf {
    scene_dir.join("mask_visib").join(format!("{image_id:06}_{gt_index:06}.png"))
}

pub fn model_path(dataset_root: &Path, object_id: u32) -> PathBuf {
    dataset_root.join("models").join(format!("obj_{object_id:06}.ply"))
}

fn read_json(path: &Path) -> Result<Value, BopError> {
    if !path.exists() {
        return Err(BopError::MissingFile { path: path.to_path_buf() });
    }
    let bytes = std::fs::read(path).map_err(|source| BopError::Io { path: path.display().to_string(), source })?;
    serde_json::from_slice(&bytes).map_err(|source| BopError::Json { path: path.display().to_string(), source })
}

fn write_json(path: &Path, v: &Value) -> Result<(), BopError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| BopError::Io { path: dir.display().to_string(), source })?;
    }
    let bytes = serde_json::to_vec_pretty(v).expect("JSON value serializes");
    std::fs::write(path, bytes).map_err(|source| BopError::Io { path: path.display().to_string(), source })
}

fn schema(file: &Path, key: &str, msg: impl Into<String>) -> BopError {
    BopError::SchemaError { file: file.display().to_string(), key: key.to_string(), msg: msg.into() }
}

fn numbers<const N: usize>(obj: &Value, key: &str, file: &Path) -> Result<[f64; N], BopError> {
    let arr = obj.get(key).and_then(Value::as_array).ok_or_else(|| schema(file, key, "missing or not an array"))?;
    if arr.len() != N {
        return Err(schema(file, key, format!("expected {N} values, got {}", arr.len())));
    }
    let mut out = [0.0; N];
    for (o, v) in out.iter_mut().zip(arr) {
        *o = v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| schema(file, key, "non-numeric value"))?;
    }
    Ok(out)
}

fn uint(obj: &Value, key: &str, file: &Path) -> Result<u32, BopError> {
    obj.get(key)
        .and_then(Value::as_u64)
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| schema(file, key, "missing or not an unsigned integer"))
}

fn image_ids(map: &Map<String, Value>, file: &Path) -> Result<Vec<(u32, Value)>, BopError> {
    let mut ids = map
        .iter()
        .map(|(k, v)| k.parse::<u32>().map(|id| (id, v.clone())).map_err(|_| schema(file, k, "image key is not an integer")))
        .collect::<Result<Vec<_>, _>>()?;
    ids.sort_by_key(|(id, _)| *id);
    Ok(ids)
}

/// Image size from, in order: the per-image entry, a `camera.json` in the
/// split directory or its parent, or the first mask of the image.
fn image_size(entry: &Value, split_root: &Path, masks: &[PathBuf], file: &Path) -> Result<(u32, u32), BopError> {
    if let (Some(w), Some(h)) = (entry.get("width").and_then(Value::as_u64), entry.get("height").and_then(Value::as_u64)) {
        return Ok((w as u32, h as u32));
    }
    for cam in [split_root.join("camera.json"), split_root.parent().map(|p| p.join("camera.json")).unwrap_or_default()] {
        if cam.is_file() {
            let v = read_json(&cam)?;
            return Ok((uint(&v, "width", &cam)?, uint(&v, "height", &cam)?));
        }
    }
    for m in masks {
        if let Ok((w, h)) = image::image_dimensions(m) {
            return Ok((w, h));
        }
    }
    Err(schema(file, "width", "image size not found in entry, camera.json or masks"))
}

/// Parses one scene of a BOP split directory (e.g. `<dataset>/test`).
pub fn load_bop_scene(split_root: &Path, scene_id: u32) -> Result<Vec<SceneAnnotation>, BopError> {
    let dir = scene_dir(split_root, scene_id);
    let cam_file = dir.join("scene_camera.json");
    let gt_file = dir.join("scene_gt.json");
    let cams = read_json(&cam_file)?;
    let gts = read_json(&gt_file)?;
    let cams = cams.as_object().ok_or_else(|| schema(&cam_file, "<root>", "expected an object"))?;
    let gts = gts.as_object().ok_or_else(|| schema(&gt_file, "<root>", "expected an object"))?;
    let mut out = Vec::new();
    for (image_id, cam) in image_ids(cams, &cam_file)? {
        let km = numbers::<9>(&cam, "cam_K", &cam_file)?;
        let mut gt = Vec::new();
        if let Some(list) = gts.get(&image_id.to_string()) {
            let list = list.as_array().ok_or_else(|| schema(&gt_file, &image_id.to_string(), "expected a list"))?;
            for (i, g) in list.iter().enumerate() {
                let r = numbers::<9>(g, "cam_R_m2c", &gt_file)?;
                let t = numbers::<3>(g, "cam_t_m2c", &gt_file)?;
                let object_id = uint(g, "obj_id", &gt_file)?;
                let rm = nalgebra::Matrix3::from_row_slice(&r);
                let dev = orthonormality_deviation(&rm);
                if dev > ROTATION_TOL || rm.determinant() < 0.0 {
                    return Err(schema(&gt_file, "cam_R_m2c", format!("image {image_id} gt {i}: not a rotation (deviation {dev:.2e})")));
                }
                let tv = nalgebra::Vector3::from(t);
                let pose = Pose::new(rm, tv).or_else(|_| Pose::from_approx_rotation(rm, tv)).expect("validated rotation");
                gt.push(GtInstance { object_id, pose, mask_path: mask_path(&dir, image_id, i) });
            }
        }
        let masks: Vec<PathBuf> = gt.iter().map(|g| g.mask_path.clone()).collect();
        let (w, h) = image_size(&cam, split_root, &masks, &cam_file)?;
        if km[1] != 0.0 || km[3] != 0.0 || km[6] != 0.0 || km[7] != 0.0 || km[8] != 1.0 {
            return Err(schema(&cam_file, "cam_K", format!("image {image_id}: expected [fx,0,cx,0,fy,cy,0,0,1]")));
        }
        let k = CameraIntrinsics::new(km[0], km[4], km[2], km[5], w, h)
            .map_err(|e| schema(&cam_file, "cam_K", format!("image {image_id}: {e}")))?;
        out.push(SceneAnnotation { scene_id, image_id, k, gt });
    }
    Ok(out)
}

/// Writes `scene_camera.json` and `scene_gt.json`; image sizes are stored
/// per entry as `width`/`height`.
pub fn write_bop_scene(split_root: &Path, scene_id: u32, annotations: &[SceneAnnotation]) -> Result<(), BopError> {
    let dir = scene_dir(split_root, scene_id);
    let mut cams = Map::new();
    let mut gts = Map::new();
    for a in annotations {
        let k = &a.k;
        cams.insert(
            a.image_id.to_string(),
            json!({
                "cam_K": [k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0],
                "depth_scale": 1.0,
                "width": k.width,
                "height": k.height,
            }),
        );
        let list: Vec<Value> = a
            .gt
            .iter()
            .map(|g| {
                json!({
                    "cam_R_m2c": g.pose.rotation_row_major(),
                    "cam_t_m2c": g.pose.translation_array(),
                    "obj_id": g.object_id,
                })
            })
            .collect();
        gts.insert(a.image_id.to_string(), Value::Array(list));
    }
    write_json(&dir.join("scene_camera.json"), &Value::Object(cams))?;
    write_json(&dir.join("scene_gt.json"), &Value::Object(gts))
}

/// Reads `models_info.json`: diameters and symmetry annotations per object.
pub fn load_models_info(path: &Path) -> Result<BTreeMap<u32, ModelInfo>, BopError> {
    let v = read_json(path)?;
    let obj = v.as_object().ok_or_else(|| schema(path, "<root>", "expected an object"))?;
    let mut out = BTreeMap::new();
    for (key, entry) in obj {
        let id: u32 = key.parse().map_err(|_| schema(path, key, "object key is not an integer"))?;
        let diameter = entry
            .get("diameter")
            .and_then(Value::as_f64)
            .filter(|d| *d > 0.0)
            .ok_or_else(|| schema(path, "diameter", format!("object {id}: missing or non-positive")))?;
        let mut symmetries = SymmetrySet::none();
        if let Some(list) = entry.get("symmetries_discrete") {
            let list = list.as_array().ok_or_else(|| schema(path, "symmetries_discrete", "expected a list"))?;
            for m in list {
                let m = numbers::<16>(&json!({ "m": m }), "m", path)
                    .map_err(|_| schema(path, "symmetries_discrete", format!("object {id}: expected 16 numbers")))?;
                let r = nalgebra::Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
                if orthonormality_deviation(&r) > ROTATION_TOL {
                    return Err(schema(path, "symmetries_discrete", format!("object {id}: not a rotation")));
                }
                let t = nalgebra::Vector3::new(m[3], m[7], m[11]);
                symmetries.discrete.push(Pose::new(r, t).or_else(|_| Pose::from_approx_rotation(r, t)).expect("rotation"));
            }
        }
        if let Some(list) = entry.get("symmetries_continuous") {
            symmetries.continuous = serde_json::from_value::<Vec<ContinuousSymmetry>>(list.clone())
                .map_err(|e| schema(path, "symmetries_continuous", format!("object {id}: {e}")))?;
        }
        out.insert(id, ModelInfo { diameter, symmetries });
    }
    Ok(out)
}

pub fn write_models_info(path: &Path, models: &BTreeMap<u32, ModelInfo>) -> Result<(), BopError> {
    let mut obj = Map::new();
    for (id, info) in models {
        let disc: Vec<Value> = info
            .symmetries
            .discrete
            .iter()
            .map(|p| {
                let r = p.rotation_row_major();
                let t = p.translation_array();
                json!([r[0], r[1], r[2], t[0], r[3], r[4], r[5], t[1], r[6], r[7], r[8], t[2], 0.0, 0.0, 0.0, 1.0])
            })
            .collect();
        let mut e = Map::new();
        e.insert("diameter".into(), json!(info.diameter));
        if !disc.is_empty() {
            e.insert("symmetries_discrete".into(), Value::Array(disc));
        }
        if !info.symmetries.continuous.is_empty() {
            e.insert("symmetries_continuous".into(), serde_json::to_value(&info.symmetries.continuous).expect("serializes"));
        }
        obj.insert(id.to_string(), Value::Object(e));
    }
    write_json(path, &Value::Object(obj))
}
