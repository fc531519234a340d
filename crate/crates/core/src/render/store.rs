//! On-disk template store: one directory per object holding a manifest and
//! per-view coordinate maps, depth, masks and metadata.
//!
//! ```text
//! store/obj_<id>/manifest.json
//! store/obj_<id>/view_<k>.coord.zst6   uint16, dim 3 (NOCS quantized to 16 bit)
//! store/obj_<id>/view_<k>.depth.zst6   float32, dim 1 (mm)
//! store/obj_<id>/view_<k>.mask.png     8-bit, 0/255
//! store/obj_<id>/view_<k>.meta.json    pose, K, crop transform, level, flags
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{rasterize_coordinate_map, RenderError, RenderOutput, ViewSample};
use crate::descriptors::{CropTransform, Tensor, TensorData, DEFAULT_OUT_SIZE};
use crate::mesh::{NocsFrame, NocsValue};
use crate::raster::{read_mask_png, write_mask_png, PixelBox, Raster};
use crate::{CameraIntrinsics, Pose, TriMesh};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateRenderConfig {
    /// Intrinsics of the full-frame render used to locate the object.
    pub intrinsics: CameraIntrinsics,
    pub crop_pad: f64,
    pub out_size: usize,
}

impl TemplateRenderConfig {
    /// 640×480 camera with a 572 px focal length, 224 px crops, pad 1.2.
    pub fn default_for_object() -> Self {
        Self {
            intrinsics: CameraIntrinsics::new(572.0, 572.0, 320.0, 240.0, 640, 480).expect("valid intrinsics"),
            crop_pad: 1.2,
            out_size: DEFAULT_OUT_SIZE,
        }
    }
}

/// One rendered template in crop space.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateRecord {
    pub index: usize,
    pub icosa_level: u32,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    /// Crop pixels ↔ full-frame render pixels.
    pub crop: CropTransform,
    /// Quantized NOCS per crop pixel; `None` is background.
    pub coord_map: Raster<Option<[u16; 3]>>,
    pub depth: Raster<f32>,
    pub empty_render: bool,
}

impl TemplateRecord {
    pub fn mask(&self) -> Raster<bool> {
        self.coord_map.map(|c| c.is_some())
    }

    /// Crop-space render with dequantized coordinates.
    pub fn render_output(&self, frame: NocsFrame) -> RenderOutput {
        RenderOutput {
            coord_map: self.coord_map.map(|c| c.map(NocsValue::from_quantized)),
            depth: self.depth.map(|&d| d as f64),
            mask: self.mask(),
            frame,
        }
    }

    /// Intrinsics of the crop-space image.
    pub fn crop_intrinsics(&self) -> CameraIntrinsics {
        self.crop.crop_intrinsics(&self.intrinsics, self.coord_map.width())
    }
}

/// Renders one template per view: a full-frame pass locates the object,
/// then the crop is rendered directly through the crop intrinsics.
pub fn render_templates(
    mesh: &TriMesh,
    views: &[ViewSample],
    cfg: &TemplateRenderConfig,
) -> Result<Vec<TemplateRecord>, RenderError> {
    if mesh.triangles().is_empty() {
        return Err(RenderError::InvalidMesh);
    }
    views
        .par_iter()
        .map(|view| {
            let full = rasterize_coordinate_map(mesh, &view.pose, &cfg.intrinsics);
            let n = cfg.out_size;
            let (crop, crop_render) = match PixelBox::from_mask(&full.mask) {
                None => (CropTransform::IDENTITY, None),
                Some(bbox) => {
                    let crop = CropTransform::from_bbox(&bbox, cfg.crop_pad, n)?;
                    let kc = crop.crop_intrinsics(&cfg.intrinsics, n);
                    (crop, Some(rasterize_coordinate_map(mesh, &view.pose, &kc)))
                }
            };
            let (coord_map, depth) = match &crop_render {
                Some(r) => (r.coord_map.map(|c| c.map(|v| v.quantize())), r.depth.map(|&d| d as f32)),
                None => (Raster::filled(n, n, None), Raster::filled(n, n, 0.0)),
            };
            let empty_render = coord_map.data().iter().all(|c| c.is_none());
            Ok(TemplateRecord {
                index: view.index,
                icosa_level: view.icosa_level,
                pose: view.pose,
                intrinsics: cfg.intrinsics,
                crop,
                coord_map,
                depth,
                empty_render,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseJson {
    /// Row-major rotation.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl PoseJson {
    pub fn from_pose(p: &Pose) -> Self {
        Self { r: p.rotation_row_major(), t: p.translation_array() }
    }

    pub fn to_pose(&self) -> Result<Pose, RenderError> {
        Ok(Pose::from_row_major(&self.r, &self.t)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMeta {
    pub pose: PoseJson,
    #[serde(rename = "K")]
    pub k: CameraIntrinsics,
    pub crop: CropTransform,
    pub icosa_level: u32,
    pub flags: ViewFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ViewFlags {
    pub empty_render: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub icosa_level: u32,
    pub pose: PoseJson,
    pub crop: CropTransform,
    pub empty_render: bool,
    pub coord: String,
    pub depth: String,
    pub mask: String,
    pub meta: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateManifest {
    pub object_id: u32,
    pub frame: NocsFrame,
    pub diameter: f64,
    pub diameter_approximate: bool,
    pub render: TemplateRenderConfig,
    pub views: Vec<ManifestEntry>,
}

impl TemplateManifest {
    /// SHA-256 of the canonical manifest JSON.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        let hash = Sha256::digest(&bytes);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `store_root/obj_<id:06>`.
pub fn object_store_dir(store_root: &Path, object_id: u32) -> PathBuf {
    store_root.join(format!("obj_{object_id:06}"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RenderError + '_ {
    move |source| RenderError::Io { path: path.display().to_string(), source }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), RenderError> {
    let bytes = serde_json::to_vec_pretty(value)
        .map_err(|source| RenderError::Json { path: path.display().to_string(), source })?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RenderError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| RenderError::Json { path: path.display().to_string(), source })
}

fn coord_tensor(map: &Raster<Option<[u16; 3]>>) -> Tensor {
    let data = map.data().iter().flat_map(|c| c.unwrap_or([0; 3])).collect();
    Tensor::new(map.height() as u32, map.width() as u32, 3, TensorData::U16(data)).expect("coord map shape")
}

fn depth_tensor(depth: &Raster<f32>) -> Tensor {
    Tensor::new(depth.height() as u32, depth.width() as u32, 1, TensorData::F32(depth.data().to_vec()))
        .expect("depth shape")
}

/// Renders all views and writes the store layout into `out_dir`.
pub fn build_template_store(
    mesh: &TriMesh,
    views: &[ViewSample],
    cfg: &TemplateRenderConfig,
    object_id: u32,
    out_dir: &Path,
) -> Result<TemplateManifest, RenderError> {
    let records = render_templates(mesh, views, cfg)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let entries = records
        .par_iter()
        .map(|rec| {
            let stem = format!("view_{:04}", rec.index);
            let names = [
                format!("{stem}.coord.zst6"),
                format!("{stem}.depth.zst6"),
                format!("{stem}.mask.png"),
                format!("{stem}.meta.json"),
            ];
            coord_tensor(&rec.coord_map).write(out_dir.join(&names[0]))?;
            depth_tensor(&rec.depth).write(out_dir.join(&names[1]))?;
            let mask_path = out_dir.join(&names[2]);
            write_mask_png(&rec.mask(), &mask_path)
                .map_err(|source| RenderError::Image { path: mask_path.display().to_string(), source })?;
            let meta = ViewMeta {
                pose: PoseJson::from_pose(&rec.pose),
                k: rec.intrinsics,
                crop: rec.crop,
                icosa_level: rec.icosa_level,
                flags: ViewFlags { empty_render: rec.empty_render },
            };
            write_json(&meta, &out_dir.join(&names[3]))?;
            let [coord, depth, mask, meta] = names;
            Ok(ManifestEntry {
                index: rec.index,
                icosa_level: rec.icosa_level,
                pose: PoseJson::from_pose(&rec.pose),
                crop: rec.crop,
                empty_render: rec.empty_render,
                coord,
                depth,
                mask,
                meta,
            })
        })
        .collect::<Result<Vec<_>, RenderError>>()?;
    let manifest = TemplateManifest {
        object_id,
        frame: mesh.nocs_frame(),
        diameter: mesh.diameter(),
        diameter_approximate: mesh.diameter_is_approximate(),
        render: *cfg,
        views: entries,
    };
    write_json(&manifest, &out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Templates of one object held in memory. Read-only once built.
#[derive(Debug, Clone)]
pub struct TemplateStore {
    pub object_id: u32,
    pub frame: NocsFrame,
    pub diameter: f64,
    pub records: Vec<TemplateRecord>,
}

impl TemplateStore {
    pub fn from_records(object_id: u32, mesh: &TriMesh, records: Vec<TemplateRecord>) -> Self {
        Self { object_id, frame: mesh.nocs_frame(), diameter: mesh.diameter(), records }
    }

    pub fn load(dir: &Path) -> Result<Self, RenderError> {
        let manifest: TemplateManifest = read_json(&dir.join(MANIFEST_FILE))?;
        let records = manifest
            .views
            .par_iter()
            .map(|e| {
                let coord = Tensor::read(dir.join(&e.coord))?;
                let mask_path = dir.join(&e.mask);
                let mask = read_mask_png(&mask_path)
                    .map_err(|source| RenderError::Image { path: mask_path.display().to_string(), source })?;
                let (w, h) = (coord.cols as usize, coord.rows as usize);
                let TensorData::U16(c) = coord.data else {
                    return Err(RenderError::Store(format!("{}: coordinate map must be uint16", e.coord)));
                };
                if coord.dim != 3 || mask.width() != w || mask.height() != h {
                    return Err(RenderError::Store(format!("{}: shape mismatch with mask", e.coord)));
                }
                let coord_map = Raster::from_vec(
                    w,
                    h,
                    c.chunks_exact(3).zip(mask.data()).map(|(q, &m)| m.then(|| [q[0], q[1], q[2]])).collect(),
                );
                let depth = Tensor::read(dir.join(&e.depth))?;
                let TensorData::F32(d) = depth.data else {
                    return Err(RenderError::Store(format!("{}: depth must be float32", e.depth)));
                };
                if depth.rows as usize != h || depth.cols as usize != w {
                    return Err(RenderError::Store(format!("{}: depth shape mismatch", e.depth)));
                }
                Ok(TemplateRecord {
                    index: e.index,
                    icosa_level: e.icosa_level,
                    pose: e.pose.to_pose()?,
                    intrinsics: manifest.render.intrinsics,
                    crop: e.crop,
                    coord_map,
                    depth: Raster::from_vec(w, h, d),
                    empty_render: e.empty_render,
                })
            })
            .collect::<Result<Vec<_>, RenderError>>()?;
        Ok(Self { object_id: manifest.object_id, frame: manifest.frame, diameter: manifest.diameter, records })
    }
}
