//! Procedural test objects and a small synthetic dataset in BOP layout.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bop_eval::{mask_path, model_path, scene_dir, write_bop_scene, write_models_info, GtInstance, ModelInfo, SceneAnnotation, SymmetrySet};
use crate::geometry::random_rotation;
use crate::mesh::{save_mesh, PlyFormat};
use crate::pipeline::{coord_map_to_tensor, coord_path, PipelineError};
use crate::raster::{write_mask_png, Raster};
use crate::render::{icosphere, rasterize_coordinate_map, RenderOutput};
use crate::{CameraIntrinsics, Pose, TriMesh};

/// Axis-aligned box centered at the origin with outward-facing triangles.
pub fn box_mesh(size: [f64; 3]) -> TriMesh {
    let h = Vector3::new(size[0], size[1], size[2]) / 2.0;
    let vertices = (0..8)
        .map(|i| {
            Vector3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            )
        })
        .collect();
    let triangles = vec![
        [0, 2, 3], [0, 3, 1], // -z
        [4, 5, 7], [4, 7, 6], // +z
        [0, 1, 5], [0, 5, 4], // -y
        [2, 6, 7], [2, 7, 3], // +y
        [0, 4, 6], [0, 6, 2], // -x
        [1, 3, 7], [1, 7, 5], // +x
    ];
    TriMesh::new(vertices, triangles).expect("box mesh")
}

/// Ellipsoid with radii around 60×45×35 mm and seeded low-frequency bumps
/// that break its symmetries.
pub fn bumpy_ellipsoid(level: u32, seed: u64) -> TriMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radii = Vector3::new(60.0, 45.0, 35.0);
    let bumps: Vec<(Vector3<f64>, f64, f64)> = (0..6)
        .map(|_| {
            let d = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                .normalize();
            (d, rng.random_range(0.06..0.14), rng.random_range(2.0..5.0))
        })
        .collect();
    let (dirs, faces) = icosphere(level);
    let vertices = dirs
        .iter()
        .map(|d| {
            let s: f64 = bumps.iter().map(|(c, amp, sharp)| amp * (sharp * (d.dot(c) - 1.0)).exp()).sum();
            radii.component_mul(d) * (1.0 + s)
        })
        .collect();
    TriMesh::new(vertices, to_u32(&faces)).expect("ellipsoid mesh")
}

/// Two overlapping boxes forming an L, about 120 mm across; non-convex so
/// it self-occludes.
pub fn l_bracket() -> TriMesh {
    let a = box_mesh([120.0, 30.0, 40.0]);
    let b = box_mesh([30.0, 90.0, 40.0]);
    let shift_a = Vector3::new(0.0, -30.0, 0.0);
    let shift_b = Vector3::new(-45.0, 15.0, 0.0);
    let mut vertices: Vec<Vector3<f64>> = a.vertices().iter().map(|v| v + shift_a).collect();
    vertices.extend(b.vertices().iter().map(|v| v + shift_b));
    let mut triangles = a.triangles().to_vec();
    triangles.extend(b.triangles().iter().map(|t| t.map(|i| i + 8)));
    TriMesh::new(vertices, triangles).expect("bracket mesh")
}

/// Objects of the synthetic dataset: an asymmetric blob and an L bracket.
pub fn dataset_objects() -> Vec<(u32, TriMesh)> {
    vec![(1, bumpy_ellipsoid(3, 11)), (2, l_bracket())]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub images: u32,
    pub seed: u64,
    pub scene_id: u32,
    pub split: &'static str,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self { images: 25, seed: 0, scene_id: 1, split: "test" }
    }
}

/// Lowest visible fraction accepted for an instance.
const MIN_VISIBLE_FRACTION: f64 = 0.8;

fn visible(own: &RenderOutput, others: &[&RenderOutput]) -> Raster<bool> {
    let mut m = own.mask.clone();
    for (i, px) in m.data_mut().iter_mut().enumerate() {
        if !*px {
            continue;
        }
        let z = own.depth.data()[i];
        *px = others.iter().all(|o| !o.mask.data()[i] || o.depth.data()[i] > z);
    }
    m
}

/// Writes models, `models_info.json`, `camera.json`, one scene of images
/// with each object placed once per image, visible masks and per-instance
/// object-coordinate maps. Returns the number of instances.
pub fn write_synthetic_dataset(root: &Path, spec: &SyntheticDatasetSpec) -> Result<usize, PipelineError> {
    let k = CameraIntrinsics::new(572.0, 572.0, 320.0, 240.0, 640, 480).expect("intrinsics");
    let objects = dataset_objects();
    std::fs::create_dir_all(root.join("models")).map_err(|source| PipelineError::Io { path: root.display().to_string(), source })?;
    let mut info = BTreeMap::new();
    for (id, mesh) in &objects {
        save_mesh(mesh, model_path(root, *id), PlyFormat::BinaryLittleEndian)?;
        info.insert(*id, ModelInfo { diameter: mesh.diameter(), symmetries: SymmetrySet::none() });
    }
    write_models_info(&root.join("models").join("models_info.json"), &info)?;
    let camera = serde_json::json!({"cx": k.cx, "cy": k.cy, "fx": k.fx, "fy": k.fy, "width": k.width, "height": k.height, "depth_scale": 1.0});
    let cam_path = root.join("camera.json");
    std::fs::write(&cam_path, serde_json::to_vec_pretty(&camera).expect("json"))
        .map_err(|source| PipelineError::Io { path: cam_path.display().to_string(), source })?;

    let split_root = root.join(spec.split);
    let dir = scene_dir(&split_root, spec.scene_id);
    for sub in ["mask_visib", "coord"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|source| PipelineError::Io { path: p.display().to_string(), source })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut annotations = Vec::new();
    let mut instances = 0;
    for image_id in 0..spec.images {
        let (poses, renders, masks) = loop {
            let poses: Vec<Pose> = objects
                .iter()
                .enumerate()
                .map(|(slot, _)| {
                    let u = if slot == 0 { rng.random_range(150.0..250.0) } else { rng.random_range(390.0..490.0) };
                    let px = Vector2::new(u, rng.random_range(170.0..310.0));
                    let z = rng.random_range(550.0..850.0);
                    let ray = k.normalize(&px);
                    Pose::new(random_rotation(&mut rng), Vector3::new(ray.x * z, ray.y * z, z)).expect("rotation")
                })
                .collect();
            let renders: Vec<RenderOutput> =
                objects.iter().zip(&poses).map(|((_, m), p)| rasterize_coordinate_map(m, p, &k)).collect();
            let masks: Vec<Raster<bool>> = (0..renders.len())
                .map(|i| {
                    let others: Vec<&RenderOutput> = renders.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r).collect();
                    visible(&renders[i], &others)
                })
                .collect();
            let ok = renders.iter().zip(&masks).all(|(r, m)| {
                let full = r.foreground_count();
                full > 0 && m.data().iter().filter(|&&x| x).count() as f64 >= MIN_VISIBLE_FRACTION * full as f64
            });
            if ok {
                break (poses, renders, masks);
            }
        };
        let mut gt = Vec::new();
        for (i, ((id, _), pose)) in objects.iter().zip(&poses).enumerate() {
            let mp = mask_path(&dir, image_id, i);
            write_mask_png(&masks[i], &mp).map_err(|e| PipelineError::Data(format!("{}: {e}", mp.display())))?;
            let coord = Raster::from_vec(
                k.width as usize,
                k.height as usize,
                renders[i].coord_map.data().iter().zip(masks[i].data()).map(|(c, &m)| if m { *c } else { None }).collect(),
            );
            coord_map_to_tensor(&coord).write(coord_path(&dir, image_id, i)).map_err(crate::descriptors::DescriptorError::from)?;
            gt.push(GtInstance { object_id: *id, pose: *pose, mask_path: mp });
            instances += 1;
        }
        annotations.push(SceneAnnotation { scene_id: spec.scene_id, image_id, k, gt });
    }
    write_bop_scene(&split_root, spec.scene_id, &annotations)?;
    Ok(instances)
}

fn to_u32(faces: &[[usize; 3]]) -> Vec<[u32; 3]> {
    faces.iter().map(|f| f.map(|i| i as u32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signed_volume(m: &TriMesh) -> f64 {
        let v = m.vertices();
        m.triangles()
            .iter()
            .map(|t| v[t[0] as usize].dot(&v[t[1] as usize].cross(&v[t[2] as usize])) / 6.0)
            .sum()
    }

    #[test]
    fn box_is_outward_and_closed() {
        let m = box_mesh([10.0, 20.0, 30.0]);
        assert!((signed_volume(&m) - 6000.0).abs() < 1e-9);
        assert!((m.diameter() - (100f64 + 400.0 + 900.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ellipsoid_is_seeded_and_outward() {
        let a = bumpy_ellipsoid(2, 5);
        let b = bumpy_ellipsoid(2, 5);
        let c = bumpy_ellipsoid(2, 6);
        assert_eq!(a.vertices(), b.vertices());
        assert_ne!(a.vertices(), c.vertices());
        assert!(signed_volume(&a) > 0.0);
        assert!(a.diameter() > 100.0 && a.diameter() < 160.0);
    }

    #[test]
    fn synthetic_dataset_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticDatasetSpec { images: 3, ..Default::default() };
        assert_eq!(write_synthetic_dataset(dir.path(), &spec).unwrap(), 6);
        let scenes = crate::bop_eval::load_bop_scene(&dir.path().join("test"), 1).unwrap();
        assert_eq!(scenes.len(), 3);
        assert!(scenes.iter().all(|s| s.gt.len() == 2 && s.gt.iter().all(|g| g.mask_path.exists())));
        let info = crate::bop_eval::load_models_info(&dir.path().join("models/models_info.json")).unwrap();
        assert_eq!(info.len(), 2);
    }
}
