//! Viewpoint sampling on a subdivided icosahedron and a z-buffered software
//! rasterizer that renders per-pixel object coordinates.

mod store;

use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::descriptors::DescriptorError;
use crate::descriptors::TensorError;
use crate::geometry::{look_at_pose, GeometryError};
use crate::mesh::{NocsFrame, NocsValue};
use crate::raster::Raster;
use crate::{CameraIntrinsics, Pose, TriMesh};

pub use store::{
    build_template_store, object_store_dir, MANIFEST_FILE, render_templates, ManifestEntry, TemplateManifest, TemplateRecord,
    TemplateRenderConfig, TemplateStore,
};

/// Near clipping plane in mm.
pub const NEAR_PLANE_MM: f64 = 1.0;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("mesh has no triangles")]
    InvalidMesh,
    #[error("invalid render request: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("image I/O on {path}: {source}")]
    Image { path: String, source: image::ImageError },
    #[error("JSON error in {path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("template store is inconsistent: {0}")]
    Store(String),
}

/// A camera placed on the sampling sphere, looking at the object origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSample {
    pub pose: Pose,
    pub icosa_level: u32,
    /// Ordinal in the sampled list.
    pub index: usize,
    /// Index of the icosphere vertex the camera sits on.
    pub vertex: usize,
}

/// Unit-sphere vertices of the icosahedron subdivided `level` times.
/// Vertex order is deterministic: the 12 base vertices first, then edge
/// midpoints in creation order.
pub fn icosphere_vertices(level: u32) -> Vec<Vector3<f64>> {
    icosphere(level).0
}

/// Vertices and outward-wound faces of the subdivided icosahedron.
pub fn icosphere(level: u32) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vector3::new(v[0], v[1], v[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..level {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

/// Vertex count of the icosphere at `level`: `10·4^level + 2`.
pub fn icosphere_vertex_count(level: u32) -> usize {
    10 * 4usize.pow(level) + 2
}

/// Greedy farthest-point selection by angle on unit vectors, seeded at
/// index 0; ties go to the lowest index. Returns selected indices in
/// selection order.
pub fn farthest_point_order(dirs: &[Vector3<f64>], n: usize) -> Vec<usize> {
    let n = n.min(dirs.len());
    if n == 0 {
        return Vec::new();
    }
    let mut selected = vec![0usize];
    let mut best = vec![f64::INFINITY; dirs.len()];
    let mut last = 0usize;
    while selected.len() < n {
        let mut pick = usize::MAX;
        let mut pick_d = -1.0;
        for (i, d) in dirs.iter().enumerate() {
            let ang = dirs[last].dot(d).clamp(-1.0, 1.0).acos();
            if ang < best[i] {
                best[i] = ang;
            }
            if best[i] > pick_d {
                pick_d = best[i];
                pick = i;
            }
        }
        selected.push(pick);
        last = pick;
    }
    selected
}

/// `n` camera poses on a sphere of `radius` mm, facing the origin.
///
/// Uses the smallest icosphere level with at least `n` vertices and keeps
/// `n` of them by farthest-point selection, so the output for smaller `n`
/// at the same level is a prefix of the output for larger `n`.
pub fn sample_viewpoints(n: usize, radius: f64) -> Result<Vec<ViewSample>, RenderError> {
    if n == 0 || !(radius > 0.0) {
        return Err(RenderError::InvalidArgument(format!("need n >= 1 and radius > 0 (n={n}, radius={radius})")));
    }
    let level = (0..).find(|&l| icosphere_vertex_count(l) >= n).expect("level exists");
    let dirs = icosphere_vertices(level);
    farthest_point_order(&dirs, n)
        .into_iter()
        .enumerate()
        .map(|(index, vertex)| {
            let pose = look_at_pose(&(dirs[vertex] * radius), &Vector3::zeros(), &Vector3::z())?;
            Ok(ViewSample { pose, icosa_level: level, index, vertex })
        })
        .collect()
}

/// Smallest angle (radians) between any two camera viewing directions.
pub fn min_angular_separation(poses: &[Pose]) -> f64 {
    let dirs: Vec<Vector3<f64>> = poses.iter().map(|p| p.camera_center().normalize()).collect();
    let mut best = f64::INFINITY;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            best = best.min(dirs[i].dot(&dirs[j]).clamp(-1.0, 1.0).acos());
        }
    }
    best
}

/// Per-pixel object coordinates, depth and coverage of one render.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// `None` marks background.
    pub coord_map: Raster<Option<NocsValue>>,
    /// Camera-frame depth in mm, 0 for background.
    pub depth: Raster<f64>,
    pub mask: Raster<bool>,
    /// Encoding frame used for `coord_map`.
    pub frame: NocsFrame,
}

impl RenderOutput {
    pub fn foreground_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m).count()
    }

    /// True when no pixel is covered.
    pub fn is_empty(&self) -> bool {
        self.foreground_count() == 0
    }

    /// Decoded object point at pixel `(u, v)`.
    pub fn object_point(&self, u: usize, v: usize) -> Option<Vector3<f64>> {
        self.coord_map.get(u, v).as_ref().map(|c| self.frame.decode(c))
    }
}

#[derive(Clone, Copy)]
struct ClipVertex {
    cam: Vector3<f64>,
    obj: Vector3<f64>,
}

/// Sutherland–Hodgman clip of a polygon against `z >= NEAR_PLANE_MM`.
fn clip_near(poly: &[ClipVertex]) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ina, inb) = (a.cam.z >= NEAR_PLANE_MM, b.cam.z >= NEAR_PLANE_MM);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (NEAR_PLANE_MM - a.cam.z) / (b.cam.z - a.cam.z);
            out.push(ClipVertex { cam: a.cam + (b.cam - a.cam) * t, obj: a.obj + (b.obj - a.obj) * t });
        }
    }
    out
}

struct Target<'a> {
    k: &'a CameraIntrinsics,
    frame: NocsFrame,
    zbuf: Raster<f64>,
    coords: Raster<Option<NocsValue>>,
}

impl Target<'_> {
    fn draw(&mut self, tri: [ClipVertex; 3]) {
        let p: [Vector2<f64>; 3] = tri.map(|v| self.k.project(&v.cam));
        let area = (p[1] - p[0]).perp(&(p[2] - p[0]));
        if area.abs() < 1e-12 || !area.is_finite() {
            return;
        }
        let (w, h) = (self.zbuf.width() as f64, self.zbuf.height() as f64);
        let xmin = p.iter().map(|q| q.x).fold(f64::INFINITY, f64::min);
        let xmax = p.iter().map(|q| q.x).fold(f64::NEG_INFINITY, f64::max);
        let ymin = p.iter().map(|q| q.y).fold(f64::INFINITY, f64::min);
        let ymax = p.iter().map(|q| q.y).fold(f64::NEG_INFINITY, f64::max);
        if xmax < 0.0 || ymax < 0.0 || xmin >= w || ymin >= h {
            return;
        }
        let u0 = (xmin - 0.5).ceil().max(0.0) as usize;
        let u1 = ((xmax - 0.5).floor().min(w - 1.0)).max(-1.0);
        let v0 = (ymin - 0.5).ceil().max(0.0) as usize;
        let v1 = ((ymax - 0.5).floor().min(h - 1.0)).max(-1.0);
        if u1 < 0.0 || v1 < 0.0 {
            return;
        }
        let inv_z = tri.map(|v| 1.0 / v.cam.z);
        for v in v0..=v1 as usize {
            for u in u0..=u1 as usize {
                let s = Vector2::new(u as f64 + 0.5, v as f64 + 0.5);
                let l0 = (p[2] - p[1]).perp(&(s - p[1])) / area;
                let l1 = (p[0] - p[2]).perp(&(s - p[2])) / area;
                let l2 = 1.0 - l0 - l1;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let iz = l0 * inv_z[0] + l1 * inv_z[1] + l2 * inv_z[2];
                let depth = 1.0 / iz;
                let zb = self.zbuf.get_mut(u, v);
                if depth >= *zb {
                    continue;
                }
                *zb = depth;
                let m = [l0 * inv_z[0] / iz, l1 * inv_z[1] / iz, l2 * inv_z[2] / iz];
                let obj = tri[0].obj * m[0] + tri[1].obj * m[1] + tri[2].obj * m[2];
                *self.coords.get_mut(u, v) = Some(self.frame.encode_clamped(&obj));
            }
        }
    }
}

/// Z-buffered, perspective-correct render of object coordinates. Triangles
/// are drawn regardless of facing. An empty result is not an error; check
/// [`RenderOutput::is_empty`].
pub fn rasterize_coordinate_map(mesh: &TriMesh, pose: &Pose, k: &CameraIntrinsics) -> RenderOutput {
    let (w, h) = (k.width as usize, k.height as usize);
    let frame = mesh.nocs_frame();
    let cam: Vec<Vector3<f64>> = mesh.vertices().iter().map(|v| pose.transform_point(v)).collect();
    let mut target = Target {
        k,
        frame,
        zbuf: Raster::filled(w, h, f64::INFINITY),
        coords: Raster::filled(w, h, None),
    };
    for tri in mesh.triangles() {
        let cv = tri.map(|i| ClipVertex { cam: cam[i as usize], obj: mesh.vertices()[i as usize] });
        if cv.iter().all(|v| v.cam.z >= NEAR_PLANE_MM) {
            target.draw(cv);
            continue;
        }
        let poly = clip_near(&cv);
        for i in 1..poly.len().saturating_sub(1) {
            target.draw([poly[0], poly[i], poly[i + 1]]);
        }
    }
    let Target { zbuf, coords, .. } = target;
    let mask = coords.map(|c| c.is_some());
    let depth = zbuf.map(|&z| if z.is_finite() { z } else { 0.0 });
    RenderOutput { coord_map: coords, depth, mask, frame }
}
