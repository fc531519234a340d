//! Triangle meshes and the normalized object coordinate (NOCS) encoding.
//!
//! Object coordinates are encoded per axis relative to the mesh's
//! axis-aligned bounding box, so every surface point maps into `[0, 1]³`.

mod ply;

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::RealScalar;

pub use ply::{encode_ply, parse_ply, PlyData, PlyFormat};

/// Vertex count above which the diameter is computed on a subsample.
pub const EXACT_DIAMETER_MAX_VERTICES: usize = 20_000;

/// Slack allowed outside the bounding box when encoding, in mm.
pub const NOCS_BBOX_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("PLY parse error: {0}")]
    Parse(String),
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
    #[error("triangle {triangle} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { triangle: usize, index: u32, count: usize },
    #[error("mesh has no vertices")]
    Empty,
    #[error("point {point:?} lies outside the object bounding box")]
    OutOfBounds { point: [f64; 3] },
    #[error("NOCS component outside [0, 1]: {0:?}")]
    InvalidNocs([f64; 3]),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Indexed triangle mesh in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh<T: RealScalar> {
    vertices: Vec<Vector3<T>>,
    triangles: Vec<[u32; 3]>,
    bbox_min: Vector3<T>,
    bbox_max: Vector3<T>,
    diameter: T,
    diameter_approximate: bool,
}

impl<T: RealScalar> TriMesh<T> {
    pub fn new(vertices: Vec<Vector3<T>>, triangles: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        if vertices.is_empty() {
            return Err(MeshError::Empty);
        }
        for (ti, tri) in triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i as usize >= vertices.len()) {
                return Err(MeshError::IndexOutOfRange { triangle: ti, index, count: vertices.len() });
            }
        }
        let mut bbox_min = vertices[0];
        let mut bbox_max = vertices[0];
        for v in &vertices {
            bbox_min = bbox_min.inf(v);
            bbox_max = bbox_max.sup(v);
        }
        let (diameter, diameter_approximate) = diameter(&vertices);
        Ok(Self { vertices, triangles, bbox_min, bbox_max, diameter, diameter_approximate })
    }

    pub fn vertices(&self) -> &[Vector3<T>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn bbox_min(&self) -> &Vector3<T> {
        &self.bbox_min
    }

    pub fn bbox_max(&self) -> &Vector3<T> {
        &self.bbox_max
    }

    pub fn diameter(&self) -> T {
        self.diameter
    }

    /// True when the diameter was computed on a vertex subsample.
    pub fn diameter_is_approximate(&self) -> bool {
        self.diameter_approximate
    }

    pub fn nocs_frame(&self) -> NocsFrame {
        NocsFrame {
            bbox_min: self.bbox_min.map(|v| v.as_f64()).into(),
            bbox_max: self.bbox_max.map(|v| v.as_f64()).into(),
        }
    }

    /// At most `max` vertices chosen with a fixed stride (first vertex kept).
    pub fn subsampled_vertices(&self, max: usize) -> Vec<Vector3<T>> {
        stride_subsample(&self.vertices, max)
    }

    pub fn to_f64_arrays(&self) -> Vec<[f64; 3]> {
        self.vertices.iter().map(|v| [v.x.as_f64(), v.y.as_f64(), v.z.as_f64()]).collect()
    }
}

pub(crate) fn stride_subsample<V: Clone>(items: &[V], max: usize) -> Vec<V> {
    if items.len() <= max || max == 0 {
        return items.to_vec();
    }
    let stride = items.len().div_ceil(max);
    items.iter().step_by(stride).cloned().collect()
}

/// Maximum pairwise vertex distance; exact below
/// [`EXACT_DIAMETER_MAX_VERTICES`], otherwise over a stride subsample.
fn diameter<T: RealScalar>(vertices: &[Vector3<T>]) -> (T, bool) {
    let approximate = vertices.len() > EXACT_DIAMETER_MAX_VERTICES;
    let pts: Vec<Vector3<f64>> = stride_subsample(vertices, EXACT_DIAMETER_MAX_VERTICES)
        .iter()
        .map(|v| v.map(|c| c.as_f64()))
        .collect();
    let max_sq = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let a = pts[i];
            pts[i + 1..].iter().map(|b| (a - b).norm_squared()).fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    (T::lit(max_sq.sqrt()), approximate)
}

/// Loads an ASCII or binary little-endian PLY mesh; polygons are fan
/// triangulated, vertex order is preserved.
pub fn load_mesh<T: RealScalar>(path: impl AsRef<Path>) -> Result<TriMesh<T>, MeshError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|source| MeshError::Io { path: path.display().to_string(), source })?;
    mesh_from_ply_bytes(&bytes)
}

pub fn mesh_from_ply_bytes<T: RealScalar>(bytes: &[u8]) -> Result<TriMesh<T>, MeshError> {
    let data = parse_ply(bytes)?;
    let vertices = data.vertices.iter().map(|v| Vector3::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2]))).collect();
    let mut triangles = Vec::with_capacity(data.faces.len());
    for f in &data.faces {
        for k in 1..f.len().saturating_sub(1) {
            triangles.push([f[0], f[k], f[k + 1]]);
        }
    }
    TriMesh::new(vertices, triangles)
}

pub fn save_mesh<T: RealScalar>(
    mesh: &TriMesh<T>,
    path: impl AsRef<Path>,
    format: PlyFormat,
) -> Result<(), MeshError> {
    let path = path.as_ref();
    let bytes = encode_ply(&mesh.to_f64_arrays(), mesh.triangles(), format);
    std::fs::write(path, bytes).map_err(|source| MeshError::Io { path: path.display().to_string(), source })
}

/// Normalized object coordinate of a surface point, each channel in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NocsValue {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl NocsValue {
    pub fn new(r: f64, g: f64, b: f64) -> Result<Self, MeshError> {
        let c = [r, g, b];
        if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(MeshError::InvalidNocs(c));
        }
        Ok(Self { r, g, b })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    /// 16-bit storage quantization.
    pub fn quantize(&self) -> [u16; 3] {
        self.as_array().map(|c| (c * 65535.0).round().clamp(0.0, 65535.0) as u16)
    }

    pub fn from_quantized(q: [u16; 3]) -> Self {
        Self { r: q[0] as f64 / 65535.0, g: q[1] as f64 / 65535.0, b: q[2] as f64 / 65535.0 }
    }
}

/// Bounding box that defines the NOCS encoding of one object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NocsFrame {
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
}

impl NocsFrame {
    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.bbox_max[i] - self.bbox_min[i])
    }

    /// Encodes without bounds checking, clamping into `[0, 1]`.
    pub fn encode_clamped(&self, p: &Vector3<f64>) -> NocsValue {
        let e = self.extent();
        let c = [0, 1, 2].map(|i| if e[i] > 0.0 { ((p[i] - self.bbox_min[i]) / e[i]).clamp(0.0, 1.0) } else { 0.5 });
        NocsValue { r: c[0], g: c[1], b: c[2] }
    }

    pub fn encode(&self, p: &Vector3<f64>) -> Result<NocsValue, MeshError> {
        let outside = (0..3).any(|i| {
            p[i] < self.bbox_min[i] - NOCS_BBOX_TOL || p[i] > self.bbox_max[i] + NOCS_BBOX_TOL || !p[i].is_finite()
        });
        if outside {
            return Err(MeshError::OutOfBounds { point: [p.x, p.y, p.z] });
        }
        Ok(self.encode_clamped(p))
    }

    pub fn decode(&self, c: &NocsValue) -> Vector3<f64> {
        let e = self.extent();
        let v = c.as_array();
        Vector3::from_fn(|i, _| if e[i] > 0.0 { self.bbox_min[i] + v[i] * e[i] } else { self.bbox_min[i] })
    }
}

/// `(p − bbox_min) / (bbox_max − bbox_min)` per axis; degenerate axes map
/// to 0.5.
pub fn nocs_encode<T: RealScalar>(point: &Vector3<T>, mesh: &TriMesh<T>) -> Result<NocsValue, MeshError> {
    mesh.nocs_frame().encode(&point.map(|v| v.as_f64()))
}

/// Exact inverse of [`nocs_encode`].
pub fn nocs_decode<T: RealScalar>(c: &NocsValue, mesh: &TriMesh<T>) -> Result<Vector3<T>, MeshError> {
    let c = NocsValue::new(c.r, c.g, c.b)?;
    Ok(mesh.nocs_frame().decode(&c).map(T::lit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn cube_ply(format: PlyFormat) -> Vec<u8> {
        let v: Vec<[f64; 3]> = (0..8).map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]).collect();
        let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
        let tris: Vec<[u32; 3]> = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
        encode_ply(&v, &tris, format)
    }

    #[test]
    fn unit_cube() {
        let m: TriMesh<f64> = mesh_from_ply_bytes(&cube_ply(PlyFormat::Ascii)).unwrap();
        assert_eq!(m.vertices().len(), 8);
        assert_eq!(m.triangles().len(), 12);
        assert!((m.diameter() - 3f64.sqrt()).abs() < 1e-12);
        assert!(!m.diameter_is_approximate());
    }

    #[test]
    fn ascii_and_binary_agree() {
        let a: TriMesh<f64> = mesh_from_ply_bytes(&cube_ply(PlyFormat::Ascii)).unwrap();
        let b: TriMesh<f64> = mesh_from_ply_bytes(&cube_ply(PlyFormat::BinaryLittleEndian)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quad_faces_are_triangulated() {
        let src = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let m: TriMesh<f32> = mesh_from_ply_bytes(src.as_bytes()).unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn truncated_ascii_names_element() {
        let bytes = cube_ply(PlyFormat::Ascii);
        let text = String::from_utf8(bytes).unwrap();
        let cut: String = text.lines().take(14).collect::<Vec<_>>().join("\n");
        match mesh_from_ply_bytes::<f64>(cut.as_bytes()) {
            Err(MeshError::Parse(m)) => assert!(m.contains("'vertex'"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_index_rejected() {
        let r = TriMesh::new(vec![Vector3::new(0.0f64, 0.0, 0.0)], vec![[0, 0, 3]]);
        assert!(matches!(r, Err(MeshError::IndexOutOfRange { index: 3, .. })));
    }

    #[test]
    fn nocs_corners_and_center() {
        let m: TriMesh<f64> = mesh_from_ply_bytes(&cube_ply(PlyFormat::Ascii)).unwrap();
        assert_eq!(nocs_encode(&Vector3::zeros(), &m).unwrap().as_array(), [0.0; 3]);
        assert_eq!(nocs_encode(&Vector3::new(1.0, 1.0, 1.0), &m).unwrap().as_array(), [1.0; 3]);
        assert_eq!(nocs_encode(&Vector3::new(0.5, 0.5, 0.5), &m).unwrap().as_array(), [0.5; 3]);
        assert!(matches!(nocs_encode(&Vector3::new(1.1, 0.5, 0.5), &m), Err(MeshError::OutOfBounds { .. })));
    }

    #[test]
    fn degenerate_axis_maps_to_half() {
        let m = TriMesh::new(vec![Vector3::new(0.0f64, 0.0, 5.0), Vector3::new(2.0, 1.0, 5.0)], vec![]).unwrap();
        let c = nocs_encode(&Vector3::new(1.0, 0.5, 5.0), &m).unwrap();
        assert_eq!(c.as_array(), [0.5, 0.5, 0.5]);
        assert_eq!(nocs_decode(&c, &m).unwrap(), Vector3::new(1.0, 0.5, 5.0));
    }

    #[test]
    fn quantized_roundtrip_within_one_quantum() {
        let verts = vec![Vector3::new(-40.0f64, -25.0, -10.0), Vector3::new(60.0, 35.0, 90.0)];
        let m = TriMesh::new(verts, vec![]).unwrap();
        let e = m.nocs_frame().extent();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = Vector3::new(rng.random_range(-40.0..60.0), rng.random_range(-25.0..35.0), rng.random_range(-10.0..90.0));
            let c = nocs_encode(&p, &m).unwrap();
            assert!((nocs_decode(&c, &m).unwrap() - p).amax() < 1e-9);
            let q = nocs_decode(&NocsValue::from_quantized(c.quantize()), &m).unwrap();
            for i in 0..3 {
                assert!((q[i] - p[i]).abs() <= e[i] / 65535.0, "axis {i}");
            }
        }
    }

    #[test]
    fn diameter_bounds_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let verts: Vec<Vector3<f64>> = (0..300)
            .map(|_| Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-20.0..20.0), rng.random_range(-5.0..5.0)))
            .collect();
        let m = TriMesh::new(verts.clone(), vec![]).unwrap();
        let ext = m.bbox_max() - m.bbox_min();
        assert!(m.diameter() >= ext.amax() - 1e-12);
        assert!(m.diameter() <= ext.norm() + 1e-12);
        let m2 = TriMesh::new(verts, vec![]).unwrap();
        assert_eq!(m.diameter().to_bits(), m2.diameter().to_bits());
    }

    #[test]
    fn large_mesh_diameter_is_flagged() {
        let verts: Vec<Vector3<f64>> = (0..20_001).map(|i| Vector3::new(i as f64 * 0.01, 0.0, 0.0)).collect();
        let m = TriMesh::new(verts, vec![]).unwrap();
        assert!(m.diameter_is_approximate());
        assert!(m.diameter() > 199.0);
    }
}
