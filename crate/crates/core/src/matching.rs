//! Template retrieval by global-descriptor cosine similarity, mutual
//! nearest-neighbor patch matching, and lifting of matches to 2D–3D pairs.

use std::cmp::Ordering;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::descriptors::{CropTransform, DescriptorGrid, GlobalDescriptor};
use crate::mesh::{NocsFrame, NocsValue};
use crate::raster::Raster;
use crate::render::TemplateRecord;
use crate::scalar::RealScalar;

/// Default number of lifted correspondences passed to the solver.
pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("descriptor dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("no templates to match against")]
    NoTemplates,
    #[error("descriptor grid has no valid patches")]
    NoForeground,
    #[error("no correspondences survive background filtering")]
    EmptyAfterFiltering,
    #[error("patch grid geometry differs between query and template")]
    GridMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateMatch {
    pub template_index: usize,
    pub score: f64,
}

/// Ranks all templates by descending cosine similarity; ties go to the
/// lower index.
pub fn match_template(query: &GlobalDescriptor, templates: &[GlobalDescriptor]) -> Result<Vec<TemplateMatch>, MatchError> {
    if templates.is_empty() {
        return Err(MatchError::NoTemplates);
    }
    if let Some(t) = templates.iter().find(|t| t.dim() != query.dim()) {
        return Err(MatchError::DimMismatch(query.dim(), t.dim()));
    }
    let mut ranked: Vec<TemplateMatch> = templates
        .par_iter()
        .enumerate()
        .map(|(template_index, t)| TemplateMatch { template_index, score: query.dot(t) })
        .collect();
    ranked.sort_by(|a, b| by_score_then_index(a.score, a.template_index, b.score, b.template_index));
    Ok(ranked)
}

fn by_score_then_index(sa: f64, ia: usize, sb: f64, ib: usize) -> Ordering {
    sb.total_cmp(&sa).then(ia.cmp(&ib))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchMatch {
    pub query_patch: usize,
    pub template_patch: usize,
    pub similarity: f64,
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Index of the most similar valid row of `other` for each valid row of
/// `grid`; ties go to the lower index.
fn nearest(grid: &DescriptorGrid, other: &DescriptorGrid) -> Vec<Option<(usize, f64)>> {
    let other_valid: Vec<usize> = (0..other.len()).filter(|&p| other.is_valid(p)).collect();
    (0..grid.len())
        .into_par_iter()
        .map(|p| {
            if !grid.is_valid(p) {
                return None;
            }
            let d = grid.descriptor(p);
            let mut best: Option<(usize, f64)> = None;
            for &q in &other_valid {
                let s = dot(d, other.descriptor(q));
                if best.is_none_or(|(_, bs)| s > bs) {
                    best = Some((q, s));
                }
            }
            best
        })
        .collect()
}

/// Pairs `(q, p)` with `NN(q, P) = p` and `NN(p, Q) = q` over valid patches,
/// sorted by descending similarity, then by query patch index.
pub fn mutual_nearest_neighbors(query: &DescriptorGrid, template: &DescriptorGrid) -> Result<Vec<PatchMatch>, MatchError> {
    if query.dim() != template.dim() {
        return Err(MatchError::DimMismatch(query.dim(), template.dim()));
    }
    if query.valid_count() == 0 || template.valid_count() == 0 {
        return Err(MatchError::NoForeground);
    }
    let q_nn = nearest(query, template);
    let t_nn = nearest(template, query);
    let mut out: Vec<PatchMatch> = q_nn
        .iter()
        .enumerate()
        .filter_map(|(q, nn)| {
            let (p, s) = (*nn)?;
            (t_nn[p].map(|(back, _)| back) == Some(q)).then_some(PatchMatch { query_patch: q, template_patch: p, similarity: s })
        })
        .collect();
    out.sort_by(|a, b| by_score_then_index(a.similarity, a.query_patch, b.similarity, b.query_patch));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence<T: RealScalar> {
    /// Pixel in the original query image.
    pub query_px: Vector2<T>,
    /// Object-frame point in mm.
    pub object_pt: Vector3<T>,
    pub patch_sim: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet<T: RealScalar> {
    pub pairs: Vec<Correspondence<T>>,
    pub source_template: usize,
}

impl<T: RealScalar> CorrespondenceSet<T> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn object_points(&self) -> Vec<Vector3<T>> {
        self.pairs.iter().map(|c| c.object_pt).collect()
    }

    pub fn image_points(&self) -> Vec<Vector2<T>> {
        self.pairs.iter().map(|c| c.query_px).collect()
    }
}

/// Coordinate at pixel `(u, v)`, or the nearest foreground pixel in its 3×3
/// neighborhood (ties in scan order).
pub(crate) fn lookup_with_fallback(map: &Raster<Option<[u16; 3]>>, u: i64, v: i64) -> Option<[u16; 3]> {
    if let Some(Some(c)) = map.try_get(u, v) {
        return Some(*c);
    }
    let mut best: Option<(i64, [u16; 3])> = None;
    for dv in -1..=1 {
        for du in -1..=1 {
            if let Some(Some(c)) = map.try_get(u + du, v + dv) {
                let d2 = du * du + dv * dv;
                if best.is_none_or(|(bd, _)| d2 < bd) {
                    best = Some((d2, *c));
                }
            }
        }
    }
    best.map(|(_, c)| c)
}

/// Turns patch matches into 2D–3D correspondences.
///
/// Template patches are looked up in the template's crop-space coordinate
/// map; background matches are dropped first, then the `top_k` most similar
/// survivors are kept. Query patch centers are mapped back to the original
/// image through `query_crop`.
pub fn lift_correspondences(
    matches: &[PatchMatch],
    query_grid: &DescriptorGrid,
    template_grid: &DescriptorGrid,
    template: &TemplateRecord,
    frame: &NocsFrame,
    query_crop: &CropTransform,
    top_k: usize,
) -> Result<CorrespondenceSet<f64>, MatchError> {
    if template_grid.patch_size() != query_grid.patch_size() || template_grid.stride() != query_grid.stride() {
        return Err(MatchError::GridMismatch);
    }
    let mut sorted = matches.to_vec();
    sorted.sort_by(|a, b| by_score_then_index(a.similarity, a.query_patch, b.similarity, b.query_patch));
    let mut seen = std::collections::HashSet::new();
    let pairs: Vec<Correspondence<f64>> = sorted
        .iter()
        .filter(|m| seen.insert(m.query_patch))
        .filter_map(|m| {
            let tc = template_grid.patch_center(m.template_patch);
            let q = lookup_with_fallback(&template.coord_map, tc.x.floor() as i64, tc.y.floor() as i64)?;
            let object_pt = frame.decode(&NocsValue::from_quantized(q));
            let query_px = query_crop.to_original(&query_grid.patch_center(m.query_patch));
            Some(Correspondence { query_px, object_pt, patch_sim: m.similarity })
        })
        .take(top_k)
        .collect();
    if pairs.is_empty() {
        return Err(MatchError::EmptyAfterFiltering);
    }
    Ok(CorrespondenceSet { pairs, source_template: template.index })
}
