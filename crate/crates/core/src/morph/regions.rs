//! The standard 68-point landmark partition and landmark-derived vertex
//! regions (eyes, mouth, brows) on a frontal (+z facing) model.

use super::MorphableModel;
use crate::mesh::{TriMesh, Vec3};
use std::ops::Range;

pub const CONTOUR: Range<usize> = 0..17;
pub const BROWS: Range<usize> = 17..27;
pub const NOSE: Range<usize> = 27..36;
/// Subject's right eye (image left).
pub const RIGHT_EYE: Range<usize> = 36..42;
/// Subject's left eye (image right).
pub const LEFT_EYE: Range<usize> = 42..48;
pub const EYES: Range<usize> = 36..48;
pub const MOUTH_OUTER: Range<usize> = 48..60;
pub const MOUTH: Range<usize> = 48..68;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Eyes,
    Nose,
    Brow,
    Mouth,
    Contour,
}

impl Region {
    /// Report column order.
    pub const ALL: [Region; 5] = [
        Region::Eyes,
        Region::Nose,
        Region::Brow,
        Region::Mouth,
        Region::Contour,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Region::Eyes => "eyes",
            Region::Nose => "nose",
            Region::Brow => "brow",
            Region::Mouth => "mouth",
            Region::Contour => "contour",
        }
    }

    pub fn of_landmark(n: usize) -> Option<Region> {
        match n {
            _ if CONTOUR.contains(&n) => Some(Region::Contour),
            _ if BROWS.contains(&n) => Some(Region::Brow),
            _ if NOSE.contains(&n) => Some(Region::Nose),
            _ if EYES.contains(&n) => Some(Region::Eyes),
            _ if MOUTH.contains(&n) => Some(Region::Mouth),
            _ => None,
        }
    }
}

/// Per-vertex semantic labels using the mask class ids
/// (1 skin, 2 left eye, 3 right eye, 4 other face part).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexRegions {
    pub labels: Vec<u8>,
    pub right_eye: Vec<usize>,
    pub left_eye: Vec<usize>,
    pub mouth: Vec<usize>,
}

pub const LABEL_SKIN: u8 = 1;
pub const LABEL_LEFT_EYE: u8 = 2;
pub const LABEL_RIGHT_EYE: u8 = 3;
pub const LABEL_OTHER: u8 = 4;

fn polygon(vertices: &[Vec3], lm: &[usize], range: Range<usize>) -> Vec<[f64; 2]> {
    range
        .map(|n| {
            let v = vertices[lm[n]];
            [v.x, v.y]
        })
        .collect()
}

fn inside(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut c = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1])
            && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0]
        {
            c = !c;
        }
        j = i;
    }
    c
}

fn scaled(poly: &[[f64; 2]], factor: f64) -> Vec<[f64; 2]> {
    let n = poly.len() as f64;
    let cx = poly.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = poly.iter().map(|p| p[1]).sum::<f64>() / n;
    poly.iter()
        .map(|p| [cx + factor * (p[0] - cx), cy + factor * (p[1] - cy)])
        .collect()
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

/// Labels vertices of `shape` (same topology as `model`) from the landmark
/// polygons, looking along -z. Requires the 68-point convention; returns
/// `None` for other landmark counts.
pub fn vertex_regions(shape: &TriMesh, model: &MorphableModel) -> Option<VertexRegions> {
    vertex_regions_from(shape.vertices(), model.landmark_indices())
}

pub(crate) fn vertex_regions_from(vertices: &[Vec3], lm: &[usize]) -> Option<VertexRegions> {
    if lm.len() != 68 {
        return None;
    }
    let reye = polygon(vertices, lm, RIGHT_EYE);
    let leye = polygon(vertices, lm, LEFT_EYE);
    let mouth = polygon(vertices, lm, MOUTH_OUTER);
    let brow_r = polygon(vertices, lm, 17..22);
    let brow_l = polygon(vertices, lm, 22..27);
    let brow_width = {
        let eye_h = reye.iter().map(|p| p[1]).fold(f64::MIN, f64::max)
            - reye.iter().map(|p| p[1]).fold(f64::MAX, f64::min);
        0.4 * eye_h.max(1e-9)
    };
    let near_brow = |p: [f64; 2]| {
        [&brow_r, &brow_l].iter().any(|b| {
            b.windows(2)
                .any(|w| segment_distance(p, w[0], w[1]) <= brow_width)
        })
    };

    let mut out = VertexRegions {
        labels: vec![LABEL_SKIN; vertices.len()],
        right_eye: Vec::new(),
        left_eye: Vec::new(),
        mouth: Vec::new(),
    };
    for (i, v) in vertices.iter().enumerate() {
        if v.z <= 0.0 {
            continue;
        }
        let p = [v.x, v.y];
        if inside(&reye, p) {
            out.labels[i] = LABEL_RIGHT_EYE;
        } else if inside(&leye, p) {
            out.labels[i] = LABEL_LEFT_EYE;
        } else if inside(&mouth, p) || near_brow(p) {
            out.labels[i] = LABEL_OTHER;
        }
        if inside(&mouth, p) {
            out.mouth.push(i);
        }
    }
    // Boundary landmarks belong to their region.
    for n in RIGHT_EYE {
        out.labels[lm[n]] = LABEL_RIGHT_EYE;
    }
    for n in LEFT_EYE {
        out.labels[lm[n]] = LABEL_LEFT_EYE;
    }
    for n in MOUTH_OUTER {
        if !out.mouth.contains(&lm[n]) {
            out.mouth.push(lm[n]);
        }
    }
    out.mouth.sort_unstable();
    for (i, &l) in out.labels.iter().enumerate() {
        match l {
            LABEL_RIGHT_EYE => out.right_eye.push(i),
            LABEL_LEFT_EYE => out.left_eye.push(i),
            _ => {}
        }
    }
    Some(out)
}

/// Vertices within the eye polygon enlarged by `factor` about its centroid,
/// front-facing only. Used to pick an eyeball fitting region.
pub fn eye_vertices(
    shape: &TriMesh,
    model: &MorphableModel,
    right: bool,
    factor: f64,
) -> Vec<usize> {
    if model.landmark_count() != 68 {
        return Vec::new();
    }
    let range = if right { RIGHT_EYE } else { LEFT_EYE };
    let poly = scaled(
        &polygon(shape.vertices(), model.landmark_indices(), range),
        factor,
    );
    shape
        .vertices()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.z > 0.0 && inside(&poly, [v.x, v.y]))
        .map(|(i, _)| i)
        .collect()
}

/// Centroid of a landmark group on `shape`.
pub fn landmark_centroid(shape: &TriMesh, model: &MorphableModel, range: Range<usize>) -> Vec3 {
    let n = range.len() as f64;
    range
        .map(|k| shape.vertices()[model.landmark_indices()[k]])
        .sum::<Vec3>()
        / n
}
