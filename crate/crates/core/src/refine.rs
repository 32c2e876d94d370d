//! Fine reconstruction: eye-landmark snapping to a segmentation boundary,
//! depth-preserving landmark anchors, and Laplacian deformation.

use crate::camera::{project, Camera, Pose, Vec2};
use crate::error::{Error, Result};
use crate::fit::{FitResult, LandmarkSet};
use crate::mesh::{build_adjacency, laplacian_of, TriMesh, Vec3};
use crate::morph::regions::{LABEL_LEFT_EYE, LABEL_RIGHT_EYE, LEFT_EYE, RIGHT_EYE};
use crate::morph::{landmark_positions, synthesize_shape, MorphableModel};
use crate::sparse::SymmetricBuilder;
use std::path::Path;

/// Default anchor weight for pipeline use.
pub const DEFAULT_LAMBDA: f64 = 10.0;

/// Mask class ids.
pub mod class {
    pub const BACKGROUND: u8 = 0;
    pub const SKIN: u8 = 1;
    pub const LEFT_EYE: u8 = 2;
    pub const RIGHT_EYE: u8 = 3;
    pub const OTHER_FACE: u8 = 4;
}

/// Vertex targets for the Laplacian deformation with one shared weight.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    entries: Vec<(usize, Vec3)>,
    lambda: f64,
}

impl AnchorSet {
    pub fn new(entries: Vec<(usize, Vec3)>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Validation(format!(
                "anchor weight must be positive, got {lambda}"
            )));
        }
        let mut seen: Vec<usize> = entries.iter().map(|e| e.0).collect();
        seen.sort_unstable();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!("vertex {} anchored twice", w[0])));
        }
        Ok(Self { entries, lambda })
    }

    pub fn entries(&self) -> &[(usize, Vec3)] {
        &self.entries
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.entries.clone(), lambda)
    }
}

/// Per-pixel class ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    width: u32,
    height: u32,
    labels: Vec<u8>,
}

impl SegmentationMask {
    pub fn new(width: u32, height: u32, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width as usize * height as usize {
            return Err(Error::LengthMismatch {
                expected: width as usize * height as usize,
                got: labels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: u32, height: u32, label: u8) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, label: u8) {
        self.labels[y as usize * self.width as usize + x as usize] = label;
    }

    /// Face pixels: any class other than background. This is the binary
    /// confidence map.
    pub fn is_face(&self, x: u32, y: u32) -> bool {
        self.get(x, y) != class::BACKGROUND
    }

    pub fn face_pixel_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l != class::BACKGROUND)
            .count()
    }

    /// Loads an 8-bit single-channel PNG or PGM (other formats are converted
    /// to luma).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    /// Saves as PNG or, for a `.pgm` extension, binary PGM.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = image::GrayImage::from_raw(self.width, self.height, self.labels.clone())
            .expect("mask buffer has width*height entries");
        img.save(path.as_ref())?;
        Ok(())
    }

    /// Pixels of `label` with a 4-neighbor of a different label, row-major.
    pub fn boundary_pixels(&self, label: u8) -> Vec<(u32, u32)> {
        let (w, h) = (self.width, self.height);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if self.get(x, y) != label {
                    continue;
                }
                let differs = |nx: i64, ny: i64| {
                    nx >= 0
                        && ny >= 0
                        && nx < w as i64
                        && ny < h as i64
                        && self.get(nx as u32, ny as u32) != label
                };
                let (xi, yi) = (x as i64, y as i64);
                if differs(xi, yi - 1)
                    || differs(xi - 1, yi)
                    || differs(xi + 1, yi)
                    || differs(xi, yi + 1)
                {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Eye landmark ids of the 68-point convention paired with their mask class.
pub fn standard_eye_landmarks() -> Vec<(usize, u8)> {
    RIGHT_EYE
        .map(|n| (n, LABEL_RIGHT_EYE))
        .chain(LEFT_EYE.map(|n| (n, LABEL_LEFT_EYE)))
        .collect()
}

/// Moves each listed eye landmark to the nearest boundary pixel center of its
/// eye class. Landmarks whose class has no boundary pixel, and all unlisted
/// landmarks, are unchanged. Ties go to the first pixel in row-major order.
pub fn snap_eye_landmarks(
    lm: &LandmarkSet,
    mask: &SegmentationMask,
    eye_landmarks: &[(usize, u8)],
) -> LandmarkSet {
    let mut points = lm.points().to_vec();
    let mut cache: Vec<(u8, Vec<(u32, u32)>)> = Vec::new();
    for &(n, label) in eye_landmarks {
        if n >= points.len() {
            continue;
        }
        if !cache.iter().any(|c| c.0 == label) {
            cache.push((label, mask.boundary_pixels(label)));
        }
        let boundary = &cache.iter().find(|c| c.0 == label).expect("cached").1;
        let q = points[n];
        let mut best: Option<(f64, Vec2)> = None;
        for &(x, y) in boundary {
            let c = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
            let d = (c - q).norm_squared();
            if best.map_or(true, |b| d < b.0) {
                best = Some((d, c));
            }
        }
        if let Some((_, c)) = best {
            points[n] = c;
        }
    }
    lm.with_points(points).expect("weights unchanged")
}

/// Back-projects each landmark at the depth of its current vertex.
pub fn build_anchors(
    lm: &LandmarkSet,
    shape: &TriMesh,
    model: &MorphableModel,
    pose: &Pose,
    cam: &Camera,
    lambda: f64,
) -> Result<AnchorSet> {
    let pts = landmark_positions(shape, model)?;
    if pts.len() != lm.len() {
        return Err(Error::LengthMismatch {
            expected: pts.len(),
            got: lm.len(),
        });
    }
    let entries = model
        .landmark_indices()
        .iter()
        .zip(&pts)
        .zip(lm.points())
        .map(|((&k, p), q)| {
            let c = pose.to_camera(p);
            let xy = cam.unpix(q);
            (k, pose.to_model(&Vec3::new(xy.x, xy.y, c.z)))
        })
        .collect();
    AnchorSet::new(entries, lambda)
}

/// The deformation energy `sum |L(v_i) - L'_i|^2 + lambda sum |v_k - p_k|^2`
/// with `L'` the Laplacian coordinates of `reference`.
pub fn deformation_energy(
    reference: &TriMesh,
    candidate: &TriMesh,
    anchors: &AnchorSet,
) -> Result<f64> {
    if !reference.same_topology(candidate) {
        return Err(Error::TopologyMismatch);
    }
    let adj = build_adjacency(reference);
    let target = laplacian_of(reference.vertices(), &adj)?;
    let got = laplacian_of(candidate.vertices(), &adj)?;
    let lap: f64 = target
        .iter()
        .zip(&got)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    let anchor: f64 = anchors
        .entries()
        .iter()
        .map(|(k, p)| (candidate.vertices()[*k] - p).norm_squared())
        .sum();
    Ok(lap + anchors.lambda() * anchor)
}

/// Minimizes the deformation energy for all three coordinates with one
/// sparse Cholesky factorization of `L^T L + lambda S^T S`.
pub fn laplacian_deform(mesh: &TriMesh, anchors: &AnchorSet) -> Result<TriMesh> {
    let n = mesh.vertex_count();
    if anchors.is_empty() {
        return Err(Error::SingularSystem(
            "no anchors: the Laplacian alone has a translation null space".into(),
        ));
    }
    if let Some(&(k, _)) = anchors.entries().iter().find(|(k, _)| *k >= n) {
        return Err(Error::Validation(format!("anchor vertex {k} out of range")));
    }
    let adj = build_adjacency(mesh);
    let delta = laplacian_of(mesh.vertices(), &adj)?;

    let mut a = SymmetricBuilder::new(n);
    let mut rhs = vec![vec![0.0; n]; 3];
    let mut row: Vec<(usize, f64)> = Vec::new();
    for i in 0..n {
        let nb = adj.neighbors(i);
        let w = 1.0 / nb.len() as f64;
        row.clear();
        row.push((i, 1.0));
        row.extend(nb.iter().map(|&j| (j, -w)));
        a.add_outer(&row, 1.0);
        for &(j, v) in &row {
            for c in 0..3 {
                rhs[c][j] += v * delta[i][c];
            }
        }
    }
    let lambda = anchors.lambda();
    for &(k, p) in anchors.entries() {
        a.add(k, k, lambda);
        for c in 0..3 {
            rhs[c][k] += lambda * p[c];
        }
    }
    let sol = a.factor()?.solve_columns(&rhs)?;
    let verts = (0..n)
        .map(|i| Vec3::new(sol[0][i], sol[1][i], sol[2][i]))
        .collect();
    mesh.with_vertices(verts)
}

/// Fine reconstruction from a coarse fit: optional eye snapping against the
/// mask, landmark back-projection, and one Laplacian deformation of the
/// fitted shape.
pub fn refine_fit(
    model: &MorphableModel,
    fit: &FitResult,
    lm: &LandmarkSet,
    mask: Option<&SegmentationMask>,
    cam: &Camera,
    lambda: f64,
) -> Result<TriMesh> {
    let shape = synthesize_shape(model, &fit.coefficients)?;
    let targets = match mask {
        Some(m) => {
            if (m.width(), m.height()) != (cam.width, cam.height) {
                return Err(Error::DimensionMismatch {
                    what: "mask",
                    expected: cam.width as usize,
                    got: m.width() as usize,
                });
            }
            snap_eye_landmarks(lm, m, &standard_eye_landmarks())
        }
        None => lm.clone(),
    };
    let anchors = build_anchors(&targets, &shape, model, &fit.pose, cam, lambda)?;
    laplacian_deform(&shape, &anchors)
}

/// Projected landmark positions of `shape` under `pose`.
pub fn projected_landmarks(
    shape: &TriMesh,
    model: &MorphableModel,
    pose: &Pose,
    cam: &Camera,
) -> Result<Vec<Vec2>> {
    Ok(landmark_positions(shape, model)?
        .iter()
        .map(|p| project(p, pose, cam))
        .collect())
}
