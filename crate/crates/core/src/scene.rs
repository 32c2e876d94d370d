//! Self-contained synthetic test scenes: a random face from the synthetic
//! model rendered under SH lighting, with its segmentation mask and exact
//! landmark projections.

use crate::camera::{project, save_camera, Camera, Pose, Vec2};
use crate::error::{Error, Result};
use crate::fit::{save_fit, save_landmarks, FitResult, LandmarkSet};
use crate::mesh::{save_obj, TriMesh, Vec3};
use crate::morph::regions::{self, vertex_regions_from};
use crate::morph::{
    landmark_positions, make_synthetic_model, save_model, synthesize_shape, synthesize_texture,
    Coefficients, MorphableModel, SyntheticModelParams,
};
use crate::refine::{class, SegmentationMask};
use crate::render::{fragments, rasterize, save_lighting, SHLighting, SH_Y00};
use crate::texture::RasterImage;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::{Path, PathBuf};

/// Eye dilation used for out-of-span targets.
pub const DEFAULT_EYE_DILATION: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub seed: u64,
    pub model: SyntheticModelParams,
    pub camera: Camera,
    /// Scale factor for the eye regions of the ground truth, pushing it out
    /// of the model span.
    pub eye_dilation: Option<f64>,
}

impl SceneParams {
    /// Default scene for `seed`; the model is generated from the same seed.
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            model: SyntheticModelParams {
                seed,
                ..Default::default()
            },
            camera: Camera::new(256, 256, 100.0, 10.0).expect("valid default camera"),
            eye_dilation: None,
        }
    }

    pub fn with_eye_dilation(mut self, factor: f64) -> Self {
        self.eye_dilation = Some(factor);
        self
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub model: MorphableModel,
    pub camera: Camera,
    pub pose: Pose,
    pub coefficients: Coefficients,
    pub lighting: SHLighting,
    /// Ground-truth shape with albedo as vertex colors.
    pub truth: TriMesh,
    pub image: RasterImage,
    pub mask: SegmentationMask,
    /// Exact projections of the ground-truth landmark vertices.
    pub landmarks: LandmarkSet,
}

/// Paths written by [`SyntheticScene::save`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePaths {
    pub model: PathBuf,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub landmarks: PathBuf,
    pub camera: PathBuf,
    pub lighting: PathBuf,
    pub truth_fit: PathBuf,
    pub truth_mesh: PathBuf,
}

impl ScenePaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        Self {
            model: d.join("model.cfm"),
            image: d.join("image.png"),
            mask: d.join("mask.png"),
            landmarks: d.join("landmarks.txt"),
            camera: d.join("camera.txt"),
            lighting: d.join("lighting.txt"),
            truth_fit: d.join("truth_fit.txt"),
            truth_mesh: d.join("truth.obj"),
        }
    }
}

impl SyntheticScene {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<ScenePaths> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = ScenePaths::in_dir(dir);
        save_model(&self.model, &p.model)?;
        self.image.save(&p.image)?;
        self.mask.save(&p.mask)?;
        save_landmarks(&self.landmarks, &p.landmarks)?;
        save_camera(&self.camera, &p.camera)?;
        save_lighting(&self.lighting, &p.lighting)?;
        save_fit(&self.truth_fit(), &self.camera, &p.truth_fit)?;
        save_obj(&self.truth, &p.truth_mesh)?;
        Ok(p)
    }

    /// Ground truth in fit-result form.
    pub fn truth_fit(&self) -> FitResult {
        FitResult {
            coefficients: self.coefficients.clone(),
            pose: self.pose,
            landmark_error: 0.0,
            history: Vec::new(),
            converged: true,
            iterations: 0,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    rng.random_range(-half..=half)
}

fn normals(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        scale * z
    })
}

const FRONT_Z0: f64 = 0.2;
const FRONT_Z1: f64 = 0.45;
const FALLOFF: f64 = 2.0;
const REACH: f64 = 0.3;

/// Stretches each eye vertically about its landmark centroid `c`.
///
/// Within the eye's landmark extents `(r_x, r_y)` a vertex moves by
/// `(factor - 1) (y - c_y)`. Beyond `r_y` the shift decays linearly to zero
/// over `min(2 r_y, 0.3)`, shortened below the eye so the mouth stays put.
/// Beyond `r_x` it fades by a smoothstep, and each eye only acts on its own
/// side of the midline between the eyes. Horizontal positions are kept and
/// the back of the head (`z <= 0.2`) is fixed.
pub fn dilate_eyes(shape: &TriMesh, model: &MorphableModel, factor: f64) -> Result<TriMesh> {
    if model.landmark_count() != 68 {
        return Err(Error::Validation(
            "eye dilation needs the 68-landmark layout".into(),
        ));
    }
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Validation(format!(
            "invalid dilation factor {factor}"
        )));
    }
    let lm = landmark_positions(shape, model)?;
    let eyes: Vec<(Vec2, Vec2)> = [regions::RIGHT_EYE, regions::LEFT_EYE]
        .into_iter()
        .map(|r| {
            let pts: Vec<Vec2> = lm[r].iter().map(|p| Vec2::new(p.x, p.y)).collect();
            let c = pts.iter().sum::<Vec2>() / pts.len() as f64;
            let ext = pts.iter().fold(Vec2::zeros(), |e, p| e.sup(&(p - c).abs()));
            (c, ext)
        })
        .collect();
    let mid = 0.5 * (eyes[0].0.x + eyes[1].0.x);
    let mouth_top = lm[regions::MOUTH]
        .iter()
        .map(|p| p.y)
        .fold(f64::NEG_INFINITY, f64::max);
    let smoothstep = |t: f64| {
        let t = t.clamp(0.0, 1.0);
        t * t * (3.0 - 2.0 * t)
    };
    let k = factor - 1.0;
    let verts = shape
        .vertices()
        .iter()
        .map(|p| {
            let front = ((p.z - FRONT_Z0) / (FRONT_Z1 - FRONT_Z0)).clamp(0.0, 1.0);
            if front == 0.0 {
                return *p;
            }
            let mut dy = 0.0;
            for (c, ext) in &eyes {
                if (p.x - mid) * (c.x - mid) <= 0.0 {
                    continue;
                }
                let inner = (c.x - mid).abs();
                let reach_x = (2.0 * ext.x).min(inner.max(ext.x));
                let ux = (p.x - c.x).abs();
                let wx = if ux <= ext.x {
                    1.0
                } else {
                    1.0 - smoothstep((ux - ext.x) / (reach_x - ext.x).max(1e-12))
                };
                let v = (p.y - c.y).abs();
                let mut span = (FALLOFF * ext.y).min(REACH);
                if p.y < c.y {
                    let gap = c.y - ext.y - mouth_top;
                    span = span.min((0.9 * gap).max(0.75 * ext.y));
                }
                let h = if v <= ext.y {
                    v
                } else {
                    ext.y * (1.0 - (v - ext.y) / span).max(0.0)
                };
                dy += k * h * (p.y - c.y).signum() * wx;
            }
            p + Vec3::new(0.0, dy * front, 0.0)
        })
        .collect();
    shape.with_vertices(verts)
}

/// Builds the mask from the visible surface: each pixel takes the region
/// label of the vertex with the largest barycentric weight.
pub fn render_mask(
    mesh: &TriMesh,
    vertex_labels: &[u8],
    pose: &Pose,
    cam: &Camera,
) -> Result<SegmentationMask> {
    if vertex_labels.len() != mesh.vertex_count() {
        return Err(Error::LengthMismatch {
            expected: mesh.vertex_count(),
            got: vertex_labels.len(),
        });
    }
    let labels = fragments(mesh, pose, cam)
        .iter()
        .map(|f| match f {
            None => class::BACKGROUND,
            Some(f) => {
                let face = mesh.faces()[f.face];
                let k = (0..3).fold(0, |best, k| if f.bary[k] > f.bary[best] { k } else { best });
                vertex_labels[face[k]]
            }
        })
        .collect();
    SegmentationMask::new(cam.width, cam.height, labels)
}

pub fn generate_scene(params: &SceneParams) -> Result<SyntheticScene> {
    let model = make_synthetic_model(&params.model);
    let cam = params.camera;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_5ce4e);

    let pose = Pose::from_euler(
        uniform(&mut rng, 0.1),
        uniform(&mut rng, 0.2),
        uniform(&mut rng, 0.3),
        Vec3::new(uniform(&mut rng, 0.1), uniform(&mut rng, 0.1), 0.0),
        rng.random_range(0.9..1.1),
    )?;
    let coefficients = Coefficients {
        alpha_id: normals(&mut rng, model.dim_id(), 1.0),
        alpha_exp: normals(&mut rng, model.dim_exp(), 1.0),
        alpha_tex: normals(&mut rng, model.dim_tex(), 0.5),
    };
    let mut light = vec![0.0; 9];
    light[0] = 0.8 / SH_Y00;
    for c in &mut light[1..4] {
        *c = uniform(&mut rng, 0.15);
    }
    let lighting = SHLighting::monochrome(3, &light)?;

    let mut truth = synthesize_shape(&model, &coefficients)?;
    if let Some(f) = params.eye_dilation {
        truth = dilate_eyes(&truth, &model, f)?;
    }
    truth.set_colors(Some(synthesize_texture(&model, &coefficients)?.colors))?;

    let render = rasterize(&truth, &pose, &cam, &lighting, None)?;
    let mut image = render.color;
    for y in 0..cam.height {
        for x in 0..cam.width {
            if !render.coverage[(y * cam.width + x) as usize] {
                image.set(x, y, [0; 3].map(|_| rng.random_range(40..=200)));
            }
        }
    }

    let vr = vertex_regions_from(truth.vertices(), model.landmark_indices())
        .ok_or_else(|| Error::Validation("scene generation needs the 68-landmark layout".into()))?;
    let mask = render_mask(&truth, &vr.labels, &pose, &cam)?;
    let landmarks = LandmarkSet::uniform(
        landmark_positions(&truth, &model)?
            .iter()
            .map(|p| project(p, &pose, &cam))
            .collect(),
    )?;
    Ok(SyntheticScene {
        model,
        camera: cam,
        pose,
        coefficients,
        lighting,
        truth,
        image,
        mask,
        landmarks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = generate_scene(&SceneParams::new(3)).unwrap();
        let b = generate_scene(&SceneParams::new(3)).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.landmarks, b.landmarks);
        let c = generate_scene(&SceneParams::new(4)).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn landmarks_reproject_and_lie_on_the_face() {
        let s = generate_scene(&SceneParams::new(11)).unwrap();
        let shape = synthesize_shape(&s.model, &s.coefficients).unwrap();
        for (p, q) in landmark_positions(&shape, &s.model)
            .unwrap()
            .iter()
            .zip(s.landmarks.points())
        {
            assert!((project(p, &s.pose, &s.camera) - q).norm() < 1e-6);
        }
        let inside = s
            .landmarks
            .points()
            .iter()
            .filter(|q| s.mask.is_face(q.x as u32, q.y as u32))
            .count();
        assert!(inside >= 60, "{inside}");
    }

    #[test]
    fn mask_has_all_classes() {
        let s = generate_scene(&SceneParams::new(5)).unwrap();
        for c in [
            class::SKIN,
            class::LEFT_EYE,
            class::RIGHT_EYE,
            class::OTHER_FACE,
        ] {
            assert!(s.mask.labels().contains(&c), "class {c} missing");
        }
        let face = s.mask.face_pixel_count();
        assert!(face > 10_000 && face < 60_000, "{face}");
        // The image subject's left eye appears on the image right.
        let mean_x = |c: u8| {
            let xs: Vec<u32> = (0..s.mask.labels().len() as u32)
                .filter(|&i| s.mask.labels()[i as usize] == c)
                .map(|i| i % s.mask.width())
                .collect();
            xs.iter().sum::<u32>() as f64 / xs.len() as f64
        };
        assert!(mean_x(class::LEFT_EYE) > mean_x(class::RIGHT_EYE));
    }

    #[test]
    fn dilation_enlarges_eyes_without_folding() {
        for seed in 0..60 {
            let s = generate_scene(&SceneParams::new(seed)).unwrap();
            let shape = synthesize_shape(&s.model, &s.coefficients).unwrap();
            let d = dilate_eyes(&shape, &s.model, DEFAULT_EYE_DILATION).unwrap();
            let lm0 = landmark_positions(&shape, &s.model).unwrap();
            let lm1 = landmark_positions(&d, &s.model).unwrap();
            for eye in [36, 42] {
                let height = |lm: &[Vec3]| {
                    (lm[eye + 1].y + lm[eye + 2].y - lm[eye + 4].y - lm[eye + 5].y) / 2.0
                };
                let ratio = height(&lm1) / height(&lm0);
                assert!(
                    (ratio - DEFAULT_EYE_DILATION).abs() < 1e-9,
                    "seed {seed} eye {eye}: {ratio}"
                );
            }
            for (k, (a, b)) in lm0.iter().zip(&lm1).enumerate() {
                assert_eq!((a.x, a.z), (b.x, b.z));
                if k >= 48 {
                    assert!(
                        (a - b).norm() < 0.01,
                        "seed {seed} landmark {k}: {}",
                        (a - b).norm()
                    );
                }
            }
            // Faces that clearly face the viewer keep their xy orientation.
            let normal = |m: &TriMesh, f: [usize; 3]| {
                let v = m.vertices();
                (v[f[1]] - v[f[0]]).cross(&(v[f[2]] - v[f[0]]))
            };
            for f in shape.faces() {
                let n = normal(&shape, *f);
                if n.z > 0.5 * n.norm() {
                    if normal(&d, *f).z <= 0.0 {
                        let v = shape.vertices();
                        let lm = &lm0;
                        eprintln!(
                            "seed {seed} face {:?} n0 {:?} n1 {:?}",
                            f.map(|i| v[i]),
                            n,
                            normal(&d, *f)
                        );
                        eprintln!("d verts {:?}", f.map(|i| d.vertices()[i]));
                        eprintln!("eyes r {:?} l {:?}", &lm[36..42], &lm[42..48]);
                    }
                    assert!(normal(&d, *f).z > 0.0, "seed {seed} folds a face");
                }
            }
            for (p, q) in shape.vertices().iter().zip(d.vertices()) {
                if p.z < 0.2 {
                    assert_eq!(p, q);
                }
            }
        }
        let s = generate_scene(&SceneParams::new(0)).unwrap();
        let shape = synthesize_shape(&s.model, &s.coefficients).unwrap();
        assert_eq!(dilate_eyes(&shape, &s.model, 1.0).unwrap(), shape);
    }

    #[test]
    fn dilated_scene_stays_out_of_span_but_valid() {
        let s =
            generate_scene(&SceneParams::new(8).with_eye_dilation(DEFAULT_EYE_DILATION)).unwrap();
        for j in 0..s.truth.face_count() {
            assert!(s.truth.face_area(j) > 0.0);
        }
        assert!(s.mask.labels().contains(&class::LEFT_EYE));
    }

    #[test]
    fn save_writes_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_scene(&SceneParams::new(1)).unwrap();
        let p = s.save(dir.path()).unwrap();
        for f in [
            &p.model,
            &p.image,
            &p.mask,
            &p.landmarks,
            &p.camera,
            &p.lighting,
            &p.truth_fit,
            &p.truth_mesh,
        ] {
            assert!(f.exists(), "{}", f.display());
        }
        assert_eq!(crate::camera::load_camera(&p.camera).unwrap(), s.camera);
        assert_eq!(RasterImage::load(&p.image).unwrap(), s.image);
        assert_eq!(SegmentationMask::load(&p.mask).unwrap(), s.mask);
    }
}
