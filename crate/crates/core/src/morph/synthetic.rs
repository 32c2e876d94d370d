//! Deterministic synthetic morphable model used as the test fixture.
//!
//! The mean shape is an icosphere squashed into an ellipsoid head facing +z
//! with a nose, eye bulges, a brow ridge and lips. Identity columns are
//! random smooth polynomial displacement fields (total degree 1..=3),
//! expression columns are windowed affine fields localized on the mouth,
//! eyes or brows, texture columns are quadratic color fields. Column norms
//! decay as `1/k`. All values are rounded to f32 so CFM1 round trips are
//! lossless.

use super::regions::{self, LABEL_LEFT_EYE, LABEL_OTHER, LABEL_RIGHT_EYE};
use super::MorphableModel;
use crate::mesh::{icosphere, Vec3};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticModelParams {
    pub seed: u64,
    /// The mesh is the smallest icosphere with at least this many vertices.
    pub min_vertices: usize,
    pub d_id: usize,
    pub d_exp: usize,
    pub d_tex: usize,
}

impl Default for SyntheticModelParams {
    fn default() -> Self {
        Self {
            seed: 0,
            min_vertices: 2562,
            d_id: 80,
            d_exp: 64,
            d_tex: 9,
        }
    }
}

const HEAD_RADII: [f64; 3] = [0.8, 1.0, 0.85];
const ID_SCALE: f64 = 0.05;
const EXP_SCALE: f64 = 0.012;
const TEX_SCALE: f64 = 0.06;

pub(crate) const RIGHT_EYE_CENTER: [f64; 2] = [-0.3, 0.22];
pub(crate) const LEFT_EYE_CENTER: [f64; 2] = [0.3, 0.22];
pub(crate) const MOUTH_CENTER: [f64; 2] = [0.0, -0.36];

fn gauss(u: f64) -> f64 {
    (-0.5 * u * u).exp()
}

fn q32(x: f64) -> f64 {
    x as f32 as f64
}

/// Frontal weight: 0 on the back of the head, 1 on the face.
fn front(z: f64) -> f64 {
    ((z + 0.1) / 0.4).clamp(0.0, 1.0)
}

/// Landmark template on the face plane, in model units (x right, y up).
pub(crate) fn landmark_layout() -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(68);
    // Jaw line, image-left ear to chin to image-right ear.
    for k in 0..17 {
        let phi = PI + PI * k as f64 / 16.0;
        pts.push([0.66 * phi.cos(), 0.05 + 0.78 * phi.sin()]);
    }
    // Brows, each five points from outer to inner (right) and inner to outer (left).
    for k in 0..5 {
        let x = -0.56 + 0.42 * k as f64 / 4.0;
        pts.push([
            x,
            0.40 + 0.05 * (1.0 - ((x + 0.35) / 0.21).powi(2)).max(0.0),
        ]);
    }
    for k in 0..5 {
        let x = 0.14 + 0.42 * k as f64 / 4.0;
        pts.push([
            x,
            0.40 + 0.05 * (1.0 - ((x - 0.35) / 0.21).powi(2)).max(0.0),
        ]);
    }
    // Nose bridge then nostrils.
    for k in 0..4 {
        pts.push([0.0, 0.26 - 0.1 * k as f64]);
    }
    for k in 0..5 {
        let x = -0.12 + 0.06 * k as f64;
        pts.push([x, -0.14 + 0.02 * (1.0 - (x / 0.12).abs())]);
    }
    // Eyes: corner, two upper lid points, corner, two lower lid points.
    let eye = |c: [f64; 2], pts: &mut Vec<[f64; 2]>| {
        let (rx, ry) = (0.16, 0.08);
        for a in [180.0f64, 120.0, 60.0, 0.0, -60.0, -120.0] {
            let a = a.to_radians();
            pts.push([c[0] + rx * a.cos(), c[1] + ry * a.sin()]);
        }
    };
    eye(RIGHT_EYE_CENTER, &mut pts);
    eye(LEFT_EYE_CENTER, &mut pts);
    // Outer lips (12) then inner lips (8), starting at the image-left corner.
    for k in 0..12 {
        let a = PI - 2.0 * PI * k as f64 / 12.0;
        pts.push([
            MOUTH_CENTER[0] + 0.27 * a.cos(),
            MOUTH_CENTER[1] + 0.11 * a.sin(),
        ]);
    }
    for k in 0..8 {
        let a = PI - 2.0 * PI * k as f64 / 8.0;
        pts.push([
            MOUTH_CENTER[0] + 0.17 * a.cos(),
            MOUTH_CENTER[1] + 0.045 * a.sin(),
        ]);
    }
    pts
}

fn head_shape(p: Vec3) -> Vec3 {
    let mut v = Vec3::new(
        p.x * HEAD_RADII[0],
        p.y * HEAD_RADII[1],
        p.z * HEAD_RADII[2],
    );
    let f = front(v.z);
    let nose = 0.16 * gauss(v.x / 0.07) * gauss((v.y - 0.02) / 0.13);
    let eyes = [RIGHT_EYE_CENTER, LEFT_EYE_CENTER]
        .iter()
        .map(|c| 0.03 * gauss((v.x - c[0]) / 0.07) * gauss((v.y - c[1]) / 0.05))
        .sum::<f64>();
    let brow = 0.03 * gauss((v.y - 0.41) / 0.04) * gauss(v.x / 0.35);
    let lips = 0.03 * gauss((v.x - MOUTH_CENTER[0]) / 0.18) * gauss((v.y - MOUTH_CENTER[1]) / 0.06);
    v.z += f * (nose + eyes + brow + lips);
    v
}

fn monomials(p: &Vec3, min_degree: u32, max_degree: u32) -> Vec<f64> {
    let mut out = Vec::new();
    for d in min_degree..=max_degree {
        for a in 0..=d {
            for b in 0..=(d - a) {
                let c = d - a - b;
                out.push(p.x.powi(a as i32) * p.y.powi(b as i32) * p.z.powi(c as i32));
            }
        }
    }
    out
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn set_column_norm(col: &mut DVector<f64>, norm: f64) {
    let n = col.norm();
    if n > 0.0 {
        *col *= norm / n;
    }
}

pub fn make_synthetic_model(params: &SyntheticModelParams) -> MorphableModel {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut level = 0;
    while 10 * 4usize.pow(level) + 2 < params.min_vertices && level < 8 {
        level += 1;
    }
    let sphere = icosphere(level);
    let vertices: Vec<Vec3> = sphere
        .vertices()
        .iter()
        .map(|p| head_shape(*p).map(q32))
        .collect();
    let v = vertices.len();
    let rows = 3 * v;

    // Landmarks: nearest unused front vertex to each template point.
    let mut used = vec![false; v];
    let landmarks: Vec<usize> = landmark_layout()
        .into_iter()
        .map_while(|t| {
            let best = vertices
                .iter()
                .enumerate()
                .filter(|(i, p)| p.z > 0.0 && !used[*i])
                .min_by(|(_, a), (_, b)| {
                    let da = (a.x - t[0]).powi(2) + (a.y - t[1]).powi(2);
                    let db = (b.x - t[0]).powi(2) + (b.y - t[1]).powi(2);
                    da.total_cmp(&db)
                })
                .map(|(i, _)| i)?;
            used[best] = true;
            Some(best)
        })
        .collect();

    // Mean albedo.
    let labels = regions::vertex_regions_from(&vertices, &landmarks).map(|r| r.labels);
    let skin = Vec3::new(0.86, 0.67, 0.56);
    let mut mean_texture = DVector::zeros(rows);
    for (i, p) in vertices.iter().enumerate() {
        let label = labels.as_ref().map_or(1, |l| l[i]);
        let c = match label {
            LABEL_RIGHT_EYE | LABEL_LEFT_EYE => {
                let c = if label == LABEL_RIGHT_EYE {
                    RIGHT_EYE_CENTER
                } else {
                    LEFT_EYE_CENTER
                };
                if (p.x - c[0]).hypot(p.y - c[1]) < 0.06 {
                    Vec3::new(0.22, 0.14, 0.1)
                } else {
                    Vec3::new(0.94, 0.94, 0.92)
                }
            }
            LABEL_OTHER if p.y < 0.0 => Vec3::new(0.74, 0.32, 0.32),
            LABEL_OTHER => Vec3::new(0.32, 0.22, 0.16),
            _ if p.z < -0.2 || p.y > 0.7 => Vec3::new(0.28, 0.19, 0.13),
            _ => skin,
        };
        for k in 0..3 {
            mean_texture[3 * i + k] = q32(c[k]);
        }
    }

    let sqrt_v = (v as f64).sqrt();

    let mut basis_id = DMatrix::zeros(rows, params.d_id);
    let feats: Vec<Vec<f64>> = vertices.iter().map(|p| monomials(p, 1, 3)).collect();
    for k in 0..params.d_id {
        let g = normal_matrix(&mut rng, 3, feats[0].len());
        let mut col = DVector::zeros(rows);
        for (i, f) in feats.iter().enumerate() {
            let d = &g * DVector::from_column_slice(f);
            for c in 0..3 {
                col[3 * i + c] = d[c];
            }
        }
        set_column_norm(&mut col, ID_SCALE * sqrt_v / (k + 1) as f64);
        basis_id.set_column(k, &col);
    }

    // (center, window radius) for mouth, eyes, brows.
    let windows: [([f64; 2], f64); 5] = [
        (MOUTH_CENTER, 0.16),
        (RIGHT_EYE_CENTER, 0.1),
        (LEFT_EYE_CENTER, 0.1),
        ([-0.35, 0.42], 0.1),
        ([0.35, 0.42], 0.1),
    ];
    let mut basis_exp = DMatrix::zeros(rows, params.d_exp);
    for k in 0..params.d_exp {
        let (c, r) = windows[k % windows.len()];
        let g = normal_matrix(&mut rng, 3, 3);
        let mut col = DVector::zeros(rows);
        for (i, p) in vertices.iter().enumerate() {
            let (dx, dy) = ((p.x - c[0]) / r, (p.y - c[1]) / r);
            let w = front(p.z) * gauss(dx) * gauss(dy);
            if w < 1e-12 {
                continue;
            }
            let d = &g * nalgebra::Vector3::new(1.0, dx, dy) * w;
            for a in 0..3 {
                col[3 * i + a] = d[a];
            }
        }
        set_column_norm(&mut col, EXP_SCALE * sqrt_v / (k + 1) as f64);
        basis_exp.set_column(k, &col);
    }

    let mut basis_tex = DMatrix::zeros(rows, params.d_tex);
    let tfeats: Vec<Vec<f64>> = vertices.iter().map(|p| monomials(p, 0, 2)).collect();
    for k in 0..params.d_tex {
        let g = normal_matrix(&mut rng, 3, tfeats[0].len());
        let mut col = DVector::zeros(rows);
        for (i, f) in tfeats.iter().enumerate() {
            let d = &g * DVector::from_column_slice(f);
            for c in 0..3 {
                col[3 * i + c] = d[c];
            }
        }
        set_column_norm(&mut col, TEX_SCALE * sqrt_v / (k + 1) as f64);
        basis_tex.set_column(k, &col);
    }

    let flat = DVector::from_iterator(rows, vertices.iter().flat_map(|p| [p.x, p.y, p.z]));
    MorphableModel::new(
        flat,
        mean_texture,
        basis_id.map(q32),
        basis_exp.map(q32),
        basis_tex.map(q32),
        sphere.faces().to_vec(),
        landmarks,
    )
    .expect("synthetic model is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morph::{synthesize_shape, Coefficients};
    use rand::Rng;

    fn params(seed: u64) -> SyntheticModelParams {
        SyntheticModelParams {
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_synthetic_model(&params(5));
        let b = make_synthetic_model(&params(5));
        assert_eq!(a, b);
        assert_ne!(a, make_synthetic_model(&params(6)));
    }

    #[test]
    fn default_shape() {
        let m = make_synthetic_model(&params(0));
        assert_eq!(m.vertex_count(), 2562);
        assert_eq!(m.landmark_count(), 68);
        assert_eq!((m.dim_id(), m.dim_exp(), m.dim_tex()), (80, 64, 9));
        let mean = m.mean_mesh();
        for &k in m.landmark_indices() {
            assert!(mean.vertices()[k].z > 0.0);
        }
    }

    #[test]
    fn small_meshes_get_fewer_landmarks() {
        let m = make_synthetic_model(&SyntheticModelParams {
            seed: 1,
            min_vertices: 12,
            d_id: 2,
            d_exp: 2,
            d_tex: 2,
        });
        assert_eq!(m.vertex_count(), 12);
        assert!(m.landmark_count() < 68 && m.landmark_count() > 0);
    }

    #[test]
    fn column_norms_non_increasing() {
        let m = make_synthetic_model(&params(2));
        for basis in [m.basis_id(), m.basis_exp(), m.basis_tex()] {
            let norms: Vec<f64> = basis.column_iter().map(|c| c.norm()).collect();
            assert!(norms.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn bounded_synthesis_stays_in_doubled_box() {
        let m = make_synthetic_model(&params(3));
        let (lo, hi) = m.mean_mesh().bounding_box().unwrap();
        let (center, half) = ((lo + hi) * 0.5, (hi - lo) * 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let mut draw = |n| DVector::from_fn(n, |_, _| rng.random_range(-3.0..=3.0));
            let c = Coefficients {
                alpha_id: draw(m.dim_id()),
                alpha_exp: draw(m.dim_exp()),
                alpha_tex: draw(m.dim_tex()),
            };
            let s = synthesize_shape(&m, &c).unwrap();
            for v in s.vertices() {
                let d = (v - center).abs();
                assert!((0..3).all(|k| d[k] <= 2.0 * half[k]));
            }
        }
    }
}
