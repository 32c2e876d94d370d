//! Orthographic camera, similarity pose and landmark-based pose estimation.
//!
//! Camera space: the image plane is x right, y up; the camera center sits at
//! `z = d_cam` looking down -z, so larger camera-space z is nearer. The only
//! place the image y-flip happens is [`Camera::pix`].

use crate::error::{Error, Result};
use crate::mesh::Vec3;
use nalgebra::{Matrix2x3, Matrix3, Rotation3, Vector2, SVD};

pub type Vec2 = Vector2<f64>;

/// Similarity transform `x -> s * R * x + t` into camera space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vec3,
    scale: f64,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3, scale: f64) -> Result<Self> {
        let ortho = (rotation * rotation.transpose() - Matrix3::identity())
            .abs()
            .max();
        if ortho > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation("rotation is not in SO(3)".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Validation(format!(
                "pose scale must be positive, got {scale}"
            )));
        }
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::Validation("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
            scale,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn from_euler(
        roll: f64,
        pitch: f64,
        yaw: f64,
        translation: Vec3,
        scale: f64,
    ) -> Result<Self> {
        Self::new(
            Rotation3::from_euler_angles(roll, pitch, yaw).into_inner(),
            translation,
            scale,
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Depth of the translation is unobservable by the projection; callers may
    /// set it for depth bookkeeping.
    pub fn with_translation_z(mut self, z: f64) -> Self {
        self.translation.z = z;
        self
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn to_model(&self, c: &Vec3) -> Vec3 {
        self.rotation.transpose() * (c - self.translation) / self.scale
    }

    fn rotated_by(&self, w: &Vec3) -> Matrix3<f64> {
        Rotation3::new(*w).into_inner() * self.rotation
    }

    /// Left-multiplies the rotation by `exp(w)`, adds `ds` to the scale and
    /// `dt` to the x/y translation.
    pub(crate) fn perturbed(&self, w: &Vec3, ds: f64, dt: &Vec2) -> Self {
        Self {
            rotation: self.rotated_by(w),
            translation: self.translation + Vec3::new(dt.x, dt.y, 0.0),
            scale: self.scale + ds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// Depth of the camera center along camera-space z.
    pub d_cam: f64,
    pub width: u32,
    pub height: u32,
    pub pixels_per_unit: f64,
}

impl Camera {
    pub fn new(width: u32, height: u32, pixels_per_unit: f64, d_cam: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(
                "camera image size must be positive".into(),
            ));
        }
        if !(pixels_per_unit > 0.0 && d_cam > 0.0) {
            return Err(Error::Validation(
                "pixels_per_unit and d_cam must be positive".into(),
            ));
        }
        Ok(Self {
            d_cam,
            width,
            height,
            pixels_per_unit,
        })
    }

    /// Image-plane units to pixels: origin top-left, y down.
    pub fn pix(&self, x: f64, y: f64) -> Vec2 {
        Vec2::new(
            0.5 * self.width as f64 + x * self.pixels_per_unit,
            0.5 * self.height as f64 - y * self.pixels_per_unit,
        )
    }

    pub fn unpix(&self, q: &Vec2) -> Vec2 {
        Vec2::new(
            (q.x - 0.5 * self.width as f64) / self.pixels_per_unit,
            (0.5 * self.height as f64 - q.y) / self.pixels_per_unit,
        )
    }

    /// Distance from the camera center along the view axis.
    pub fn depth(&self, camera_space: &Vec3) -> f64 {
        self.d_cam - camera_space.z
    }
}

pub fn project(p: &Vec3, pose: &Pose, cam: &Camera) -> Vec2 {
    let c = pose.to_camera(p);
    cam.pix(c.x, c.y)
}

/// Weighted orthographic Procrustes: the `(R, t, s)` minimizing
/// `sum w_n |q_n - pix(P(s R p_n + t))|^2`, with `t.z = 0`.
///
/// `fixed_scale` freezes `s`. The estimate starts from the closed-form affine
/// camera projected onto scaled orthonormal rows and is then polished with
/// damped Gauss-Newton on the exact objective.
pub fn estimate_pose(
    points3d: &[Vec3],
    points2d: &[Vec2],
    weights: &[f64],
    cam: &Camera,
    fixed_scale: Option<f64>,
) -> Result<Pose> {
    let problem = PoseProblem::new(points3d, points2d, weights, cam)?;
    let init = problem.closed_form(fixed_scale)?;
    Ok(problem.polish(init, fixed_scale).0)
}

/// Polishes an existing pose against the exact objective; never returns a
/// pose with a higher cost than `start`.
pub fn refine_pose(
    start: &Pose,
    points3d: &[Vec3],
    points2d: &[Vec2],
    weights: &[f64],
    cam: &Camera,
    fixed_scale: Option<f64>,
) -> Result<Pose> {
    let problem = PoseProblem::new(points3d, points2d, weights, cam)?;
    let mut start = *start;
    if let Some(s) = fixed_scale {
        start.scale = s;
    }
    start.translation.z = 0.0;
    Ok(problem.polish(start, fixed_scale).0)
}

struct PoseProblem<'a> {
    points: &'a [Vec3],
    targets: Vec<Vec2>,
    weights: &'a [f64],
}

impl<'a> PoseProblem<'a> {
    fn new(
        points3d: &'a [Vec3],
        points2d: &[Vec2],
        weights: &'a [f64],
        cam: &Camera,
    ) -> Result<Self> {
        let n = points3d.len();
        if points2d.len() != n || weights.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: if points2d.len() != n {
                    points2d.len()
                } else {
                    weights.len()
                },
            });
        }
        if n < 3 {
            return Err(Error::TooFewPoints { needed: 3, got: n });
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Validation(
                "landmark weights must be positive".into(),
            ));
        }
        Ok(Self {
            points: points3d,
            targets: points2d.iter().map(|q| cam.unpix(q)).collect(),
            weights,
        })
    }

    fn closed_form(&self, fixed_scale: Option<f64>) -> Result<Pose> {
        let wsum: f64 = self.weights.iter().sum();
        let pbar: Vec3 = self
            .points
            .iter()
            .zip(self.weights)
            .map(|(p, w)| p * *w)
            .sum::<Vec3>()
            / wsum;
        let ubar: Vec2 = self
            .targets
            .iter()
            .zip(self.weights)
            .map(|(u, w)| u * *w)
            .sum::<Vec2>()
            / wsum;

        let mut scatter = Matrix3::zeros();
        let mut cross = Matrix2x3::zeros();
        for ((p, u), w) in self.points.iter().zip(&self.targets).zip(self.weights) {
            let dp = p - pbar;
            let du = u - ubar;
            scatter += *w * dp * dp.transpose();
            cross += *w * du * dp.transpose();
        }

        let eig = scatter.symmetric_eigen();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let [l1, l2, l3] = order.map(|k| eig.eigenvalues[k]);
        let tol = 1e-12 * l1.max(f64::MIN_POSITIVE);
        if l1 <= 0.0 || l2 <= tol {
            return Err(Error::DegenerateConfiguration(
                "3D points are collinear or coincident".into(),
            ));
        }

        // Least-squares affine camera A (2x3) with A * scatter = cross.
        let affine = if l3 > tol {
            cross * scatter.try_inverse().expect("scatter is full rank")
        } else {
            // Planar points: the in-plane block is determined by the data; the
            // out-of-plane column completes A to scaled orthonormal rows.
            let e1 = eig.eigenvectors.column(order[0]).into_owned();
            let e2 = eig.eigenvectors.column(order[1]).into_owned();
            let normal = e1.cross(&e2);
            let k1 = cross * e1 / l1;
            let k2 = cross * e2 / l2;
            let kkt = k1 * k1.transpose() + k2 * k2.transpose();
            let keig = kkt.symmetric_eigen();
            let (big, small) = if keig.eigenvalues[0] >= keig.eigenvalues[1] {
                (0, 1)
            } else {
                (1, 0)
            };
            let mag = (keig.eigenvalues[big] - keig.eigenvalues[small])
                .max(0.0)
                .sqrt();
            let mut c: Vec2 = keig.eigenvectors.column(small).into_owned() * mag;
            if c.x < 0.0 || (c.x == 0.0 && c.y < 0.0) {
                c = -c;
            }
            k1 * e1.transpose() + k2 * e2.transpose() + c * normal.transpose()
        };

        let svd = SVD::new(affine, true, true);
        let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
        let rows = u * vt;
        let s = fixed_scale.unwrap_or(0.5 * (svd.singular_values[0] + svd.singular_values[1]));
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::DegenerateConfiguration(
                "2D points do not determine a positive scale".into(),
            ));
        }
        let r1 = rows.row(0).transpose();
        let r2 = rows.row(1).transpose();
        let r3 = r1.cross(&r2);
        let rotation = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);
        let rot_pbar = rotation * pbar;
        let t = ubar - s * Vec2::new(rot_pbar.x, rot_pbar.y);
        Pose::new(rotation, Vec3::new(t.x, t.y, 0.0), s)
    }

    fn cost(&self, pose: &Pose) -> f64 {
        self.points
            .iter()
            .zip(&self.targets)
            .zip(self.weights)
            .map(|((p, u), w)| {
                let c = pose.to_camera(p);
                w * ((u.x - c.x).powi(2) + (u.y - c.y).powi(2))
            })
            .sum()
    }

    /// Levenberg-Marquardt over (rotation increment, scale, t.xy).
    fn polish(&self, start: Pose, fixed_scale: Option<f64>) -> (Pose, f64) {
        use nalgebra::{DMatrix, DVector};
        let np = if fixed_scale.is_some() { 5 } else { 6 };
        let mut pose = start;
        let mut cost = self.cost(&pose);
        let mut damping = 1e-3;
        for _ in 0..100 {
            if cost <= 0.0 {
                break;
            }
            let mut jtj = DMatrix::<f64>::zeros(np, np);
            let mut jtr = DVector::<f64>::zeros(np);
            for ((p, u), w) in self.points.iter().zip(&self.targets).zip(self.weights) {
                let q = pose.rotation * p;
                let c = pose.scale * q + pose.translation;
                let r = [u.x - c.x, u.y - c.y];
                // d(residual)/d(params): residual = u - (s * Rp + t).xy
                let skew = q.cross_matrix();
                let mut rows = [[0.0; 6]; 2];
                for (k, row) in rows.iter_mut().enumerate() {
                    for a in 0..3 {
                        row[a] = pose.scale * skew[(k, a)];
                    }
                    let mut col = 3;
                    if fixed_scale.is_none() {
                        row[col] = -q[k];
                        col += 1;
                    }
                    row[col + k] = -1.0;
                }
                for (k, row) in rows.iter().enumerate() {
                    for a in 0..np {
                        jtr[a] += w * row[a] * r[k];
                        for b in 0..np {
                            jtj[(a, b)] += w * row[a] * row[b];
                        }
                    }
                }
            }
            let mut improved = false;
            while damping < 1e12 {
                let mut lhs = jtj.clone();
                for a in 0..np {
                    lhs[(a, a)] += damping * jtj[(a, a)].max(1e-300);
                }
                let Some(step) = lhs.cholesky().map(|c| c.solve(&(-&jtr))) else {
                    damping *= 10.0;
                    continue;
                };
                let mut cand = pose;
                cand.rotation = pose.rotated_by(&Vec3::new(step[0], step[1], step[2]));
                let mut col = 3;
                if fixed_scale.is_none() {
                    cand.scale += step[col];
                    col += 1;
                }
                cand.translation.x += step[col];
                cand.translation.y += step[col + 1];
                let c = if cand.scale > 0.0 {
                    self.cost(&cand)
                } else {
                    f64::INFINITY
                };
                if c < cost {
                    let rel = (cost - c) / cost;
                    pose = cand;
                    cost = c;
                    damping = (damping * 0.1).max(1e-12);
                    improved = rel > 1e-15;
                    break;
                }
                damping *= 10.0;
            }
            if !improved {
                break;
            }
        }
        (pose, cost)
    }
}

/// Writes the camera as `key value` lines.
pub fn write_camera<W: std::io::Write>(cam: &Camera, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "width {}", cam.width)?;
    writeln!(w, "height {}", cam.height)?;
    writeln!(w, "pixels_per_unit {}", cam.pixels_per_unit)?;
    writeln!(w, "d_cam {}", cam.d_cam)
}

pub fn read_camera<R: std::io::BufRead>(reader: R) -> Result<Camera> {
    let mut vals = [None::<f64>; 4];
    const KEYS: [&str; 4] = ["width", "height", "pixels_per_unit", "d_cam"];
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let body = line.split('#').next().unwrap_or("").trim();
        let mut toks = body.split_whitespace();
        let (Some(key), Some(val), None) = (toks.next(), toks.next(), toks.next()) else {
            if body.is_empty() {
                continue;
            }
            return Err(Error::Parse {
                line: i + 1,
                message: "expected `key value`".into(),
            });
        };
        let slot = KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("unknown camera key {key:?}"),
            })?;
        vals[slot] = Some(val.parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("invalid number {val:?}"),
        })?);
    }
    let get = |k: usize| {
        vals[k].ok_or_else(|| Error::Format(format!("camera file is missing `{}`", KEYS[k])))
    };
    let (w, h) = (get(0)?, get(1)?);
    if w.fract() != 0.0
        || h.fract() != 0.0
        || w < 1.0
        || h < 1.0
        || w > u32::MAX as f64
        || h > u32::MAX as f64
    {
        return Err(Error::Validation(
            "camera size must be a positive integer".into(),
        ));
    }
    Camera::new(w as u32, h as u32, get(2)?, get(3)?)
}

pub fn save_camera(cam: &Camera, path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_camera(cam, &mut f).map_err(|e| Error::io(path, e))
}

pub fn load_camera(path: impl AsRef<std::path::Path>) -> Result<Camera> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_camera(std::io::BufReader::new(f))
}
