//! Coarse reconstruction: morphable-model coefficients and pose from 2D
//! landmarks by regularized least squares, plus the template refinement
//! baselines that adjust coefficient blocks under a frozen pose.

mod io;

pub use io::{
    load_fit, load_landmarks, read_fit, read_landmarks, save_fit, save_landmarks, write_fit,
    write_landmarks,
};

use crate::camera::{estimate_pose, project, refine_pose, Camera, Pose, Vec2};
use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};
use crate::morph::{landmark_positions, Coefficients, MorphableModel};
use nalgebra::{DMatrix, DVector, Matrix2x3};

/// Observed 2D landmarks `q_n` with per-landmark weights `w_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Vec2>,
    weights: Vec<f64>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Vec2>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Validation(format!(
                "landmark weight must be positive, got {w}"
            )));
        }
        if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::Validation("non-finite landmark position".into()));
        }
        Ok(Self { points, weights })
    }

    /// Unit weights.
    pub fn uniform(points: Vec<Vec2>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0; n])
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Copy with different points and the same weights.
    pub fn with_points(&self, points: Vec<Vec2>) -> Result<Self> {
        Self::new(points, self.weights.clone())
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.points.clone(), weights)
    }
}

/// Which coefficient blocks an optimization may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoefficientSubset {
    Identity,
    Expression,
    #[default]
    IdentityAndExpression,
}

impl CoefficientSubset {
    fn includes_id(self) -> bool {
        matches!(self, Self::Identity | Self::IdentityAndExpression)
    }

    fn includes_exp(self) -> bool {
        matches!(self, Self::Expression | Self::IdentityAndExpression)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub w_id: f64,
    pub w_exp: f64,
    pub w_tex: f64,
    pub max_outer_iters: usize,
    /// Relative change of the objective below which iteration stops.
    pub convergence_tol: f64,
    /// Keep `s = 1` instead of estimating it.
    pub freeze_scale: bool,
    pub subset: CoefficientSubset,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            w_id: 1.2,
            w_exp: 1.0,
            w_tex: 1.2e-3,
            max_outer_iters: 20,
            convergence_tol: 1e-6,
            freeze_scale: false,
            subset: CoefficientSubset::IdentityAndExpression,
        }
    }
}

impl FitConfig {
    /// Regularizers off.
    pub fn unregularized() -> Self {
        Self {
            w_id: 0.0,
            w_exp: 0.0,
            w_tex: 0.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_id", self.w_id),
            ("w_exp", self.w_exp),
            ("w_tex", self.w_tex),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Validation(format!(
                    "{name} must be a finite non-negative number"
                )));
            }
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Validation(
                "convergence_tol must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub coefficients: Coefficients,
    pub pose: Pose,
    /// Landmark loss of the returned iterate.
    pub landmark_error: f64,
    /// Total objective (landmark loss plus regularization) after each iteration.
    pub history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Floor added to the coefficient normal equations.
pub const RIDGE_FLOOR: f64 = 1e-9;

const WARMUP_ITERS: usize = 2;
const COEFFICIENT_REFINEMENTS: usize = 8;

/// `(1/N) sum w_n |q_n - project(p_n)|^2`.
pub fn landmark_error(
    shape: &TriMesh,
    model: &MorphableModel,
    pose: &Pose,
    cam: &Camera,
    lm: &LandmarkSet,
) -> Result<f64> {
    let pts = landmark_positions(shape, model)?;
    landmark_error_of_points(&pts, pose, cam, lm)
}

pub(crate) fn landmark_error_of_points(
    pts: &[Vec3],
    pose: &Pose,
    cam: &Camera,
    lm: &LandmarkSet,
) -> Result<f64> {
    if pts.len() != lm.len() {
        return Err(Error::LengthMismatch {
            expected: pts.len(),
            got: lm.len(),
        });
    }
    if pts.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pts
        .iter()
        .zip(lm.points())
        .zip(lm.weights())
        .map(|((p, q), w)| w * (q - project(p, pose, cam)).norm_squared())
        .sum();
    Ok(sum / pts.len() as f64)
}

/// `w_id |a_id|^2 + w_exp |a_exp|^2 + w_tex |a_tex|^2`.
pub fn regularization_energy(c: &Coefficients, cfg: &FitConfig) -> f64 {
    cfg.w_id * c.alpha_id.norm_squared()
        + cfg.w_exp * c.alpha_exp.norm_squared()
        + cfg.w_tex * c.alpha_tex.norm_squared()
}

/// Landmark rows of the model: mean `3N` and basis `3N x (d_id + d_exp)`.
struct LandmarkModel {
    mean: Vec<Vec3>,
    basis: DMatrix<f64>,
    d_id: usize,
}

impl LandmarkModel {
    fn new(model: &MorphableModel) -> Self {
        let lm = model.landmark_indices();
        let (d_id, d_exp) = (model.dim_id(), model.dim_exp());
        let mut basis = DMatrix::zeros(3 * lm.len(), d_id + d_exp);
        let mut mean = Vec::with_capacity(lm.len());
        for (n, &k) in lm.iter().enumerate() {
            let m = model.mean_shape();
            mean.push(Vec3::new(m[3 * k], m[3 * k + 1], m[3 * k + 2]));
            for c in 0..3 {
                let row = 3 * k + c;
                for j in 0..d_id {
                    basis[(3 * n + c, j)] = model.basis_id()[(row, j)];
                }
                for j in 0..d_exp {
                    basis[(3 * n + c, d_id + j)] = model.basis_exp()[(row, j)];
                }
            }
        }
        Self { mean, basis, d_id }
    }

    fn stacked(&self, c: &Coefficients) -> DVector<f64> {
        let mut a = DVector::zeros(self.basis.ncols());
        a.rows_mut(0, self.d_id).copy_from(&c.alpha_id);
        a.rows_mut(self.d_id, c.alpha_exp.len())
            .copy_from(&c.alpha_exp);
        a
    }

    fn points(&self, c: &Coefficients) -> Vec<Vec3> {
        let off = &self.basis * self.stacked(c);
        self.mean
            .iter()
            .enumerate()
            .map(|(n, m)| m + Vec3::new(off[3 * n], off[3 * n + 1], off[3 * n + 2]))
            .collect()
    }
}

struct Objective<'a> {
    lmodel: &'a LandmarkModel,
    lm: &'a LandmarkSet,
    cam: &'a Camera,
    cfg: &'a FitConfig,
}

impl Objective<'_> {
    fn total(&self, c: &Coefficients, pose: &Pose) -> f64 {
        let pts = self.lmodel.points(c);
        landmark_error_of_points(&pts, pose, self.cam, self.lm).unwrap_or(f64::INFINITY)
            + regularization_energy(c, self.cfg)
    }

    /// Weighted mean squared distance of the landmarks from their centroid, in px^2.
    fn spread(&self) -> f64 {
        let (pts, w) = (self.lm.points(), self.lm.weights());
        let wsum: f64 = w.iter().sum();
        let mean = pts.iter().zip(w).map(|(p, w)| p * *w).sum::<Vec2>() / wsum;
        pts.iter()
            .zip(w)
            .map(|(p, w)| w * (p - mean).norm_squared())
            .sum::<f64>()
            / wsum
    }

    fn landmark(&self, c: &Coefficients, pose: &Pose) -> f64 {
        landmark_error_of_points(&self.lmodel.points(c), pose, self.cam, self.lm)
            .unwrap_or(f64::INFINITY)
    }

    /// Exact minimizer over the active blocks with the pose held fixed.
    fn solve_coefficients(
        &self,
        c: &Coefficients,
        pose: &Pose,
        subset: CoefficientSubset,
    ) -> Result<Coefficients> {
        let d_id = self.lmodel.d_id;
        let d_all = self.lmodel.basis.ncols();
        let active: Vec<usize> = (0..d_all)
            .filter(|&j| {
                if j < d_id {
                    subset.includes_id()
                } else {
                    subset.includes_exp()
                }
            })
            .collect();
        let n = self.lm.len();
        let s = pose.scale();
        let ppu = self.cam.pixels_per_unit;
        let r = pose.rotation();
        // Image-plane Jacobian of pix(P(sRx)): ppu * s * diag(1, -1) * R[0..2].
        let proj = Matrix2x3::new(
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            -r[(1, 0)],
            -r[(1, 1)],
            -r[(1, 2)],
        ) * (ppu * s);
        let mut alpha = self.lmodel.stacked(c);
        let k = active.len();
        let mut jac = DMatrix::zeros(2 * n, k);
        for i in 0..n {
            let sw = self.lm.weights()[i].sqrt();
            for (col, &j) in active.iter().enumerate() {
                let a = Vec3::new(
                    self.lmodel.basis[(3 * i, j)],
                    self.lmodel.basis[(3 * i + 1, j)],
                    self.lmodel.basis[(3 * i + 2, j)],
                );
                let g = proj * a;
                jac[(2 * i, col)] = sw * g.x;
                jac[(2 * i + 1, col)] = sw * g.y;
            }
        }
        let inv_n = 1.0 / n as f64;
        let mut normal = jac.tr_mul(&jac) * inv_n;
        let reg: Vec<f64> = active
            .iter()
            .map(|&j| {
                if j < d_id {
                    self.cfg.w_id
                } else {
                    self.cfg.w_exp
                }
            })
            .collect();
        for (col, w) in reg.iter().enumerate() {
            normal[(col, col)] += w + RIDGE_FLOOR;
        }
        let chol = normal
            .cholesky()
            .ok_or_else(|| Error::SingularSystem("coefficient normal equations".into()))?;
        // The ridge acts on the increment, so repeated solves remove its bias.
        let mut rhs = DVector::zeros(2 * n);
        for _ in 0..COEFFICIENT_REFINEMENTS {
            let off = &self.lmodel.basis * &alpha;
            for i in 0..n {
                let p = self.lmodel.mean[i] + Vec3::new(off[3 * i], off[3 * i + 1], off[3 * i + 2]);
                let b = self.lm.points()[i] - project(&p, pose, self.cam);
                let sw = self.lm.weights()[i].sqrt();
                rhs[2 * i] = sw * b.x;
                rhs[2 * i + 1] = sw * b.y;
            }
            let mut g = jac.tr_mul(&rhs) * inv_n;
            for (col, &j) in active.iter().enumerate() {
                g[col] -= reg[col] * alpha[j];
            }
            let delta = chol.solve(&g);
            for (col, &j) in active.iter().enumerate() {
                alpha[j] += delta[col];
            }
            if delta.amax() <= 1e-14 * alpha.amax().max(1.0) {
                break;
            }
        }
        let mut out = c.clone();
        for &j in &active {
            if j < d_id {
                out.alpha_id[j] = alpha[j];
            } else {
                out.alpha_exp[j - d_id] = alpha[j];
            }
        }
        Ok(out)
    }

    /// Levenberg-Marquardt on the pose with the coefficients eliminated: every
    /// candidate pose gets its exact coefficient solve, and the step uses the
    /// pose Jacobian projected off the coefficient columns. Pushes the total
    /// after each accepted step onto `history` and stops once the relative
    /// decrease falls below `tol`.
    #[allow(clippy::too_many_arguments)]
    fn projected_pose_search(
        &self,
        c: &Coefficients,
        pose: &Pose,
        subset: CoefficientSubset,
        fixed_scale: bool,
        max_iters: usize,
        tol: f64,
        history: &mut Vec<f64>,
    ) -> Result<(Coefficients, Pose, bool)> {
        let d_id = self.lmodel.d_id;
        let active: Vec<usize> = (0..self.lmodel.basis.ncols())
            .filter(|&j| {
                if j < d_id {
                    subset.includes_id()
                } else {
                    subset.includes_exp()
                }
            })
            .collect();
        let np = if fixed_scale { 5 } else { 6 };
        let n = self.lm.len();
        let ppu = self.cam.pixels_per_unit;
        let inv_n = 1.0 / n as f64;
        let (mut coeffs, mut pose) = (c.clone(), *pose);
        let mut cost = self.total(&coeffs, &pose);
        // Decreases below `tol` times this are numerical noise.
        let floor = 1e-12 * self.spread();
        let mut damping = 1e-6;
        let mut converged = false;
        let mut iters = 0;
        while iters < max_iters {
            if !(cost > 0.0) {
                converged = true;
                break;
            }
            let pts = self.lmodel.points(&coeffs);
            let r = pose.rotation();
            let s = pose.scale();
            let mut jp = DMatrix::<f64>::zeros(2 * n, np);
            let mut ja = DMatrix::<f64>::zeros(2 * n, active.len());
            let mut res = DVector::<f64>::zeros(2 * n);
            for (i, p) in pts.iter().enumerate() {
                let sw = (self.lm.weights()[i] * inv_n).sqrt();
                let q = r * p;
                let e = self.lm.points()[i] - project(p, &pose, self.cam);
                let skew = q.cross_matrix();
                for a in 0..2 {
                    // Pixel derivative of camera coordinate `a`; y is flipped.
                    let sign = if a == 0 { ppu } else { -ppu } * sw;
                    let row = 2 * i + a;
                    res[row] = sw * e[a];
                    for b in 0..3 {
                        jp[(row, b)] = -sign * s * skew[(a, b)];
                    }
                    let mut col = 3;
                    if !fixed_scale {
                        jp[(row, col)] = sign * q[a];
                        col += 1;
                    }
                    jp[(row, col + a)] = sign;
                    for (m, &j) in active.iter().enumerate() {
                        let dir = Vec3::new(
                            self.lmodel.basis[(3 * i, j)],
                            self.lmodel.basis[(3 * i + 1, j)],
                            self.lmodel.basis[(3 * i + 2, j)],
                        );
                        ja[(row, m)] = sign * s * (r.row(a) * dir)[0];
                    }
                }
            }
            let mut normal = ja.tr_mul(&ja);
            for (m, &j) in active.iter().enumerate() {
                normal[(m, m)] += if j < d_id {
                    self.cfg.w_id
                } else {
                    self.cfg.w_exp
                } + RIDGE_FLOOR;
            }
            let Some(chol) = normal.cholesky() else {
                break;
            };
            let jred = &jp - &ja * chol.solve(&ja.tr_mul(&jp));
            let jtj = jred.tr_mul(&jred);
            let g = jred.tr_mul(&res);
            let mut improved = false;
            while damping < 1e12 {
                iters += 1;
                let mut lhs = jtj.clone();
                for a in 0..np {
                    lhs[(a, a)] += damping * jtj[(a, a)].max(f64::MIN_POSITIVE);
                }
                let Some(step) = lhs.cholesky().map(|ch| ch.solve(&g)) else {
                    damping *= 10.0;
                    continue;
                };
                let mut col = 3;
                let ds = if fixed_scale {
                    0.0
                } else {
                    col += 1;
                    step[3]
                };
                let cand_pose = pose.perturbed(
                    &Vec3::new(step[0], step[1], step[2]),
                    ds,
                    &Vec2::new(step[col], step[col + 1]),
                );
                let (cand, value) = if cand_pose.scale() > 0.0 {
                    let cand = self.solve_coefficients(&coeffs, &cand_pose, subset)?;
                    let value = self.total(&cand, &cand_pose);
                    (cand, value)
                } else {
                    (coeffs.clone(), f64::INFINITY)
                };
                if value < cost {
                    improved = (cost - value) > tol * cost.max(floor);
                    history.push(value);
                    coeffs = cand;
                    pose = cand_pose;
                    cost = value;
                    damping = (damping * 0.1).max(1e-15);
                    break;
                }
                damping *= 10.0;
                if iters >= max_iters {
                    break;
                }
            }
            if !improved {
                converged = true;
                break;
            }
        }
        Ok((coeffs, pose, converged))
    }
}

fn check_inputs(model: &MorphableModel, lm: &LandmarkSet) -> Result<()> {
    if lm.len() != model.landmark_count() {
        return Err(Error::LengthMismatch {
            expected: model.landmark_count(),
            got: lm.len(),
        });
    }
    if lm.len() < 4 {
        return Err(Error::TooFewPoints {
            needed: 4,
            got: lm.len(),
        });
    }
    Ok(())
}

/// Warms up with alternating pose and exact coefficient steps, then runs a
/// damped Gauss-Newton search over the pose alone, solving the coefficients
/// exactly for every candidate pose. Stops once the relative decrease of the
/// objective drops below `cfg.convergence_tol`.
///
/// The texture block is not observable from landmarks and stays zero.
pub fn fit(
    model: &MorphableModel,
    lm: &LandmarkSet,
    cam: &Camera,
    cfg: &FitConfig,
) -> Result<FitResult> {
    check_inputs(model, lm)?;
    cfg.validate()?;
    let lmodel = LandmarkModel::new(model);
    let obj = Objective {
        lmodel: &lmodel,
        lm,
        cam,
        cfg,
    };
    let fixed_scale = cfg.freeze_scale.then_some(1.0);
    let mut coeffs = model.zero_coefficients();
    let mut pose: Option<Pose> = None;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_outer_iters.min(WARMUP_ITERS) {
        iterations += 1;
        let pts = lmodel.points(&coeffs);
        let fresh = estimate_pose(&pts, lm.points(), lm.weights(), cam, fixed_scale)?;
        let next_pose = match pose {
            Some(p) => {
                let polished = refine_pose(&p, &pts, lm.points(), lm.weights(), cam, fixed_scale)?;
                if obj.landmark(&coeffs, &fresh) < obj.landmark(&coeffs, &polished) {
                    fresh
                } else {
                    polished
                }
            }
            None => fresh,
        };
        pose = Some(next_pose);

        let before = obj.total(&coeffs, &next_pose);
        let candidate = obj.solve_coefficients(&coeffs, &next_pose, cfg.subset)?;
        if obj.total(&candidate, &next_pose) <= before {
            coeffs = candidate;
        }
        let value = obj.total(&coeffs, &next_pose);
        history.push(value);
        if value == 0.0 {
            converged = true;
            break;
        }
    }
    let mut pose = pose.unwrap_or_default();
    if !converged && iterations < cfg.max_outer_iters {
        let before = history.len();
        let (polished, polished_pose, done) = obj.projected_pose_search(
            &coeffs,
            &pose,
            cfg.subset,
            cfg.freeze_scale,
            cfg.max_outer_iters - iterations,
            cfg.convergence_tol,
            &mut history,
        )?;
        iterations += (history.len() - before).max(1);
        coeffs = polished;
        pose = polished_pose;
        converged = done;
    }
    Ok(FitResult {
        landmark_error: obj.landmark(&coeffs, &pose),
        coefficients: coeffs,
        pose,
        history,
        converged,
        iterations,
    })
}

/// Re-fits only the blocks in `subset` with the pose frozen to `init.pose`
/// and no regularization. The other blocks keep their `init` values.
pub fn template_refine(
    model: &MorphableModel,
    init: &FitResult,
    lm: &LandmarkSet,
    cam: &Camera,
    subset: CoefficientSubset,
) -> Result<FitResult> {
    check_inputs(model, lm)?;
    let cfg = FitConfig {
        subset,
        ..FitConfig::unregularized()
    };
    let lmodel = LandmarkModel::new(model);
    let obj = Objective {
        lmodel: &lmodel,
        lm,
        cam,
        cfg: &cfg,
    };
    let start = init.coefficients.clone();
    if start.alpha_id.len() != model.dim_id() || start.alpha_exp.len() != model.dim_exp() {
        return Err(Error::DimensionMismatch {
            what: "initial coefficients",
            expected: model.dim_id() + model.dim_exp(),
            got: start.alpha_id.len() + start.alpha_exp.len(),
        });
    }
    let before = obj.total(&start, &init.pose);
    let candidate = obj.solve_coefficients(&start, &init.pose, subset)?;
    let coefficients = if obj.total(&candidate, &init.pose) <= before {
        candidate
    } else {
        start
    };
    let value = obj.total(&coefficients, &init.pose);
    Ok(FitResult {
        landmark_error: value,
        coefficients,
        pose: init.pose,
        history: vec![before, value],
        converged: true,
        iterations: 1,
    })
}
