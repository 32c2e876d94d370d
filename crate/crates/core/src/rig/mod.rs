//! Blendshape rig generation by deformation transfer, rig evaluation and
//! eyeball sphere fitting.

mod io;
mod templates;

pub use io::{
    fnv1a64, load_beta_sequence, load_rig, load_rig_json, read_beta_sequence, read_rig,
    rig_to_json, save_rig, save_rig_json, write_rig, RigJson, CFR1_MAGIC, CFR1_VERSION,
    RIG_JSON_FORMAT,
};
pub use templates::{standard_templates, STANDARD_EXPRESSION_NAMES};

use crate::error::{Error, Result};
use crate::mesh::{vertex_normals, TriMesh, Vec3};
use crate::morph::regions::eye_vertices;
use crate::morph::MorphableModel;
use crate::sparse::{Cholesky, SymmetricBuilder};
use nalgebra::{Matrix3, Matrix4, Vector4};

/// Neutral template `S_0` and expressions `S_i` sharing its topology.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionTemplateSet {
    neutral: TriMesh,
    expressions: Vec<TriMesh>,
    names: Vec<String>,
}

impl ExpressionTemplateSet {
    pub fn new(neutral: TriMesh, expressions: Vec<TriMesh>, names: Vec<String>) -> Result<Self> {
        if expressions.is_empty() {
            return Err(Error::Validation(
                "at least one expression is required".into(),
            ));
        }
        if names.len() != expressions.len() {
            return Err(Error::LengthMismatch {
                expected: expressions.len(),
                got: names.len(),
            });
        }
        if expressions.iter().any(|e| !e.same_topology(&neutral)) {
            return Err(Error::TopologyMismatch);
        }
        check_names(&names)?;
        Ok(Self {
            neutral,
            expressions,
            names,
        })
    }

    pub fn neutral(&self) -> &TriMesh {
        &self.neutral
    }

    pub fn expressions(&self) -> &[TriMesh] {
        &self.expressions
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.expressions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expressions.is_empty()
    }
}

fn check_names(names: &[String]) -> Result<()> {
    let mut sorted: Vec<&String> = names.iter().collect();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation(format!(
            "duplicate expression name {:?}",
            w[0]
        )));
    }
    if names.iter().any(|n| n.len() > u16::MAX as usize) {
        return Err(Error::Validation("expression name too long".into()));
    }
    Ok(())
}

/// Sphere standing in for an eyeball.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeballSphere {
    pub center: Vec3,
    pub radius: f64,
    /// Distance the center was moved inward.
    pub inset: f64,
    /// Vertices the sphere replaces visually.
    pub vertex_region: Vec<usize>,
}

/// Neutral mesh plus `m` per-vertex delta fields.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendshapeRig {
    neutral: TriMesh,
    neutral_flat: Vec<f64>,
    /// Expression-major, `3V` values per expression.
    deltas: Vec<f64>,
    names: Vec<String>,
    eyeballs: Vec<EyeballSphere>,
}

impl BlendshapeRig {
    /// `deltas[i]` holds one displacement per neutral vertex.
    pub fn new(neutral: TriMesh, deltas: Vec<Vec<Vec3>>, names: Vec<String>) -> Result<Self> {
        if names.len() != deltas.len() {
            return Err(Error::LengthMismatch {
                expected: deltas.len(),
                got: names.len(),
            });
        }
        check_names(&names)?;
        let v = neutral.vertex_count();
        let mut flat = Vec::with_capacity(3 * v * deltas.len());
        for d in &deltas {
            if d.len() != v {
                return Err(Error::LengthMismatch {
                    expected: v,
                    got: d.len(),
                });
            }
            flat.extend(d.iter().flat_map(|p| [p.x, p.y, p.z]));
        }
        Ok(Self {
            neutral_flat: neutral
                .vertices()
                .iter()
                .flat_map(|p| [p.x, p.y, p.z])
                .collect(),
            neutral,
            deltas: flat,
            names,
            eyeballs: Vec::new(),
        })
    }

    pub fn with_eyeballs(mut self, eyeballs: Vec<EyeballSphere>) -> Result<Self> {
        let v = self.neutral.vertex_count();
        for e in &eyeballs {
            if !(e.radius > 0.0) {
                return Err(Error::Validation("eyeball radius must be positive".into()));
            }
            if e.vertex_region.iter().any(|&i| i >= v) {
                return Err(Error::Validation(
                    "eyeball region vertex out of range".into(),
                ));
            }
        }
        self.eyeballs = eyeballs;
        Ok(self)
    }

    pub fn neutral(&self) -> &TriMesh {
        &self.neutral
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn eyeballs(&self) -> &[EyeballSphere] {
        &self.eyeballs
    }

    pub fn expression_count(&self) -> usize {
        self.names.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.neutral.vertex_count()
    }

    /// Flat `3V` delta of expression `i`.
    pub fn delta(&self, i: usize) -> &[f64] {
        let n = self.neutral_flat.len();
        &self.deltas[i * n..(i + 1) * n]
    }

    pub fn delta_vectors(&self, i: usize) -> Vec<Vec3> {
        self.delta(i)
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect()
    }

    /// Flat `3V` neutral positions.
    pub fn neutral_flat(&self) -> &[f64] {
        &self.neutral_flat
    }
}

/// Number of weights outside the nominal [0, 1] range.
pub fn beta_out_of_range(beta: &[f64]) -> usize {
    beta.iter().filter(|b| !(0.0..=1.0).contains(*b)).count()
}

/// `S* = S_0 + sum_i beta_i delta_i`.
pub fn evaluate_rig(rig: &BlendshapeRig, beta: &[f64]) -> Result<TriMesh> {
    let mut flat = vec![0.0; rig.neutral_flat.len()];
    evaluate_rig_into(rig, beta, &mut flat)?;
    let outside = beta_out_of_range(beta);
    if outside > 0 {
        log::debug!("{outside} blend weights outside [0, 1]");
    }
    rig.neutral.with_vertices(
        flat.chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect(),
    )
}

/// Allocation-free evaluation into a flat `3V` buffer.
pub fn evaluate_rig_into(rig: &BlendshapeRig, beta: &[f64], out: &mut [f64]) -> Result<()> {
    let m = rig.expression_count();
    if beta.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            got: beta.len(),
        });
    }
    let n = rig.neutral_flat.len();
    if out.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: out.len(),
        });
    }
    out.copy_from_slice(&rig.neutral_flat);
    for (b, d) in beta.iter().zip(rig.deltas.chunks_exact(n)) {
        if *b == 0.0 {
            continue;
        }
        for (o, x) in out.iter_mut().zip(d) {
            *o += b * x;
        }
    }
    Ok(())
}

/// Columns `(v2 - v1, v3 - v1, v4 - v1)` with
/// `v4 = v1 + (e2 x e3) / sqrt(|e2 x e3|)`.
pub fn triangle_frame(v1: &Vec3, v2: &Vec3, v3: &Vec3) -> Result<Matrix3<f64>> {
    frame_or_degenerate(v1, v2, v3).ok_or(Error::DegenerateTriangle(0))
}

fn frame_or_degenerate(v1: &Vec3, v2: &Vec3, v3: &Vec3) -> Option<Matrix3<f64>> {
    let (e2, e3) = (v2 - v1, v3 - v1);
    let n = e2.cross(&e3);
    let len = n.norm();
    let scale = e2.norm_squared().max(e3.norm_squared());
    if !(len > 1e-12 * scale) || !len.is_finite() {
        return None;
    }
    let e4 = n / len.sqrt();
    Some(Matrix3::from_columns(&[e2, e3, e4]))
}

fn face_frames(mesh: &TriMesh) -> Result<Vec<Matrix3<f64>>> {
    let v = mesh.vertices();
    mesh.faces()
        .iter()
        .enumerate()
        .map(|(j, f)| {
            frame_or_degenerate(&v[f[0]], &v[f[1]], &v[f[2]]).ok_or(Error::DegenerateTriangle(j))
        })
        .collect()
}

/// Per-face `Q_j = frame(deformed) * frame(source)^-1`.
pub fn deformation_gradients(source: &TriMesh, deformed: &TriMesh) -> Result<Vec<Matrix3<f64>>> {
    if !source.same_topology(deformed) {
        return Err(Error::TopologyMismatch);
    }
    let src = face_frames(source)?;
    let v = deformed.vertices();
    src.iter()
        .zip(deformed.faces())
        .enumerate()
        .map(|(j, (fs, f))| {
            let inv = fs.try_inverse().ok_or(Error::DegenerateTriangle(j))?;
            // A collapsed deformed face still has a defined (singular) gradient.
            let (e2, e3) = (v[f[1]] - v[f[0]], v[f[2]] - v[f[0]]);
            let n = e2.cross(&e3);
            let len = n.norm();
            let e4 = if len > 0.0 {
                n / len.sqrt()
            } else {
                Vec3::zeros()
            };
            Ok(Matrix3::from_columns(&[e2, e3, e4]) * inv)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransferOptions {
    /// Weight each face's term by the target-neutral face area.
    pub area_weighted: bool,
}

/// Deformation transfer onto a fixed target neutral, factored once and
/// reused for every expression.
///
/// Unknowns are the target vertices plus one auxiliary fourth vertex per
/// face, which keeps the objective `sum_j |Q_j - Q'_j|_F^2` quadratic. The
/// global translation is fixed afterwards by the pin rule.
pub struct DeformationTransfer {
    source_neutral: TriMesh,
    source_inv: Vec<Matrix3<f64>>,
    target_neutral: TriMesh,
    /// Per face: weight and the inverse target frame.
    target_inv: Vec<(f64, Matrix3<f64>)>,
    chol: Cholesky,
}

impl std::fmt::Debug for DeformationTransfer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeformationTransfer")
            .field("vertices", &self.target_neutral.vertex_count())
            .field("faces", &self.target_neutral.face_count())
            .finish()
    }
}

impl DeformationTransfer {
    pub fn new(
        source_neutral: &TriMesh,
        target_neutral: &TriMesh,
        opts: TransferOptions,
    ) -> Result<Self> {
        if !source_neutral.same_topology(target_neutral) {
            return Err(Error::TopologyMismatch);
        }
        let source_inv = face_frames(source_neutral)?
            .iter()
            .enumerate()
            .map(|(j, f)| f.try_inverse().ok_or(Error::DegenerateTriangle(j)))
            .collect::<Result<Vec<_>>>()?;
        let frames = face_frames(target_neutral)?;
        let v = target_neutral.vertex_count();
        let nf = frames.len();
        let mut target_inv = Vec::with_capacity(nf);
        let mut a = SymmetricBuilder::new(v + nf);
        let mut diag_sum = 0.0;
        for (j, (frame, f)) in frames.iter().zip(target_neutral.faces()).enumerate() {
            let g = frame.try_inverse().ok_or(Error::DegenerateTriangle(j))?;
            let w = if opts.area_weighted {
                target_neutral.face_area(j)
            } else {
                1.0
            };
            let idx = [f[0], f[1], f[2], v + j];
            for col in 0..3 {
                let row = face_row(&g, col);
                let entries: Vec<(usize, f64)> = idx.iter().copied().zip(row).collect();
                diag_sum += w * row.iter().map(|x| x * x).sum::<f64>();
                a.add_outer(&entries, w);
            }
            target_inv.push((w, g));
        }
        // Translation gauge: pin vertex 0 softly; the solution is shifted to
        // the pin rule afterwards.
        a.add(0, 0, diag_sum / (v + nf) as f64);
        Ok(Self {
            source_neutral: source_neutral.clone(),
            source_inv,
            target_neutral: target_neutral.clone(),
            target_inv,
            chol: a.factor()?,
        })
    }

    /// Transfers the deformation `source_neutral -> deformed` onto the target.
    pub fn transfer(&self, deformed: &TriMesh) -> Result<TriMesh> {
        Ok(self
            .transfer_many(std::slice::from_ref(deformed))?
            .remove(0))
    }

    /// Transfers several deformed source meshes with one multi-column solve.
    pub fn transfer_many(&self, deformed: &[TriMesh]) -> Result<Vec<TriMesh>> {
        let v = self.target_neutral.vertex_count();
        let nf = self.target_inv.len();
        let mut rhs = Vec::with_capacity(3 * deformed.len());
        for d in deformed {
            if !d.same_topology(&self.source_neutral) {
                return Err(Error::TopologyMismatch);
            }
            let q = self.gradients(d);
            for c in 0..3 {
                let mut b = vec![0.0; v + nf];
                for (j, ((w, g), f)) in self
                    .target_inv
                    .iter()
                    .zip(self.target_neutral.faces())
                    .enumerate()
                {
                    let idx = [f[0], f[1], f[2], v + j];
                    for col in 0..3 {
                        let row = face_row(g, col);
                        let target = q[j][(c, col)];
                        for (k, &i) in idx.iter().enumerate() {
                            b[i] += w * row[k] * target;
                        }
                    }
                }
                rhs.push(b);
            }
        }
        let sol = self.chol.solve_columns(&rhs)?;
        deformed
            .iter()
            .enumerate()
            .map(|(e, d)| {
                let src = self.source_neutral.vertices();
                let pin = pin_vertex(src, d.vertices());
                let want = self.target_neutral.vertices()[pin] + (d.vertices()[pin] - src[pin]);
                let cols = &sol[3 * e..3 * e + 3];
                let shift = want - Vec3::new(cols[0][pin], cols[1][pin], cols[2][pin]);
                let verts = (0..v)
                    .map(|i| Vec3::new(cols[0][i], cols[1][i], cols[2][i]) + shift)
                    .collect();
                self.target_neutral.with_vertices(verts)
            })
            .collect()
    }

    fn gradients(&self, deformed: &TriMesh) -> Vec<Matrix3<f64>> {
        let v = deformed.vertices();
        deformed
            .faces()
            .iter()
            .zip(&self.source_inv)
            .map(|(f, inv)| {
                let (e2, e3) = (v[f[1]] - v[f[0]], v[f[2]] - v[f[0]]);
                let n = e2.cross(&e3);
                let len = n.norm();
                let e4 = if len > 0.0 {
                    n / len.sqrt()
                } else {
                    Vec3::zeros()
                };
                Matrix3::from_columns(&[e2, e3, e4]) * inv
            })
            .collect()
    }

    /// `sum_j w_j |Q_j - Q'_j|_F^2` for a candidate target expression.
    pub fn objective(&self, deformed: &TriMesh, candidate: &TriMesh) -> Result<f64> {
        if !candidate.same_topology(&self.target_neutral) {
            return Err(Error::TopologyMismatch);
        }
        let q = self.gradients(deformed);
        let cv = candidate.vertices();
        Ok(self
            .target_inv
            .iter()
            .zip(self.target_neutral.faces())
            .zip(&q)
            .map(|(((w, g), f), qj)| {
                let (e2, e3) = (cv[f[1]] - cv[f[0]], cv[f[2]] - cv[f[0]]);
                let n = e2.cross(&e3);
                let len = n.norm();
                let e4 = if len > 0.0 {
                    n / len.sqrt()
                } else {
                    Vec3::zeros()
                };
                let qt = Matrix3::from_columns(&[e2, e3, e4]) * g;
                w * (qt - qj).norm_squared()
            })
            .sum())
    }
}

/// Coefficients of `(x1, x2, x3, x4)` in column `col` of `X G`, where
/// `X = (x2 - x1, x3 - x1, x4 - x1)`.
fn face_row(g: &Matrix3<f64>, col: usize) -> [f64; 4] {
    let (a, b, c) = (g[(0, col)], g[(1, col)], g[(2, col)]);
    [-(a + b + c), a, b, c]
}

/// Vertex with the smallest source displacement, lowest index on ties.
fn pin_vertex(neutral: &[Vec3], deformed: &[Vec3]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, (a, b)) in neutral.iter().zip(deformed).enumerate() {
        let d = (b - a).norm_squared();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Transfers expression `i` of `templates` onto `target_neutral`.
pub fn transfer_expression(
    templates: &ExpressionTemplateSet,
    i: usize,
    target_neutral: &TriMesh,
) -> Result<TriMesh> {
    let expr = templates
        .expressions
        .get(i)
        .ok_or_else(|| Error::Validation(format!("expression index {i} out of range")))?;
    DeformationTransfer::new(
        &templates.neutral,
        target_neutral,
        TransferOptions::default(),
    )?
    .transfer(expr)
}

/// Transfers every template expression and stores the deltas.
pub fn build_rig(
    templates: &ExpressionTemplateSet,
    target_neutral: &TriMesh,
) -> Result<BlendshapeRig> {
    build_rig_with(templates, target_neutral, TransferOptions::default())
}

pub fn build_rig_with(
    templates: &ExpressionTemplateSet,
    target_neutral: &TriMesh,
    opts: TransferOptions,
) -> Result<BlendshapeRig> {
    let dt = DeformationTransfer::new(&templates.neutral, target_neutral, opts)?;
    let meshes = dt.transfer_many(&templates.expressions)?;
    let deltas = meshes
        .iter()
        .map(|m| {
            m.vertices()
                .iter()
                .zip(target_neutral.vertices())
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect();
    BlendshapeRig::new(target_neutral.clone(), deltas, templates.names.clone())
}

/// Default distance the eyeball spheres sit inside the head surface.
pub const DEFAULT_EYEBALL_INSET: f64 = 0.02;

/// Rig for a reconstruction of `model`: the standard templates transferred
/// onto `neutral`, plus one eyeball sphere per eye when `eyeball_inset` is
/// given. An eye whose region cannot be fitted is skipped with a warning.
pub fn build_model_rig(
    model: &MorphableModel,
    neutral: &TriMesh,
    eyeball_inset: Option<f64>,
) -> Result<BlendshapeRig> {
    let rig = build_rig(&standard_templates(model)?, neutral)?;
    let Some(inset) = eyeball_inset else {
        return Ok(rig);
    };
    let mut spheres = Vec::new();
    for right in [false, true] {
        let region = eye_vertices(neutral, model, right, 1.0);
        match fit_eyeball(neutral, &region, inset) {
            Ok(s) => spheres.push(s),
            Err(e) => log::warn!(
                "skipping {} eyeball: {e}",
                if right { "right" } else { "left" }
            ),
        }
    }
    rig.with_eyeballs(spheres)
}

/// Algebraic least-squares sphere through the region vertices, then moved
/// `inset` along the inward mean vertex normal of the region.
pub fn fit_eyeball(mesh: &TriMesh, eye_region: &[usize], inset: f64) -> Result<EyeballSphere> {
    if eye_region.len() < 4 {
        return Err(Error::DegenerateRegion(format!(
            "need at least 4 vertices, got {}",
            eye_region.len()
        )));
    }
    let verts = mesh.vertices();
    if let Some(&i) = eye_region.iter().find(|&&i| i >= verts.len()) {
        return Err(Error::Validation(format!("region vertex {i} out of range")));
    }
    let pts: Vec<Vec3> = eye_region.iter().map(|&i| verts[i]).collect();
    // Work relative to the centroid for conditioning.
    let centroid = pts.iter().sum::<Vec3>() / pts.len() as f64;
    let extent = pts
        .iter()
        .map(|p| (p - centroid).norm())
        .fold(0.0, f64::max);
    if !(extent > 0.0) {
        return Err(Error::DegenerateRegion(
            "all region vertices coincide".into(),
        ));
    }
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = (p - centroid) / extent;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    if eig.eigenvalues.min() < 1e-10 * eig.eigenvalues.max() {
        return Err(Error::DegenerateRegion(
            "region vertices are coplanar".into(),
        ));
    }
    // |p|^2 = 2 c.p + k with k = r^2 - |c|^2, in centroid-relative units.
    let mut ata = Matrix4::zeros();
    let mut atb = Vector4::zeros();
    for p in &pts {
        let d = (p - centroid) / extent;
        let row = Vector4::new(2.0 * d.x, 2.0 * d.y, 2.0 * d.z, 1.0);
        ata += row * row.transpose();
        atb += row * d.norm_squared();
    }
    let sol = ata
        .cholesky()
        .ok_or_else(|| Error::DegenerateRegion("sphere fit is singular".into()))?
        .solve(&atb);
    let c = Vec3::new(sol[0], sol[1], sol[2]);
    let r2 = sol[3] + c.norm_squared();
    if !(r2 > 0.0) {
        return Err(Error::DegenerateRegion(
            "sphere fit has no real radius".into(),
        ));
    }
    let center = centroid + c * extent;
    let radius = r2.sqrt() * extent;
    let normals = vertex_normals(mesh).normals;
    let outward = eye_region.iter().map(|&i| normals[i]).sum::<Vec3>();
    let inward = -outward.try_normalize(1e-12).unwrap_or_else(Vec3::z);
    Ok(EyeballSphere {
        center: center + inward * inset,
        radius,
        inset,
        vertex_region: eye_region.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_of_unit_right_triangle() {
        let f = triangle_frame(&Vec3::zeros(), &Vec3::x(), &Vec3::y()).unwrap();
        assert_eq!(f, Matrix3::identity());
    }

    #[test]
    fn frame_third_column_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let mut r = || Vec3::new(rng.random(), rng.random(), rng.random());
            let (a, b, c) = (r(), r(), r());
            let f = triangle_frame(&a, &b, &c).unwrap();
            let area2 = (b - a).cross(&(c - a)).norm();
            assert!((f.column(2).norm() - area2.sqrt()).abs() < 1e-12);
            assert!(f.column(2).dot(&(b - a)).abs() < 1e-12);
        }
        assert!(matches!(
            triangle_frame(&Vec3::zeros(), &Vec3::x(), &(2.0 * Vec3::x())),
            Err(Error::DegenerateTriangle(_))
        ));
    }

    fn bumpy_sphere(seed: u64) -> TriMesh {
        let s = icosphere(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = s
            .vertices()
            .iter()
            .map(|p| p * (1.0 + 0.1 * rng.random::<f64>()))
            .collect();
        s.with_vertices(v).unwrap()
    }

    #[test]
    fn gradients_identity_scale_rotation() {
        let s = bumpy_sphere(2);
        for q in deformation_gradients(&s, &s).unwrap() {
            assert!((q - Matrix3::identity()).amax() < 1e-12);
        }
        let doubled = s
            .with_vertices(s.vertices().iter().map(|p| p * 2.0).collect())
            .unwrap();
        for q in deformation_gradients(&s, &doubled).unwrap() {
            assert!((q - Matrix3::<f64>::identity() * 2.0).amax() < 1e-12);
        }
        let r = Rotation3::from_euler_angles(0.3, -0.7, 1.1).into_inner();
        let rotated = s
            .with_vertices(s.vertices().iter().map(|p| r * p).collect())
            .unwrap();
        for q in deformation_gradients(&s, &rotated).unwrap() {
            assert!((q - r).amax() < 1e-9);
        }
    }

    #[test]
    fn gradients_reconstruct_all_four_vertices() {
        let s = bumpy_sphere(3);
        let d = bumpy_sphere(4);
        let q = deformation_gradients(&s, &d).unwrap();
        for (j, f) in s.faces().iter().enumerate() {
            let fs = triangle_frame(
                &s.vertices()[f[0]],
                &s.vertices()[f[1]],
                &s.vertices()[f[2]],
            )
            .unwrap();
            let fd = triangle_frame(
                &d.vertices()[f[0]],
                &d.vertices()[f[1]],
                &d.vertices()[f[2]],
            )
            .unwrap();
            let v1 = s.vertices()[f[0]];
            let t = d.vertices()[f[0]] - q[j] * v1;
            let src = [v1, v1 + fs.column(0), v1 + fs.column(1), v1 + fs.column(2)];
            let w1 = d.vertices()[f[0]];
            let dst = [w1, w1 + fd.column(0), w1 + fd.column(1), w1 + fd.column(2)];
            for k in 0..4 {
                assert!((q[j] * src[k] + t - dst[k]).norm() < 1e-10);
            }
        }
    }

    fn localized(mesh: &TriMesh, center: Vec3, amp: Vec3) -> TriMesh {
        mesh.with_vertices(
            mesh.vertices()
                .iter()
                .map(|p| p + amp * (-(p - center).norm_squared() / 0.05).exp())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn transfer_identities() {
        let s0 = bumpy_sphere(5);
        let si = localized(&s0, Vec3::z(), Vec3::new(0.0, 0.1, 0.05));
        let set = ExpressionTemplateSet::new(
            s0.clone(),
            vec![si.clone(), s0.clone()],
            vec!["a".into(), "null".into()],
        )
        .unwrap();

        let onto_self = transfer_expression(&set, 0, &s0).unwrap();
        let err = onto_self
            .vertices()
            .iter()
            .zip(si.vertices())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");

        let target = bumpy_sphere(6);
        let null = transfer_expression(&set, 1, &target).unwrap();
        let err = null
            .vertices()
            .iter()
            .zip(target.vertices())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");

        let c = Vec3::new(0.3, -1.0, 2.0);
        let shifted = s0
            .with_vertices(s0.vertices().iter().map(|p| p + c).collect())
            .unwrap();
        let out = transfer_expression(&set, 0, &shifted).unwrap();
        let err = out
            .vertices()
            .iter()
            .zip(si.vertices())
            .map(|(a, b)| (a - b - c).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");

        // The solution is no worse than the naive displacement copy.
        let dt = DeformationTransfer::new(&s0, &target, TransferOptions::default()).unwrap();
        let solved = dt.transfer(&si).unwrap();
        let naive = target
            .with_vertices(
                target
                    .vertices()
                    .iter()
                    .zip(si.vertices().iter().zip(s0.vertices()))
                    .map(|(t, (a, b))| t + a - b)
                    .collect(),
            )
            .unwrap();
        assert!(dt.objective(&si, &solved).unwrap() <= dt.objective(&si, &naive).unwrap());
    }

    #[test]
    fn area_weighting_keeps_exact_cases() {
        let s0 = bumpy_sphere(7);
        let si = localized(&s0, Vec3::x(), Vec3::new(0.05, 0.0, 0.1));
        let dt = DeformationTransfer::new(
            &s0,
            &s0,
            TransferOptions {
                area_weighted: true,
            },
        )
        .unwrap();
        let out = dt.transfer(&si).unwrap();
        let err = out
            .vertices()
            .iter()
            .zip(si.vertices())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-6);
    }

    #[test]
    fn rig_build_and_locality() {
        let s0 = bumpy_sphere(8);
        let si = localized(&s0, Vec3::z(), Vec3::new(0.0, 0.0, 0.15));
        let set =
            ExpressionTemplateSet::new(s0.clone(), vec![si.clone()], vec!["puff".into()]).unwrap();
        let rig = build_rig(&set, &s0).unwrap();
        assert_eq!(rig.expression_count(), 1);
        for (d, (a, b)) in rig
            .delta_vectors(0)
            .iter()
            .zip(si.vertices().iter().zip(s0.vertices()))
        {
            assert!((d - (a - b)).norm() < 1e-6);
        }
        let target = bumpy_sphere(9);
        let rig = build_rig(&set, &target).unwrap();
        let deltas = rig.delta_vectors(0);
        let max = deltas.iter().map(|d| d.norm()).fold(0.0, f64::max);
        for (d, p) in deltas.iter().zip(s0.vertices()) {
            if p.z < -0.3 {
                assert!(d.norm() < 0.05 * max, "{} vs {max}", d.norm());
            }
        }
    }

    #[test]
    fn evaluation_algebra() {
        let s0 = bumpy_sphere(10);
        let exprs: Vec<TriMesh> = (0..3)
            .map(|k| {
                localized(
                    &s0,
                    Vec3::new(k as f64 - 1.0, 0.0, 0.5),
                    Vec3::new(0.0, 0.05, 0.1),
                )
            })
            .collect();
        let set =
            ExpressionTemplateSet::new(s0.clone(), exprs, vec!["a".into(), "b".into(), "c".into()])
                .unwrap();
        let rig = build_rig(&set, &s0).unwrap();
        assert_eq!(evaluate_rig(&rig, &[0.0; 3]).unwrap(), *rig.neutral());
        let e1 = evaluate_rig(&rig, &[0.0, 1.0, 0.0]).unwrap();
        for ((p, n), d) in e1
            .vertices()
            .iter()
            .zip(rig.neutral().vertices())
            .zip(rig.delta_vectors(1))
        {
            assert_eq!(*p, n + d);
        }
        assert!(matches!(
            evaluate_rig(&rig, &[0.0; 2]),
            Err(Error::LengthMismatch { .. })
        ));
        assert_eq!(beta_out_of_range(&[-0.1, 0.5, 1.2]), 2);
    }

    #[test]
    fn rig_validation() {
        let s0 = icosphere(1);
        assert!(
            BlendshapeRig::new(s0.clone(), vec![vec![Vec3::zeros(); 3]], vec!["a".into()]).is_err()
        );
        let d = vec![Vec3::zeros(); s0.vertex_count()];
        assert!(BlendshapeRig::new(
            s0.clone(),
            vec![d.clone(), d.clone()],
            vec!["a".into(), "a".into()]
        )
        .is_err());
        assert!(
            ExpressionTemplateSet::new(s0.clone(), vec![icosphere(2)], vec!["x".into()]).is_err()
        );
    }

    #[test]
    fn eyeball_fit() {
        let c = Vec3::new(0.3, -0.2, 0.5);
        let r = 0.12;
        let s = icosphere(2);
        let sphere = s
            .with_vertices(s.vertices().iter().map(|p| c + p * r).collect())
            .unwrap();
        let region: Vec<usize> = (0..sphere.vertex_count())
            .filter(|&i| s.vertices()[i].z > 0.3)
            .collect();
        let e = fit_eyeball(&sphere, &region, 0.0).unwrap();
        assert!((e.center - c).norm() < 1e-9 && (e.radius - r).abs() < 1e-9);
        let e2 = fit_eyeball(&sphere, &region, 0.1).unwrap();
        assert!(((e2.center - e.center).norm() - 0.1).abs() < 1e-12);
        assert!((e2.center - e.center).z < 0.0);
        assert_eq!(e2.radius, e.radius);

        let plane = TriMesh::new(
            (0..9)
                .map(|i| Vec3::new((i % 3) as f64, (i / 3) as f64, 0.0))
                .collect(),
            vec![[0, 1, 4], [0, 4, 3]],
        )
        .unwrap();
        assert!(matches!(
            fit_eyeball(&plane, &[0, 1, 2, 3, 4, 5], 0.0),
            Err(Error::DegenerateRegion(_))
        ));
        assert!(fit_eyeball(&plane, &[0, 1, 2], 0.0).is_err());
    }
}
