//! Linear morphable face model: shape and albedo synthesis from coefficient
//! vectors, landmark lookup, and the CFM1 container format.

mod io;
pub mod regions;
mod synthetic;

pub use io::{load_model, read_model, save_model, write_model, CFM1_MAGIC, CFM1_VERSION};
pub use synthetic::{make_synthetic_model, SyntheticModelParams};

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};
use nalgebra::{DMatrix, DVector};

/// Default number of annotated landmarks.
pub const DEFAULT_LANDMARK_COUNT: usize = 68;

#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    /// `3V` interleaved xyz.
    mean_shape: DVector<f64>,
    /// `3V` interleaved rgb albedo in [0, 1].
    mean_texture: DVector<f64>,
    basis_id: DMatrix<f64>,
    basis_exp: DMatrix<f64>,
    basis_tex: DMatrix<f64>,
    faces: Vec<[usize; 3]>,
    landmark_indices: Vec<usize>,
}

impl MorphableModel {
    pub fn new(
        mean_shape: DVector<f64>,
        mean_texture: DVector<f64>,
        basis_id: DMatrix<f64>,
        basis_exp: DMatrix<f64>,
        basis_tex: DMatrix<f64>,
        faces: Vec<[usize; 3]>,
        landmark_indices: Vec<usize>,
    ) -> Result<Self> {
        let rows = mean_shape.len();
        if rows % 3 != 0 {
            return Err(Error::Validation(
                "mean shape length is not a multiple of 3".into(),
            ));
        }
        for (what, got) in [
            ("mean_texture", mean_texture.len()),
            ("basis_id rows", basis_id.nrows()),
            ("basis_exp rows", basis_exp.nrows()),
            ("basis_tex rows", basis_tex.nrows()),
        ] {
            if got != rows {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: rows,
                    got,
                });
            }
        }
        let v = rows / 3;
        // Validates face indices and repeated corners.
        TriMesh::new(vec![Vec3::zeros(); v], faces.clone())?;
        let mut seen = vec![false; v];
        for &k in &landmark_indices {
            if k >= v {
                return Err(Error::Validation(format!(
                    "landmark vertex {k} out of range"
                )));
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::Validation(format!(
                    "landmark vertex {k} listed twice"
                )));
            }
        }
        Ok(Self {
            mean_shape,
            mean_texture,
            basis_id,
            basis_exp,
            basis_tex,
            faces,
            landmark_indices,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.mean_shape.len() / 3
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn landmark_indices(&self) -> &[usize] {
        &self.landmark_indices
    }

    pub fn landmark_count(&self) -> usize {
        self.landmark_indices.len()
    }

    pub fn dim_id(&self) -> usize {
        self.basis_id.ncols()
    }

    pub fn dim_exp(&self) -> usize {
        self.basis_exp.ncols()
    }

    pub fn dim_tex(&self) -> usize {
        self.basis_tex.ncols()
    }

    pub fn mean_shape(&self) -> &DVector<f64> {
        &self.mean_shape
    }

    pub fn mean_texture(&self) -> &DVector<f64> {
        &self.mean_texture
    }

    pub fn basis_id(&self) -> &DMatrix<f64> {
        &self.basis_id
    }

    pub fn basis_exp(&self) -> &DMatrix<f64> {
        &self.basis_exp
    }

    pub fn basis_tex(&self) -> &DMatrix<f64> {
        &self.basis_tex
    }

    /// Mesh of the mean shape.
    pub fn mean_mesh(&self) -> TriMesh {
        self.mesh_from_flat(&self.mean_shape)
    }

    pub(crate) fn mesh_from_flat(&self, flat: &DVector<f64>) -> TriMesh {
        let verts = flat
            .as_slice()
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect();
        TriMesh::new(verts, self.faces.clone()).expect("model topology was validated")
    }

    pub fn zero_coefficients(&self) -> Coefficients {
        Coefficients::zeros(self.dim_id(), self.dim_exp(), self.dim_tex())
    }

    fn check_dims(&self, c: &Coefficients) -> Result<()> {
        for (what, expected, got) in [
            ("alpha_id", self.dim_id(), c.alpha_id.len()),
            ("alpha_exp", self.dim_exp(), c.alpha_exp.len()),
            ("alpha_tex", self.dim_tex(), c.alpha_tex.len()),
        ] {
            if expected != got {
                return Err(Error::DimensionMismatch {
                    what,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    /// Flat `3V` shape `S = mean + A_id a_id + A_exp a_exp`.
    pub fn shape_vector(&self, c: &Coefficients) -> Result<DVector<f64>> {
        self.check_dims(c)?;
        let mut s = self.mean_shape.clone();
        s.gemv(1.0, &self.basis_id, &c.alpha_id, 1.0);
        s.gemv(1.0, &self.basis_exp, &c.alpha_exp, 1.0);
        Ok(s)
    }
}

/// Coefficient vectors for the identity, expression and texture bases.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub alpha_id: DVector<f64>,
    pub alpha_exp: DVector<f64>,
    pub alpha_tex: DVector<f64>,
}

impl Coefficients {
    pub fn zeros(d_id: usize, d_exp: usize, d_tex: usize) -> Self {
        Self {
            alpha_id: DVector::zeros(d_id),
            alpha_exp: DVector::zeros(d_exp),
            alpha_tex: DVector::zeros(d_tex),
        }
    }
}

pub fn synthesize_shape(model: &MorphableModel, c: &Coefficients) -> Result<TriMesh> {
    Ok(model.mesh_from_flat(&model.shape_vector(c)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedTexture {
    pub colors: Vec<Vec3>,
    /// Number of channel values clamped into [0, 1].
    pub clamped: usize,
}

pub fn synthesize_texture(model: &MorphableModel, c: &Coefficients) -> Result<SynthesizedTexture> {
    model.check_dims(c)?;
    let mut t = model.mean_texture.clone();
    t.gemv(1.0, &model.basis_tex, &c.alpha_tex, 1.0);
    let mut clamped = 0;
    let colors = t
        .as_slice()
        .chunks_exact(3)
        .map(|ch| {
            Vec3::from_iterator(ch.iter().map(|&x| {
                let y = x.clamp(0.0, 1.0);
                if y != x {
                    clamped += 1;
                }
                y
            }))
        })
        .collect();
    Ok(SynthesizedTexture { colors, clamped })
}

/// The 3D landmark lookup: vertices of `shape` at the model's landmark indices.
pub fn landmark_positions(shape: &TriMesh, model: &MorphableModel) -> Result<Vec<Vec3>> {
    if shape.vertex_count() != model.vertex_count() || shape.faces() != model.faces() {
        return Err(Error::TopologyMismatch);
    }
    Ok(model
        .landmark_indices()
        .iter()
        .map(|&k| shape.vertices()[k])
        .collect())
}
