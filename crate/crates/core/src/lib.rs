//! Single-image 3D face reconstruction with a linear morphable model,
//! Laplacian refinement, projective texturing, and blendshape rig generation
//! by deformation transfer.

pub mod camera;
pub mod error;
pub mod fit;
pub mod mesh;
pub mod morph;
pub mod refine;
pub mod render;
pub mod rig;
pub mod scene;
pub mod sparse;
pub mod texture;

pub use error::{Error, Result};
