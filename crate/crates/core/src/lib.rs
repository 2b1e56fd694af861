//! Scene synthesis, rasterization, sparse depth simulation and evaluation for
//! shading-based high-frequency depth recovery.

pub mod depth;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod mesh;
pub mod raster;
pub mod reference;
pub mod rng;
pub mod sparse;
pub mod synth;
pub mod tensor;

pub use depth::{DepthError, DepthMap};
pub use geometry::{Ray, RigidTransform, Vec3};
pub use mesh::TriangleMesh;
pub use raster::{PinholeDevice, RasterError, RenderOutput, RigConfig};
pub use rng::Rng;
pub use sparse::{RbfModel, SparseDepth, SparseError};
pub use synth::{SceneSpec, SynthConfig, SynthError};
pub use tensor::{Scalar, Tensor, TensorError};
