//! Structured triangular meshes and piecewise-linear spatial assembly.

mod assembly;
mod mesh;

pub use assembly::{
    assemble_subdomain_stiffness, assemble_weighted_stiffness, boundary_load_all, consistent_mass, local_stiffness,
    lumped_mass, SpaceMatrices,
};
pub use mesh::{build_thermal_block_mesh, BoundaryTag, SpaceMesh};
