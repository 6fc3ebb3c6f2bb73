use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kron_ops::CsrMatrix;
use crate::space_fem::mesh::{BoundaryTag, SpaceMesh};

/// CG1 stiffness `int grad phi_j . grad phi_i` on one triangle.
pub fn local_stiffness(p: [[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        g[i] = [(p[j][1] - p[k][1]) / area2, (p[k][0] - p[j][0]) / area2];
    }
    let area = 0.5 * area2;
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    out
}

/// Stiffness over all vertices with one weight per subdomain.
pub fn assemble_weighted_stiffness(mesh: &SpaceMesh, weights: &[f64]) -> Result<CsrMatrix> {
    if weights.len() < mesh.num_subdomains() {
        return Err(Error::dims("subdomain weights", mesh.num_subdomains(), weights.len()));
    }
    let n = mesh.num_vertices();
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len());
    for (tri, &s) in mesh.triangles.iter().zip(&mesh.subdomains) {
        let k = local_stiffness(tri.map(|v| mesh.vertices[v]));
        for a in 0..3 {
            for b in 0..3 {
                trip.push((tri[a], tri[b], weights[s] * k[a][b]));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, trip)
}

/// Per-subdomain stiffness matrices over all vertices.
pub fn assemble_subdomain_stiffness(mesh: &SpaceMesh) -> Vec<CsrMatrix> {
    let q = mesh.num_subdomains();
    (0..q)
        .map(|s| {
            let mut w = vec![0.0; q];
            w[s] = 1.0;
            assemble_weighted_stiffness(mesh, &w).expect("weights sized to the mesh")
        })
        .collect()
}

/// Row-sum lumped mass over all vertices.
pub fn lumped_mass(mesh: &SpaceMesh) -> Vec<f64> {
    let mut m = vec![0.0; mesh.num_vertices()];
    for t in 0..mesh.triangles.len() {
        let a = mesh.area(t) / 3.0;
        for &v in &mesh.triangles[t] {
            m[v] += a;
        }
    }
    m
}

/// Consistent CG1 mass over all vertices.
pub fn consistent_mass(mesh: &SpaceMesh) -> CsrMatrix {
    let n = mesh.num_vertices();
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let a = mesh.area(t);
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], if i == j { a / 6.0 } else { a / 12.0 }));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, trip).expect("valid mesh")
}

/// `int_Gamma phi_n` over edges carrying `tag`, for all vertices.
pub fn boundary_load_all(mesh: &SpaceMesh, tag: BoundaryTag) -> Vec<f64> {
    let mut g = vec![0.0; mesh.num_vertices()];
    for ([a, b], t) in &mesh.boundary_edges {
        if *t == tag {
            let (pa, pb) = (mesh.vertices[*a], mesh.vertices[*b]);
            let len = (pa[0] - pb[0]).hypot(pa[1] - pb[1]);
            g[*a] += 0.5 * len;
            g[*b] += 0.5 * len;
        }
    }
    g
}

/// Spatial matrices restricted to the free (non-Dirichlet) vertices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpaceMatrices {
    /// Vertex index of each free unknown.
    pub free_vertices: Vec<usize>,
    pub num_vertices: usize,
    /// Diagonal of the lumped mass.
    pub mass: Vec<f64>,
    /// One stiffness block per subdomain.
    pub stiffness: Vec<CsrMatrix>,
}

impl SpaceMatrices {
    pub fn assemble(mesh: &SpaceMesh) -> Result<Self> {
        let free_vertices: Vec<usize> = (0..mesh.num_vertices()).filter(|&v| !mesh.dirichlet[v]).collect();
        if free_vertices.len() == mesh.num_vertices() {
            log::warn!("mesh has no Dirichlet vertices; the stiffness sum is singular");
        }
        if free_vertices.is_empty() {
            return Err(Error::InvalidArgument("mesh has no free vertices".into()));
        }
        let mass_all = lumped_mass(mesh);
        let mass = free_vertices.iter().map(|&v| mass_all[v]).collect();
        let stiffness = assemble_subdomain_stiffness(mesh)
            .iter()
            .map(|a| a.submatrix(&free_vertices, &free_vertices))
            .collect();
        log::debug!(
            "space assembly: {} vertices, {} free unknowns",
            mesh.num_vertices(),
            free_vertices.len()
        );
        Ok(SpaceMatrices {
            free_vertices,
            num_vertices: mesh.num_vertices(),
            mass,
            stiffness,
        })
    }

    pub fn dim(&self) -> usize {
        self.free_vertices.len()
    }

    pub fn mass_matrix(&self) -> CsrMatrix {
        CsrMatrix::from_diagonal(&self.mass)
    }

    /// Restricts a vertex-indexed vector to free unknowns.
    pub fn restrict(&self, all: &[f64]) -> Vec<f64> {
        self.free_vertices.iter().map(|&v| all[v]).collect()
    }

    /// Extends a free-unknown vector by zeros on Dirichlet vertices.
    pub fn extend(&self, free: &[f64]) -> Vec<f64> {
        let mut all = vec![0.0; self.num_vertices];
        for (&v, x) in self.free_vertices.iter().zip(free) {
            all[v] = *x;
        }
        all
    }

    pub fn boundary_load(&self, mesh: &SpaceMesh, tag: BoundaryTag) -> Vec<f64> {
        self.restrict(&boundary_load_all(mesh, tag))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space_fem::mesh::build_thermal_block_mesh;
    use nalgebra::SymmetricEigen;

    #[test]
    fn reference_triangle_stiffness() {
        let k = local_stiffness([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stiffness_matches_gradient_quadrature() {
        // gradients are constant: integrate by area times dot product of
        // gradients obtained from a linear solve
        let p = [[0.2, 0.1], [1.3, 0.4], [0.5, 1.1]];
        let k = local_stiffness(p);
        let m = nalgebra::Matrix3::new(1.0, p[0][0], p[0][1], 1.0, p[1][0], p[1][1], 1.0, p[2][0], p[2][1]);
        let coef = m.try_inverse().unwrap();
        let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
        for i in 0..3 {
            for j in 0..3 {
                let gi = (coef[(1, i)], coef[(2, i)]);
                let gj = (coef[(1, j)], coef[(2, j)]);
                let q = area * (gi.0 * gj.0 + gi.1 * gj.1);
                assert!((k[i][j] - q).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn mass_partition_of_unity() {
        let mesh = build_thermal_block_mesh(7).unwrap();
        let m = lumped_mass(&mesh);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let rows = consistent_mass(&mesh).matvec(&vec![1.0; mesh.num_vertices()]);
        for (a, b) in m.iter().zip(&rows) {
            assert!((a - b).abs() <= 1e-13 * b);
        }
    }

    #[test]
    fn stiffness_blocks_annihilate_constants_and_are_psd() {
        let mesh = build_thermal_block_mesh(7).unwrap();
        let ones = vec![1.0; mesh.num_vertices()];
        for a in assemble_subdomain_stiffness(&mesh) {
            assert!(a.matvec(&ones).iter().all(|v| v.abs() < 1e-13));
            let eig = SymmetricEigen::new(a.to_dense());
            assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
        }
    }

    #[test]
    fn free_sum_is_spd() {
        let mesh = build_thermal_block_mesh(7).unwrap();
        let sm = SpaceMatrices::assemble(&mesh).unwrap();
        assert_eq!(sm.dim(), 42);
        let parts: Vec<_> = sm.stiffness.iter().map(|a| (1.0, a)).collect();
        let sum = CsrMatrix::linear_combination(&parts).unwrap();
        let eig = SymmetricEigen::new(sum.to_dense());
        assert!(eig.eigenvalues.min() > 0.0);
        assert!(sm.mass.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn bottom_load() {
        let mesh = build_thermal_block_mesh(7).unwrap();
        let g = boundary_load_all(&mesh, BoundaryTag::Bottom);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((g[3] - 1.0 / 6.0).abs() < 1e-14);
        assert!((g[0] - 1.0 / 12.0).abs() < 1e-14);
        assert!(g[7..].iter().all(|&v| v == 0.0));
        let mut bare = mesh.clone();
        bare.boundary_edges.retain(|(_, t)| *t != BoundaryTag::Left);
        assert!(boundary_load_all(&bare, BoundaryTag::Left).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn numbering_independent() {
        let mesh = build_thermal_block_mesh(7).unwrap();
        let n = mesh.num_vertices();
        // perm[old] = new
        let perm: Vec<usize> = (0..n).map(|v| (v * 17 + 5) % n).collect();
        let mut inv = vec![0; n];
        for (o, &p) in perm.iter().enumerate() {
            inv[p] = o;
        }
        let mut shuffled = mesh.clone();
        shuffled.vertices = (0..n).map(|p| mesh.vertices[inv[p]]).collect();
        shuffled.dirichlet = (0..n).map(|p| mesh.dirichlet[inv[p]]).collect();
        shuffled.triangles = mesh.triangles.iter().map(|t| t.map(|v| perm[v])).collect();
        shuffled.boundary_edges = mesh
            .boundary_edges
            .iter()
            .map(|(e, tag)| (e.map(|v| perm[v]), *tag))
            .collect();
        shuffled.validate().unwrap();
        let a = assemble_weighted_stiffness(&mesh, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
        let b = assemble_weighted_stiffness(&shuffled, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
        let back = b.permute_symmetric(&inv);
        for (i, j, v) in a.triplets() {
            assert!((back.get(i, j) - v).abs() < 1e-14);
        }
        assert_eq!(a.nnz(), back.nnz());
    }
}
