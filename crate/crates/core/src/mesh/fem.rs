use super::TriMesh;
use crate::sparse::SymSparseMatrix;

/// Lumped mass (diagonal) and stiffness matrices of linear elements.
#[derive(Clone, Debug)]
pub struct FemMatrices {
    pub c_lumped: Vec<f64>,
    pub g: SymSparseMatrix,
}

pub fn fem_matrices(mesh: &TriMesh) -> FemMatrices {
    let nodes = mesh.nodes();
    let mut c = vec![0.0; nodes.len()];
    let mut t = Vec::with_capacity(mesh.triangles().len() * 6);
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(k);
        // Edge opposite vertex i, oriented consistently around the triangle.
        let edge = |i: usize| {
            let a = nodes[tri[(i + 1) % 3]];
            let b = nodes[tri[(i + 2) % 3]];
            [b[0] - a[0], b[1] - a[1]]
        };
        let e = [edge(0), edge(1), edge(2)];
        for i in 0..3 {
            c[tri[i]] += area / 3.0;
            for j in 0..=i {
                let v = (e[i][0] * e[j][0] + e[i][1] * e[j][1]) / (4.0 * area);
                t.push((tri[i], tri[j], v));
            }
        }
    }
    let g = SymSparseMatrix::from_triplets(nodes.len(), t).expect("triangle indices are valid");
    FemMatrices { c_lumped: c, g }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, Rect};

    #[test]
    fn right_triangle_stiffness() {
        let mesh = TriMesh::from_parts(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            Rect::unit(),
        );
        // A lone triangle does not tile its bounding box, so assemble directly.
        assert!(mesh.is_err());
        let mesh = TriMesh {
            nodes: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles: vec![[0, 1, 2]],
            inner: Rect::unit(),
            extension: Rect::unit(),
            grid: None,
        };
        let f = fem_matrices(&mesh);
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        let g = f.g.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
        assert!(f.c_lumped.iter().all(|&c| (c - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn stiffness_annihilates_constants_and_mass_sums_to_area() {
        let mesh = build_structured_mesh(Rect::unit(), 0.1, 0.2).unwrap();
        let f = fem_matrices(&mesh);
        let g1 = f.g.mul_vec(&vec![1.0; mesh.num_nodes()]).unwrap();
        assert!(g1.iter().all(|v| v.abs() < 1e-10));
        let total: f64 = f.c_lumped.iter().sum();
        assert!((total - mesh.extension_rect().area()).abs() < 1e-10);
    }
}
