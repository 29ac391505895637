//! Structured triangulations, linear finite elements and projection matrices.

mod fem;
mod io;
mod projector;

pub use fem::{fem_matrices, FemMatrices};
pub use io::{load_mesh_csv, write_mesh_csv};
pub use projector::{
    block_average_matrix, coarse_to_fine_matrix, projection_matrix, BlockPartition, Projector,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("point ({x}, {y}) lies outside the mesh")]
    PointOutsideMesh { x: f64, y: f64 },
    #[error("block {0} has no quadrature points")]
    EmptyBlock(usize),
    #[error("mesh file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed mesh file: {0}")]
    Parse(String),
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn unit() -> Self {
        Self::new(0.0, 0.0, 1.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }

    fn is_valid(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 > self.x0
            && self.y1 > self.y0
    }
}

/// Triangulated rectangle. Nodes of structured meshes lie on a tensor grid
/// `xs × ys` with node index `j * xs.len() + i`.
#[derive(Clone, Debug)]
pub struct TriMesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    inner: Rect,
    extension: Rect,
    grid: Option<(Vec<f64>, Vec<f64>)>,
}

/// Structured mesh with the default two-layer extension band.
pub fn build_structured_mesh(
    inner: Rect,
    edge_inner: f64,
    edge_outer: f64,
) -> Result<TriMesh, MeshError> {
    build_structured_mesh_with_layers(inner, edge_inner, edge_outer, 2)
}

/// Structured mesh whose extension band has `layers` cells of width
/// `edge_outer` on each side of `inner`.
pub fn build_structured_mesh_with_layers(
    inner: Rect,
    edge_inner: f64,
    edge_outer: f64,
    layers: usize,
) -> Result<TriMesh, MeshError> {
    if !(edge_inner > 0.0 && edge_inner.is_finite())
        || !(edge_outer > 0.0 && edge_outer.is_finite())
    {
        return Err(MeshError::InvalidGeometry(format!(
            "edge lengths must be positive (inner {edge_inner}, outer {edge_outer})"
        )));
    }
    if !inner.is_valid() {
        return Err(MeshError::InvalidGeometry(format!(
            "degenerate rectangle {inner:?}"
        )));
    }
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let n = ((hi - lo) / edge_inner - 1e-9).ceil().max(1.0) as usize;
        let h = (hi - lo) / n as f64;
        let mut v: Vec<f64> = (1..=layers)
            .rev()
            .map(|k| lo - k as f64 * edge_outer)
            .collect();
        v.extend((0..=n).map(|i| if i == n { hi } else { lo + i as f64 * h }));
        v.extend((1..=layers).map(|k| hi + k as f64 * edge_outer));
        v
    };
    let xs = axis(inner.x0, inner.x1);
    let ys = axis(inner.y0, inner.y1);
    let extension = Rect::new(xs[0], ys[0], *xs.last().unwrap(), *ys.last().unwrap());
    let nx = xs.len();
    let nodes: Vec<Point> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| [x, y]))
        .collect();
    let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ys.len() - 1));
    for j in 0..ys.len() - 1 {
        for i in 0..nx - 1 {
            let v00 = j * nx + i;
            let v10 = v00 + 1;
            let v01 = v00 + nx;
            let v11 = v01 + 1;
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    Ok(TriMesh {
        nodes,
        triangles,
        inner,
        extension,
        grid: Some((xs, ys)),
    })
}

impl TriMesh {
    /// Builds a mesh from explicit nodes and triangles, checking orientation
    /// and that the triangles tile the bounding rectangle.
    pub fn from_parts(
        nodes: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        inner: Rect,
    ) -> Result<Self, MeshError> {
        if nodes.len() < 3 || triangles.is_empty() {
            return Err(MeshError::InvalidGeometry(
                "a mesh needs at least one triangle".into(),
            ));
        }
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for p in &nodes {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
        let extension = Rect::new(x0, y0, x1, y1);
        let mut total = 0.0;
        for t in &triangles {
            if t.iter().any(|&v| v >= nodes.len()) {
                return Err(MeshError::InvalidGeometry(format!(
                    "triangle {t:?} references a missing node"
                )));
            }
            let a = signed_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]);
            if a <= 0.0 {
                return Err(MeshError::InvalidGeometry(format!(
                    "triangle {t:?} is not counter-clockwise"
                )));
            }
            total += a;
        }
        if (total - extension.area()).abs() > 1e-10 * extension.area() {
            return Err(MeshError::InvalidGeometry(
                "triangles do not tile the bounding rectangle".into(),
            ));
        }
        let grid = detect_grid(&nodes, &triangles);
        Ok(Self {
            nodes,
            triangles,
            inner,
            extension,
            grid,
        })
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn inner_rect(&self) -> Rect {
        self.inner
    }

    pub fn extension_rect(&self) -> Rect {
        self.extension
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    pub(crate) fn grid(&self) -> Option<(&[f64], &[f64])> {
        self.grid
            .as_ref()
            .map(|(x, y)| (x.as_slice(), y.as_slice()))
    }

    /// Indices of nodes strictly inside the inner rectangle shrunk by `margin`.
    pub fn interior_nodes(&self, margin: f64) -> Vec<usize> {
        let r = self.inner;
        (0..self.nodes.len())
            .filter(|&i| {
                let [x, y] = self.nodes[i];
                x > r.x0 + margin && x < r.x1 - margin && y > r.y0 + margin && y < r.y1 - margin
            })
            .collect()
    }
}

pub(crate) fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Recovers tensor-grid structure from a mesh that was laid out by
/// [`build_structured_mesh`], so loaded meshes keep fast point location.
fn detect_grid(nodes: &[Point], triangles: &[[usize; 3]]) -> Option<(Vec<f64>, Vec<f64>)> {
    let uniq = |k: usize| {
        let mut v: Vec<f64> = nodes.iter().map(|p| p[k]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let xs = uniq(0);
    let ys = uniq(1);
    let nx = xs.len();
    if nx * ys.len() != nodes.len() || triangles.len() != 2 * (nx - 1) * (ys.len() - 1) {
        return None;
    }
    let layout_ok = nodes
        .iter()
        .enumerate()
        .all(|(k, p)| p[0] == xs[k % nx] && p[1] == ys[k / nx]);
    let tri_ok = triangles.iter().enumerate().all(|(t, tri)| {
        let cell = t / 2;
        let (i, j) = (cell % (nx - 1), cell / (nx - 1));
        let v00 = j * nx + i;
        let expect = if t % 2 == 0 {
            [v00, v00 + 1, v00 + nx + 1]
        } else {
            [v00, v00 + nx + 1, v00 + nx]
        };
        *tri == expect
    });
    (layout_ok && tri_ok).then_some((xs, ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_without_extension() {
        let m = build_structured_mesh_with_layers(Rect::unit(), 0.5, 0.5, 0).unwrap();
        assert_eq!(m.num_nodes(), 9);
        assert_eq!(m.triangles().len(), 8);
    }

    #[test]
    fn default_mesh_count_follows_grid_rule() {
        let m = build_structured_mesh(Rect::unit(), 0.04, 0.1).unwrap();
        // 25 inner cells plus two outer layers per side: 30 grid lines per axis.
        assert_eq!(m.num_nodes(), 30 * 30);
        assert!(m.num_nodes() >= 625);
        let ext = m.extension_rect();
        assert!((ext.x0 + 0.2).abs() < 1e-12 && (ext.x1 - 1.2).abs() < 1e-12);
    }

    #[test]
    fn zero_edge_is_invalid() {
        assert!(matches!(
            build_structured_mesh(Rect::unit(), 0.0, 0.1),
            Err(MeshError::InvalidGeometry(_))
        ));
        assert!(matches!(
            build_structured_mesh(Rect::new(0.0, 0.0, 0.0, 1.0), 0.1, 0.1),
            Err(MeshError::InvalidGeometry(_))
        ));
    }

    #[test]
    fn triangles_are_ccw_and_tile() {
        let m = build_structured_mesh(Rect::new(0.0, 0.0, 1.0, 0.7), 0.13, 0.3).unwrap();
        let total: f64 = (0..m.triangles().len()).map(|t| m.triangle_area(t)).sum();
        assert!((0..m.triangles().len()).all(|t| m.triangle_area(t) > 0.0));
        let ext = m.extension_rect();
        assert!((total - ext.area()).abs() < 1e-10 * ext.area());
    }

    #[test]
    fn from_parts_recovers_grid() {
        let m = build_structured_mesh(Rect::unit(), 0.25, 0.5).unwrap();
        let again = TriMesh::from_parts(m.nodes().to_vec(), m.triangles().to_vec(), m.inner_rect())
            .unwrap();
        assert!(again.grid().is_some());
    }
}
