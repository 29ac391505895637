use super::{signed_area, MeshError, Point, Rect, TriMesh};
use crate::sparse::CsrMatrix;

/// Sparse map from mesh-node values to values at evaluation points.
#[derive(Clone, Debug)]
pub struct Projector {
    matrix: CsrMatrix,
}

impl Projector {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CsrMatrix {
        self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    /// Evaluates a nodal field at the projector's points.
    pub fn apply(&self, field: &[f64]) -> Vec<f64> {
        self.matrix
            .mul_vec(field)
            .expect("field length matches mesh")
    }
}

/// Rectangular blocks with quadrature points used for block averages.
#[derive(Clone, Debug)]
pub struct BlockPartition {
    blocks: Vec<Rect>,
    quad_points: Vec<Vec<Point>>,
}

impl BlockPartition {
    pub fn new(blocks: Vec<Rect>, quad_points: Vec<Vec<Point>>) -> Result<Self, MeshError> {
        if blocks.len() != quad_points.len() {
            return Err(MeshError::InvalidGeometry(
                "one quadrature list is needed per block".into(),
            ));
        }
        if let Some(k) = quad_points.iter().position(|q| q.is_empty()) {
            return Err(MeshError::EmptyBlock(k));
        }
        Ok(Self {
            blocks,
            quad_points,
        })
    }

    /// `nx × ny` equal blocks over `rect`, each with a `q × q` midpoint grid.
    pub fn regular(rect: Rect, nx: usize, ny: usize, q: usize) -> Result<Self, MeshError> {
        if nx == 0 || ny == 0 {
            return Err(MeshError::InvalidGeometry(
                "block counts must be positive".into(),
            ));
        }
        let (w, h) = (rect.width() / nx as f64, rect.height() / ny as f64);
        let mut blocks = Vec::with_capacity(nx * ny);
        let mut quad = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let b = Rect::new(
                    rect.x0 + i as f64 * w,
                    rect.y0 + j as f64 * h,
                    rect.x0 + (i + 1) as f64 * w,
                    rect.y0 + (j + 1) as f64 * h,
                );
                let pts = (0..q)
                    .flat_map(|b_j| {
                        (0..q).map(move |b_i| {
                            [
                                b.x0 + (b_i as f64 + 0.5) * b.width() / q as f64,
                                b.y0 + (b_j as f64 + 0.5) * b.height() / q as f64,
                            ]
                        })
                    })
                    .collect();
                blocks.push(b);
                quad.push(pts);
            }
        }
        Self::new(blocks, quad)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Rect] {
        &self.blocks
    }

    pub fn quad_points(&self, block: usize) -> &[Point] {
        &self.quad_points[block]
    }

    pub fn areas(&self) -> Vec<f64> {
        self.blocks.iter().map(Rect::area).collect()
    }

    /// All quadrature points, block by block.
    pub fn all_quad_points(&self) -> Vec<Point> {
        self.quad_points.iter().flatten().copied().collect()
    }
}

/// Locates `p` and returns its (node, weight) barycentric pairs.
fn locate(mesh: &TriMesh, p: Point) -> Result<Vec<(usize, f64)>, MeshError> {
    let outside = MeshError::PointOutsideMesh { x: p[0], y: p[1] };
    if !mesh.extension_rect().contains(p) {
        return Err(outside);
    }
    match mesh.grid() {
        Some((xs, ys)) => {
            let cell = |axis: &[f64], v: f64| {
                axis.partition_point(|&g| g <= v).clamp(1, axis.len() - 1) - 1
            };
            let (i, j) = (cell(xs, p[0]), cell(ys, p[1]));
            let u = (p[0] - xs[i]) / (xs[i + 1] - xs[i]);
            let v = (p[1] - ys[j]) / (ys[j + 1] - ys[j]);
            let nx = xs.len();
            let v00 = j * nx + i;
            let (v10, v01, v11) = (v00 + 1, v00 + nx, v00 + nx + 1);
            let w = if v <= u {
                [(v00, 1.0 - u), (v10, u - v), (v11, v)]
            } else {
                [(v00, 1.0 - v), (v11, u), (v01, v - u)]
            };
            Ok(clean(&w))
        }
        None => {
            let nodes = mesh.nodes();
            for tri in mesh.triangles() {
                let [a, b, c] = tri.map(|k| nodes[k]);
                let area = signed_area(a, b, c);
                let la = signed_area(p, b, c) / area;
                let lb = signed_area(a, p, c) / area;
                let lc = 1.0 - la - lb;
                let eps = -1e-12;
                if la >= eps && lb >= eps && lc >= eps {
                    return Ok(clean(&[(tri[0], la), (tri[1], lb), (tri[2], lc)]));
                }
            }
            Err(outside)
        }
    }
}

/// Drops zero weights and clamps rounding noise into `[0, 1]`.
fn clean(w: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let kept: Vec<(usize, f64)> = w
        .iter()
        .map(|&(k, v)| (k, v.clamp(0.0, 1.0)))
        .filter(|&(_, v)| v > 0.0)
        .collect();
    let s: f64 = kept.iter().map(|&(_, v)| v).sum();
    kept.into_iter().map(|(k, v)| (k, v / s)).collect()
}

pub fn projection_matrix(mesh: &TriMesh, points: &[Point]) -> Result<Projector, MeshError> {
    let rows = points
        .iter()
        .map(|&p| locate(mesh, p))
        .collect::<Result<Vec<_>, _>>()?;
    let matrix = CsrMatrix::from_rows(mesh.num_nodes(), &rows).expect("node indices are valid");
    Ok(Projector { matrix })
}

/// Evaluates the coarse-mesh basis at the fine-mesh nodes.
pub fn coarse_to_fine_matrix(coarse: &TriMesh, fine: &TriMesh) -> Result<Projector, MeshError> {
    projection_matrix(coarse, fine.nodes())
}

/// Rows average the projection rows over each block's quadrature points.
pub fn block_average_matrix(
    mesh: &TriMesh,
    partition: &BlockPartition,
) -> Result<Projector, MeshError> {
    let mut rows = Vec::with_capacity(partition.len());
    for b in 0..partition.len() {
        let pts = partition.quad_points(b);
        let inv = 1.0 / pts.len() as f64;
        let mut row = Vec::new();
        for &p in pts {
            row.extend(locate(mesh, p)?.into_iter().map(|(k, w)| (k, w * inv)));
        }
        rows.push(row);
    }
    let matrix = CsrMatrix::from_rows(mesh.num_nodes(), &rows).expect("node indices are valid");
    Ok(Projector { matrix })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, build_structured_mesh_with_layers};

    fn unit_mesh() -> TriMesh {
        build_structured_mesh(Rect::unit(), 0.25, 0.5).unwrap()
    }

    #[test]
    fn node_points_give_indicator_rows() {
        let m = unit_mesh();
        let p = projection_matrix(&m, m.nodes()).unwrap();
        for r in 0..p.rows() {
            let (cols, vals) = p.matrix().row(r);
            assert_eq!(cols, &[r]);
            assert_eq!(vals, &[1.0]);
        }
    }

    #[test]
    fn centroid_weights_are_thirds() {
        let m = build_structured_mesh_with_layers(Rect::unit(), 1.0, 1.0, 0).unwrap();
        let p = projection_matrix(&m, &[[2.0 / 3.0, 1.0 / 3.0]]).unwrap();
        let (cols, vals) = p.matrix().row(0);
        assert_eq!(cols.len(), 3);
        assert!(vals.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-14));
    }

    #[test]
    fn outside_point_is_rejected() {
        let m = unit_mesh();
        assert!(matches!(
            projection_matrix(&m, &[[5.0, 0.5]]),
            Err(MeshError::PointOutsideMesh { .. })
        ));
    }

    #[test]
    fn edge_midpoint_splits_evenly() {
        let coarse = build_structured_mesh_with_layers(Rect::unit(), 0.5, 0.5, 0).unwrap();
        let fine = build_structured_mesh_with_layers(Rect::unit(), 0.25, 0.25, 0).unwrap();
        let b = coarse_to_fine_matrix(&coarse, &fine).unwrap();
        // Fine node (0.25, 0) is the midpoint of the coarse edge (0,0)-(0.5,0).
        let (cols, vals) = b.matrix().row(1);
        assert_eq!(cols, &[0, 1]);
        assert!(vals.iter().all(|v| (v - 0.5).abs() < 1e-14));
        assert!(b
            .apply(&vec![1.0; coarse.num_nodes()])
            .iter()
            .all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn self_projection_is_identity() {
        let m = unit_mesh();
        let b = coarse_to_fine_matrix(&m, &m).unwrap();
        assert_eq!(b.into_matrix(), CsrMatrix::identity(m.num_nodes()));
    }

    #[test]
    fn block_average_of_linear_field() {
        let m = build_structured_mesh(Rect::unit(), 0.05, 0.1).unwrap();
        let part = BlockPartition::new(
            vec![Rect::new(0.0, 0.0, 0.5, 0.5)],
            vec![
                BlockPartition::regular(Rect::new(0.0, 0.0, 0.5, 0.5), 1, 1, 40)
                    .unwrap()
                    .quad_points(0)
                    .to_vec(),
            ],
        )
        .unwrap();
        let h = block_average_matrix(&m, &part).unwrap();
        let field: Vec<f64> = m.nodes().iter().map(|p| p[0]).collect();
        assert!((h.apply(&field)[0] - 0.25).abs() < 1e-3);
        let ones = h.apply(&vec![3.0; m.num_nodes()]);
        assert!((ones[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_block_is_rejected() {
        let r = BlockPartition::new(vec![Rect::unit()], vec![vec![]]);
        assert!(matches!(r, Err(MeshError::EmptyBlock(0))));
    }

    #[test]
    fn default_partition_shape() {
        let p = BlockPartition::regular(Rect::unit(), 8, 8, 7).unwrap();
        assert_eq!(p.len(), 64);
        assert_eq!(p.quad_points(10).len(), 49);
        assert!((p.areas().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
