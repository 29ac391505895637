use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{MeshError, Point, Rect, TriMesh};

/// Writes `nodes.csv` (id,x,y) and `triangles.csv` (id,n0,n1,n2) into `dir`.
pub fn write_mesh_csv(mesh: &TriMesh, dir: &Path) -> Result<(), MeshError> {
    fs::create_dir_all(dir)?;
    let mut nodes = String::from("id,x,y\n");
    for (i, p) in mesh.nodes().iter().enumerate() {
        let _ = writeln!(nodes, "{i},{:?},{:?}", p[0], p[1]);
    }
    let mut tris = String::from("id,n0,n1,n2\n");
    for (i, t) in mesh.triangles().iter().enumerate() {
        let _ = writeln!(tris, "{i},{},{},{}", t[0], t[1], t[2]);
    }
    fs::write(dir.join("nodes.csv"), nodes)?;
    fs::write(dir.join("triangles.csv"), tris)?;
    Ok(())
}

/// Reads a mesh written by [`write_mesh_csv`]. The inner rectangle is not
/// stored in the files and must be supplied.
pub fn load_mesh_csv(dir: &Path, inner: Rect) -> Result<TriMesh, MeshError> {
    let nodes: Vec<Point> = read_rows(&dir.join("nodes.csv"), 3)?
        .into_iter()
        .map(|r| Ok([parse::<f64>(&r[1])?, parse::<f64>(&r[2])?]))
        .collect::<Result<_, MeshError>>()?;
    let triangles: Vec<[usize; 3]> = read_rows(&dir.join("triangles.csv"), 4)?
        .into_iter()
        .map(|r| Ok([parse(&r[1])?, parse(&r[2])?, parse(&r[3])?]))
        .collect::<Result<_, MeshError>>()?;
    TriMesh::from_parts(nodes, triangles, inner)
}

fn read_rows(path: &Path, width: usize) -> Result<Vec<Vec<String>>, MeshError> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if fields.len() != width {
            return Err(MeshError::Parse(format!(
                "{}:{}: expected {width} fields",
                path.display(),
                n + 1
            )));
        }
        rows.push(fields);
    }
    Ok(rows)
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T, MeshError> {
    s.parse()
        .map_err(|_| MeshError::Parse(format!("cannot parse '{s}'")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;

    #[test]
    fn roundtrip_preserves_mesh() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_structured_mesh(Rect::unit(), 0.3, 0.4).unwrap();
        write_mesh_csv(&m, dir.path()).unwrap();
        let back = load_mesh_csv(dir.path(), Rect::unit()).unwrap();
        assert_eq!(back.nodes(), m.nodes());
        assert_eq!(back.triangles(), m.triangles());
        assert!(back.grid().is_some());
    }

    #[test]
    fn malformed_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("nodes.csv"), "id,x,y\n0,1\n").unwrap();
        fs::write(dir.path().join("triangles.csv"), "id,n0,n1,n2\n").unwrap();
        assert!(matches!(
            load_mesh_csv(dir.path(), Rect::unit()),
            Err(MeshError::Parse(_))
        ));
    }
}
