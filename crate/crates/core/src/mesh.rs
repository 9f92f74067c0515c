//! Triangle meshes: topology (edges, bending hinges), lumped masses and a
//! minimal OBJ reader/writer.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::geom::Vec3;
use crate::real::Real;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("triangle {triangle} references vertex {vertex} but the mesh has {count} vertices")]
    IndexOutOfBounds { triangle: usize, vertex: usize, count: usize },
    #[error("triangle {triangle} has zero rest area")]
    DegenerateTriangle { triangle: usize },
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Interior edge `edge` with the two vertices opposite to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Hinge {
    pub edge: [usize; 2],
    pub opposite: [usize; 2],
}

#[derive(Clone, Debug)]
pub struct TriMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub triangles: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    hinges: Vec<Hinge>,
}

impl<T: Real> TriMesh<T> {
    pub fn new(vertices: Vec<Vec3<T>>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let count = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= count {
                    return Err(MeshError::IndexOutOfBounds { triangle: t, vertex: v, count });
                }
            }
        }
        let mut mesh = Self { vertices, triangles, edges: Vec::new(), hinges: Vec::new() };
        for t in 0..mesh.triangles.len() {
            if !(mesh.triangle_area(t) > T::zero()) {
                return Err(MeshError::DegenerateTriangle { triangle: t });
            }
        }
        mesh.build_topology()?;
        Ok(mesh)
    }

    fn build_topology(&mut self) -> Result<(), MeshError> {
        // edge -> opposite vertices of incident triangles
        let mut incidence: BTreeMap<[usize; 2], Vec<usize>> = BTreeMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b, c) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
                incidence.entry([a.min(b), a.max(b)]).or_default().push(c);
            }
        }
        self.edges.clear();
        self.hinges.clear();
        for (edge, opp) in incidence {
            if opp.len() > 2 {
                return Err(MeshError::NonManifoldEdge(edge[0], edge[1]));
            }
            self.edges.push(edge);
            if opp.len() == 2 {
                self.hinges.push(Hinge { edge, opposite: [opp[0].min(opp[1]), opp[0].max(opp[1])] });
            }
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Unique undirected edges, each stored as `[min, max]`, sorted.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Interior edges with their opposite vertices, sorted by edge.
    pub fn hinges(&self) -> &[Hinge] {
        &self.hinges
    }

    pub fn triangle_area(&self, t: usize) -> T {
        triangle_area_of(&self.vertices, self.triangles[t])
    }

    pub fn total_area(&self) -> T {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Total area of the mesh triangles evaluated at positions `x` (flat `3m`).
    pub fn deformed_area(&self, x: &[T]) -> T {
        self.triangles
            .iter()
            .map(|tri| {
                let (a, b, c) = (Vec3::read(x, tri[0]), Vec3::read(x, tri[1]), Vec3::read(x, tri[2]));
                (b - a).cross(c - a).norm() * T::lit(0.5)
            })
            .sum()
    }

    /// Rest positions as a flat `3m` vector.
    pub fn positions(&self) -> Vec<T> {
        self.vertices.iter().flat_map(|v| v.0).collect()
    }

    /// Vertex adjacency lists (one-ring), sorted.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.num_vertices()];
        for &[a, b] in &self.edges {
            nb[a].push(b);
            nb[b].push(a);
        }
        nb.iter_mut().for_each(|v| v.sort_unstable());
        nb
    }

    /// Applies `f` to every rest vertex.
    pub fn map_vertices(mut self, f: impl Fn(Vec3<T>) -> Vec3<T>) -> Self {
        self.vertices.iter_mut().for_each(|v| *v = f(*v));
        self
    }

    /// Mesh containing both inputs as separate components.
    pub fn disjoint_union(&self, other: &Self) -> Result<Self, MeshError> {
        let offset = self.num_vertices();
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut triangles = self.triangles.clone();
        triangles.extend(other.triangles.iter().map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]));
        Self::new(vertices, triangles)
    }
}

fn triangle_area_of<T: Real>(v: &[Vec3<T>], tri: [usize; 3]) -> T {
    let (a, b, c) = (v[tri[0]], v[tri[1]], v[tri[2]]);
    (b - a).cross(c - a).norm() * T::lit(0.5)
}

/// Regular `nx` by `ny` grid in the `z = 0` plane with alternating diagonals.
/// Vertex `(i, j)` has index `j * nx + i` and sits at `(i * spacing, j * spacing, 0)`.
pub fn make_grid<T: Real>(nx: usize, ny: usize, spacing: T) -> Result<TriMesh<T>, MeshError> {
    if nx < 2 || ny < 2 {
        return Err(MeshError::InvalidGrid(format!("need at least 2x2 vertices, got {nx}x{ny}")));
    }
    if !(spacing > T::zero()) {
        return Err(MeshError::InvalidGrid("spacing must be positive".into()));
    }
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push(Vec3::new(
                T::from_usize_lossy(i) * spacing,
                T::from_usize_lossy(j) * spacing,
                T::zero(),
            ));
        }
    }
    let id = |i: usize, j: usize| j * nx + i;
    let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    TriMesh::new(vertices, triangles)
}

/// Diagonal lumped mass matrix, one entry per node.
#[derive(Clone, Debug, PartialEq)]
pub struct MassMatrix<T> {
    node: Vec<T>,
}

impl<T: Real> MassMatrix<T> {
    pub fn from_node_masses(node: Vec<T>) -> Self {
        assert!(node.iter().all(|m| *m > T::zero()), "node masses must be positive");
        Self { node }
    }

    #[inline]
    pub fn node(&self, i: usize) -> T {
        self.node[i]
    }

    pub fn node_masses(&self) -> &[T] {
        &self.node
    }

    pub fn num_nodes(&self) -> usize {
        self.node.len()
    }

    /// Diagonal replicated per coordinate (length `3m`).
    pub fn diagonal(&self) -> Vec<T> {
        self.node.iter().flat_map(|m| [*m; 3]).collect()
    }

    pub fn total(&self) -> T {
        self.node.iter().copied().sum()
    }

    /// `M x`
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        x.iter().enumerate().map(|(k, v)| *v * self.node[k / 3]).collect()
    }

    /// `M⁻¹ x`
    pub fn apply_inverse(&self, x: &[T]) -> Vec<T> {
        x.iter().enumerate().map(|(k, v)| *v / self.node[k / 3]).collect()
    }
}

/// Each node receives a third of the rest area of every incident triangle.
pub fn lumped_mass<T: Real>(mesh: &TriMesh<T>, density: T) -> MassMatrix<T> {
    assert!(density > T::zero(), "density must be positive");
    let mut node = vec![T::zero(); mesh.num_vertices()];
    let third = T::one() / T::lit(3.0);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let share = density * mesh.triangle_area(t) * third;
        for &v in tri {
            node[v] += share;
        }
    }
    // isolated vertices would get zero mass
    MassMatrix::from_node_masses(node)
}

/// Parses the OBJ subset `v x y z` / `f i j k ...` (1-based, `/` suffixes ignored).
/// Polygons are fan-triangulated.
pub fn parse_obj<T: Real>(text: &str) -> Result<TriMesh<T>, MeshError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut it = content.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut c = [T::zero(); 3];
                for slot in c.iter_mut() {
                    let tok = it.next().ok_or_else(|| MeshError::Parse {
                        line,
                        message: "vertex needs three coordinates".into(),
                    })?;
                    let v: f64 = tok.parse().map_err(|_| MeshError::Parse {
                        line,
                        message: format!("invalid coordinate `{tok}`"),
                    })?;
                    *slot = T::lit(v);
                }
                vertices.push(Vec3(c));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| MeshError::Parse {
                        line,
                        message: format!("invalid face index `{tok}`"),
                    })?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        -1
                    };
                    if resolved < 0 {
                        return Err(MeshError::Parse { line, message: format!("face index {i} out of range") });
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(MeshError::Parse { line, message: "face needs at least three vertices".into() });
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles)
}

pub fn load_obj<T: Real>(path: impl AsRef<Path>) -> Result<TriMesh<T>, MeshError> {
    parse_obj(&std::fs::read_to_string(path)?)
}

/// Writes positions `x` with the mesh connectivity, preceded by a frame comment.
pub fn write_obj<T: Real, W: Write>(
    mut out: W,
    triangles: &[[usize; 3]],
    x: &[T],
    frame: usize,
) -> std::io::Result<()> {
    writeln!(out, "# frame {frame}")?;
    for v in x.chunks_exact(3) {
        writeln!(out, "v {} {} {}", v[0].to_f64_lossy(), v[1].to_f64_lossy(), v[2].to_f64_lossy())?;
    }
    for t in triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}
