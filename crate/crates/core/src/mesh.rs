//! Structured triangulations of axis-aligned rectangles.
//!
//! Every cell of an `nx × ny` grid is split into two counterclockwise
//! triangles along its lower-left to upper-right diagonal. Vertices are
//! numbered row by row from the lower-left corner; P2 edge nodes follow the
//! vertices, so the midpoint node of edge `e` is `n_vertices + e`.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

const SIDE_TOL: f64 = 1e-12;

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
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
}

/// The four sides of the rectangle, numbered counterclockwise from the right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    /// Γ₁, `x = x1`.
    Right,
    /// Γ₂, `y = y0`.
    Bottom,
    /// Γ₃, `x = x0`.
    Left,
    /// Γ₄, `y = y1`.
    Top,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] = [
        BoundaryTag::Right,
        BoundaryTag::Bottom,
        BoundaryTag::Left,
        BoundaryTag::Top,
    ];

    /// Zero-based position in `ALL`.
    pub fn index(self) -> usize {
        match self {
            BoundaryTag::Right => 0,
            BoundaryTag::Bottom => 1,
            BoundaryTag::Left => 2,
            BoundaryTag::Top => 3,
        }
    }

    /// Outward unit normal of the side.
    pub fn normal(self) -> [f64; 2] {
        match self {
            BoundaryTag::Right => [1.0, 0.0],
            BoundaryTag::Bottom => [0.0, -1.0],
            BoundaryTag::Left => [-1.0, 0.0],
            BoundaryTag::Top => [0.0, 1.0],
        }
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Γ{}", self.index() + 1)
    }
}

/// A mesh edge with its P2 midpoint node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub node: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub edge: usize,
    pub tag: BoundaryTag,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
    pub vertices: Vec<[f64; 2]>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// For triangle `t`, `triangle_edges[t][k]` joins local vertices `k` and `(k + 1) % 3`.
    pub triangle_edges: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Longest edge length.
    pub h: f64,
}

/// Builds the structured triangulation and tags its boundary.
pub fn build_rect_mesh(nx: usize, ny: usize, rect: Rect) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!(
            "cell counts must be positive, got nx={nx}, ny={ny}"
        )));
    }
    if !(rect.width() > 0.0 && rect.height() > 0.0) || !rect.area().is_finite() {
        return Err(Error::InvalidArgument(format!("degenerate rectangle {rect:?}")));
    }

    let hx = rect.width() / nx as f64;
    let hy = rect.height() / ny as f64;
    let vid = |i: usize, j: usize| j * (nx + 1) + i;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = if i == nx { rect.x1 } else { rect.x0 + i as f64 * hx };
            let y = if j == ny { rect.y1 } else { rect.y0 + j as f64 * hy };
            vertices.push([x, y]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }

    let n_vertices = vertices.len();
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges = Vec::new();
    let mut adjacency: Vec<u8> = Vec::new();
    let mut triangle_edges = Vec::with_capacity(triangles.len());
    for tri in &triangles {
        let mut local = [0usize; 3];
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            let e = *lookup.entry(key).or_insert_with(|| {
                edges.push(Edge {
                    vertices: [key.0, key.1],
                    node: n_vertices + edges.len(),
                });
                adjacency.push(0);
                edges.len() - 1
            });
            adjacency[e] += 1;
            local[k] = e;
        }
        triangle_edges.push(local);
    }

    let h = edges
        .iter()
        .map(|e| {
            let (p, q) = (vertices[e.vertices[0]], vertices[e.vertices[1]]);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max);

    // Placeholder tags; `classify_boundary` assigns the real ones.
    let boundary_edges = adjacency
        .iter()
        .enumerate()
        .filter(|(_, &count)| count == 1)
        .map(|(edge, _)| BoundaryEdge {
            edge,
            tag: BoundaryTag::Right,
        })
        .collect();

    let mesh = Mesh {
        rect,
        nx,
        ny,
        vertices,
        triangles,
        edges,
        triangle_edges,
        boundary_edges,
        h,
    };
    classify_boundary(mesh)
}

/// Tags each boundary edge by the rectangle side containing its midpoint.
pub fn classify_boundary(mut mesh: Mesh) -> Result<Mesh> {
    let rect = mesh.rect;
    for be in mesh.boundary_edges.iter_mut() {
        let m = mesh_edge_midpoint(&mesh.vertices, &mesh.edges[be.edge]);
        be.tag = if (m[0] - rect.x1).abs() <= SIDE_TOL {
            BoundaryTag::Right
        } else if (m[1] - rect.y0).abs() <= SIDE_TOL {
            BoundaryTag::Bottom
        } else if (m[0] - rect.x0).abs() <= SIDE_TOL {
            BoundaryTag::Left
        } else if (m[1] - rect.y1).abs() <= SIDE_TOL {
            BoundaryTag::Top
        } else {
            return Err(Error::Internal(format!(
                "boundary edge {} with midpoint {m:?} lies on no side of {rect:?}",
                be.edge
            )));
        };
    }
    Ok(mesh)
}

fn mesh_edge_midpoint(vertices: &[[f64; 2]], edge: &Edge) -> [f64; 2] {
    let (p, q) = (vertices[edge.vertices[0]], vertices[edge.vertices[1]]);
    [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of P2 nodes (vertices plus edge midpoints).
    pub fn n_p2_nodes(&self) -> usize {
        self.vertices.len() + self.edges.len()
    }

    pub fn edge_midpoint(&self, e: usize) -> [f64; 2] {
        mesh_edge_midpoint(&self.vertices, &self.edges[e])
    }

    /// Coordinates of any P2 node.
    pub fn p2_node_coords(&self, node: usize) -> [f64; 2] {
        if node < self.vertices.len() {
            self.vertices[node]
        } else {
            self.edge_midpoint(node - self.vertices.len())
        }
    }

    /// Global P2 node indices of a triangle: three vertices, then the
    /// midpoints of edges (0,1), (1,2), (2,0).
    pub fn p2_triangle_nodes(&self, t: usize) -> [usize; 6] {
        let [a, b, c] = self.triangles[t];
        let [e0, e1, e2] = self.triangle_edges[t];
        [
            a,
            b,
            c,
            self.edges[e0].node,
            self.edges[e1].node,
            self.edges[e2].node,
        ]
    }

    pub fn triangle_coords(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Signed area, positive for counterclockwise triangles.
    pub fn signed_area(&self, t: usize) -> f64 {
        let [p, q, r] = self.triangle_coords(t);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn boundary_edges_with(&self, tag: BoundaryTag) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary_edges.iter().filter(move |be| be.tag == tag)
    }

    /// P2 nodes lying on the closure of the tagged side, in ascending order.
    pub fn p2_nodes_on(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .boundary_edges_with(tag)
            .flat_map(|be| {
                let e = &self.edges[be.edge];
                [e.vertices[0], e.vertices[1], e.node]
            })
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    /// Vertices lying on the closure of the tagged side, in ascending order.
    pub fn vertices_on(&self, tag: BoundaryTag) -> Vec<usize> {
        let n = self.n_vertices();
        self.p2_nodes_on(tag).into_iter().filter(|&v| v < n).collect()
    }

    /// `true` for every vertex on ∂Ω.
    pub fn boundary_vertex_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_vertices()];
        for be in &self.boundary_edges {
            for &v in &self.edges[be.edge].vertices {
                mask[v] = true;
            }
        }
        mask
    }
}
