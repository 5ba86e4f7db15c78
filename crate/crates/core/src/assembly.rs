//! Degrees of freedom, assembly of the bilinear and linear forms of the
//! Taylor-Hood discretization, and constraint handling.
//!
//! Global systems are laid out as contiguous field blocks `[u | ξ | η]`;
//! subsystems simply omit blocks. Displacement dofs are interleaved per P2
//! node: `u_dof(node, c) = 2·node + c`.

use crate::elements::{
    edge_quadrature, triangle_quadrature, AffineMap, BasisKind, QuadratureRule, Tabulation,
};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, Mesh};
use crate::model::{
    BoundaryConditions, DerivedCoeffs, FlowBc, MaterialParams, ScalarFn, SourceFunctions, VectorFn,
};
use crate::sparse::{dot, CsrMatrix, TripletBuilder};

/// Exactness of the rule used for polynomial bilinear forms.
pub const FORM_DEGREE: usize = 4;
/// Exactness of the rule used for (possibly non-polynomial) data.
pub const DATA_DEGREE: usize = 6;
/// Exactness of the boundary-edge rule.
pub const EDGE_DEGREE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofMap {
    n_nodes: usize,
    n_vertices: usize,
    u: Option<usize>,
    xi: Option<usize>,
    eta: Option<usize>,
    total: usize,
}

impl DofMap {
    fn build(mesh: &Mesh, with_u: bool, with_xi: bool, with_eta: bool) -> Self {
        let n_nodes = mesh.n_p2_nodes();
        let n_vertices = mesh.n_vertices();
        let mut next = 0;
        let mut take = |present: bool, len: usize| {
            present.then(|| {
                let off = next;
                next += len;
                off
            })
        };
        let u = take(with_u, 2 * n_nodes);
        let xi = take(with_xi, n_vertices);
        let eta = take(with_eta, n_vertices);
        Self {
            n_nodes,
            n_vertices,
            u,
            xi,
            eta,
            total: next,
        }
    }

    /// `[u | ξ | η]`, the monolithic layout.
    pub fn monolithic(mesh: &Mesh) -> Self {
        Self::build(mesh, true, true, true)
    }

    /// `[u | ξ]`, the generalized Stokes layout.
    pub fn stokes(mesh: &Mesh) -> Self {
        Self::build(mesh, true, true, false)
    }

    /// `[η]`, the diffusion layout.
    pub fn flow(mesh: &Mesh) -> Self {
        Self::build(mesh, false, false, true)
    }

    /// `[u]`, used by the elastic projection.
    pub fn displacement(mesh: &Mesh) -> Self {
        Self::build(mesh, true, false, false)
    }

    /// `[p]`, a lone P1 scalar field (stored in the ξ slot).
    pub fn scalar(mesh: &Mesh) -> Self {
        Self::build(mesh, false, true, false)
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn n_u(&self) -> usize {
        2 * self.n_nodes
    }

    pub fn n_scalar(&self) -> usize {
        self.n_vertices
    }

    pub fn u_offset(&self) -> Option<usize> {
        self.u
    }

    pub fn xi_offset(&self) -> Option<usize> {
        self.xi
    }

    pub fn eta_offset(&self) -> Option<usize> {
        self.eta
    }

    pub fn u_dof(&self, node: usize, comp: usize) -> usize {
        self.u.expect("layout has a displacement block") + 2 * node + comp
    }

    pub fn xi_dof(&self, vertex: usize) -> usize {
        self.xi.expect("layout has a xi block") + vertex
    }

    pub fn eta_dof(&self, vertex: usize) -> usize {
        self.eta.expect("layout has an eta block") + vertex
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        if self.n_nodes != mesh.n_p2_nodes() || self.n_vertices != mesh.n_vertices() {
            return Err(Error::Dimension(format!(
                "dof map built for {} P2 nodes / {} vertices, mesh has {} / {}",
                self.n_nodes,
                self.n_vertices,
                mesh.n_p2_nodes(),
                mesh.n_vertices()
            )));
        }
        Ok(())
    }
}

struct ElementCache {
    rule: QuadratureRule,
    p2: Tabulation,
    p1: Tabulation,
}

impl ElementCache {
    fn new(degree: usize) -> Self {
        let rule = triangle_quadrature(degree).expect("supported degree");
        Self {
            p2: Tabulation::new(BasisKind::P2, &rule),
            p1: Tabulation::new(BasisKind::P1, &rule),
            rule,
        }
    }
}

fn physical_grads(map: &AffineMap, ref_grads: &[[f64; 2]]) -> Vec<[f64; 2]> {
    ref_grads.iter().map(|&g| map.physical_grad(g)).collect()
}

/// `A[(a,i),(b,j)] = μ (ε(φ_a e_i), ε(φ_b e_j))` on the displacement block.
pub fn assemble_elasticity(mesh: &Mesh, dofmap: &DofMap, mu: f64) -> Result<CsrMatrix> {
    dofmap.check_mesh(mesh)?;
    let n = dofmap.n_u();
    let cache = ElementCache::new(FORM_DEGREE);
    let mut b = TripletBuilder::with_capacity(n, n, mesh.n_triangles() * 144);
    for t in 0..mesh.n_triangles() {
        let map = AffineMap::new(mesh.triangle_coords(t));
        let nodes = mesh.p2_triangle_nodes(t);
        let mut local = [[0.0f64; 12]; 12];
        for (q, &w) in cache.rule.weights.iter().enumerate() {
            let g = physical_grads(&map, &cache.p2.ref_grads[q]);
            let wq = w * map.abs_det() * mu;
            for a in 0..6 {
                for bb in 0..6 {
                    let gg = g[a][0] * g[bb][0] + g[a][1] * g[bb][1];
                    for i in 0..2 {
                        for j in 0..2 {
                            let diag = if i == j { gg } else { 0.0 };
                            local[2 * a + i][2 * bb + j] += wq * 0.5 * (diag + g[a][j] * g[bb][i]);
                        }
                    }
                }
            }
        }
        for a in 0..6 {
            for i in 0..2 {
                for bb in 0..6 {
                    for j in 0..2 {
                        b.push(2 * nodes[a] + i, 2 * nodes[bb] + j, local[2 * a + i][2 * bb + j]);
                    }
                }
            }
        }
    }
    Ok(b.finalize())
}

/// `B[i, (a,c)] = (div(φ_a e_c), ψ_i)`, P1 rows by P2-vector columns.
pub fn assemble_div(mesh: &Mesh, dofmap: &DofMap) -> Result<CsrMatrix> {
    dofmap.check_mesh(mesh)?;
    let cache = ElementCache::new(FORM_DEGREE);
    let mut b = TripletBuilder::with_capacity(dofmap.n_scalar(), dofmap.n_u(), mesh.n_triangles() * 36);
    for t in 0..mesh.n_triangles() {
        let map = AffineMap::new(mesh.triangle_coords(t));
        let nodes = mesh.p2_triangle_nodes(t);
        let verts = mesh.triangles[t];
        let mut local = [[0.0f64; 12]; 3];
        for (q, &w) in cache.rule.weights.iter().enumerate() {
            let g = physical_grads(&map, &cache.p2.ref_grads[q]);
            let psi = &cache.p1.values[q];
            let wq = w * map.abs_det();
            for i in 0..3 {
                for a in 0..6 {
                    for c in 0..2 {
                        local[i][2 * a + c] += wq * psi[i] * g[a][c];
                    }
                }
            }
        }
        for i in 0..3 {
            for a in 0..6 {
                for c in 0..2 {
                    b.push(verts[i], 2 * nodes[a] + c, local[i][2 * a + c]);
                }
            }
        }
    }
    Ok(b.finalize())
}

fn assemble_p1_form(mesh: &Mesh, dofmap: &DofMap, mass: f64, stiffness: f64) -> Result<CsrMatrix> {
    dofmap.check_mesh(mesh)?;
    let cache = ElementCache::new(FORM_DEGREE);
    let n = dofmap.n_scalar();
    let mut b = TripletBuilder::with_capacity(n, n, mesh.n_triangles() * 9);
    for t in 0..mesh.n_triangles() {
        let map = AffineMap::new(mesh.triangle_coords(t));
        let verts = mesh.triangles[t];
        let mut local = [[0.0f64; 3]; 3];
        for (q, &w) in cache.rule.weights.iter().enumerate() {
            let g = physical_grads(&map, &cache.p1.ref_grads[q]);
            let v = &cache.p1.values[q];
            let wq = w * map.abs_det();
            for i in 0..3 {
                for j in 0..3 {
                    local[i][j] += wq
                        * (mass * v[i] * v[j] + stiffness * (g[i][0] * g[j][0] + g[i][1] * g[j][1]));
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                b.push(verts[i], verts[j], local[i][j]);
            }
        }
    }
    Ok(b.finalize())
}

/// P1 mass matrix `(ψ_j, ψ_i)`.
pub fn assemble_scalar_mass(mesh: &Mesh, dofmap: &DofMap) -> Result<CsrMatrix> {
    assemble_p1_form(mesh, dofmap, 1.0, 0.0)
}

/// P1 stiffness matrix `mobility · (∇ψ_j, ∇ψ_i)`.
pub fn assemble_scalar_stiffness(mesh: &Mesh, dofmap: &DofMap, mobility: f64) -> Result<CsrMatrix> {
    assemble_p1_form(mesh, dofmap, 0.0, mobility)
}

/// P2 vector mass matrix `(φ_b e_j, φ_a e_i)`.
pub fn assemble_vector_mass(mesh: &Mesh, dofmap: &DofMap) -> Result<CsrMatrix> {
    dofmap.check_mesh(mesh)?;
    let cache = ElementCache::new(FORM_DEGREE);
    let n = dofmap.n_u();
    let mut b = TripletBuilder::with_capacity(n, n, mesh.n_triangles() * 72);
    for t in 0..mesh.n_triangles() {
        let map = AffineMap::new(mesh.triangle_coords(t));
        let nodes = mesh.p2_triangle_nodes(t);
        let mut local = [[0.0f64; 6]; 6];
        for (q, &w) in cache.rule.weights.iter().enumerate() {
            let v = &cache.p2.values[q];
            let wq = w * map.abs_det();
            for a in 0..6 {
                for bb in 0..6 {
                    local[a][bb] += wq * v[a] * v[bb];
                }
            }
        }
        for a in 0..6 {
            for bb in 0..6 {
                for c in 0..2 {
                    b.push(2 * nodes[a] + c, 2 * nodes[bb] + c, local[a][bb]);
                }
            }
        }
    }
    Ok(b.finalize())
}

/// Right-hand sides in block-local numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadVectors {
    /// `(f, v) + ⟨f₁, v⟩`.
    pub mechanics: Vec<f64>,
    /// `(φ, ψ) + ⟨φ₁, ψ⟩ + (K/μ_f)(ρ_f g, ∇ψ)`.
    pub flow: Vec<f64>,
}

/// Quadratic edge shape functions for (start, end, midpoint) at parameter `s`.
fn p2_edge_shape(s: f64) -> [f64; 3] {
    [(1.0 - s) * (1.0 - 2.0 * s), s * (2.0 * s - 1.0), 4.0 * s * (1.0 - s)]
}

pub fn assemble_load(
    mesh: &Mesh,
    dofmap: &DofMap,
    sources: &SourceFunctions,
    bcs: &BoundaryConditions,
    params: &MaterialParams,
    t: f64,
) -> Result<LoadVectors> {
    dofmap.check_mesh(mesh)?;
    let cache = ElementCache::new(DATA_DEGREE);
    let mut mech = vec![0.0; dofmap.n_u()];
    let mut flow = vec![0.0; dofmap.n_scalar()];
    let gravity = params.gravity_force;
    let mobility = params.mobility();

    for tri in 0..mesh.n_triangles() {
        let map = AffineMap::new(mesh.triangle_coords(tri));
        let nodes = mesh.p2_triangle_nodes(tri);
        let verts = mesh.triangles[tri];
        for (q, &w) in cache.rule.weights.iter().enumerate() {
            let x = map.map_bary(cache.rule.points[q]);
            let wq = w * map.abs_det();
            let f = (sources.body_force)(x, t);
            let phi = (sources.mass_source)(x, t);
            for a in 0..6 {
                let v = wq * cache.p2.values[q][a];
                mech[2 * nodes[a]] += v * f[0];
                mech[2 * nodes[a] + 1] += v * f[1];
            }
            let g = physical_grads(&map, &cache.p1.ref_grads[q]);
            for i in 0..3 {
                flow[verts[i]] += wq
                    * (phi * cache.p1.values[q][i]
                        + mobility * (gravity[0] * g[i][0] + gravity[1] * g[i][1]));
            }
        }
    }

    let edge_rule = edge_quadrature(EDGE_DEGREE)?;
    for be in &mesh.boundary_edges {
        let edge = mesh.edges[be.edge];
        let seg = bcs.segment(be.tag);
        let (p0, p1) = (mesh.vertices[edge.vertices[0]], mesh.vertices[edge.vertices[1]]);
        let len = ((p1[0] - p0[0]).powi(2) + (p1[1] - p0[1]).powi(2)).sqrt();
        let edge_nodes = [edge.vertices[0], edge.vertices[1], edge.node];
        for (q, &w) in edge_rule.weights.iter().enumerate() {
            let s = edge_rule.points[q][0];
            let x = [p0[0] + s * (p1[0] - p0[0]), p0[1] + s * (p1[1] - p0[1])];
            let ws = w * len;
            let f1 = (seg.traction)(x, t);
            for (k, &nk) in p2_edge_shape(s).iter().enumerate() {
                mech[2 * edge_nodes[k]] += ws * nk * f1[0];
                mech[2 * edge_nodes[k] + 1] += ws * nk * f1[1];
            }
            if let FlowBc::Flux(phi1) = &seg.flow {
                let v = phi1(x, t);
                flow[edge.vertices[0]] += ws * (1.0 - s) * v;
                flow[edge.vertices[1]] += ws * s * v;
            }
        }
    }
    Ok(LoadVectors {
        mechanics: mech,
        flow,
    })
}

/// Nodal interpolant of a vector field into the P2 displacement block.
pub fn interpolate_vector(mesh: &Mesh, f: &VectorFn, t: f64) -> Vec<f64> {
    let mut out = vec![0.0; 2 * mesh.n_p2_nodes()];
    for node in 0..mesh.n_p2_nodes() {
        let v = f(mesh.p2_node_coords(node), t);
        out[2 * node] = v[0];
        out[2 * node + 1] = v[1];
    }
    out
}

/// Nodal interpolant of a scalar field into P1.
pub fn interpolate_scalar(mesh: &Mesh, f: &ScalarFn, t: f64) -> Vec<f64> {
    mesh.vertices.iter().map(|&x| f(x, t)).collect()
}

/// P2 interpolants of the rigid motions `e₁`, `e₂` and the rotation about the
/// rectangle centre.
pub fn rigid_motion_interpolants(mesh: &Mesh) -> [Vec<f64>; 3] {
    let c = [
        0.5 * (mesh.rect.x0 + mesh.rect.x1),
        0.5 * (mesh.rect.y0 + mesh.rect.y1),
    ];
    let n = mesh.n_p2_nodes();
    let mut r = [vec![0.0; 2 * n], vec![0.0; 2 * n], vec![0.0; 2 * n]];
    for node in 0..n {
        let x = mesh.p2_node_coords(node);
        r[0][2 * node] = 1.0;
        r[1][2 * node + 1] = 1.0;
        r[2][2 * node] = -(x[1] - c[1]);
        r[2][2 * node + 1] = x[0] - c[0];
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletConstraint {
    pub dof: usize,
    pub value: f64,
}

/// `Σ cᵢ x_{dofᵢ} = rhs`, enforced with a Lagrange multiplier. The multiplier
/// enters the equation of `multiplier_dof` only when set; otherwise it enters
/// along the constraint coefficients (the symmetric KKT form).
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConstraint {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    pub multiplier_dof: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    pub dirichlet: Vec<DirichletConstraint>,
    pub affine: Vec<AffineConstraint>,
    /// Number of rigid-motion rows among `affine` (they come first).
    pub rigid_motion_rows: usize,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.dirichlet.is_empty() && self.affine.is_empty()
    }
}

/// How pressure Dirichlet data reaches the `(ξ, η)` unknowns.
#[derive(Debug, Clone, Copy)]
pub enum PressureTreatment<'a> {
    /// `κ₁ξ + κ₂η = p_D` as a multiplier row acting on the η equation.
    Combined,
    /// `η = (p_D − κ₁ξ)/κ₂` with ξ already known (one value per vertex).
    Eliminated { xi: &'a [f64] },
}

pub fn build_constraints(
    mesh: &Mesh,
    dofmap: &DofMap,
    bcs: &BoundaryConditions,
    coeffs: &DerivedCoeffs,
    t: f64,
    pressure: PressureTreatment<'_>,
) -> Result<ConstraintSet> {
    dofmap.check_mesh(mesh)?;
    let mut set = ConstraintSet::default();

    if dofmap.u_offset().is_some() {
        if bcs.pure_traction() {
            let mass = assemble_vector_mass(mesh, &DofMap::displacement(mesh))?;
            for r in rigid_motion_interpolants(mesh) {
                let weights = mass.mul_vec(&r);
                set.affine.push(AffineConstraint {
                    coeffs: weights
                        .iter()
                        .enumerate()
                        .filter(|(_, w)| **w != 0.0)
                        .map(|(j, &w)| (dofmap.u_dof(j / 2, j % 2), w))
                        .collect(),
                    rhs: 0.0,
                    multiplier_dof: None,
                });
            }
            set.rigid_motion_rows = 3;
        } else {
            let mut seen = vec![false; dofmap.n_u()];
            for tag in BoundaryTag::ALL {
                let seg = bcs.segment(tag);
                for comp in 0..2 {
                    let Some(g) = &seg.displacement[comp] else { continue };
                    for node in mesh.p2_nodes_on(tag) {
                        let local = 2 * node + comp;
                        if !seen[local] {
                            seen[local] = true;
                            set.dirichlet.push(DirichletConstraint {
                                dof: dofmap.u_dof(node, comp),
                                value: g(mesh.p2_node_coords(node), t),
                            });
                        }
                    }
                }
            }
        }
    }

    if dofmap.eta_offset().is_some() && bcs.has_pressure_dirichlet() {
        if coeffs.kappa2 == 0.0 {
            return Err(Error::UnsupportedConfiguration(
                "pressure Dirichlet data needs kappa2 > 0 (lambda > 0)".into(),
            ));
        }
        let mut seen = vec![false; mesh.n_vertices()];
        for tag in BoundaryTag::ALL {
            let FlowBc::Pressure(p_d) = &bcs.segment(tag).flow else { continue };
            for v in mesh.vertices_on(tag) {
                if seen[v] {
                    continue;
                }
                seen[v] = true;
                let value = p_d(mesh.vertices[v], t);
                match pressure {
                    PressureTreatment::Combined => {
                        if dofmap.xi_offset().is_none() {
                            return Err(Error::UnsupportedConfiguration(
                                "combined pressure constraints need a xi block".into(),
                            ));
                        }
                        set.affine.push(AffineConstraint {
                            coeffs: vec![
                                (dofmap.xi_dof(v), coeffs.kappa1),
                                (dofmap.eta_dof(v), coeffs.kappa2),
                            ],
                            rhs: value,
                            multiplier_dof: Some(dofmap.eta_dof(v)),
                        });
                    }
                    PressureTreatment::Eliminated { xi } => {
                        if xi.len() != mesh.n_vertices() {
                            return Err(Error::Dimension(format!(
                                "known xi has length {}, mesh has {} vertices",
                                xi.len(),
                                mesh.n_vertices()
                            )));
                        }
                        set.dirichlet.push(DirichletConstraint {
                            dof: dofmap.eta_dof(v),
                            value: (value - coeffs.kappa1 * xi[v]) / coeffs.kappa2,
                        });
                    }
                }
            }
        }
    }
    Ok(set)
}

/// A system with Dirichlet dofs eliminated (rows and columns replaced by the
/// identity) and affine constraints bordered on as multiplier rows.
///
/// The matrix depends only on *which* dofs are constrained, so one
/// factorization serves every time step; [`ConstrainedSystem::rhs`] folds in
/// the current constraint values.
#[derive(Debug, Clone)]
pub struct ConstrainedSystem {
    n: usize,
    matrix: CsrMatrix,
    fixed: Vec<bool>,
    dirichlet_dofs: Vec<usize>,
    /// Entries `a_rc` with `r` free and `c` fixed.
    coupling: CsrMatrix,
    affine_patterns: Vec<Vec<usize>>,
}

fn dense_cholesky_is_definite(gram: &[Vec<f64>]) -> bool {
    let n = gram.len();
    let scale = (0..n).map(|i| gram[i][i]).fold(0.0, f64::max);
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let d = gram[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if !(d > 1e-12 * scale) {
            return false;
        }
        l[j][j] = d.sqrt();
        for i in (j + 1)..n {
            let s = gram[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = s / l[j][j];
        }
    }
    true
}

impl ConstrainedSystem {
    pub fn new(a: &CsrMatrix, cs: &ConstraintSet) -> Result<Self> {
        let n = a.nrows;
        if a.ncols != n {
            return Err(Error::Dimension(format!("system matrix is {}x{}", a.nrows, a.ncols)));
        }
        let mut fixed = vec![false; n];
        for d in &cs.dirichlet {
            if d.dof >= n {
                return Err(Error::Dimension(format!("constrained dof {} out of range {n}", d.dof)));
            }
            if fixed[d.dof] {
                return Err(Error::SingularConstraints(format!(
                    "dof {} carries two Dirichlet constraints",
                    d.dof
                )));
            }
            fixed[d.dof] = true;
        }

        let m = cs.affine.len();
        let mut builder = TripletBuilder::with_capacity(n + m, n + m, a.nnz() + n);
        let mut coupling = TripletBuilder::new(n, n);
        for (r, c, v) in a.iter() {
            match (fixed[r], fixed[c]) {
                (false, false) => builder.push(r, c, v),
                (false, true) => coupling.push(r, c, v),
                _ => {}
            }
        }
        for (i, &f) in fixed.iter().enumerate() {
            if f {
                builder.push(i, i, 1.0);
            }
        }

        let mut free_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m);
        for (k, ac) in cs.affine.iter().enumerate() {
            let row = n + k;
            let free: Vec<(usize, f64)> = ac
                .coeffs
                .iter()
                .copied()
                .filter(|&(d, _)| d < n && !fixed[d])
                .collect();
            if ac.coeffs.iter().any(|&(d, _)| d >= n) {
                return Err(Error::Dimension(format!("affine constraint {k} refers past dof {n}")));
            }
            for &(d, c) in &free {
                builder.push(row, d, c);
            }
            match ac.multiplier_dof {
                Some(d) => {
                    if d >= n || fixed[d] {
                        return Err(Error::SingularConstraints(format!(
                            "multiplier of affine constraint {k} acts on unavailable dof {d}"
                        )));
                    }
                    builder.push(d, row, 1.0);
                }
                None => {
                    for &(d, c) in &free {
                        builder.push(d, row, c);
                    }
                }
            }
            free_rows.push(free);
        }

        if m > 0 {
            let mut dense_rows = vec![vec![0.0; m]; m];
            let mut scratch = vec![0.0; n];
            for i in 0..m {
                for &(d, c) in &free_rows[i] {
                    scratch[d] += c;
                }
                for j in 0..=i {
                    let g: f64 = free_rows[j].iter().map(|&(d, c)| c * scratch[d]).sum();
                    dense_rows[i][j] = g;
                    dense_rows[j][i] = g;
                }
                for &(d, _) in &free_rows[i] {
                    scratch[d] = 0.0;
                }
            }
            if !dense_cholesky_is_definite(&dense_rows) {
                return Err(Error::SingularConstraints(
                    "affine constraint rows are linearly dependent".into(),
                ));
            }
        }

        Ok(Self {
            n,
            matrix: builder.finalize(),
            fixed,
            dirichlet_dofs: cs.dirichlet.iter().map(|d| d.dof).collect(),
            coupling: coupling.finalize(),
            affine_patterns: cs
                .affine
                .iter()
                .map(|a| a.coeffs.iter().map(|&(d, _)| d).collect())
                .collect(),
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn n_primary(&self) -> usize {
        self.n
    }

    pub fn n_multipliers(&self) -> usize {
        self.affine_patterns.len()
    }

    /// Reduced right-hand side for load `b` and the values carried by `cs`,
    /// which must constrain the same dofs as the set this system was built with.
    pub fn rhs(&self, b: &[f64], cs: &ConstraintSet) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::Dimension(format!(
                "load has length {}, system has {} primary dofs",
                b.len(),
                self.n
            )));
        }
        let same_dirichlet = cs.dirichlet.len() == self.dirichlet_dofs.len()
            && cs.dirichlet.iter().zip(&self.dirichlet_dofs).all(|(d, &e)| d.dof == e);
        let same_affine = cs.affine.len() == self.affine_patterns.len()
            && cs
                .affine
                .iter()
                .zip(&self.affine_patterns)
                .all(|(a, p)| a.coeffs.len() == p.len() && a.coeffs.iter().zip(p).all(|(c, &d)| c.0 == d));
        if !same_dirichlet || !same_affine {
            return Err(Error::Internal(
                "constraint structure differs from the one the system was built with".into(),
            ));
        }

        let mut g = vec![0.0; self.n];
        for d in &cs.dirichlet {
            g[d.dof] = d.value;
        }
        let mut out = Vec::with_capacity(self.n + cs.affine.len());
        out.extend_from_slice(b);
        self.coupling.mul_vec_add(&g, -1.0, &mut out);
        for d in &cs.dirichlet {
            out[d.dof] = d.value;
        }
        for ac in &cs.affine {
            let moved: f64 = ac
                .coeffs
                .iter()
                .filter(|&&(d, _)| self.fixed[d])
                .map(|&(d, c)| c * g[d])
                .sum();
            out.push(ac.rhs - moved);
        }
        Ok(out)
    }

    /// Primary unknowns of a reduced solution (multipliers dropped).
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        x[..self.n].to_vec()
    }
}

/// Builds the constrained system together with its right-hand side.
pub fn apply_constraints(
    a: &CsrMatrix,
    b: &[f64],
    cs: &ConstraintSet,
) -> Result<(ConstrainedSystem, Vec<f64>)> {
    let sys = ConstrainedSystem::new(a, cs)?;
    let rhs = sys.rhs(b, cs)?;
    Ok((sys, rhs))
}

/// `(f, r) + ⟨f₁, r⟩` for the three rigid motions; zero for compatible
/// pure-traction loads.
pub fn rigid_motion_work(mesh: &Mesh, mechanics_load: &[f64]) -> [f64; 3] {
    rigid_motion_interpolants(mesh).map(|r| dot(&r, mechanics_load))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rect_mesh, Rect};
    use crate::model::{benchmark_locking, benchmark_test1, derive_kappas, Benchmark, BenchmarkKind};
    use crate::solver::{factorize, solve};
    use std::sync::Arc;

    fn unit(n: usize) -> Mesh {
        build_rect_mesh(n, n, Rect::unit()).unwrap()
    }

    #[test]
    fn dof_layouts() {
        let m = unit(2);
        let d = DofMap::monolithic(&m);
        assert_eq!(d.n_u(), 2 * (9 + 16));
        assert_eq!(d.n_scalar(), 9);
        assert_eq!(d.total(), 50 + 18);
        assert_eq!(d.xi_dof(0), 50);
        assert_eq!(d.eta_dof(0), 59);
        assert_eq!(DofMap::flow(&m).eta_dof(3), 3);
        assert_eq!(DofMap::stokes(&m).total(), 59);
        assert!(d.check_mesh(&unit(3)).is_err());
    }

    #[test]
    fn elasticity_kernel_and_symmetry() {
        let m = unit(4);
        let d = DofMap::displacement(&m);
        let a = assemble_elasticity(&m, &d, 1.7).unwrap();
        assert!(a.symmetry_defect() < 1e-12);
        let norm = a.norm();
        for r in rigid_motion_interpolants(&m) {
            let ar = a.mul_vec(&r);
            assert!(crate::sparse::norm2(&ar) <= 1e-10 * norm * crate::sparse::norm2(&r));
        }
        // ε(x) = I on the unit square gives μ|Ω| tr(I) = 2μ.
        let x = interpolate_vector(&m, &(Arc::new(|x: [f64; 2], _| x) as VectorFn), 0.0);
        assert!((a.bilinear(&x, &x) - 2.0 * 1.7).abs() < 1e-12);
    }

    #[test]
    fn div_reproduces_exact_integrals() {
        let m = unit(3);
        let d = DofMap::stokes(&m);
        let b = assemble_div(&m, &d).unwrap();
        let ones = vec![1.0; d.n_scalar()];
        let apply = |f: VectorFn| dot(&ones, &b.mul_vec(&interpolate_vector(&m, &f, 0.0)));
        assert!((apply(Arc::new(|x, _| x)) - 2.0).abs() < 1e-12);
        assert!(apply(Arc::new(|_, _| [3.0, -1.0])).abs() < 1e-13);
        assert!((apply(Arc::new(|x, _| [x[0] * x[0], 0.0])) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_mass_and_stiffness() {
        let m = unit(5);
        let d = DofMap::flow(&m);
        let mass = assemble_scalar_mass(&m, &d).unwrap();
        let total: f64 = mass.values.iter().sum();
        assert!((total - 1.0).abs() < 1e-13);
        assert!(mass.symmetry_defect() < 1e-12);

        let s = assemble_scalar_stiffness(&m, &d, 1.0).unwrap();
        let ones = vec![1.0; d.n_scalar()];
        assert!(s.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
        let x1: Vec<f64> = m.vertices.iter().map(|v| v[0]).collect();
        assert!((s.bilinear(&x1, &x1) - 1.0).abs() < 1e-12);
        let s3 = assemble_scalar_stiffness(&m, &d, 3.0).unwrap();
        assert!((s3.bilinear(&x1, &x1) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn load_partition_of_unity() {
        let m = unit(4);
        let d = DofMap::monolithic(&m);
        let mut b = benchmark_locking();
        b.sources.body_force = Arc::new(|_, _| [1.0, 0.0]);
        b.sources.mass_source = Arc::new(|_, _| 1.0);
        for seg in b.bcs.segments.iter_mut() {
            seg.traction = Arc::new(|_, _| [0.0, 0.0]);
        }
        let l = assemble_load(&m, &d, &b.sources, &b.bcs, &b.params, 0.0).unwrap();
        let sx: f64 = l.mechanics.iter().step_by(2).sum();
        let sy: f64 = l.mechanics.iter().skip(1).step_by(2).sum();
        assert!((sx - 1.0).abs() < 1e-13 && sy.abs() < 1e-13);
        assert!((l.flow.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn locking_traction_load() {
        let m = unit(4);
        let d = DofMap::monolithic(&m);
        let b = benchmark_locking();
        let l = assemble_load(&m, &d, &b.sources, &b.bcs, &b.params, 0.0).unwrap();
        assert!(l.flow.iter().all(|&v| v == 0.0));
        let sy: f64 = l.mechanics.iter().skip(1).step_by(2).sum();
        let sx: f64 = l.mechanics.iter().step_by(2).sum();
        assert!((sy + 1.0).abs() < 1e-14);
        assert!(sx.abs() < 1e-14);
    }

    #[test]
    fn gravity_term_integrates_against_gradients() {
        let m = unit(3);
        let d = DofMap::flow(&m);
        let mut b = benchmark_locking();
        b.params.gravity_force = [0.0, -2.0];
        b.params.permeability = 0.5;
        let l = assemble_load(&m, &d, &b.sources, &b.bcs, &b.params, 0.0).unwrap();
        // Against ψ = x₂: (K/μ_f) ρg·∇x₂ |Ω| = 0.5·(−2).
        let y: Vec<f64> = m.vertices.iter().map(|v| v[1]).collect();
        assert!((dot(&l.flow, &y) + 1.0).abs() < 1e-13);
        assert!(l.flow.iter().sum::<f64>().abs() < 1e-13);
    }

    #[test]
    fn locking_constraints() {
        let m = unit(4);
        let d = DofMap::monolithic(&m);
        let b = benchmark_locking();
        let k = derive_kappas(&b.params).unwrap();
        let cs = build_constraints(&m, &d, &b.bcs, &k, 0.0, PressureTreatment::Combined).unwrap();
        assert!(cs.affine.is_empty());
        assert_eq!(cs.rigid_motion_rows, 0);
        let left = m.p2_nodes_on(BoundaryTag::Left);
        assert_eq!(cs.dirichlet.len(), 2 * left.len());
        for c in &cs.dirichlet {
            let node = c.dof / 2;
            assert!(m.p2_node_coords(node)[0].abs() < 1e-15);
            assert_eq!(c.value, 0.0);
        }
    }

    #[test]
    fn test1_constraints() {
        let m = unit(4);
        let d = DofMap::monolithic(&m);
        let b = benchmark_test1();
        let k = derive_kappas(&b.params).unwrap();
        let t = 3e-4;
        let cs = build_constraints(&m, &d, &b.bcs, &k, t, PressureTreatment::Combined).unwrap();
        let n_boundary_vertices = m.boundary_vertex_mask().iter().filter(|&&x| x).count();
        assert_eq!(cs.affine.len(), n_boundary_vertices);
        assert_eq!(cs.rigid_motion_rows, 0);
        for ac in &cs.affine {
            let v = ac.coeffs[0].0 - d.xi_dof(0);
            let x = m.vertices[v];
            assert!(((x[0] + x[1]).sin() * t.exp() - ac.rhs).abs() < 1e-15);
            assert_eq!(ac.multiplier_dof, Some(d.eta_dof(v)));
        }
        for c in &cs.dirichlet {
            let (node, comp) = (c.dof / 2, c.dof % 2);
            let x = m.p2_node_coords(node);
            let on_vertical = x[0].abs() < 1e-15 || (x[0] - 1.0).abs() < 1e-15;
            let on_horizontal = x[1].abs() < 1e-15 || (x[1] - 1.0).abs() < 1e-15;
            if comp == 0 {
                assert!(on_vertical);
                assert!((c.value - 0.5 * x[0] * x[0] * t).abs() < 1e-18);
            } else {
                assert!(on_horizontal);
            }
        }
        let per_side = 2 * 4 + 1;
        assert_eq!(cs.dirichlet.len(), 4 * per_side);

        let xi = vec![0.5; m.n_vertices()];
        let cs = build_constraints(&m, &DofMap::flow(&m), &b.bcs, &k, t, PressureTreatment::Eliminated { xi: &xi })
            .unwrap();
        assert_eq!(cs.dirichlet.len(), n_boundary_vertices);
        let c = cs.dirichlet[0];
        let x = m.vertices[c.dof];
        let expected = ((x[0] + x[1]).sin() * t.exp() - k.kappa1 * 0.5) / k.kappa2;
        assert!((c.value - expected).abs() < 1e-15);
    }

    #[test]
    fn pressure_constraints_need_lambda() {
        let m = unit(2);
        let mut params = BenchmarkKind::Test1.default_params();
        params.lambda = 0.0;
        let b = Benchmark::new(BenchmarkKind::Test1, params).unwrap();
        let k = derive_kappas(&b.params).unwrap();
        let r = build_constraints(&m, &DofMap::monolithic(&m), &b.bcs, &k, 0.0, PressureTreatment::Combined);
        assert!(matches!(r, Err(Error::UnsupportedConfiguration(_))));
    }

    #[test]
    fn pure_traction_gets_three_rigid_motion_rows() {
        let m = unit(3);
        let b = Benchmark::with_defaults(BenchmarkKind::NeumannBox);
        let k = derive_kappas(&b.params).unwrap();
        let cs = build_constraints(&m, &DofMap::stokes(&m), &b.bcs, &k, 0.0, PressureTreatment::Combined).unwrap();
        assert_eq!(cs.rigid_motion_rows, 3);
        assert_eq!(cs.affine.len(), 3);
        assert!(cs.dirichlet.is_empty());

        let l = assemble_load(&m, &DofMap::stokes(&m), &b.sources, &b.bcs, &b.params, 0.0).unwrap();
        let w = rigid_motion_work(&m, &l.mechanics);
        assert!(w.iter().all(|v| v.abs() < 1e-13), "{w:?}");
    }

    #[test]
    fn single_dirichlet_in_identity() {
        let a = CsrMatrix::identity(2);
        let cs = ConstraintSet {
            dirichlet: vec![DirichletConstraint { dof: 1, value: 5.0 }],
            ..Default::default()
        };
        let (sys, rhs) = apply_constraints(&a, &[1.0, 0.0], &cs).unwrap();
        let (x, _) = solve(&factorize(sys.matrix()).unwrap(), &rhs).unwrap();
        assert_eq!(sys.expand(&x), vec![1.0, 5.0]);
    }

    #[test]
    fn elimination_is_symmetric_with_rhs_correction() {
        let a = CsrMatrix::from_dense(&[
            vec![2.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 2.0],
        ]);
        let cs = ConstraintSet {
            dirichlet: vec![DirichletConstraint { dof: 2, value: 3.0 }],
            ..Default::default()
        };
        let (sys, rhs) = apply_constraints(&a, &[0.0, 0.0, 0.0], &cs).unwrap();
        assert_eq!(sys.matrix().symmetry_defect(), 0.0);
        assert_eq!(rhs, vec![0.0, 3.0, 3.0]);
        let (x, _) = solve(&factorize(sys.matrix()).unwrap(), &rhs).unwrap();
        // Discrete harmonic: linear interpolation between the free end and 3.
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn dependent_affine_rows_are_rejected() {
        let a = CsrMatrix::identity(3);
        let row = AffineConstraint {
            coeffs: vec![(0, 1.0), (1, 2.0)],
            rhs: 1.0,
            multiplier_dof: None,
        };
        let cs = ConstraintSet {
            affine: vec![row.clone(), AffineConstraint { rhs: 2.0, coeffs: vec![(0, 2.0), (1, 4.0)], ..row }],
            ..Default::default()
        };
        assert!(matches!(ConstrainedSystem::new(&a, &cs), Err(Error::SingularConstraints(_))));

        let doubled = ConstraintSet {
            dirichlet: vec![
                DirichletConstraint { dof: 0, value: 1.0 },
                DirichletConstraint { dof: 0, value: 2.0 },
            ],
            ..Default::default()
        };
        assert!(matches!(ConstrainedSystem::new(&a, &doubled), Err(Error::SingularConstraints(_))));
    }

    #[test]
    fn rhs_refuses_foreign_structure() {
        let a = CsrMatrix::identity(3);
        let cs = ConstraintSet {
            dirichlet: vec![DirichletConstraint { dof: 0, value: 1.0 }],
            ..Default::default()
        };
        let sys = ConstrainedSystem::new(&a, &cs).unwrap();
        let other = ConstraintSet {
            dirichlet: vec![DirichletConstraint { dof: 1, value: 1.0 }],
            ..Default::default()
        };
        assert!(sys.rhs(&[0.0; 3], &other).is_err());
    }
}
