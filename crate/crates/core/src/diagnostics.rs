//! Checks and estimates evaluated on completed states: conserved
//! quantities, the discrete energy law, errors against exact solutions,
//! pressure oscillation along a sample line, the inf-sup constant, and the
//! small-storage limit.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::assembly::{assemble_div, assemble_elasticity, build_constraints, DofMap, PressureTreatment};
use crate::elements::{triangle_quadrature, AffineMap, BasisKind, Tabulation};
use crate::error::{Error, Result};
use crate::mesh::{build_rect_mesh, BoundaryTag, Mesh, Rect};
use crate::model::{Benchmark, DerivedCoeffs, ExactSolution, FlowBc, ScalarFn};
use crate::sparse::{dot, CsrMatrix};
use crate::stepper::{run, FieldState, Simulation, TimeScheme, Trajectory};

const ERROR_DEGREE: usize = 6;

/// Reference values of the conserved integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservedQuantities {
    pub c_eta: f64,
    pub c_xi: f64,
    pub c_q: f64,
    pub c_p: f64,
    pub c_u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservationRecord {
    pub step: usize,
    pub reference: ConservedQuantities,
    pub eta_measured: f64,
    pub xi_measured: f64,
    pub flux_measured: f64,
    /// `None` when the identity does not apply to the boundary conditions.
    pub eta_residual: Option<f64>,
    pub xi_residual: Option<f64>,
    pub flux_residual: Option<f64>,
}

fn relative(measured: f64, reference: f64) -> f64 {
    (measured - reference).abs() / reference.abs().max(1.0)
}

/// `⟨u_h·n, 1⟩` over the whole boundary.
pub fn boundary_flux(mesh: &Mesh, u: &[f64]) -> f64 {
    let mut total = 0.0;
    for be in &mesh.boundary_edges {
        let e = mesh.edges[be.edge];
        let n = be.tag.normal();
        let (a, b) = (mesh.vertices[e.vertices[0]], mesh.vertices[e.vertices[1]]);
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let un = |node: usize| u[2 * node] * n[0] + u[2 * node + 1] * n[1];
        total += len * ((un(e.vertices[0]) + un(e.vertices[1])) / 6.0 + 2.0 * un(e.node) / 3.0);
    }
    total
}

fn identity_field(mesh: &Mesh) -> Vec<f64> {
    (0..mesh.n_p2_nodes())
        .flat_map(|n| mesh.p2_node_coords(n))
        .collect()
}

/// Per-step conservation residuals. The η identity needs a pure-flux flow
/// problem; the ξ and `u·n` identities additionally need pure traction.
pub fn conservation_history(sim: &Simulation, traj: &Trajectory) -> Vec<ConservationRecord> {
    let bcs = &sim.benchmark.bcs;
    let eta_applies = bcs.pure_flux();
    let mech_applies = eta_applies && bcs.pure_traction();
    let ones = vec![1.0; sim.mesh.n_vertices()];
    let mass_ones = sim.ops.mass.mul_vec(&ones);
    let x = identity_field(&sim.mesh);
    let c = &sim.coeffs;
    let mu = sim.benchmark.params.mu;
    let theta = sim.scheme.theta as usize;

    let mut c_eta = Vec::with_capacity(traj.states.len());
    c_eta.push(dot(&mass_ones, &traj.states[0].eta));
    for n in 1..traj.states.len() {
        let source: f64 = traj.loads[n].flow.iter().sum();
        c_eta.push(c_eta[n - 1] + sim.scheme.dt * source);
    }

    traj.states
        .iter()
        .enumerate()
        .map(|(n, s)| {
            let lagged = if n == 0 { c_eta[0] } else { c_eta[n - 1 + theta] };
            let work = dot(&traj.loads[n].mechanics, &x);
            let c_xi = (mu * c.kappa1 * lagged - work) / (2.0 + mu * c.kappa3);
            let c_q = c.kappa1 * lagged - c.kappa3 * c_xi;
            let reference = ConservedQuantities {
                c_eta: c_eta[n],
                c_xi,
                c_q,
                c_p: c.kappa1 * c_xi + c.kappa2 * c_eta[n],
                c_u: c_q,
            };
            let eta_measured = dot(&mass_ones, &s.eta);
            let xi_measured = dot(&mass_ones, &s.xi);
            let flux_measured = boundary_flux(&sim.mesh, &s.u);
            let from_scheme = mech_applies && n > 0;
            ConservationRecord {
                step: n,
                reference,
                eta_measured,
                xi_measured,
                flux_measured,
                eta_residual: eta_applies.then(|| relative(eta_measured, reference.c_eta)),
                xi_residual: from_scheme.then(|| relative(xi_measured, reference.c_xi)),
                flux_residual: from_scheme.then(|| relative(flux_measured, reference.c_u)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRecord {
    pub step: usize,
    pub j: f64,
    /// Accumulated dissipation since the first computed step.
    pub s: f64,
    /// `J + S − J` of the first computed step.
    pub residual: f64,
    /// `residual / max(1, |J|)` of the first computed step.
    pub relative_residual: f64,
    /// Accumulated dissipation with the cross term dropped and the
    /// displacement and gradient terms halved.
    pub s_hat: f64,
}

fn energy(sim: &Simulation, s: &FieldState, mech: &[f64]) -> f64 {
    let c = &sim.coeffs;
    0.5 * (sim.ops.elasticity.bilinear(&s.u, &s.u)
        + c.kappa2 * sim.ops.mass.bilinear(&s.eta_theta, &s.eta_theta)
        + c.kappa3 * sim.ops.mass.bilinear(&s.xi, &s.xi)
        - 2.0 * dot(mech, &s.u))
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Discrete energy bookkeeping from the first computed step onward; the
/// record for step `n` compares the energy of state `n` with that of state 1.
pub fn energy_audit(sim: &Simulation, traj: &Trajectory) -> Vec<EnergyRecord> {
    if traj.states.len() < 2 {
        return Vec::new();
    }
    if !sim.benchmark.time_independent_loads {
        log::warn!("loads depend on time; the energy residual is informational only");
    }
    let c = &sim.coeffs;
    let ops = &sim.ops;
    let dt = sim.scheme.dt;
    let theta = sim.scheme.theta;
    let j0 = energy(sim, &traj.states[1], &traj.loads[1].mechanics);
    let scale = j0.abs().max(1.0);
    let mut out = vec![EnergyRecord {
        step: 1,
        j: j0,
        s: 0.0,
        residual: 0.0,
        relative_residual: 0.0,
        s_hat: 0.0,
    }];
    let (mut s_cum, mut s_hat) = (0.0, 0.0);
    for n in 2..traj.states.len() {
        let (prev, cur) = (&traj.states[n - 1], &traj.states[n]);
        let du = diff(&cur.u, &prev.u);
        let deta = diff(&cur.eta_theta, &prev.eta_theta);
        let dxi = diff(&cur.xi, &prev.xi);
        let elastic = ops.elasticity.bilinear(&du, &du);
        let grad_p = ops.stiffness.bilinear(&cur.p, &cur.p);
        let work = dot(&traj.loads[n - 1 + theta as usize].flow, &cur.p);
        let storage = 0.5 * c.kappa2 * ops.mass.bilinear(&deta, &deta)
            + 0.5 * c.kappa3 * ops.mass.bilinear(&dxi, &dxi);
        let cross = if theta == 0 {
            dt * c.kappa1 * ops.stiffness.bilinear(&dxi, &cur.p)
        } else {
            0.0
        };
        s_cum += 0.5 * elastic + dt * (grad_p - work) + storage - cross;
        s_hat += 0.25 * elastic + dt * (0.5 * grad_p - work) + storage;
        let j = energy(sim, cur, &traj.loads[n].mechanics);
        let residual = j + s_cum - j0;
        out.push(EnergyRecord {
            step: n,
            j,
            s: s_cum,
            residual,
            relative_residual: residual.abs() / scale,
            s_hat,
        });
    }
    out
}

/// Spatial errors of one state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepErrors {
    pub u_l2: f64,
    pub u_h1: f64,
    pub p_l2: f64,
    pub p_h1: f64,
}

/// Discrete time norms over steps `1..=N` (the initial state when `N = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub h: f64,
    pub per_step: Vec<StepErrors>,
    pub u_linf_l2: f64,
    pub u_l2_h1: f64,
    pub p_linf_l2: f64,
    pub p_l2_h1: f64,
}

struct Evaluator {
    rule: crate::elements::QuadratureRule,
    p1: Tabulation,
    p2: Tabulation,
}

impl Evaluator {
    fn new() -> Self {
        let rule = triangle_quadrature(ERROR_DEGREE).expect("supported degree");
        Self {
            p1: Tabulation::new(BasisKind::P1, &rule),
            p2: Tabulation::new(BasisKind::P2, &rule),
            rule,
        }
    }
}

/// Spatial L² and H¹-seminorm errors of `(u, p)` against `exact` at `t`.
pub fn state_errors(mesh: &Mesh, u: &[f64], p: &[f64], exact: &ExactSolution, t: f64) -> StepErrors {
    let ev = Evaluator::new();
    let mut e = StepErrors::default();
    for tri in 0..mesh.n_triangles() {
        let map = AffineMap::new(mesh.triangle_coords(tri));
        let nodes = mesh.p2_triangle_nodes(tri);
        let verts = mesh.triangles[tri];
        for (k, &w) in ev.rule.weights.iter().enumerate() {
            let x = map.map_bary(ev.rule.points[k]);
            let wq = w * map.abs_det();
            let (mut uh, mut guh) = ([0.0; 2], [[0.0; 2]; 2]);
            for a in 0..6 {
                let g = map.physical_grad(ev.p2.ref_grads[k][a]);
                let v = ev.p2.values[k][a];
                for i in 0..2 {
                    let c = u[2 * nodes[a] + i];
                    uh[i] += c * v;
                    guh[i][0] += c * g[0];
                    guh[i][1] += c * g[1];
                }
            }
            let (mut ph, mut gph) = (0.0, [0.0; 2]);
            for i in 0..3 {
                let g = map.physical_grad(ev.p1.ref_grads[k][i]);
                ph += p[verts[i]] * ev.p1.values[k][i];
                gph[0] += p[verts[i]] * g[0];
                gph[1] += p[verts[i]] * g[1];
            }
            let (ue, gue) = ((exact.u)(x, t), (exact.grad_u)(x, t));
            let (pe, gpe) = ((exact.p)(x, t), (exact.grad_p)(x, t));
            for i in 0..2 {
                e.u_l2 += wq * (uh[i] - ue[i]).powi(2);
                for j in 0..2 {
                    e.u_h1 += wq * (guh[i][j] - gue[i][j]).powi(2);
                }
                e.p_h1 += wq * (gph[i] - gpe[i]).powi(2);
            }
            e.p_l2 += wq * (ph - pe).powi(2);
        }
    }
    StepErrors {
        u_l2: e.u_l2.sqrt(),
        u_h1: e.u_h1.sqrt(),
        p_l2: e.p_l2.sqrt(),
        p_h1: e.p_h1.sqrt(),
    }
}

/// L² distance between a P1 field and a scalar function.
pub fn scalar_l2_error(mesh: &Mesh, p: &[f64], f: &ScalarFn, t: f64) -> f64 {
    let ev = Evaluator::new();
    let mut total = 0.0;
    for tri in 0..mesh.n_triangles() {
        let map = AffineMap::new(mesh.triangle_coords(tri));
        let verts = mesh.triangles[tri];
        for (k, &w) in ev.rule.weights.iter().enumerate() {
            let ph: f64 = (0..3).map(|i| p[verts[i]] * ev.p1.values[k][i]).sum();
            let x = map.map_bary(ev.rule.points[k]);
            total += w * map.abs_det() * (ph - f(x, t)).powi(2);
        }
    }
    total.sqrt()
}

pub fn error_norms(sim: &Simulation, traj: &Trajectory) -> Result<ErrorReport> {
    let exact = sim.benchmark.exact.as_ref().ok_or_else(|| {
        Error::UnsupportedReport(format!(
            "benchmark {} has no exact solution",
            sim.benchmark.kind.name()
        ))
    })?;
    let per_step: Vec<StepErrors> = traj
        .states
        .iter()
        .map(|s| state_errors(&sim.mesh, &s.u, &s.p, exact, s.t))
        .collect();
    let window = if per_step.len() > 1 { &per_step[1..] } else { &per_step[..] };
    let dt = if per_step.len() > 1 { sim.scheme.dt } else { 1.0 };
    let max = |f: fn(&StepErrors) -> f64| window.iter().map(f).fold(0.0, f64::max);
    let l2 = |f: fn(&StepErrors) -> f64| window.iter().map(|e| dt * f(e).powi(2)).sum::<f64>().sqrt();
    Ok(ErrorReport {
        h: sim.mesh.h,
        u_linf_l2: max(|e| e.u_l2),
        u_l2_h1: l2(|e| e.u_h1),
        p_linf_l2: max(|e| e.p_l2),
        p_l2_h1: l2(|e| e.p_h1),
        per_step,
    })
}

/// Observed orders between consecutive entries; `None` for the first entry
/// and wherever the mesh sizes do not halve.
pub fn convergence_rates(h: &[f64], errors: &[f64]) -> Vec<Option<f64>> {
    (0..h.len())
        .map(|i| {
            if i == 0 || i >= errors.len() {
                return None;
            }
            let ratio = h[i - 1] / h[i];
            if (ratio - 2.0).abs() > 1e-6 || !(errors[i] > 0.0) || !(errors[i - 1] > 0.0) {
                return None;
            }
            Some((errors[i - 1] / errors[i]).ln() / ratio.ln())
        })
        .collect()
}

/// Largest deviation of `p` and `q` from their definitions in terms of ξ, η.
pub fn pq_consistency(state: &FieldState, coeffs: &DerivedCoeffs) -> f64 {
    let mut worst: f64 = 0.0;
    for v in 0..state.p.len() {
        let p = coeffs.kappa1 * state.xi[v] + coeffs.kappa2 * state.eta_theta[v];
        let q = coeffs.kappa1 * state.eta[v] - coeffs.kappa3 * state.xi[v];
        worst = worst
            .max((p - state.p[v]).abs() / p.abs().max(1.0))
            .max((q - state.q[v]).abs() / q.abs().max(1.0));
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct LockingIndicator {
    pub line_x: f64,
    /// Vertex values along the line, ordered by `x₂`.
    pub samples: Vec<f64>,
    pub extrema: usize,
    pub undershoot: f64,
}

/// Strict interior extrema of a sequence.
pub fn count_strict_extrema(values: &[f64]) -> usize {
    values
        .windows(3)
        .filter(|w| (w[1] - w[0]) * (w[2] - w[1]) < 0.0)
        .count()
}

/// Scans the vertical line `x₁ = line_x` through mesh vertices.
pub fn locking_scan(mesh: &Mesh, p: &[f64], line_x: f64, scale: f64) -> Result<LockingIndicator> {
    let tol = 1e-9 * mesh.rect.width();
    let mut pts: Vec<(f64, f64)> = mesh
        .vertices
        .iter()
        .zip(p)
        .filter(|(x, _)| (x[0] - line_x).abs() <= tol)
        .map(|(x, &v)| (x[1], v))
        .collect();
    if pts.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no mesh vertices on the line x1 = {line_x}"
        )));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let samples: Vec<f64> = pts.into_iter().map(|(_, v)| v).collect();
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LockingIndicator {
        line_x,
        extrema: count_strict_extrema(&samples),
        undershoot: (-min).max(0.0) / scale.max(1e-30),
        samples,
    })
}

/// Largest `|p_D|` over pressure-Dirichlet vertices at `t`; zero when there are none.
pub fn pressure_data_scale(benchmark: &Benchmark, mesh: &Mesh, t: f64) -> f64 {
    let mut scale: f64 = 0.0;
    for tag in BoundaryTag::ALL {
        if let FlowBc::Pressure(p) = &benchmark.bcs.segment(tag).flow {
            for v in mesh.vertices_on(tag) {
                scale = scale.max(p(mesh.vertices[v], t).abs());
            }
        }
    }
    scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PressureSpace {
    P1,
    /// Piecewise linear, discontinuous across edges.
    P1Discontinuous,
}

pub const INFSUP_DOF_BUDGET: usize = 2000;

/// Discrete inf-sup constant of P2 velocities vanishing on the boundary
/// against mean-zero pressures on the unit square.
pub fn estimate_infsup(n: usize, space: PressureSpace) -> Result<f64> {
    let mesh = build_rect_mesh(n, n, Rect::unit())?;
    let n_u = 2 * mesh.n_p2_nodes();
    let n_p = match space {
        PressureSpace::P1 => mesh.n_vertices(),
        PressureSpace::P1Discontinuous => 3 * mesh.n_triangles(),
    };
    if n_u + n_p > INFSUP_DOF_BUDGET {
        return Err(Error::TooLarge {
            dofs: n_u + n_p,
            budget: INFSUP_DOF_BUDGET,
        });
    }
    let dofmap = DofMap::stokes(&mesh);
    let a = assemble_elasticity(&mesh, &dofmap, 1.0)?.to_dense();
    let (b, m) = match space {
        PressureSpace::P1 => (
            assemble_div(&mesh, &dofmap)?.to_dense(),
            crate::assembly::assemble_scalar_mass(&mesh, &dofmap)?.to_dense(),
        ),
        PressureSpace::P1Discontinuous => discontinuous_forms(&mesh),
    };

    let mut boundary = vec![false; mesh.n_p2_nodes()];
    for tag in BoundaryTag::ALL {
        for node in mesh.p2_nodes_on(tag) {
            boundary[node] = true;
        }
    }
    let free: Vec<usize> = (0..n_u).filter(|&d| !boundary[d / 2]).collect();
    let nf = free.len();
    let a_ff = DMatrix::from_fn(nf, nf, |i, j| a[free[i]][free[j]]);
    let bt = DMatrix::from_fn(nf, n_p, |i, j| b[j][free[i]]);
    let chol = a_ff
        .cholesky()
        .ok_or_else(|| Error::Internal("velocity stiffness is not positive definite".into()))?;
    let schur = bt.transpose() * chol.solve(&bt);

    // Mean-zero basis: e_j − (m_j / m_last) e_last.
    let m = DMatrix::from_fn(n_p, n_p, |i, j| m[i][j]);
    let weights = m.column_sum();
    let last = n_p - 1;
    let mut z = DMatrix::<f64>::zeros(n_p, last);
    for j in 0..last {
        z[(j, j)] = 1.0;
        z[(last, j)] = -weights[j] / weights[last];
    }
    let s_z = z.transpose() * &schur * &z;
    let m_z = z.transpose() * &m * &z;
    let l = m_z
        .cholesky()
        .ok_or_else(|| Error::Internal("pressure mass is not positive definite".into()))?
        .l();
    let l_inv = l
        .try_inverse()
        .ok_or_else(|| Error::Internal("pressure mass factor is singular".into()))?;
    let sym = &l_inv * s_z * l_inv.transpose();
    let sym = (&sym + sym.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let smallest = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(smallest.max(0.0).sqrt())
}

/// Divergence and mass matrices (dense) for discontinuous P1 pressures.
fn discontinuous_forms(mesh: &Mesh) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let rule = triangle_quadrature(4).expect("supported degree");
    let p1 = Tabulation::new(BasisKind::P1, &rule);
    let p2 = Tabulation::new(BasisKind::P2, &rule);
    let n_p = 3 * mesh.n_triangles();
    let mut b = vec![vec![0.0; 2 * mesh.n_p2_nodes()]; n_p];
    let mut m = vec![vec![0.0; n_p]; n_p];
    for tri in 0..mesh.n_triangles() {
        let map = AffineMap::new(mesh.triangle_coords(tri));
        let nodes = mesh.p2_triangle_nodes(tri);
        for (k, &w) in rule.weights.iter().enumerate() {
            let wq = w * map.abs_det();
            for i in 0..3 {
                let row = 3 * tri + i;
                let psi = p1.values[k][i];
                for j in 0..3 {
                    m[row][3 * tri + j] += wq * psi * p1.values[k][j];
                }
                for a in 0..6 {
                    let g = map.physical_grad(p2.ref_grads[k][a]);
                    b[row][2 * nodes[a]] += wq * psi * g[0];
                    b[row][2 * nodes[a] + 1] += wq * psi * g[1];
                }
            }
        }
    }
    (b, m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub c0_from: f64,
    pub c0_to: f64,
    pub u_distance: f64,
    pub eta_distance: f64,
    pub xi_distance: f64,
}

fn linf_l2_distance(a: &Trajectory, b: &Trajectory, mass: &CsrMatrix, field: fn(&FieldState) -> &[f64]) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| {
            let d = diff(field(x), field(y));
            mass.bilinear(&d, &d).max(0.0).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Runs `benchmark` once per storage coefficient and reports discrete
/// `L∞(L²)` distances between consecutive runs.
pub fn biot_limit_sweep(
    benchmark: &Benchmark,
    nx: usize,
    ny: usize,
    scheme: TimeScheme,
    c0_values: &[f64],
) -> Result<Vec<SweepRow>> {
    let mut runs = Vec::with_capacity(c0_values.len());
    for &c0 in c0_values {
        let mut params = benchmark.params;
        params.c0 = c0;
        let b = Benchmark::new(benchmark.kind, params)?;
        let b = Benchmark { final_time: benchmark.final_time, ..b };
        runs.push(run(&b, nx, ny, scheme)?);
    }
    Ok(runs
        .windows(2)
        .zip(c0_values.windows(2))
        .map(|(pair, c)| {
            let ops = &pair[0].0.ops;
            let (a, b) = (&pair[0].1, &pair[1].1);
            SweepRow {
                c0_from: c[0],
                c0_to: c[1],
                u_distance: linf_l2_distance(a, b, &ops.vector_mass, |s| &s.u),
                eta_distance: linf_l2_distance(a, b, &ops.mass, |s| &s.eta),
                xi_distance: linf_l2_distance(a, b, &ops.mass, |s| &s.xi),
            }
        })
        .collect())
}

/// Displacement-Dirichlet and pressure-Dirichlet counts, for reporting.
pub fn constraint_summary(sim: &Simulation) -> Result<(usize, usize)> {
    let cs = build_constraints(
        &sim.mesh,
        &sim.ops.dofmap,
        &sim.benchmark.bcs,
        &sim.coeffs,
        0.0,
        PressureTreatment::Combined,
    )?;
    Ok((cs.dirichlet.len(), cs.affine.len() - cs.rigid_motion_rows))
}
