//! Backward-Euler time stepping of the reformulated system.
//!
//! With `θ = 0` each step solves a generalized Stokes problem for `(u, ξ)`
//! using the previous `η`, then a diffusion problem for `η`. With `θ = 1` the
//! three fields are solved together. Operators and factorizations are built
//! once per [`Simulation`]; only right-hand sides change between steps.

use crate::assembly::{
    assemble_div, assemble_elasticity, assemble_load, assemble_scalar_mass,
    assemble_scalar_stiffness, assemble_vector_mass, build_constraints, interpolate_vector,
    ConstrainedSystem, DofMap, LoadVectors, PressureTreatment, DATA_DEGREE,
};
use crate::elements::{triangle_quadrature, AffineMap, BasisKind, Tabulation};
use crate::error::{Error, Result};
use crate::mesh::{build_rect_mesh, Mesh};
use crate::model::{derive_kappas, Benchmark, DerivedCoeffs};
use crate::solver::{factorize, solve_with_tolerance, Factorization, LinearSolveReport, DEFAULT_TOLERANCE};
use crate::sparse::{CsrMatrix, TripletBuilder};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeScheme {
    /// 0: decoupled, 1: monolithic.
    pub theta: u8,
    pub dt: f64,
    pub final_time: f64,
    pub n_steps: usize,
}

impl TimeScheme {
    pub fn new(theta: u8, dt: f64, final_time: f64) -> Result<Self> {
        if theta > 1 {
            return Err(Error::InvalidArgument(format!("theta must be 0 or 1, got {theta}")));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if !(final_time >= 0.0) || !final_time.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "final time must be nonnegative, got {final_time}"
            )));
        }
        let n = (final_time / dt).round();
        if (n * dt - final_time).abs() > 1e-12 * final_time.max(dt) {
            return Err(Error::InvalidArgument(format!(
                "final time {final_time} is not an integer multiple of dt {dt}"
            )));
        }
        Ok(Self {
            theta,
            dt,
            final_time,
            n_steps: n as usize,
        })
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }
}

/// Largest `dt` admitted by the advisory `Δt ≤ c h²` gate for `θ = 0`.
pub fn stability_limit(benchmark: &Benchmark, coeffs: &DerivedCoeffs, h: f64) -> f64 {
    let p = &benchmark.params;
    let denom = p.mu * p.permeability * coeffs.kappa1 * coeffs.kappa1;
    if denom == 0.0 {
        return f64::INFINITY;
    }
    0.5 * p.fluid_viscosity / denom * h * h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCheck {
    pub dt: f64,
    pub limit: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub t: f64,
    pub step: usize,
    /// P2 displacement, interleaved per node.
    pub u: Vec<f64>,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    /// `η^{n+θ}`: the η that enters `p` (equal to `eta` for `θ = 1`).
    pub eta_theta: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl FieldState {
    fn from_parts(
        t: f64,
        step: usize,
        u: Vec<f64>,
        xi: Vec<f64>,
        eta: Vec<f64>,
        eta_theta: Vec<f64>,
        coeffs: &DerivedCoeffs,
    ) -> Self {
        let p = xi
            .iter()
            .zip(&eta_theta)
            .map(|(&x, &e)| coeffs.kappa1 * x + coeffs.kappa2 * e)
            .collect();
        let q = xi
            .iter()
            .zip(&eta)
            .map(|(&x, &e)| coeffs.kappa1 * e - coeffs.kappa3 * x)
            .collect();
        Self {
            t,
            step,
            u,
            xi,
            eta,
            eta_theta,
            p,
            q,
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.u, &self.xi, &self.eta, &self.p, &self.q]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Time-independent operators on a mesh. Scalar matrices live in block-local
/// numbering.
#[derive(Debug, Clone)]
pub struct Operators {
    pub dofmap: DofMap,
    /// `μ (ε(·), ε(·))`.
    pub elasticity: CsrMatrix,
    /// `(div ·, ψ)`.
    pub div: CsrMatrix,
    pub mass: CsrMatrix,
    /// `(K/μ_f)(∇·, ∇·)`.
    pub stiffness: CsrMatrix,
    pub vector_mass: CsrMatrix,
}

impl Operators {
    pub fn assemble(mesh: &Mesh, benchmark: &Benchmark) -> Result<Self> {
        let dofmap = DofMap::monolithic(mesh);
        Ok(Self {
            elasticity: assemble_elasticity(mesh, &dofmap, benchmark.params.mu)?,
            div: assemble_div(mesh, &dofmap)?,
            mass: assemble_scalar_mass(mesh, &dofmap)?,
            stiffness: assemble_scalar_stiffness(mesh, &dofmap, benchmark.params.mobility())?,
            vector_mass: assemble_vector_mass(mesh, &dofmap)?,
            dofmap,
        })
    }
}

struct Solver {
    system: ConstrainedSystem,
    fact: Factorization,
}

impl Solver {
    fn new(matrix: &CsrMatrix, cs: &crate::assembly::ConstraintSet) -> Result<Self> {
        let system = ConstrainedSystem::new(matrix, cs)?;
        let fact = factorize(system.matrix())?;
        Ok(Self { system, fact })
    }

    fn solve(
        &self,
        b: &[f64],
        cs: &crate::assembly::ConstraintSet,
        tolerance: f64,
    ) -> Result<(Vec<f64>, LinearSolveReport)> {
        let rhs = self.system.rhs(b, cs)?;
        let (x, report) = solve_with_tolerance(&self.fact, &rhs, tolerance)?;
        Ok((self.system.expand(&x), report))
    }
}

enum Engine {
    Coupled(Solver),
    Decoupled { stokes: Solver, flow: Solver },
}

pub struct Simulation {
    pub benchmark: Benchmark,
    pub mesh: Mesh,
    pub scheme: TimeScheme,
    pub coeffs: DerivedCoeffs,
    pub ops: Operators,
    pub stability: StabilityCheck,
    /// Relative residual every linear solve must reach.
    pub tolerance: f64,
    engine: Engine,
    constant_loads: Option<LoadVectors>,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("benchmark", &self.benchmark.kind)
            .field("nx", &self.mesh.nx)
            .field("ny", &self.mesh.ny)
            .field("scheme", &self.scheme)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub solves: Vec<LinearSolveReport>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `states[n]` is the state at `t_n`, `n = 0..=n_steps`.
    pub states: Vec<FieldState>,
    /// `loads[n]` is evaluated at `t_n`.
    pub loads: Vec<LoadVectors>,
    pub reports: Vec<StepReport>,
    pub stability: StabilityCheck,
}

impl Trajectory {
    pub fn max_residual(&self) -> f64 {
        self.reports
            .iter()
            .flat_map(|r| r.solves.iter())
            .map(|s| s.relative_residual)
            .fold(0.0, f64::max)
    }
}

fn monolithic_matrix(ops: &Operators, c: &DerivedCoeffs, dt: f64) -> CsrMatrix {
    let d = &ops.dofmap;
    let (xo, eo) = (d.xi_offset().unwrap(), d.eta_offset().unwrap());
    let n = d.total();
    let mut b = TripletBuilder::with_capacity(n, n, 0);
    b.push_block(0, 0, &ops.elasticity, 1.0);
    b.push_block_transposed(0, xo, &ops.div, -1.0);
    b.push_block(xo, 0, &ops.div, -1.0);
    b.push_block(xo, xo, &ops.mass, -c.kappa3);
    b.push_block(xo, eo, &ops.mass, c.kappa1);
    b.push_block(eo, xo, &ops.stiffness, c.kappa1);
    b.push_block(eo, eo, &ops.mass, 1.0 / dt);
    b.push_block(eo, eo, &ops.stiffness, c.kappa2);
    b.finalize()
}

fn stokes_matrix(ops: &Operators, c: &DerivedCoeffs) -> CsrMatrix {
    let n_u = ops.dofmap.n_u();
    let n = n_u + ops.dofmap.n_scalar();
    let mut b = TripletBuilder::with_capacity(n, n, 0);
    b.push_block(0, 0, &ops.elasticity, 1.0);
    b.push_block_transposed(0, n_u, &ops.div, -1.0);
    b.push_block(n_u, 0, &ops.div, -1.0);
    b.push_block(n_u, n_u, &ops.mass, -c.kappa3);
    b.finalize()
}

fn flow_matrix(ops: &Operators, c: &DerivedCoeffs, dt: f64) -> CsrMatrix {
    let n = ops.dofmap.n_scalar();
    let mut b = TripletBuilder::with_capacity(n, n, 0);
    b.push_block(0, 0, &ops.mass, 1.0 / dt);
    b.push_block(0, 0, &ops.stiffness, c.kappa2);
    b.finalize()
}

impl Simulation {
    pub fn new(benchmark: &Benchmark, nx: usize, ny: usize, scheme: TimeScheme) -> Result<Self> {
        benchmark.params.validate()?;
        let coeffs = derive_kappas(&benchmark.params)?;
        let mesh = build_rect_mesh(nx, ny, benchmark.rect)?;
        let ops = Operators::assemble(&mesh, benchmark)?;

        let limit = stability_limit(benchmark, &coeffs, mesh.h);
        let stability = StabilityCheck {
            dt: scheme.dt,
            limit,
            satisfied: scheme.dt <= limit,
        };
        if scheme.theta == 0 {
            if stability.satisfied {
                log::info!("dt = {} within the decoupled-scheme gate {limit:.3e}", scheme.dt);
            } else {
                log::warn!(
                    "dt = {} exceeds the decoupled-scheme gate {limit:.3e}; the run may be unstable",
                    scheme.dt
                );
            }
        }

        let t0 = 0.0;
        let engine = if scheme.theta == 1 {
            let cs = build_constraints(
                &mesh,
                &ops.dofmap,
                &benchmark.bcs,
                &coeffs,
                t0,
                PressureTreatment::Combined,
            )?;
            Engine::Coupled(Solver::new(&monolithic_matrix(&ops, &coeffs, scheme.dt), &cs)?)
        } else {
            let stokes_map = DofMap::stokes(&mesh);
            let cs = build_constraints(
                &mesh,
                &stokes_map,
                &benchmark.bcs,
                &coeffs,
                t0,
                PressureTreatment::Combined,
            )?;
            let stokes = Solver::new(&stokes_matrix(&ops, &coeffs), &cs)?;
            let zero = vec![0.0; mesh.n_vertices()];
            let cs = build_constraints(
                &mesh,
                &DofMap::flow(&mesh),
                &benchmark.bcs,
                &coeffs,
                t0,
                PressureTreatment::Eliminated { xi: &zero },
            )?;
            let flow = Solver::new(&flow_matrix(&ops, &coeffs, scheme.dt), &cs)?;
            Engine::Decoupled { stokes, flow }
        };

        let mut sim = Self {
            benchmark: benchmark.clone(),
            mesh,
            scheme,
            coeffs,
            ops,
            stability,
            tolerance: DEFAULT_TOLERANCE,
            engine,
            constant_loads: None,
        };
        if benchmark.time_independent_loads {
            sim.constant_loads = Some(sim.assemble_load(0.0)?);
        }
        Ok(sim)
    }

    fn assemble_load(&self, t: f64) -> Result<LoadVectors> {
        assemble_load(
            &self.mesh,
            &self.ops.dofmap,
            &self.benchmark.sources,
            &self.benchmark.bcs,
            &self.benchmark.params,
            t,
        )
    }

    pub fn load(&self, t: f64) -> Result<LoadVectors> {
        match &self.constant_loads {
            Some(l) => Ok(l.clone()),
            None => self.assemble_load(t),
        }
    }

    /// Elliptic projection of `u₀`, L² projections of `p₀` and `div u₀`.
    pub fn initial_state(&self) -> Result<FieldState> {
        init_state(&self.benchmark, &self.mesh, &self.ops, &self.coeffs)
    }

    pub fn step(&self, state: &FieldState) -> Result<(FieldState, Vec<LinearSolveReport>)> {
        match self.scheme.theta {
            0 => self.step_decoupled(state),
            _ => self.step_coupled(state),
        }
    }

    pub fn step_coupled(&self, state: &FieldState) -> Result<(FieldState, Vec<LinearSolveReport>)> {
        let Engine::Coupled(solver) = &self.engine else {
            return Err(Error::InvalidArgument("step_coupled needs theta = 1".into()));
        };
        let d = &self.ops.dofmap;
        let (xo, eo) = (d.xi_offset().unwrap(), d.eta_offset().unwrap());
        let t = state.t + self.scheme.dt;
        let load = self.load(t)?;

        let mut b = vec![0.0; d.total()];
        b[..d.n_u()].copy_from_slice(&load.mechanics);
        let mut flow = load.flow;
        self.ops.mass.mul_vec_add(&state.eta, 1.0 / self.scheme.dt, &mut flow);
        b[eo..].copy_from_slice(&flow);

        let cs = build_constraints(
            &self.mesh,
            d,
            &self.benchmark.bcs,
            &self.coeffs,
            t,
            PressureTreatment::Combined,
        )?;
        let (x, report) = solver.solve(&b, &cs, self.tolerance)?;
        let u = x[..d.n_u()].to_vec();
        let xi = x[xo..eo].to_vec();
        let eta = x[eo..].to_vec();
        let next = FieldState::from_parts(t, state.step + 1, u, xi, eta.clone(), eta, &self.coeffs);
        Ok((next, vec![report]))
    }

    pub fn step_decoupled(&self, state: &FieldState) -> Result<(FieldState, Vec<LinearSolveReport>)> {
        let Engine::Decoupled { stokes, flow } = &self.engine else {
            return Err(Error::InvalidArgument("step_decoupled needs theta = 0".into()));
        };
        let n_u = self.ops.dofmap.n_u();
        let t = state.t + self.scheme.dt;
        let load = self.load(t)?;

        let mut b = load.mechanics.clone();
        b.resize(n_u + self.mesh.n_vertices(), 0.0);
        let mut tail = vec![0.0; self.mesh.n_vertices()];
        self.ops.mass.mul_vec_add(&state.eta, -self.coeffs.kappa1, &mut tail);
        b[n_u..].copy_from_slice(&tail);
        let cs = build_constraints(
            &self.mesh,
            &DofMap::stokes(&self.mesh),
            &self.benchmark.bcs,
            &self.coeffs,
            t,
            PressureTreatment::Combined,
        )?;
        let (x, stokes_report) = stokes.solve(&b, &cs, self.tolerance)?;
        let u = x[..n_u].to_vec();
        let xi = x[n_u..].to_vec();

        let mut rhs = load.flow;
        self.ops.mass.mul_vec_add(&state.eta, 1.0 / self.scheme.dt, &mut rhs);
        self.ops.stiffness.mul_vec_add(&xi, -self.coeffs.kappa1, &mut rhs);
        let cs = build_constraints(
            &self.mesh,
            &DofMap::flow(&self.mesh),
            &self.benchmark.bcs,
            &self.coeffs,
            t,
            PressureTreatment::Eliminated { xi: &xi },
        )?;
        let (eta, flow_report) = flow.solve(&rhs, &cs, self.tolerance)?;
        let next = FieldState::from_parts(
            t,
            state.step + 1,
            u,
            xi,
            eta,
            state.eta.clone(),
            &self.coeffs,
        );
        Ok((next, vec![stokes_report, flow_report]))
    }

    pub fn run(&self) -> Result<Trajectory> {
        let mut states = vec![self.initial_state()?];
        let mut loads = vec![self.load(0.0)?];
        let mut reports = Vec::with_capacity(self.scheme.n_steps);
        for n in 0..self.scheme.n_steps {
            let (next, solves) = self.step(&states[n]).map_err(|e| Error::Step {
                step: n + 1,
                source: Box::new(e),
            })?;
            loads.push(self.load(next.t)?);
            reports.push(StepReport { step: n + 1, solves });
            states.push(next);
        }
        Ok(Trajectory {
            states,
            loads,
            reports,
            stability: self.stability,
        })
    }
}

/// Builds the simulation and runs it to the final time.
pub fn run(
    benchmark: &Benchmark,
    nx: usize,
    ny: usize,
    scheme: TimeScheme,
) -> Result<(Simulation, Trajectory)> {
    let sim = Simulation::new(benchmark, nx, ny, scheme)?;
    let traj = sim.run()?;
    Ok((sim, traj))
}

fn projection_error(e: Error) -> Error {
    match e {
        Error::SingularMatrix { row } => Error::Configuration(format!(
            "initial projection system is singular (zero pivot at row {row})"
        )),
        other => other,
    }
}

/// Initial state: `u⁰ = R_h u₀`, `p⁰ = Q_h p₀`, `q⁰ = Q_h div u₀`, and
/// `(ξ⁰, η⁰)` from `(p⁰, q⁰)` coefficientwise.
pub fn init_state(
    benchmark: &Benchmark,
    mesh: &Mesh,
    ops: &Operators,
    coeffs: &DerivedCoeffs,
) -> Result<FieldState> {
    let params = &benchmark.params;
    let init = &benchmark.initial;
    let rule = triangle_quadrature(DATA_DEGREE)?;
    let p2 = Tabulation::new(BasisKind::P2, &rule);
    let p1 = Tabulation::new(BasisKind::P1, &rule);

    let mut rhs_u = vec![0.0; ops.dofmap.n_u()];
    let mut rhs_p = vec![0.0; mesh.n_vertices()];
    let mut rhs_q = vec![0.0; mesh.n_vertices()];
    for tri in 0..mesh.n_triangles() {
        let map = AffineMap::new(mesh.triangle_coords(tri));
        let nodes = mesh.p2_triangle_nodes(tri);
        let verts = mesh.triangles[tri];
        for (k, &w) in rule.weights.iter().enumerate() {
            let x = map.map_bary(rule.points[k]);
            let wq = w * map.abs_det();
            let g = (init.grad_u0)(x, 0.0);
            let eps = [
                [g[0][0], 0.5 * (g[0][1] + g[1][0])],
                [0.5 * (g[0][1] + g[1][0]), g[1][1]],
            ];
            for a in 0..6 {
                let ga = map.physical_grad(p2.ref_grads[k][a]);
                for i in 0..2 {
                    rhs_u[2 * nodes[a] + i] +=
                        wq * params.mu * (eps[i][0] * ga[0] + eps[i][1] * ga[1]);
                }
            }
            let (p0, div0) = ((init.p0)(x, 0.0), g[0][0] + g[1][1]);
            for i in 0..3 {
                rhs_p[verts[i]] += wq * p0 * p1.values[k][i];
                rhs_q[verts[i]] += wq * div0 * p1.values[k][i];
            }
        }
    }

    let disp_map = DofMap::displacement(mesh);
    let mut cs = build_constraints(
        mesh,
        &disp_map,
        &benchmark.bcs,
        coeffs,
        0.0,
        PressureTreatment::Combined,
    )?;
    if cs.rigid_motion_rows > 0 {
        let u0 = interpolate_vector(mesh, &init.u0, 0.0);
        for row in cs.affine.iter_mut().take(cs.rigid_motion_rows) {
            row.rhs = row.coeffs.iter().map(|&(d, c)| c * u0[d]).sum();
        }
    }
    let elastic = Solver::new(&ops.elasticity, &cs).map_err(projection_error)?;
    let (u, _) = elastic.solve(&rhs_u, &cs, DEFAULT_TOLERANCE)?;

    let mass = Solver::new(&ops.mass, &Default::default()).map_err(projection_error)?;
    let (p, _) = mass.solve(&rhs_p, &Default::default(), DEFAULT_TOLERANCE)?;
    let (q, _) = mass.solve(&rhs_q, &Default::default(), DEFAULT_TOLERANCE)?;

    let (xi, eta): (Vec<f64>, Vec<f64>) = p
        .iter()
        .zip(&q)
        .map(|(&p, &q)| crate::model::xieta_from_pq(p, q, params))
        .unzip();
    Ok(FieldState::from_parts(0.0, 0, u, xi, eta.clone(), eta, coeffs))
}
