//! Physical parameters, reformulation coefficients, boundary data and the
//! benchmark problems.
//!
//! The constitutive law is `σ(u) = μ ε(u) + λ div u I` and Darcy's law reads
//! `v_f = −(K/μ_f)(∇p − ρ_f g)`. Data closures are evaluated in physical
//! variables; the translation to `(ξ, η)` happens during assembly.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, Rect};

pub type ScalarFn = Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn([f64; 2], f64) -> [f64; 2] + Send + Sync>;
/// `g[i][j] = ∂v_i/∂x_j`.
pub type TensorFn = Arc<dyn Fn([f64; 2], f64) -> [[f64; 2]; 2] + Send + Sync>;

fn scalar(f: impl Fn([f64; 2], f64) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

fn vector(f: impl Fn([f64; 2], f64) -> [f64; 2] + Send + Sync + 'static) -> VectorFn {
    Arc::new(f)
}

fn tensor(f: impl Fn([f64; 2], f64) -> [[f64; 2]; 2] + Send + Sync + 'static) -> TensorFn {
    Arc::new(f)
}

fn zero_scalar() -> ScalarFn {
    scalar(|_, _| 0.0)
}

fn zero_vector() -> VectorFn {
    vector(|_, _| [0.0, 0.0])
}

fn zero_tensor() -> TensorFn {
    tensor(|_, _| [[0.0; 2]; 2])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    /// First Lamé constant λ.
    pub lambda: f64,
    /// Shear modulus μ.
    pub mu: f64,
    /// Biot–Willis constant α.
    pub alpha: f64,
    /// Constrained specific storage c₀.
    pub c0: f64,
    /// Scalar permeability K (the tensor is K·I).
    pub permeability: f64,
    /// Solvent viscosity μ_f.
    pub fluid_viscosity: f64,
    /// ρ_f g.
    pub gravity_force: [f64; 2],
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            mu: 1.0,
            alpha: 1.0,
            c0: 1.0,
            permeability: 1.0,
            fluid_viscosity: 1.0,
            gravity_force: [0.0, 0.0],
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.mu > 0.0, "mu > 0"),
            (self.lambda >= 0.0, "lambda >= 0"),
            (self.alpha > 0.0, "alpha > 0"),
            (self.c0 >= 0.0, "c0 >= 0"),
            (self.permeability > 0.0, "K > 0"),
            (self.fluid_viscosity > 0.0, "mu_f > 0"),
            (
                self.gravity_force.iter().all(|g| g.is_finite()),
                "finite rho_f g",
            ),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "material parameters violate {what}: {self:?}"
                )));
            }
        }
        Ok(())
    }

    /// Hydraulic mobility K/μ_f.
    pub fn mobility(&self) -> f64 {
        self.permeability / self.fluid_viscosity
    }
}

/// Coefficients of the map `(ξ, η) ↦ (p, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedCoeffs {
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
}

pub fn derive_kappas(params: &MaterialParams) -> Result<DerivedCoeffs> {
    let denom = params.alpha * params.alpha + params.lambda * params.c0;
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::DegenerateParameters(format!(
            "alpha^2 + lambda*c0 = {denom} must be positive"
        )));
    }
    Ok(DerivedCoeffs {
        kappa1: params.alpha / denom,
        kappa2: params.lambda / denom,
        kappa3: params.c0 / denom,
    })
}

impl DerivedCoeffs {
    /// `p = κ₁ξ + κ₂η`, `q = κ₁η − κ₃ξ`.
    pub fn pq_from_xieta(&self, xi: f64, eta: f64) -> (f64, f64) {
        (
            self.kappa1 * xi + self.kappa2 * eta,
            self.kappa1 * eta - self.kappa3 * xi,
        )
    }
}

pub fn pq_from_xieta(xi: f64, eta: f64, coeffs: &DerivedCoeffs) -> (f64, f64) {
    coeffs.pq_from_xieta(xi, eta)
}

/// `ξ = αp − λq`, `η = c₀p + αq`; returned as `(ξ, η)`.
pub fn xieta_from_pq(p: f64, q: f64, params: &MaterialParams) -> (f64, f64) {
    (
        params.alpha * p - params.lambda * q,
        params.c0 * p + params.alpha * q,
    )
}

/// Lamé constants `(λ, μ)` from Young's modulus and Poisson's ratio.
pub fn lame_from_young_poisson(young: f64, nu: f64) -> Result<(f64, f64)> {
    if nu >= 0.5 {
        return Err(Error::IncompressibleLimit { nu });
    }
    if !(young > 0.0) || !(nu > -1.0) {
        return Err(Error::InvalidArgument(format!(
            "need E > 0 and -1 < nu < 0.5, got E={young}, nu={nu}"
        )));
    }
    let lambda = young * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = young / (2.0 * (1.0 + nu));
    Ok((lambda, mu))
}

#[derive(Clone)]
pub enum FlowBc {
    /// Pressure Dirichlet data `p = p_D`.
    Pressure(ScalarFn),
    /// Darcy flux data `φ₁`, entering the weak form as `⟨φ₁, ψ⟩`.
    Flux(ScalarFn),
}

impl fmt::Debug for FlowBc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowBc::Pressure(_) => f.write_str("Pressure(..)"),
            FlowBc::Flux(_) => f.write_str("Flux(..)"),
        }
    }
}

/// Conditions on one side of the rectangle. Each displacement component is
/// either prescribed or left to the traction `f₁ = σ(u)n − αpn`.
#[derive(Clone)]
pub struct SegmentBc {
    pub displacement: [Option<ScalarFn>; 2],
    pub traction: VectorFn,
    pub flow: FlowBc,
}

impl fmt::Debug for SegmentBc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SegmentBc")
            .field(
                "dirichlet_components",
                &[self.displacement[0].is_some(), self.displacement[1].is_some()],
            )
            .field("flow", &self.flow)
            .finish()
    }
}

impl SegmentBc {
    pub fn traction_free() -> Self {
        Self {
            displacement: [None, None],
            traction: zero_vector(),
            flow: FlowBc::Flux(zero_scalar()),
        }
    }
}

/// Boundary data indexed by [`BoundaryTag::index`].
#[derive(Clone, Debug)]
pub struct BoundaryConditions {
    pub segments: [SegmentBc; 4],
}

impl BoundaryConditions {
    pub fn segment(&self, tag: BoundaryTag) -> &SegmentBc {
        &self.segments[tag.index()]
    }

    pub fn has_displacement_dirichlet(&self) -> bool {
        self.segments
            .iter()
            .any(|s| s.displacement.iter().any(Option::is_some))
    }

    /// No displacement component prescribed anywhere.
    pub fn pure_traction(&self) -> bool {
        !self.has_displacement_dirichlet()
    }

    pub fn has_pressure_dirichlet(&self) -> bool {
        self.segments
            .iter()
            .any(|s| matches!(s.flow, FlowBc::Pressure(_)))
    }

    /// Darcy flux prescribed on every side.
    pub fn pure_flux(&self) -> bool {
        !self.has_pressure_dirichlet()
    }
}

#[derive(Clone)]
pub struct SourceFunctions {
    pub body_force: VectorFn,
    pub mass_source: ScalarFn,
}

#[derive(Clone)]
pub struct ExactSolution {
    pub u: VectorFn,
    pub grad_u: TensorFn,
    pub p: ScalarFn,
    pub grad_p: VectorFn,
}

/// Initial displacement (with its gradient, so `div u₀` is available) and pressure.
#[derive(Clone)]
pub struct InitialData {
    pub u0: VectorFn,
    pub grad_u0: TensorFn,
    pub p0: ScalarFn,
}

impl InitialData {
    pub fn zero() -> Self {
        Self {
            u0: zero_vector(),
            grad_u0: zero_tensor(),
            p0: zero_scalar(),
        }
    }

    pub fn div_u0(&self, x: [f64; 2]) -> f64 {
        let g = (self.grad_u0)(x, 0.0);
        g[0][0] + g[1][1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchmarkKind {
    /// Manufactured solution with mixed boundary conditions.
    Test1,
    /// Barry–Mercer point-source-like benchmark.
    BarryMercer,
    /// Cantilever-type problem used to expose pressure locking.
    Locking,
    /// Exact solution lying in the discrete space (quadratic `u`, linear `p`).
    Polynomial,
    /// Pure traction, pure flux box with a uniform source.
    NeumannBox,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 5] = [
        BenchmarkKind::Test1,
        BenchmarkKind::BarryMercer,
        BenchmarkKind::Locking,
        BenchmarkKind::Polynomial,
        BenchmarkKind::NeumannBox,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkKind::Test1 => "test1",
            BenchmarkKind::BarryMercer => "barry_mercer",
            BenchmarkKind::Locking => "locking",
            BenchmarkKind::Polynomial => "polynomial",
            BenchmarkKind::NeumannBox => "neumann_box",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Final time of the benchmark.
    pub fn default_final_time(self) -> f64 {
        match self {
            BenchmarkKind::Test1 | BenchmarkKind::Locking | BenchmarkKind::Polynomial => 1e-3,
            BenchmarkKind::BarryMercer => 1.0,
            BenchmarkKind::NeumannBox => 0.1,
        }
    }

    pub fn default_dt(self) -> f64 {
        match self {
            BenchmarkKind::Test1 | BenchmarkKind::Polynomial => 1e-5,
            BenchmarkKind::BarryMercer => 1e-2,
            BenchmarkKind::Locking => 1e-4,
            BenchmarkKind::NeumannBox => 1e-2,
        }
    }

    pub fn default_params(self) -> MaterialParams {
        match self {
            BenchmarkKind::Test1 | BenchmarkKind::Polynomial | BenchmarkKind::BarryMercer => {
                MaterialParams::default()
            }
            BenchmarkKind::Locking => {
                let (lambda, mu) =
                    lame_from_young_poisson(1e5, 0.4).expect("valid Young/Poisson pair");
                MaterialParams {
                    lambda,
                    mu,
                    alpha: 1.0,
                    c0: 0.0,
                    permeability: 1e-6,
                    fluid_viscosity: 1.0,
                    gravity_force: [0.0, 0.0],
                }
            }
            BenchmarkKind::NeumannBox => MaterialParams {
                c0: 0.0,
                ..MaterialParams::default()
            },
        }
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone)]
pub struct Benchmark {
    pub kind: BenchmarkKind,
    pub rect: Rect,
    pub final_time: f64,
    pub params: MaterialParams,
    pub bcs: BoundaryConditions,
    pub sources: SourceFunctions,
    pub initial: InitialData,
    pub exact: Option<ExactSolution>,
    /// Sources and boundary loads do not depend on time.
    pub time_independent_loads: bool,
}

impl fmt::Debug for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Benchmark")
            .field("kind", &self.kind)
            .field("rect", &self.rect)
            .field("final_time", &self.final_time)
            .field("params", &self.params)
            .field("bcs", &self.bcs)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

impl Benchmark {
    /// Builds a benchmark with the given material parameters.
    pub fn new(kind: BenchmarkKind, params: MaterialParams) -> Result<Self> {
        params.validate()?;
        derive_kappas(&params)?;
        Ok(match kind {
            BenchmarkKind::Test1 => test1(params),
            BenchmarkKind::BarryMercer => barry_mercer(params),
            BenchmarkKind::Locking => locking(params),
            BenchmarkKind::Polynomial => polynomial(params),
            BenchmarkKind::NeumannBox => neumann_box(params),
        })
    }

    pub fn with_defaults(kind: BenchmarkKind) -> Self {
        Self::new(kind, kind.default_params()).expect("default parameters are admissible")
    }
}

pub fn benchmark_test1() -> Benchmark {
    Benchmark::with_defaults(BenchmarkKind::Test1)
}

pub fn benchmark_barry_mercer() -> Benchmark {
    Benchmark::with_defaults(BenchmarkKind::BarryMercer)
}

pub fn benchmark_locking() -> Benchmark {
    Benchmark::with_defaults(BenchmarkKind::Locking)
}

/// `u = (t/2)(x₁², x₂²)`, `p = sin(x₁ + x₂) eᵗ` on the unit square.
fn test1(params: MaterialParams) -> Benchmark {
    let MaterialParams {
        lambda,
        mu,
        alpha,
        c0,
        ..
    } = params;
    let k = params.mobility();

    let u = vector(|x, t| [0.5 * t * x[0] * x[0], 0.5 * t * x[1] * x[1]]);
    let grad_u = tensor(|x, t| [[t * x[0], 0.0], [0.0, t * x[1]]]);
    let p = scalar(|x, t| (x[0] + x[1]).sin() * t.exp());
    let grad_p = vector(|x, t| {
        let g = (x[0] + x[1]).cos() * t.exp();
        [g, g]
    });

    let body_force = vector(move |x, t| {
        let v = -(lambda + mu) * t + alpha * (x[0] + x[1]).cos() * t.exp();
        [v, v]
    });
    let mass_source =
        scalar(move |x, t| (c0 + 2.0 * k) * (x[0] + x[1]).sin() * t.exp() + alpha * (x[0] + x[1]));

    let segment = |tag: BoundaryTag| {
        let n = tag.normal();
        let traction = vector(move |x: [f64; 2], t: f64| {
            let s = lambda * (x[0] + x[1]) * t - alpha * (x[0] + x[1]).sin() * t.exp();
            [mu * x[0] * n[0] * t + s * n[0], mu * x[1] * n[1] * t + s * n[1]]
        });
        let u1: Option<ScalarFn> = Some(scalar(|x, t| 0.5 * x[0] * x[0] * t));
        let u2: Option<ScalarFn> = Some(scalar(|x, t| 0.5 * x[1] * x[1] * t));
        let displacement = match tag {
            BoundaryTag::Right | BoundaryTag::Left => [u1, None],
            BoundaryTag::Bottom | BoundaryTag::Top => [None, u2],
        };
        SegmentBc {
            displacement,
            traction,
            flow: FlowBc::Pressure(p.clone()),
        }
    };

    Benchmark {
        kind: BenchmarkKind::Test1,
        rect: Rect::unit(),
        final_time: BenchmarkKind::Test1.default_final_time(),
        params,
        bcs: BoundaryConditions {
            segments: BoundaryTag::ALL.map(segment),
        },
        sources: SourceFunctions {
            body_force,
            mass_source,
        },
        initial: InitialData {
            u0: zero_vector(),
            grad_u0: zero_tensor(),
            p0: scalar(|x, _| (x[0] + x[1]).sin()),
        },
        exact: Some(ExactSolution {
            u,
            grad_u,
            p: p.clone(),
            grad_p,
        }),
        time_independent_loads: false,
    }
}

/// Bottom pressure pulse: `sin t` on `0.2 ≤ x₁ < 0.8`, zero elsewhere.
pub fn barry_mercer_pulse(x1: f64, t: f64) -> f64 {
    if (0.2..0.8).contains(&x1) {
        t.sin()
    } else {
        0.0
    }
}

fn barry_mercer(params: MaterialParams) -> Benchmark {
    let alpha = params.alpha;
    let segment = |tag: BoundaryTag| {
        let p_d: ScalarFn = match tag {
            BoundaryTag::Bottom => scalar(|x, t| barry_mercer_pulse(x[0], t)),
            _ => zero_scalar(),
        };
        let p_traction = p_d.clone();
        let zero: Option<ScalarFn> = Some(zero_scalar());
        let displacement = match tag {
            BoundaryTag::Right | BoundaryTag::Left => [zero, None],
            BoundaryTag::Bottom | BoundaryTag::Top => [None, zero],
        };
        SegmentBc {
            displacement,
            traction: vector(move |x, t| [0.0, alpha * p_traction(x, t)]),
            flow: FlowBc::Pressure(p_d),
        }
    };
    Benchmark {
        kind: BenchmarkKind::BarryMercer,
        rect: Rect::unit(),
        final_time: BenchmarkKind::BarryMercer.default_final_time(),
        params,
        bcs: BoundaryConditions {
            segments: BoundaryTag::ALL.map(segment),
        },
        sources: SourceFunctions {
            body_force: zero_vector(),
            mass_source: zero_scalar(),
        },
        initial: InitialData::zero(),
        exact: None,
        time_independent_loads: false,
    }
}

fn locking(params: MaterialParams) -> Benchmark {
    let segment = |tag: BoundaryTag| {
        let load = if tag == BoundaryTag::Top { -1.0 } else { 0.0 };
        let displacement: [Option<ScalarFn>; 2] = if tag == BoundaryTag::Left {
            [Some(zero_scalar()), Some(zero_scalar())]
        } else {
            [None, None]
        };
        SegmentBc {
            displacement,
            traction: vector(move |_, _| [0.0, load]),
            flow: FlowBc::Flux(zero_scalar()),
        }
    };
    Benchmark {
        kind: BenchmarkKind::Locking,
        rect: Rect::unit(),
        final_time: BenchmarkKind::Locking.default_final_time(),
        params,
        bcs: BoundaryConditions {
            segments: BoundaryTag::ALL.map(segment),
        },
        sources: SourceFunctions {
            body_force: zero_vector(),
            mass_source: zero_scalar(),
        },
        initial: InitialData::zero(),
        exact: None,
        time_independent_loads: true,
    }
}

/// `u = (t/2)(x₁², x₂²)`, `p = (1 + t)(x₁ + x₂)`: both lie in the discrete
/// spaces and are affine in time, so the scheme reproduces them exactly.
fn polynomial(params: MaterialParams) -> Benchmark {
    let MaterialParams {
        lambda,
        mu,
        alpha,
        c0,
        ..
    } = params;

    let u = vector(|x, t| [0.5 * t * x[0] * x[0], 0.5 * t * x[1] * x[1]]);
    let grad_u = tensor(|x, t| [[t * x[0], 0.0], [0.0, t * x[1]]]);
    let p = scalar(|x, t| (1.0 + t) * (x[0] + x[1]));
    let grad_p = vector(|_, t| [1.0 + t, 1.0 + t]);

    let body_force = vector(move |_, t| {
        let v = -(lambda + mu) * t + alpha * (1.0 + t);
        [v, v]
    });
    let mass_source = scalar(move |x, _| (c0 + alpha) * (x[0] + x[1]));

    let segment = |tag: BoundaryTag| {
        let n = tag.normal();
        let traction = vector(move |x: [f64; 2], t: f64| {
            let s = lambda * (x[0] + x[1]) * t - alpha * (1.0 + t) * (x[0] + x[1]);
            [mu * x[0] * n[0] * t + s * n[0], mu * x[1] * n[1] * t + s * n[1]]
        });
        let u1: Option<ScalarFn> = Some(scalar(|x, t| 0.5 * x[0] * x[0] * t));
        let u2: Option<ScalarFn> = Some(scalar(|x, t| 0.5 * x[1] * x[1] * t));
        let displacement = match tag {
            BoundaryTag::Right | BoundaryTag::Left => [u1, None],
            BoundaryTag::Bottom | BoundaryTag::Top => [None, u2],
        };
        SegmentBc {
            displacement,
            traction,
            flow: FlowBc::Pressure(p.clone()),
        }
    };

    Benchmark {
        kind: BenchmarkKind::Polynomial,
        rect: Rect::unit(),
        final_time: BenchmarkKind::Polynomial.default_final_time(),
        params,
        bcs: BoundaryConditions {
            segments: BoundaryTag::ALL.map(segment),
        },
        sources: SourceFunctions {
            body_force,
            mass_source,
        },
        initial: InitialData {
            u0: zero_vector(),
            grad_u0: zero_tensor(),
            p0: scalar(|x, _| x[0] + x[1]),
        },
        exact: Some(ExactSolution {
            u,
            grad_u,
            p,
            grad_p,
        }),
        time_independent_loads: false,
    }
}

/// Uniform inward pressure load on every side, unit fluid source, no
/// displacement or pressure constraints anywhere.
fn neumann_box(params: MaterialParams) -> Benchmark {
    let segment = |tag: BoundaryTag| {
        let n = tag.normal();
        SegmentBc {
            displacement: [None, None],
            traction: vector(move |_, _| [-n[0], -n[1]]),
            flow: FlowBc::Flux(zero_scalar()),
        }
    };
    Benchmark {
        kind: BenchmarkKind::NeumannBox,
        rect: Rect::unit(),
        final_time: BenchmarkKind::NeumannBox.default_final_time(),
        params,
        bcs: BoundaryConditions {
            segments: BoundaryTag::ALL.map(segment),
        },
        sources: SourceFunctions {
            body_force: zero_vector(),
            mass_source: scalar(|_, _| 1.0),
        },
        initial: InitialData {
            u0: zero_vector(),
            grad_u0: zero_tensor(),
            p0: scalar(|x, _| (PI * x[0]).cos() * (PI * x[1]).cos()),
        },
        exact: None,
        time_independent_loads: true,
    }
}
