//! `key = value` run configuration.

use std::fmt;

use porofem::model::{lame_from_young_poisson, Benchmark, BenchmarkKind, MaterialParams};
use porofem::stepper::TimeScheme;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("override `{entry}`: {message}")]
    Override { entry: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Material values given explicitly; anything left `None` takes the
/// benchmark's default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaterialOverrides {
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub young: Option<f64>,
    pub poisson: Option<f64>,
    pub alpha: Option<f64>,
    pub c0: Option<f64>,
    pub permeability: Option<f64>,
    pub fluid_viscosity: Option<f64>,
    pub gravity_x: Option<f64>,
    pub gravity_y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub benchmark: BenchmarkKind,
    pub nx: usize,
    pub ny: Option<usize>,
    pub dt: Option<f64>,
    pub final_time: Option<f64>,
    pub theta: u8,
    pub material: MaterialOverrides,
    pub snapshot_every: Option<usize>,
    pub write_vtk: bool,
    pub refinements: Vec<usize>,
    pub c0_values: Vec<f64>,
    pub solver_tolerance: f64,
    pub locking_line: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            benchmark: BenchmarkKind::Test1,
            nx: 8,
            ny: None,
            dt: None,
            final_time: None,
            theta: 1,
            material: MaterialOverrides::default(),
            snapshot_every: None,
            write_vtk: true,
            refinements: vec![8, 16, 32, 64],
            c0_values: vec![1e-2, 1e-4, 1e-6],
            solver_tolerance: porofem::solver::DEFAULT_TOLERANCE,
            locking_line: 0.5,
        }
    }
}

pub const KEYS: [&str; 23] = [
    "benchmark",
    "nx",
    "ny",
    "dt",
    "T",
    "theta",
    "lambda",
    "mu",
    "young",
    "poisson",
    "alpha",
    "c0",
    "permeability",
    "fluid_viscosity",
    "gravity_x",
    "gravity_y",
    "snapshot_every",
    "write_vtk",
    "refinements",
    "c0_values",
    "solver_tolerance",
    "locking_line",
    "mesh",
];

fn parse_f64(value: &str) -> Result<f64, String> {
    let v: f64 = value
        .parse()
        .map_err(|_| format!("`{value}` is not a number"))?;
    if !v.is_finite() {
        return Err(format!("`{value}` is not finite"));
    }
    Ok(v)
}

fn parse_positive(value: &str) -> Result<f64, String> {
    let v = parse_f64(value)?;
    if v <= 0.0 {
        return Err(format!("expected a positive number, got {value}"));
    }
    Ok(v)
}

fn parse_count(value: &str) -> Result<usize, String> {
    let v: usize = value
        .parse()
        .map_err(|_| format!("`{value}` is not a nonnegative integer"))?;
    if v == 0 {
        return Err("expected a positive integer".into());
    }
    Ok(v)
}

fn parse_list<T>(value: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(item)
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err("expected a comma-separated list".into());
    }
    Ok(items)
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let m = &mut self.material;
        match key {
            "benchmark" => {
                self.benchmark = BenchmarkKind::from_name(value).ok_or_else(|| {
                    let names: Vec<_> = BenchmarkKind::ALL.iter().map(|k| k.name()).collect();
                    format!("unknown benchmark `{value}` (expected one of {})", names.join(", "))
                })?
            }
            "nx" => self.nx = parse_count(value)?,
            "ny" => self.ny = Some(parse_count(value)?),
            "mesh" => {
                let n = parse_count(value)?;
                self.nx = n;
                self.ny = Some(n);
            }
            "dt" => self.dt = Some(parse_positive(value)?),
            "T" => {
                let t = parse_f64(value)?;
                if t < 0.0 {
                    return Err(format!("final time must be nonnegative, got {value}"));
                }
                self.final_time = Some(t);
            }
            "theta" => {
                self.theta = match value {
                    "0" => 0,
                    "1" => 1,
                    _ => return Err(format!("theta must be 0 or 1, got `{value}`")),
                }
            }
            "lambda" => m.lambda = Some(parse_f64(value)?),
            "mu" => m.mu = Some(parse_positive(value)?),
            "young" => m.young = Some(parse_positive(value)?),
            "poisson" => m.poisson = Some(parse_f64(value)?),
            "alpha" => m.alpha = Some(parse_positive(value)?),
            "c0" => m.c0 = Some(parse_f64(value)?),
            "permeability" => m.permeability = Some(parse_positive(value)?),
            "fluid_viscosity" => m.fluid_viscosity = Some(parse_positive(value)?),
            "gravity_x" => m.gravity_x = Some(parse_f64(value)?),
            "gravity_y" => m.gravity_y = Some(parse_f64(value)?),
            "snapshot_every" => self.snapshot_every = Some(parse_count(value)?),
            "write_vtk" => {
                self.write_vtk = value
                    .parse()
                    .map_err(|_| format!("expected true or false, got `{value}`"))?
            }
            "refinements" => self.refinements = parse_list(value, parse_count)?,
            "c0_values" => self.c0_values = parse_list(value, parse_f64)?,
            "solver_tolerance" => self.solver_tolerance = parse_positive(value)?,
            "locking_line" => self.locking_line = parse_f64(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Line {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|message| ConfigError::Line { line, message })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_overrides(&mut self, entries: &[String]) -> Result<(), ConfigError> {
        for entry in entries {
            let (key, value) = entry.split_once('=').ok_or_else(|| ConfigError::Override {
                entry: entry.clone(),
                message: "expected key=value".into(),
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|message| ConfigError::Override {
                    entry: entry.clone(),
                    message,
                })?;
        }
        self.validate()
    }

    pub fn ny(&self) -> usize {
        self.ny.unwrap_or(self.nx)
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or_else(|| self.benchmark.default_dt())
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
            .unwrap_or_else(|| self.benchmark.default_final_time())
    }

    pub fn scheme(&self) -> Result<TimeScheme, ConfigError> {
        TimeScheme::new(self.theta, self.dt(), self.final_time())
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn params(&self) -> Result<MaterialParams, ConfigError> {
        let m = &self.material;
        let mut p = self.benchmark.default_params();
        match (m.young, m.poisson) {
            (Some(e), Some(nu)) => {
                if m.lambda.is_some() || m.mu.is_some() {
                    return Err(ConfigError::Invalid(
                        "give either young/poisson or lambda/mu, not both".into(),
                    ));
                }
                let (lambda, mu) =
                    lame_from_young_poisson(e, nu).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                p.lambda = lambda;
                p.mu = mu;
            }
            (None, None) => {}
            _ => {
                return Err(ConfigError::Invalid(
                    "young and poisson must be given together".into(),
                ))
            }
        }
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut p.lambda, m.lambda);
        set(&mut p.mu, m.mu);
        set(&mut p.alpha, m.alpha);
        set(&mut p.c0, m.c0);
        set(&mut p.permeability, m.permeability);
        set(&mut p.fluid_viscosity, m.fluid_viscosity);
        set(&mut p.gravity_force[0], m.gravity_x);
        set(&mut p.gravity_force[1], m.gravity_y);
        Ok(p)
    }

    pub fn build_benchmark(&self) -> Result<Benchmark, ConfigError> {
        let mut b = Benchmark::new(self.benchmark, self.params()?)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        b.final_time = self.final_time();
        Ok(b)
    }

    pub fn snapshot_every(&self, n_steps: usize) -> usize {
        self.snapshot_every.unwrap_or_else(|| n_steps.div_ceil(10).max(1))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scheme()?;
        self.build_benchmark()?;
        Ok(())
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Writes every explicitly set key; parsing the output reproduces the config.
impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "benchmark = {}", self.benchmark.name())?;
        writeln!(f, "nx = {}", self.nx)?;
        let opt_usize = [("ny", self.ny), ("snapshot_every", self.snapshot_every)];
        let m = &self.material;
        let opt_f64 = [
            ("dt", self.dt),
            ("T", self.final_time),
            ("lambda", m.lambda),
            ("mu", m.mu),
            ("young", m.young),
            ("poisson", m.poisson),
            ("alpha", m.alpha),
            ("c0", m.c0),
            ("permeability", m.permeability),
            ("fluid_viscosity", m.fluid_viscosity),
            ("gravity_x", m.gravity_x),
            ("gravity_y", m.gravity_y),
        ];
        for (k, v) in opt_usize {
            if let Some(v) = v {
                writeln!(f, "{k} = {v}")?;
            }
        }
        for (k, v) in opt_f64 {
            if let Some(v) = v {
                writeln!(f, "{k} = {v}")?;
            }
        }
        writeln!(f, "theta = {}", self.theta)?;
        writeln!(f, "write_vtk = {}", self.write_vtk)?;
        writeln!(f, "refinements = {}", join(&self.refinements))?;
        writeln!(f, "c0_values = {}", join(&self.c0_values))?;
        writeln!(f, "solver_tolerance = {}", self.solver_tolerance)?;
        writeln!(f, "locking_line = {}", self.locking_line)
    }
}
