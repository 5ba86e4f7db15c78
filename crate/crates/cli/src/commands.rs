use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use porofem::diagnostics::{
    biot_limit_sweep, conservation_history, convergence_rates, energy_audit, error_norms,
    locking_scan, pressure_data_scale,
};
use porofem::stepper::Simulation;

use crate::config::RunConfig;
use crate::output::{self, RateColumn};

/// Errors below this multiple of the solver tolerance carry no rate information.
const RATE_FLOOR: f64 = 10.0;

struct RunLog {
    text: String,
}

impl RunLog {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        let mut text = format!("command = {command}\n[config]\n{cfg}[log]\n");
        log::info!("{command}: benchmark {}", cfg.benchmark.name());
        text.reserve(1024);
        Self { text }
    }

    fn line(&mut self, msg: impl AsRef<str>) {
        log::info!("{}", msg.as_ref());
        self.text.push_str(msg.as_ref());
        self.text.push('\n');
    }

    fn write(&self, out: &Path) -> Result<()> {
        write_file(&out.join("run.log"), self.text.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

fn simulation(cfg: &RunConfig, nx: usize, ny: usize) -> Result<Simulation> {
    let benchmark = cfg.build_benchmark()?;
    let mut sim = Simulation::new(&benchmark, nx, ny, cfg.scheme()?)?;
    sim.tolerance = cfg.solver_tolerance;
    Ok(sim)
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<()> {
    prepare(out)?;
    let mut log = RunLog::new("run", cfg);
    let sim = simulation(cfg, cfg.nx, cfg.ny())?;
    let scheme = sim.scheme;
    log.line(format!(
        "mesh {}x{} h={} dofs={} steps={} dt={} theta={}",
        cfg.nx,
        cfg.ny(),
        output::num(sim.mesh.h),
        sim.ops.dofmap.total(),
        scheme.n_steps,
        scheme.dt,
        scheme.theta
    ));
    let st = sim.stability;
    if scheme.theta == 0 {
        log.line(format!(
            "stability gate: dt={} limit={} {}",
            st.dt,
            output::num(st.limit),
            if st.satisfied { "satisfied" } else { "EXCEEDED" }
        ));
    } else {
        log.line(format!("stability gate: not required (limit {})", output::num(st.limit)));
    }

    let traj = match sim.run() {
        Ok(t) => t,
        Err(e) => {
            log.line(format!("error: {e}"));
            log.write(out)?;
            return Err(e.into());
        }
    };
    for r in &traj.reports {
        let worst = r.solves.iter().map(|s| s.relative_residual).fold(0.0, f64::max);
        log.line(format!("step {} solves={} residual={}", r.step, r.solves.len(), output::num(worst)));
    }
    log.line(format!("max linear residual {}", output::num(traj.max_residual())));

    let times: Vec<f64> = traj.states.iter().map(|s| s.t).collect();
    let energy = energy_audit(&sim, &traj);
    let conservation = conservation_history(&sim, &traj);
    let errors = sim
        .benchmark
        .exact
        .is_some()
        .then(|| error_norms(&sim, &traj))
        .transpose()?;
    if let Some(last) = energy.last() {
        log.line(format!("final energy residual {}", output::num(last.relative_residual)));
    }
    if let Some(e) = &errors {
        log.line(format!(
            "errors: u LinfL2={} u L2H1={} p LinfL2={} p L2H1={}",
            output::num(e.u_linf_l2),
            output::num(e.u_l2_h1),
            output::num(e.p_linf_l2),
            output::num(e.p_l2_h1)
        ));
    }
    if let Some(last) = traj.states.last() {
        let mut scale = pressure_data_scale(&sim.benchmark, &sim.mesh, last.t);
        if scale == 0.0 {
            scale = last.p.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        }
        match locking_scan(&sim.mesh, &last.p, cfg.locking_line, scale) {
            Ok(ind) => log.line(format!(
                "locking line x1={}: extrema={} undershoot={}",
                cfg.locking_line,
                ind.extrema,
                output::num(ind.undershoot)
            )),
            Err(e) => log.line(format!("locking line skipped: {e}")),
        }
    }
    output::write_diagnostics(
        create(&out.join("diagnostics.csv"))?,
        &times,
        &energy,
        &conservation,
        errors.as_ref().map(|e| e.per_step.as_slice()),
    )?;

    if cfg.write_vtk {
        let every = cfg.snapshot_every(scheme.n_steps);
        for s in &traj.states {
            if s.step % every == 0 || s.step == scheme.n_steps {
                let path = out.join(format!("fields_{}.vtk", s.step));
                output::write_vtk(create(&path)?, &sim.mesh, s)?;
            }
        }
    }
    log.write(out)
}

pub fn convergence(cfg: &RunConfig, out: &Path) -> Result<()> {
    prepare(out)?;
    let mut log = RunLog::new("convergence", cfg);
    if cfg.build_benchmark()?.exact.is_none() {
        bail!(
            "benchmark {} has no exact solution; convergence rates are unavailable",
            cfg.benchmark.name()
        );
    }
    let aspect = cfg.ny() as f64 / cfg.nx as f64;
    let mut reports = Vec::with_capacity(cfg.refinements.len());
    for &nx in &cfg.refinements {
        let ny = ((nx as f64 * aspect).round() as usize).max(1);
        let sim = simulation(cfg, nx, ny)?;
        let traj = sim.run()?;
        let report = error_norms(&sim, &traj)?;
        log.line(format!(
            "mesh {nx}x{ny} h={} p LinfL2={} p L2H1={} residual={}",
            output::num(report.h),
            output::num(report.p_linf_l2),
            output::num(report.p_l2_h1),
            output::num(traj.max_residual())
        ));
        reports.push(report);
    }
    let h: Vec<f64> = reports.iter().map(|r| r.h).collect();
    let floor = RATE_FLOOR * cfg.solver_tolerance;
    let names = ["p LinfL2", "p L2H1", "u LinfL2", "u L2H1"];
    let columns = output::rate_columns(&reports).map(|errors| {
        let rates = convergence_rates(&h, &errors);
        RateColumn { errors, rates }
    });
    let columns = columns.map(|mut col| {
        for i in 1..col.errors.len() {
            if col.errors[i] <= floor || col.errors[i - 1] <= floor {
                col.rates[i] = None;
            }
        }
        col
    });
    for (name, col) in names.iter().zip(&columns) {
        let mut line = format!("rates {name}:");
        for (i, r) in col.rates.iter().enumerate().skip(1) {
            match r {
                Some(r) => {
                    let _ = write!(line, " {r:.4}");
                }
                None if col.errors[i] <= floor => line.push_str(" (at solver tolerance)"),
                None => line.push_str(" -"),
            }
        }
        log.line(line);
    }
    output::write_rates(create(&out.join("rates.csv"))?, &h, &columns)?;
    log.write(out)
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<()> {
    prepare(out)?;
    let mut log = RunLog::new("sweep", cfg);
    if cfg.c0_values.len() < 2 {
        bail!("a sweep needs at least two c0 values");
    }
    let benchmark = cfg.build_benchmark()?;
    let rows = biot_limit_sweep(&benchmark, cfg.nx, cfg.ny(), cfg.scheme()?, &cfg.c0_values)?;
    for r in &rows {
        log.line(format!(
            "c0 {} -> {}: u={} eta={} xi={}",
            r.c0_from,
            r.c0_to,
            output::num(r.u_distance),
            output::num(r.eta_distance),
            output::num(r.xi_distance)
        ));
    }
    output::write_sweep(create(&out.join("sweep.csv"))?, &rows)?;
    log.write(out)
}
