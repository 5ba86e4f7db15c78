//! CSV tables and legacy VTK snapshots.

use std::fmt::Write as _;
use std::io::{self, Write};

use porofem::diagnostics::{ConservationRecord, EnergyRecord, ErrorReport, StepErrors, SweepRow};
use porofem::mesh::Mesh;
use porofem::stepper::FieldState;

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub const DIAGNOSTICS_HEADER: &str = "step,t,J,S_cum,energy_residual,C_eta_res,C_xi_res,flux_res,err_u_L2,err_u_H1,err_p_L2,err_p_H1";

pub const RATES_HEADER: &str = "h,err_p_LinfL2,rate_p_LinfL2,err_p_L2H1,rate_p_L2H1,err_u_LinfL2,rate_u_LinfL2,err_u_L2H1,rate_u_L2H1";

pub const SWEEP_HEADER: &str = "c0_from,c0_to,u_distance,eta_distance,xi_distance";

/// One row per computed step; `energy` starts at step 1 and the other
/// slices are indexed by step.
pub fn write_diagnostics<W: Write>(
    mut w: W,
    times: &[f64],
    energy: &[EnergyRecord],
    conservation: &[ConservationRecord],
    errors: Option<&[StepErrors]>,
) -> io::Result<()> {
    writeln!(w, "{DIAGNOSTICS_HEADER}")?;
    for e in energy {
        let n = e.step;
        let c = conservation.get(n);
        let mut row = format!(
            "{n},{},{},{},{}",
            num(times[n]),
            num(e.j),
            num(e.s),
            num(e.relative_residual)
        );
        for v in [
            c.and_then(|c| c.eta_residual),
            c.and_then(|c| c.xi_residual),
            c.and_then(|c| c.flux_residual),
        ] {
            let _ = write!(row, ",{}", opt(v));
        }
        match errors.and_then(|errs| errs.get(n)) {
            Some(s) => {
                for v in [s.u_l2, s.u_h1, s.p_l2, s.p_h1] {
                    let _ = write!(row, ",{}", num(v));
                }
            }
            None => row.push_str(",,,,"),
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Rates are omitted on the coarsest level and wherever `rates` holds `None`.
#[derive(Debug, Clone)]
pub struct RateColumn {
    pub errors: Vec<f64>,
    pub rates: Vec<Option<f64>>,
}

pub fn write_rates<W: Write>(mut w: W, h: &[f64], columns: &[RateColumn; 4]) -> io::Result<()> {
    writeln!(w, "{RATES_HEADER}")?;
    for (i, &hi) in h.iter().enumerate() {
        let mut row = num(hi);
        for col in columns {
            let _ = write!(
                row,
                ",{},{}",
                num(col.errors[i]),
                opt(col.rates.get(i).copied().flatten())
            );
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

pub fn rate_columns(reports: &[ErrorReport]) -> [Vec<f64>; 4] {
    [
        reports.iter().map(|r| r.p_linf_l2).collect(),
        reports.iter().map(|r| r.p_l2_h1).collect(),
        reports.iter().map(|r| r.u_linf_l2).collect(),
        reports.iter().map(|r| r.u_l2_h1).collect(),
    ]
}

pub fn write_sweep<W: Write>(mut w: W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            num(r.c0_from),
            num(r.c0_to),
            num(r.u_distance),
            num(r.eta_distance),
            num(r.xi_distance)
        )?;
    }
    Ok(())
}

/// Legacy ASCII VTK on the vertex triangulation; quadratic displacement is
/// sampled at the vertices.
pub fn write_vtk<W: Write>(mut w: W, mesh: &Mesh, state: &FieldState) -> io::Result<()> {
    let nv = mesh.n_vertices();
    let nt = mesh.n_triangles();
    writeln!(w, "# vtk DataFile Version 2.0")?;
    writeln!(w, "porofem step {} t={}", state.step, num(state.t))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {nv} double")?;
    for v in &mesh.vertices {
        writeln!(w, "{} {} {}", num(v[0]), num(v[1]), num(0.0))?;
    }
    writeln!(w, "CELLS {nt} {}", 4 * nt)?;
    for t in &mesh.triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "5")?;
    }
    writeln!(w, "POINT_DATA {nv}")?;
    writeln!(w, "VECTORS displacement double")?;
    for i in 0..nv {
        writeln!(w, "{} {} {}", num(state.u[2 * i]), num(state.u[2 * i + 1]), num(0.0))?;
    }
    for (name, field) in [
        ("pressure", &state.p),
        ("xi", &state.xi),
        ("eta", &state.eta),
        ("q", &state.q),
    ] {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in &field[..nv] {
            writeln!(w, "{}", num(*v))?;
        }
    }
    Ok(())
}
