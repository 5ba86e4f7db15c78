use std::fs;
use std::path::Path;
use std::process::Command;

use porofem_cli::config::RunConfig;
use porofem_cli::output::{DIAGNOSTICS_HEADER, RATES_HEADER, SWEEP_HEADER};
use proptest::prelude::*;

fn porofem(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_porofem"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_in(dir: &Path, command: &str, config: &str, extra: &[&str]) -> std::process::Output {
    let cfg = dir.join("case.cfg");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let mut args = vec![
        command,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    porofem(&args)
}

fn check_vtk(text: &str, n_vertices: usize, n_triangles: usize) {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# vtk DataFile Version 2.0"));
    lines.next().unwrap();
    assert_eq!(lines.next(), Some("ASCII"));
    assert_eq!(lines.next(), Some("DATASET UNSTRUCTURED_GRID"));
    assert_eq!(lines.next().unwrap(), format!("POINTS {n_vertices} double"));
    for _ in 0..n_vertices {
        let xyz: Vec<f64> = lines
            .next()
            .unwrap()
            .split(' ')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(xyz.len(), 3);
    }
    assert_eq!(lines.next().unwrap(), format!("CELLS {n_triangles} {}", 4 * n_triangles));
    for _ in 0..n_triangles {
        let ids: Vec<usize> = lines
            .next()
            .unwrap()
            .split(' ')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(ids[0], 3);
        assert!(ids[1..].iter().all(|&i| i < n_vertices));
    }
    assert_eq!(lines.next().unwrap(), format!("CELL_TYPES {n_triangles}"));
    for _ in 0..n_triangles {
        assert_eq!(lines.next(), Some("5"));
    }
    assert_eq!(lines.next().unwrap(), format!("POINT_DATA {n_vertices}"));
    assert_eq!(lines.next(), Some("VECTORS displacement double"));
    for _ in 0..n_vertices {
        assert_eq!(lines.next().unwrap().split(' ').count(), 3);
    }
    for name in ["pressure", "xi", "eta", "q"] {
        assert_eq!(lines.next().unwrap(), format!("SCALARS {name} double 1"));
        assert_eq!(lines.next(), Some("LOOKUP_TABLE default"));
        for _ in 0..n_vertices {
            let v: f64 = lines.next().unwrap().parse().unwrap();
            assert!(v.is_finite());
        }
    }
    assert_eq!(lines.next(), None);
}

#[test]
fn default_run_writes_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "run", "benchmark = test1\nnx = 8\ndt = 1e-5\ntheta = 1\n", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let csv = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert!(!csv.contains('\r'));
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], DIAGNOSTICS_HEADER);
    assert_eq!(lines.len(), 101);
    for (i, line) in lines[1..].iter().enumerate() {
        let cols: Vec<_> = line.split(',').collect();
        assert_eq!(cols.len(), 12);
        assert_eq!(cols[0].parse::<usize>().unwrap(), i + 1);
        assert!(cols[4].parse::<f64>().unwrap().is_finite());
        assert!(cols[5].is_empty() && cols[6].is_empty() && cols[7].is_empty());
        assert!(cols[8..].iter().all(|c| c.parse::<f64>().unwrap() >= 0.0));
    }
    let log = fs::read_to_string(out.join("run.log")).unwrap();
    assert!(log.contains("benchmark = test1"));
    assert!(log.contains("max linear residual"));
    assert!(log.contains("locking line x1=0.5"));
    for step in [0, 10, 50, 100] {
        assert!(out.join(format!("fields_{step}.vtk")).exists(), "snapshot {step}");
    }
    assert!(!out.join("fields_5.vtk").exists());
    let vtk = fs::read_to_string(out.join("fields_100.vtk")).unwrap();
    check_vtk(&vtk, 81, 128);
}

#[test]
fn zero_steps_write_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "run", "nx = 2\nT = 0\n", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("out/diagnostics.csv")).unwrap();
    assert_eq!(csv, format!("{DIAGNOSTICS_HEADER}\n"));
    check_vtk(
        &fs::read_to_string(dir.path().join("out/fields_0.vtk")).unwrap(),
        9,
        8,
    );
}

#[test]
fn runs_are_byte_identical() {
    let cfg = "benchmark = neumann_box\nnx = 4\ndt = 0.1\nT = 0.5\ntheta = 0\n";
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_in(a.path(), "run", cfg, &[]).status.success());
    assert!(run_in(b.path(), "run", cfg, &[]).status.success());
    let mut names: Vec<_> = fs::read_dir(a.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 4);
    for name in names {
        let x = fs::read(a.path().join("out").join(&name)).unwrap();
        let y = fs::read(b.path().join("out").join(&name)).unwrap();
        assert_eq!(x, y, "{name:?} differs");
    }
    let csv = fs::read_to_string(a.path().join("out/diagnostics.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<_> = line.split(',').collect();
        for c in &cols[4..8] {
            assert!(c.parse::<f64>().unwrap() < 1e-10, "{line}");
        }
        assert!(cols[8].is_empty());
    }
}

#[test]
fn invalid_theta_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "run", "theta = 2\n", &[]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 1"), "{err}");
    assert!(err.contains("theta"), "{err}");
    assert!(!dir.path().join("out/diagnostics.csv").exists());
}

#[test]
fn bad_override_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "run", "", &["--set", "nx=-3"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nx=-3"));
}

#[test]
fn convergence_without_exact_solution_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "convergence", "benchmark = barry_mercer\n", &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no exact solution"));
}

#[test]
fn convergence_writes_rates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "benchmark = test1\ndt = 1e-4\nrefinements = 2,4,8\n";
    let o = run_in(dir.path(), "convergence", cfg, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("out/rates.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], RATES_HEADER);
    assert_eq!(lines.len(), 4);
    let coarse: Vec<_> = lines[1].split(',').collect();
    assert!(coarse[2].is_empty() && coarse[4].is_empty());
    let fine: Vec<_> = lines[3].split(',').collect();
    let rate: f64 = fine[2].parse().unwrap();
    assert!(rate > 1.0, "{rate}");
}

#[test]
fn sweep_writes_consecutive_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "benchmark = test1\nnx = 2\ndt = 1e-4\nT = 3e-4\nc0_values = 1, 0.1, 0.01\n";
    let o = run_in(dir.path(), "sweep", cfg, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER);
    assert_eq!(lines.len(), 3);
    let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!((first[0], first[1]), (1.0, 0.1));
}

#[test]
fn empty_config_uses_defaults() {
    let cfg = RunConfig::parse("").unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.benchmark.name(), "test1");
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        1usize..40,
        proptest::option::of(1usize..40),
        0u8..2,
        proptest::option::of(1e-3f64..10.0),
        proptest::option::of(1e-3f64..1e3),
        proptest::option::of(-5.0f64..5.0),
        proptest::collection::vec(1usize..100, 1..5),
        proptest::collection::vec(0.0f64..1.0, 1..5),
        any::<bool>(),
    )
        .prop_map(|(nx, ny, theta, mu, perm, gx, refinements, c0_values, vtk)| {
            let mut cfg = RunConfig {
                nx,
                ny,
                theta,
                refinements,
                c0_values,
                write_vtk: vtk,
                ..RunConfig::default()
            };
            cfg.material.mu = mu;
            cfg.material.permeability = perm;
            cfg.material.gravity_x = gx;
            cfg
        })
}

proptest! {
    #[test]
    fn display_round_trips(cfg in arb_config()) {
        let text = cfg.to_string();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
