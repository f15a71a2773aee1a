//! `run`: march a configured case, writing probes, snapshots and a summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sem_core::cases::{Kovasznay, TaylorGreen};
use sem_core::solver::{FlowParams, NavierStokes, SolveKind, SolverConfig, SolverState, TimeLevel};
use sem_core::{Basis1D, BoundaryKind, BoxMesh, Field, Space};

use crate::config::{Case, RunConfig};
use crate::error::CliResult;
use crate::output::{ensure_dir, num, write_text, Csv};
use crate::snapshot::{self, SnapshotHeader};

type Exact = Box<dyn Fn([f64; 3], f64) -> [f64; 3]>;

/// A case ready to march.
pub struct Setup {
    pub space: Arc<Space>,
    pub solver: NavierStokes,
    pub state: SolverState,
    pub exact: Option<Exact>,
}

/// What a finished run reports back to the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub steps: usize,
    pub final_time: f64,
    pub analytic_error: Option<f64>,
    pub max_divergence: f64,
    pub max_cfl: f64,
    pub pressure_iterations: Vec<usize>,
    pub snapshots: Vec<PathBuf>,
}

fn mesh(cfg: &RunConfig) -> BoxMesh {
    let mut b = BoxMesh::new(cfg.dim, &cfg.elements, &cfg.bounds);
    for d in 0..cfg.dim {
        b = b.periodic(d, cfg.periodic[d]).grading(d, cfg.grading[d]);
    }
    if let Some(sides) = &cfg.sides {
        for (s, &k) in sides.iter().enumerate() {
            b = b.side(s, k);
        }
    }
    b
}

fn vector_field(space: &Space, f: impl Fn([f64; 3]) -> [f64; 3]) -> Vec<Field> {
    (0..space.dim())
        .map(|d| space.interpolate(|p| f(p)[d]))
        .collect()
}

/// Unit coordinate of `p` along `axis` within the domain.
fn unit(cfg: &RunConfig, p: [f64; 3], axis: usize) -> f64 {
    let [lo, hi] = cfg.bounds[axis];
    (p[axis] - lo) / (hi - lo)
}

/// Divergence-free perturbation from the stream function
/// `psi = sum_m (a_m sin(k_m x) + b_m cos(k_m x)) (1 - eta^2)^2`.
fn channel_perturbation(cfg: &RunConfig) -> impl Fn([f64; 3]) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let amp = cfg.perturbation;
    let modes: Vec<(f64, f64)> = (0..3)
        .map(|_| {
            (
                amp * rng.random_range(-1.0..1.0),
                amp * rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let [x0, x1] = cfg.bounds[0];
    let [y0, y1] = cfg.bounds[1];
    let (lx, h, yc) = (x1 - x0, 0.5 * (y1 - y0), 0.5 * (y0 + y1));
    move |p| {
        let eta = (p[1] - yc) / h;
        let g = (1.0 - eta * eta).powi(2);
        let dg = -4.0 * eta * (1.0 - eta * eta) / h;
        let (mut u, mut v) = (0.0, 0.0);
        for (m, &(a, b)) in modes.iter().enumerate() {
            let k = 2.0 * std::f64::consts::PI * (m + 1) as f64 / lx;
            let (s, c) = (k * (p[0] - x0)).sin_cos();
            u += (a * s + b * c) * dg;
            v -= k * (a * c - b * s) * g;
        }
        [u, v, 0.0]
    }
}

/// Builds mesh, solver and initial state for the configured case.
pub fn setup(cfg: &RunConfig) -> CliResult<Setup> {
    let space = Arc::new(Space::new(mesh(cfg).build()?, Basis1D::new(cfg.order)?)?);
    let mut sc = SolverConfig::new(FlowParams {
        density: cfg.density,
        viscosity: cfg.viscosity,
        heat_capacity: cfg.heat_capacity,
        conductivity: cfg.conductivity,
        dt: cfg.dt,
    });
    sc.dealias = cfg.dealias;
    sc.filter = cfg.filter;
    sc.velocity_tol = cfg.velocity_tol;
    sc.pressure_tol = cfg.pressure_tol;
    sc.max_iterations = cfg.max_iterations;
    sc.projection_depth = cfg.projection_depth;
    sc.cfl_limit = cfg.cfl_limit;
    sc.cfl_policy = cfg.cfl_policy;
    sc.temperature = cfg.temperature;
    let nu = cfg.kinematic_viscosity();
    let dim = cfg.dim;
    let mut solver = NavierStokes::new(space.clone(), sc)?;
    let mut exact: Option<Exact> = None;
    let mut temperature0: Option<Field> = None;
    let velocity0 = match cfg.case {
        Case::TaylorGreen => {
            let tg = TaylorGreen { viscosity: nu };
            exact = Some(Box::new(move |p, t| tg.velocity(p, t)));
            temperature0 = Some(space.interpolate(|p| p[0].sin() * p[1].sin()));
            vector_field(&space, |p| tg.velocity(p, 0.0))
        }
        Case::Kovasznay => {
            let k = Kovasznay { reynolds: 1.0 / nu };
            solver = solver.with_velocity_bc(Arc::new(move |p, _| k.velocity(p)));
            exact = Some(Box::new(move |p, _| k.velocity(p)));
            let mask = space.boundary_mask(space.mesh().sides(), &[BoundaryKind::Dirichlet]);
            let mut u = vector_field(&space, |_| [1.0, 0.0, 0.0]);
            for (d, c) in u.iter_mut().enumerate() {
                for l in 0..space.len() {
                    if mask[l] == 0.0 {
                        c[l] = k.velocity(space.geometry().point(l))[d];
                    }
                }
            }
            u
        }
        Case::LidCavity => {
            let c = cfg.clone();
            let top = cfg.bounds[1][1];
            let lid = cfg.lid_velocity;
            // regularized lid: the speed vanishes smoothly at the corners
            solver = solver.with_velocity_bc(Arc::new(move |p, _| {
                if (p[1] - top).abs() > 1e-9 * top.abs().max(1.0) {
                    return [0.0; 3];
                }
                let mut s = 1.0;
                for axis in (0..c.dim).filter(|&a| a != 1) {
                    let x = unit(&c, p, axis);
                    s *= 16.0 * x * x * (1.0 - x) * (1.0 - x);
                }
                [lid * s, 0.0, 0.0]
            }));
            let c = cfg.clone();
            solver = solver.with_temperature_bc(Arc::new(move |p, _| unit(&c, p, 1)));
            temperature0 = Some(space.interpolate(|p| unit(cfg, p, 1)));
            vec![space.zeros(); dim]
        }
        Case::Channel => {
            let [y0, y1] = cfg.bounds[1];
            let (h, yc) = (0.5 * (y1 - y0), 0.5 * (y0 + y1));
            let f = cfg.forcing.unwrap_or([2.0 * nu / (h * h), 0.0, 0.0]);
            solver = solver.with_forcing(Arc::new(move |_, _| f));
            let c = cfg.clone();
            solver = solver.with_temperature_bc(Arc::new(move |p, _| 1.0 - unit(&c, p, 1)));
            temperature0 = Some(space.interpolate(|p| 1.0 - unit(cfg, p, 1)));
            let laminar = f[0] * h * h / (2.0 * nu);
            let pert = channel_perturbation(cfg);
            vector_field(&space, |p| {
                let eta = (p[1] - yc) / h;
                let d = pert(p);
                [laminar * (1.0 - eta * eta) + d[0], d[1], 0.0]
            })
        }
        Case::CustomBox => {
            if let Some(f) = cfg.forcing {
                solver = solver.with_forcing(Arc::new(move |_, _| f));
            }
            temperature0 = Some(space.interpolate(|p| {
                (0..dim)
                    .filter(|&d| !cfg.periodic[d])
                    .map(|d| (std::f64::consts::PI * unit(cfg, p, d)).sin())
                    .product()
            }));
            vec![space.zeros(); dim]
        }
    };
    let mut state = solver.initial_state(velocity0, temperature0.filter(|_| cfg.temperature))?;
    if cfg.case == Case::TaylorGreen {
        let tg = TaylorGreen { viscosity: nu };
        let rho = cfg.density;
        state.pressure = space.interpolate(|p| rho * tg.pressure(p, 0.0));
        if cfg.prime {
            let level = |t: f64| TimeLevel {
                velocity: vector_field(&space, |p| tg.velocity(p, t)),
                pressure: Some(space.interpolate(|p| rho * tg.pressure(p, t))),
                temperature: None,
            };
            solver.prime_history(&mut state, vec![level(-cfg.dt), level(-2.0 * cfg.dt)])?;
        }
    }
    Ok(Setup {
        space,
        solver,
        state,
        exact,
    })
}

fn probe_columns(cfg: &RunConfig) -> Vec<String> {
    let mut names: Vec<&str> = ["u", "v", "w"][..cfg.dim].to_vec();
    names.push("p");
    if cfg.temperature {
        names.push("T");
    }
    let mut cols = vec!["time".to_string()];
    for i in 0..cfg.probes.len() {
        for n in &names {
            cols.push(if cfg.probes.len() == 1 {
                n.to_string()
            } else {
                format!("{n}_{}", i + 1)
            });
        }
    }
    cols
}

fn probe_row(cfg: &RunConfig, space: &Space, state: &SolverState) -> Vec<f64> {
    let mut row = vec![state.time];
    for p in &cfg.probes {
        let at = |f: &[f64]| space.evaluate(f, &p[..cfg.dim]).unwrap_or(f64::NAN);
        row.extend(state.velocity.iter().map(|c| at(c)));
        row.push(at(&state.pressure));
        if let Some(t) = &state.temperature {
            row.push(at(t));
        }
    }
    row
}

fn state_fields(state: &SolverState) -> Vec<Field> {
    let mut f = state.velocity.clone();
    f.push(state.pressure.clone());
    if let Some(t) = &state.temperature {
        f.push(t.clone());
    }
    f
}

/// Max nodal velocity error against the exact solution at the current time.
pub fn velocity_error(
    space: &Space,
    state: &SolverState,
    exact: &dyn Fn([f64; 3], f64) -> [f64; 3],
) -> f64 {
    let t = state.time;
    state
        .velocity
        .iter()
        .enumerate()
        .map(|(d, c)| c.max_abs_diff(&space.interpolate(|p| exact(p, t)[d])))
        .fold(0.0, f64::max)
}

/// Runs the case, writing everything under `out` (default: the configured
/// output directory).
pub fn run(cfg: &RunConfig, out: Option<&Path>) -> CliResult<RunOutcome> {
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.clone());
    ensure_dir(&dir)?;
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();
    let Setup {
        space,
        solver,
        mut state,
        exact,
    } = setup(cfg)?;
    let dim = cfg.dim;

    let mut probes = Csv::new(&probe_columns(cfg));
    if !cfg.probes.is_empty() {
        probes.row(&probe_row(cfg, &space, &state));
    }
    let mut step_cols: Vec<String> = ["step", "time", "order", "cfl"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    step_cols.extend((0..dim).map(|d| format!("velocity_{d}_iterations")));
    step_cols.push("pressure_iterations".into());
    if cfg.temperature {
        step_cols.push("temperature_iterations".into());
    }
    step_cols.push("divergence".into());
    let mut steps_csv = Csv::new(&step_cols);

    let steps = cfg.steps();
    let mut outcome = RunOutcome {
        steps,
        final_time: 0.0,
        analytic_error: None,
        max_divergence: 0.0,
        max_cfl: 0.0,
        pressure_iterations: Vec::with_capacity(steps),
        snapshots: Vec::new(),
    };
    let mut totals = vec![0usize; dim + 2];
    let mut warnings = 0usize;
    for _ in 0..steps {
        let report = solver.step(&mut state)?;
        if report.cfl_warning {
            warnings += 1;
            eprintln!(
                "warning: step {} CFL {:.4} exceeds the limit {}",
                report.step_index, report.cfl, cfg.cfl_limit
            );
        }
        let mut row = vec![
            report.step_index.to_string(),
            num(state.time),
            report.order.to_string(),
            num(report.cfl),
        ];
        for s in &report.solves {
            let slot = match s.kind {
                SolveKind::Velocity(d) => d,
                SolveKind::Pressure => dim,
                SolveKind::Temperature => dim + 1,
            };
            totals[slot] += s.stats.iterations;
            row.push(s.stats.iterations.to_string());
            if s.kind == SolveKind::Pressure {
                outcome.pressure_iterations.push(s.stats.iterations);
            }
        }
        row.push(num(report.divergence));
        steps_csv.cells(&row);
        outcome.max_divergence = outcome.max_divergence.max(report.divergence);
        outcome.max_cfl = outcome.max_cfl.max(report.cfl);
        if !cfg.probes.is_empty() {
            probes.row(&probe_row(cfg, &space, &state));
        }
        let k = state.step_index;
        if cfg.snapshot_every > 0 && k % cfg.snapshot_every == 0 {
            let fields = state_fields(&state);
            let header = SnapshotHeader::for_space(&space, fields.len(), state.time, k as u64);
            let path = dir.join(format!("snapshot_{k:06}.semk"));
            snapshot::write(&path, &header, &fields)?;
            outcome.snapshots.push(path);
        }
    }
    outcome.final_time = state.time;
    if cfg.analytic_error {
        if let Some(f) = &exact {
            outcome.analytic_error = Some(velocity_error(&space, &state, f.as_ref()));
        }
    }

    if !cfg.probes.is_empty() {
        probes.save(&dir.join("probes.csv"))?;
    }
    steps_csv.save(&dir.join("steps.csv"))?;

    let mut summary = String::new();
    let _ = writeln!(summary, "case: {}", cfg.case.name());
    let _ = writeln!(summary, "started (unix seconds): {started}");
    let _ = writeln!(
        summary,
        "wall time (s): {:.3}",
        clock.elapsed().as_secs_f64()
    );
    let _ = writeln!(summary, "order: {}", cfg.order);
    let _ = writeln!(summary, "elements: {:?}", cfg.elements);
    let _ = writeln!(summary, "steps: {steps}");
    let _ = writeln!(summary, "final time: {}", num(state.time));
    for d in 0..dim {
        let _ = writeln!(
            summary,
            "velocity {d} iterations: total {} mean {:.2}",
            totals[d],
            totals[d] as f64 / steps as f64
        );
    }
    let _ = writeln!(
        summary,
        "pressure iterations: total {} mean {:.2}",
        totals[dim],
        totals[dim] as f64 / steps as f64
    );
    if cfg.temperature {
        let _ = writeln!(
            summary,
            "temperature iterations: total {} mean {:.2}",
            totals[dim + 1],
            totals[dim + 1] as f64 / steps as f64
        );
    }
    let _ = writeln!(
        summary,
        "max CFL: {} (history in steps.csv)",
        num(outcome.max_cfl)
    );
    let _ = writeln!(summary, "CFL warnings: {warnings}");
    let _ = writeln!(summary, "max divergence: {}", num(outcome.max_divergence));
    let _ = writeln!(summary, "snapshots written: {}", outcome.snapshots.len());
    if let Some(e) = outcome.analytic_error {
        let line = format!("max velocity error at t={}: {}", num(state.time), num(e));
        println!("{line}");
        let _ = writeln!(summary, "{line}");
    }
    write_text(&dir.join("summary.txt"), &summary)?;
    println!(
        "{}: {steps} steps to t={} in {:.2} s, mean pressure iterations {:.2}, max divergence {:.3e}",
        cfg.case.name(),
        state.time,
        clock.elapsed().as_secs_f64(),
        totals[dim] as f64 / steps as f64,
        outcome.max_divergence
    );
    Ok(outcome)
}

pub fn run_path(config: &Path, out: Option<&Path>) -> CliResult<RunOutcome> {
    let cfg = RunConfig::load(config)?;
    run(&cfg, out)
}
