//! Flows with closed-form solutions and the verification runs built on them.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::basis::Basis1D;
use crate::error::{Result, SemError};
use crate::mesh::{BoundaryKind, BoxMesh};
use crate::operators::{Field, Space};
use crate::solver::{
    helmholtz_solve, CflPolicy, FlowParams, NavierStokes, SolveKind, SolverConfig, SolverState,
    TimeLevel, DEFAULT_PRESSURE_TOL, DEFAULT_PROJECTION_DEPTH, DEFAULT_VELOCITY_TOL,
};

/// Decaying 2-D Taylor-Green vortex on the periodic square `[0, 2 pi]^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorGreen {
    /// Kinematic viscosity.
    pub viscosity: f64,
}

impl TaylorGreen {
    pub fn velocity(&self, p: [f64; 3], t: f64) -> [f64; 3] {
        let d = (-2.0 * self.viscosity * t).exp();
        [
            p[0].sin() * p[1].cos() * d,
            -p[0].cos() * p[1].sin() * d,
            0.0,
        ]
    }

    /// Kinematic pressure, mean-free.
    pub fn pressure(&self, p: [f64; 3], t: f64) -> f64 {
        0.25 * ((2.0 * p[0]).cos() + (2.0 * p[1]).cos()) * (-4.0 * self.viscosity * t).exp()
    }
}

/// Kovasznay's steady solution behind a periodic row of cylinders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kovasznay {
    pub reynolds: f64,
}

impl Kovasznay {
    pub fn lambda(&self) -> f64 {
        let re = self.reynolds;
        re / 2.0 - (re * re / 4.0 + 4.0 * PI * PI).sqrt()
    }

    pub fn velocity(&self, p: [f64; 3]) -> [f64; 3] {
        let lam = self.lambda();
        let e = (lam * p[0]).exp();
        [
            1.0 - e * (2.0 * PI * p[1]).cos(),
            lam / (2.0 * PI) * e * (2.0 * PI * p[1]).sin(),
            0.0,
        ]
    }

    pub fn pressure(&self, p: [f64; 3]) -> f64 {
        0.5 * (1.0 - (2.0 * self.lambda() * p[0]).exp())
    }
}

/// Steady diffusion `-kappa lap T = f` on the unit box with `T = 0` on the
/// boundary and `T = prod_d sin(pi x_d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyDiffusion {
    pub dim: usize,
    pub diffusivity: f64,
}

impl SteadyDiffusion {
    pub fn solution(&self, p: [f64; 3]) -> f64 {
        (0..self.dim).map(|d| (PI * p[d]).sin()).product()
    }

    pub fn source(&self, p: [f64; 3]) -> f64 {
        self.diffusivity * self.dim as f64 * PI * PI * self.solution(p)
    }
}

/// Outcome of a verification run.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    /// Max nodal velocity (or temperature) error against the exact solution.
    pub error: f64,
    pub steps: usize,
    /// Largest `max |div u|` seen after any step.
    pub max_divergence: f64,
    pub pressure_iterations: Vec<usize>,
    /// Linear solves performed in each step.
    pub solves_per_step: Vec<usize>,
    /// Every velocity and temperature solve went through the Jacobi PCG path.
    pub jacobi_velocity_solves: bool,
}

impl CaseReport {
    fn new() -> Self {
        Self {
            error: 0.0,
            steps: 0,
            max_divergence: 0.0,
            pressure_iterations: Vec::new(),
            solves_per_step: Vec::new(),
            jacobi_velocity_solves: true,
        }
    }

    fn record(&mut self, report: &crate::solver::StepReport) {
        self.steps += 1;
        self.max_divergence = self.max_divergence.max(report.divergence);
        self.solves_per_step.push(report.solves.len());
        for s in &report.solves {
            match s.kind {
                SolveKind::Pressure => self.pressure_iterations.push(s.stats.iterations),
                _ => self.jacobi_velocity_solves &= s.method == "jacobi-pcg",
            }
        }
    }
}

/// Settings shared by the time-dependent verification runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub order: usize,
    /// Elements per axis.
    pub elements: Vec<usize>,
    pub dt: f64,
    pub end_time: f64,
    pub velocity_tol: f64,
    pub pressure_tol: f64,
    pub projection_depth: usize,
    pub dealias: bool,
}

impl RunSettings {
    pub fn new(order: usize, elements: &[usize], dt: f64, end_time: f64) -> Self {
        Self {
            order,
            elements: elements.to_vec(),
            dt,
            end_time,
            velocity_tol: DEFAULT_VELOCITY_TOL,
            pressure_tol: DEFAULT_PRESSURE_TOL,
            projection_depth: DEFAULT_PROJECTION_DEPTH,
            dealias: true,
        }
    }

    fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.end_time >= 0.0) {
            return Err(SemError::Parameter(format!(
                "dt={} and end_time={} must be positive",
                self.dt, self.end_time
            )));
        }
        Ok((self.end_time / self.dt).round() as usize)
    }

    fn config(&self, viscosity: f64) -> SolverConfig {
        let mut cfg = SolverConfig::new(FlowParams {
            density: 1.0,
            viscosity,
            heat_capacity: 1.0,
            conductivity: 1.0,
            dt: self.dt,
        });
        cfg.velocity_tol = self.velocity_tol;
        cfg.pressure_tol = self.pressure_tol;
        cfg.projection_depth = self.projection_depth;
        cfg.dealias = self.dealias;
        cfg.cfl_policy = CflPolicy::Ignore;
        cfg
    }
}

fn vector_field(space: &Space, f: impl Fn([f64; 3]) -> [f64; 3]) -> Vec<Field> {
    (0..space.dim())
        .map(|d| space.interpolate(|p| f(p)[d]))
        .collect()
}

fn max_error(space: &Space, u: &[Field], f: impl Fn([f64; 3]) -> [f64; 3]) -> f64 {
    let exact = vector_field(space, f);
    u.iter()
        .zip(&exact)
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0, f64::max)
}

/// Taylor-Green on `[0, 2 pi]^2`. With `prime`, the two earlier time levels
/// are taken from the exact solution so every step runs at third order.
pub fn run_taylor_green(
    case: TaylorGreen,
    settings: &RunSettings,
    prime: bool,
) -> Result<(CaseReport, SolverState)> {
    let steps = settings.steps()?;
    let two_pi = 2.0 * PI;
    let mesh = BoxMesh::new(2, &settings.elements, &[[0.0, two_pi]; 2])
        .periodic(0, true)
        .periodic(1, true)
        .build()?;
    let space = Arc::new(Space::new(mesh, Basis1D::new(settings.order)?)?);
    let ns = NavierStokes::new(space.clone(), settings.config(case.viscosity))?;
    let mut state = ns.initial_state(vector_field(&space, |p| case.velocity(p, 0.0)), None)?;
    if prime {
        state.pressure = space.interpolate(|p| case.pressure(p, 0.0));
        let level = |t: f64| TimeLevel {
            velocity: vector_field(&space, |p| case.velocity(p, t)),
            pressure: Some(space.interpolate(|p| case.pressure(p, t))),
            temperature: None,
        };
        ns.prime_history(
            &mut state,
            vec![level(-settings.dt), level(-2.0 * settings.dt)],
        )?;
    }
    let mut report = CaseReport::new();
    for _ in 0..steps {
        let r = ns.step(&mut state)?;
        report.record(&r);
    }
    let t = state.time;
    report.error = max_error(&space, &state.velocity, |p| case.velocity(p, t));
    Ok((report, state))
}

/// Kovasznay flow on `[-0.5, 1] x [-0.5, 0.5]`, periodic in `y`, exact
/// Dirichlet data in `x`, marched from a uniform stream to steady state.
pub fn run_kovasznay(case: Kovasznay, settings: &RunSettings) -> Result<CaseReport> {
    let steps = settings.steps()?;
    let mesh = BoxMesh::new(2, &settings.elements, &[[-0.5, 1.0], [-0.5, 0.5]])
        .periodic(1, true)
        .side(0, BoundaryKind::Dirichlet)
        .side(1, BoundaryKind::Dirichlet)
        .build()?;
    let space = Arc::new(Space::new(mesh, Basis1D::new(settings.order)?)?);
    let ns = NavierStokes::new(space.clone(), settings.config(1.0 / case.reynolds))?
        .with_velocity_bc(Arc::new(move |p, _| case.velocity(p)));
    let mut start = vector_field(&space, |_| [1.0, 0.0, 0.0]);
    let mask = space.boundary_mask(space.mesh().sides(), &[BoundaryKind::Dirichlet]);
    for (d, c) in start.iter_mut().enumerate() {
        for l in 0..space.len() {
            if mask[l] == 0.0 {
                c[l] = case.velocity(space.geometry().point(l))[d];
            }
        }
    }
    let mut state = ns.initial_state(start, None)?;
    let mut report = CaseReport::new();
    for _ in 0..steps {
        let r = ns.step(&mut state)?;
        report.record(&r);
    }
    report.error = max_error(&space, &state.velocity, |p| case.velocity(p));
    Ok(report)
}

/// Steady diffusion on `[0, 1]^dim` with `elements` per axis; returns the max
/// nodal error.
pub fn run_steady_diffusion(
    case: SteadyDiffusion,
    order: usize,
    elements: usize,
    tol: f64,
) -> Result<f64> {
    let dim = case.dim;
    let mesh = BoxMesh::new(dim, &vec![elements; dim], &vec![[0.0, 1.0]; dim]).build()?;
    let space = Space::new(mesh, Basis1D::new(order)?)?;
    let f = space.interpolate(|p| case.source(p));
    let mut rhs: Vec<f64> = f
        .iter()
        .zip(space.mass_local())
        .map(|(a, m)| a * m)
        .collect();
    space.dssum(&mut rhs);
    let mask = space.boundary_mask(space.mesh().sides(), &[BoundaryKind::Dirichlet]);
    let (u, _) = helmholtz_solve(
        &space,
        case.diffusivity,
        0.0,
        &rhs,
        &space.zeros(),
        &mask,
        None,
        tol,
    )?;
    let exact = space.interpolate(|p| case.solution(p));
    Ok(u.max_abs_diff(&exact))
}
