//! Time integration of the constant-property incompressible Navier-Stokes
//! equations with an optional passive temperature field.
//!
//! Each step is a high-order splitting: convection is extrapolated (EXTk),
//! the time derivative is backward-differenced (BDFk), and the coupled
//! velocity-pressure problem is replaced by one Helmholtz solve per velocity
//! component (with an extrapolated pressure gradient) and one consistent
//! pressure Poisson solve whose increment projects the velocity onto the
//! discretely divergence-free space. The pressure is updated in rotational
//! form. `k = min(step + 1, 3)`, so the scheme starts at first order and
//! reaches third order from the third step on.

mod krylov;

use std::collections::VecDeque;
use std::sync::Arc;

pub use krylov::{
    helmholtz_solve, pcg, pcg_scaled, pressure_solve, CgStats, Helmholtz, LinearOperator,
    PressureOperator, ProjectionBasis, DEFAULT_MAX_ITERATIONS,
};

use crate::error::{Result, SemError};
use crate::matrix::Matrix;
use crate::mesh::BoundaryKind;
use crate::operators::{
    apply_divergence, apply_gradient, boundary_flux, consistent_poisson_diagonal, convection_weak,
    filter_with, gradient_local, stiffness_diagonal, weak_gradient_transpose, Field, Space,
};
use krylov::helmholtz_solve_with_diag;

/// Time-dependent vector data `f(x, t)`.
pub type VectorFn = Arc<dyn Fn([f64; 3], f64) -> [f64; 3] + Send + Sync>;
/// Time-dependent scalar data `f(x, t)`.
pub type ScalarFn = Arc<dyn Fn([f64; 3], f64) -> f64 + Send + Sync>;

pub const DEFAULT_VELOCITY_TOL: f64 = 1e-9;
pub const DEFAULT_PRESSURE_TOL: f64 = 1e-7;
pub const DEFAULT_PROJECTION_DEPTH: usize = 8;
/// Target rms divergence after a step, as a fraction of the pressure
/// tolerance.
const DIVERGENCE_FRACTION: f64 = 0.1;
/// Order of the pressure extrapolation used in the velocity solves.
const PRESSURE_EXTRAPOLATION_ORDER: usize = 2;

/// `(b0, [b1, b2, b3])` with `b0 u^{n+1} - sum_j b_j u^{n+1-j}` the BDFk
/// difference (to be divided by `dt`).
pub fn bdf_coefficients(order: usize) -> (f64, [f64; 3]) {
    match order {
        1 => (1.0, [1.0, 0.0, 0.0]),
        2 => (1.5, [2.0, -0.5, 0.0]),
        _ => (11.0 / 6.0, [3.0, -1.5, 1.0 / 3.0]),
    }
}

/// EXTk extrapolation weights.
pub fn ext_coefficients(order: usize) -> [f64; 3] {
    match order {
        1 => [1.0, 0.0, 0.0],
        2 => [2.0, -1.0, 0.0],
        _ => [3.0, -3.0, 1.0],
    }
}

/// Constant physical properties: density, dynamic viscosity, heat capacity,
/// thermal conductivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub density: f64,
    pub viscosity: f64,
    pub heat_capacity: f64,
    pub conductivity: f64,
    pub dt: f64,
}

impl FlowParams {
    pub fn kinematic_viscosity(&self) -> f64 {
        self.viscosity / self.density
    }

    pub fn diffusivity(&self) -> f64 {
        self.conductivity / (self.density * self.heat_capacity)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("density", self.density),
            ("viscosity", self.viscosity),
            ("heat_capacity", self.heat_capacity),
            ("conductivity", self.conductivity),
            ("dt", self.dt),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SemError::Parameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub cutoff: usize,
    pub strength: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            cutoff: crate::basis::DEFAULT_FILTER_CUTOFF,
            strength: crate::basis::DEFAULT_FILTER_STRENGTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CflPolicy {
    Ignore,
    Warn,
    Abort,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub params: FlowParams,
    pub dealias: bool,
    pub filter: Option<FilterSpec>,
    pub velocity_tol: f64,
    pub pressure_tol: f64,
    pub max_iterations: usize,
    /// Depth of the pressure projection basis; 0 disables warm starts.
    pub projection_depth: usize,
    pub cfl_limit: f64,
    pub cfl_policy: CflPolicy,
    /// Solve the temperature equation.
    pub temperature: bool,
    /// Boundary kinds for temperature per domain side; defaults to the mesh's.
    pub temperature_sides: Option<Vec<BoundaryKind>>,
}

impl SolverConfig {
    pub fn new(params: FlowParams) -> Self {
        Self {
            params,
            dealias: true,
            filter: None,
            velocity_tol: DEFAULT_VELOCITY_TOL,
            pressure_tol: DEFAULT_PRESSURE_TOL,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            projection_depth: DEFAULT_PROJECTION_DEPTH,
            cfl_limit: 1.0,
            cfl_policy: CflPolicy::Warn,
            temperature: false,
            temperature_sides: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveKind {
    Pressure,
    Velocity(usize),
    Temperature,
}

/// One linear solve performed during a step.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveRecord {
    pub kind: SolveKind,
    /// Iterative method used.
    pub method: &'static str,
    pub stats: CgStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step_index: usize,
    pub time: f64,
    pub order: usize,
    pub cfl: f64,
    pub cfl_warning: bool,
    pub solves: Vec<SolveRecord>,
    /// `max |div u|` after the step.
    pub divergence: f64,
}

#[derive(Debug, Clone)]
struct History {
    velocity: Vec<Field>,
    /// Convective derivative `(u . grad) u`, continuous.
    convection: Vec<Field>,
    /// Kinematic pressure (divided by density).
    pressure: Field,
    temperature: Option<(Field, Field)>,
}

/// One earlier time level handed to [`NavierStokes::prime_history`].
#[derive(Debug, Clone)]
pub struct TimeLevel {
    pub velocity: Vec<Field>,
    /// Physical pressure; zero when absent.
    pub pressure: Option<Field>,
    pub temperature: Option<Field>,
}

/// Everything that changes from step to step.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub time: f64,
    pub step_index: usize,
    pub velocity: Vec<Field>,
    /// Physical pressure (not divided by density).
    pub pressure: Field,
    pub temperature: Option<Field>,
    pub params: FlowParams,
    history: VecDeque<History>,
    projection: ProjectionBasis,
}

impl SolverState {
    /// Number of stored previous steps.
    pub fn history_depth(&self) -> usize {
        self.history.len()
    }

    pub fn projection_basis(&self) -> &ProjectionBasis {
        &self.projection
    }

    pub fn kinetic_energy(&self, space: &Space) -> f64 {
        0.5 * self.velocity.iter().map(|u| space.inner(u, u)).sum::<f64>()
    }
}

/// Navier-Stokes stepper bound to one discretization.
pub struct NavierStokes {
    space: Arc<Space>,
    config: SolverConfig,
    velocity_bc: Option<VectorFn>,
    temperature_bc: Option<ScalarFn>,
    forcing: Option<VectorFn>,
    velocity_mask: Vec<f64>,
    pressure_mask: Vec<f64>,
    temperature_mask: Vec<f64>,
    stiff_diag: Field,
    pressure_diag: Field,
    filter: Option<Matrix>,
}

impl std::fmt::Debug for NavierStokes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NavierStokes")
            .field("config", &self.config)
            .field("velocity_bc", &self.velocity_bc.is_some())
            .field("temperature_bc", &self.temperature_bc.is_some())
            .field("forcing", &self.forcing.is_some())
            .finish()
    }
}

impl NavierStokes {
    pub fn new(space: Arc<Space>, config: SolverConfig) -> Result<Self> {
        config.params.validate()?;
        let sides = space.mesh().sides().to_vec();
        let velocity_mask = space.boundary_mask(&sides, &[BoundaryKind::Dirichlet]);
        let pressure_mask = space.boundary_mask(&sides, &[BoundaryKind::Neumann]);
        let tsides = config
            .temperature_sides
            .clone()
            .unwrap_or_else(|| sides.clone());
        if tsides.len() != sides.len() {
            return Err(SemError::Dimension {
                expected: sides.len(),
                got: tsides.len(),
            });
        }
        let temperature_mask = space.boundary_mask(&tsides, &[BoundaryKind::Dirichlet]);
        let filter = match config.filter {
            Some(f) => Some(space.basis().modal_filter_matrix(f.cutoff, f.strength)?),
            None => None,
        };
        let stiff_diag = stiffness_diagonal(&space);
        let pressure_diag = consistent_poisson_diagonal(&space, &velocity_mask)?;
        Ok(Self {
            space,
            config,
            velocity_bc: None,
            temperature_bc: None,
            forcing: None,
            velocity_mask,
            pressure_mask,
            temperature_mask,
            stiff_diag,
            pressure_diag,
            filter,
        })
    }

    /// Dirichlet data for velocity (zero when unset).
    pub fn with_velocity_bc(mut self, f: VectorFn) -> Self {
        self.velocity_bc = Some(f);
        self
    }

    pub fn with_temperature_bc(mut self, f: ScalarFn) -> Self {
        self.temperature_bc = Some(f);
        self
    }

    /// Body force per unit mass.
    pub fn with_forcing(mut self, f: VectorFn) -> Self {
        self.forcing = Some(f);
        self
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn initial_state(
        &self,
        velocity: Vec<Field>,
        temperature: Option<Field>,
    ) -> Result<SolverState> {
        crate::operators::check_components(&self.space, &velocity)?;
        for c in &velocity {
            self.space.check(c)?;
        }
        if self.config.temperature && temperature.is_none() {
            return Err(SemError::Parameter(
                "temperature enabled without an initial field".into(),
            ));
        }
        Ok(SolverState {
            time: 0.0,
            step_index: 0,
            velocity,
            pressure: self.space.zeros(),
            temperature: if self.config.temperature {
                temperature
            } else {
                None
            },
            params: self.config.params,
            history: VecDeque::with_capacity(3),
            projection: ProjectionBasis::new(self.config.projection_depth),
        })
    }

    /// Installs previous time levels (newest first, at `t - dt`, `t - 2 dt`)
    /// so the next step runs at full order immediately.
    pub fn prime_history(&self, state: &mut SolverState, previous: Vec<TimeLevel>) -> Result<()> {
        state.history.clear();
        for level in previous.into_iter().take(2) {
            crate::operators::check_components(&self.space, &level.velocity)?;
            let convection = self.convection(&level.velocity)?;
            let temperature = match level.temperature {
                Some(t) if self.config.temperature => {
                    let c = self.scalar_convection(&level.velocity, &t)?;
                    Some((t, c))
                }
                _ => None,
            };
            let mut pressure = level.pressure.unwrap_or_else(|| self.space.zeros());
            self.space.check(&pressure)?;
            pressure.scale(1.0 / state.params.density);
            state.history.push_back(History {
                velocity: level.velocity,
                convection,
                pressure,
                temperature,
            });
        }
        state.step_index = state.history.len();
        Ok(())
    }

    fn convection(&self, velocity: &[Field]) -> Result<Vec<Field>> {
        velocity
            .iter()
            .map(|c| self.scalar_convection(velocity, c))
            .collect()
    }

    fn scalar_convection(&self, velocity: &[Field], theta: &[f64]) -> Result<Field> {
        let mut c = convection_weak(&self.space, velocity, theta, self.config.dealias)?;
        self.space.dual_to_field(&mut c);
        Ok(c)
    }

    /// `max_nodes sum_d |u_d| dt / dx_d` with `dx_d` the local GLL spacing.
    pub fn estimate_cfl(&self, state: &SolverState) -> f64 {
        estimate_cfl(&self.space, &state.velocity, state.params.dt)
    }

    fn velocity_boundary(&self, t: f64) -> Vec<Field> {
        let dim = self.space.dim();
        match &self.velocity_bc {
            Some(f) => {
                let mut out = vec![self.space.zeros(); dim];
                for l in 0..self.space.len() {
                    if self.velocity_mask[l] == 0.0 {
                        let v = f(self.space.geometry().point(l), t);
                        for d in 0..dim {
                            out[d][l] = v[d];
                        }
                    }
                }
                out
            }
            None => vec![self.space.zeros(); dim],
        }
    }

    fn temperature_boundary(&self, t: f64) -> Field {
        let mut out = self.space.zeros();
        if let Some(f) = &self.temperature_bc {
            for l in 0..self.space.len() {
                if self.temperature_mask[l] == 0.0 {
                    out[l] = f(self.space.geometry().point(l), t);
                }
            }
        }
        out
    }

    /// Advances the state by one time step.
    pub fn step(&self, state: &mut SolverState) -> Result<StepReport> {
        let space = &*self.space;
        let dim = space.dim();
        let dt = state.params.dt;
        let nu = state.params.kinematic_viscosity();
        let t_new = state.time + dt;
        let tol_v = self.config.velocity_tol;
        let tol_p = self.config.pressure_tol;
        let max_iter = self.config.max_iterations;

        let cfl = self.estimate_cfl(state);
        let cfl_warning = cfl > self.config.cfl_limit;
        if cfl_warning && self.config.cfl_policy == CflPolicy::Abort {
            return Err(SemError::CflViolation {
                cfl,
                limit: self.config.cfl_limit,
            });
        }

        // (a) extrapolated convection
        let convection = self.convection(&state.velocity)?;
        let temp_entry = match &state.temperature {
            Some(t) => Some((t.clone(), self.scalar_convection(&state.velocity, t)?)),
            None => None,
        };
        let mut p_now = state.pressure.clone();
        p_now.scale(1.0 / state.params.density);
        state.history.push_front(History {
            velocity: state.velocity.clone(),
            convection,
            pressure: p_now,
            temperature: temp_entry,
        });
        state.history.truncate(3);
        let order = state.history.len().min(3);
        let (b0, b) = bdf_coefficients(order);
        let a = ext_coefficients(order);
        let a_p = ext_coefficients(order.min(PRESSURE_EXTRAPOLATION_ORDER));

        let mut source = vec![space.zeros(); dim];
        let mut u_ext = vec![space.zeros(); dim];
        let mut p_ext = space.zeros();
        for (j, h) in state.history.iter().enumerate().take(order) {
            for d in 0..dim {
                source[d].axpy(b[j] / dt, &h.velocity[d]);
                source[d].axpy(-a[j], &h.convection[d]);
                u_ext[d].axpy(a[j], &h.velocity[d]);
            }
            p_ext.axpy(a_p[j], &h.pressure);
        }
        if let Some(f) = &self.forcing {
            for l in 0..space.len() {
                let v = f(space.geometry().point(l), t_new);
                for d in 0..dim {
                    source[d][l] += v[d];
                }
            }
        }

        // (b) velocity Helmholtz solves with the extrapolated pressure
        let bc_velocity = self.velocity_boundary(t_new);
        let grad_p = gradient_local(space, &p_ext)?;
        let mut solves = Vec::with_capacity(dim + 2);
        let mut velocity = Vec::with_capacity(dim);
        for d in 0..dim {
            let mut rhs: Vec<f64> = source[d]
                .iter()
                .zip(grad_p[d].iter())
                .zip(space.mass_local())
                .map(|((s, g), m)| m * (s - g))
                .collect();
            space.dssum(&mut rhs);
            let (u, stats) = helmholtz_solve_with_diag(
                space,
                nu,
                b0 / dt,
                &rhs,
                &u_ext[d],
                &self.velocity_mask,
                Some(&bc_velocity[d]),
                &self.stiff_diag,
                tol_v,
                max_iter,
            )?;
            solves.push(SolveRecord {
                kind: SolveKind::Velocity(d),
                method: "jacobi-pcg",
                stats,
            });
            velocity.push(u);
        }
        if let Some(f) = &self.filter {
            for (d, u) in velocity.iter_mut().enumerate() {
                *u = filter_with(space, u, f);
                restore_dirichlet(u, &bc_velocity[d], &self.velocity_mask);
            }
        }

        // (c) consistent pressure solve and projection
        let mut weak_div = weak_gradient_transpose(space, &velocity)?;
        weak_div.scale(-1.0);
        weak_div.axpy(1.0, &boundary_flux(space, &velocity, |_| true)?);
        let mut rhs_p = weak_div.clone();
        rhs_p.scale(-b0 / dt);
        // Stop once the corrected velocity's rms divergence is below
        // DIVERGENCE_FRACTION * tol, even if the data itself is tiny.
        let scale = b0 / dt * DIVERGENCE_FRACTION * space.volume().sqrt();
        let poisson = PressureOperator::with_diagonal(
            space,
            &self.velocity_mask,
            &self.pressure_mask,
            &self.pressure_diag,
        )?;
        let projection = if self.config.projection_depth > 0 {
            Some(&mut state.projection)
        } else {
            None
        };
        let (delta, p_stats) =
            pressure_solve(&poisson, &rhs_p, projection, tol_p, scale, max_iter)?;
        solves.push(SolveRecord {
            kind: SolveKind::Pressure,
            method: if self.config.projection_depth > 0 {
                "jacobi-pcg+projection"
            } else {
                "jacobi-pcg"
            },
            stats: p_stats,
        });
        let grad_delta = apply_gradient(space, &delta)?;
        for (u, g) in velocity.iter_mut().zip(&grad_delta) {
            for ((v, gv), m) in u.iter_mut().zip(g.iter()).zip(&self.velocity_mask) {
                *v -= dt / b0 * m * gv;
            }
        }
        // rotational update: p = p* + delta - nu div(u~)
        let mut pressure = p_ext;
        pressure.axpy(1.0, &delta);
        space.dual_to_field(&mut weak_div);
        pressure.axpy(-nu, &weak_div);
        if poisson.has_null_space() {
            let mean = space.mean(&pressure);
            pressure.iter_mut().for_each(|v| *v -= mean);
        }

        // (d) passive temperature
        let mut temperature = None;
        if state.temperature.is_some() {
            let kappa = state.params.diffusivity();
            let mut src = space.zeros();
            let mut t_ext = space.zeros();
            for (j, h) in state.history.iter().enumerate().take(order) {
                let (t, c) = h.temperature.as_ref().expect("temperature history");
                src.axpy(b[j] / dt, t);
                src.axpy(-a[j], c);
                t_ext.axpy(a[j], t);
            }
            let mut rhs: Vec<f64> = src
                .iter()
                .zip(space.mass_local())
                .map(|(s, m)| m * s)
                .collect();
            space.dssum(&mut rhs);
            let bc = self.temperature_boundary(t_new);
            let (mut t, stats) = helmholtz_solve_with_diag(
                space,
                kappa,
                b0 / dt,
                &rhs,
                &t_ext,
                &self.temperature_mask,
                Some(&bc),
                &self.stiff_diag,
                tol_v,
                max_iter,
            )?;
            solves.push(SolveRecord {
                kind: SolveKind::Temperature,
                method: "jacobi-pcg",
                stats,
            });
            // (e) explicit filter
            if let Some(f) = &self.filter {
                t = filter_with(space, &t, f);
                restore_dirichlet(&mut t, &bc, &self.temperature_mask);
            }
            temperature = Some(t);
        }

        let divergence = apply_divergence(space, &velocity)?.max_abs();
        state.velocity = velocity;
        pressure.scale(state.params.density);
        state.pressure = pressure;
        state.temperature = temperature;
        state.time = t_new;
        state.step_index += 1;

        Ok(StepReport {
            step_index: state.step_index,
            time: t_new,
            order,
            cfl,
            cfl_warning,
            solves,
            divergence,
        })
    }

    /// Advances the temperature alone (frozen velocity) by one step; the
    /// velocity history is left untouched.
    pub fn advance_temperature(&self, state: &mut SolverState) -> Result<Field> {
        let space = &*self.space;
        let Some(t_now) = state.temperature.clone() else {
            return Err(SemError::Parameter("temperature is not enabled".into()));
        };
        let dt = state.params.dt;
        let kappa = state.params.diffusivity();
        let conv = self.scalar_convection(&state.velocity, &t_now)?;
        let mut levels: Vec<(Field, Field)> = vec![(t_now, conv)];
        for h in state.history.iter().take(2) {
            match &h.temperature {
                Some(pair) => levels.push(pair.clone()),
                None => break,
            }
        }
        let order = levels.len();
        let (b0, b) = bdf_coefficients(order);
        let a = ext_coefficients(order);
        let mut src = space.zeros();
        let mut t_ext = space.zeros();
        for (j, (t, c)) in levels.iter().enumerate() {
            src.axpy(b[j] / dt, t);
            src.axpy(-a[j], c);
            t_ext.axpy(a[j], t);
        }
        let mut rhs: Vec<f64> = src
            .iter()
            .zip(space.mass_local())
            .map(|(s, m)| m * s)
            .collect();
        space.dssum(&mut rhs);
        let t_new = state.time + dt;
        let bc = self.temperature_boundary(t_new);
        let (mut t, _) = helmholtz_solve_with_diag(
            space,
            kappa,
            b0 / dt,
            &rhs,
            &t_ext,
            &self.temperature_mask,
            Some(&bc),
            &self.stiff_diag,
            self.config.velocity_tol,
            self.config.max_iterations,
        )?;
        if let Some(f) = &self.filter {
            t = filter_with(space, &t, f);
            restore_dirichlet(&mut t, &bc, &self.temperature_mask);
        }
        let (t_old, c_old) = levels.swap_remove(0);
        let mut p = state.pressure.clone();
        p.scale(1.0 / state.params.density);
        state.history.push_front(History {
            velocity: state.velocity.clone(),
            convection: vec![space.zeros(); space.dim()],
            pressure: p,
            temperature: Some((t_old, c_old)),
        });
        state.history.truncate(3);
        state.temperature = Some(t.clone());
        state.time = t_new;
        state.step_index += 1;
        Ok(t)
    }
}

fn restore_dirichlet(u: &mut [f64], bc: &[f64], mask: &[f64]) {
    for ((v, b), m) in u.iter_mut().zip(bc).zip(mask) {
        if *m == 0.0 {
            *v = *b;
        }
    }
}

/// `max_nodes sum_d |u_d| dt / dx_d`.
pub fn estimate_cfl(space: &Space, velocity: &[Field], dt: f64) -> f64 {
    let dim = space.dim();
    (0..space.len())
        .map(|l| {
            (0..dim)
                .map(|d| velocity[d][l].abs() * dt / space.spacing(d)[l])
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}
