//! Run configuration: flat `key = value` lines grouped under `[section]`
//! headers. `#` starts a comment. Keys outside any section belong to the
//! top-level section `""`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use sem_core::solver::{
    CflPolicy, FilterSpec, DEFAULT_MAX_ITERATIONS, DEFAULT_PRESSURE_TOL, DEFAULT_PROJECTION_DEPTH,
    DEFAULT_VELOCITY_TOL,
};
use sem_core::BoundaryKind;

use crate::error::{CliError, CliResult};

/// Parsed text before typing: `section.key -> (value, line)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut section = String::new();
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        CliError::Config(format!("line {line_no}: unterminated section header"))
                    })?
                    .trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(CliError::Config(format!(
                        "line {line_no}: bad section name '{name}'"
                    )));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {line_no}: expected 'key = value'"))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(CliError::Config(format!("line {line_no}: empty key")));
            }
            let key = if section.is_empty() {
                k.to_string()
            } else {
                format!("{section}.{k}")
            };
            if let Some((_, first)) = entries.get(&key) {
                return Err(CliError::Config(format!(
                    "line {line_no}: '{key}' already set on line {first}"
                )));
            }
            entries.insert(key, (v.trim().to_string(), line_no));
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map(|e| e.1).unwrap_or(0)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }
}

/// Typed access that remembers which keys were consumed.
struct Reader<'a> {
    raw: &'a RawConfig,
    used: Vec<String>,
}

impl<'a> Reader<'a> {
    fn err(&self, key: &str, msg: impl std::fmt::Display) -> CliError {
        CliError::Config(format!("line {}: {key}: {msg}", self.raw.line(key)))
    }

    fn take(&mut self, key: &str) -> Option<&'a str> {
        self.used.push(key.to_string());
        self.raw.get(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| self.err(key, format!("'{v}': {e}"))),
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> CliResult<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<T>()
                        .map_err(|e| self.err(key, format!("'{}': {e}", t.trim())))
                })
                .collect::<CliResult<Vec<T>>>()
                .map(Some),
        }
    }

    /// `a, b; c, d; ...` groups.
    fn groups(&mut self, key: &str) -> CliResult<Option<Vec<Vec<f64>>>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .split(';')
                .filter(|g| !g.trim().is_empty())
                .map(|g| {
                    g.split(',')
                        .map(|t| {
                            t.trim()
                                .parse::<f64>()
                                .map_err(|e| self.err(key, format!("'{}': {e}", t.trim())))
                        })
                        .collect::<CliResult<Vec<f64>>>()
                })
                .collect::<CliResult<Vec<_>>>()
                .map(Some),
        }
    }

    fn unknown(&self) -> Option<(&str, usize)> {
        self.raw
            .keys()
            .find(|k| !self.used.iter().any(|u| u == k))
            .map(|k| (k, self.raw.line(k)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    TaylorGreen,
    Kovasznay,
    LidCavity,
    Channel,
    CustomBox,
}

impl Case {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "taylor_green" => Case::TaylorGreen,
            "kovasznay" => Case::Kovasznay,
            "lid_cavity" => Case::LidCavity,
            "channel" => Case::Channel,
            "custom-box" => Case::CustomBox,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Case::TaylorGreen => "taylor_green",
            Case::Kovasznay => "kovasznay",
            Case::LidCavity => "lid_cavity",
            Case::Channel => "channel",
            Case::CustomBox => "custom-box",
        }
    }

    pub fn has_analytic_solution(self) -> bool {
        matches!(self, Case::TaylorGreen | Case::Kovasznay)
    }

    fn default_bounds(self, dim: usize) -> Vec<[f64; 2]> {
        match self {
            Case::TaylorGreen => vec![[0.0, 2.0 * PI]; 2],
            Case::Kovasznay => vec![[-0.5, 1.0], [-0.5, 0.5]],
            Case::Channel => {
                let mut b = vec![[0.0, 2.0 * PI], [-1.0, 1.0]];
                if dim == 3 {
                    b.push([0.0, PI]);
                }
                b
            }
            Case::LidCavity | Case::CustomBox => vec![[0.0, 1.0]; dim],
        }
    }

    fn default_periodic(self, dim: usize) -> Vec<bool> {
        match self {
            Case::TaylorGreen => vec![true, true],
            Case::Kovasznay => vec![false, true],
            Case::Channel => (0..dim).map(|d| d != 1).collect(),
            Case::LidCavity | Case::CustomBox => vec![false; dim],
        }
    }
}

fn parse_kind(s: &str) -> Option<BoundaryKind> {
    match s {
        "dirichlet" | "wall" => Some(BoundaryKind::Dirichlet),
        "neumann" | "outflow" => Some(BoundaryKind::Neumann),
        _ => None,
    }
}

/// Everything a `run` needs, validated.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub case: Case,
    pub dim: usize,
    pub elements: Vec<usize>,
    pub bounds: Vec<[f64; 2]>,
    pub periodic: Vec<bool>,
    pub grading: Vec<f64>,
    /// Non-periodic side kinds (`2 * axis + high`), custom boxes only.
    pub sides: Option<Vec<BoundaryKind>>,
    pub order: usize,
    pub dealias: bool,
    pub dt: f64,
    pub end_time: f64,
    pub density: f64,
    pub viscosity: f64,
    pub heat_capacity: f64,
    pub conductivity: f64,
    pub temperature: bool,
    pub filter: Option<FilterSpec>,
    pub velocity_tol: f64,
    pub pressure_tol: f64,
    pub projection_depth: usize,
    pub max_iterations: usize,
    pub cfl_limit: f64,
    pub cfl_policy: CflPolicy,
    /// Write a snapshot every this many steps; 0 disables snapshots.
    pub snapshot_every: usize,
    pub probes: Vec<[f64; 3]>,
    pub output_dir: PathBuf,
    pub analytic_error: bool,
    /// Start Taylor-Green from two exact earlier levels.
    pub prime: bool,
    /// Constant body force per unit mass; channel defaults to the value
    /// giving a unit laminar centerline speed.
    pub forcing: Option<[f64; 3]>,
    pub lid_velocity: f64,
    /// Amplitude of the seeded initial perturbation (channel only).
    pub perturbation: f64,
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> CliResult<Self> {
        let raw = RawConfig::parse(text)?;
        let mut r = Reader {
            raw: &raw,
            used: Vec::new(),
        };

        let case_name: String = r
            .parse("case")?
            .ok_or_else(|| CliError::Config("case: missing".into()))?;
        let case = Case::parse(&case_name).ok_or_else(|| {
            r.err(
                "case",
                format!("unknown case '{case_name}' (taylor_green, kovasznay, lid_cavity, channel, custom-box)"),
            )
        })?;

        let elements: Vec<usize> = r.list("mesh.elements")?.unwrap_or_else(|| vec![4, 4]);
        let dim = elements.len();
        if !(dim == 2 || dim == 3) {
            return Err(r.err("mesh.elements", format!("{dim} axes given, need 2 or 3")));
        }
        if matches!(case, Case::TaylorGreen | Case::Kovasznay) && dim != 2 {
            return Err(r.err(
                "mesh.elements",
                format!("{} is two-dimensional", case.name()),
            ));
        }
        if elements.contains(&0) {
            return Err(r.err("mesh.elements", "element counts must be positive"));
        }
        let bounds = match r.groups("mesh.bounds")? {
            None => case.default_bounds(dim),
            Some(g) => {
                if g.len() != dim || g.iter().any(|p| p.len() != 2) {
                    return Err(r.err(
                        "mesh.bounds",
                        format!("need {dim} 'lo, hi' pairs separated by ';'"),
                    ));
                }
                if let Some(p) = g.iter().find(|p| !(p[0] < p[1])) {
                    return Err(r.err(
                        "mesh.bounds",
                        format!("lo {} is not below hi {}", p[0], p[1]),
                    ));
                }
                g.iter().map(|p| [p[0], p[1]]).collect()
            }
        };
        let periodic: Vec<bool> = r
            .list("mesh.periodic")?
            .unwrap_or_else(|| case.default_periodic(dim));
        if periodic.len() != dim {
            return Err(r.err("mesh.periodic", format!("need {dim} entries")));
        }
        let grading: Vec<f64> = r.list("mesh.grading")?.unwrap_or_else(|| vec![1.0; dim]);
        if grading.len() != dim || grading.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(r.err("mesh.grading", format!("need {dim} positive ratios")));
        }
        let sides = match r.take("mesh.sides") {
            None => None,
            Some(v) => {
                if case != Case::CustomBox {
                    return Err(r.err("mesh.sides", "only custom-box accepts side kinds"));
                }
                let kinds = v
                    .split(',')
                    .map(|t| {
                        parse_kind(t.trim()).ok_or_else(|| {
                            r.err("mesh.sides", format!("unknown kind '{}'", t.trim()))
                        })
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                if kinds.len() != 2 * dim {
                    return Err(r.err("mesh.sides", format!("need {} entries", 2 * dim)));
                }
                Some(kinds)
            }
        };

        let order: usize = r.parse("discretization.order")?.unwrap_or(6);
        if !(1..=sem_core::basis::MAX_ORDER).contains(&order) {
            return Err(r.err(
                "discretization.order",
                format!("{order} outside 1..={}", sem_core::basis::MAX_ORDER),
            ));
        }
        let dealias = r.parse("discretization.dealias")?.unwrap_or(true);

        let dt: f64 = r
            .parse("time.dt")?
            .ok_or_else(|| CliError::Config("time.dt: missing".into()))?;
        let end_time: f64 = r
            .parse("time.end_time")?
            .ok_or_else(|| CliError::Config("time.end_time: missing".into()))?;

        let density = r.parse("physics.density")?.unwrap_or(1.0);
        let viscosity = r.parse("physics.viscosity")?.unwrap_or(0.01);
        let heat_capacity = r.parse("physics.heat_capacity")?.unwrap_or(1.0);
        let conductivity = r.parse("physics.conductivity")?.unwrap_or(0.01);
        let temperature = r.parse("physics.temperature")?.unwrap_or(false);
        let forcing = match r.list::<f64>("physics.forcing")? {
            None => None,
            Some(f) if f.len() == dim => {
                let mut out = [0.0; 3];
                out[..dim].copy_from_slice(&f);
                Some(out)
            }
            Some(_) => return Err(r.err("physics.forcing", format!("need {dim} components"))),
        };
        let lid_velocity = r.parse("physics.lid_velocity")?.unwrap_or(1.0);
        let perturbation = r.parse("physics.perturbation")?.unwrap_or(0.0);

        let filter_on = r.parse("filter.enabled")?.unwrap_or(false);
        let cutoff = r
            .parse("filter.cutoff")?
            .unwrap_or(sem_core::basis::DEFAULT_FILTER_CUTOFF);
        let strength = r
            .parse("filter.strength")?
            .unwrap_or(sem_core::basis::DEFAULT_FILTER_STRENGTH);
        let filter = filter_on.then_some(FilterSpec { cutoff, strength });

        let velocity_tol = r
            .parse("solver.velocity_tol")?
            .unwrap_or(DEFAULT_VELOCITY_TOL);
        let pressure_tol = r
            .parse("solver.pressure_tol")?
            .unwrap_or(DEFAULT_PRESSURE_TOL);
        let projection_depth = r
            .parse("solver.projection_depth")?
            .unwrap_or(DEFAULT_PROJECTION_DEPTH);
        let max_iterations = r
            .parse("solver.max_iterations")?
            .unwrap_or(DEFAULT_MAX_ITERATIONS);
        let cfl_limit = r.parse("solver.cfl_limit")?.unwrap_or(1.0);
        let cfl_policy = match r.take("solver.cfl_policy").unwrap_or("warn") {
            "warn" => CflPolicy::Warn,
            "abort" => CflPolicy::Abort,
            "ignore" => CflPolicy::Ignore,
            other => {
                return Err(r.err(
                    "solver.cfl_policy",
                    format!("'{other}' is not warn, abort or ignore"),
                ))
            }
        };

        let snapshot_every = r.parse("output.snapshot_every")?.unwrap_or(0);
        let probes = match r.groups("output.probes")? {
            None => Vec::new(),
            Some(g) => {
                if let Some(p) = g.iter().find(|p| p.len() != dim) {
                    return Err(r.err(
                        "output.probes",
                        format!("probe {p:?} needs {dim} coordinates"),
                    ));
                }
                g.iter()
                    .map(|p| {
                        let mut q = [0.0; 3];
                        q[..dim].copy_from_slice(p);
                        q
                    })
                    .collect()
            }
        };
        for p in &probes {
            if (0..dim).any(|d| p[d] < bounds[d][0] || p[d] > bounds[d][1]) {
                return Err(r.err(
                    "output.probes",
                    format!("probe {:?} lies outside the domain", &p[..dim]),
                ));
            }
        }
        let output_dir = PathBuf::from(r.take("output.directory").unwrap_or("out"));
        let analytic_error = r
            .parse("output.analytic_error")?
            .unwrap_or(case.has_analytic_solution());
        if analytic_error && !case.has_analytic_solution() {
            return Err(r.err(
                "output.analytic_error",
                format!("{} has no analytic solution", case.name()),
            ));
        }
        let prime = r.parse("time.prime")?.unwrap_or(false);
        if prime && case != Case::TaylorGreen {
            return Err(r.err("time.prime", "only taylor_green can be primed"));
        }
        let seed = r.parse("seed")?.unwrap_or(0);

        if let Some((k, line)) = r.unknown() {
            return Err(CliError::Config(format!("line {line}: unknown key '{k}'")));
        }

        let cfg = RunConfig {
            case,
            dim,
            elements,
            bounds,
            periodic,
            grading,
            sides,
            order,
            dealias,
            dt,
            end_time,
            density,
            viscosity,
            heat_capacity,
            conductivity,
            temperature,
            filter,
            velocity_tol,
            pressure_tol,
            projection_depth,
            max_iterations,
            cfl_limit,
            cfl_policy,
            snapshot_every,
            probes,
            output_dir,
            analytic_error,
            prime,
            forcing,
            lid_velocity,
            perturbation,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every positivity and consistency rule, naming the offending field.
    pub fn validate(&self) -> CliResult<()> {
        let positive = [
            ("physics.density", self.density),
            ("physics.viscosity", self.viscosity),
            ("physics.heat_capacity", self.heat_capacity),
            ("physics.conductivity", self.conductivity),
            ("time.dt", self.dt),
            ("time.end_time", self.end_time),
            ("solver.velocity_tol", self.velocity_tol),
            ("solver.pressure_tol", self.pressure_tol),
            ("solver.cfl_limit", self.cfl_limit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::Config(format!(
                    "{name}: must be positive, got {v}"
                )));
            }
        }
        if let Some(f) = self.filter {
            if !(0.0..=1.0).contains(&f.strength) {
                return Err(CliError::Config(format!(
                    "filter.strength: {} outside [0, 1]",
                    f.strength
                )));
            }
            if f.cutoff > self.order {
                return Err(CliError::Config(format!(
                    "filter.cutoff: {} exceeds the order {}",
                    f.cutoff, self.order
                )));
            }
        }
        if self.max_iterations == 0 {
            return Err(CliError::Config(
                "solver.max_iterations: must be positive".into(),
            ));
        }
        let steps = self.steps();
        if steps == 0
            || (steps as f64 * self.dt - self.end_time).abs()
                > 1e-9 * self.end_time.max(1.0) + 1e-12
        {
            return Err(CliError::Config(format!(
                "time.end_time: {} is not a whole number of steps of {}",
                self.end_time, self.dt
            )));
        }
        if !self.perturbation.is_finite() || self.perturbation < 0.0 {
            return Err(CliError::Config(
                "physics.perturbation: must be non-negative".into(),
            ));
        }
        if self.temperature && self.case == Case::Kovasznay {
            return Err(CliError::Config(
                "physics.temperature: not available for kovasznay".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.end_time / self.dt).round() as usize
    }

    pub fn kinematic_viscosity(&self) -> f64 {
        self.viscosity / self.density
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "case = taylor_green\n[time]\ndt = 0.01\nend_time = 0.1\n";

    #[test]
    fn minimal_config_takes_case_defaults() {
        let c = RunConfig::from_text(MINIMAL).unwrap();
        assert_eq!(c.case, Case::TaylorGreen);
        assert_eq!(c.dim, 2);
        assert_eq!(c.periodic, vec![true, true]);
        assert_eq!(c.steps(), 10);
        assert!(c.analytic_error);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = RawConfig::parse("case = x\n[mesh\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e =
            RunConfig::from_text(&format!("{MINIMAL}[physics]\nviscosity = abc\n")).unwrap_err();
        assert!(
            e.to_string().contains("line 6") && e.to_string().contains("physics.viscosity"),
            "{e}"
        );
        let e = RunConfig::from_text(&format!("{MINIMAL}bogus = 1\n")).unwrap_err();
        assert!(
            e.to_string().contains("line 5") && e.to_string().contains("time.bogus"),
            "{e}"
        );
    }

    #[test]
    fn negative_viscosity_names_the_field() {
        let e = RunConfig::from_text(&format!("{MINIMAL}[physics]\nviscosity = -1\n")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("physics.viscosity"), "{e}");
    }

    #[test]
    fn duplicate_keys_rejected() {
        let e = RawConfig::parse("a = 1\na = 2\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn end_time_must_be_whole_steps() {
        let e = RunConfig::from_text("case = taylor_green\n[time]\ndt = 0.3\nend_time = 1\n")
            .unwrap_err();
        assert!(e.to_string().contains("time.end_time"), "{e}");
    }

    #[test]
    fn custom_box_reads_mesh() {
        let c = RunConfig::from_text(
            "case = custom-box\n[mesh]\nelements = 2, 3, 1\nbounds = 0, 2; 0, 1; 0, 0.5\nperiodic = true, false, false\n\
             grading = 1, 1.2, 1\nsides = dirichlet, dirichlet, wall, wall, neumann, dirichlet\n\
             [time]\ndt = 0.1\nend_time = 0.2\n[output]\nprobes = 1, 0.5, 0.25; 0, 0, 0\n",
        )
        .unwrap();
        assert_eq!(c.dim, 3);
        assert_eq!(c.bounds[2], [0.0, 0.5]);
        assert_eq!(c.probes.len(), 2);
        assert_eq!(c.sides.as_ref().unwrap()[4], BoundaryKind::Neumann);
    }
}
