//! `convergence`: error sweeps over the polynomial order or the time step.

use std::fmt::Write as _;
use std::path::Path;

use sem_core::cases::{
    run_kovasznay, run_steady_diffusion, run_taylor_green, Kovasznay, RunSettings, SteadyDiffusion,
    TaylorGreen,
};

use crate::config::{Case, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, num, write_text, Csv};

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    Order(Vec<usize>),
    TimeStep(Vec<f64>),
}

impl Sweep {
    /// `N=a:s:b`, `N=a`, `dt=base/2^a..b` or `dt=value`.
    pub fn parse(spec: &str) -> CliResult<Self> {
        let bad = |why: &str| CliError::Usage(format!("sweep '{spec}': {why}"));
        let (name, body) = spec
            .split_once('=')
            .ok_or_else(|| bad("expected NAME=RANGE"))?;
        match name.trim() {
            "N" => {
                let parts: Vec<usize> = body
                    .split(':')
                    .map(|t| t.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(&e.to_string()))?;
                let (a, s, b) = match parts[..] {
                    [a] => (a, 1, a),
                    [a, s, b] => (a, s, b),
                    _ => return Err(bad("use N=start:step:end")),
                };
                if s == 0 || a > b || a == 0 {
                    return Err(bad("need 1 <= start <= end and a positive step"));
                }
                Ok(Sweep::Order((a..=b).step_by(s).collect()))
            }
            "dt" => match body.split_once('/') {
                None => {
                    let v: f64 = body
                        .trim()
                        .parse()
                        .map_err(|e: std::num::ParseFloatError| bad(&e.to_string()))?;
                    if !(v > 0.0) {
                        return Err(bad("dt must be positive"));
                    }
                    Ok(Sweep::TimeStep(vec![v]))
                }
                Some((base, pow)) => {
                    let base: f64 = base
                        .trim()
                        .parse()
                        .map_err(|e: std::num::ParseFloatError| bad(&e.to_string()))?;
                    let range = pow
                        .trim()
                        .strip_prefix("2^")
                        .ok_or_else(|| bad("divisor must be 2^a..b"))?;
                    let (a, b) = range
                        .split_once("..")
                        .ok_or_else(|| bad("divisor must be 2^a..b"))?;
                    let a: i32 = a
                        .trim()
                        .parse()
                        .map_err(|e: std::num::ParseIntError| bad(&e.to_string()))?;
                    let b: i32 = b
                        .trim()
                        .parse()
                        .map_err(|e: std::num::ParseIntError| bad(&e.to_string()))?;
                    if !(base > 0.0) || a > b {
                        return Err(bad("need a positive base and a <= b"));
                    }
                    Ok(Sweep::TimeStep(
                        (a..=b).map(|k| base / 2f64.powi(k)).collect(),
                    ))
                }
            },
            other => Err(bad(&format!("unknown parameter '{other}' (N or dt)"))),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Sweep::Order(_) => "N",
            Sweep::TimeStep(_) => "dt",
        }
    }
}

/// Reference cases with closed-form solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    TaylorGreen,
    Kovasznay,
    Diffusion,
}

impl Reference {
    pub fn parse(name: &str) -> CliResult<Self> {
        match name {
            "taylor_green" => Ok(Reference::TaylorGreen),
            "kovasznay" => Ok(Reference::Kovasznay),
            "diffusion" => Ok(Reference::Diffusion),
            other => Err(CliError::Config(format!(
                "case '{other}' has no analytic reference (taylor_green, kovasznay, diffusion)"
            ))),
        }
    }
}

/// Base parameters that the sweep varies one at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub reference: Reference,
    pub settings: RunSettings,
    pub viscosity: f64,
    pub prime: bool,
    pub dim: usize,
}

impl Study {
    /// Defaults tuned so each sweep exposes the asymptotic rate.
    pub fn defaults(reference: Reference) -> Self {
        match reference {
            Reference::TaylorGreen => {
                let mut s = RunSettings::new(10, &[4, 4], 0.05, 1.0);
                s.velocity_tol = 1e-12;
                s.pressure_tol = 1e-11;
                Study {
                    reference,
                    settings: s,
                    viscosity: 0.2,
                    prime: true,
                    dim: 2,
                }
            }
            Reference::Kovasznay => Study {
                reference,
                settings: RunSettings::new(8, &[3, 2], 0.004, 8.0),
                viscosity: 1.0 / 40.0,
                prime: false,
                dim: 2,
            },
            Reference::Diffusion => {
                let mut s = RunSettings::new(8, &[2, 2], 1.0, 1.0);
                s.velocity_tol = 1e-13;
                Study {
                    reference,
                    settings: s,
                    viscosity: 1.0,
                    prime: false,
                    dim: 2,
                }
            }
        }
    }

    pub fn from_config(cfg: &RunConfig) -> CliResult<Self> {
        let reference = match cfg.case {
            Case::TaylorGreen => Reference::TaylorGreen,
            Case::Kovasznay => Reference::Kovasznay,
            other => return Reference::parse(other.name()).map(Self::defaults),
        };
        let mut s = RunSettings::new(cfg.order, &cfg.elements, cfg.dt, cfg.end_time);
        s.velocity_tol = cfg.velocity_tol;
        s.pressure_tol = cfg.pressure_tol;
        s.projection_depth = cfg.projection_depth;
        s.dealias = cfg.dealias;
        Ok(Study {
            reference,
            settings: s,
            viscosity: cfg.kinematic_viscosity(),
            prime: cfg.prime,
            dim: cfg.dim,
        })
    }

    fn error_at(&self, settings: &RunSettings) -> CliResult<f64> {
        Ok(match self.reference {
            Reference::TaylorGreen => {
                run_taylor_green(
                    TaylorGreen {
                        viscosity: self.viscosity,
                    },
                    settings,
                    self.prime,
                )?
                .0
                .error
            }
            Reference::Kovasznay => {
                run_kovasznay(
                    Kovasznay {
                        reynolds: 1.0 / self.viscosity,
                    },
                    settings,
                )?
                .error
            }
            Reference::Diffusion => run_steady_diffusion(
                SteadyDiffusion {
                    dim: self.dim,
                    diffusivity: self.viscosity,
                },
                settings.order,
                settings.elements[0],
                settings.velocity_tol,
            )?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    /// Temporal order (dt sweeps) or exponential decay rate per unit N.
    pub rate: f64,
    /// Smallest error ratio between consecutive points.
    pub min_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceOutcome {
    pub parameters: Vec<f64>,
    pub errors: Vec<f64>,
    pub fit: Option<Fit>,
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn run_convergence(study: &Study, sweep: &Sweep, out: &Path) -> CliResult<ConvergenceOutcome> {
    let (params, runs): (Vec<f64>, Vec<RunSettings>) = match sweep {
        Sweep::Order(orders) => orders
            .iter()
            .map(|&n| {
                let mut s = study.settings.clone();
                s.order = n;
                (n as f64, s)
            })
            .unzip(),
        Sweep::TimeStep(dts) => {
            if study.reference != Reference::TaylorGreen {
                return Err(CliError::Config(
                    "dt sweeps need the time-dependent taylor_green case".into(),
                ));
            }
            dts.iter()
                .map(|&dt| {
                    let mut s = study.settings.clone();
                    s.dt = dt;
                    (dt, s)
                })
                .unzip()
        }
    };
    let mut errors = Vec::with_capacity(runs.len());
    for (p, s) in params.iter().zip(&runs) {
        if let Sweep::TimeStep(_) = sweep {
            let steps = (s.end_time / s.dt).round();
            if (steps * s.dt - s.end_time).abs() > 1e-9 * s.end_time.max(1.0) {
                return Err(CliError::Config(format!(
                    "dt {p} does not divide the end time {}",
                    s.end_time
                )));
            }
        }
        errors.push(study.error_at(s)?);
    }
    let fit = (params.len() > 1).then(|| {
        let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        let min_ratio = errors
            .windows(2)
            .map(|w| w[0] / w[1])
            .fold(f64::INFINITY, f64::min);
        match sweep {
            Sweep::TimeStep(_) => {
                let lx: Vec<f64> = params.iter().map(|d| d.ln()).collect();
                Fit {
                    rate: least_squares_slope(&lx, &ly),
                    min_ratio,
                }
            }
            Sweep::Order(_) => Fit {
                rate: -least_squares_slope(&params, &ly),
                min_ratio,
            },
        }
    });

    ensure_dir(out)?;
    let label = sweep.label();
    let mut csv = Csv::new(&[label.into(), "error".into()]);
    for (p, e) in params.iter().zip(&errors) {
        csv.row(&[*p, *e]);
    }
    csv.save(&out.join("convergence.csv"))?;
    let mut text = String::new();
    match (&fit, sweep) {
        (None, _) => {
            let _ = writeln!(text, "single point: no fit");
        }
        (Some(f), Sweep::TimeStep(_)) => {
            let _ = writeln!(text, "fitted temporal order: {}", num(f.rate));
            let _ = writeln!(text, "min error ratio per halving: {}", num(f.min_ratio));
        }
        (Some(f), Sweep::Order(_)) => {
            let _ = writeln!(text, "fitted decay rate per unit N: {}", num(f.rate));
            let _ = writeln!(text, "min error ratio per step: {}", num(f.min_ratio));
        }
    }
    write_text(&out.join("convergence_fit.txt"), &text)?;
    for (p, e) in params.iter().zip(&errors) {
        println!("{label}={p} error={e:.6e}");
    }
    print!("{text}");
    Ok(ConvergenceOutcome {
        parameters: params,
        errors,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_specs() {
        assert_eq!(
            Sweep::parse("N=4:2:12").unwrap(),
            Sweep::Order(vec![4, 6, 8, 10, 12])
        );
        assert_eq!(Sweep::parse("N=6").unwrap(), Sweep::Order(vec![6]));
        assert_eq!(
            Sweep::parse("dt=1e-2/2^0..2").unwrap(),
            Sweep::TimeStep(vec![1e-2, 5e-3, 2.5e-3])
        );
        assert!(Sweep::parse("N=4:0:8").is_err());
        assert!(Sweep::parse("nu=1").is_err());
        assert!(Sweep::parse("dt=1e-2/3^0..2").is_err());
    }

    #[test]
    fn non_analytic_cases_rejected() {
        assert_eq!(Reference::parse("lid_cavity").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let x: Vec<f64> = [0.1f64, 0.05, 0.025].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = [0.1f64, 0.05, 0.025]
            .iter()
            .map(|v| (2.0 * v.powi(3)).ln())
            .collect();
        assert!((least_squares_slope(&x, &y) - 3.0).abs() < 1e-12);
    }
}
