//! `stats`: moments and autocorrelation of one column of a CSV time series.

use std::fmt::Write as _;
use std::path::Path;

use sem_core::pod::{autocorrelation, moments, Moments};

use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, num, read_column, write_text, Csv};

#[derive(Debug, Clone, PartialEq)]
pub struct StatsOutcome {
    pub moments: Moments,
    pub autocorrelation: Vec<f64>,
}

pub fn run_stats(
    input: &Path,
    column: &str,
    max_lag: usize,
    out: &Path,
) -> CliResult<StatsOutcome> {
    let series = read_column(input, column)?;
    if max_lag >= series.len() {
        return Err(CliError::Usage(format!(
            "--max-lag {max_lag} needs a series longer than {} samples",
            series.len()
        )));
    }
    let m = moments(&series)?;
    let rho = autocorrelation(&series, max_lag)?;
    ensure_dir(out)?;
    let mut csv = Csv::new(&["lag".into(), "autocorrelation".into()]);
    for (lag, r) in rho.iter().enumerate() {
        csv.indexed_row(lag, &[*r]);
    }
    csv.save(&out.join(format!("autocorrelation_{column}.csv")))?;
    let mut text = String::new();
    let _ = writeln!(text, "column: {column}");
    let _ = writeln!(text, "samples: {}", series.len());
    let _ = writeln!(text, "mean: {}", num(m.mean));
    let _ = writeln!(text, "rms: {}", num(m.rms));
    let _ = writeln!(text, "skewness: {}", num(m.skewness));
    let _ = writeln!(text, "kurtosis: {}", num(m.kurtosis));
    write_text(&out.join(format!("moments_{column}.txt")), &text)?;
    print!("{text}");
    Ok(StatsOutcome {
        moments: m,
        autocorrelation: rho,
    })
}
