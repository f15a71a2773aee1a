//! `pod`: snapshot POD over a set of snapshot files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sem_core::pod::{detect_mode_pairs, pod, ClipBox, ClipRegion, SnapshotSet};
use sem_core::{Basis1D, BoxMesh, Space};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, num, write_text, Csv};
use crate::snapshot::{self, SnapshotHeader};

pub const DEFAULT_PAIR_TOL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct PodOptions {
    pub snapshots: String,
    /// `box:x0,x1,y0,y1[,z0,z1]` specs; their union is the clip region.
    pub clips: Vec<String>,
    pub modes: usize,
    pub pair_tol: f64,
    pub remove_mean: bool,
    /// Run config describing the mesh, needed when it was graded.
    pub config: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodOutcome {
    pub eigenvalues: Vec<f64>,
    /// 1-based index pairs.
    pub pairs: Vec<(usize, usize)>,
    pub files: Vec<PathBuf>,
}

fn space_for(header: &SnapshotHeader, config: Option<&Path>) -> CliResult<Space> {
    let mesh = match config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            let mut b = BoxMesh::new(cfg.dim, &cfg.elements, &cfg.bounds);
            for d in 0..cfg.dim {
                b = b.periodic(d, cfg.periodic[d]).grading(d, cfg.grading[d]);
            }
            if cfg.order != header.order
                || cfg.elements != header.counts
                || cfg.bounds != header.bounds
            {
                return Err(CliError::Io(format!(
                    "snapshots do not match the mesh in {}",
                    path.display()
                )));
            }
            b.build()?
        }
        None => BoxMesh::new(header.dim, &header.counts, &header.bounds).build()?,
    };
    Ok(Space::new(mesh, Basis1D::new(header.order)?)?)
}

pub fn parse_clip(spec: &str, dim: usize) -> CliResult<ClipBox> {
    let body = spec
        .strip_prefix("box:")
        .ok_or_else(|| CliError::Usage(format!("clip '{spec}' must start with 'box:'")))?;
    ClipBox::parse(body, dim).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn run_pod(opts: &PodOptions) -> CliResult<PodOutcome> {
    let mut paths: Vec<PathBuf> = glob::glob(&opts.snapshots)
        .map_err(|e| CliError::Usage(format!("bad glob '{}': {e}", opts.snapshots)))?
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Io(e.to_string()))?;
    paths.sort();
    if paths.len() < 2 {
        return Err(CliError::Usage(format!(
            "'{}' matched {} snapshot file(s); at least 2 are needed",
            opts.snapshots,
            paths.len()
        )));
    }
    if opts.modes == 0 {
        return Err(CliError::Usage("--modes must be at least 1".into()));
    }
    if !(opts.pair_tol >= 0.0) {
        return Err(CliError::Usage("--pair-tol must be non-negative".into()));
    }
    let files = paths
        .iter()
        .map(|p| snapshot::read(p))
        .collect::<CliResult<Vec<_>>>()?;
    let first = files[0].header.clone();
    if first.fields < first.dim {
        return Err(CliError::Io(format!(
            "{} holds {} fields, fewer than the {} velocity components",
            paths[0].display(),
            first.fields,
            first.dim
        )));
    }
    if let Some((p, _)) = paths
        .iter()
        .zip(&files)
        .find(|(_, f)| !f.header.compatible(&first))
    {
        return Err(CliError::Io(format!(
            "{} is incompatible with {}",
            p.display(),
            paths[0].display()
        )));
    }
    let space = space_for(&first, opts.config.as_deref())?;
    let dim = first.dim;
    let times: Vec<f64> = files.iter().map(|f| f.header.time).collect();
    let velocities = files
        .into_iter()
        .map(|f| f.fields.into_iter().take(dim).collect())
        .collect();
    let mut set = SnapshotSet::new(&space, velocities, times[1] - times[0])?;
    if opts.remove_mean {
        set.remove_mean();
    }
    let clip = if opts.clips.is_empty() {
        None
    } else {
        let boxes = opts
            .clips
            .iter()
            .map(|c| parse_clip(c, dim))
            .collect::<CliResult<Vec<_>>>()?;
        Some(ClipRegion::from_boxes(&space, &boxes).map_err(|e| CliError::Usage(e.to_string()))?)
    };
    let result = pod(&space, &set, clip.as_ref(), opts.modes)?;

    ensure_dir(&opts.out)?;
    let mut written = Vec::new();
    let total: f64 = result.eigenvalues.iter().sum();
    let mut eig = Csv::new(&[
        "index".into(),
        "eigenvalue".into(),
        "energy_fraction".into(),
    ]);
    for (i, &l) in result.eigenvalues.iter().enumerate() {
        eig.indexed_row(i + 1, &[l, if total > 0.0 { l / total } else { 0.0 }]);
    }
    let path = opts.out.join("eigenvalues.csv");
    eig.save(&path)?;
    written.push(path);

    let k = opts.modes.min(set.len());
    let mut cols = vec!["snapshot".to_string(), "time".to_string()];
    cols.extend((1..=k).map(|i| format!("a_{i}")));
    let mut coef = Csv::new(&cols);
    for (n, &t) in times.iter().enumerate() {
        let mut row = vec![t];
        row.extend((0..k).map(|i| result.coefficients[(n, i)]));
        coef.indexed_row(n + 1, &row);
    }
    let path = opts.out.join("coefficients.csv");
    coef.save(&path)?;
    written.push(path);

    for (i, mode) in result.modes.iter().enumerate() {
        let header = SnapshotHeader::for_space(&space, dim, 0.0, (i + 1) as u64);
        let path = opts.out.join(format!("mode_{:03}.semk", i + 1));
        snapshot::write(&path, &header, mode)?;
        written.push(path);
    }

    let pairs: Vec<(usize, usize)> = detect_mode_pairs(&result.eigenvalues, opts.pair_tol)
        .into_iter()
        .map(|(a, b)| (a + 1, b + 1))
        .collect();
    let mut report = String::new();
    let _ = writeln!(report, "snapshots: {}", set.len());
    let _ = writeln!(report, "mean removed: {}", set.mean_removed());
    let _ = writeln!(report, "pair tolerance: {}", num(opts.pair_tol));
    if result.eigenvalues.len() > 1 && result.eigenvalues[0] > 0.0 {
        let _ = writeln!(
            report,
            "lambda2/lambda1: {}",
            num(result.eigenvalues[1] / result.eigenvalues[0])
        );
    }
    if pairs.is_empty() {
        let _ = writeln!(report, "pairs: none");
    }
    for (a, b) in &pairs {
        let _ = writeln!(report, "pair: ({a},{b})");
    }
    let path = opts.out.join("pairs.txt");
    write_text(&path, &report)?;
    written.push(path);
    print!("{report}");
    if result.modes.len() < k {
        eprintln!(
            "note: only {} of {k} requested modes carry energy; the rest were skipped",
            result.modes.len()
        );
    }
    Ok(PodOutcome {
        eigenvalues: result.eigenvalues,
        pairs,
        files: written,
    })
}
