use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use sem_cli::snapshot::{self, SnapshotHeader};
use sem_core::pod::traveling_wave;
use sem_core::{Basis1D, BoxMesh, Field, Space};

fn semk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semk"))
        .args(args)
        .output()
        .unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(
        &path,
        format!(
            "{body}\n[output]\ndirectory = {}\n",
            dir.join("out").display()
        ),
    )
    .unwrap();
    path.display().to_string()
}

const SHORT_TG: &str =
    "case = taylor_green\n[mesh]\nelements = 4, 4\n[discretization]\norder = 7\n\
                        [time]\ndt = 0.01\nend_time = 0.05\n";

fn wave_space() -> Space {
    let mesh = BoxMesh::new(2, &[4, 1], &[[0.0, 2.0 * PI], [0.0, 1.0]])
        .periodic(0, true)
        .build()
        .unwrap();
    Space::new(mesh, Basis1D::new(6).unwrap()).unwrap()
}

fn write_snapshots(dir: &Path, space: &Space, snaps: &[Vec<Field>]) {
    for (m, s) in snaps.iter().enumerate() {
        let header = SnapshotHeader::for_space(space, s.len(), m as f64 * 0.1, m as u64);
        snapshot::write(&dir.join(format!("s_{m:03}.semk")), &header, s).unwrap();
    }
}

#[test]
fn negative_viscosity_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SHORT_TG}[physics]\nviscosity = -0.1\n"),
    );
    let out = semk(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        text(&out.stderr).contains("physics.viscosity"),
        "{}",
        text(&out.stderr)
    );
}

#[test]
fn parse_errors_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SHORT_TG}[mesh\n"));
    let out = semk(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        text(&out.stderr).contains("line 9"),
        "{}",
        text(&out.stderr)
    );
}

#[test]
fn usage_and_io_exit_codes() {
    assert_eq!(semk(&["run"]).status.code(), Some(1));
    assert_eq!(semk(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        semk(&["run", "--config", "/nonexistent/run.cfg"])
            .status
            .code(),
        Some(4)
    );
    assert_eq!(semk(&["--help"]).status.code(), Some(0));
}

#[test]
fn zero_cadence_writes_no_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SHORT_TG}[output]\nsnapshot_every = 0\nprobes = 1, 1\n"),
    );
    let out = semk(&["run", "--config", &cfg]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let names: Vec<String> = std::fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(!names.iter().any(|n| n.ends_with(".semk")), "{names:?}");
    assert!(names.contains(&"probes.csv".to_string()));
    let probes = std::fs::read_to_string(dir.path().join("out/probes.csv")).unwrap();
    assert_eq!(probes.lines().next(), Some("time,u,v,p"));
    assert_eq!(probes.lines().count(), 7);
}

#[test]
fn taylor_green_reports_analytic_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT_TG);
    let out = semk(&["run", "--config", &cfg]);
    assert!(out.status.success());
    let line = text(&out.stdout)
        .lines()
        .find(|l| l.starts_with("max velocity error"))
        .map(str::to_string)
        .unwrap();
    let err: f64 = line.rsplit(": ").next().unwrap().parse().unwrap();
    assert!(err < 1e-4, "{line}");
    let summary = std::fs::read_to_string(dir.path().join("out/summary.txt")).unwrap();
    assert!(summary.contains("wall time") && summary.contains(&line));
}

#[test]
fn snapshot_round_trip_is_bitwise() {
    let space = wave_space();
    let fields: Vec<Field> = (0..3)
        .map(|k| space.interpolate(|p| (p[0] * (k + 1) as f64).sin() / 3.0 + 1e-300 * p[1]))
        .collect();
    let header = SnapshotHeader::for_space(&space, 3, 0.1 + 0.2, 42);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.semk");
    snapshot::write(&path, &header, &fields).unwrap();
    let back = snapshot::read(&path).unwrap();
    assert_eq!(back.header, header);
    for (a, b) in fields.iter().zip(&back.fields) {
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"SEMK");
    assert!(snapshot::decode(&path, &bytes[..bytes.len() - 8]).is_err());
    let mut extra = bytes.clone();
    extra.extend_from_slice(&[0; 8]);
    assert!(snapshot::decode(&path, &extra).is_err());
    let mut wrong = bytes;
    wrong[0] = b'X';
    assert!(snapshot::decode(&path, &wrong).is_err());
}

#[test]
fn traveling_wave_files_report_the_first_pair() {
    let space = wave_space();
    let dir = tempfile::tempdir().unwrap();
    write_snapshots(dir.path(), &space, &traveling_wave(&space, 2.0, 24));
    let out_dir = dir.path().join("pod");
    let glob = format!("{}/s_*.semk", dir.path().display());
    let out = semk(&[
        "pod",
        "--snapshots",
        &glob,
        "--modes",
        "2",
        "--out",
        &out_dir.display().to_string(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(
        text(&out.stdout).contains("pair: (1,2)"),
        "{}",
        text(&out.stdout)
    );
    for f in [
        "eigenvalues.csv",
        "coefficients.csv",
        "pairs.txt",
        "mode_001.semk",
        "mode_002.semk",
    ] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let mode = snapshot::read(&out_dir.join("mode_001.semk")).unwrap();
    let norm: f64 = mode.fields.iter().map(|c| space.inner(c, c)).sum();
    assert!((norm - 1.0).abs() < 1e-12);
}

#[test]
fn identical_snapshots_are_rank_one() {
    let space = wave_space();
    let u = vec![
        space.interpolate(|p| p[0].sin() + p[1]),
        space.interpolate(|p| p[0] * p[1]),
    ];
    let dir = tempfile::tempdir().unwrap();
    write_snapshots(dir.path(), &space, &[u.clone(), u]);
    let glob = format!("{}/s_*.semk", dir.path().display());
    let out = semk(&[
        "pod",
        "--snapshots",
        &glob,
        "--out",
        &dir.path().join("pod").display().to_string(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let ratio: f64 = text(&out.stdout)
        .lines()
        .find_map(|l| l.strip_prefix("lambda2/lambda1: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(ratio <= 1e-12, "{ratio}");
}

#[test]
fn full_domain_clip_matches_no_clip() {
    let space = wave_space();
    let dir = tempfile::tempdir().unwrap();
    write_snapshots(dir.path(), &space, &traveling_wave(&space, 1.0, 8));
    let glob = format!("{}/s_*.semk", dir.path().display());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(semk(&[
        "pod",
        "--snapshots",
        &glob,
        "--out",
        &a.display().to_string()
    ])
    .status
    .success());
    let clip = format!("box:0,{},0,1", 2.0 * PI);
    assert!(semk(&[
        "pod",
        "--snapshots",
        &glob,
        "--clip",
        &clip,
        "--out",
        &b.display().to_string()
    ])
    .status
    .success());
    assert_eq!(
        std::fs::read(a.join("eigenvalues.csv")).unwrap(),
        std::fs::read(b.join("eigenvalues.csv")).unwrap()
    );
}

#[test]
fn pod_rejects_bad_inputs() {
    let space = wave_space();
    let dir = tempfile::tempdir().unwrap();
    write_snapshots(dir.path(), &space, &traveling_wave(&space, 1.0, 1));
    let glob = format!("{}/s_*.semk", dir.path().display());
    assert_eq!(semk(&["pod", "--snapshots", &glob]).status.code(), Some(1));

    // a second file on a different mesh
    let other = Space::new(
        BoxMesh::new(2, &[2, 1], &[[0.0, 1.0]; 2]).build().unwrap(),
        Basis1D::new(6).unwrap(),
    )
    .unwrap();
    let h = SnapshotHeader::for_space(&other, 2, 1.0, 1);
    snapshot::write(
        &dir.path().join("s_001.semk"),
        &h,
        &[other.zeros(), other.zeros()],
    )
    .unwrap();
    let out = semk(&[
        "pod",
        "--snapshots",
        &glob,
        "--out",
        &dir.path().join("pod").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", text(&out.stderr));
    std::fs::write(dir.path().join("s_001.semk"), b"garbage").unwrap();
    assert_eq!(semk(&["pod", "--snapshots", &glob]).status.code(), Some(4));
}

#[test]
fn stats_driver_examples() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("series.csv");
    let mut s = String::from("time,v,c\n");
    for t in 0..400 {
        s.push_str(&format!(
            "{t},{},{}\n",
            (2.0 * PI * t as f64 / 20.0).cos(),
            3.0
        ));
    }
    std::fs::write(&path, s).unwrap();
    let p = path.display().to_string();
    let out_dir = dir.path().join("st").display().to_string();
    let out = semk(&[
        "stats",
        &p,
        "--column",
        "v",
        "--max-lag",
        "10",
        "--out",
        &out_dir,
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let acf = std::fs::read_to_string(dir.path().join("st/autocorrelation_v.csv")).unwrap();
    let rows: Vec<f64> = acf
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rows.len(), 11);
    assert!((rows[10] + 1.0).abs() < 2.0 / 400.0);
    assert!(text(&out.stdout).contains("kurtosis"));
    assert_eq!(
        semk(&["stats", &p, "--column", "w", "--max-lag", "3"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        semk(&[
            "stats",
            &p,
            "--column",
            "c",
            "--max-lag",
            "3",
            "--out",
            &out_dir
        ])
        .status
        .code(),
        Some(3)
    );
}

#[test]
fn convergence_examples() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("c").display().to_string();
    let out = semk(&[
        "convergence",
        "--case",
        "diffusion",
        "--sweep",
        "N=6",
        "--out",
        &out_dir,
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("c/convergence.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(text(&out.stdout).contains("no fit"));

    let out = semk(&[
        "convergence",
        "--case",
        "diffusion",
        "--sweep",
        "N=4:2:8",
        "--out",
        &out_dir,
    ]);
    assert!(out.status.success());
    assert!(text(&out.stdout).contains("decay rate"));

    let cfg = write_config(
        dir.path(),
        "case = taylor_green\n[mesh]\nelements = 4, 4\n[discretization]\norder = 10\n[time]\ndt = 0.05\nend_time = 1\n\
         prime = true\n[physics]\nviscosity = 0.2\n[solver]\nvelocity_tol = 1e-12\npressure_tol = 1e-11\n",
    );
    let out = semk(&[
        "convergence",
        "--config",
        &cfg,
        "--sweep",
        "dt=0.1/2^1..3",
        "--out",
        &out_dir,
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let order: f64 = text(&out.stdout)
        .lines()
        .find_map(|l| l.strip_prefix("fitted temporal order: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((2.5..=3.5).contains(&order), "{order}");

    assert_eq!(
        semk(&["convergence", "--case", "channel", "--sweep", "N=4"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        semk(&["convergence", "--case", "diffusion", "--sweep", "dt=0.1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        semk(&["convergence", "--case", "diffusion", "--sweep", "M=3"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cfg") {
            sem_cli::config::RunConfig::load(&path)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 4);
}
