use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sem_core::pod::*;
use sem_core::*;

fn wave_space() -> Space {
    let mesh = BoxMesh::new(2, &[4, 1], &[[0.0, 2.0 * PI], [0.0, 1.0]])
        .periodic(0, true)
        .periodic(1, true)
        .build()
        .unwrap();
    Space::new(mesh, Basis1D::new(8).unwrap()).unwrap()
}

fn small_space() -> Space {
    let mesh = BoxMesh::new(2, &[2, 2], &[[0.0, 1.0]; 2]).build().unwrap();
    Space::new(mesh, Basis1D::new(4).unwrap()).unwrap()
}

fn energy(space: &Space, u: &[Field]) -> f64 {
    u.iter().map(|c| space.inner(c, c)).sum()
}

/// Characteristic polynomial coefficients `c` with
/// `det(x I - A) = sum_k c[k] x^(n-k)`, by the Faddeev-LeVerrier recursion.
fn char_poly(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut c = vec![1.0];
    let mut m = Matrix::zeros(n, n);
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{k-1} I
        let mut next = a.matmul(&m);
        for i in 0..n {
            next[(i, i)] += c[k - 1];
        }
        m = next;
        let am = a.matmul(&m);
        let tr: f64 = (0..n).map(|i| am[(i, i)]).sum();
        c.push(-tr / k as f64);
    }
    c
}

fn roots_by_bisection(c: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let p = |x: f64| c.iter().fold(0.0, |acc, v| acc * x + v);
    let samples = 20000;
    let mut roots = Vec::new();
    let mut prev = lo;
    for s in 1..=samples {
        let x = lo + (hi - lo) * s as f64 / samples as f64;
        if p(prev) == 0.0 {
            roots.push(prev);
        } else if p(prev).signum() != p(x).signum() && p(x) != 0.0 {
            let (mut a, mut b) = (prev, x);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if p(a).signum() == p(mid).signum() {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev = x;
    }
    roots.sort_by(|a, b| b.total_cmp(a));
    roots
}

#[test]
fn identical_snapshots_are_rank_one() {
    let space = small_space();
    let u = vec![
        space.interpolate(|p| p[0] + p[1] * p[1]),
        space.interpolate(|p| p[0] * p[1]),
    ];
    let set = SnapshotSet::new(&space, vec![u.clone(); 4], 0.1).unwrap();
    let c = build_covariance(&space, &set, None).unwrap();
    let e = energy(&space, &u);
    for i in 0..4 {
        for j in 0..4 {
            assert!((c[(i, j)] - e / 4.0).abs() < 1e-14);
        }
    }
    let res = pod(&space, &set, None, 2).unwrap();
    assert!((res.eigenvalues[0] - e).abs() < 1e-12 * e);
    assert!(res.eigenvalues[1].abs() <= 1e-12 * e);
    assert_eq!(res.modes.len(), 1);
    let norm = e.sqrt();
    for d in 0..2 {
        for (m, v) in res.modes[0][d].iter().zip(u[d].iter()) {
            assert!((m - v / norm).abs() < 1e-10);
        }
    }
}

#[test]
fn single_snapshot_covariance() {
    let space = small_space();
    let u = vec![
        space.interpolate(|p| p[0]),
        space.interpolate(|p| 1.0 - p[1]),
    ];
    let set = SnapshotSet::new(&space, vec![u.clone()], 1.0).unwrap();
    let c = build_covariance(&space, &set, None).unwrap();
    assert!((c[(0, 0)] - energy(&space, &u)).abs() < 1e-15);
}

#[test]
fn full_clip_reproduces_unclipped_covariance() {
    let space = small_space();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let snaps: Vec<Vec<Field>> = (0..5)
        .map(|_| {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            vec![
                space.interpolate(|p| (a * p[0]).sin() + b),
                space.interpolate(|p| a * p[1] - b * p[0]),
            ]
        })
        .collect();
    let set = SnapshotSet::new(&space, snaps, 0.1).unwrap();
    let plain = build_covariance(&space, &set, None).unwrap();
    let full = ClipRegion::from_boxes(&space, &[ClipBox::parse("0,1,0,1", 2).unwrap()]).unwrap();
    let clipped = build_covariance(&space, &set, Some(&full)).unwrap();
    assert_eq!(plain.as_slice(), clipped.as_slice());
    assert_eq!(plain.as_slice(), plain.transpose().as_slice());
}

#[test]
fn clipped_modes_vanish_outside_region() {
    let space = wave_space();
    let set = SnapshotSet::new(&space, traveling_wave(&space, 2.0, 16), 0.1).unwrap();
    let clip = ClipRegion::from_boxes(&space, &[ClipBox::parse("0,3,0,1", 2).unwrap()]).unwrap();
    let res = pod(&space, &set, Some(&clip), 2).unwrap();
    for mode in &res.modes {
        for c in mode {
            for (v, m) in c.iter().zip(clip.mask()) {
                if *m == 0.0 {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }
    // trace identity inside the clip region
    let clipped_energy: f64 = set
        .snapshots()
        .iter()
        .map(|s| {
            s.iter()
                .map(|c| {
                    let l: Vec<f64> = c.iter().zip(clip.mask()).map(|(a, m)| a * m).collect();
                    space.inner(&l, &l)
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        / set.len() as f64;
    let trace: f64 = res.eigenvalues.iter().sum();
    assert!((trace - clipped_energy).abs() < 1e-8 * clipped_energy);
}

#[test]
fn clip_masks_are_validated() {
    let space = small_space();
    assert!(ClipRegion::from_mask(&space, vec![0.5; space.len()]).is_err());
    assert!(ClipRegion::from_mask(&space, vec![0.0; space.len()]).is_err());
    assert!(ClipBox::parse("0,1,0", 2).is_err());
    assert!(ClipBox::parse("1,0,0,1", 2).is_err());
    assert!(ClipRegion::from_boxes(&space, &[ClipBox::parse("5,6,5,6", 2).unwrap()]).is_err());
}

#[test]
fn traveling_wave_gives_a_mode_pair() {
    let space = wave_space();
    let mut set = SnapshotSet::new(&space, traveling_wave(&space, 2.0, 64), 0.1).unwrap();
    set.remove_mean();
    let res = pod(&space, &set, None, 2).unwrap();
    let l = &res.eigenvalues;
    assert!((l[0] - l[1]).abs() <= 0.01 * l[0]);
    assert!(l[2] <= 1e-6 * l[0]);
    assert_eq!(detect_mode_pairs(l, 0.05), vec![(0, 1)]);
    let cos = space.interpolate(|p| (2.0 * p[0]).cos());
    let sin = space.interpolate(|p| (2.0 * p[0]).sin());
    let (nc, ns) = (space.norm(&cos), space.norm(&sin));
    for mode in &res.modes {
        let a = space.inner(&mode[0], &cos) / nc;
        let b = space.inner(&mode[0], &sin) / ns;
        assert!((a * a + b * b).sqrt() >= 0.999);
    }
    let cross: f64 = (0..2)
        .map(|d| space.inner(&res.modes[0][d], &res.modes[1][d]))
        .sum();
    assert!(cross.abs() <= 1e-8);
}

#[test]
fn third_eigenvalue_small_from_sixteen_snapshots() {
    let space = wave_space();
    for m in [16, 32] {
        let set = SnapshotSet::new(&space, traveling_wave(&space, 1.0, m), 0.1).unwrap();
        let c = build_covariance(&space, &set, None).unwrap();
        let e = solve_eigen(&c).unwrap();
        assert!(e.values[2] <= 1e-6 * e.values[0]);
    }
}

#[test]
fn mean_removal_leaves_zero_mean() {
    let space = small_space();
    let snaps: Vec<Vec<Field>> = (0..6)
        .map(|m| {
            let t = m as f64;
            vec![
                space.interpolate(|p| 2.0 + (p[0] + t).sin()),
                space.interpolate(|p| p[1] * t),
            ]
        })
        .collect();
    let mut set = SnapshotSet::new(&space, snaps, 0.5).unwrap();
    set.remove_mean();
    assert!(set.mean_removed());
    let mean = set.mean();
    assert!(energy(&space, &mean).sqrt() <= 1e-10);
}

#[test]
fn mismatched_snapshots_are_rejected() {
    let space = small_space();
    let good = vec![space.zeros(), space.zeros()];
    let short = vec![Field::from_vec(vec![0.0; 3]), space.zeros()];
    assert!(matches!(
        SnapshotSet::new(&space, vec![good.clone(), short], 1.0),
        Err(SemError::SnapshotMismatch(_))
    ));
    assert!(SnapshotSet::new(&space, vec![vec![space.zeros()]], 1.0).is_err());
}

#[test]
fn eigen_small_examples() {
    let e = solve_eigen(&Matrix::identity(3)).unwrap();
    assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
    let d = Matrix::from_fn(2, 2, |i, j| if i == j { [3.0, 1.0][i] } else { 0.0 });
    let e = solve_eigen(&d).unwrap();
    assert_eq!(e.values, vec![3.0, 1.0]);
    assert_eq!(e.vectors[(0, 0)].abs(), 1.0);
    assert_eq!(e.vectors[(1, 1)].abs(), 1.0);
}

#[test]
fn eigen_rejects_nonsymmetric() {
    let a = Matrix::from_fn(2, 2, |i, j| if i == 0 && j == 1 { 1.0 } else { 0.5 });
    assert!(matches!(solve_eigen(&a), Err(SemError::NonSymmetric(_))));
}

fn random_symmetric(n: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = rng.random_range(-1.0..1.0);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

#[test]
fn random_symmetric_reconstruction() {
    let a = random_symmetric(6, 42);
    let e = solve_eigen(&a).unwrap();
    let n = 6;
    let rebuilt = Matrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|k| e.vectors[(i, k)] * e.values[k] * e.vectors[(j, k)])
            .sum()
    });
    assert!(rebuilt.max_abs_diff(&a) < 1e-10);
    let vtv = e.vectors.transpose().matmul(&e.vectors);
    assert!(vtv.max_abs_diff(&Matrix::identity(n)) < 1e-12);
    assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn eigenvalues_match_characteristic_polynomial_roots() {
    for (n, seed) in [(2, 1), (3, 2), (3, 3), (4, 4)] {
        let a = random_symmetric(n, seed);
        let e = solve_eigen(&a).unwrap();
        let roots = roots_by_bisection(&char_poly(&a), -10.0, 10.0);
        assert_eq!(roots.len(), n);
        for (x, r) in e.values.iter().zip(&roots) {
            assert!((x - r).abs() < 1e-10, "{x} vs {r}");
        }
    }
}

#[test]
fn snapshot_covariance_matches_oracle() {
    // four snapshots on a single bilinear element (four nodes)
    let mesh = BoxMesh::new(2, &[1, 1], &[[0.0, 1.0]; 2]).build().unwrap();
    let space = Space::new(mesh, Basis1D::new(1).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let snaps: Vec<Vec<Field>> = (0..4)
        .map(|_| {
            (0..2)
                .map(|_| {
                    Field::from_vec(
                        (0..space.len())
                            .map(|_| rng.random_range(-1.0..1.0))
                            .collect(),
                    )
                })
                .collect()
        })
        .collect();
    let set = SnapshotSet::new(&space, snaps, 1.0).unwrap();
    let c = build_covariance(&space, &set, None).unwrap();
    let e = solve_eigen(&c).unwrap();
    let bound = c.as_slice().iter().map(|v| v.abs()).sum::<f64>() + 1.0;
    let roots = roots_by_bisection(&char_poly(&c), -bound, bound);
    for (x, r) in e.values.iter().zip(&roots) {
        assert!((x - r).abs() < 1e-10);
    }
}

#[test]
fn pair_detection_examples() {
    assert_eq!(detect_mode_pairs(&[2.0, 2.0, 0.5], 0.05), vec![(0, 1)]);
    assert!(detect_mode_pairs(&[4.0, 2.0, 1.0], 0.05).is_empty());
    let eps = 0.005;
    let l = [1.0 + eps, 1.0 - eps, 0.1, 0.01, 1e-3];
    assert_eq!(detect_mode_pairs(&l, 0.01), vec![(0, 1)]);
    // tail below the floor is never paired
    assert!(detect_mode_pairs(&[1.0, 1e-12, 1e-12], 0.05).is_empty());
}

#[test]
fn autocorrelation_examples() {
    let n = 10_000;
    let p = 37.0;
    let x: Vec<f64> = (0..n).map(|t| (2.0 * PI * t as f64 / p).cos()).collect();
    let rho = autocorrelation(&x, 100).unwrap();
    assert_eq!(rho[0], 1.0);
    for (tau, r) in rho.iter().enumerate() {
        assert!((r - (2.0 * PI * tau as f64 / p).cos()).abs() <= 2.0 / n as f64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let rho = autocorrelation(&noise, 50).unwrap();
    assert!(rho[1..].iter().all(|r| r.abs() <= 0.05));
    assert!(matches!(
        autocorrelation(&[0.1; 100], 5),
        Err(SemError::ZeroVariance(_))
    ));
    assert!(autocorrelation(&x[..5], 5).is_err());
}

#[test]
fn moment_examples() {
    let m = moments(&[-1.0, 1.0]).unwrap();
    assert_eq!(
        (m.mean, m.rms, m.skewness, m.kurtosis),
        (0.0, 1.0, 0.0, 1.0)
    );
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let g: Vec<f64> = (0..100_000)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let m = moments(&g).unwrap();
    assert!(m.skewness.abs() <= 0.05);
    assert!((2.9..=3.1).contains(&m.kurtosis));
    assert!(matches!(
        moments(&[3.0; 10]),
        Err(SemError::ZeroVariance(_))
    ));
    assert!(moments(&[1.0]).is_err());
}

proptest! {
    #[test]
    fn moments_shift_invariant(xs in prop::collection::vec(-10.0f64..10.0, 3..60), c in -100.0f64..100.0) {
        prop_assume!(moments(&xs).is_ok());
        let a = moments(&xs).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let b = moments(&shifted).unwrap();
        prop_assert!((b.mean - a.mean - c).abs() < 1e-9);
        prop_assert!((b.rms - a.rms).abs() < 1e-8 * a.rms.max(1.0));
        prop_assert!((b.skewness - a.skewness).abs() < 1e-6);
        prop_assert!((b.kurtosis - a.kurtosis).abs() < 1e-6);
    }

    #[test]
    fn autocorrelation_is_bounded(xs in prop::collection::vec(-5.0f64..5.0, 4..80)) {
        prop_assume!(moments(&xs).is_ok());
        let rho = autocorrelation(&xs, xs.len() - 1).unwrap();
        prop_assert_eq!(rho[0], 1.0);
        prop_assert!(rho.iter().all(|r| r.abs() <= 1.0 + 1e-12));
    }
}
