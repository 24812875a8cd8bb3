use binormal_core::flow::{evolve, evolve_dense, FlowConfig};
use binormal_core::hasimoto::*;
use binormal_core::spectral::{linspace, CoefficientState};
use binormal_core::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn random_state(seed: u64, n: usize, amp: f64) -> CoefficientState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..2 * n + 1).map(|_| c(rng.random_range(-amp..amp), rng.random_range(-amp..amp))).collect();
    CoefficientState::from_coeffs(1.0, v).unwrap()
}

fn residual_at(state: &CoefficientState, tau: f64, d: f64, grid: &[f64], cfg: &FlowConfig) -> f64 {
    let states =
        [evolve(state, tau - d, cfg).unwrap(), evolve(state, tau, cfg).unwrap(), evolve(state, tau + d, cfg).unwrap()];
    nls_residual(&states, grid).unwrap()
}

#[test]
fn nls_residual_vanishes_for_zero_data() {
    let z = CoefficientState::zeros(1.0, 2).unwrap();
    let cfg = FlowConfig::with_tol(1e-12);
    let grid = linspace(-3.0, 3.0, 31);
    assert_eq!(residual_at(&z, 2.0, 0.01, &grid, &cfg), 0.0);
}

#[test]
fn nls_residual_single_mode_second_order() {
    let s = CoefficientState::from_modes(1.0, 0, &[(0, c(0.8, 0.3))]).unwrap();
    let cfg = FlowConfig::with_tol(1e-13);
    let grid = linspace(-2.0, 2.0, 41);
    let r: Vec<f64> = [0.04, 0.02, 0.01].iter().map(|&d| residual_at(&s, 2.0, d, &grid, &cfg)).collect();
    for w in r.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 2.0).abs() < 0.1, "order {order}, residuals {r:?}");
    }
}

#[test]
fn nls_residual_evolved_data_converges() {
    let s = random_state(17, 8, 0.15);
    let cfg = FlowConfig::with_tol(1e-13);
    let grid = linspace(-17.0, 17.0, 341);
    let r: Vec<f64> = [2e-3, 1e-3, 5e-4].iter().map(|&d| residual_at(&s, 3.0, d, &grid, &cfg)).collect();
    for w in r.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order > 1.8, "order {order}, residuals {r:?}");
    }
}

#[test]
fn single_mode_round_trip_through_curve() {
    let s = CoefficientState::from_modes(1.0, 0, &[(0, c(0.6, 0.2))]).unwrap();
    let cfg = FlowConfig::with_tol(1e-13);
    let grid = linspace(-2.0, 2.0, 2001);
    let times = [1.0, 0.5];
    let opts = ReconstructOptions { substep: 0.02, keep_frames: false };
    let fam = reconstruct_from_state(&s, &cfg, &times, &grid, &Anchor::default(), &opts).unwrap();
    let dx = grid[1] - grid[0];
    for (i, &t) in times.iter().enumerate() {
        let psi = filament_from_curve(fam.slice(i), dx).unwrap();
        let state = evolve(&s, 1.0 / t, &cfg).unwrap();
        let field = AnsatzField::filament(&state, t).unwrap();
        let exact: Vec<C64> = grid.iter().map(|&x| field.value(x)).collect();
        let d = phase_aligned_distance(&psi[3..psi.len() - 3], &exact[3..exact.len() - 3]);
        assert!(d < 1e-6, "t = {t}: filament mismatch {d}");
    }
}

#[test]
fn tangent_matches_finite_difference_at_second_order() {
    let s = random_state(2, 2, 0.3);
    let cfg = FlowConfig::with_tol(1e-12);
    let times = [1.0, 0.3];
    let err = |n: usize| {
        let grid = linspace(-5.0, 5.0, n);
        let dx = grid[1] - grid[0];
        let fam = reconstruct_from_state(&s, &cfg, &times, &grid, &Anchor::default(), &Default::default()).unwrap();
        let mut worst = 0.0f64;
        for (pts, tan) in fam.points.iter().zip(&fam.tangents) {
            for m in 1..n - 1 {
                let d = (pts[m + 1] - pts[m - 1]) / (2.0 * dx);
                worst = worst.max((d - tan[m]).norm());
            }
        }
        worst
    };
    let (e1, e2) = (err(201), err(401));
    let order = (e1 / e2).log2();
    assert!(order > 1.8, "order {order} ({e1}, {e2})");
}

#[test]
fn frames_stay_orthonormal_and_unit_speed() {
    let s = random_state(8, 3, 0.25);
    let cfg = FlowConfig::with_tol(1e-12);
    let grid = linspace(-4.0, 4.0, 4097);
    let times = [1.0, 0.5, 0.1, 0.05];
    let fam = reconstruct_from_state(&s, &cfg, &times, &grid, &Anchor::default(), &Default::default()).unwrap();
    assert!(fam.max_orthonormality_defect <= 1e-9, "{}", fam.max_orthonormality_defect);
    assert!(fam.tangent_norm_defect() <= 1e-9);
    assert!(fam.arclength_defect() <= 1e-3, "{}", fam.arclength_defect());
}

// a single mode is the only finite block closed under the cubic interaction,
// so it is the one case where the curves solve the binormal flow exactly
#[test]
fn compatibility_defect_second_order_in_time() {
    let s = CoefficientState::from_modes(1.0, 1, &[(1, c(0.5, 0.1))]).unwrap();
    let cfg = FlowConfig::with_tol(1e-13);
    let grid = linspace(-3.0, 3.0, 601);
    let t0 = 0.5;
    let opts = ReconstructOptions { substep: 0.02, keep_frames: true };
    let defect = |d: f64| {
        let times = [t0 + d, t0, t0 - d];
        let fam = reconstruct_from_state(&s, &cfg, &times, &grid, &Anchor::default(), &opts).unwrap();
        compatibility_defect(fam.frames.as_ref().unwrap()).unwrap()
    };
    let r: Vec<f64> = [0.02, 0.01, 0.005].iter().map(|&d| defect(d)).collect();
    for w in r.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.8, "order {order}, defects {r:?}");
    }
}

#[test]
fn compatibility_defect_trivial_and_rotation_invariant() {
    let grid = linspace(0.0, 1.0, 6);
    let line = |t: f64| FrameField { t, x_nodes: grid.clone(), frames: vec![Frame::identity(); 6] };
    assert!(compatibility_defect(&[line(1.0), line(0.9), line(0.8)]).unwrap() <= 1e-12);

    let s = random_state(5, 1, 0.4);
    let cfg = FlowConfig::with_tol(1e-12);
    let g = linspace(-2.0, 2.0, 81);
    let opts = ReconstructOptions { substep: 0.05, keep_frames: true };
    let fam = reconstruct_from_state(&s, &cfg, &[0.52, 0.5, 0.48], &g, &Anchor::default(), &opts).unwrap();
    let frames = fam.frames.unwrap();
    let rot = *nalgebra::Rotation3::from_euler_angles(0.2, 0.9, -1.4).matrix();
    let rotated: Vec<FrameField> = frames
        .iter()
        .map(|f| FrameField {
            t: f.t,
            x_nodes: f.x_nodes.clone(),
            frames: f.frames.iter().map(|m| m * rot.transpose()).collect(),
        })
        .collect();
    let (a, b) = (compatibility_defect(&frames).unwrap(), compatibility_defect(&rotated).unwrap());
    assert!((a - b).abs() <= 1e-12 * a.max(1.0));
}

#[test]
fn changing_base_point_translates_curve() {
    let s = CoefficientState::from_modes(1.0, 2, &[(1, c(0.3, -0.4))]).unwrap();
    let cfg = FlowConfig::with_tol(1e-12);
    let grid = linspace(-6.0, 6.0, 241);
    let times = [1.0, 0.4, 0.1];
    let a0 = Anchor::default();
    let f0 = reconstruct_from_state(&s, &cfg, &times, &grid, &a0, &Default::default()).unwrap();
    // move the base point to y0 = 1.5 with the frame and point the first curve has there at t0
    let m = grid.iter().position(|&x| (x - 1.5).abs() < 1e-12).unwrap();
    let fam_frames = reconstruct_from_state(
        &s,
        &cfg,
        &[1.0],
        &grid,
        &a0,
        &ReconstructOptions { keep_frames: true, ..Default::default() },
    )
    .unwrap();
    let fr = fam_frames.frames.unwrap()[0].frames[m];
    let mut a1 = Anchor { x0: 1.5, ..Anchor::default() };
    for i in 0..3 {
        for j in 0..3 {
            a1.basis[i][j] = fr[(i, j)];
        }
    }
    let f1 = reconstruct_from_state(&s, &cfg, &times, &grid, &a1, &Default::default()).unwrap();
    for i in 0..times.len() {
        let shift = f0.points[i][0] - f1.points[i][0];
        for (p, q) in f0.points[i].iter().zip(&f1.points[i]) {
            assert!((p - q - shift).norm() < 1e-6, "slice {i}");
        }
    }
}

#[test]
fn truncation_defect_scales_cubically_with_amplitude() {
    let s = random_state(21, 1, 0.4);
    let cfg = FlowConfig::with_tol(1e-13);
    let grid = linspace(-3.0, 3.0, 601);
    let opts = ReconstructOptions { substep: 0.02, keep_frames: true };
    let defect = |st: &CoefficientState| {
        let fam = reconstruct_from_state(st, &cfg, &[0.505, 0.5, 0.495], &grid, &Anchor::default(), &opts).unwrap();
        compatibility_defect(fam.frames.as_ref().unwrap()).unwrap()
    };
    let (d1, d2) = (defect(&s), defect(&s.scaled(c(0.5, 0.0))));
    let order = (d1 / d2).log2();
    assert!(order > 2.5, "order {order} ({d1}, {d2})");
}

#[test]
fn reconstruct_rejects_ladder_outside_record() {
    let s = random_state(1, 1, 0.2);
    let cfg = FlowConfig::with_tol(1e-10);
    let rec = evolve_dense(&s, &[1.0, 2.0, 4.0], &cfg).unwrap();
    let grid = linspace(-1.0, 1.0, 11);
    assert!(reconstruct_curve(&rec, &cfg, &[1.0, 0.5], &grid, &Anchor::default(), &Default::default()).is_ok());
    assert!(reconstruct_curve(&rec, &cfg, &[1.0, 0.1], &grid, &Anchor::default(), &Default::default()).is_err());
}
