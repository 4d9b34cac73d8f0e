mod common;

use mollivi_core::kernel::{mixture_log_density, mixture_score, GaussianMixture, KernelParams};
use mollivi_core::target::{TargetModel};
use proptest::prelude::*;

fn mixture(atoms: &[Vec<f64>], eps: f64) -> GaussianMixture {
    GaussianMixture::new(atoms, KernelParams::new(eps, atoms[0].len()).unwrap()).unwrap()
}

fn fd_gradient(f: impl Fn(&[f64]) -> f64, y: &[f64]) -> Vec<f64> {
    let mut z = y.to_vec();
    (0..y.len())
        .map(|k| {
            let h = 1e-5 * (1.0 + y[k].abs());
            z[k] = y[k] + h;
            let up = f(&z);
            z[k] = y[k] - h;
            let dn = f(&z);
            z[k] = y[k];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

fn close(a: &[f64], b: &[f64], rel: f64) -> bool {
    let scale = b.iter().map(|v| v.abs()).fold(1.0, f64::max);
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= rel * scale)
}

fn atoms_strategy(d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, d), 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn score_matches_finite_differences(
        atoms in atoms_strategy(2),
        y in prop::collection::vec(-6.0..6.0f64, 2),
        eps in 0.5..2.0f64,
    ) {
        let gm = mixture(&atoms, eps);
        let s = mixture_score(&gm, &y).unwrap();
        let fd = fd_gradient(|z| mixture_log_density(&gm, z).unwrap(), &y);
        prop_assert!(close(&s, &fd, 1e-6), "{s:?} vs {fd:?}");
    }

    #[test]
    fn grad_potential_matches_finite_differences(
        atoms in atoms_strategy(3),
        y in prop::collection::vec(-6.0..6.0f64, 3),
        eps in 0.5..2.0f64,
    ) {
        let t = TargetModel::gaussian_mixture(mixture(&atoms, eps));
        let g = t.grad_potential(&y).unwrap();
        let fd = fd_gradient(|z| t.potential(z).unwrap(), &y);
        prop_assert!(close(&g, &fd, 1e-6), "{g:?} vs {fd:?}");
    }

    #[test]
    fn translation_equivariance(
        atoms in atoms_strategy(2),
        y in prop::collection::vec(-6.0..6.0f64, 2),
        shift in prop::collection::vec(-50.0..50.0f64, 2),
    ) {
        let gm = mixture(&atoms, 1.0);
        let moved: Vec<Vec<f64>> = atoms.iter().map(|a| vec![a[0] + shift[0], a[1] + shift[1]]).collect();
        let gm2 = mixture(&moved, 1.0);
        let y2 = [y[0] + shift[0], y[1] + shift[1]];
        let (a, b) = (mixture_log_density(&gm, &y).unwrap(), mixture_log_density(&gm2, &y2).unwrap());
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        let (sa, sb) = (mixture_score(&gm, &y).unwrap(), mixture_score(&gm2, &y2).unwrap());
        prop_assert!(close(&sa, &sb, 1e-9));
    }

    #[test]
    fn log_sum_exp_is_stable_for_huge_separations(
        sep in 1.0..1e6f64,
        frac in -1.0..2.0f64,
    ) {
        let gm = mixture(&[vec![0.0], vec![sep]], 1.0);
        let y = [frac * sep];
        let v = mixture_log_density(&gm, &y).unwrap();
        prop_assert!(v.is_finite());
        prop_assert!(mixture_score(&gm, &y).unwrap()[0].is_finite());
    }
}

#[test]
fn far_atom_log_density_matches_high_precision_sum() {
    // log((k(0) + k(100))/2) with k(100) = exp(-5000)·k(0): the exact value
    // is log k(0) - log 2 + log1p(exp(-5000)) = log k(0) - log 2 in f64.
    let gm = mixture(&[vec![0.0], vec![100.0]], 1.0);
    let v = mixture_log_density(&gm, &[0.0]).unwrap();
    let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 2f64.ln();
    assert!((v - expected).abs() < 1e-14);
}

#[test]
fn mixture_density_integrates_to_one() {
    let atoms = [-3.0, 0.2, 4.0];
    let rows: Vec<Vec<f64>> = atoms.iter().map(|a| vec![*a]).collect();
    let gm = mixture(&rows, 0.8);
    let (lo, hi) = common::range(&atoms, 0.8);
    let mass = common::trapezoid(lo, hi, common::NODES, |y| mixture_log_density(&gm, &[y]).unwrap().exp());
    assert!((mass - 1.0).abs() < 1e-3);
    // the target's exp(-V) too, standard Gaussian included
    let t = TargetModel::standard_gaussian(1).unwrap();
    let mass = common::trapezoid(-10.0, 10.0, common::NODES, |y| (-t.potential(&[y]).unwrap()).exp());
    assert!((mass - 1.0).abs() < 1e-9);
}

#[test]
fn density_2d_integrates_to_one() {
    let gm = mixture(&[vec![0.0, 0.0], vec![2.0, -1.0]], 1.0);
    let n = 1 << 9;
    let (lo, hi) = (-9.0, 11.0);
    let h = (hi - lo) / (n - 1) as f64;
    let mut mass = 0.0;
    for i in 0..n {
        for j in 0..n {
            let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let wj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            let y = [lo + i as f64 * h, lo + j as f64 * h];
            mass += wi * wj * mixture_log_density(&gm, &y).unwrap().exp();
        }
    }
    assert!((mass * h * h - 1.0).abs() < 1e-3);
}

/// Operator norm of a symmetric 2x2 (or 1x1) matrix.
fn sym_norm(h: &[f64]) -> f64 {
    if h.len() == 1 {
        return h[0].abs();
    }
    let (a, b, c) = (h[0], 0.5 * (h[1] + h[2]), h[3]);
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (mid + rad).abs().max((mid - rad).abs())
}

fn numerical_hessian(t: &TargetModel, y: &[f64]) -> Vec<f64> {
    let d = y.len();
    let h = 1e-4;
    let mut out = vec![0.0; d * d];
    let mut z = y.to_vec();
    for q in 0..d {
        z[q] = y[q] + h;
        let gp = t.grad_potential(&z).unwrap();
        z[q] = y[q] - h;
        let gm = t.grad_potential(&z).unwrap();
        z[q] = y[q];
        for p in 0..d {
            out[p * d + q] = (gp[p] - gm[p]) / (2.0 * h);
        }
    }
    out
}

#[test]
fn smoothness_bound_dominates_grid_hessian() {
    let configs: Vec<(Vec<Vec<f64>>, f64)> = vec![
        (vec![vec![-2.0], vec![2.0]], 1.0),
        (vec![vec![-4.0], vec![0.5], vec![3.0]], 0.8),
        (vec![vec![0.0, 0.0], vec![3.0, 1.0]], 1.0),
        (vec![vec![-1.0, 2.0], vec![2.0, -2.0], vec![0.0, 3.0]], 1.2),
    ];
    for (atoms, eps) in configs {
        let t = TargetModel::gaussian_mixture(mixture(&atoms, eps));
        let bound = t.smoothness_bound();
        let r = t.mixture().unwrap().atom_radius().max(1.0);
        let d = atoms[0].len();
        let steps = if d == 1 { 2001 } else { 121 };
        let mut worst: f64 = 0.0;
        let grid = |i: usize| -3.0 * r + 6.0 * r * i as f64 / (steps - 1) as f64;
        for i in 0..steps {
            if d == 1 {
                worst = worst.max(sym_norm(&numerical_hessian(&t, &[grid(i)])));
            } else {
                for j in 0..steps {
                    let y = [grid(i), grid(j)];
                    worst = worst.max(sym_norm(&numerical_hessian(&t, &y)));
                }
            }
        }
        assert!(bound >= worst, "bound {bound} < grid max {worst}");
        // analytic Hessian agrees with the numerical one
        let y = vec![0.3; d];
        let an = t.hessian_potential(&y).unwrap();
        assert!(close(&an, &numerical_hessian(&t, &y), 1e-6));
    }
}
