use mollivi_core::estimators::EstimatorSettings;
use mollivi_core::optimizer::{run, step};
use mollivi_core::target::{build_random_target, TargetSpec};
use mollivi_core::theory::{check_descent, run_with_descent_step};
use mollivi_core::{KernelParams, ParticleState, RunConfig, TargetModel};

#[test]
fn step_contracts_towards_gaussian_mode() {
    // For one particle the entropy term averages to zero, so the expected
    // gradient is x itself.
    let t = TargetModel::standard_gaussian(2).unwrap();
    let kp = KernelParams::new(0.5, 2).unwrap();
    let ps = ParticleState::from_rows(&[vec![3.0, -2.0]], kp).unwrap();
    let gamma = 0.1;
    let next = step(&ps, &t, gamma, &EstimatorSettings::new(200_000, 9)).unwrap();
    for (x, y) in ps.positions().iter().zip(next.positions()) {
        let want = x * (1.0 - gamma);
        assert!((y - want).abs() < 5e-3, "{y} vs {want}");
    }
    assert_eq!(next.iteration(), 1);
}

#[test]
fn objective_decreases_on_random_target() {
    let t = build_random_target(&TargetSpec {
        num_components: 20,
        sigma: 5.0,
        epsilon0: 1.0,
        dim: 2,
        seed: 11,
    })
    .unwrap();
    let cfg = RunConfig {
        n_particles: 5,
        iterations: 150,
        b_diag: 400,
        record_every: 50,
        seed: 4,
        ..RunConfig::default()
    };
    let out = run(&cfg, &t).unwrap();
    let first = out.records.first().unwrap();
    let last = out.records.last().unwrap();
    assert!(last.objective + 3.0 * last.objective_se < first.objective);
    assert!(last.second_moment < first.second_moment);
}

#[test]
fn descent_inequality_holds_with_half_inverse_constant() {
    let t = build_random_target(&TargetSpec {
        num_components: 100,
        sigma: 5.0,
        epsilon0: 1.0,
        dim: 1,
        seed: 21,
    })
    .unwrap();
    let cfg = RunConfig {
        n_particles: 5,
        iterations: 60,
        seed: 8,
        ..RunConfig::default()
    };
    let dr = run_with_descent_step(&cfg, &t, 0.5, 5).unwrap();
    let rep = check_descent(&dr.output.records, &dr.constant, dr.gamma).unwrap();
    assert!(rep.pass_fraction >= 0.95, "{}", rep.pass_fraction);
    assert!((dr.gamma * dr.constant.m - 0.5).abs() < 1e-12);
}
