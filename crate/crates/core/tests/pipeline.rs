//! End to end on a tiny case through the public API.

use std::f64::consts::PI;

use proptest::prelude::*;
use tmn_core::datagen::{generate_dataset, random_initial_condition, CaseConfig, CaseKind, DatasetConfig, Split};
use tmn_core::grid::divergence;
use tmn_core::metrics::{evaluate, EvalConfig};
use tmn_core::neural::Activation;
use tmn_core::solver::{PhysicsConfig, Solver};
use tmn_core::tmn::{load_bundle, rollout, save_bundle, Model, TmnConfig, TmnModel};
use tmn_core::training::{train_curriculum, TrainConfig, TrainOptions};
use tmn_core::Grid;

fn tiny_dataset() -> DatasetConfig {
    DatasetConfig {
        case: CaseConfig {
            fine_resolution: 16,
            coarse_resolution: 8,
            n_steps: 12,
            warmup_time: 0.0,
            max_velocity: 1.0,
            peak_wavenumber: 1.5,
            ..CaseConfig::desk(CaseKind::ForcedTurbulence)
        },
        n_trajectories: 4,
        n_train: 2,
        n_validation: 1,
        base_seed: 0,
    }
}

#[test]
fn generate_train_save_load_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(&tiny_dataset(), &dir.path().join("data"), false).unwrap();
    assert_eq!(data.entries(Split::Test).count(), 1);
    let train = data.trajectories(Split::Train).unwrap();
    let val = data.trajectories(Split::Validation).unwrap();
    let test = data.trajectories(Split::Test).unwrap();
    assert!(train.iter().all(|t| t.len() == 13 && t.snapshots[0].grid().nx == 8));

    let cfg = TmnConfig {
        hidden_dim: 2,
        width: 6,
        encoder_layers: 3,
        hidden_activation: Activation::Tanh,
        corrector_final_scale: 1.0,
        ..TmnConfig::default()
    };
    let tcfg = TrainConfig {
        chunk_lengths: vec![4],
        epochs_per_length: 3,
        batch_size: 2,
        lr0: 3e-3,
        ..TrainConfig::default()
    };
    let model = Model::Tmn(TmnModel::init(cfg, 1).unwrap());
    let out = train_curriculum(&tcfg, model, &train, &val, &TrainOptions::default()).unwrap();
    assert!(out.finished);
    assert_eq!(out.log.len(), 3);
    assert!(out.log.iter().all(|r| r.val_loss.is_finite() && r.skipped == 0));

    let bundle = dir.path().join("bundle");
    save_bundle(&out.best, &bundle, 1, "test").unwrap();
    let (loaded, manifest) = load_bundle(&bundle).unwrap();
    assert_eq!(loaded, out.best);
    assert_eq!(manifest.param_count, out.best.param_count());

    let ecfg = EvalConfig::default();
    let report = evaluate("tmn", Some(&loaded), &test, &ecfg).unwrap();
    let again = evaluate("tmn", Some(&out.best), &test, &ecfg).unwrap();
    assert_eq!(report.trajectories[0].correlation, again.trajectories[0].correlation);
    let t = &report.trajectories[0];
    assert_eq!(t.correlation.len(), 13);
    assert_eq!(t.correlation[0], 1.0);
    assert!(report.mean_decorrelation_time <= test[0].duration() + 1e-12);
    assert_eq!(t.hidden_correlation.first().map(|h| h.1.len()), Some(2));
}

#[test]
fn rollouts_are_reproducible() {
    let g = Grid::square(12, 2.0 * PI).unwrap();
    let solver = Solver::new(g, PhysicsConfig::default()).unwrap();
    let cfg = TmnConfig {
        hidden_dim: 3,
        width: 5,
        encoder_layers: 2,
        ..TmnConfig::default()
    };
    let model = Model::Tmn(TmnModel::init(cfg, 9).unwrap());
    let u0 = random_initial_condition(&g, 4, 3.0, 3.0).unwrap();
    assert_eq!(
        rollout(&model, &solver, &u0, 8).unwrap(),
        rollout(&model, &solver, &u0, 8).unwrap()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_is_solenoidal_and_idempotent(n in 4usize..24, seed in 0u64..1000, scale in 0.1f64..20.0) {
        let g = Grid::square(n, 2.0 * PI).unwrap();
        let solver = Solver::new(g, PhysicsConfig::default()).unwrap();
        let u = random_initial_condition(&g, seed, scale, 1.5).unwrap();
        // Add a divergent part so the projection has work to do.
        let noisy = tmn_core::StaggeredField::from_fns(g, |x, y| u_at(x, y, scale), |x, y| u_at(y, x, scale));
        let mixed = tmn_core::StaggeredField::new(g, u.tensor().zip_map(noisy.tensor(), |a, b| a + b)).unwrap();
        let p = solver.project_field(&mixed).unwrap();
        prop_assert!(divergence(&p).max_abs() <= 1e-10 * p.max_abs().max(1.0));
        let pp = solver.project_field(&p).unwrap();
        let diff = pp.tensor().zip_map(p.tensor(), |a, b| (a - b).abs()).max_abs();
        prop_assert!(diff <= 1e-12 * p.max_abs().max(1.0));
    }
}

fn u_at(x: f64, y: f64, s: f64) -> f64 {
    s * (x.sin() + 0.3 * (2.0 * y).cos())
}
