use nalgebra::DMatrix;
use rayon::prelude::*;

use hive_core::factor::ProjectionEstimate;
use hive_core::group_lasso::{fit_group_lasso, GramProblem, GroupLassoOptions};
use hive_core::pipeline::{
    cv_tune_lambda3, cv_tune_stage1, default_lambda1_grid, default_lambda2_grid, fit_hive,
    sequential_tune, HiveOptions, KChoice, Lambda3Tuning, Stage1Tuning, DEFAULT_C0,
};
use hive_core::rng::rng_from_seed;
use hive_core::sim::baselines::oracle_projection;
use hive_core::sim::{design_for_config, generate_dataset, generate_response, SimConfig};
use hive_core::stage1::Stage1Options;

fn best_error(record: &hive_core::pipeline::TuningRecord) -> f64 {
    record
        .points
        .iter()
        .map(|p| p.mean_error)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn sequential_tuning_is_close_to_grid_search() {
    let cfg = SimConfig::default();
    let (data, _) = generate_dataset(&cfg, &mut rng_from_seed(11)).unwrap();
    let opts = Stage1Options::default();
    let grid2 = default_lambda2_grid(&data.x).unwrap();
    let grid1 = default_lambda1_grid(&data.x, &data.y, &grid2, opts.rank_tol).unwrap();
    let grid = cv_tune_stage1(&data.x, &data.y, &grid1, &grid2, 10, 3, &opts).unwrap();
    let seq = sequential_tune(&data.x, &data.y, &grid2, DEFAULT_C0, 10, 3, &opts).unwrap();
    let (g, s) = (best_error(&grid), best_error(&seq));
    assert!(s <= 1.05 * g, "sequential {s} vs grid {g}");
}

#[test]
fn lambda3_null_threshold_is_not_selected_with_strong_rows() {
    let cfg = SimConfig {
        n: 120,
        ..SimConfig::default()
    };
    let (data, truth) = generate_dataset(&cfg, &mut rng_from_seed(12)).unwrap();
    let proj = oracle_projection(&truth.b_mat).unwrap();
    let target = proj.project_out(&data.y).unwrap();
    let top = GramProblem::new(&data.x, &target).unwrap().lambda_max();
    let grid = vec![top, 0.3 * top, 0.1 * top, 0.01 * top];
    let rec = cv_tune_lambda3(
        &data.x,
        &data.y,
        &proj,
        &grid,
        5,
        1,
        &GroupLassoOptions::default(),
    )
    .unwrap();
    assert!(rec.lambda3.unwrap() < top);
}

#[test]
fn noiseless_without_confounding_gives_projected_theta() {
    let cfg = SimConfig {
        eta: 0.0,
        n: 200,
        ..SimConfig::default()
    };
    let design = design_for_config(&cfg).unwrap();
    let theta = &design.truth.theta;
    let y = &design.x * theta;
    let opts = HiveOptions {
        k: KChoice::Fixed(1),
        stage1_tuning: Stage1Tuning::Fixed {
            lambda1: 0.05,
            lambda2: 0.1,
        },
        lambda3_tuning: Lambda3Tuning::Fixed(1e-8),
        standardize: false,
        ..HiveOptions::default()
    };
    let fit = fit_hive(&design.x, &y, &opts).unwrap();
    let expected = theta - theta * fit.projection.projector();
    assert!((&fit.theta.theta - &expected).norm() < 1e-6 * theta.norm());
    let gl = fit_group_lasso(&design.x, &y, 1e-8, &GroupLassoOptions::default(), None).unwrap();
    assert!((&gl.coef - theta).norm() < 1e-6 * theta.norm());
}

struct Distances {
    to_projected: f64,
    to_truth: f64,
}

fn overfactored_distances(n: usize, r: usize, replicates: u64) -> Distances {
    let cfg = SimConfig {
        n,
        seed: 21,
        ..SimConfig::default()
    };
    let design = design_for_config(&cfg).unwrap();
    let opts = HiveOptions {
        k: KChoice::Fixed(r),
        stage1_tuning: Stage1Tuning::Fixed {
            lambda1: 0.2,
            lambda2: 0.1,
        },
        lambda3_tuning: Lambda3Tuning::Fixed(0.02),
        standardize: false,
        ..HiveOptions::default()
    };
    let theta = &design.truth.theta;
    let rows: Vec<(f64, f64)> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let y = generate_response(&design, &cfg, &mut rng_from_seed(rep));
            let fit = fit_hive(&design.x, &y, &opts).unwrap();
            let projected = theta - theta * fit.projection.projector();
            (
                (&fit.theta.theta - projected).norm(),
                (&fit.theta.theta - theta).norm(),
            )
        })
        .collect();
    let k = replicates as f64;
    Distances {
        to_projected: rows.iter().map(|r| r.0).sum::<f64>() / k,
        to_truth: rows.iter().map(|r| r.1).sum::<f64>() / k,
    }
}

#[test]
fn overestimated_k_targets_the_projected_coefficients() {
    let small = overfactored_distances(200, 5, 20);
    let large = overfactored_distances(2000, 5, 20);
    for d in [&small, &large] {
        assert!(
            d.to_projected < d.to_truth,
            "{} vs {}",
            d.to_projected,
            d.to_truth
        );
    }
    assert!(large.to_projected < small.to_projected);
    // the gap to the truth does not vanish with more data
    assert!(large.to_truth > 2.0 * large.to_projected);
}

#[test]
fn correct_k_recovers_theta_itself() {
    let cfg = SimConfig {
        n: 2000,
        seed: 21,
        ..SimConfig::default()
    };
    let design = design_for_config(&cfg).unwrap();
    let y = generate_response(&design, &cfg, &mut rng_from_seed(0));
    let opts = HiveOptions {
        k: KChoice::Fixed(3),
        stage1_tuning: Stage1Tuning::Fixed {
            lambda1: 0.2,
            lambda2: 0.1,
        },
        lambda3_tuning: Lambda3Tuning::Fixed(0.02),
        standardize: false,
        ..HiveOptions::default()
    };
    let fit = fit_hive(&design.x, &y, &opts).unwrap();
    let theta = &design.truth.theta;
    assert!((&fit.theta.theta - theta).norm() < 0.1 * theta.norm());
}

#[test]
fn projected_response_is_idempotent() {
    let mut rng = rng_from_seed(14);
    let y = DMatrix::from_fn(30, 8, |_, _| rand::Rng::random::<f64>(&mut rng) - 0.5);
    let basis = DMatrix::from_fn(8, 3, |_, _| rand::Rng::random::<f64>(&mut rng))
        .qr()
        .q();
    let proj = ProjectionEstimate::from_basis(basis, hive_core::factor::ProjectionMethod::Pca);
    let once = proj.project_out(&y).unwrap();
    let twice = proj.project_out(&once).unwrap();
    assert!((once - twice).amax() < 1e-9);
}
