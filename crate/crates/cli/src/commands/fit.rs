use std::time::Instant;

use serde::Serialize;

use hive_core::factor::ProjectionMethod;
use hive_core::pipeline::{
    fit_hhive, fit_hive, HiveFit, HiveOptions, KChoice, KSelectionRecord, Lambda3Tuning,
    StandardizationRecord, TuningRecord,
};
use hive_core::stage1::Stage1Options;

use super::{ensure_dir, load_inputs, options_value, stage1_tuning, write_json};
use crate::args::{FitArgs, KMethod};
use crate::error::{usage, CliError, CliResult};
use crate::io::write_matrix_csv;
use crate::manifest::RunManifest;

#[derive(Serialize)]
struct Stage1Summary {
    lambda1: f64,
    lambda2: f64,
    support: Vec<usize>,
    kkt_violation: f64,
    converged: bool,
    iterations: usize,
    pseudo_inverse: bool,
    degenerate_covariance: bool,
}

#[derive(Serialize)]
struct ThetaSummary {
    lambda3: f64,
    support: Vec<usize>,
    kkt_violation: f64,
    converged: bool,
    iterations: usize,
}

#[derive(Serialize)]
struct ProjectionSummary {
    method: ProjectionMethod,
    k: usize,
    heteropca_iterations: usize,
    eigenvalues: Vec<f64>,
}

#[derive(Serialize)]
struct Tuning<'a> {
    stage1: Option<&'a TuningRecord>,
    lambda3: Option<&'a TuningRecord>,
}

#[derive(Serialize)]
struct FitReport<'a> {
    estimator: &'static str,
    k: usize,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
    converged: bool,
    stage1: Stage1Summary,
    theta: ThetaSummary,
    projection: ProjectionSummary,
    k_selection: Option<&'a KSelectionRecord>,
    standardization: &'a StandardizationRecord,
    intercept: Vec<f64>,
    tuning: Tuning<'a>,
    manifest: RunManifest,
}

fn options(a: &FitArgs) -> CliResult<HiveOptions> {
    let k = match (a.k, a.select_k) {
        (Some(k), None) => KChoice::Fixed(k as usize),
        (None, Some(KMethod::Ratio)) => KChoice::Ratio { k_bar: None },
        (None, Some(KMethod::Pa)) => KChoice::ParallelAnalysis {
            n_perm: a.pa.n_perm,
            quantile: a.pa.quantile,
        },
        (None, None) => return usage("give --k K or --select-k {ratio,pa}"),
        (Some(_), Some(_)) => return usage("--k and --select-k are mutually exclusive"),
    };
    let (stage1_tuning, folds) = stage1_tuning(&a.stage1)?;
    let lambda3_tuning = match a.lambda3 {
        Some(l) if l.is_finite() && l >= 0.0 => Lambda3Tuning::Fixed(l),
        Some(_) => return usage("--lambda3 must be a finite number >= 0"),
        None if a.stage1.cv.is_some() => Lambda3Tuning::Cv { grid: None },
        None => return usage("give --lambda3, or --cv FOLDS to tune it"),
    };
    if a.max_iter == 0 || !(a.tol > 0.0) {
        return usage("--max-iter must be at least 1 and --tol positive");
    }
    let mut stage1 = Stage1Options::default();
    stage1.solver.max_iter = a.max_iter;
    stage1.solver.tol = a.tol;
    Ok(HiveOptions {
        k,
        stage1,
        stage1_tuning,
        lambda3_tuning,
        folds: folds.max(2),
        seed: a.seed,
        standardize: !a.data.no_standardize,
        allow_no_hidden: a.allow_no_hidden,
    })
}

pub fn run(a: &FitArgs) -> CliResult<()> {
    let start = Instant::now();
    let opts = options(a)?;
    let inputs = load_inputs(&a.data)?;
    let (x, y) = (&inputs.x.matrix, &inputs.y.matrix);

    let fit: HiveFit = if a.hetero {
        fit_hhive(x, y, a.t_iters, &opts)?
    } else {
        fit_hive(x, y, &opts)?
    };
    let orig = fit.original_scale();

    ensure_dir(&a.out)?;
    let y_names = inputs.y.header.as_deref();
    let files = ["theta.csv", "psi.csv", "l.csv", "u_hat.csv", "fit.json"];
    write_matrix_csv(&a.out.join(files[0]), &orig.theta, y_names)?;
    write_matrix_csv(&a.out.join(files[1]), &orig.psi, y_names)?;
    write_matrix_csv(&a.out.join(files[2]), &orig.l, y_names)?;
    write_matrix_csv(&a.out.join(files[3]), &fit.projection.u_hat, None)?;

    let mut manifest = RunManifest::new(
        "fit",
        vec![
            a.data.x.display().to_string(),
            a.data.y.display().to_string(),
        ],
        options_value(a),
        a.seed,
    );
    manifest.outputs = files.iter().map(|s| s.to_string()).collect();
    if a.record_time {
        manifest.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
    }

    let s1 = &fit.stage1;
    let th = &fit.theta;
    let report = FitReport {
        estimator: if a.hetero { "h-hive" } else { "hive" },
        k: fit.k_used,
        lambda1: s1.lambda1,
        lambda2: s1.lambda2,
        lambda3: th.lambda3,
        converged: fit.converged(),
        stage1: Stage1Summary {
            lambda1: s1.lambda1,
            lambda2: s1.lambda2,
            support: s1.psi_support.clone(),
            kkt_violation: s1.kkt_violation,
            converged: s1.converged,
            iterations: s1.iterations,
            pseudo_inverse: s1.pseudo_inverse,
            degenerate_covariance: s1.degenerate_covariance,
        },
        theta: ThetaSummary {
            lambda3: th.lambda3,
            support: th.support.clone(),
            kkt_violation: th.kkt_violation,
            converged: th.converged,
            iterations: th.iterations,
        },
        projection: ProjectionSummary {
            method: fit.projection.method,
            k: fit.projection.k,
            heteropca_iterations: fit.projection.heteropca_iterations,
            eigenvalues: fit.projection.eigenvalues.clone(),
        },
        k_selection: fit.k_selection.as_ref(),
        standardization: &fit.standardization,
        intercept: orig.intercept,
        tuning: Tuning {
            stage1: fit.stage1_tuning.as_ref(),
            lambda3: fit.lambda3_tuning.as_ref(),
        },
        manifest,
    };
    write_json(&a.out.join(files[4]), &report)?;

    println!(
        "k = {}, lambda1 = {}, lambda2 = {}, lambda3 = {}, support = {:?}",
        fit.k_used, s1.lambda1, s1.lambda2, th.lambda3, th.support
    );
    if !fit.converged() {
        let msg = format!(
            "solver did not converge (stage 1: {}, theta: {})",
            s1.converged, th.converged
        );
        if a.strict {
            return Err(CliError::NonConvergence(msg));
        }
        eprintln!("warning: {msg}");
    }
    Ok(())
}
