use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{baseline_ols, baseline_rrr, baseline_sva, oracle_projection};
use super::{design_for_config, generate_response, Design, GroundTruth, SimConfig};
use crate::error::{invalid, HiveError, Result};
use crate::factor::DEFAULT_HETERO_ITERS;
use crate::group_lasso::{fit_gram, GramProblem, GroupLassoOptions};
use crate::pipeline::{
    cv_tune_group_lasso, cv_tune_lambda3, cv_tune_ridge, default_group_lasso_grid,
    default_lambda2_grid, fit_hhive, fit_hive, fit_theta_projected, HiveFit, HiveOptions, KChoice,
    Lambda3Tuning, Stage1Tuning, DEFAULT_C0, DEFAULT_FOLDS, DEFAULT_PA_PERMUTATIONS,
    DEFAULT_PA_QUANTILE,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::smoother::{RidgeSmoother, DEFAULT_RANK_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Hive,
    HHive,
    /// The stage-1 sparse component.
    HiveInit,
    Oracle,
    Ols,
    Sva,
    Lasso,
    Ridge,
    Rrr,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Hive,
        Method::HHive,
        Method::HiveInit,
        Method::Oracle,
        Method::Ols,
        Method::Sva,
        Method::Lasso,
        Method::Ridge,
        Method::Rrr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Hive => "hive",
            Method::HHive => "h-hive",
            Method::HiveInit => "hive-init",
            Method::Oracle => "oracle",
            Method::Ols => "ols",
            Method::Sva => "sva",
            Method::Lasso => "lasso",
            Method::Ridge => "ridge",
            Method::Rrr => "rrr",
        }
    }

    pub fn parse_list<S: AsRef<str>>(names: &[S]) -> Result<Vec<Method>> {
        names.iter().map(|s| s.as_ref().parse()).collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HiveError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                HiveError::InvalidArgument(format!(
                    "unknown method '{s}' (expected one of {})",
                    known.join(", ")
                ))
            })
    }
}

/// How the HIVE variants obtain K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KSource {
    /// The generating K.
    True,
    Ratio,
    ParallelAnalysis,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub folds: usize,
    pub k_source: KSource,
    pub t_iters: usize,
    pub c0: f64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            k_source: KSource::True,
            t_iters: DEFAULT_HETERO_ITERS,
            c0: DEFAULT_C0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsRecord {
    pub config_id: usize,
    pub method: Method,
    pub replicate: usize,
    pub rsse: f64,
    pub pmse: Option<f64>,
    pub seed: u64,
}

/// `(||theta_hat - Theta||_F, ||X f_hat - X F||_F^2 / (n m))`.
pub fn compute_metrics(
    theta_hat: &DMatrix<f64>,
    f_hat: Option<&DMatrix<f64>>,
    truth: &GroundTruth,
    x: &DMatrix<f64>,
) -> (f64, Option<f64>) {
    let rsse = (theta_hat - &truth.theta).norm();
    let pmse = f_hat.map(|f| {
        let diff = x * (f - &truth.f_mat);
        diff.norm_squared() / (x.nrows() * truth.f_mat.ncols()) as f64
    });
    (rsse, pmse)
}

fn hive_options(cfg: &SimConfig, settings: &ExperimentSettings, seed: u64) -> HiveOptions {
    let k = match settings.k_source {
        KSource::True => KChoice::Fixed(cfg.k),
        KSource::Ratio => KChoice::Ratio { k_bar: None },
        KSource::ParallelAnalysis => KChoice::ParallelAnalysis {
            n_perm: DEFAULT_PA_PERMUTATIONS,
            quantile: DEFAULT_PA_QUANTILE,
        },
        KSource::Auto => KChoice::Auto,
    };
    HiveOptions {
        k,
        stage1_tuning: Stage1Tuning::Sequential {
            grid2: None,
            c0: settings.c0,
        },
        lambda3_tuning: Lambda3Tuning::Cv { grid: None },
        folds: settings.folds,
        seed,
        standardize: false,
        allow_no_hidden: true,
        ..HiveOptions::default()
    }
}

/// All requested methods on one replicate, in the order of `methods`.
pub fn run_replicate(
    cfg: &SimConfig,
    design: &Design,
    methods: &[Method],
    settings: &ExperimentSettings,
    seed: u64,
) -> Result<Vec<(Method, f64, Option<f64>)>> {
    let x = &design.x;
    let truth = &design.truth;
    let y = generate_response(design, cfg, &mut rng_from_seed(seed));
    let solver = GroupLassoOptions::default();
    let opts = hive_options(cfg, settings, seed);

    let wants = |m: Method| methods.contains(&m);
    let hive: Option<HiveFit> = if wants(Method::Hive) || wants(Method::HiveInit) {
        Some(fit_hive(x, &y, &opts)?)
    } else {
        None
    };
    let hhive: Option<HiveFit> = if wants(Method::HHive) {
        Some(match &hive {
            // reuse the tuned stage 1 and K
            Some(h) => {
                let reuse = HiveOptions {
                    k: KChoice::Fixed(h.k_used),
                    stage1_tuning: Stage1Tuning::Fixed {
                        lambda1: h.stage1.lambda1,
                        lambda2: h.stage1.lambda2,
                    },
                    ..opts.clone()
                };
                fit_hhive(x, &y, settings.t_iters, &reuse)?
            }
            None => fit_hhive(x, &y, settings.t_iters, &opts)?,
        })
    } else {
        None
    };
    let ols = if wants(Method::Ols) || wants(Method::Sva) {
        Some(baseline_ols(x, &y)?)
    } else {
        None
    };

    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let (theta, f): (DMatrix<f64>, Option<DMatrix<f64>>) = match method {
            Method::Hive => {
                let h = hive.as_ref().unwrap();
                (h.theta.theta.clone(), Some(h.stage1.f_hat.clone()))
            }
            Method::HHive => {
                let h = hhive.as_ref().unwrap();
                (h.theta.theta.clone(), Some(h.stage1.f_hat.clone()))
            }
            Method::HiveInit => {
                let h = hive.as_ref().unwrap();
                (h.stage1.psi_hat.clone(), Some(h.stage1.f_hat.clone()))
            }
            Method::Oracle => {
                let proj = oracle_projection(&truth.b_mat)?;
                let grid = default_group_lasso_grid(x, &proj.project_out(&y)?)?;
                let rec = cv_tune_lambda3(x, &y, &proj, &grid, settings.folds, seed, &solver)?;
                let est = fit_theta_projected(x, &y, &proj, rec.lambda3.unwrap(), &solver)?;
                (est.theta, None)
            }
            Method::Ols => {
                let coef = ols.clone().unwrap();
                (coef.clone(), Some(coef))
            }
            Method::Sva => (baseline_sva(x, &y, cfg.k)?.theta, ols.clone()),
            Method::Lasso => {
                let grid = default_group_lasso_grid(x, &y)?;
                let rec = cv_tune_group_lasso(x, &y, &grid, settings.folds, seed, &solver)?;
                let coef = fit_gram(
                    &GramProblem::new(x, &y)?,
                    rec.lambda3.unwrap(),
                    &solver,
                    None,
                )?
                .coef;
                (coef.clone(), Some(coef))
            }
            Method::Ridge => {
                let grid = default_lambda2_grid(x)?;
                let rec = cv_tune_ridge(x, &y, &grid, settings.folds, seed, DEFAULT_RANK_TOL)?;
                let coef = RidgeSmoother::build(x, rec.lambda2.unwrap(), DEFAULT_RANK_TOL)?
                    .backsolve(&y)?
                    .coef;
                (coef.clone(), Some(coef))
            }
            Method::Rrr => {
                let fit = baseline_rrr(x, &y, cfg.k)?;
                (fit.l_hat.clone(), Some(fit.l_hat))
            }
        };
        let (rsse, pmse) = compute_metrics(&theta, f.as_ref(), truth, x);
        out.push((method, rsse, pmse));
    }
    Ok(out)
}

/// Seed of replicate `replicate` of configuration `config_id`.
pub fn replicate_seed(master_seed: u64, config_id: usize, replicate: usize) -> u64 {
    derive_seed(master_seed, &[config_id as u64, replicate as u64])
}

/// Runs every method on every replicate of every configuration. The design
/// of each configuration is drawn once from its own seed; replicate noise
/// comes from `(master_seed, config index, replicate index)`.
pub fn run_experiment(
    configs: &[SimConfig],
    methods: &[Method],
    replicates: usize,
    master_seed: u64,
    settings: &ExperimentSettings,
) -> Result<Vec<MetricsRecord>> {
    if configs.is_empty() || methods.is_empty() || replicates == 0 {
        return invalid("need at least one configuration, method and replicate");
    }
    for cfg in configs {
        cfg.validate()?;
    }
    let designs: Vec<Design> = configs
        .par_iter()
        .map(design_for_config)
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..replicates).map(move |r| (c, r)))
        .collect();
    let rows: Vec<Vec<MetricsRecord>> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let seed = replicate_seed(master_seed, c, r);
            let res = run_replicate(&configs[c], &designs[c], methods, settings, seed)?;
            Ok(res
                .into_iter()
                .map(|(method, rsse, pmse)| MetricsRecord {
                    config_id: c,
                    method,
                    replicate: r,
                    rsse,
                    pmse,
                    seed,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub config_id: usize,
    pub method: Method,
    pub replicates: usize,
    pub rsse_mean: f64,
    pub rsse_sd: f64,
    pub pmse_mean: Option<f64>,
    pub pmse_sd: Option<f64>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Mean and sample standard deviation per `(config, method)`, in order of
/// first appearance.
pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, Method)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.config_id, r.method)) {
            keys.push((r.config_id, r.method));
        }
    }
    keys.into_iter()
        .map(|(config_id, method)| {
            let group: Vec<&MetricsRecord> = records
                .iter()
                .filter(|r| r.config_id == config_id && r.method == method)
                .collect();
            let rsse: Vec<f64> = group.iter().map(|r| r.rsse).collect();
            let pmse: Option<Vec<f64>> = group.iter().map(|r| r.pmse).collect();
            let (rsse_mean, rsse_sd) = mean_sd(&rsse);
            let pm = pmse.filter(|v| !v.is_empty()).map(|v| mean_sd(&v));
            SummaryRow {
                config_id,
                method,
                replicates: group.len(),
                rsse_mean,
                rsse_sd,
                pmse_mean: pm.map(|p| p.0),
                pmse_sd: pm.map(|p| p.1),
            }
        })
        .collect()
}
