use hive_core::pipeline::{select_k, tune_stage1, KChoice};
use hive_core::stage1::{fit_stage1, Stage1Options};

use super::{load_inputs, stage1_tuning, working_data, write_json};
use crate::args::{KMethod, SelectKArgs};
use crate::error::{usage, CliResult};

pub fn run(a: &SelectKArgs) -> CliResult<()> {
    let (tuning, folds) = stage1_tuning(&a.stage1)?;
    let inputs = load_inputs(&a.data)?;
    let (x, y, _) = working_data(&inputs, a.data.no_standardize);
    if y.ncols() < 2 {
        return usage("K selection needs a response with at least 2 columns");
    }

    let opts = Stage1Options::default();
    let (lambda1, lambda2, _) = tune_stage1(&x, &y, &tuning, folds.max(2), a.seed, &opts)?;
    let fit = fit_stage1(&x, &y, lambda1, lambda2, &opts)?;
    let choice = match a.method {
        KMethod::Ratio => KChoice::Ratio { k_bar: a.k_bar },
        KMethod::Pa => KChoice::ParallelAnalysis {
            n_perm: a.pa.n_perm,
            quantile: a.pa.quantile,
        },
    };
    let (k, record) = select_k(&fit.residuals, &choice, a.seed)?;
    let record = record.expect("a selection method always returns a record");

    match &record.parallel_analysis {
        None => {
            println!("{:>4}  {:>24}  {:>24}", "j", "eigenvalue", "ratio");
            for (j, ev) in record.eigenvalues.iter().enumerate() {
                let ratio = record
                    .ratios
                    .get(j)
                    .map(|r| format!("{r:>24.17e}"))
                    .unwrap_or_default();
                println!("{:>4}  {ev:>24.17e}  {ratio}", j + 1);
            }
        }
        Some(pa) => {
            println!(
                "{:>4}  {:>24}  {:>24}  exceeds",
                "j", "observed", "threshold"
            );
            for (j, (o, t)) in pa.observed.iter().zip(&pa.thresholds).enumerate() {
                println!("{:>4}  {o:>24.17e}  {t:>24.17e}  {}", j + 1, o > t);
            }
        }
    }
    println!("K = {k} (lambda1 = {lambda1}, lambda2 = {lambda2})");

    if let Some(path) = &a.out {
        let report = serde_json::json!({
            "k": k,
            "lambda1": lambda1,
            "lambda2": lambda2,
            "selection": record,
            "seed": a.seed,
        });
        write_json(path, &report)?;
    }
    Ok(())
}
