use hive_core::pipeline::tune_stage1;
use hive_core::stage1::Stage1Options;

use super::{load_inputs, stage1_tuning, working_data, write_json};
use crate::args::{Stage1Args, TuneArgs};
use crate::error::CliResult;

pub fn run(a: &TuneArgs) -> CliResult<()> {
    let (tuning, folds) = stage1_tuning(&Stage1Args {
        lambda1: None,
        lambda2: None,
        cv: Some(a.cv),
        tune: a.tune,
        c0: a.c0,
    })?;
    let inputs = load_inputs(&a.data)?;
    let (x, y, _) = working_data(&inputs, a.data.no_standardize);
    let (lambda1, lambda2, record) =
        tune_stage1(&x, &y, &tuning, folds, a.seed, &Stage1Options::default())?;
    println!("lambda1 = {lambda1}\nlambda2 = {lambda2}");
    if let Some(path) = &a.out {
        write_json(path, &record)?;
    }
    Ok(())
}
