pub mod fit;
pub mod select_k;
pub mod simulate;
pub mod tune;

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use hive_core::pipeline::{standardize, Stage1Tuning, StandardizationRecord};

use crate::args::{DataArgs, Stage1Args, TuneKind};
use crate::error::{usage, CliError, CliResult};
use crate::io::{load_matrix_csv, LoadedMatrix};

pub(crate) struct Inputs {
    pub x: LoadedMatrix,
    pub y: LoadedMatrix,
}

pub(crate) fn load_inputs(d: &DataArgs) -> CliResult<Inputs> {
    let x = load_matrix_csv(&d.x, d.header)?;
    let y = load_matrix_csv(&d.y, d.header)?;
    if x.matrix.nrows() != y.matrix.nrows() {
        return Err(CliError::Data(format!(
            "{} has {} rows but {} has {}",
            d.x.display(),
            x.matrix.nrows(),
            d.y.display(),
            y.matrix.nrows()
        )));
    }
    Ok(Inputs { x, y })
}

/// Working copies of `X` and `Y` and the transform that produced them.
pub(crate) fn working_data(
    inputs: &Inputs,
    no_standardize: bool,
) -> (DMatrix<f64>, DMatrix<f64>, StandardizationRecord) {
    let (x, y) = (&inputs.x.matrix, &inputs.y.matrix);
    if no_standardize {
        (
            x.clone(),
            y.clone(),
            StandardizationRecord::identity(x.ncols(), y.ncols()),
        )
    } else {
        standardize(x, y)
    }
}

pub(crate) fn stage1_tuning(a: &Stage1Args) -> CliResult<(Stage1Tuning, usize)> {
    let folds = a.cv.unwrap_or(0) as usize;
    match (a.lambda1, a.lambda2) {
        (Some(lambda1), Some(lambda2)) => {
            for (name, v) in [("--lambda1", lambda1), ("--lambda2", lambda2)] {
                if !(v.is_finite() && v >= 0.0) {
                    return usage(format!("{name} must be a finite number >= 0"));
                }
            }
            Ok((Stage1Tuning::Fixed { lambda1, lambda2 }, folds))
        }
        (None, None) if a.cv.is_some() => {
            let tuning = match a.tune {
                TuneKind::Grid => Stage1Tuning::Grid {
                    grid1: None,
                    grid2: None,
                },
                TuneKind::Sequential => {
                    if !(a.c0 > 0.0) {
                        return usage("--c0 must be positive");
                    }
                    Stage1Tuning::Sequential {
                        grid2: None,
                        c0: a.c0,
                    }
                }
            };
            Ok((tuning, folds))
        }
        (None, None) => usage("give --lambda1 and --lambda2, or --cv FOLDS to tune them"),
        _ => usage("--lambda1 and --lambda2 must be given together (or neither, with --cv)"),
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub(crate) fn options_value<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}
