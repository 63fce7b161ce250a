use std::fs;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use hive_core::sim::{
    run_experiment, summarize, ExperimentSettings, Method, SimConfig, SummaryRow,
};

use super::{ensure_dir, options_value, write_json};
use crate::args::SimulateArgs;
use crate::error::{usage, CliError, CliResult};
use crate::io::format_float;
use crate::manifest::RunManifest;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub configs: Vec<SimConfig>,
    pub methods: Vec<String>,
    pub replicates: usize,
    #[serde(default)]
    pub settings: ExperimentSettings,
}

#[derive(Serialize)]
struct Summary<'a> {
    summary: Vec<SummaryRow>,
    settings: &'a ExperimentSettings,
    manifest: RunManifest,
}

pub fn parse_spec(text: &str, name: &str) -> CliResult<(SimulationSpec, Vec<Method>)> {
    let spec: SimulationSpec =
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("{name}: {e}")))?;
    if spec.configs.is_empty() {
        return usage(format!("{name}: `configs` is empty"));
    }
    if spec.replicates == 0 {
        return usage(format!("{name}: `replicates` must be at least 1"));
    }
    let methods = Method::parse_list(&spec.methods)
        .map_err(|e| CliError::Usage(format!("{name}: methods: {e}")))?;
    if methods.is_empty() {
        return usage(format!("{name}: `methods` is empty"));
    }
    for (i, cfg) in spec.configs.iter().enumerate() {
        cfg.validate()
            .map_err(|e| CliError::Usage(format!("{name}: configs[{i}]: {e}")))?;
    }
    if spec.settings.folds < 2 {
        return usage(format!("{name}: settings.folds must be at least 2"));
    }
    Ok((spec, methods))
}

pub fn run(a: &SimulateArgs) -> CliResult<()> {
    let start = Instant::now();
    let name = a.config.display().to_string();
    let text = fs::read_to_string(&a.config)
        .map_err(|e| CliError::Data(format!("cannot read {name}: {e}")))?;
    let (spec, methods) = parse_spec(&text, &name)?;

    let records = run_experiment(
        &spec.configs,
        &methods,
        spec.replicates,
        a.seed,
        &spec.settings,
    )?;

    ensure_dir(&a.out)?;
    let mut wtr = csv::Writer::from_path(a.out.join("results.csv"))?;
    wtr.write_record(["config_id", "method", "replicate", "rsse", "pmse", "seed"])?;
    for r in &records {
        wtr.write_record([
            r.config_id.to_string(),
            r.method.name().to_owned(),
            r.replicate.to_string(),
            format_float(r.rsse),
            r.pmse.map(format_float).unwrap_or_default(),
            r.seed.to_string(),
        ])?;
    }
    wtr.flush()?;

    let mut manifest = RunManifest::new("simulate", vec![name], options_value(a), a.seed);
    manifest.outputs = vec!["results.csv".into(), "summary.json".into()];
    if a.record_time {
        manifest.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
    }
    let summary = summarize(&records);
    for row in &summary {
        println!(
            "config {} {:>10}: rsse {:.4} (sd {:.4}){}",
            row.config_id,
            row.method.name(),
            row.rsse_mean,
            row.rsse_sd,
            row.pmse_mean
                .map(|p| format!(", pmse {p:.4}"))
                .unwrap_or_default()
        );
    }
    write_json(
        &a.out.join("summary.json"),
        &Summary {
            summary,
            settings: &spec.settings,
            manifest,
        },
    )
}
