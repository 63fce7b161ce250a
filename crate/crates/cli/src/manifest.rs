use serde::Serialize;

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub options: serde_json::Value,
    pub seed: u64,
    pub version: String,
    /// Only filled with `--record-time`, so that repeated runs stay byte-identical.
    pub wall_clock_seconds: Option<f64>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, inputs: Vec<String>, options: serde_json::Value, seed: u64) -> Self {
        Self {
            command: command.to_owned(),
            inputs,
            options,
            seed,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            wall_clock_seconds: None,
            outputs: Vec::new(),
        }
    }
}
