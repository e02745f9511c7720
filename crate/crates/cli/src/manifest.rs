use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Sidecar describing one invocation, written next to its primary output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        RunManifest {
            tool: concat!("agenda ", env!("CARGO_PKG_VERSION")).into(),
            subcommand: subcommand.into(),
            argv: std::env::args().collect(),
            seed: None,
            threads: rayon::current_num_threads(),
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn config(&mut self, pairs: impl IntoIterator<Item = (String, String)>) {
        self.config.extend(pairs);
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }
}

/// `<primary>.manifest.json`
pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut s = primary.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn write_manifest(m: &RunManifest, primary: &Path) -> std::io::Result<PathBuf> {
    let path = manifest_path(primary);
    let json = serde_json::to_string_pretty(m).map_err(std::io::Error::other)?;
    std::fs::write(&path, json + "\n")?;
    Ok(path)
}
