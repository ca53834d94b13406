use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, `--out` removed.
    pub args: Vec<String>,
    /// Every setting the run used, defaults filled in.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub version: String,
    pub duration_secs: f64,
    pub exit_code: i32,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn write(&self) -> Result<PathBuf> {
        let p = Self::path_in(&self.out_dir);
        io::write_json(&p, self)?;
        Ok(p)
    }

    pub fn read(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

/// Drops `--out X` / `--out=X` from an argument list.
pub fn strip_out(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out
}
