//! Run manifests.
//!
//! Every command that writes to an output directory also writes
//! `manifest.json` there:
//!
//! ```json
//! {
//!   "manifest_version": 1,
//!   "command": "train",
//!   "args": ["train", "--train", "train.jsonl", "--out-dir", "run"],
//!   "seed": 0,
//!   "config": { "...": "resolved configuration" },
//!   "config_hash": "sha256 of the compact JSON of `config`",
//!   "versions": { "x2parser": "0.1.0", "x2parser_core": "0.1.0", "checkpoint_format": 1 },
//!   "outputs": ["checkpoint.json", "metrics.csv"]
//! }
//! ```
//!
//! `args` is the full argument list, so `x2parser replay --manifest
//! <file> --out-dir <dir>` reruns the command into another directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{sha256_hex, FORMAT_VERSION};
use crate::io::{create, open, IoError};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Versions {
    pub x2parser: String,
    pub x2parser_core: String,
    pub checkpoint_format: u32,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            x2parser: env!("CARGO_PKG_VERSION").into(),
            x2parser_core: x2parser_core::VERSION.into(),
            checkpoint_format: FORMAT_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub versions: Versions,
    /// File names relative to the output directory.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, args: Vec<String>, seed: Option<u64>, config: serde_json::Value) -> Self {
        let config_hash = sha256_hex(config.to_string().as_bytes());
        Self {
            manifest_version: MANIFEST_VERSION,
            command: command.into(),
            args,
            seed,
            config,
            config_hash,
            versions: Versions::current(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), IoError> {
        let path = dir.join(MANIFEST_FILE);
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, self).expect("manifests serialize");
        std::io::Write::write_all(&mut w, b"\n").map_err(|source| IoError::File { path, source })
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        serde_json::from_reader(open(path)?).map_err(|e| IoError::Record(crate::io::RecordError {
            line: e.line(),
            id: None,
            message: e.to_string(),
        }))
    }

    /// `args` with the `--out-dir` value replaced.
    pub fn args_with_out_dir(&self, out_dir: &str) -> Vec<String> {
        let mut args = self.args.clone();
        let mut i = 0;
        while i < args.len() {
            if args[i] == "--out-dir" && i + 1 < args.len() {
                args[i + 1] = out_dir.into();
                i += 1;
            } else if let Some(_) = args[i].strip_prefix("--out-dir=") {
                args[i] = format!("--out-dir={out_dir}");
            }
            i += 1;
        }
        args
    }
}
