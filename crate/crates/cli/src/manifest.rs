use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one run: enough to regenerate every output.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub seed: u64,
    pub config: &'a C,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

pub fn digest(path: &Path) -> std::io::Result<InputDigest> {
    let bytes = fs::read(path)?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Tracks inputs and outputs of a subcommand under one output directory.
#[derive(Debug)]
pub struct Run {
    pub out_dir: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl Run {
    pub fn new(out_dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(out_dir)?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> PathBuf {
        self.inputs.push(path.to_path_buf());
        path.to_path_buf()
    }

    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out_dir.join(name)
    }

    pub fn finish<C: Serialize>(self, subcommand: &'static str, seed: u64, config: &C) -> anyhow::Result<PathBuf> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| digest(p))
            .collect::<std::io::Result<Vec<_>>>()?;
        let manifest = Manifest {
            tool: "spade",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            seed,
            config,
            inputs,
            outputs: self.outputs,
        };
        let path = self.out_dir.join(format!("{subcommand}.manifest.json"));
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(path)
    }
}
