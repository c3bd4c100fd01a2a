//! Run manifests: the fully resolved invocation plus digests of its inputs.
//!
//! A manifest is written before a command computes anything. `sigil replay`
//! reads one back, checks the input digests and runs the same resolved
//! command again.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::run::Run;

pub const TOOL: &str = "sigil";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// The per-run seed, when the command is randomized.
    pub seed: Option<u64>,
    pub run: Run,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<PathBuf>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = fs::File::open(path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let k = f.read(&mut buf).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn digest_all(paths: &[PathBuf]) -> CliResult<Vec<FileDigest>> {
    paths.iter().map(|p| Ok(FileDigest { path: p.clone(), sha256: sha256_file(p)? })).collect()
}

impl RunManifest {
    pub fn new(run: Run) -> CliResult<Self> {
        let inputs = digest_all(&run.inputs()?)?;
        Ok(Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: run.seed(),
            outputs: run.outputs(),
            run,
            inputs,
        })
    }

    pub fn render(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
        }
        fs::write(path, self.render()).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::io(format!("{}: not a run manifest: {e}", path.display())))?;
        if m.tool != TOOL {
            return Err(CliError::io(format!("{}: manifest was written by `{}`", path.display(), m.tool)));
        }
        Ok(m)
    }

    /// Inputs whose current content no longer matches the recorded digest.
    pub fn stale_inputs(&self) -> CliResult<Vec<PathBuf>> {
        let mut stale = Vec::new();
        for d in &self.inputs {
            if !d.path.exists() || sha256_file(&d.path)? != d.sha256 {
                stale.push(d.path.clone());
            }
        }
        Ok(stale)
    }
}
