use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(FileDigest { path: path.to_path_buf(), sha256: hex::encode(&Sha256::digest(&bytes)[..]) })
    }
}

/// Record of one run, written next to each output file.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a, A: Serialize> {
    pub command: &'a str,
    pub arguments: &'a A,
    pub seeds: Vec<(&'a str, u64)>,
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub version: &'static str,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Writes `<output>.manifest.json` for every output.
pub fn write_manifests<A: Serialize>(m: &RunManifest<'_, A>) -> Result<(), CliError> {
    let json = serde_json::to_vec_pretty(m).expect("manifest serializes");
    for out in &m.outputs {
        let p = manifest_path(&out.path);
        fs::write(&p, &json).map_err(|e| CliError::io(&p, e))?;
    }
    Ok(())
}
