use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use scalegraph::security_sim::{FModel, Fraction};
use scalegraph::simnet::Scenario;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything a command needs to reproduce its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub seed: u64,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Params {
    ShardSize {
        n: Vec<usize>,
        f: Fraction,
        model: FModel,
        m_factor: usize,
        repetitions: u32,
        iterations: u32,
    },
    FailureProb {
        n: usize,
        m: Vec<usize>,
        r: Vec<usize>,
        f: Fraction,
        model: FModel,
        repetitions: u32,
        iterations: u32,
    },
    Protocol {
        scenario: Box<Scenario>,
        report: Option<PathBuf>,
    },
}

impl Params {
    pub fn name(&self) -> &'static str {
        match self {
            Params::ShardSize { .. } => "shard-size",
            Params::FailureProb { .. } => "failure-prob",
            Params::Protocol { .. } => "protocol",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: PathBuf,
    pub sha256: String,
}

impl OutputFile {
    pub fn hash(path: &Path) -> Result<OutputFile> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(OutputFile {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub invocation: Invocation,
    pub outputs: Vec<OutputFile>,
    pub wall_clock_ms: u64,
}

impl RunManifest {
    pub fn new(
        invocation: Invocation,
        outputs: Vec<PathBuf>,
        elapsed: Duration,
    ) -> Result<RunManifest> {
        Ok(RunManifest {
            command: invocation.params.name().to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: invocation.seed,
            outputs: outputs
                .iter()
                .map(|p| OutputFile::hash(p))
                .collect::<Result<_>>()?,
            invocation,
            wall_clock_ms: elapsed.as_millis() as u64,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<RunManifest> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn file_name(path: &Path) -> Result<&std::ffi::OsStr> {
    path.file_name()
        .with_context(|| format!("output path {} has no file name", path.display()))
}
