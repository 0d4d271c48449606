use std::path::{Path, PathBuf};

use anyhow::Context;
use phase_deblur::estimate::{KernelShape, PeakConfig};
use phase_deblur::nonuniform::DEFAULT_OVERLAP;
use phase_deblur::optimizer::DeblurParams;
use serde::{Deserialize, Serialize};

pub const DEFAULT_DEPTH: u8 = 16;

/// Everything a run can take from a TOML file. Command-line flags override
/// the file; absent keys keep library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub deblur: DeblurParams,
    pub peaks: PeakConfig,
    pub kernel_shape: KernelShape,
    /// Non-uniform grid as `NxM`.
    pub grid: Option<String>,
    pub overlap: f64,
    pub jobs: Option<usize>,
    /// Output bit depth, 8 or 16.
    pub depth: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: None,
            deblur: DeblurParams::default(),
            peaks: PeakConfig::default(),
            kernel_shape: KernelShape::default(),
            grid: None,
            overlap: DEFAULT_OVERLAP,
            jobs: None,
            depth: DEFAULT_DEPTH,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(phase_deblur::error::DeblurError::from)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| {
            anyhow::Error::new(phase_deblur::error::DeblurError::Parse(e.to_string()))
                .context(format!("parsing config {}", path.display()))
        })
    }
}

/// Parses `NxM` into `(N, M)`.
pub fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("grid must look like 2x1, got {s}"))?;
    let n = a
        .trim()
        .parse()
        .map_err(|_| format!("bad grid width in {s}"))?;
    let m = b
        .trim()
        .parse()
        .map_err(|_| format!("bad grid height in {s}"))?;
    Ok((n, m))
}
