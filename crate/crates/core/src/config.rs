//! Pipeline configuration files.
//!
//! A pipeline is described in TOML with one `[[level]]` table per level,
//! entry level first:
//!
//! ```toml
//! coupling = "independent"   # or "tandem"; optional
//!
//! [[level]]
//! label = "L1"
//! arrival_rate = 6.0
//! service_rate = 2.0
//! capacity = 10
//! designation = "clerk"
//! signing_limit = 100
//! ```

use std::fs;
use std::io;
use std::ops::Range;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::pipeline::{Coupling, LevelConfig, PipelineError, PipelineModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: PipelineError,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineFile {
    #[serde(default)]
    coupling: Coupling,
    #[serde(default)]
    level: Vec<Spanned<LevelEntry>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelEntry {
    label: Option<String>,
    arrival_rate: f64,
    service_rate: f64,
    capacity: u64,
    designation: String,
    signing_limit: u64,
}

fn line_of(text: &str, span: Option<Range<usize>>) -> usize {
    let offset = span.map_or(0, |s| s.start.min(text.len()));
    text[..offset].bytes().filter(|&b| b == b'\n').count() + 1
}

pub fn parse_pipeline(text: &str) -> Result<PipelineModel, ConfigError> {
    let file: PipelineFile = toml::from_str(text).map_err(|e| ConfigError::Syntax {
        line: line_of(text, e.span()),
        message: e.message().trim_end().to_owned(),
    })?;
    if file.level.is_empty() {
        return Err(ConfigError::Invalid {
            line: 1,
            source: PipelineError::Empty,
        });
    }
    let mut lines = Vec::with_capacity(file.level.len());
    let levels: Vec<LevelConfig> = (1u32..)
        .zip(file.level)
        .map(|(level_id, entry)| {
            lines.push(line_of(text, Some(entry.span())));
            let entry = entry.into_inner();
            LevelConfig {
                level_id,
                label: entry.label.unwrap_or_else(|| format!("L{level_id}")),
                arrival_rate: entry.arrival_rate,
                service_rate: entry.service_rate,
                capacity: usize::try_from(entry.capacity).unwrap_or(usize::MAX),
                designation: entry.designation,
                signing_limit: entry.signing_limit,
            }
        })
        .collect();
    PipelineModel::new(levels, file.coupling).map_err(|source| {
        let line = match &source {
            PipelineError::InvalidLevel { level_id, .. }
            | PipelineError::DecreasingSigningLimit { level_id, .. } => {
                lines[*level_id as usize - 1]
            }
            _ => 1,
        };
        ConfigError::Invalid { line, source }
    })
}

pub fn load_pipeline(path: &Path) -> Result<PipelineModel, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pipeline(&text)
}
