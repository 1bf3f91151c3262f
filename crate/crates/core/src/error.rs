use std::path::PathBuf;

use crate::geomap::CommuneId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the pipeline stages.
///
/// [`Error::is_input_error`] separates problems with the caller's inputs or
/// configuration from internal invariant violations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what}: file not found: {}", path.display())]
    NotFound { what: &'static str, path: PathBuf },

    #[error("{what}: {}: {source}", path.display())]
    Io {
        what: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{what}: line {line}: {msg}")]
    Parse {
        what: &'static str,
        line: u64,
        msg: String,
    },

    #[error("geometry: feature {index}: {msg}")]
    Geometry { index: usize, msg: String },

    #[error("duplicate antenna {0}")]
    DuplicateAntenna(String),

    #[error("antenna {antenna} maps to unknown commune {commune}")]
    UnknownAntennaCommune { antenna: String, commune: CommuneId },

    #[error("census incomplete: missing communes {missing:?}")]
    CensusIncomplete { missing: Vec<CommuneId> },

    #[error("census: line {line}: non-positive population for commune {commune}")]
    NonPositivePopulation { commune: CommuneId, line: u64 },

    #[error("census: commune {0} is not part of the commune geometry")]
    CensusUnknownCommune(CommuneId),

    #[error("survey: line {line}: unknown hour group {label:?}")]
    UnknownHourGroup { label: String, line: u64 },

    #[error("survey: line {line}: duplicate survey cell (commune {commune}, {hour})")]
    DuplicateSurveyCell {
        commune: CommuneId,
        hour: String,
        line: u64,
    },

    #[error("no communes")]
    NoCommunes,

    #[error("unknown commune {0}")]
    UnknownCommune(CommuneId),

    #[error("commune {} has no resident sample; cannot scale", list_ids(.0))]
    NoResidentSample(Vec<CommuneId>),

    #[error("unfiltered user reached home detection: {0}")]
    UnfilteredUser(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{what}: {source}")]
    Json {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// True for errors caused by inputs or configuration, false for
    /// internal invariant violations.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::UnfilteredUser(_))
    }

    pub(crate) fn io(what: &'static str, path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound { what, path }
        } else {
            Error::Io { what, path, source }
        }
    }

    pub(crate) fn parse(what: &'static str, line: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            what,
            line,
            msg: msg.into(),
        }
    }
}

fn list_ids(ids: &[CommuneId]) -> String {
    ids.iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
