//! Persistent artifacts. Every file opens with `# adaptctl <kind> v1`;
//! loaders reject other kinds and versions. Writes go through a temporary
//! file and a rename so readers never see half a file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::curvefit::FittedModel;
use crate::enactor::Strategy;
use crate::formula::{parse_formula, ParametricFormula};
use crate::goals::Goals;
use crate::sysmodel::ScenarioConfig;

pub const FORMAT_VERSION: u32 = 1;
pub const KNOWLEDGE_DIR_ENV: &str = "ADAPTCTL_KNOWLEDGE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Formula,
    Goals,
    Scenario,
    Dataset,
    Model,
    TunedConfig,
    Strategy,
    Report,
}

impl ArtifactKind {
    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::Formula => "formula",
            ArtifactKind::Goals => "goals",
            ArtifactKind::Scenario => "scenario",
            ArtifactKind::Dataset => "dataset",
            ArtifactKind::Model => "model",
            ArtifactKind::TunedConfig => "tuned-config",
            ArtifactKind::Strategy => "strategy",
            ArtifactKind::Report => "report",
        }
    }

    pub fn header(self) -> String {
        format!("# adaptctl {} v{FORMAT_VERSION}", self.name())
    }
}

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: missing `# adaptctl <kind> v<N>` header")]
    MissingHeader { path: PathBuf },
    #[error("{path}: expected a {expected} file, found {found}")]
    WrongKind {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },
    #[error("{path}: format version {found} is not supported (expected {FORMAT_VERSION})")]
    VersionMismatch { path: PathBuf, found: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Serialize { path: PathBuf, message: String },
}

impl KnowledgeError {
    /// True for errors caused by the file system rather than the content.
    pub fn is_io(&self) -> bool {
        matches!(self, KnowledgeError::Io { .. })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KnowledgeError + '_ {
    move |source| KnowledgeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, message: impl ToString) -> KnowledgeError {
    KnowledgeError::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Gains and search parameters chosen by tuning, with where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedConfig {
    pub kp: f64,
    pub ki: f64,
    pub iw: usize,
    pub gran: f64,
    pub offset: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enactor_dataset_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manager_dataset_sha256: Option<String>,
}

/// Writes `contents` under the kind's header.
pub fn write_artifact(
    path: &Path,
    kind: ArtifactKind,
    contents: &str,
) -> Result<(), KnowledgeError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    let tmp = path.with_file_name(name);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        writeln!(f, "{}", kind.header()).map_err(io_err(&tmp))?;
        f.write_all(contents.as_bytes()).map_err(io_err(&tmp))?;
        if !contents.is_empty() && !contents.ends_with('\n') {
            f.write_all(b"\n").map_err(io_err(&tmp))?;
        }
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Reads a file and checks its header. The header stays in the returned
/// text so that parser line numbers match the file.
pub fn read_artifact(path: &Path, kind: ArtifactKind) -> Result<String, KnowledgeError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let first = text.lines().next().unwrap_or("");
    let rest = first
        .strip_prefix("# adaptctl ")
        .ok_or_else(|| KnowledgeError::MissingHeader {
            path: path.to_path_buf(),
        })?;
    let (found, version) = rest
        .rsplit_once(' ')
        .ok_or_else(|| KnowledgeError::MissingHeader {
            path: path.to_path_buf(),
        })?;
    if found != kind.name() {
        return Err(KnowledgeError::WrongKind {
            path: path.to_path_buf(),
            expected: kind.name(),
            found: found.to_string(),
        });
    }
    if version != format!("v{FORMAT_VERSION}") {
        return Err(KnowledgeError::VersionMismatch {
            path: path.to_path_buf(),
            found: version.to_string(),
        });
    }
    Ok(text)
}

pub fn save_toml<T: Serialize>(
    path: &Path,
    kind: ArtifactKind,
    value: &T,
) -> Result<(), KnowledgeError> {
    let body = toml::to_string(value).map_err(|e| KnowledgeError::Serialize {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_artifact(path, kind, &body)
}

pub fn load_toml<T: DeserializeOwned>(
    path: &Path,
    kind: ArtifactKind,
) -> Result<T, KnowledgeError> {
    let text = read_artifact(path, kind)?;
    toml::from_str(&text).map_err(|e| parse_err(path, e))
}

pub fn save_formula(path: &Path, formula: &ParametricFormula) -> Result<(), KnowledgeError> {
    write_artifact(path, ArtifactKind::Formula, &formula.to_string())
}

pub fn load_formula(path: &Path) -> Result<ParametricFormula, KnowledgeError> {
    let text = read_artifact(path, ArtifactKind::Formula)?;
    parse_formula(&text).map_err(|e| parse_err(path, e))
}

pub fn save_goals(path: &Path, goals: &Goals) -> Result<(), KnowledgeError> {
    save_toml(path, ArtifactKind::Goals, goals)
}

pub fn load_goals(path: &Path) -> Result<Goals, KnowledgeError> {
    let g: Goals = load_toml(path, ArtifactKind::Goals)?;
    g.validate().map_err(|e| parse_err(path, e))?;
    Ok(g)
}

pub fn save_scenario(path: &Path, scenario: &ScenarioConfig) -> Result<(), KnowledgeError> {
    save_toml(path, ArtifactKind::Scenario, scenario)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, KnowledgeError> {
    let s: ScenarioConfig = load_toml(path, ArtifactKind::Scenario)?;
    s.validate().map_err(|e| parse_err(path, e))?;
    Ok(s)
}

/// Named models, one TOML table each.
pub fn save_models(
    path: &Path,
    models: &BTreeMap<String, FittedModel>,
) -> Result<(), KnowledgeError> {
    save_toml(path, ArtifactKind::Model, models)
}

pub fn load_models(path: &Path) -> Result<BTreeMap<String, FittedModel>, KnowledgeError> {
    load_toml(path, ArtifactKind::Model)
}

pub fn save_tuned(path: &Path, tuned: &TunedConfig) -> Result<(), KnowledgeError> {
    save_toml(path, ArtifactKind::TunedConfig, tuned)
}

pub fn load_tuned(path: &Path) -> Result<TunedConfig, KnowledgeError> {
    load_toml(path, ArtifactKind::TunedConfig)
}

pub fn save_strategy(path: &Path, strategy: &Strategy) -> Result<(), KnowledgeError> {
    save_toml(path, ArtifactKind::Strategy, strategy)
}

pub fn load_strategy(path: &Path) -> Result<Strategy, KnowledgeError> {
    let s: Strategy = load_toml(path, ArtifactKind::Strategy)?;
    s.validate().map_err(|e| parse_err(path, e))?;
    Ok(s)
}

/// CSV rows with a header record; empty fields stand for absent values.
pub fn save_dataset<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), KnowledgeError> {
    let ser = |e: csv::Error| KnowledgeError::Serialize {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(ser)?;
    }
    let bytes = w.into_inner().map_err(|e| KnowledgeError::Serialize {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_artifact(
        path,
        ArtifactKind::Dataset,
        &String::from_utf8_lossy(&bytes),
    )
}

pub fn load_dataset<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, KnowledgeError> {
    let text = read_artifact(path, ArtifactKind::Dataset)?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| row.map_err(|e| parse_err(path, e)))
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, KnowledgeError> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

/// Resolves artifact paths against a root directory, taken from
/// `ADAPTCTL_KNOWLEDGE_DIR` when set.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeRepo {
    root: PathBuf,
}

impl KnowledgeRepo {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn from_env_or(default_root: impl Into<PathBuf>) -> Self {
        match std::env::var_os(KNOWLEDGE_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Self::new(dir),
            _ => Self::new(default_root),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute paths pass through unchanged.
    pub fn resolve(&self, path: impl AsRef<Path>) -> PathBuf {
        self.root.join(path)
    }
}
