//! Run configuration: a flat `key = value` file with command-line
//! overrides applied on top. Credentials come only from a named
//! environment variable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{CorpusColumns, ProfileColumns};
use crate::llm::MockConfig;
use crate::prompts::{InputVariant, PromptStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendChoice {
    Live,
    Mock,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus_path: PathBuf,
    pub profiles_path: PathBuf,
    pub delimiter: u8,
    pub corpus_columns: CorpusColumns,
    pub profile_columns: ProfileColumns,
    pub endpoint_url: String,
    pub model_id: String,
    pub credential_env: String,
    pub strategy: PromptStrategy,
    pub variant: InputVariant,
    pub n_iterations: u32,
    pub max_in_flight: usize,
    pub requests_per_minute: Option<u32>,
    pub sampling_temperature: Option<f64>,
    pub run_dir: PathBuf,
    pub backend: BackendChoice,
    pub mock: MockConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {0}: expected 'key = value'")]
    Malformed(usize),
    #[error("missing required key '{0}'")]
    MissingKey(String),
    #[error("key '{key}': {message}")]
    BadValue { key: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Parses the flat key-value format: one `key = value` per line, `#`
/// comments, blank lines ignored.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Malformed(i + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn get<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str, ConfigError> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
}

fn parse<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    get(map, key)?.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        message: e.to_string(),
    })
}

fn parse_or<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        None => Ok(default),
        Some(_) => parse(map, key),
    }
}

impl RunConfig {
    pub fn from_file(
        path: &Path,
        overrides: &BTreeMap<String, String>,
    ) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut map = parse_kv(&text)?;
        // Flags win over the file.
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        Self::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let delimiter = match map.get("delimiter").map(String::as_str) {
            None | Some("comma") => b',',
            Some("tab") => b'\t',
            Some(other) => {
                return Err(ConfigError::BadValue {
                    key: "delimiter".into(),
                    message: format!("expected 'comma' or 'tab', got '{other}'"),
                })
            }
        };
        let corpus_columns = CorpusColumns {
            case_id: map.get("corpus.case_id").cloned(),
            title: get(map, "corpus.title")?.to_string(),
            institution: get(map, "corpus.institution")?.to_string(),
            uoa: get(map, "corpus.uoa")?.to_string(),
            letter: map.get("corpus.letter").cloned(),
            summary: get(map, "corpus.summary")?.to_string(),
            underpinning_research: get(map, "corpus.underpinning")?.to_string(),
            references_to_research: get(map, "corpus.references")?.to_string(),
            details_of_impact: get(map, "corpus.details")?.to_string(),
            corroborating_sources: get(map, "corpus.corroborating")?.to_string(),
        };
        let profile_columns = ProfileColumns {
            institution: get(map, "profiles.institution")?.to_string(),
            uoa: get(map, "profiles.uoa")?.to_string(),
            letter: map.get("profiles.letter").cloned(),
            profile_type: get(map, "profiles.type")?.to_string(),
            pct_unclassified: get(map, "profiles.pct_unclassified")?.to_string(),
            pct_1: get(map, "profiles.pct_1")?.to_string(),
            pct_2: get(map, "profiles.pct_2")?.to_string(),
            pct_3: get(map, "profiles.pct_3")?.to_string(),
            pct_4: get(map, "profiles.pct_4")?.to_string(),
            ics_count: map.get("profiles.ics_count").cloned(),
        };
        let backend = match map.get("backend").map(String::as_str) {
            None | Some("live") => BackendChoice::Live,
            Some("mock") => BackendChoice::Mock,
            Some(other) => {
                return Err(ConfigError::BadValue {
                    key: "backend".into(),
                    message: format!("expected 'live' or 'mock', got '{other}'"),
                })
            }
        };
        let config = Self {
            corpus_path: PathBuf::from(get(map, "corpus_path")?),
            profiles_path: PathBuf::from(get(map, "profiles_path")?),
            delimiter,
            corpus_columns,
            profile_columns,
            endpoint_url: map
                .get("endpoint_url")
                .cloned()
                .unwrap_or_else(|| "https://api.openai.com/v1/chat/completions".into()),
            model_id: map
                .get("model_id")
                .cloned()
                .unwrap_or_else(|| "gpt-4o-mini".into()),
            credential_env: map
                .get("credential_env")
                .cloned()
                .unwrap_or_else(|| "OPENAI_API_KEY".into()),
            strategy: parse_or(map, "strategy", PromptStrategy::Default)?,
            variant: parse_or(map, "variant", InputVariant::TitleSummary)?,
            n_iterations: parse_or(map, "n_iterations", 30u32)?,
            max_in_flight: parse_or(map, "max_in_flight", 4usize)?,
            requests_per_minute: map
                .get("requests_per_minute")
                .map(|_| parse(map, "requests_per_minute"))
                .transpose()?,
            sampling_temperature: map
                .get("temperature")
                .map(|_| parse(map, "temperature"))
                .transpose()?,
            run_dir: PathBuf::from(get(map, "run_dir")?),
            backend,
            mock: MockConfig {
                seed: parse_or(map, "mock.seed", 0u64)?,
                default_mean: parse_or(map, "mock.mean", 3.0f64)?,
                default_spread: parse_or(map, "mock.spread", 0.5f64)?,
                half_grid: parse_or(map, "mock.half_grid", true)?,
                per_title: Default::default(),
            },
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.n_iterations < 1 {
            return Err(ConfigError::Invalid("n_iterations must be >= 1".into()));
        }
        if self.max_in_flight < 1 {
            return Err(ConfigError::Invalid("max_in_flight must be >= 1".into()));
        }
        if let Some(t) = self.sampling_temperature {
            if t < 0.0 {
                return Err(ConfigError::Invalid("temperature must be >= 0".into()));
            }
        }
        Ok(())
    }
}
