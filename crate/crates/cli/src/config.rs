//! Optional configuration file. Every key mirrors a command-line flag;
//! flags take precedence.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sqlgen::llm::ChatConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub catalog: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub corpus: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub scorer_cmd: Option<String>,
    pub scorer_args: Option<Vec<String>>,
    pub scorer_addr: Option<String>,
    pub n: Option<usize>,
    pub max_tables: Option<usize>,
    pub synonym_rate: Option<f64>,
    pub lexicon: Option<PathBuf>,
    pub questioner_cmd: Option<String>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub beams: Option<usize>,
    pub groups: Option<usize>,
    pub diversity: Option<f64>,
    pub k: Option<usize>,
    pub k1: Option<f64>,
    pub b: Option<f64>,
    pub db_dir: Option<PathBuf>,
    pub strategy: Option<String>,
    pub host: Option<String>,
    pub port: Option<u16>,
    pub llm: Option<ChatConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_and_llm_table() {
        let c = FileConfig::parse(
            r#"
            seed = 7
            catalog = "tables.json"
            max-tables = 3
            [llm]
            endpoint = "http://localhost:9/v1"
            temperature = 0.5
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.max_tables, Some(3));
        let llm = c.llm.unwrap();
        assert_eq!(llm.temperature, 0.5);
        assert_eq!(llm.model, ChatConfig::default().model);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(FileConfig::parse("sede = 7").is_err());
    }
}
