//! TOML run configuration: model plus training settings, with built-in
//! presets. Parse errors name the offending field path.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

pub const DESK_TOML: &str = include_str!("../configs/desk.toml");
pub const PAPER_TOML: &str = include_str!("../configs/paper.toml");
pub const CORPUS_TOML: &str = include_str!("../configs/corpus.toml");
pub const CORPUS_DESK_TOML: &str = include_str!("../configs/corpus_desk.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::config("preset", format!("unknown preset `{other}` (desk or paper)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let text = match p {
            Preset::Desk => DESK_TOML,
            Preset::Paper => PAPER_TOML,
        };
        Self::from_toml(text).expect("built-in presets parse")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Deserializes TOML, reporting failures as `Config` errors that carry the
/// dotted path of the offending field.
pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "<root>".to_string() } else { path };
        Error::config(field, e.into_inner().message().trim().to_string())
    })
}

pub fn load_corpus_config(path: &Path) -> Result<CorpusConfig> {
    let cfg: CorpusConfig = parse_toml(&read(path)?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_code_defaults() {
        let desk = RunConfig::preset(Preset::Desk);
        assert_eq!(desk.model, ModelConfig::desk());
        assert_eq!(desk.train, TrainConfig::desk());
        let paper = RunConfig::preset(Preset::Paper);
        assert_eq!(paper.model, ModelConfig::paper());
        assert_eq!(paper.train, TrainConfig::paper());
        assert_eq!(parse_toml::<CorpusConfig>(CORPUS_TOML).unwrap(), CorpusConfig::default());
        let desk_corpus: CorpusConfig = parse_toml(CORPUS_DESK_TOML).unwrap();
        assert_eq!(desk_corpus.vocab_size, desk.model.lm.vocab_size);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::preset(Preset::Paper);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = DESK_TOML.replace("lr = 1e-3", "lr = \"fast\"");
        match RunConfig::from_toml(&bad) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "train.lr"),
            other => panic!("{other:?}"),
        }
        let unknown = DESK_TOML.replace("hidden = 64", "hidden = 64\nhiden = 3");
        match RunConfig::from_toml(&unknown) {
            Err(Error::Config { field, reason }) => {
                assert_eq!(field, "model.crnn.hiden");
                assert!(reason.contains("unknown field"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
        let invalid = DESK_TOML.replace("plateau_patience = 10", "plateau_patience = 0");
        assert!(matches!(RunConfig::from_toml(&invalid), Err(Error::Config { field, .. }) if field == "plateau_patience"));
    }
}
