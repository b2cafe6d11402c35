use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

pub const DEFAULT_STORE: &str = "concord-store";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

/// Optional settings file. Command-line flags take precedence.
///
/// ```toml
/// store = "data/store"
/// campaign = "sudan-2024"
/// addr = "0.0.0.0:8080"
/// ```
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub store: Option<PathBuf>,
    pub campaign: Option<String>,
    pub addr: Option<String>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let c: Config = toml::from_str("store = \"s\"\ncampaign = \"c\"\n").unwrap();
        assert_eq!(c.store.as_deref(), Some(Path::new("s")));
        assert_eq!(c.campaign.as_deref(), Some("c"));
        assert!(toml::from_str::<Config>("stor = 1").is_err());
    }
}
