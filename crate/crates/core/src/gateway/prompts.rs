use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GatewayError;

const DEFAULT_PACK: &str = include_str!("../../prompts/default.toml");

/// Named prompt templates, loaded from a TOML or JSON file so prompts can
/// change without a rebuild.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPack {
    #[serde(default)]
    pub version: String,
    pub caption_prompt: String,
    pub situation_prompt: String,
    pub debate_challenge_prompt: String,
    pub debate_reply_prompt: String,
    pub decision_prompt: String,
}

impl PromptPack {
    /// Loads a pack; `.json` files are parsed as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().and_then(|e| e.to_str()) == Some("json");
        let pack = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        pack.map_err(|e| GatewayError::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

impl Default for PromptPack {
    fn default() -> Self {
        toml::from_str(DEFAULT_PACK).expect("bundled prompt pack parses")
    }
}

/// Replaces every `{name}` in `template` with its value. Unknown placeholders
/// and literal braces are left alone.
pub fn render_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}
