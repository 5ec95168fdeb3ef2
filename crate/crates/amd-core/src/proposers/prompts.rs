//! Prompt templates and rendering.
//!
//! System prompts are shipped as editable template files under
//! `prompts/` (one per setting) with `{n_bidders}`-style placeholders;
//! the strategy presets live in `strategies/`. The same files are
//! embedded as defaults so the library works without any path setup.
//! Rendered system text is the template with placeholders substituted,
//! byte for byte; the user prompt lists the sampled parents worst to
//! best, the optional strategy line, and the output-format instruction.

use std::collections::BTreeMap;
use std::path::Path;

use super::ProposalRequest;
use crate::mechanisms::SettingSpec;

const EMBEDDED_REDISCOVERY: &str = include_str!("../../../../prompts/rediscovery.txt");
const EMBEDDED_REDISTRIBUTION: &str = include_str!("../../../../prompts/redistribution.txt");
const EMBEDDED_CORRELATED: &str = include_str!("../../../../prompts/correlated.txt");
const EMBEDDED_STRATEGIES_DEFAULT: &str = include_str!("../../../../strategies/default.txt");
const EMBEDDED_STRATEGIES_REDISCOVERY: &str =
    include_str!("../../../../strategies/rediscovery.txt");

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum PromptError {
    #[error("missing template `{0}`")]
    MissingTemplate(String),
    #[error("cannot read template: {0}")]
    Io(String),
}

/// The template set: system prompts by name plus the strategy lines.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<String, String>,
    strategies: Vec<String>,
}

impl PromptLibrary {
    /// The shipped templates and the default strategy preset.
    pub fn embedded() -> Self {
        let mut templates = BTreeMap::new();
        templates.insert("rediscovery".to_string(), EMBEDDED_REDISCOVERY.to_string());
        templates.insert("redistribution".to_string(), EMBEDDED_REDISTRIBUTION.to_string());
        templates.insert("correlated".to_string(), EMBEDDED_CORRELATED.to_string());
        Self { templates, strategies: parse_strategies(EMBEDDED_STRATEGIES_DEFAULT) }
    }

    /// Swap in the rediscovery-specific strategy preset.
    pub fn with_rediscovery_strategies(mut self) -> Self {
        self.strategies = parse_strategies(EMBEDDED_STRATEGIES_REDISCOVERY);
        self
    }

    /// Load `<dir>/prompts/*.txt` and `<dir>/strategies/default.txt`,
    /// falling back to the embedded copies for anything absent.
    pub fn from_dir(root: &Path) -> Result<Self, PromptError> {
        let mut lib = Self::embedded();
        let prompt_dir = root.join("prompts");
        if prompt_dir.is_dir() {
            for entry in std::fs::read_dir(&prompt_dir).map_err(|e| PromptError::Io(e.to_string()))?
            {
                let entry = entry.map_err(|e| PromptError::Io(e.to_string()))?;
                let path = entry.path();
                if path.extension().is_some_and(|e| e == "txt") {
                    let name = path
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .unwrap_or_default()
                        .to_string();
                    let text =
                        std::fs::read_to_string(&path).map_err(|e| PromptError::Io(e.to_string()))?;
                    lib.templates.insert(name, text);
                }
            }
        }
        let strategy_file = root.join("strategies").join("default.txt");
        if strategy_file.is_file() {
            let text =
                std::fs::read_to_string(&strategy_file).map_err(|e| PromptError::Io(e.to_string()))?;
            lib.strategies = parse_strategies(&text);
        }
        Ok(lib)
    }

    pub fn strategies(&self) -> &[String] {
        &self.strategies
    }

    pub fn n_strategies(&self) -> usize {
        self.strategies.len()
    }

    pub fn template(&self, name: &str) -> Result<&str, PromptError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| PromptError::MissingTemplate(name.to_string()))
    }
}

fn parse_strategies(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

/// Placeholder values drawn from a setting.
#[derive(Debug, Clone)]
pub struct PromptSettingDesc {
    pub template: &'static str,
    pub n_bidders: usize,
    pub n_items: usize,
    pub distribution: String,
}

impl PromptSettingDesc {
    pub fn from_setting(setting: &SettingSpec) -> Self {
        match setting {
            SettingSpec::RediscoveryPerBidder { n_bidders, distributions, .. } => Self {
                template: "rediscovery",
                n_bidders: *n_bidders,
                n_items: 1,
                distribution: distributions[0].id(),
            },
            SettingSpec::SingleItemRevenue { n_bidders, distribution, .. } => Self {
                template: "correlated",
                n_bidders: *n_bidders,
                n_items: 1,
                distribution: distribution.id(),
            },
            SettingSpec::VcgRedistribution { n_bidders, n_items, distribution, .. } => Self {
                template: "redistribution",
                n_bidders: *n_bidders,
                n_items: *n_items,
                distribution: distribution.id(),
            },
            SettingSpec::Distillation { inner, .. } => Self::from_setting(inner),
        }
    }

    fn substitute(&self, template: &str) -> String {
        template
            .replace("{n_bidders}", &self.n_bidders.to_string())
            .replace("{n_items}", &self.n_items.to_string())
            .replace("{others_len}", &(self.n_bidders - 1).to_string())
            .replace("{n_plus_one}", &(self.n_bidders + 1).to_string())
            .replace("{distribution}", &self.distribution)
    }
}

/// Build the `(system, user)` prompt pair for one iteration.
pub fn render_prompts(
    request: &ProposalRequest,
    setting: &SettingSpec,
    library: &PromptLibrary,
) -> Result<(String, String), PromptError> {
    let desc = PromptSettingDesc::from_setting(setting);
    let system = desc.substitute(library.template(desc.template)?);

    let mut user = String::new();
    // Worst-to-best so the strongest parent sits closest to the
    // instruction.
    let mut parents: Vec<&(String, f64)> = request.parents.iter().collect();
    parents.sort_by(|a, b| a.1.total_cmp(&b.1));
    user.push_str(&format!(
        "Below are {} previously generated heuristic functions, ordered from worst to best by score (higher is better).\n",
        parents.len()
    ));
    for (i, (source, score)) in parents.iter().enumerate() {
        user.push_str(&format!("\nHeuristic {} (score {score}):\n{source}\n", i + 1));
    }
    if let Some(strategy_id) = request.strategy_id {
        let idx = (strategy_id as usize).saturating_sub(1);
        if let Some(line) = library.strategies.get(idx) {
            user.push_str(&format!("\n{line}\n"));
        }
    }
    user.push_str(&format!(
        "\nOnly output a standalone heuristic_v{} function code, must not output anything other than the heuristic function's code.\n",
        request.version
    ));
    Ok((system, user))
}
