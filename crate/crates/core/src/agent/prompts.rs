//! Prompt templates with `{NAME}` placeholders, one set per language.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const ENGLISH: &str = "en";

pub const USER_QUESTION: &str = "USER_QUESTION";
pub const PLAN_EXPERIENCE_EXAMPLE: &str = "PLAN_EXPERIENCE_EXAMPLE";
pub const QUESTION_QUERY_EXAMPLE: &str = "QUESTION_QUERY_EXAMPLE";
pub const GENERATED_SPARQL: &str = "GENERATED_SPARQL";
pub const FEEDBACK: &str = "FEEDBACK";

const EN_PLAN: &str = include_str!("../../prompts/en/plan.txt");
const EN_ACTION: &str = include_str!("../../prompts/en/action.txt");
const EN_FEEDBACK: &str = include_str!("../../prompts/en/feedback.txt");

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([A-Z][A-Z0-9_]*)\}").unwrap());

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("no binding for placeholder {{{0}}}")]
    MissingBinding(String),
    #[error("{kind:?} template for '{language}' lacks placeholder {{{placeholder}}}")]
    MissingPlaceholder {
        language: String,
        kind: PromptKind,
        placeholder: String,
    },
    #[error("no English {0:?} template registered")]
    NoFallback(PromptKind),
    #[error("cannot read prompt file {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Plan,
    Action,
    Feedback,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::Plan, PromptKind::Action, PromptKind::Feedback];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptKind::Plan => "plan.txt",
            PromptKind::Action => "action.txt",
            PromptKind::Feedback => "feedback.txt",
        }
    }

    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            PromptKind::Plan => &[USER_QUESTION, PLAN_EXPERIENCE_EXAMPLE],
            PromptKind::Action => &[QUESTION_QUERY_EXAMPLE],
            PromptKind::Feedback => &[USER_QUESTION, GENERATED_SPARQL, FEEDBACK],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    language: String,
    kind: PromptKind,
    body: String,
}

impl PromptTemplate {
    pub fn new(language: impl Into<String>, kind: PromptKind, body: impl Into<String>) -> Result<Self, PromptError> {
        let template = Self {
            language: language.into(),
            kind,
            body: body.into(),
        };
        let present = template.placeholders();
        for required in kind.required_placeholders() {
            if !present.iter().any(|p| p == required) {
                return Err(PromptError::MissingPlaceholder {
                    language: template.language.clone(),
                    kind,
                    placeholder: required.to_string(),
                });
            }
        }
        Ok(template)
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn placeholders(&self) -> Vec<String> {
        PLACEHOLDER.captures_iter(&self.body).map(|c| c[1].to_string()).collect()
    }
}

/// Substitutes every placeholder in one pass. Bound values are inserted
/// verbatim and never rescanned, so SPARQL braces in them are safe.
pub fn render_prompt(template: &PromptTemplate, bindings: &BTreeMap<&str, &str>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.body.len());
    let mut last = 0;
    for caps in PLACEHOLDER.captures_iter(&template.body) {
        let whole = caps.get(0).expect("match");
        let name = &caps[1];
        let value = bindings
            .get(name)
            .ok_or_else(|| PromptError::MissingBinding(name.to_string()))?;
        out.push_str(&template.body[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&template.body[last..]);
    Ok(out)
}

/// Which language the prompts are written in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptPolicy {
    /// Prompts in the question's language, falling back to English.
    #[default]
    Native,
    EnglishOnly,
    /// The question is machine-translated before the agent sees it.
    MtToEnglish,
}

impl PromptPolicy {
    pub fn prompt_language<'a>(self, question_language: &'a str) -> &'a str {
        match self {
            PromptPolicy::Native => question_language,
            PromptPolicy::EnglishOnly | PromptPolicy::MtToEnglish => ENGLISH,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PromptRegistry {
    templates: HashMap<(String, PromptKind), PromptTemplate>,
}

impl Default for PromptRegistry {
    fn default() -> Self {
        Self::english()
    }
}

impl PromptRegistry {
    /// The built-in English templates.
    pub fn english() -> Self {
        let mut registry = Self {
            templates: HashMap::new(),
        };
        for (kind, body) in [
            (PromptKind::Plan, EN_PLAN),
            (PromptKind::Action, EN_ACTION),
            (PromptKind::Feedback, EN_FEEDBACK),
        ] {
            registry.insert(PromptTemplate::new(ENGLISH, kind, body.trim_end()).expect("built-in template"));
        }
        registry
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert((template.language.clone(), template.kind), template);
    }

    /// Loads `<dir>/<language>/<kind>.txt` files on top of the built-ins.
    pub fn load_dir(mut self, dir: &Path) -> Result<Self, PromptError> {
        let io = |path: &Path, e: std::io::Error| PromptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        for entry in std::fs::read_dir(dir).map_err(|e| io(dir, e))? {
            let entry = entry.map_err(|e| io(dir, e))?;
            if !entry.path().is_dir() {
                continue;
            }
            let language = entry.file_name().to_string_lossy().to_string();
            for kind in PromptKind::ALL {
                let path = entry.path().join(kind.file_name());
                if path.is_file() {
                    let body = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
                    self.insert(PromptTemplate::new(language.clone(), kind, body.trim_end())?);
                }
            }
        }
        Ok(self)
    }

    pub fn has(&self, language: &str, kind: PromptKind) -> bool {
        self.templates.contains_key(&(language.to_string(), kind))
    }

    /// Template for `language`, or the English one. The flag reports a fallback.
    pub fn get(&self, language: &str, kind: PromptKind) -> Result<(&PromptTemplate, bool), PromptError> {
        if let Some(t) = self.templates.get(&(language.to_string(), kind)) {
            return Ok((t, false));
        }
        self.templates
            .get(&(ENGLISH.to_string(), kind))
            .map(|t| (t, true))
            .ok_or(PromptError::NoFallback(kind))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feedback() -> PromptTemplate {
        PromptRegistry::english().get("en", PromptKind::Feedback).unwrap().0.clone()
    }

    #[test]
    fn renders_all_feedback_placeholders() {
        let text = render_prompt(
            &feedback(),
            &BTreeMap::from([(USER_QUESTION, "q"), (GENERATED_SPARQL, "s"), (FEEDBACK, "f")]),
        )
        .unwrap();
        assert!(text.contains("Initial question: q"));
        assert!(text.contains("Your query: s"));
        assert!(text.contains("--- Start triplestore response ---\nf\n--- End triplestore response ---"));
        assert!(!PLACEHOLDER.is_match(&text));
    }

    #[test]
    fn empty_experience_binding_is_valid() {
        let reg = PromptRegistry::english();
        let (plan, _) = reg.get("en", PromptKind::Plan).unwrap();
        let text = render_prompt(plan, &BTreeMap::from([(USER_QUESTION, "Who?"), (PLAN_EXPERIENCE_EXAMPLE, "")])).unwrap();
        assert!(text.ends_with("Who?\n"));
    }

    #[test]
    fn missing_binding_is_named() {
        let err = render_prompt(&feedback(), &BTreeMap::from([(USER_QUESTION, "q"), (GENERATED_SPARQL, "s")])).unwrap_err();
        assert_eq!(err, PromptError::MissingBinding("FEEDBACK".into()));
    }

    #[test]
    fn bound_values_are_not_rescanned() {
        let text = render_prompt(
            &feedback(),
            &BTreeMap::from([(USER_QUESTION, "{FEEDBACK}"), (GENERATED_SPARQL, "SELECT ?x { ?x ?p ?o }"), (FEEDBACK, "x")]),
        )
        .unwrap();
        assert!(text.contains("Initial question: {FEEDBACK}"));
    }

    #[test]
    fn builtin_templates_carry_required_placeholders() {
        let reg = PromptRegistry::english();
        for kind in PromptKind::ALL {
            let (t, fell_back) = reg.get("en", kind).unwrap();
            assert!(!fell_back);
            for p in kind.required_placeholders() {
                assert!(t.placeholders().iter().any(|x| x == p), "{kind:?} lacks {p}");
            }
        }
    }

    #[test]
    fn template_without_required_placeholder_is_rejected() {
        assert!(matches!(
            PromptTemplate::new("de", PromptKind::Action, "Du bist ein System."),
            Err(PromptError::MissingPlaceholder { .. })
        ));
    }

    #[test]
    fn unknown_language_falls_back_to_english() {
        let reg = PromptRegistry::english();
        let (t, fell_back) = reg.get("ba", PromptKind::Plan).unwrap();
        assert!(fell_back);
        assert_eq!(t.language(), "en");
    }

    #[test]
    fn loads_language_directories() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("de")).unwrap();
        std::fs::write(
            dir.path().join("de/action.txt"),
            "Du bist ein wissensgraphbasiertes Frage-Antwort-System.\n\n{QUESTION_QUERY_EXAMPLE}\n",
        )
        .unwrap();
        let reg = PromptRegistry::english().load_dir(dir.path()).unwrap();
        assert!(reg.has("de", PromptKind::Action));
        assert!(!reg.get("de", PromptKind::Action).unwrap().1);
        assert!(reg.get("de", PromptKind::Plan).unwrap().1);
    }

    #[test]
    fn policy_selects_prompt_language() {
        assert_eq!(PromptPolicy::Native.prompt_language("de"), "de");
        assert_eq!(PromptPolicy::EnglishOnly.prompt_language("de"), "en");
        assert_eq!(PromptPolicy::MtToEnglish.prompt_language("ru"), "en");
    }
}
