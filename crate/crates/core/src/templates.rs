//! Prompt templates and `{NAME}` placeholder substitution.
//!
//! Templates ship embedded in the binary and can be overridden per file by
//! pointing a [`TemplateStore`] at a directory containing files with the
//! same names.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("unresolved placeholder {{{0}}}")]
    MissingPlaceholder(String),
    #[error("template file error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateId {
    ResearcherSystem,
    ResearcherInitial,
    WriterInitial,
    WriterLater,
    WriterResponse,
    WriterFigureExample,
    WriterLatex,
    LatexTemplate,
    ReviewerSystem,
    ReviewerInitial,
    ReviewerLater,
    EvalIndividual,
    EvalPairwise,
    Verifier,
    RetrieverExtract,
    RetrieverRefine,
    RetrieverRag,
    RetrieverCluster,
    RetrieverTransfer,
}

impl TemplateId {
    pub fn file_name(self) -> &'static str {
        match self {
            TemplateId::ResearcherSystem => "researcher_system.txt",
            TemplateId::ResearcherInitial => "researcher_initial.txt",
            TemplateId::WriterInitial => "writer_initial.txt",
            TemplateId::WriterLater => "writer_later.txt",
            TemplateId::WriterResponse => "writer_response.txt",
            TemplateId::WriterFigureExample => "writer_figure_example.txt",
            TemplateId::WriterLatex => "writer_latex.txt",
            TemplateId::LatexTemplate => "latex_template.tex",
            TemplateId::ReviewerSystem => "reviewer_system.txt",
            TemplateId::ReviewerInitial => "reviewer_initial.txt",
            TemplateId::ReviewerLater => "reviewer_later.txt",
            TemplateId::EvalIndividual => "eval_individual.txt",
            TemplateId::EvalPairwise => "eval_pairwise.txt",
            TemplateId::Verifier => "verifier.txt",
            TemplateId::RetrieverExtract => "retriever_extract.txt",
            TemplateId::RetrieverRefine => "retriever_refine.txt",
            TemplateId::RetrieverRag => "retriever_rag.txt",
            TemplateId::RetrieverCluster => "retriever_cluster.txt",
            TemplateId::RetrieverTransfer => "retriever_transfer.txt",
        }
    }

    fn embedded(self) -> &'static str {
        match self {
            TemplateId::ResearcherSystem => include_str!("../templates/researcher_system.txt"),
            TemplateId::ResearcherInitial => include_str!("../templates/researcher_initial.txt"),
            TemplateId::WriterInitial => include_str!("../templates/writer_initial.txt"),
            TemplateId::WriterLater => include_str!("../templates/writer_later.txt"),
            TemplateId::WriterResponse => include_str!("../templates/writer_response.txt"),
            TemplateId::WriterFigureExample => {
                include_str!("../templates/writer_figure_example.txt")
            }
            TemplateId::WriterLatex => include_str!("../templates/writer_latex.txt"),
            TemplateId::LatexTemplate => include_str!("../templates/latex_template.tex"),
            TemplateId::ReviewerSystem => include_str!("../templates/reviewer_system.txt"),
            TemplateId::ReviewerInitial => include_str!("../templates/reviewer_initial.txt"),
            TemplateId::ReviewerLater => include_str!("../templates/reviewer_later.txt"),
            TemplateId::EvalIndividual => include_str!("../templates/eval_individual.txt"),
            TemplateId::EvalPairwise => include_str!("../templates/eval_pairwise.txt"),
            TemplateId::Verifier => include_str!("../templates/verifier.txt"),
            TemplateId::RetrieverExtract => include_str!("../templates/retriever_extract.txt"),
            TemplateId::RetrieverRefine => include_str!("../templates/retriever_refine.txt"),
            TemplateId::RetrieverRag => include_str!("../templates/retriever_rag.txt"),
            TemplateId::RetrieverCluster => include_str!("../templates/retriever_cluster.txt"),
            TemplateId::RetrieverTransfer => include_str!("../templates/retriever_transfer.txt"),
        }
    }
}

/// Source of prompt template text.
#[derive(Debug, Clone, Default)]
pub struct TemplateStore {
    override_dir: Option<PathBuf>,
}

impl TemplateStore {
    pub fn embedded() -> Self {
        Self { override_dir: None }
    }

    pub fn with_override_dir(dir: impl Into<PathBuf>) -> Self {
        Self { override_dir: Some(dir.into()) }
    }

    pub fn text(&self, id: TemplateId) -> Result<String, TemplateError> {
        if let Some(dir) = &self.override_dir {
            let path = dir.join(id.file_name());
            if path.exists() {
                return std::fs::read_to_string(&path)
                    .map_err(|e| TemplateError::Io(format!("{}: {e}", path.display())));
            }
        }
        Ok(id.embedded().to_string())
    }
}

/// Replace each `{NAME}` placeholder with its value, then reject any
/// remaining `{UPPER_SNAKE}` token.
pub fn fill(template: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = template.to_string();
    for (name, value) in values {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    if let Some(name) = find_unresolved(&out) {
        return Err(TemplateError::MissingPlaceholder(name));
    }
    Ok(out)
}

/// First remaining `{UPPER_SNAKE}` placeholder, if any.
pub fn find_unresolved(text: &str) -> Option<String> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len()
                && (bytes[j].is_ascii_uppercase() || bytes[j] == b'_' || bytes[j].is_ascii_digit())
            {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' && bytes[i + 1].is_ascii_uppercase()
            {
                return Some(text[i + 1..j].to_string());
            }
        }
        i += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_replaces_and_checks() {
        let out = fill("client is {NAME}, limit {N}", &[("NAME", "Acme"), ("N", "8")]).unwrap();
        assert_eq!(out, "client is Acme, limit 8");
        let err = fill("hello {MISSING_ONE}", &[]).unwrap_err();
        assert!(matches!(err, TemplateError::MissingPlaceholder(p) if p == "MISSING_ONE"));
    }

    #[test]
    fn json_braces_are_not_placeholders() {
        assert_eq!(find_unresolved("{\n  \"clarity\": INT\n}"), None);
        assert_eq!(find_unresolved("{\"winner\": \"REPORT_A\"}"), None);
        assert_eq!(find_unresolved("x {DB_SCHEMA} y"), Some("DB_SCHEMA".into()));
    }

    #[test]
    fn all_embedded_templates_load() {
        let store = TemplateStore::embedded();
        for id in [
            TemplateId::ResearcherSystem,
            TemplateId::ResearcherInitial,
            TemplateId::WriterInitial,
            TemplateId::WriterLater,
            TemplateId::WriterResponse,
            TemplateId::WriterFigureExample,
            TemplateId::WriterLatex,
            TemplateId::LatexTemplate,
            TemplateId::ReviewerSystem,
            TemplateId::ReviewerInitial,
            TemplateId::ReviewerLater,
            TemplateId::EvalIndividual,
            TemplateId::EvalPairwise,
            TemplateId::Verifier,
            TemplateId::RetrieverExtract,
            TemplateId::RetrieverRefine,
            TemplateId::RetrieverRag,
            TemplateId::RetrieverCluster,
            TemplateId::RetrieverTransfer,
        ] {
            assert!(!store.text(id).unwrap().is_empty(), "{id:?} empty");
        }
    }
}
