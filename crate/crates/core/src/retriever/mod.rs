//! Knowledge distillation: ingest expert documents into an embedding store,
//! extract and refine question/hypothesis pairs, cluster them into depth-2
//! hypothesis trees, and transfer a source tree to a new client by
//! validating each leaf with generated SQL.

mod embed;
mod kb;
mod tree;

pub use embed::{Embedder, HashEmbedder, HttpEmbedder};
pub use kb::{cosine, ingest, knn, KbItem, KnowledgeBase};
pub use tree::{HypothesisTree, RootNode, SubNode};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, DbHandle, QueryLimits, SqlQuery};
use crate::gateway::{complete, Backend, ChatTranscript, GatewayError, Message, SamplingParams};
use crate::researcher::ClientBrief;
use crate::templates::{fill, TemplateError, TemplateId, TemplateStore};

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("no readable documents found in corpus directory")]
    EmptyCorpus,
    #[error("knowledge base is empty")]
    EmptyKb,
    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("reply violates the expected schema: {0}")]
    SchemaViolation(String),
    #[error("hypothesis tree depth is not exactly 2 below each root: {0}")]
    DepthViolation(String),
    #[error("hypothesis tree has no roots")]
    EmptyTree,
    #[error("knowledge base storage: {0}")]
    Storage(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// One extracted question/hypothesis pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QAPair {
    pub question: String,
    pub hypothesis: String,
}

impl QAPair {
    pub fn new(
        question: impl Into<String>,
        hypothesis: impl Into<String>,
    ) -> Result<Self, RetrieverError> {
        let question = question.into();
        let hypothesis = hypothesis.into();
        if question.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(RetrieverError::SchemaViolation(
                "question and hypothesis must be nonempty".into(),
            ));
        }
        Ok(Self { question, hypothesis })
    }
}

/// Outcome of validating one tree leaf with generated SQL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationRecord {
    /// (root index, subhypothesis index, leaf index) into the source tree.
    pub node_path: (usize, usize, usize),
    pub generated_sql: String,
    pub executed: bool,
    /// Present iff `executed`; true means the query ran and returned rows.
    pub result: Option<bool>,
}

fn strip_fence(text: &str) -> &str {
    let trimmed = text.trim();
    if !trimmed.starts_with("```") {
        return trimmed;
    }
    let inner = trimmed.trim_start_matches("```");
    let inner = inner.strip_prefix("json").unwrap_or(inner);
    inner.trim_end_matches("```").trim()
}

/// Parse a structured pair reply: a JSON array of `{question, hypothesis}`
/// objects (a bare object is accepted as a one-element array). Entries that
/// are the literal string "None", and a bare "None" reply, yield nothing.
pub fn parse_pairs(reply: &str) -> Result<Vec<QAPair>, RetrieverError> {
    let body = strip_fence(reply);
    if body.eq_ignore_ascii_case("none") || body.eq_ignore_ascii_case("\"none\"") {
        return Ok(Vec::new());
    }
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| RetrieverError::SchemaViolation(format!("invalid JSON: {e}")))?;
    let entries = match value {
        serde_json::Value::Array(a) => a,
        obj @ serde_json::Value::Object(_) => vec![obj],
        other => {
            return Err(RetrieverError::SchemaViolation(format!(
                "expected array or object, got {other}"
            )))
        }
    };
    let mut pairs = Vec::new();
    for entry in entries {
        if entry.as_str().map(|s| s.eq_ignore_ascii_case("none")).unwrap_or(false) {
            continue;
        }
        let pair: QAPair = serde_json::from_value(entry)
            .map_err(|e| RetrieverError::SchemaViolation(e.to_string()))?;
        if pair.question.trim().is_empty() || pair.hypothesis.trim().is_empty() {
            return Err(RetrieverError::SchemaViolation("empty question or hypothesis".into()));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Call the backend and parse with one corrective retry on schema violations.
fn call_and_parse<T>(
    backend: &dyn Backend,
    mut transcript: ChatTranscript,
    parse: impl Fn(&str) -> Result<T, RetrieverError>,
) -> Result<T, RetrieverError> {
    let params = SamplingParams::review();
    let reply = complete(&transcript, &params, backend)?;
    let text = reply.joined_text();
    match parse(&text) {
        Ok(v) => Ok(v),
        Err(first) => {
            transcript.push(reply)?;
            transcript
                .push(Message::user(format!(
                    "Your reply could not be parsed: {first}. Re-send only the corrected JSON."
                )))
                ?;
            let retry = complete(&transcript, &params, backend)?;
            parse(&retry.joined_text())
        }
    }
}

/// Extract question/hypothesis pairs from raw document chunks.
pub fn extract_pairs(
    doc_chunks: &[String],
    backend: &dyn Backend,
    store: &TemplateStore,
) -> Result<Vec<QAPair>, RetrieverError> {
    if doc_chunks.is_empty() {
        return Ok(Vec::new());
    }
    let mut material = String::new();
    for (i, chunk) in doc_chunks.iter().enumerate() {
        material.push_str(&format!("## Unit {}\n{}\n\n", i + 1, chunk.trim_end()));
    }
    let mut transcript = ChatTranscript::new();
    transcript
        .push(Message::system(store.text(TemplateId::RetrieverExtract)?))
        ?;
    transcript.push(Message::user(material))?;
    call_and_parse(backend, transcript, parse_pairs)
}

/// Filter, refine and merge pairs. Empty input short-circuits without a call.
pub fn refine_merge(
    pairs: &[QAPair],
    backend: &dyn Backend,
    store: &TemplateStore,
) -> Result<Vec<QAPair>, RetrieverError> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let serialized = serde_json::to_string_pretty(pairs).expect("pairs serialize");
    let mut transcript = ChatTranscript::new();
    transcript
        .push(Message::system(store.text(TemplateId::RetrieverRefine)?))
        ?;
    transcript.push(Message::user(serialized))?;
    call_and_parse(backend, transcript, parse_pairs)
}

/// Refine one pair against the top-5 retrieved context chunks. An empty
/// knowledge base degenerates to the identity with a warning.
pub fn rag_augment(
    pair: &QAPair,
    kb: &KnowledgeBase,
    embedder: &dyn Embedder,
    backend: &dyn Backend,
    store: &TemplateStore,
) -> Result<QAPair, RetrieverError> {
    if kb.items.is_empty() {
        eprintln!("warning: empty knowledge base, returning pair unchanged");
        return Ok(pair.clone());
    }
    let hits = knn(&pair.question, kb, 5, embedder)?;
    let mut context = String::new();
    for (i, item) in hits.iter().enumerate() {
        context.push_str(&format!(
            "[Context chunk {} — {}#{}]\n{}\n\n",
            i + 1,
            item.doc_id,
            item.chunk_id,
            item.text.trim_end()
        ));
    }
    let prompt = fill(
        &store.text(TemplateId::RetrieverRag)?,
        &[
            ("QUESTION", pair.question.as_str()),
            ("HYPOTHESIS", pair.hypothesis.as_str()),
            ("CONTEXT", context.as_str()),
        ],
    )?;
    let mut transcript = ChatTranscript::new();
    transcript.push(Message::user(prompt))?;
    call_and_parse(backend, transcript, |text| {
        let pairs = parse_pairs(text)?;
        match pairs.len() {
            1 => Ok(pairs.into_iter().next().unwrap()),
            n => Err(RetrieverError::SchemaViolation(format!("expected one refined pair, got {n}"))),
        }
    })
}

/// Cluster pairs into a depth-2 hypothesis tree.
pub fn build_tree(
    pairs: &[QAPair],
    backend: &dyn Backend,
    store: &TemplateStore,
) -> Result<HypothesisTree, RetrieverError> {
    let mut rendered = String::new();
    for pair in pairs {
        rendered.push_str(&format!(
            "- Question: {}\n  Hypothesis: {}\n",
            pair.question, pair.hypothesis
        ));
    }
    let prompt = fill(&store.text(TemplateId::RetrieverCluster)?, &[("PAIRS", rendered.as_str())])?;
    let mut transcript = ChatTranscript::new();
    transcript.push(Message::user(prompt))?;
    call_and_parse(backend, transcript, |text| HypothesisTree::parse(strip_fence(text)))
}

/// Transfer a source tree to a new client: generate SQL for each leaf,
/// execute it, re-prompt failing leaves with the error text, and after
/// `max_passes` prune every leaf that never validated.
pub fn transfer(
    source: &HypothesisTree,
    brief: &ClientBrief,
    db: &DbHandle,
    backend: &dyn Backend,
    max_passes: usize,
    query_limits: &QueryLimits,
    store: &TemplateStore,
) -> Result<(HypothesisTree, Vec<ValidationRecord>), RetrieverError> {
    let params = SamplingParams::review();
    let category = brief.category.as_deref().unwrap_or("general");
    let template = store.text(TemplateId::RetrieverTransfer)?;
    let mut records = Vec::new();
    let mut validated: Vec<(usize, usize, usize)> = Vec::new();

    for (ri, root) in source.roots.iter().enumerate() {
        for (si, sub) in root.subhypotheses.iter().enumerate() {
            for (li, leaf) in sub.subsubhypotheses.iter().enumerate() {
                let path = (ri, si, li);
                let hypothesis_text = format!(
                    "Hypothesis: {}\nSubhypothesis: {}\nEvidence to validate: {}",
                    root.hypothesis, sub.subhypothesis, leaf
                );
                let prompt = fill(
                    &template,
                    &[
                        ("DATA_TABLE_NAME", "orders"),
                        ("CLIENT_COMPANY", brief.client_company.as_str()),
                        ("CATEGORY", category),
                        ("DB_SCHEMA", &DbHandle::schema_text()),
                        ("HYPOTHESES", hypothesis_text.as_str()),
                    ],
                )?;
                let mut transcript = ChatTranscript::new();
                transcript.push(Message::user(prompt))?;

                for _pass in 0..max_passes {
                    let reply = complete(&transcript, &params, backend)?;
                    let text = reply.joined_text();
                    transcript.push(reply)?;

                    let blocks = crate::researcher::fenced_blocks(&text);
                    let sql_text = blocks.first().map(|b| b.trim().to_string());
                    let (record, feedback) = match sql_text {
                        None => (
                            ValidationRecord {
                                node_path: path,
                                generated_sql: String::new(),
                                executed: false,
                                result: None,
                            },
                            "Your reply contained no SQL query in a triple-backtick fence. \
                             Re-send exactly one query."
                                .to_string(),
                        ),
                        Some(sql) => match SqlQuery::new(sql.clone(), 0)
                            .and_then(|q| data::execute(db, &q, query_limits))
                        {
                            Ok(result) => {
                                // Empty results cannot ground a hypothesis.
                                let ok = result.row_count > 0;
                                let feedback = if ok {
                                    String::new()
                                } else {
                                    "The query executed but returned zero rows, so it cannot \
                                     validate the hypothesis. Adjust the filters and re-send."
                                        .to_string()
                                };
                                (
                                    ValidationRecord {
                                        node_path: path,
                                        generated_sql: sql,
                                        executed: true,
                                        result: Some(ok),
                                    },
                                    feedback,
                                )
                            }
                            Err(e) => (
                                ValidationRecord {
                                    node_path: path,
                                    generated_sql: sql,
                                    executed: true,
                                    result: Some(false),
                                },
                                format!("The query failed: {e}. Correct it and re-send."),
                            ),
                        },
                    };
                    let ok = record.result == Some(true) && record.executed;
                    records.push(record);
                    if ok {
                        validated.push(path);
                        break;
                    }
                    transcript
                        .push(Message::user(feedback))
                        ?;
                }
            }
        }
    }

    let pruned = source.retain_leaves(|path| validated.contains(&path));
    match pruned {
        Some(tree) => Ok((tree, records)),
        None => Err(RetrieverError::EmptyTree),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;
    use std::io::Write as _;

    fn store() -> TemplateStore {
        TemplateStore::embedded()
    }

    #[test]
    fn parse_pairs_cases() {
        assert_eq!(parse_pairs("None").unwrap(), vec![]);
        assert_eq!(parse_pairs("\"None\"").unwrap(), vec![]);
        let two = parse_pairs(
            r#"[{"question":"q1","hypothesis":"h1"},{"question":"q2","hypothesis":"h2"}]"#,
        )
        .unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two[1].hypothesis, "h2");
        // "None" entries inside the array are dropped.
        let one =
            parse_pairs(r#"["None", {"question":"q","hypothesis":"h"}]"#).unwrap();
        assert_eq!(one.len(), 1);
        // Extra keys violate the schema.
        let err =
            parse_pairs(r#"[{"question":"q","hypothesis":"h","extra":1}]"#).unwrap_err();
        assert!(matches!(err, RetrieverError::SchemaViolation(_)));
    }

    #[test]
    fn extract_pairs_scripted() {
        let backend = ScriptedBackend::from_texts(["None"]);
        let pairs = extract_pairs(&["nothing useful".into()], &backend, &store()).unwrap();
        assert!(pairs.is_empty());

        let backend = ScriptedBackend::from_texts(
            [r#"[{"question":"q1","hypothesis":"h1"},{"question":"q2","hypothesis":"h2"}]"#],
        );
        let pairs = extract_pairs(&["unit".into()], &backend, &store()).unwrap();
        assert_eq!(pairs.len(), 2);
    }

    #[test]
    fn extract_pairs_retries_once_then_errors() {
        let backend = ScriptedBackend::from_texts(["not json", "still not json"]);
        let err = extract_pairs(&["unit".into()], &backend, &store()).unwrap_err();
        assert!(matches!(err, RetrieverError::SchemaViolation(_)));
        assert_eq!(backend.remaining(), 0);

        let backend = ScriptedBackend::from_texts(
            ["garbage", r#"[{"question":"q","hypothesis":"h"}]"#],
        );
        let pairs = extract_pairs(&["unit".into()], &backend, &store()).unwrap();
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn refine_merge_cases() {
        // Empty input never touches the backend.
        let backend = ScriptedBackend::from_texts([]);
        assert!(refine_merge(&[], &backend, &store()).unwrap().is_empty());

        let input = vec![
            QAPair::new("q1", "h1").unwrap(),
            QAPair::new("q2", "h2").unwrap(),
            QAPair::new("q3", "h3").unwrap(),
            QAPair::new("q4", "h4").unwrap(),
        ];
        let backend = ScriptedBackend::from_texts(
            [r#"[{"question":"q12","hypothesis":"h12"},{"question":"q34","hypothesis":"h34"}]"#],
        );
        let merged = refine_merge(&input, &backend, &store()).unwrap();
        assert_eq!(merged.len(), 2);

        // Pass-through identity.
        let passthrough = serde_json::to_string(&input).unwrap();
        let backend = ScriptedBackend::from_texts([passthrough.as_str()]);
        assert_eq!(refine_merge(&input, &backend, &store()).unwrap(), input);
    }

    fn tiny_kb(n: usize) -> KnowledgeBase {
        let embedder = HashEmbedder::default();
        let mut kb = KnowledgeBase::new(embedder.dimension());
        for i in 0..n {
            let text = format!("chunk number {i} about retail topic {i}");
            kb.push(KbItem {
                doc_id: "doc".into(),
                chunk_id: i,
                vector: embedder.embed(&text),
                text,
            })
            .unwrap();
        }
        kb
    }

    #[test]
    fn rag_augment_empty_kb_is_identity() {
        let pair = QAPair::new("q", "h").unwrap();
        let backend = ScriptedBackend::from_texts([]);
        let kb = KnowledgeBase::new(HashEmbedder::default().dimension());
        let out =
            rag_augment(&pair, &kb, &HashEmbedder::default(), &backend, &store()).unwrap();
        assert_eq!(out, pair);
    }

    #[test]
    fn rag_prompt_carries_exactly_five_chunks() {
        let pair = QAPair::new("retail topic 3", "initial hypothesis").unwrap();
        let kb = tiny_kb(8);
        let backend = ScriptedBackend::from_entries(vec![
            crate::gateway::ScriptEntry::matching(
                "[Context chunk 5 —",
                r#"{"question":"retail topic 3","hypothesis":"refined"}"#,
            ),
        ]);
        let out =
            rag_augment(&pair, &kb, &HashEmbedder::default(), &backend, &store()).unwrap();
        assert_eq!(out.hypothesis, "refined");
    }

    const TREE_REPLY: &str = r#"{
      "hypotheses": [
        {
          "hypothesis": "Expand gadgets",
          "subhypotheses": [
            {
              "subhypothesis": "Gadgets drive margin",
              "subsubhypotheses": ["Gadget margin is 40% in 2024"]
            }
          ]
        }
      ]
    }"#;

    #[test]
    fn build_tree_scripted() {
        let pairs = vec![QAPair::new("q", "Expand gadgets").unwrap()];
        let backend = ScriptedBackend::from_texts([TREE_REPLY]);
        let tree = build_tree(&pairs, &backend, &store()).unwrap();
        assert_eq!(tree.roots.len(), 1);
        assert_eq!(tree.roots[0].subhypotheses[0].subsubhypotheses.len(), 1);
        // Input pair text appears in the tree.
        assert!(tree.roots[0].hypothesis.contains("Expand gadgets"));
    }

    #[test]
    fn build_tree_depth_violation() {
        // Leaves must be strings, not further nested objects.
        let deep = r#"{"hypotheses":[{"hypothesis":"h","subhypotheses":[{"subhypothesis":"s",
            "subsubhypotheses":[{"subsubsubhypothesis":"too deep"}]}]}]}"#;
        let backend = ScriptedBackend::from_texts([deep, deep]);
        let err = build_tree(&[], &backend, &store()).unwrap_err();
        assert!(matches!(err, RetrieverError::DepthViolation(_)));
    }

    fn fixture_db() -> DbHandle {
        let path = std::env::temp_dir().join(format!("retr_fixture_{}.csv", std::process::id()));
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "order_id,order_date,company,product,category,price,quantity,customer_segment")
            .unwrap();
        for i in 0..10 {
            writeln!(f, "{i},2024-03-01,Acme,Widget,gadgets,2.0,1,consumer").unwrap();
        }
        crate::data::load_fixture(&path).unwrap()
    }

    fn brief() -> ClientBrief {
        ClientBrief::new("Acme", "- grow", Some("gadgets".into())).unwrap()
    }

    const GOOD_SQL: &str =
        "```\nSELECT COUNT(*) AS n FROM orders WHERE EXTRACT(YEAR FROM order_date) = 2024\n```";
    const BAD_SQL: &str = "```\nSELEKT nonsense\n```";

    fn two_leaf_tree() -> HypothesisTree {
        HypothesisTree::parse(
            r#"{"hypotheses":[{"hypothesis":"H","subhypotheses":[
                {"subhypothesis":"S","subsubhypotheses":["leaf A","leaf B"]}]}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn transfer_all_success_keeps_tree_intact() {
        let tree = two_leaf_tree();
        let backend = ScriptedBackend::from_texts([GOOD_SQL, GOOD_SQL]);
        let (out, records) = transfer(
            &tree,
            &brief(),
            &fixture_db(),
            &backend,
            3,
            &QueryLimits::default(),
            &store(),
        )
        .unwrap();
        assert_eq!(out, tree);
        assert_eq!(records.len(), 2);
        assert!(records.iter().all(|r| r.executed && r.result == Some(true)));
    }

    #[test]
    fn transfer_repairs_on_second_pass() {
        let tree = two_leaf_tree();
        // Leaf A: bad SQL then repaired; leaf B: good immediately.
        let backend = ScriptedBackend::from_texts([BAD_SQL, GOOD_SQL, GOOD_SQL]);
        let (out, records) = transfer(
            &tree,
            &brief(),
            &fixture_db(),
            &backend,
            3,
            &QueryLimits::default(),
            &store(),
        )
        .unwrap();
        assert_eq!(out, tree);
        let leaf_a: Vec<_> =
            records.iter().filter(|r| r.node_path == (0, 0, 0)).collect();
        assert_eq!(leaf_a.len(), 2);
        assert_eq!(leaf_a[0].result, Some(false));
        assert_eq!(leaf_a[1].result, Some(true));
    }

    #[test]
    fn transfer_prunes_never_validated_leaf() {
        let tree = two_leaf_tree();
        // Leaf A fails all 3 passes; leaf B validates.
        let backend =
            ScriptedBackend::from_texts([BAD_SQL, BAD_SQL, BAD_SQL, GOOD_SQL]);
        let (out, records) = transfer(
            &tree,
            &brief(),
            &fixture_db(),
            &backend,
            3,
            &QueryLimits::default(),
            &store(),
        )
        .unwrap();
        assert_eq!(out.roots[0].subhypotheses[0].subsubhypotheses, vec!["leaf B".to_string()]);
        assert_eq!(records.len(), 4);
    }

    #[test]
    fn transfer_pruning_everything_is_an_error() {
        let tree = HypothesisTree::single("H", "S", "leaf");
        let backend = ScriptedBackend::from_texts([BAD_SQL, BAD_SQL, BAD_SQL]);
        let err = transfer(
            &tree,
            &brief(),
            &fixture_db(),
            &backend,
            3,
            &QueryLimits::default(),
            &store(),
        )
        .unwrap_err();
        assert!(matches!(err, RetrieverError::EmptyTree));
    }

    #[test]
    fn pipeline_determinism() {
        let run = || {
            let backend = ScriptedBackend::from_texts([TREE_REPLY]);
            build_tree(&[], &backend, &store()).unwrap()
        };
        let a = serde_json::to_string(&run()).unwrap();
        let b = serde_json::to_string(&run()).unwrap();
        assert_eq!(a, b);
    }
}
