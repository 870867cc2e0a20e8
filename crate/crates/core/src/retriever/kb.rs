//! Embedding knowledge base: ingestion, cosine k-nearest-neighbour lookup
//! and on-disk persistence (JSON manifest + packed little-endian vectors).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Embedder, RetrieverError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbItem {
    pub doc_id: String,
    pub chunk_id: usize,
    pub text: String,
    #[serde(skip)]
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub dimension: usize,
    pub items: Vec<KbItem>,
}

impl KnowledgeBase {
    pub fn new(dimension: usize) -> Self {
        Self { dimension, items: Vec::new() }
    }

    pub fn push(&mut self, item: KbItem) -> Result<(), RetrieverError> {
        if item.vector.len() != self.dimension {
            return Err(RetrieverError::DimensionMismatch {
                expected: self.dimension,
                got: item.vector.len(),
            });
        }
        if self
            .items
            .iter()
            .any(|i| i.doc_id == item.doc_id && i.chunk_id == item.chunk_id)
        {
            return Err(RetrieverError::Storage(format!(
                "duplicate chunk id {}#{}",
                item.doc_id, item.chunk_id
            )));
        }
        self.items.push(item);
        Ok(())
    }

    /// Persist as `manifest.json` (metadata, chunk text) plus `vectors.bin`
    /// (f64 little-endian, row-major in item order).
    pub fn save(&self, dir: &Path) -> Result<(), RetrieverError> {
        std::fs::create_dir_all(dir).map_err(|e| RetrieverError::Storage(e.to_string()))?;
        let manifest = serde_json::json!({
            "version": 1,
            "dimension": self.dimension,
            "items": self.items,
        });
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
        .map_err(|e| RetrieverError::Storage(e.to_string()))?;
        let mut bytes = Vec::with_capacity(self.items.len() * self.dimension * 8);
        for item in &self.items {
            for &x in &item.vector {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        std::fs::write(dir.join("vectors.bin"), bytes)
            .map_err(|e| RetrieverError::Storage(e.to_string()))
    }

    pub fn load(dir: &Path) -> Result<Self, RetrieverError> {
        let manifest: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.join("manifest.json"))
                .map_err(|e| RetrieverError::Storage(e.to_string()))?,
        )
        .map_err(|e| RetrieverError::Storage(e.to_string()))?;
        let dimension = manifest["dimension"]
            .as_u64()
            .ok_or_else(|| RetrieverError::Storage("manifest missing dimension".into()))?
            as usize;
        let mut items: Vec<KbItem> = serde_json::from_value(manifest["items"].clone())
            .map_err(|e| RetrieverError::Storage(e.to_string()))?;
        let bytes = std::fs::read(dir.join("vectors.bin"))
            .map_err(|e| RetrieverError::Storage(e.to_string()))?;
        if bytes.len() != items.len() * dimension * 8 {
            return Err(RetrieverError::Storage(format!(
                "vectors.bin holds {} bytes, expected {}",
                bytes.len(),
                items.len() * dimension * 8
            )));
        }
        for (i, item) in items.iter_mut().enumerate() {
            item.vector = bytes[i * dimension * 8..(i + 1) * dimension * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
        }
        Ok(Self { dimension, items })
    }
}

/// Split a document into page/slide units: form feeds or lines consisting
/// solely of `---` delimit chunks.
fn chunk_document(text: &str) -> Vec<String> {
    let mut chunks = Vec::new();
    let mut current = String::new();
    let mut flush = |buf: &mut String| {
        let trimmed = buf.trim();
        if !trimmed.is_empty() {
            chunks.push(trimmed.to_string());
        }
        buf.clear();
    };
    for line in text.lines() {
        if line.trim() == "---" || line.contains('\u{c}') {
            flush(&mut current);
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    flush(&mut current);
    chunks
}

/// Build a knowledge base from every readable text document in `docs_dir`.
/// Unreadable files are skipped with a warning; files are visited in name
/// order so ingestion is deterministic.
pub fn ingest(docs_dir: &Path, embedder: &dyn Embedder) -> Result<KnowledgeBase, RetrieverError> {
    let mut entries: Vec<_> = std::fs::read_dir(docs_dir)
        .map_err(|_| RetrieverError::EmptyCorpus)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    entries.sort();

    let mut kb = KnowledgeBase::new(embedder.dimension());
    for path in entries {
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("warning: skipping unreadable document {}: {e}", path.display());
                continue;
            }
        };
        let doc_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        for (chunk_id, chunk) in chunk_document(&text).into_iter().enumerate() {
            let vector = embedder.embed(&chunk);
            kb.push(KbItem { doc_id: doc_id.clone(), chunk_id, text: chunk, vector })?;
        }
    }
    if kb.items.is_empty() {
        return Err(RetrieverError::EmptyCorpus);
    }
    Ok(kb)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Top-`k` items by cosine similarity to `query_text`; ties broken by
/// (doc_id, chunk_id) ascending.
pub fn knn<'kb>(
    query_text: &str,
    kb: &'kb KnowledgeBase,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<&'kb KbItem>, RetrieverError> {
    if kb.items.is_empty() {
        return Err(RetrieverError::EmptyKb);
    }
    let query = embedder.embed(query_text);
    let mut scored: Vec<(f64, &KbItem)> =
        kb.items.iter().map(|item| (cosine(&query, &item.vector), item)).collect();
    scored.sort_by(|(sa, ia), (sb, ib)| {
        sb.partial_cmp(sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| (&ia.doc_id, ia.chunk_id).cmp(&(&ib.doc_id, ib.chunk_id)))
    });
    Ok(scored.into_iter().take(k).map(|(_, item)| item).collect())
}
