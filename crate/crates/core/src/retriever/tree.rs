//! Depth-2 hypothesis tree matching the clustering output schema.

use serde::{Deserialize, Serialize};

use super::RetrieverError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubNode {
    pub subhypothesis: String,
    pub subsubhypotheses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootNode {
    pub hypothesis: String,
    pub subhypotheses: Vec<SubNode>,
}

/// Strategic hypothesis → supporting subhypotheses → evidence leaves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisTree {
    #[serde(rename = "hypotheses")]
    pub roots: Vec<RootNode>,
}

impl HypothesisTree {
    /// One root, one subhypothesis, one evidence leaf.
    pub fn single(
        hypothesis: impl Into<String>,
        subhypothesis: impl Into<String>,
        evidence: impl Into<String>,
    ) -> Self {
        Self {
            roots: vec![RootNode {
                hypothesis: hypothesis.into(),
                subhypotheses: vec![SubNode {
                    subhypothesis: subhypothesis.into(),
                    subsubhypotheses: vec![evidence.into()],
                }],
            }],
        }
    }

    /// Parse a clustering reply, distinguishing depth violations (leaves
    /// that are not plain strings, or missing levels) from other schema
    /// problems.
    pub fn parse(json: &str) -> Result<Self, RetrieverError> {
        let value: serde_json::Value = serde_json::from_str(json)
            .map_err(|e| RetrieverError::SchemaViolation(format!("invalid JSON: {e}")))?;
        // Depth check on the raw value so over-nesting is reported as such.
        if let Some(roots) = value.get("hypotheses").and_then(|v| v.as_array()) {
            for root in roots {
                let subs = root.get("subhypotheses").and_then(|v| v.as_array());
                let Some(subs) = subs else {
                    return Err(RetrieverError::DepthViolation(
                        "root without a subhypotheses array".into(),
                    ));
                };
                for sub in subs {
                    let leaves = sub.get("subsubhypotheses").and_then(|v| v.as_array());
                    let Some(leaves) = leaves else {
                        return Err(RetrieverError::DepthViolation(
                            "subhypothesis without a subsubhypotheses array".into(),
                        ));
                    };
                    if leaves.iter().any(|l| !l.is_string()) {
                        return Err(RetrieverError::DepthViolation(
                            "evidence leaves must be plain strings".into(),
                        ));
                    }
                }
            }
        }
        let tree: Self = serde_json::from_value(value)
            .map_err(|e| RetrieverError::SchemaViolation(e.to_string()))?;
        tree.validate()?;
        Ok(tree)
    }

    /// Enforce the type invariants: at least one root, every node nonempty,
    /// depth exactly 2 below each root.
    pub fn validate(&self) -> Result<(), RetrieverError> {
        if self.roots.is_empty() {
            return Err(RetrieverError::EmptyTree);
        }
        for root in &self.roots {
            if root.hypothesis.trim().is_empty() {
                return Err(RetrieverError::SchemaViolation("empty hypothesis".into()));
            }
            if root.subhypotheses.is_empty() {
                return Err(RetrieverError::DepthViolation(format!(
                    "hypothesis {:?} has no subhypotheses",
                    root.hypothesis
                )));
            }
            for sub in &root.subhypotheses {
                if sub.subhypothesis.trim().is_empty() {
                    return Err(RetrieverError::SchemaViolation("empty subhypothesis".into()));
                }
                if sub.subsubhypotheses.is_empty() {
                    return Err(RetrieverError::DepthViolation(format!(
                        "subhypothesis {:?} has no evidence leaves",
                        sub.subhypothesis
                    )));
                }
                if sub.subsubhypotheses.iter().any(|l| l.trim().is_empty()) {
                    return Err(RetrieverError::SchemaViolation("empty evidence leaf".into()));
                }
            }
        }
        Ok(())
    }

    pub fn leaf_count(&self) -> usize {
        self.roots
            .iter()
            .flat_map(|r| &r.subhypotheses)
            .map(|s| s.subsubhypotheses.len())
            .sum()
    }

    /// Keep only the leaves whose (root, sub, leaf) path satisfies `keep`;
    /// subhypotheses and roots left childless are dropped. Returns `None`
    /// when nothing survives.
    pub fn retain_leaves(&self, keep: impl Fn((usize, usize, usize)) -> bool) -> Option<Self> {
        let mut roots = Vec::new();
        for (ri, root) in self.roots.iter().enumerate() {
            let mut subs = Vec::new();
            for (si, sub) in root.subhypotheses.iter().enumerate() {
                let leaves: Vec<String> = sub
                    .subsubhypotheses
                    .iter()
                    .enumerate()
                    .filter(|(li, _)| keep((ri, si, *li)))
                    .map(|(_, l)| l.clone())
                    .collect();
                if !leaves.is_empty() {
                    subs.push(SubNode {
                        subhypothesis: sub.subhypothesis.clone(),
                        subsubhypotheses: leaves,
                    });
                }
            }
            if !subs.is_empty() {
                roots.push(RootNode { hypothesis: root.hypothesis.clone(), subhypotheses: subs });
            }
        }
        if roots.is_empty() {
            None
        } else {
            Some(Self { roots })
        }
    }

    /// Deterministic indented rendering used as few-shot prompt context.
    pub fn render_fewshot(&self) -> String {
        let mut out = String::new();
        for root in &self.roots {
            out.push_str(&format!("- Hypothesis: {}\n", root.hypothesis));
            for sub in &root.subhypotheses {
                out.push_str(&format!("  - Subhypothesis: {}\n", sub.subhypothesis));
                for leaf in &sub.subsubhypotheses {
                    out.push_str(&format!("    - Evidence: {}\n", leaf));
                }
            }
        }
        out
    }
}
