//! Engine for automated market-report generation.
//!
//! A pipeline of cooperating agents turns a short client brief into a
//! reviewed PDF report: the researcher explores a SQL database, the writer
//! drafts markdown, renders figures and compiles LaTeX to PDF, the reviewer
//! scores each revision until it is good enough, and the evaluation module
//! ranks competing reports with pairwise LLM judgements. A retriever can
//! distill expert documents into hypothesis trees that are injected into the
//! researcher prompt as few-shot context.
//!
//! Every model interaction goes through [`gateway::Backend`], which has a
//! deterministic scripted implementation so the whole pipeline is testable
//! offline.

pub mod config;
pub mod data;
pub mod evaluation;
pub mod gateway;
pub mod orchestrator;
pub mod researcher;
pub mod retriever;
pub mod reviewer;
pub mod templates;
pub mod writer;
