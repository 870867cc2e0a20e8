//! N×N×K comparison tensor, its two-stage aggregation, round-vs-round
//! comparison and best-of-N selection.

use serde::{Deserialize, Serialize};

use crate::gateway::{Backend, ImagePart};
use crate::templates::TemplateStore;

use super::{compare_pair, EvalError};

/// Which report is presented as REPORT_A in each repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    /// Repetitions alternate presentation order to expose position bias.
    #[default]
    Alternating,
    /// The lower index is always REPORT_A (replication mode).
    Fixed,
}

/// Antisymmetric n×n×k tensor of pair outcomes with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonTensor {
    pub n: usize,
    pub k: usize,
    /// Row-major `[i][j][r]` outcome from i's perspective.
    entries: Vec<i8>,
    /// Pairs whose judge reply never parsed (recorded as 0).
    pub flagged: Vec<(usize, usize, usize)>,
}

impl ComparisonTensor {
    pub fn new(n: usize, k: usize) -> Self {
        Self { n, k, entries: vec![0; n * n * k], flagged: Vec::new() }
    }

    fn index(&self, i: usize, j: usize, r: usize) -> usize {
        debug_assert!(i < self.n && j < self.n && r < self.k);
        (i * self.n + j) * self.k + r
    }

    pub fn get(&self, i: usize, j: usize, r: usize) -> i8 {
        self.entries[self.index(i, j, r)]
    }

    /// Record one judged comparison; `(j, i, r)` is set to the opposite
    /// sign so antisymmetry holds by construction. The diagonal stays zero.
    pub fn set(&mut self, i: usize, j: usize, r: usize, value: i8) {
        assert!((-1..=1).contains(&value), "outcome must be in {{-1, 0, 1}}");
        if i == j {
            return;
        }
        let a = self.index(i, j, r);
        self.entries[a] = value;
        let b = self.index(j, i, r);
        self.entries[b] = -value;
    }

    /// Mean over repetitions, then mean over opponents (diagonal excluded).
    pub fn aggregate(&self) -> TournamentScores {
        let mut scores = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut opponent_sum = 0.0;
            for j in 0..self.n {
                if i == j {
                    continue;
                }
                let rep_sum: f64 =
                    (0..self.k).map(|r| self.get(i, j, r) as f64).sum();
                opponent_sum += rep_sum / self.k as f64;
            }
            scores.push(opponent_sum / (self.n - 1) as f64);
        }
        TournamentScores { scores }
    }

    pub fn is_antisymmetric(&self) -> bool {
        (0..self.n).all(|i| {
            (0..self.n).all(|j| {
                (0..self.k).all(|r| self.get(i, j, r) == -self.get(j, i, r))
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentScores {
    pub scores: Vec<f64>,
}

/// Run every unordered pair `k` times through the judge.
pub fn run_tournament(
    reports: &[Vec<ImagePart>],
    k: usize,
    creators_prompt: &str,
    backend: &dyn Backend,
    order_policy: OrderPolicy,
    store: &TemplateStore,
) -> Result<(ComparisonTensor, TournamentScores), EvalError> {
    let n = reports.len();
    if n < 2 {
        return Err(EvalError::TooFewReports(n));
    }
    if k == 0 {
        return Err(EvalError::ZeroRepetitions);
    }
    let mut tensor = ComparisonTensor::new(n, k);
    for i in 0..n {
        for j in i + 1..n {
            for r in 0..k {
                let swap = matches!(order_policy, OrderPolicy::Alternating) && r % 2 == 1;
                let (a, b) = if swap { (j, i) } else { (i, j) };
                let outcome =
                    compare_pair(&reports[a], &reports[b], creators_prompt, backend, store)?;
                // Convert from A's perspective to i's perspective.
                let value = if swap { -outcome.value } else { outcome.value };
                tensor.set(i, j, r, value);
                if outcome.flagged {
                    tensor.flagged.push((i, j, r));
                }
            }
        }
    }
    let scores = tensor.aggregate();
    Ok((tensor, scores))
}

/// Compare successive rounds of one report: entry `[i][j]` for i<j is 1
/// when the later round j was judged better, −1 when worse, 0 on a draw.
pub fn compare_rounds(
    round_pages: &[Vec<ImagePart>],
    creators_prompt: &str,
    backend: &dyn Backend,
    store: &TemplateStore,
) -> Result<Vec<Vec<i8>>, EvalError> {
    let n = round_pages.len();
    let mut matrix = vec![vec![0i8; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let outcome =
                compare_pair(&round_pages[i], &round_pages[j], creators_prompt, backend, store)?;
            // The judge answers from REPORT_A's (round i's) perspective;
            // negate so 1 means the later round wins.
            matrix[i][j] = -outcome.value;
        }
    }
    Ok(matrix)
}

/// Index of the maximum score; ties break toward the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Tournament-based best-of-N selection.
pub fn select_best(
    reports: &[Vec<ImagePart>],
    k: usize,
    creators_prompt: &str,
    backend: &dyn Backend,
    order_policy: OrderPolicy,
    store: &TemplateStore,
) -> Result<usize, EvalError> {
    let (_, scores) = run_tournament(reports, k, creators_prompt, backend, order_policy, store)?;
    Ok(argmax(&scores.scores))
}
