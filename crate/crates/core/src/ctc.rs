//! CTC loss, greedy best-path decoding and Viterbi forced alignment.
//!
//! All recursions run in log space over the blank-interleaved extended
//! label sequence `[b, y1, b, y2, ..., b, yU, b]` of length `2U + 1`.
//! Token id 0 is the blank everywhere in this crate.

use serde::{Deserialize, Serialize};

use crate::compute::gradcheck::{central_difference, compare, GradCheckReport};
use crate::compute::{logsumexp, Graph, Tensor2D, Var};
use crate::error::{Error, Result};

pub type TokenId = usize;

pub const BLANK: TokenId = 0;

/// Per-frame log-distributions over a vocabulary whose index 0 is blank.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProbMatrix {
    values: Tensor2D,
}

impl LogProbMatrix {
    /// Validates `T >= 1`, `V >= 2` and per-row normalization within 1e-6.
    pub fn new(values: Tensor2D) -> Result<Self> {
        if values.rows() == 0 || values.cols() < 2 {
            return Err(Error::Input(format!("log-prob matrix must be at least 1x2, got {:?}", values.shape())));
        }
        for t in 0..values.rows() {
            let lse = logsumexp(values.row(t));
            if !lse.is_finite() || lse.abs() > 1e-6 {
                return Err(Error::Input(format!("frame {t} is not log-normalized (logsumexp {lse})")));
            }
        }
        Ok(Self { values })
    }

    /// Normalizes arbitrary scores row-wise.
    pub fn from_logits(logits: &Tensor2D) -> Result<Self> {
        let mut values = logits.clone();
        for t in 0..values.rows() {
            let row = values.row_mut(t);
            let lse = logsumexp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        Self::new(values)
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn vocab(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    pub fn as_tensor(&self) -> &Tensor2D {
        &self.values
    }
}

/// Non-blank label sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TargetSequence(pub Vec<TokenId>);

impl TargetSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    /// Shortest frame count admitting a valid path: one frame per token plus
    /// a separating blank between each pair of equal neighbours.
    pub fn min_frames(&self) -> usize {
        self.0.len() + self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }

    fn validate(&self, vocab: usize, frames: usize) -> Result<()> {
        if let Some(&bad) = self.0.iter().find(|&&id| id == BLANK || id >= vocab) {
            return Err(Error::Input(format!("target token {bad} outside [1, {vocab})")));
        }
        let needed = self.min_frames();
        if frames < needed {
            return Err(Error::AlignmentInfeasible { needed, frames });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentMode {
    Greedy,
    Forced,
}

impl AlignmentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Greedy => "greedy",
            Self::Forced => "forced",
        }
    }
}

/// One label (possibly blank) per frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentPath {
    pub labels: Vec<TokenId>,
    pub mode: AlignmentMode,
}

impl AlignmentPath {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn collapse(&self) -> TargetSequence {
        collapse(&self.labels)
    }

    /// `id T mode l0 l1 ... l{T-1}`, space separated.
    pub fn to_line(&self, id: &str) -> String {
        let labels: Vec<String> = self.labels.iter().map(|l| l.to_string()).collect();
        format!("{id} {} {} {}", self.labels.len(), self.mode.as_str(), labels.join(" "))
    }

    /// Inverse of [`AlignmentPath::to_line`].
    pub fn parse_line(line: &str) -> Result<(String, Self)> {
        let bad = || Error::Input(format!("malformed path line `{line}`"));
        let mut parts = line.split_whitespace();
        let id = parts.next().ok_or_else(bad)?.to_string();
        let t: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let mode = match parts.next() {
            Some("greedy") => AlignmentMode::Greedy,
            Some("forced") => AlignmentMode::Forced,
            _ => return Err(bad()),
        };
        let labels = parts.map(|p| p.parse().map_err(|_| bad())).collect::<Result<Vec<TokenId>>>()?;
        if labels.len() != t {
            return Err(Error::Input(format!("path line for {id} declares {t} frames but lists {}", labels.len())));
        }
        Ok((id, Self { labels, mode }))
    }
}

/// Merges runs of equal labels, then drops blanks.
pub fn collapse(labels: &[TokenId]) -> TargetSequence {
    let mut out = Vec::new();
    let mut prev = None;
    for &l in labels {
        if Some(l) != prev && l != BLANK {
            out.push(l);
        }
        prev = Some(l);
    }
    TargetSequence(out)
}

fn extended(target: &[TokenId]) -> Vec<TokenId> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &t in target {
        ext.push(t);
        ext.push(BLANK);
    }
    ext
}

/// Whether state `s` may be entered directly from `s - 2` (skipping a blank).
fn can_skip(ext: &[TokenId], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

fn lse3(a: f64, b: f64, c: f64) -> f64 {
    let m = a.max(b).max(c);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp() + (c - m).exp()).ln()
}

/// Loss and gradient with respect to every entry of `logp`, treated as free
/// variables (no renormalization is assumed inside the recursion).
fn loss_and_grad_raw(logp: &Tensor2D, target: &[TokenId]) -> (f64, Tensor2D) {
    let (frames, vocab) = logp.shape();
    let ext = extended(target);
    let states = ext.len();
    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; frames * states];
    let mut beta = vec![ninf; frames * states];

    alpha[0] = logp.get(0, ext[0]);
    if states > 1 {
        alpha[1] = logp.get(0, ext[1]);
    }
    for t in 1..frames {
        let (prev, cur) = alpha.split_at_mut(t * states);
        let prev = &prev[(t - 1) * states..];
        for s in 0..states {
            let a = prev[s];
            let b = if s >= 1 { prev[s - 1] } else { ninf };
            let c = if can_skip(&ext, s) { prev[s - 2] } else { ninf };
            cur[s] = lse3(a, b, c) + logp.get(t, ext[s]);
        }
    }
    let last = (frames - 1) * states;
    let log_total = if states > 1 {
        lse3(alpha[last + states - 1], alpha[last + states - 2], ninf)
    } else {
        alpha[last]
    };

    beta[last + states - 1] = logp.get(frames - 1, ext[states - 1]);
    if states > 1 {
        beta[last + states - 2] = logp.get(frames - 1, ext[states - 2]);
    }
    for t in (0..frames - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * states);
        let cur = &mut cur[t * states..];
        for s in 0..states {
            let a = next[s];
            let b = if s + 1 < states { next[s + 1] } else { ninf };
            let c = if s + 2 < states && can_skip(&ext, s + 2) { next[s + 2] } else { ninf };
            cur[s] = lse3(a, b, c) + logp.get(t, ext[s]);
        }
    }

    let mut grad = Tensor2D::zeros(frames, vocab);
    if log_total.is_finite() {
        for t in 0..frames {
            for s in 0..states {
                let i = t * states + s;
                let occ = alpha[i] + beta[i] - logp.get(t, ext[s]) - log_total;
                if occ.is_finite() {
                    let v = grad.get(t, ext[s]) - occ.exp();
                    grad.set(t, ext[s], v);
                }
            }
        }
    }
    (-log_total, grad)
}

/// Negative log of the summed probability of every path that collapses to `target`.
pub fn ctc_loss(logp: &LogProbMatrix, target: &TargetSequence) -> Result<f64> {
    target.validate(logp.vocab(), logp.frames())?;
    Ok(loss_and_grad_raw(logp.as_tensor(), target.tokens()).0)
}

/// Loss together with its gradient with respect to `logp`.
pub fn ctc_loss_and_grad(logp: &LogProbMatrix, target: &TargetSequence) -> Result<(f64, Tensor2D)> {
    target.validate(logp.vocab(), logp.frames())?;
    Ok(loss_and_grad_raw(logp.as_tensor(), target.tokens()))
}

/// Records the CTC loss of the `T x V` log-prob node `logp` in `g`.
pub fn ctc_loss_node(g: &mut Graph, logp: Var, target: &TargetSequence) -> Result<Var> {
    let value = g.value(logp);
    target.validate(value.cols(), value.rows())?;
    let (loss, grad) = loss_and_grad_raw(value, target.tokens());
    Ok(g.scalar_with_grad(logp, loss, grad))
}

/// Per-frame argmax; ties go to the lowest token id.
pub fn ctc_greedy_path(logp: &LogProbMatrix) -> AlignmentPath {
    let labels = (0..logp.frames())
        .map(|t| {
            let row = logp.row(t);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    AlignmentPath { labels, mode: AlignmentMode::Greedy }
}

/// Viterbi-best valid path for `target`. Among equally probable paths the
/// one that remains longest in each extended state wins, so every
/// transition happens as late as possible.
pub fn ctc_forced_align(logp: &LogProbMatrix, target: &TargetSequence) -> Result<AlignmentPath> {
    target.validate(logp.vocab(), logp.frames())?;
    let frames = logp.frames();
    let ext = extended(target.tokens());
    let states = ext.len();
    let ninf = f64::NEG_INFINITY;
    let mut score = vec![ninf; frames * states];
    let mut back = vec![0u8; frames * states];
    score[0] = logp.row(0)[ext[0]];
    if states > 1 {
        score[1] = logp.row(0)[ext[1]];
    }
    for t in 1..frames {
        for s in 0..states {
            let prev = (t - 1) * states;
            // Candidates in order of preference on ties: the predecessor
            // furthest behind, i.e. the path that stayed put the longest.
            let mut best = ninf;
            let mut step = 0u8;
            if can_skip(&ext, s) {
                best = score[prev + s - 2];
                step = 2;
            }
            if s >= 1 && score[prev + s - 1] > best {
                best = score[prev + s - 1];
                step = 1;
            }
            if score[prev + s] > best || best == ninf {
                best = score[prev + s];
                step = 0;
            }
            score[t * states + s] = best + logp.row(t)[ext[s]];
            back[t * states + s] = step;
        }
    }
    let last = (frames - 1) * states;
    let mut s = states - 1;
    if states > 1 && score[last + states - 2] >= score[last + states - 1] {
        s = states - 2;
    }
    let mut labels = vec![BLANK; frames];
    for t in (0..frames).rev() {
        labels[t] = ext[s];
        s -= back[t * states + s] as usize;
    }
    Ok(AlignmentPath { labels, mode: AlignmentMode::Forced })
}

/// Sum of the per-frame log-probabilities along `labels`.
pub fn path_log_prob(logp: &LogProbMatrix, labels: &[TokenId]) -> f64 {
    labels.iter().enumerate().map(|(t, &k)| logp.row(t)[k]).sum()
}

/// Compares the analytic CTC gradient with central differences (h = 1e-4)
/// on a small instance.
pub fn ctc_grad_check(logp: &LogProbMatrix, target: &TargetSequence) -> Result<GradCheckReport> {
    if logp.frames() > 8 || target.len() > 3 {
        return Err(Error::Input("gradient check is limited to T <= 8 and U <= 3".into()));
    }
    let (_, analytic) = ctc_loss_and_grad(logp, target)?;
    let numeric = central_difference(|x| loss_and_grad_raw(x, target.tokens()).0, logp.as_tensor(), 1e-4);
    Ok(compare(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(frames: usize, vocab: usize) -> LogProbMatrix {
        LogProbMatrix::new(Tensor2D::filled(frames, vocab, -(vocab as f64).ln())).unwrap()
    }

    fn peaked(labels: &[TokenId], vocab: usize) -> LogProbMatrix {
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..vocab).map(|k| if k == l { 5.0 } else { 0.0 }).collect())
            .collect();
        LogProbMatrix::from_logits(&Tensor2D::from_rows(&rows).unwrap()).unwrap()
    }

    #[test]
    fn single_frame_single_token_loss() {
        let lp = peaked(&[2], 4);
        let loss = ctc_loss(&lp, &TargetSequence(vec![2])).unwrap();
        assert!((loss + lp.row(0)[2]).abs() < 1e-12);
    }

    #[test]
    fn empty_target_is_the_all_blank_path() {
        let lp = peaked(&[1, 0], 3);
        let loss = ctc_loss(&lp, &TargetSequence::default()).unwrap();
        assert!((loss + lp.row(0)[0] + lp.row(1)[0]).abs() < 1e-12);
        let path = ctc_forced_align(&lp, &TargetSequence::default()).unwrap();
        assert_eq!(path.labels, vec![0, 0]);
    }

    #[test]
    fn collapse_rules() {
        assert_eq!(collapse(&[0, 0, 0]).0, Vec::<usize>::new());
        assert_eq!(collapse(&[2, 2, 0, 2]).0, vec![2, 2]);
        assert_eq!(collapse(&[0, 1, 1, 3, 0, 3]).0, vec![1, 3, 3]);
    }

    #[test]
    fn greedy_path_collapse() {
        let lp = peaked(&[0, 3, 3, 0, 5], 6);
        let path = ctc_greedy_path(&lp);
        assert_eq!(path.labels, vec![0, 3, 3, 0, 5]);
        assert_eq!(path.collapse().0, vec![3, 5]);
        let blanks = peaked(&[0, 0, 0], 4);
        assert!(ctc_greedy_path(&blanks).collapse().is_empty());
    }

    #[test]
    fn greedy_ties_prefer_lowest_id() {
        assert_eq!(ctc_greedy_path(&uniform(3, 4)).labels, vec![0, 0, 0]);
    }

    #[test]
    fn forced_align_without_slack_reproduces_target() {
        let lp = peaked(&[1, 3, 2], 4);
        let path = ctc_forced_align(&lp, &TargetSequence(vec![1, 3, 2])).unwrap();
        assert_eq!(path.labels, vec![1, 3, 2]);
        assert_eq!(path.mode, AlignmentMode::Forced);
    }

    #[test]
    fn repeated_tokens_need_a_separator_blank() {
        let lp = uniform(3, 3);
        let path = ctc_forced_align(&lp, &TargetSequence(vec![2, 2])).unwrap();
        assert_eq!(path.labels, vec![2, 0, 2]);
    }

    #[test]
    fn forced_align_ties_transition_late() {
        let path = ctc_forced_align(&uniform(5, 3), &TargetSequence(vec![1, 2])).unwrap();
        assert_eq!(path.labels, vec![0, 0, 0, 1, 2]);
        assert_eq!(path.collapse().0, vec![1, 2]);
    }

    #[test]
    fn infeasible_and_out_of_range_targets() {
        let lp = uniform(2, 3);
        assert!(matches!(
            ctc_loss(&lp, &TargetSequence(vec![1, 1])),
            Err(Error::AlignmentInfeasible { needed: 3, frames: 2 })
        ));
        assert!(matches!(ctc_forced_align(&lp, &TargetSequence(vec![1, 2, 1])), Err(Error::AlignmentInfeasible { .. })));
        assert!(matches!(ctc_loss(&lp, &TargetSequence(vec![3])), Err(Error::Input(_))));
        assert!(matches!(ctc_loss(&lp, &TargetSequence(vec![0])), Err(Error::Input(_))));
        assert!(ctc_grad_check(&lp, &TargetSequence(vec![1, 1])).is_err());
    }

    #[test]
    fn log_prob_matrix_validation() {
        assert!(LogProbMatrix::new(Tensor2D::zeros(2, 3)).is_err());
        assert!(LogProbMatrix::new(Tensor2D::zeros(0, 3)).is_err());
        assert!(LogProbMatrix::new(Tensor2D::zeros(2, 1)).is_err());
        assert!(LogProbMatrix::new(uniform(2, 3).as_tensor().clone()).is_ok());
    }

    #[test]
    fn single_path_gradient_is_minus_one() {
        let lp = peaked(&[1], 3);
        let (_, grad) = ctc_loss_and_grad(&lp, &TargetSequence(vec![1])).unwrap();
        assert_eq!(grad.data(), &[0.0, -1.0, 0.0]);
        assert!(ctc_grad_check(&lp, &TargetSequence(vec![1])).unwrap().passed(1e-3));
    }
}
