//! CTC loss (log-space forward-backward), greedy decoding, and word error
//! rate.
//!
//! Blank is fixed to id 0 everywhere; label sequences carry only non-blank
//! ids in `[1, vocab)`. The loss kernel runs in f64 internally regardless of
//! the tensor element type so the 32-bit training path shares code with the
//! 64-bit oracle tests.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BLANK: usize = 0;

/// Stand-in for -inf in log space. Large enough that any finite log-prob is
/// absorbed on addition, small enough to never overflow under `exp`.
pub(crate) const LOG_ZERO: f64 = -1e30;

#[inline]
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a <= LOG_ZERO {
        return b;
    }
    if b <= LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Minimum frames needed to emit `labels`: one per label plus one separator
/// blank per adjacent repeat.
pub fn required_frames(labels: &[usize]) -> usize {
    let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
    labels.len() + repeats
}

pub fn check_feasible(frames: usize, labels: &[usize]) -> Result<()> {
    let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
    if frames < labels.len() + repeats {
        return Err(Error::CtcInfeasible {
            frames,
            label_len: labels.len(),
            repeats,
        });
    }
    Ok(())
}

pub fn check_labels(labels: &[usize], vocab: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l == BLANK || l >= vocab) {
        return Err(Error::InvalidArgument(format!(
            "label id {bad} outside [1, {vocab})"
        )));
    }
    Ok(())
}

#[inline]
fn ext_label(labels: &[usize], s: usize) -> usize {
    if s % 2 == 0 {
        BLANK
    } else {
        labels[s / 2]
    }
}

/// Negative log-likelihood of `labels` under `lp` (row-major `[t_len, vocab]`
/// log-probs). Assumes labels validated and feasible.
pub(crate) fn ctc_nll<T: Scalar>(lp: &[T], t_len: usize, vocab: usize, labels: &[usize]) -> f64 {
    let s_len = 2 * labels.len() + 1;
    let get = |t: usize, k: usize| lp[t * vocab + k].to_f64();

    let mut alpha = vec![LOG_ZERO; s_len];
    alpha[0] = get(0, BLANK);
    if s_len > 1 {
        alpha[1] = get(0, ext_label(labels, 1));
    }
    let mut prev = vec![LOG_ZERO; s_len];
    for t in 1..t_len {
        std::mem::swap(&mut prev, &mut alpha);
        for s in 0..s_len {
            let lab = ext_label(labels, s);
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if s >= 2 && lab != BLANK && lab != ext_label(labels, s - 2) {
                a = log_add(a, prev[s - 2]);
            }
            alpha[s] = a + get(t, lab);
        }
    }
    let mut logp = alpha[s_len - 1];
    if s_len > 1 {
        logp = log_add(logp, alpha[s_len - 2]);
    }
    -logp
}

/// Loss and gradient w.r.t. the log-probs: the full alpha/beta recursion.
/// Returned gradient is `[t_len * vocab]` in f64.
pub(crate) fn ctc_nll_grad<T: Scalar>(
    lp: &[T],
    t_len: usize,
    vocab: usize,
    labels: &[usize],
) -> (f64, Vec<f64>) {
    let s_len = 2 * labels.len() + 1;
    let get = |t: usize, k: usize| lp[t * vocab + k].to_f64();
    let idx = |t: usize, s: usize| t * s_len + s;

    let mut alpha = vec![LOG_ZERO; t_len * s_len];
    alpha[idx(0, 0)] = get(0, BLANK);
    if s_len > 1 {
        alpha[idx(0, 1)] = get(0, ext_label(labels, 1));
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let lab = ext_label(labels, s);
            let mut a = alpha[idx(t - 1, s)];
            if s >= 1 {
                a = log_add(a, alpha[idx(t - 1, s - 1)]);
            }
            if s >= 2 && lab != BLANK && lab != ext_label(labels, s - 2) {
                a = log_add(a, alpha[idx(t - 1, s - 2)]);
            }
            alpha[idx(t, s)] = a + get(t, lab);
        }
    }
    let mut logp = alpha[idx(t_len - 1, s_len - 1)];
    if s_len > 1 {
        logp = log_add(logp, alpha[idx(t_len - 1, s_len - 2)]);
    }

    // beta[t][s]: log-probability of completing the sequence from state s
    // given frames t+1.. (the emission at t itself is excluded).
    let mut beta = vec![LOG_ZERO; t_len * s_len];
    beta[idx(t_len - 1, s_len - 1)] = 0.0;
    if s_len > 1 {
        beta[idx(t_len - 1, s_len - 2)] = 0.0;
    }
    for t in (0..t_len.saturating_sub(1)).rev() {
        for s in 0..s_len {
            let mut b = get(t + 1, ext_label(labels, s)) + beta[idx(t + 1, s)];
            if s + 1 < s_len {
                b = log_add(
                    b,
                    get(t + 1, ext_label(labels, s + 1)) + beta[idx(t + 1, s + 1)],
                );
            }
            if s + 2 < s_len {
                let lab2 = ext_label(labels, s + 2);
                if lab2 != BLANK && lab2 != ext_label(labels, s) {
                    b = log_add(b, get(t + 1, lab2) + beta[idx(t + 1, s + 2)]);
                }
            }
            beta[idx(t, s)] = b;
        }
    }

    // d(-logp)/d lp[t, k] = -sum of posterior path mass through symbol k at t.
    let mut grad = vec![0.0f64; t_len * vocab];
    let mut acc = vec![LOG_ZERO; vocab];
    for t in 0..t_len {
        acc.iter_mut().for_each(|v| *v = LOG_ZERO);
        for s in 0..s_len {
            let k = ext_label(labels, s);
            acc[k] = log_add(acc[k], alpha[idx(t, s)] + beta[idx(t, s)]);
        }
        for (k, &a) in acc.iter().enumerate() {
            if a > LOG_ZERO / 2.0 {
                grad[t * vocab + k] = -((a - logp).exp());
            }
        }
    }
    (-logp, grad)
}

/// Negative log-likelihood of a single example. `log_probs` is `[T', V]`;
/// `labels` excludes blank. The differentiable path is the `ctc_loss` graph
/// op, which shares this kernel.
pub fn ctc_loss<T: Scalar>(log_probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let s = log_probs.shape();
    if s.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "ctc_loss: expected [T, V] log-probs, got {s:?}"
        )));
    }
    let (t_len, vocab) = (s[0], s[1]);
    check_labels(labels, vocab)?;
    check_feasible(t_len, labels)?;
    Ok(ctc_nll(log_probs.data(), t_len, vocab, labels))
}

/// Best-path decoding: frame-wise argmax, collapse adjacent repeats, drop
/// blanks. Ties resolve to the lowest id.
pub fn greedy_decode<T: Scalar>(log_probs: &Tensor<T>) -> Vec<usize> {
    let s = log_probs.shape();
    assert_eq!(s.len(), 2, "greedy_decode expects [T, V]");
    let (t_len, vocab) = (s[0], s[1]);
    let data = log_probs.data();
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for t in 0..t_len {
        let row = &data[t * vocab..(t + 1) * vocab];
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        if best != prev && best != BLANK {
            out.push(best);
        }
        prev = best;
    }
    out
}

/// Word-level edit-distance report.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WerReport {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_words: usize,
    pub wer: f64,
}

impl WerReport {
    pub fn edits(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Minimal word-level edit distance with uniform costs. Ties in the
/// backtrace prefer match/substitution, then deletion, then insertion.
pub fn wer<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<WerReport> {
    if reference.is_empty() {
        return Err(Error::InvalidArgument("wer: empty reference".into()));
    }
    let n = reference.len();
    let m = hypothesis.len();
    let mut d = vec![0usize; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for j in 0..=m {
        d[at(0, j)] = j;
    }
    for i in 0..=n {
        d[at(i, 0)] = i;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[at(i - 1, j - 1)]
                + usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            let del = d[at(i - 1, j)] + 1;
            let ins = d[at(i, j - 1)] + 1;
            d[at(i, j)] = sub.min(del).min(ins);
        }
    }

    let (mut i, mut j) = (n, m);
    let (mut subs, mut ins, mut dels) = (0usize, 0usize, 0usize);
    while i > 0 || j > 0 {
        let cur = d[at(i, j)];
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            if cur == d[at(i - 1, j - 1)] + usize::from(!same) {
                if !same {
                    subs += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cur == d[at(i - 1, j)] + 1 {
            dels += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }

    Ok(WerReport {
        substitutions: subs,
        insertions: ins,
        deletions: dels,
        reference_words: n,
        wer: (subs + ins + dels) as f64 / n as f64,
    })
}
