//! CTC loss and best-path alignment, the comparison baseline.
//!
//! Shares the network output grid and the blank state with the MMI system;
//! the start/end outputs simply never appear in CTC targets.

use crate::error::{Error, Result};
use crate::inventory::{collapse_states, StateId, BLANK};
use crate::mmi::LogPosteriorGrid;

/// A CTC target: the label sequence and its blank-interleaved expansion.
#[derive(Debug, Clone)]
pub struct CtcLabeling {
    labels: Vec<StateId>,
    expanded: Vec<StateId>,
    blank: StateId,
}

impl CtcLabeling {
    pub fn new(labels: Vec<StateId>, blank: StateId) -> Result<Self> {
        if labels.iter().any(|&l| l == blank) {
            return Err(Error::validation("labels must not contain the blank"));
        }
        let mut expanded = Vec::with_capacity(2 * labels.len() + 1);
        expanded.push(blank);
        for &l in &labels {
            expanded.push(l);
            expanded.push(blank);
        }
        Ok(CtcLabeling { labels, expanded, blank })
    }

    /// Default blank from the shared state inventory.
    pub fn from_labels(labels: Vec<StateId>) -> Result<Self> {
        CtcLabeling::new(labels, BLANK)
    }

    pub fn labels(&self) -> &[StateId] {
        &self.labels
    }

    pub fn expanded(&self) -> &[StateId] {
        &self.expanded
    }

    pub fn blank(&self) -> StateId {
        self.blank
    }

    /// Minimum number of frames with the standard topology: one per label
    /// plus a mandatory blank between identical neighbors.
    pub fn min_frames(&self) -> usize {
        let repeats = self.labels.windows(2).filter(|w| w[0] == w[1]).count();
        self.labels.len() + repeats
    }
}

#[derive(Debug, Clone)]
pub struct CtcLossOutput {
    /// log P(labels | y); never positive.
    pub loss: f64,
    /// T×L gradient through the output normalization; rows sum to 0.
    pub grad_y: Vec<f64>,
}

fn logsumexp3(a: f64, b: f64, c: f64) -> f64 {
    let m = a.max(b).max(c);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp() + (c - m).exp()).ln()
}

/// Standard CTC forward-backward: blanks skippable, a skip over an
/// identical label is forbidden.
pub fn ctc_loss_and_grad(y: &LogPosteriorGrid, labeling: &CtcLabeling) -> Result<CtcLossOutput> {
    let frames = y.frames();
    let l = y.states();
    let exp_syms = labeling.expanded();
    let s_len = exp_syms.len();
    if let Some(&sym) = exp_syms.iter().find(|&&s| s >= l) {
        return Err(Error::shape(format!("label {sym} out of range (L={l})")));
    }
    let needed = labeling.min_frames();
    if frames < needed {
        return Err(Error::InfeasibleTranscript { needed, got: frames });
    }

    let skip_allowed =
        |s: usize| s >= 2 && exp_syms[s] != labeling.blank() && exp_syms[s] != exp_syms[s - 2];

    let mut alpha = vec![f64::NEG_INFINITY; frames * s_len];
    alpha[0] = y.at(0, exp_syms[0]);
    if s_len > 1 {
        alpha[1] = y.at(0, exp_syms[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let stay = alpha[(t - 1) * s_len + s];
            let step = if s >= 1 { alpha[(t - 1) * s_len + s - 1] } else { f64::NEG_INFINITY };
            let skip = if skip_allowed(s) {
                alpha[(t - 1) * s_len + s - 2]
            } else {
                f64::NEG_INFINITY
            };
            alpha[t * s_len + s] = logsumexp3(stay, step, skip) + y.at(t, exp_syms[s]);
        }
    }
    let last = (frames - 1) * s_len;
    let loss = if s_len > 1 {
        logsumexp3(alpha[last + s_len - 1], alpha[last + s_len - 2], f64::NEG_INFINITY)
    } else {
        alpha[last]
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite("CTC loss".into()));
    }

    let mut beta = vec![f64::NEG_INFINITY; frames * s_len];
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let stay = beta[(t + 1) * s_len + s] + y.at(t + 1, exp_syms[s]);
            let step = if s + 1 < s_len {
                beta[(t + 1) * s_len + s + 1] + y.at(t + 1, exp_syms[s + 1])
            } else {
                f64::NEG_INFINITY
            };
            let skip = if s + 2 < s_len && skip_allowed(s + 2) {
                beta[(t + 1) * s_len + s + 2] + y.at(t + 1, exp_syms[s + 2])
            } else {
                f64::NEG_INFINITY
            };
            beta[t * s_len + s] = logsumexp3(stay, step, skip);
        }
    }

    // Occupancies, normalized per frame for robustness on long inputs.
    let mut grad_y = vec![0.0; frames * l];
    let mut weights = vec![0.0; s_len];
    for t in 0..frames {
        let mut m = f64::NEG_INFINITY;
        for s in 0..s_len {
            weights[s] = alpha[t * s_len + s] + beta[t * s_len + s];
            m = m.max(weights[s]);
        }
        let mut z = 0.0;
        for w in weights.iter_mut() {
            *w = (*w - m).exp();
            z += *w;
        }
        for s in 0..s_len {
            grad_y[t * l + exp_syms[s]] += weights[s] / z;
        }
        for c in 0..l {
            grad_y[t * l + c] -= y.at(t, c).exp();
        }
    }

    Ok(CtcLossOutput { loss, grad_y })
}

/// Frame-wise argmax decoding; ties break toward the lowest state id.
/// The collapsed output erases repeats, then blanks.
pub fn ctc_best_path_align(y: &LogPosteriorGrid) -> (Vec<StateId>, Vec<StateId>) {
    let frames = y.frames();
    let l = y.states();
    let mut path = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut best = 0;
        for c in 1..l {
            if y.at(t, c) > y.at(t, best) {
                best = c;
            }
        }
        path.push(best);
    }
    let labels: Vec<StateId> =
        collapse_states(&path).into_iter().filter(|&c| c != BLANK).collect();
    (path, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmi::LogPosteriorGrid;
    use crate::testkit;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Small alphabets for kernel tests: blank=2 per the shared inventory,
    // ids 3.. are labels.
    fn grid_from_probs(rows: &[Vec<f64>]) -> LogPosteriorGrid {
        let l = rows[0].len();
        let y: Vec<f64> = rows.iter().flat_map(|r| r.iter().map(|p| p.ln())).collect();
        LogPosteriorGrid::new(rows.len(), l, y).unwrap()
    }

    /// Definition-level oracle: enumerate all paths, collapse repeats, drop
    /// blanks, keep those matching the labels.
    fn brute_force_ctc(y: &LogPosteriorGrid, labeling: &CtcLabeling) -> f64 {
        let frames = y.frames();
        let l = y.states();
        let mut total = 0.0f64;
        let mut path = vec![0usize; frames];
        loop {
            let mapped: Vec<StateId> = collapse_states(&path)
                .into_iter()
                .filter(|&c| c != labeling.blank())
                .collect();
            if mapped == labeling.labels() {
                let mut p = 1.0;
                for (t, &c) in path.iter().enumerate() {
                    p *= y.at(t, c).exp();
                }
                total += p;
            }
            // Odometer increment.
            let mut i = 0;
            loop {
                if i == frames {
                    return total.ln();
                }
                path[i] += 1;
                if path[i] < l {
                    break;
                }
                path[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn single_frame_single_label() {
        let y = grid_from_probs(&[vec![0.1, 0.1, 0.3, 0.5]]);
        let labeling = CtcLabeling::from_labels(vec![3]).unwrap();
        let out = ctc_loss_and_grad(&y, &labeling).unwrap();
        assert!((out.loss - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frame_three_paths() {
        // Labels [a] with a=3: paths (bl,a), (a,bl), (a,a).
        let y = grid_from_probs(&[vec![0.1, 0.2, 0.3, 0.4], vec![0.25, 0.15, 0.35, 0.25]]);
        let labeling = CtcLabeling::from_labels(vec![3]).unwrap();
        let out = ctc_loss_and_grad(&y, &labeling).unwrap();
        let expect: f64 = 0.3 * 0.25 + 0.4 * 0.35 + 0.4 * 0.25;
        assert!((out.loss - expect.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_rows_sum_to_zero_and_loss_nonpositive() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = testkit::random_grid(6, 5, &mut rng);
        let labeling = CtcLabeling::new(vec![3, 4, 3], 2).unwrap();
        let out = ctc_loss_and_grad(&y, &labeling).unwrap();
        assert!(out.loss <= 0.0);
        for t in 0..6 {
            let row: f64 = out.grad_y[t * 5..(t + 1) * 5].iter().sum();
            assert!(row.abs() <= 1e-9, "row {t} sums to {row}");
        }
    }

    #[test]
    fn matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..12 {
            let l = 5;
            let frames = rng.gen_range(3..=6);
            let n_labels = rng.gen_range(1..=3);
            let labels: Vec<StateId> = (0..n_labels).map(|_| rng.gen_range(3..l)).collect();
            let labeling = CtcLabeling::new(labels, 2).unwrap();
            if frames < labeling.min_frames() {
                continue;
            }
            let y = testkit::random_grid(frames, l, &mut rng);
            let out = ctc_loss_and_grad(&y, &labeling).unwrap();
            let bf = brute_force_ctc(&y, &labeling);
            assert!((out.loss - bf).abs() < 1e-9, "{} vs {bf}", out.loss);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let y = testkit::random_grid(6, 5, &mut rng);
        let labeling = CtcLabeling::new(vec![3, 3, 4], 2).unwrap();
        let err = testkit::ctc_fd_check(&y, &labeling, 1e-4);
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn infeasible_length_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = testkit::random_grid(2, 5, &mut rng);
        // [a,a] needs 3 frames.
        let labeling = CtcLabeling::new(vec![3, 3], 2).unwrap();
        assert!(matches!(
            ctc_loss_and_grad(&y, &labeling),
            Err(Error::InfeasibleTranscript { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn best_path_collapse() {
        // Argmax sequence a,a,bl,b -> labels a,b (a=3, b=4).
        let y = grid_from_probs(&[
            vec![0.05, 0.05, 0.1, 0.7, 0.1],
            vec![0.05, 0.05, 0.1, 0.7, 0.1],
            vec![0.05, 0.05, 0.7, 0.1, 0.1],
            vec![0.05, 0.05, 0.1, 0.1, 0.7],
        ]);
        let (path, labels) = ctc_best_path_align(&y);
        assert_eq!(path, vec![3, 3, 2, 4]);
        assert_eq!(labels, vec![3, 4]);
    }

    #[test]
    fn best_path_all_blank_and_ties() {
        let y = grid_from_probs(&[vec![0.2, 0.2, 0.4, 0.1, 0.1]]);
        let (path, labels) = ctc_best_path_align(&y);
        assert_eq!(path, vec![2]);
        assert!(labels.is_empty());
        // Exact tie between ids 0 and 1: lowest id wins.
        let y = grid_from_probs(&[vec![0.4, 0.4, 0.1, 0.05, 0.05]]);
        let (path, _) = ctc_best_path_align(&y);
        assert_eq!(path, vec![0]);
    }
}
