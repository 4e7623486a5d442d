//! Evaluation metrics: WER/PER via Levenshtein alignment with
//! substitution/insertion/deletion counts, frame-level alignment accuracy,
//! and real-time-factor accounting.

use std::fmt::Write as _;

use crate::decode::{GraphStats, FRAME_PERIOD_SECONDS};
use crate::error::{Error, Result};
use crate::inventory::StateId;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditStats {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_len: usize,
}

impl EditStats {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn rate(&self) -> f64 {
        if self.ref_len == 0 {
            if self.errors() == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.errors() as f64 / self.ref_len as f64
        }
    }

    pub fn add(&mut self, other: &EditStats) {
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.ref_len += other.ref_len;
    }
}

/// Levenshtein alignment with unit costs; ties prefer substitution, then
/// deletion, then insertion, so the counts are deterministic.
pub fn edit_stats<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditStats {
    let n = reference.len();
    let m = hypothesis.len();
    let mut dist = vec![0usize; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        dist[idx(i, 0)] = i;
    }
    for j in 0..=m {
        dist[idx(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dist[idx(i - 1, j - 1)] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = dist[idx(i - 1, j)] + 1;
            let ins = dist[idx(i, j - 1)] + 1;
            dist[idx(i, j)] = sub.min(del).min(ins);
        }
    }
    let mut stats = EditStats {
        ref_len: n,
        ..EditStats::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let cur = dist[idx(i, j)];
        if i > 0 && j > 0 {
            let matched = reference[i - 1] == hypothesis[j - 1];
            if dist[idx(i - 1, j - 1)] + usize::from(!matched) == cur {
                if !matched {
                    stats.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dist[idx(i - 1, j)] + 1 == cur {
            stats.deletions += 1;
            i -= 1;
            continue;
        }
        stats.insertions += 1;
        j -= 1;
    }
    stats
}

/// Micro-averaged error rate over utterance pairs matched by id.
pub fn compute_error_rate<T: PartialEq>(
    refs: &[(String, Vec<T>)],
    hyps: &[(String, Vec<T>)],
) -> Result<EditStats> {
    if refs.len() != hyps.len() {
        return Err(Error::validation(format!(
            "reference has {} utterances, hypothesis {}",
            refs.len(),
            hyps.len()
        )));
    }
    let mut total = EditStats::default();
    for ((rid, r), (hid, h)) in refs.iter().zip(hyps.iter()) {
        if rid != hid {
            return Err(Error::validation(format!(
                "utterance id mismatch: `{rid}` vs `{hid}`"
            )));
        }
        total.add(&edit_stats(r, h));
    }
    Ok(total)
}

/// Fraction of frames whose state id matches the gold alignment,
/// micro-averaged over utterances.
pub fn alignment_accuracy(
    gold: &[(String, Vec<StateId>)],
    hyp: &[(String, Vec<StateId>)],
) -> Result<f64> {
    if gold.len() != hyp.len() {
        return Err(Error::validation("alignment utterance counts differ"));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for ((gid, g), (hid, h)) in gold.iter().zip(hyp.iter()) {
        if gid != hid {
            return Err(Error::validation(format!(
                "utterance id mismatch: `{gid}` vs `{hid}`"
            )));
        }
        if g.len() != h.len() {
            return Err(Error::shape(format!(
                "alignment length mismatch for `{gid}`: {} vs {}",
                g.len(),
                h.len()
            )));
        }
        hits += g.iter().zip(h.iter()).filter(|(a, b)| a == b).count();
        total += g.len();
    }
    Ok(hits as f64 / total.max(1) as f64)
}

/// Duration-weighted mean real-time factor: total decode seconds divided by
/// total audio seconds (frames × frame period).
pub fn measure_rtf(runs: &[(usize, f64)]) -> f64 {
    let audio: f64 = runs.iter().map(|&(frames, _)| frames as f64 * FRAME_PERIOD_SECONDS).sum();
    let wall: f64 = runs.iter().map(|&(_, secs)| secs).sum();
    if audio == 0.0 {
        0.0
    } else {
        wall / audio
    }
}

/// Per-system evaluation summary.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub system: String,
    pub wer: EditStats,
    pub per: EditStats,
    pub alignment_accuracy: Option<f64>,
    pub mean_rtf: f64,
    pub graph: Option<GraphStats>,
}

pub const EVAL_CSV_HEADER: &str =
    "system,wer,per,substitutions,insertions,deletions,ref_words,alignment_accuracy,mean_rtf,graph_states,graph_arcs,graph_bytes";

impl EvalReport {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        format!(
            "{},{:.6},{:.6},{},{},{},{},{},{:.6},{},{},{}",
            self.system,
            self.wer.rate(),
            self.per.rate(),
            self.wer.substitutions,
            self.wer.insertions,
            self.wer.deletions,
            self.wer.ref_len,
            opt(self.alignment_accuracy.map(|a| format!("{a:.6}"))),
            self.mean_rtf,
            opt(self.graph.map(|g| g.states.to_string())),
            opt(self.graph.map(|g| g.arcs.to_string())),
            opt(self.graph.map(|g| g.serialized_bytes.to_string())),
        )
    }

    pub fn text_block(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "system             : {}", self.system);
        let _ = writeln!(
            out,
            "WER                : {:.2}%  (S={} I={} D={} / N={})",
            100.0 * self.wer.rate(),
            self.wer.substitutions,
            self.wer.insertions,
            self.wer.deletions,
            self.wer.ref_len
        );
        let _ = writeln!(out, "PER                : {:.2}%", 100.0 * self.per.rate());
        if let Some(acc) = self.alignment_accuracy {
            let _ = writeln!(out, "alignment accuracy : {:.2}%", 100.0 * acc);
        }
        let _ = writeln!(out, "mean RTF           : {:.4}", self.mean_rtf);
        if let Some(g) = self.graph {
            let _ = writeln!(
                out,
                "graph              : {} states, {} arcs, {} bytes",
                g.states, g.arcs, g.serialized_bytes
            );
        }
        out
    }
}
