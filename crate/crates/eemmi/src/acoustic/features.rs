//! Feature sequences, per-speaker normalization and time-extended windows.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One utterance worth of acoustic features, T×D row-major.
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub utt_id: String,
    pub speaker_id: String,
    pub dim: usize,
    pub frames: Vec<f64>,
}

impl FeatureSequence {
    pub fn new(utt_id: &str, speaker_id: &str, dim: usize, frames: Vec<f64>) -> Result<Self> {
        if dim == 0 || frames.is_empty() || frames.len() % dim != 0 {
            return Err(Error::shape(format!(
                "feature matrix of {} values is not a T x {dim} grid",
                frames.len()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("features of {utt_id}")));
        }
        Ok(FeatureSequence {
            utt_id: utt_id.to_string(),
            speaker_id: speaker_id.to_string(),
            dim,
            frames,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }
}

const VARIANCE_FLOOR: f64 = 1e-8;

/// Normalizes every feature dimension to zero mean and unit (population)
/// variance per speaker, in place. Zero-variance dimensions are floored and
/// reported as warnings.
pub fn speaker_normalize(seqs: &mut [FeatureSequence]) -> Result<Vec<String>> {
    if seqs.is_empty() {
        return Err(Error::validation("no utterances to normalize"));
    }
    let dim = seqs[0].dim;
    if seqs.iter().any(|s| s.dim != dim) {
        return Err(Error::shape("mixed feature dimensions"));
    }

    let mut by_speaker: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in seqs.iter().enumerate() {
        by_speaker.entry(s.speaker_id.clone()).or_default().push(i);
    }

    let mut warnings = Vec::new();
    for (speaker, utts) in &by_speaker {
        let mut count = 0usize;
        let mut mean = vec![0.0; dim];
        for &i in utts {
            let s = &seqs[i];
            count += s.num_frames();
            for t in 0..s.num_frames() {
                for (d, m) in mean.iter_mut().enumerate() {
                    *m += s.frame(t)[d];
                }
            }
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        let mut var = vec![0.0; dim];
        for &i in utts {
            let s = &seqs[i];
            for t in 0..s.num_frames() {
                for (d, v) in var.iter_mut().enumerate() {
                    let x = s.frame(t)[d] - mean[d];
                    *v += x * x;
                }
            }
        }
        let mut scale = vec![0.0; dim];
        for d in 0..dim {
            var[d] /= count as f64;
            if var[d] < VARIANCE_FLOOR {
                warnings.push(format!(
                    "speaker {speaker}: dimension {d} variance {:.3e} floored",
                    var[d]
                ));
                var[d] = VARIANCE_FLOOR;
            }
            scale[d] = 1.0 / var[d].sqrt();
        }
        for &i in utts {
            let s = &mut seqs[i];
            let frames = s.num_frames();
            for t in 0..frames {
                for d in 0..dim {
                    let v = &mut s.frames[t * dim + d];
                    *v = (*v - mean[d]) * scale[d];
                }
            }
        }
    }
    Ok(warnings)
}

/// Time-extended features: row t is the concatenation of frames t−F..t+F
/// with edge replication at the boundaries.
#[derive(Debug, Clone)]
pub struct WindowedFeatures {
    pub radius: usize,
    pub width: usize,
    pub frames: usize,
    pub windows: Vec<f64>,
}

impl WindowedFeatures {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.windows[t * self.width..(t + 1) * self.width]
    }
}

pub fn extract_windows(seq: &FeatureSequence, radius: usize) -> WindowedFeatures {
    let frames = seq.num_frames();
    let dim = seq.dim;
    let width = (2 * radius + 1) * dim;
    let mut windows = Vec::with_capacity(frames * width);
    for t in 0..frames {
        for off in -(radius as isize)..=(radius as isize) {
            let src = (t as isize + off).clamp(0, frames as isize - 1) as usize;
            windows.extend_from_slice(seq.frame(src));
        }
    }
    WindowedFeatures {
        radius,
        width,
        frames,
        windows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(id: &str, spk: &str, dim: usize, frames: &[f64]) -> FeatureSequence {
        FeatureSequence::new(id, spk, dim, frames.to_vec()).unwrap()
    }

    #[test]
    fn normalize_single_speaker() {
        let mut seqs = vec![seq("u1", "s1", 1, &[1.0, 3.0])];
        let warnings = speaker_normalize(&mut seqs).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(seqs[0].frames, vec![-1.0, 1.0]);
    }

    #[test]
    fn speakers_normalized_independently() {
        let mut seqs = vec![
            seq("u1", "s1", 2, &[1.0, 10.0, 3.0, 20.0]),
            seq("u2", "s2", 2, &[100.0, -5.0, 104.0, -7.0]),
        ];
        speaker_normalize(&mut seqs).unwrap();
        for s in &seqs {
            for d in 0..2 {
                let mean: f64 =
                    (0..s.num_frames()).map(|t| s.frame(t)[d]).sum::<f64>() / s.num_frames() as f64;
                assert!(mean.abs() < 1e-9, "{} dim {d}: mean {mean}", s.utt_id);
            }
        }
    }

    #[test]
    fn constant_dimension_flooring() {
        let mut seqs = vec![seq("u1", "s1", 1, &[2.0, 2.0, 2.0])];
        let warnings = speaker_normalize(&mut seqs).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(seqs[0].frames.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut seqs = vec![seq("u1", "s1", 2, &[1.0, -3.0, 4.0, 0.5, -2.0, 9.0])];
        speaker_normalize(&mut seqs).unwrap();
        let first = seqs[0].frames.clone();
        speaker_normalize(&mut seqs).unwrap();
        for (a, b) in first.iter().zip(seqs[0].frames.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn windows_zero_radius_is_identity() {
        let s = seq("u", "s", 2, &[1.0, 2.0, 3.0, 4.0]);
        let w = extract_windows(&s, 0);
        assert_eq!(w.windows, s.frames);
    }

    #[test]
    fn windows_edge_replication() {
        let s = seq("u", "s", 1, &[10.0, 20.0, 30.0]);
        let w = extract_windows(&s, 1);
        assert_eq!(w.row(0), &[10.0, 10.0, 20.0]);
        assert_eq!(w.row(1), &[10.0, 20.0, 30.0]);
        assert_eq!(w.row(2), &[20.0, 30.0, 30.0]);
    }

    #[test]
    fn windows_single_frame_replicates() {
        let s = seq("u", "s", 1, &[7.0]);
        let w = extract_windows(&s, 2);
        assert_eq!(w.row(0), &[7.0; 5]);
    }
}
