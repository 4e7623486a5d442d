//! Synthetic corpora with ground truth, evaluation metrics, and the
//! pipeline plumbing shared by the CLI and the test harness.

pub mod config;
pub mod corpus;
pub mod eval;
pub mod synth;

use std::path::Path;

use crate::acoustic::{
    extract_windows, speaker_normalize, AcousticNet, Checkpoint, TrainItem,
};
use crate::ctc::ctc_best_path_align;
use crate::decode::{ensemble_average, forced_align, viterbi_beam_decode, DecodeConfig, Wfst};
use crate::error::Result;
use crate::harness::synth::Utterance;
use crate::inventory::StateId;
use crate::mmi::ModelParameters;
use crate::par;

/// A trained system: network, transition/prior parameters and the window
/// radius its features were built with.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub net: AcousticNet,
    pub params: ModelParameters,
    pub window_radius: usize,
}

impl SystemModel {
    /// From a checkpoint, with a uniform placeholder state LM (sufficient
    /// for decoding, which only reads priors and self-loop probabilities).
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(SystemModel {
            params: ck.params_with_uniform_lm()?,
            net: ck.net.clone(),
            window_radius: ck.window_radius,
        })
    }

    pub fn from_checkpoint_with_lm(ck: &Checkpoint, state_lm: crate::lm::StateLM) -> Result<Self> {
        Ok(SystemModel {
            params: ck.params_with(state_lm)?,
            net: ck.net.clone(),
            window_radius: ck.window_radius,
        })
    }
}

/// Speaker-normalizes the given utterances and windows them into training
/// items. Normalization statistics come from exactly this utterance set.
pub fn prepare_items(utts: &[Utterance], window_radius: usize) -> Result<Vec<TrainItem>> {
    let mut features: Vec<_> = utts.iter().map(|u| u.features.clone()).collect();
    speaker_normalize(&mut features)?;
    utts.iter()
        .zip(features.into_iter())
        .map(|(u, f)| {
            TrainItem::new(&u.utt_id, extract_windows(&f, window_radius), u.transcript.clone())
        })
        .collect()
}

/// Output of a decoding pass over a set of utterances.
#[derive(Debug, Clone)]
pub struct DecodeRun {
    /// (utt_id, hypothesis words)
    pub hyps: Vec<(String, Vec<String>)>,
    /// (utt_id, per-frame state ids of the best path)
    pub alignments: Vec<(String, Vec<StateId>)>,
    /// (frames, wall seconds) per utterance, for RTF accounting.
    pub rtf_runs: Vec<(usize, f64)>,
    /// Number of graph searches performed (one per utterance, regardless of
    /// ensemble size).
    pub searches: usize,
}

impl DecodeRun {
    /// Hypothesis phoneme sequences: collapsed best-path alignments with
    /// the reserved states removed.
    pub fn hyp_phones(&self) -> Vec<(String, Vec<StateId>)> {
        self.alignments
            .iter()
            .map(|(id, a)| {
                let phones: Vec<StateId> = crate::inventory::collapse_states(a)
                    .into_iter()
                    .filter(|&s| s >= crate::inventory::RESERVED_NAMES.len())
                    .collect();
                (id.clone(), phones)
            })
            .collect()
    }
}

/// Decodes every utterance over a shared graph. With several models the
/// per-model posterior grids are averaged and a single search runs per
/// utterance; priors come from the first model.
pub fn decode_corpus(
    graph: &Wfst,
    utts: &[Utterance],
    models: &[SystemModel],
    cfg: &DecodeConfig,
) -> Result<DecodeRun> {
    assert!(!models.is_empty(), "need at least one model");
    // Window each model's view of the (speaker-normalized) features.
    let mut per_model_items = Vec::with_capacity(models.len());
    for m in models {
        per_model_items.push(prepare_items(utts, m.window_radius)?);
    }

    let decoded: Vec<Result<(String, crate::decode::DecodeResult)>> =
        par::map_indices(utts.len(), |i| {
            let mut grids = Vec::with_capacity(models.len());
            for (m, items) in models.iter().zip(per_model_items.iter()) {
                grids.push(m.net.forward(&items[i].windows)?);
            }
            let grid_refs: Vec<&crate::mmi::LogPosteriorGrid> = grids.iter().collect();
            let averaged = ensemble_average(&grid_refs)?;
            let result = viterbi_beam_decode(graph, &averaged, &models[0].params, cfg)?;
            Ok((utts[i].utt_id.clone(), result))
        });

    let mut run = DecodeRun {
        hyps: Vec::new(),
        alignments: Vec::new(),
        rtf_runs: Vec::new(),
        searches: 0,
    };
    for item in decoded {
        let (utt_id, result) = item?;
        run.searches += 1;
        let frames = result.frame_alignment.len();
        run.rtf_runs
            .push((frames, result.rtf * frames as f64 * crate::decode::FRAME_PERIOD_SECONDS));
        run.hyps.push((utt_id.clone(), result.words));
        run.alignments.push((utt_id, result.frame_alignment));
    }
    Ok(run)
}

/// Forced alignment of every utterance against its reference transcript.
/// The model's parameters must carry the real state LM.
pub fn align_corpus(utts: &[Utterance], model: &SystemModel) -> Result<Vec<(String, Vec<StateId>)>> {
    let items = prepare_items(utts, model.window_radius)?;
    let rows: Vec<Result<(String, Vec<StateId>)>> = par::map_indices(utts.len(), |i| {
        let grid = model.net.forward(&items[i].windows)?;
        let alignment = forced_align(&grid, &utts[i].transcript, &model.params)?;
        Ok((utts[i].utt_id.clone(), alignment))
    });
    rows.into_iter().collect()
}

/// CTC best-path alignment (frame argmax) of every utterance.
pub fn ctc_align_corpus(
    utts: &[Utterance],
    model: &SystemModel,
) -> Result<Vec<(String, Vec<StateId>)>> {
    let items = prepare_items(utts, model.window_radius)?;
    let rows: Vec<Result<(String, Vec<StateId>)>> = par::map_indices(utts.len(), |i| {
        let grid = model.net.forward(&items[i].windows)?;
        let (path, _) = ctc_best_path_align(&grid);
        Ok((utts[i].utt_id.clone(), path))
    });
    rows.into_iter().collect()
}

/// Writes a run manifest: tool version, invocation name and the
/// configuration entries, as plain `key = value` text.
pub fn write_manifest(path: &Path, tool: &str, entries: &[(&str, String)]) -> Result<()> {
    let mut text = String::new();
    text.push_str(&format!("tool = eemmi {}\n", env!("CARGO_PKG_VERSION")));
    text.push_str(&format!("command = {tool}\n"));
    for (k, v) in entries {
        text.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}
