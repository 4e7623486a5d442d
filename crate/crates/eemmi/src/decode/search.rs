//! Frame-synchronous Viterbi token passing with beam pruning, forced
//! alignment over the transcript lattice, and posterior averaging.

use std::collections::HashMap;
use std::time::Instant;

use crate::decode::wfst::{Wfst, EPSILON};
use crate::error::{Error, Result};
use crate::inventory::{StateId, Transcript};
use crate::mmi::{LogPosteriorGrid, ModelParameters};

/// Seconds of audio represented by one feature frame.
pub const FRAME_PERIOD_SECONDS: f64 = 0.01;

#[derive(Debug, Clone, Copy)]
pub struct DecodeConfig {
    /// Prune tokens worse than best + beam (cost domain). May be infinite.
    pub beam: f64,
    pub max_active: usize,
    pub acoustic_scale: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 16.0,
            max_active: 2000,
            acoustic_scale: 0.7,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beam > 0.0) || self.max_active == 0 {
            return Err(Error::validation("beam and max_active must be positive"));
        }
        if !(self.acoustic_scale > 0.0 && self.acoustic_scale <= 1.0) {
            return Err(Error::validation("acoustic_scale must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub words: Vec<String>,
    /// One HMM state per frame along the best path.
    pub frame_alignment: Vec<StateId>,
    /// Tropical path cost (graph + scaled acoustic), including the final
    /// weight.
    pub score: f64,
    /// Decode wall time divided by the audio duration of this utterance.
    pub rtf: f64,
}

#[derive(Clone, Copy)]
struct Token {
    cost: f64,
    prev: usize,
    ilabel: usize,
    olabel: usize,
}

const NO_TOKEN: usize = usize::MAX;

/// Relaxes epsilon-input arcs until no token improves. Weights may be
/// negative (LM back-off), so this is a bounded worklist relaxation.
fn epsilon_closure(
    graph: &Wfst,
    arena: &mut Vec<Token>,
    active: &mut HashMap<usize, usize>,
) -> Result<()> {
    let mut work: Vec<usize> = active.keys().copied().collect();
    let budget = (graph.num_states() + 1) * (graph.num_arcs() + 1);
    let mut relaxations = 0usize;
    while let Some(s) = work.pop() {
        let tok_idx = active[&s];
        let base_cost = arena[tok_idx].cost;
        for a in graph.arcs(s) {
            if a.ilabel != EPSILON {
                continue;
            }
            let c = base_cost + a.weight;
            let better = match active.get(&a.nextstate) {
                Some(&i) => c < arena[i].cost,
                None => true,
            };
            if better {
                relaxations += 1;
                if relaxations > budget {
                    return Err(Error::validation(
                        "epsilon relaxation did not converge (negative-weight epsilon cycle?)",
                    ));
                }
                arena.push(Token {
                    cost: c,
                    prev: tok_idx,
                    ilabel: EPSILON,
                    olabel: a.olabel,
                });
                active.insert(a.nextstate, arena.len() - 1);
                work.push(a.nextstate);
            }
        }
    }
    Ok(())
}

fn prune(arena: &[Token], active: &mut HashMap<usize, usize>, cfg: &DecodeConfig) {
    if active.is_empty() {
        return;
    }
    let best = active.values().map(|&i| arena[i].cost).fold(f64::INFINITY, f64::min);
    if cfg.beam.is_finite() {
        active.retain(|_, &mut i| arena[i].cost <= best + cfg.beam);
    }
    if active.len() > cfg.max_active {
        let mut items: Vec<(f64, usize, usize)> =
            active.iter().map(|(&s, &i)| (arena[i].cost, s, i)).collect();
        items.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        items.truncate(cfg.max_active);
        active.clear();
        for (_, s, i) in items {
            active.insert(s, i);
        }
    }
}

/// Frame-synchronous beam search over a decode graph whose input labels are
/// the inventory states. The acoustic cost of consuming state c at frame t
/// is −acoustic_scale · (y<sub>t,c</sub> − ω<sub>c</sub>); with an infinite
/// beam the result is the exact Viterbi path.
pub fn viterbi_beam_decode(
    graph: &Wfst,
    y: &LogPosteriorGrid,
    params: &ModelParameters,
    cfg: &DecodeConfig,
) -> Result<DecodeResult> {
    cfg.validate()?;
    let l = params.num_states();
    if y.states() != l {
        return Err(Error::shape("grid states do not match the model".to_string()));
    }
    if graph.isyms.len() != l + 1 {
        return Err(Error::shape(format!(
            "graph input alphabet has {} symbols, expected {} states plus epsilon",
            graph.isyms.len(),
            l
        )));
    }
    let started = Instant::now();
    let frames = y.frames();

    let mut arena: Vec<Token> = vec![Token {
        cost: 0.0,
        prev: NO_TOKEN,
        ilabel: EPSILON,
        olabel: EPSILON,
    }];
    let mut active: HashMap<usize, usize> = HashMap::new();
    active.insert(graph.start(), 0);
    epsilon_closure(graph, &mut arena, &mut active)?;

    for t in 0..frames {
        let mut next: HashMap<usize, usize> = HashMap::new();
        for (&s, &tok_idx) in active.iter() {
            let base = arena[tok_idx].cost;
            for a in graph.arcs(s) {
                if a.ilabel == EPSILON {
                    continue;
                }
                let c = a.ilabel - 1;
                let acoustic = -cfg.acoustic_scale * y.pseudo_loglik(t, c, params);
                let cost = base + a.weight + acoustic;
                let better = match next.get(&a.nextstate) {
                    Some(&i) => cost < arena[i].cost,
                    None => true,
                };
                if better {
                    arena.push(Token {
                        cost,
                        prev: tok_idx,
                        ilabel: a.ilabel,
                        olabel: a.olabel,
                    });
                    next.insert(a.nextstate, arena.len() - 1);
                }
            }
        }
        active = next;
        if active.is_empty() {
            return Err(Error::EmptyBeam);
        }
        epsilon_closure(graph, &mut arena, &mut active)?;
        prune(&arena, &mut active, cfg);
    }

    // Best final token; ties break toward the lower graph state id.
    let mut best: Option<(f64, usize, usize)> = None;
    for (&s, &i) in active.iter() {
        if !graph.is_final(s) {
            continue;
        }
        let total = arena[i].cost + graph.final_weight(s);
        let cand = (total, s, i);
        best = match best {
            None => Some(cand),
            Some(b) => {
                if cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1) {
                    Some(cand)
                } else {
                    Some(b)
                }
            }
        };
    }
    let (score, _, mut idx) = best.ok_or(Error::EmptyBeam)?;

    let mut words_rev = Vec::new();
    let mut align_rev = Vec::new();
    while idx != NO_TOKEN {
        let tok = arena[idx];
        if tok.olabel != EPSILON {
            words_rev.push(graph.osyms.name(tok.olabel).to_string());
        }
        if tok.ilabel != EPSILON {
            align_rev.push(tok.ilabel - 1);
        }
        idx = tok.prev;
    }
    words_rev.reverse();
    align_rev.reverse();
    debug_assert_eq!(align_rev.len(), frames);

    let elapsed = started.elapsed().as_secs_f64();
    let audio_seconds = frames as f64 * FRAME_PERIOD_SECONDS;
    Ok(DecodeResult {
        words: words_rev,
        frame_alignment: align_rev,
        score,
        rtf: elapsed / audio_seconds,
    })
}

/// Max-probability state path through the transcript lattice. Every
/// transcript position must be visited by an emitting frame, so the output
/// collapses exactly to the transcript.
pub fn forced_align(
    y: &LogPosteriorGrid,
    gamma: &Transcript,
    params: &ModelParameters,
) -> Result<Vec<StateId>> {
    let frames = y.frames();
    let g = gamma.states();
    let k_max = gamma.k();
    if y.states() != params.num_states() {
        return Err(Error::shape("grid states do not match the model".to_string()));
    }
    if frames < k_max + 1 {
        return Err(Error::InfeasibleTranscript {
            needed: k_max + 1,
            got: frames,
        });
    }
    let lm = params.state_lm();
    let width = k_max + 1;
    let neg = f64::NEG_INFINITY;
    let mut score = vec![neg; frames * width];
    let mut came_from_advance = vec![false; frames * width];

    score[0] = params.log_p_stay(g[0]) + y.pseudo_loglik(0, g[0], params);
    for t in 1..frames {
        for k in 0..width.min(t + 1) {
            let stay = score[(t - 1) * width + k] + params.log_p_stay(g[k]);
            let advance = if k > 0 {
                score[(t - 1) * width + k - 1]
                    + params.log_p_leave(g[k - 1])
                    + lm.log_prob(g[k - 1], g[k])
            } else {
                neg
            };
            let (val, adv) = if advance > stay { (advance, true) } else { (stay, false) };
            if val > neg {
                score[t * width + k] = val + y.pseudo_loglik(t, g[k], params);
                came_from_advance[t * width + k] = adv;
            }
        }
    }

    if score[(frames - 1) * width + k_max] == neg {
        return Err(Error::NonFinite("no feasible alignment path".to_string()));
    }
    let mut alignment = vec![0; frames];
    let mut k = k_max;
    for t in (0..frames).rev() {
        alignment[t] = g[k];
        if came_from_advance[t * width + k] {
            k -= 1;
        }
    }
    debug_assert_eq!(k, 0);
    Ok(alignment)
}

/// Log of the arithmetic mean of the exponentiated grids. Transition and
/// prior parameters are never averaged; downstream consumers keep the
/// first model's.
pub fn ensemble_average(grids: &[&LogPosteriorGrid]) -> Result<LogPosteriorGrid> {
    let first = grids.first().ok_or_else(|| Error::validation("no grids to average"))?;
    let (frames, states) = (first.frames(), first.states());
    if grids.iter().any(|g| g.frames() != frames || g.states() != states) {
        return Err(Error::shape("ensemble grids have mixed shapes".to_string()));
    }
    let ln_n = (grids.len() as f64).ln();
    let mut out = Vec::with_capacity(frames * states);
    for t in 0..frames {
        for c in 0..states {
            let mut m = f64::NEG_INFINITY;
            for g in grids {
                m = m.max(g.at(t, c));
            }
            let s: f64 = grids.iter().map(|g| (g.at(t, c) - m).exp()).sum();
            out.push(m + s.ln() - ln_n);
        }
    }
    LogPosteriorGrid::new(frames, states, out)
}
