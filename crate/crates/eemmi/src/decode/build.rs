//! Constructions of the decode-graph components: the grammar acceptor G
//! from a word n-gram LM, the lexicon transducer L (with the blank rules),
//! the HMM transducer H carrying the trained transition weights, and the
//! CTC token transducer T, plus the composed HLG / TLG pipelines.

use std::collections::HashMap;

use crate::decode::compose::compose;
use crate::decode::wfst::{Arc, SymbolTable, Wfst, EPSILON};
use crate::error::{Error, Result};
use crate::inventory::{Lexicon, StateInventory, BLANK, END, START};
use crate::lm::{WordId, WordNgramLM, LN_10};
use crate::mmi::ModelParameters;

pub const SENT_BEGIN: &str = "<s>";
pub const SENT_END: &str = "</s>";

/// Input/output table over the inventory units; label = state id + 1.
pub fn unit_symbols(inv: &StateInventory) -> SymbolTable {
    SymbolTable::from_names(inv.names())
}

/// Word table for G/L: `<eps>` plus the LM vocabulary in order.
pub fn word_symbols(lm: &WordNgramLM) -> SymbolTable {
    SymbolTable::from_names(lm.vocab())
}

/// Grammar acceptor over words. States are n-gram contexts; arc weights are
/// −ln P from the LM; back-off arcs are epsilon arcs weighted by the
/// back-off weight. `<s>` anchors the start context and `</s>` terms become
/// final weights; an LM without `</s>` makes every state final.
pub fn build_g(lm: &WordNgramLM) -> Result<Wfst> {
    if lm.vocab().is_empty() {
        return Err(Error::validation("empty LM vocabulary"));
    }
    let words = word_symbols(lm);
    let mut g = Wfst::new(words.clone(), words);

    let begin = lm.word_id(SENT_BEGIN);
    let end = lm.word_id(SENT_END);

    // Context states: the empty context plus every proper prefix of an
    // n-gram entry.
    let mut states: HashMap<Vec<WordId>, usize> = HashMap::new();
    let null_state = g.add_state();
    states.insert(Vec::new(), null_state);
    for n in 2..=lm.order() {
        let mut contexts: Vec<Vec<WordId>> =
            lm.grams(n).keys().map(|k| k[..n - 1].to_vec()).collect();
        contexts.sort();
        for ctx in contexts {
            if !states.contains_key(&ctx) {
                let s = g.add_state();
                states.insert(ctx, s);
            }
        }
    }

    let next_context = |mut ctx: Vec<WordId>, states: &HashMap<Vec<WordId>, usize>| -> Vec<WordId> {
        let keep = lm.order() - 1;
        if ctx.len() > keep {
            ctx.drain(..ctx.len() - keep);
        }
        while !states.contains_key(&ctx) {
            ctx.remove(0);
        }
        ctx
    };

    // Word arcs (deterministically ordered).
    for n in 1..=lm.order() {
        let mut keys: Vec<&Vec<WordId>> = lm.grams(n).keys().collect();
        keys.sort();
        for key in keys {
            let entry = &lm.grams(n)[key];
            let w = key[n - 1];
            if Some(w) == begin {
                continue; // sentence begin is positional, never consumed
            }
            let ctx = &key[..n - 1];
            let Some(&src) = states.get(ctx) else { continue };
            if Some(w) == end {
                // Sentence end becomes a final weight on the context state.
                let weight = -LN_10 * entry.log10_prob;
                if weight < g.final_weight(src) {
                    g.set_final(src, weight);
                }
                continue;
            }
            let mut dst_ctx = ctx.to_vec();
            dst_ctx.push(w);
            let dst_ctx = next_context(dst_ctx, &states);
            let dst = states[&dst_ctx];
            let label = w as usize + 1; // symbol table offsets by <eps>
            g.add_arc(
                src,
                Arc {
                    ilabel: label,
                    olabel: label,
                    weight: -LN_10 * entry.log10_prob,
                    nextstate: dst,
                },
            );
        }
    }

    // Back-off epsilon arcs from every non-empty context that carries one.
    let mut ctx_list: Vec<(Vec<WordId>, usize)> =
        states.iter().map(|(k, &v)| (k.clone(), v)).collect();
    ctx_list.sort();
    for (ctx, src) in ctx_list {
        if ctx.is_empty() {
            continue;
        }
        if let Some(entry) = lm.entry(&ctx) {
            if let Some(bow) = entry.backoff_log10 {
                let dst = states[&ctx[1..].to_vec()];
                g.add_arc(
                    src,
                    Arc {
                        ilabel: EPSILON,
                        olabel: EPSILON,
                        weight: -LN_10 * bow,
                        nextstate: dst,
                    },
                );
            }
        }
    }

    if end.is_none() {
        for s in 0..g.num_states() {
            g.set_final(s, 0.0);
        }
    }

    let start_ctx: Vec<WordId> = match begin {
        Some(b) if states.contains_key(&vec![b]) => vec![b],
        _ => Vec::new(),
    };
    g.set_start(states[&start_ctx]);
    Ok(g.connect())
}

/// Lexicon transducer: accepts full unit chains
/// start · (blank · word-units)+ · blank · end, emitting the word on its
/// first phoneme. A blank is required between identical adjacent phonemes
/// inside a word.
pub fn build_l(lexicon: &Lexicon, inv: &StateInventory, word_syms: &SymbolTable) -> Result<Wfst> {
    if lexicon.is_empty() {
        return Err(Error::validation("empty lexicon"));
    }
    let units = unit_symbols(inv);
    let mut l = Wfst::new(units, word_syms.clone());
    let s_init = l.add_state();
    let s_loop = l.add_state();
    let s_ready = l.add_state();
    let s_final = l.add_state();
    l.set_start(s_init);
    l.set_final(s_final, 0.0);
    let unit = |c: usize| c + 1;
    l.add_arc(s_init, Arc { ilabel: unit(START), olabel: EPSILON, weight: 0.0, nextstate: s_loop });
    l.add_arc(s_loop, Arc { ilabel: unit(BLANK), olabel: EPSILON, weight: 0.0, nextstate: s_ready });
    l.add_arc(s_ready, Arc { ilabel: unit(END), olabel: EPSILON, weight: 0.0, nextstate: s_final });

    for (word, phones) in lexicon.iter() {
        let olabel = word_syms
            .label(word)
            .ok_or_else(|| Error::validation(format!("word `{word}` missing from word symbols")))?;
        let mut cur = s_ready;
        for (i, &p) in phones.iter().enumerate() {
            if i > 0 && phones[i - 1] == p {
                let mid = l.add_state();
                l.add_arc(cur, Arc { ilabel: unit(BLANK), olabel: EPSILON, weight: 0.0, nextstate: mid });
                cur = mid;
            }
            let last = i + 1 == phones.len();
            let dst = if last { s_loop } else { l.add_state() };
            l.add_arc(
                cur,
                Arc {
                    ilabel: unit(p),
                    olabel: if i == 0 { olabel } else { EPSILON },
                    weight: 0.0,
                    nextstate: dst,
                },
            );
            cur = dst;
        }
    }
    Ok(l)
}

/// CTC-style lexicon: plain phoneme-to-word concatenation without boundary
/// units (the token transducer owns all blank handling).
pub fn build_l_ctc(lexicon: &Lexicon, inv: &StateInventory, word_syms: &SymbolTable) -> Result<Wfst> {
    if lexicon.is_empty() {
        return Err(Error::validation("empty lexicon"));
    }
    let units = unit_symbols(inv);
    let mut l = Wfst::new(units, word_syms.clone());
    let s_loop = l.add_state();
    l.set_start(s_loop);
    l.set_final(s_loop, 0.0);
    let unit = |c: usize| c + 1;
    for (word, phones) in lexicon.iter() {
        let olabel = word_syms
            .label(word)
            .ok_or_else(|| Error::validation(format!("word `{word}` missing from word symbols")))?;
        let mut cur = s_loop;
        for (i, &p) in phones.iter().enumerate() {
            let last = i + 1 == phones.len();
            let dst = if last { s_loop } else { l.add_state() };
            l.add_arc(
                cur,
                Arc {
                    ilabel: unit(p),
                    olabel: if i == 0 { olabel } else { EPSILON },
                    weight: 0.0,
                    nextstate: dst,
                },
            );
            cur = dst;
        }
    }
    Ok(l)
}

/// HMM transducer: for every state c a free entry arc c:c, a self-loop
/// weighted −ln p_c(0), and an epsilon exit weighted −ln p_c(1). A run of
/// identical frame labels maps to its unit emitted once.
pub fn build_h(params: &ModelParameters, inv: &StateInventory) -> Result<Wfst> {
    if params.num_states() != inv.len() {
        return Err(Error::shape("model states do not match the inventory".to_string()));
    }
    let units = unit_symbols(inv);
    let mut h = Wfst::new(units.clone(), units);
    let h0 = h.add_state();
    h.set_start(h0);
    h.set_final(h0, 0.0);
    for c in 0..inv.len() {
        let hc = h.add_state();
        let label = c + 1;
        h.add_arc(h0, Arc { ilabel: label, olabel: label, weight: 0.0, nextstate: hc });
        h.add_arc(hc, Arc { ilabel: label, olabel: EPSILON, weight: -params.log_p_stay(c), nextstate: hc });
        h.add_arc(hc, Arc { ilabel: EPSILON, olabel: EPSILON, weight: -params.log_p_leave(c), nextstate: h0 });
    }
    Ok(h)
}

/// CTC token transducer: optional blanks, free self-loops on repeated
/// units, and a mandatory blank between identical units. All weights zero.
pub fn build_t_ctc(inv: &StateInventory) -> Result<Wfst> {
    let units = unit_symbols(inv);
    let mut t = Wfst::new(units.clone(), units);
    let t0 = t.add_state();
    t.set_start(t0);
    t.set_final(t0, 0.0);
    let blank_label = BLANK + 1;
    t.add_arc(t0, Arc { ilabel: blank_label, olabel: EPSILON, weight: 0.0, nextstate: t0 });

    let phones: Vec<usize> = inv.phoneme_ids().collect();
    let mut unit_state = HashMap::new();
    for &u in &phones {
        let s = t.add_state();
        t.set_final(s, 0.0);
        unit_state.insert(u, s);
    }
    for &u in &phones {
        let su = unit_state[&u];
        let label = u + 1;
        t.add_arc(t0, Arc { ilabel: label, olabel: label, weight: 0.0, nextstate: su });
        t.add_arc(su, Arc { ilabel: label, olabel: EPSILON, weight: 0.0, nextstate: su });
        t.add_arc(su, Arc { ilabel: blank_label, olabel: EPSILON, weight: 0.0, nextstate: t0 });
        for &v in &phones {
            if v != u {
                let lv = v + 1;
                t.add_arc(su, Arc { ilabel: lv, olabel: lv, weight: 0.0, nextstate: unit_state[&v] });
            }
        }
    }
    Ok(t)
}

/// H ∘ (L ∘ G): frame states to word sequences under the trained
/// transitions and the decode LM.
pub fn build_hlg(
    params: &ModelParameters,
    inv: &StateInventory,
    lexicon: &Lexicon,
    lm: &WordNgramLM,
) -> Result<Wfst> {
    let g = build_g(lm)?;
    let l = build_l(lexicon, inv, &g.isyms)?;
    let lg = compose(&l, &g)?;
    let h = build_h(params, inv)?;
    compose(&h, &lg)
}

/// T ∘ (L ∘ G): the CTC decode graph.
pub fn build_tlg(inv: &StateInventory, lexicon: &Lexicon, lm: &WordNgramLM) -> Result<Wfst> {
    let g = build_g(lm)?;
    let l = build_l_ctc(lexicon, inv, &g.isyms)?;
    let lg = compose(&l, &g)?;
    let t = build_t_ctc(inv)?;
    compose(&t, &lg)
}
