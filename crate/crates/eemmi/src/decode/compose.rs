//! Transducer composition with epsilon handling, followed by connect.

use std::collections::HashMap;

use crate::decode::wfst::{Arc, Wfst, EPSILON};
use crate::error::{Error, Result};

/// Composes `a` with `b` (a's output alphabet must equal b's input
/// alphabet). Epsilon moves use a sequencing filter: between matches all
/// a-side epsilon moves come before any b-side ones, so each path pair is
/// represented exactly once.
pub fn compose(a: &Wfst, b: &Wfst) -> Result<Wfst> {
    if a.osyms != b.isyms {
        return Err(Error::shape(
            "composition alphabets differ (a.output vs b.input)".to_string(),
        ));
    }

    // Per-state index of b's arcs by input label.
    let b_index: Vec<HashMap<usize, Vec<usize>>> = (0..b.num_states())
        .map(|s| {
            let mut m: HashMap<usize, Vec<usize>> = HashMap::new();
            for (i, arc) in b.arcs(s).iter().enumerate() {
                m.entry(arc.ilabel).or_default().push(i);
            }
            m
        })
        .collect();

    let mut out = Wfst::new(a.isyms.clone(), b.osyms.clone());
    let mut map: HashMap<(usize, usize, u8), usize> = HashMap::new();
    let mut queue: Vec<(usize, usize, u8)> = Vec::new();

    let state_of = |key: (usize, usize, u8),
                        out: &mut Wfst,
                        queue: &mut Vec<(usize, usize, u8)>,
                        map: &mut HashMap<(usize, usize, u8), usize>| {
        *map.entry(key).or_insert_with(|| {
            queue.push(key);
            out.add_state()
        })
    };

    let start_key = (a.start(), b.start(), 0u8);
    let start = state_of(start_key, &mut out, &mut queue, &mut map);
    out.set_start(start);

    while let Some(key @ (sa, sb, filter)) = queue.pop() {
        let cur = map[&key];
        let fa = a.final_weight(sa);
        let fb = b.final_weight(sb);
        if fa.is_finite() && fb.is_finite() {
            out.set_final(cur, fa + fb);
        }
        for arc_a in a.arcs(sa) {
            if arc_a.olabel == EPSILON {
                // a-side epsilon move; forbidden once a b-side move started.
                if filter == 0 {
                    let dst = state_of((arc_a.nextstate, sb, 0), &mut out, &mut queue, &mut map);
                    out.add_arc(
                        cur,
                        Arc {
                            ilabel: arc_a.ilabel,
                            olabel: EPSILON,
                            weight: arc_a.weight,
                            nextstate: dst,
                        },
                    );
                }
            } else if let Some(matches) = b_index[sb].get(&arc_a.olabel) {
                for &bi in matches {
                    let arc_b = &b.arcs(sb)[bi];
                    let dst =
                        state_of((arc_a.nextstate, arc_b.nextstate, 0), &mut out, &mut queue, &mut map);
                    out.add_arc(
                        cur,
                        Arc {
                            ilabel: arc_a.ilabel,
                            olabel: arc_b.olabel,
                            weight: arc_a.weight + arc_b.weight,
                            nextstate: dst,
                        },
                    );
                }
            }
        }
        // b-side epsilon moves are always allowed and flip the filter.
        if let Some(eps_arcs) = b_index[sb].get(&EPSILON) {
            for &bi in eps_arcs {
                let arc_b = &b.arcs(sb)[bi];
                let dst = state_of((sa, arc_b.nextstate, 1), &mut out, &mut queue, &mut map);
                out.add_arc(
                    cur,
                    Arc {
                        ilabel: EPSILON,
                        olabel: arc_b.olabel,
                        weight: arc_b.weight,
                        nextstate: dst,
                    },
                );
            }
        }
    }

    Ok(out.connect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::wfst::{accept_best, paths_up_to, SymbolTable};

    fn letters() -> SymbolTable {
        SymbolTable::from_names(["a", "b", "c"])
    }

    /// a:b relabeler with a weight per arc.
    fn upper() -> Wfst {
        let mut g = Wfst::new(letters(), letters());
        let s0 = g.add_state();
        g.set_start(s0);
        g.set_final(s0, 0.0);
        g.add_arc(s0, Arc { ilabel: 1, olabel: 2, weight: 0.5, nextstate: s0 });
        g.add_arc(s0, Arc { ilabel: 2, olabel: 3, weight: 0.25, nextstate: s0 });
        g
    }

    /// Accepts b·c with an epsilon detour carrying weight.
    fn lower() -> Wfst {
        let mut g = Wfst::new(letters(), letters());
        let s0 = g.add_state();
        let s1 = g.add_state();
        let s2 = g.add_state();
        let s3 = g.add_state();
        g.set_start(s0);
        g.set_final(s3, 0.125);
        g.add_arc(s0, Arc { ilabel: 2, olabel: 2, weight: 1.0, nextstate: s1 });
        g.add_arc(s1, Arc { ilabel: EPSILON, olabel: EPSILON, weight: 2.0, nextstate: s2 });
        g.add_arc(s2, Arc { ilabel: 3, olabel: 3, weight: 4.0, nextstate: s3 });
        g
    }

    #[test]
    fn alphabet_mismatch_is_an_error() {
        let mut g = Wfst::new(letters(), SymbolTable::from_names(["z"]));
        let s = g.add_state();
        g.set_start(s);
        let h = upper();
        assert!(compose(&g, &h).is_err());
    }

    #[test]
    fn composed_path_weights_are_sums() {
        // upper maps a·b -> b·c; lower accepts b·c with total weight 7.125.
        let c = compose(&upper(), &lower()).unwrap();
        let (w, outs) = accept_best(&c, &[1, 2]).unwrap();
        // 0.5 + 0.25 (upper arcs) + 1 + 2 + 4 + 0.125 (lower path).
        assert!((w - 7.875).abs() < 1e-12);
        assert_eq!(outs, vec![2, 3]);
    }

    #[test]
    fn empty_language_composes_to_empty() {
        let mut empty = Wfst::new(letters(), letters());
        let s = empty.add_state();
        empty.set_start(s); // no finals: empty language
        let c = compose(&upper(), &empty).unwrap();
        assert_eq!(c.num_arcs(), 0);
        assert!(paths_up_to(&c, 5, 10).unwrap().is_empty());
    }

    #[test]
    fn epsilon_interleavings_are_not_duplicated() {
        // a-side has an output-epsilon arc, b-side an input-epsilon arc;
        // without the filter the pair (a-eps, b-eps) yields two paths.
        let mut a = Wfst::new(letters(), letters());
        let a0 = a.add_state();
        let a1 = a.add_state();
        let a2 = a.add_state();
        a.set_start(a0);
        a.set_final(a2, 0.0);
        a.add_arc(a0, Arc { ilabel: 1, olabel: EPSILON, weight: 0.0, nextstate: a1 });
        a.add_arc(a1, Arc { ilabel: 2, olabel: 2, weight: 0.0, nextstate: a2 });

        let mut b = Wfst::new(letters(), letters());
        let b0 = b.add_state();
        let b1 = b.add_state();
        let b2 = b.add_state();
        b.set_start(b0);
        b.set_final(b2, 0.0);
        b.add_arc(b0, Arc { ilabel: EPSILON, olabel: 3, weight: 0.0, nextstate: b1 });
        b.add_arc(b1, Arc { ilabel: 2, olabel: 2, weight: 0.0, nextstate: b2 });

        let c = compose(&a, &b).unwrap();
        let paths = paths_up_to(&c, 4, 100).unwrap();
        assert_eq!(paths.len(), 1, "paths: {paths:?}");
        assert_eq!(paths[0].0, vec![1, 2]);
        assert_eq!(paths[0].1, vec![3, 2]);
    }

    #[test]
    fn associativity_on_languages() {
        let h = upper(); // a->b, b->c
        let l = upper();
        let g = lower(); // accepts b c
        let hl = compose(&h, &l).unwrap();
        let left = compose(&hl, &g).unwrap();
        let lg = compose(&l, &g).unwrap();
        let right = compose(&h, &lg).unwrap();
        let mut pl = paths_up_to(&left, 4, 1000).unwrap();
        let mut pr = paths_up_to(&right, 4, 1000).unwrap();
        let key = |p: &(Vec<usize>, Vec<usize>, f64)| (p.0.clone(), p.1.clone());
        pl.sort_by_key(&key);
        pr.sort_by_key(&key);
        assert_eq!(pl.len(), pr.len());
        for (x, y) in pl.iter().zip(pr.iter()) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1, y.1);
            assert!((x.2 - y.2).abs() < 1e-12);
        }
    }
}
