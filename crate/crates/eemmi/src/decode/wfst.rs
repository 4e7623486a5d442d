//! Weighted finite-state transducers in the tropical semiring
//! (weights are negative log probabilities, best path minimizes the sum),
//! with a documented binary serialization.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type Label = usize;
pub const EPSILON: Label = 0;

/// Label ↔ name table; label 0 is always `<eps>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolTable {
    names: Vec<String>,
    index: HashMap<String, Label>,
}

impl Default for SymbolTable {
    fn default() -> Self {
        Self::new()
    }
}

impl SymbolTable {
    pub fn new() -> Self {
        let mut t = SymbolTable {
            names: Vec::new(),
            index: HashMap::new(),
        };
        t.add("<eps>");
        t
    }

    pub fn from_names<S: AsRef<str>>(names: impl IntoIterator<Item = S>) -> Self {
        let mut t = SymbolTable::new();
        for n in names {
            t.add(n.as_ref());
        }
        t
    }

    pub fn add(&mut self, name: &str) -> Label {
        if let Some(&l) = self.index.get(name) {
            return l;
        }
        let l = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), l);
        l
    }

    pub fn label(&self, name: &str) -> Option<Label> {
        self.index.get(name).copied()
    }

    pub fn name(&self, label: Label) -> &str {
        &self.names[label]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub ilabel: Label,
    pub olabel: Label,
    pub weight: f64,
    pub nextstate: usize,
}

/// Transducer with one start state and weighted final states.
#[derive(Debug, Clone)]
pub struct Wfst {
    pub isyms: SymbolTable,
    pub osyms: SymbolTable,
    start: usize,
    arcs: Vec<Vec<Arc>>,
    /// +∞ marks a non-final state.
    finals: Vec<f64>,
}

impl Wfst {
    pub fn new(isyms: SymbolTable, osyms: SymbolTable) -> Self {
        Wfst {
            isyms,
            osyms,
            start: 0,
            arcs: Vec::new(),
            finals: Vec::new(),
        }
    }

    pub fn add_state(&mut self) -> usize {
        self.arcs.push(Vec::new());
        self.finals.push(f64::INFINITY);
        self.arcs.len() - 1
    }

    pub fn set_start(&mut self, s: usize) {
        self.start = s;
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn set_final(&mut self, s: usize, weight: f64) {
        self.finals[s] = weight;
    }

    pub fn final_weight(&self, s: usize) -> f64 {
        self.finals[s]
    }

    pub fn is_final(&self, s: usize) -> bool {
        self.finals[s].is_finite()
    }

    pub fn add_arc(&mut self, source: usize, arc: Arc) {
        debug_assert!(arc.ilabel < self.isyms.len() && arc.olabel < self.osyms.len());
        debug_assert!(arc.nextstate < self.arcs.len());
        self.arcs[source].push(arc);
    }

    pub fn arcs(&self, s: usize) -> &[Arc] {
        &self.arcs[s]
    }

    pub fn num_states(&self) -> usize {
        self.arcs.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.iter().map(|a| a.len()).sum()
    }

    pub fn final_states(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.finals
            .iter()
            .enumerate()
            .filter(|(_, w)| w.is_finite())
            .map(|(s, &w)| (s, w))
    }

    /// Removes states that are not both reachable from the start and
    /// co-reachable to a final state; renumbers the rest.
    pub fn connect(&self) -> Wfst {
        let n = self.num_states();
        if n == 0 {
            return self.clone();
        }
        let mut fwd = vec![false; n];
        let mut stack = vec![self.start];
        fwd[self.start] = true;
        while let Some(s) = stack.pop() {
            for a in &self.arcs[s] {
                if !fwd[a.nextstate] {
                    fwd[a.nextstate] = true;
                    stack.push(a.nextstate);
                }
            }
        }
        let mut rev_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (s, arcs) in self.arcs.iter().enumerate() {
            for a in arcs {
                rev_adj[a.nextstate].push(s);
            }
        }
        let mut bwd = vec![false; n];
        let mut stack: Vec<usize> = (0..n).filter(|&s| self.finals[s].is_finite()).collect();
        for &s in &stack {
            bwd[s] = true;
        }
        while let Some(s) = stack.pop() {
            for &p in &rev_adj[s] {
                if !bwd[p] {
                    bwd[p] = true;
                    stack.push(p);
                }
            }
        }

        let mut remap = vec![usize::MAX; n];
        let mut out = Wfst::new(self.isyms.clone(), self.osyms.clone());
        for s in 0..n {
            if fwd[s] && bwd[s] {
                remap[s] = out.add_state();
                out.finals[remap[s]] = self.finals[s];
            }
        }
        if remap[self.start] == usize::MAX {
            // Empty language: keep a bare start state.
            let s = out.add_state();
            out.set_start(s);
            return out;
        }
        out.set_start(remap[self.start]);
        for s in 0..n {
            if remap[s] == usize::MAX {
                continue;
            }
            for a in &self.arcs[s] {
                if remap[a.nextstate] != usize::MAX {
                    out.arcs[remap[s]].push(Arc {
                        nextstate: remap[a.nextstate],
                        ..*a
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphStats {
    pub states: usize,
    pub arcs: usize,
    pub serialized_bytes: usize,
}

/// Exact state/arc counts and the on-disk size of the binary serialization.
pub fn graph_stats(g: &Wfst) -> GraphStats {
    GraphStats {
        states: g.num_states(),
        arcs: g.num_arcs(),
        serialized_bytes: serialize_wfst(g).len(),
    }
}

const WFST_MAGIC: &[u8; 8] = b"EEMMWFST";
const WFST_VERSION: u32 = 1;

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_symbols(buf: &mut Vec<u8>, t: &SymbolTable) {
    push_u32(buf, t.len() as u32);
    for name in t.names() {
        let bytes = name.as_bytes();
        push_u32(buf, bytes.len() as u32);
        buf.extend_from_slice(bytes);
    }
}

/// Binary layout: magic, version, start, state count, finals
/// (state, weight), both symbol tables, then the arc list as
/// (source, dest, ilabel, olabel, f64 weight), all little-endian.
pub fn serialize_wfst(g: &Wfst) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WFST_MAGIC);
    push_u32(&mut buf, WFST_VERSION);
    push_u32(&mut buf, g.start() as u32);
    push_u32(&mut buf, g.num_states() as u32);
    let finals: Vec<(usize, f64)> = g.final_states().collect();
    push_u32(&mut buf, finals.len() as u32);
    for (s, w) in finals {
        push_u32(&mut buf, s as u32);
        buf.extend_from_slice(&w.to_le_bytes());
    }
    push_symbols(&mut buf, &g.isyms);
    push_symbols(&mut buf, &g.osyms);
    push_u32(&mut buf, g.num_arcs() as u32);
    for s in 0..g.num_states() {
        for a in g.arcs(s) {
            push_u32(&mut buf, s as u32);
            push_u32(&mut buf, a.nextstate as u32);
            push_u32(&mut buf, a.ilabel as u32);
            push_u32(&mut buf, a.olabel as u32);
            buf.extend_from_slice(&a.weight.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse {
                line: 0,
                msg: "truncated graph file".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn symbols(&mut self) -> Result<SymbolTable> {
        let n = self.u32()? as usize;
        let mut t = SymbolTable::new();
        for i in 0..n {
            let len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| Error::Parse {
                    line: 0,
                    msg: "bad symbol encoding".into(),
                })?
                .to_string();
            if i == 0 {
                if name != "<eps>" {
                    return Err(Error::Parse {
                        line: 0,
                        msg: "symbol 0 must be <eps>".into(),
                    });
                }
            } else {
                t.add(&name);
            }
        }
        Ok(t)
    }
}

pub fn parse_wfst(buf: &[u8]) -> Result<Wfst> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != WFST_MAGIC {
        return Err(Error::Parse {
            line: 0,
            msg: "not a graph file (bad magic)".into(),
        });
    }
    let version = r.u32()?;
    if version != WFST_VERSION {
        return Err(Error::Parse {
            line: 0,
            msg: format!("unsupported graph version {version}"),
        });
    }
    let start = r.u32()? as usize;
    let n_states = r.u32()? as usize;
    let n_finals = r.u32()? as usize;
    let mut finals = Vec::with_capacity(n_finals);
    for _ in 0..n_finals {
        let s = r.u32()? as usize;
        let w = r.f64()?;
        finals.push((s, w));
    }
    let isyms = r.symbols()?;
    let osyms = r.symbols()?;
    let mut g = Wfst::new(isyms, osyms);
    for _ in 0..n_states {
        g.add_state();
    }
    if start >= n_states {
        return Err(Error::Parse {
            line: 0,
            msg: "start state out of range".into(),
        });
    }
    g.set_start(start);
    for (s, w) in finals {
        if s >= n_states {
            return Err(Error::Parse {
                line: 0,
                msg: "final state out of range".into(),
            });
        }
        g.set_final(s, w);
    }
    let n_arcs = r.u32()? as usize;
    for _ in 0..n_arcs {
        let src = r.u32()? as usize;
        let dst = r.u32()? as usize;
        let ilabel = r.u32()? as usize;
        let olabel = r.u32()? as usize;
        let weight = r.f64()?;
        if src >= n_states
            || dst >= n_states
            || ilabel >= g.isyms.len()
            || olabel >= g.osyms.len()
        {
            return Err(Error::Parse {
                line: 0,
                msg: "arc field out of range".into(),
            });
        }
        g.add_arc(
            src,
            Arc {
                ilabel,
                olabel,
                weight,
                nextstate: dst,
            },
        );
    }
    if r.pos != buf.len() {
        return Err(Error::Parse {
            line: 0,
            msg: "trailing bytes in graph file".into(),
        });
    }
    Ok(g)
}

pub fn save_wfst(path: &Path, g: &Wfst) -> Result<()> {
    fs::write(path, serialize_wfst(g))?;
    Ok(())
}

pub fn load_wfst(path: &Path) -> Result<Wfst> {
    parse_wfst(&fs::read(path)?)
}

/// All complete paths (input labels, output labels, weight) with input
/// length ≤ `max_input_len`, up to `max_paths`. Pure-epsilon cycles abort.
pub fn paths_up_to(g: &Wfst, max_input_len: usize, max_paths: usize) -> Result<Vec<(Vec<Label>, Vec<Label>, f64)>> {
    let mut out = Vec::new();
    let mut input = Vec::new();
    let mut output = Vec::new();
    walk(
        g,
        g.start(),
        0.0,
        max_input_len,
        max_paths,
        &mut input,
        &mut output,
        0,
        &mut out,
    )?;
    return Ok(out);

    #[allow(clippy::too_many_arguments)]
    fn walk(
        g: &Wfst,
        s: usize,
        w: f64,
        budget: usize,
        max_paths: usize,
        input: &mut Vec<Label>,
        output: &mut Vec<Label>,
        eps_run: usize,
        out: &mut Vec<(Vec<Label>, Vec<Label>, f64)>,
    ) -> Result<()> {
        if out.len() >= max_paths {
            return Err(Error::TooLarge(format!("more than {max_paths} paths")));
        }
        if g.is_final(s) {
            out.push((input.clone(), output.clone(), w + g.final_weight(s)));
        }
        if eps_run > g.num_states() {
            return Err(Error::TooLarge("epsilon cycle".into()));
        }
        for a in g.arcs(s) {
            let consumes = a.ilabel != EPSILON;
            if consumes && budget == 0 {
                continue;
            }
            if consumes {
                input.push(a.ilabel);
            }
            if a.olabel != EPSILON {
                output.push(a.olabel);
            }
            walk(
                g,
                a.nextstate,
                w + a.weight,
                budget - usize::from(consumes),
                max_paths,
                input,
                output,
                if consumes { 0 } else { eps_run + 1 },
                out,
            )?;
            if a.olabel != EPSILON {
                output.pop();
            }
            if consumes {
                input.pop();
            }
        }
        Ok(())
    }
}

/// Best (lowest-cost) complete path consuming exactly `input`; returns its
/// weight and output labels. Dynamic program over (position, state) with
/// iterative epsilon relaxation.
pub fn accept_best(g: &Wfst, input: &[Label]) -> Option<(f64, Vec<Label>)> {
    #[derive(Clone, Copy)]
    struct Entry {
        cost: f64,
        prev: usize,
        olabel: Label,
    }
    let n = g.num_states();
    let none = Entry {
        cost: f64::INFINITY,
        prev: usize::MAX,
        olabel: EPSILON,
    };
    // One DP layer per consumed prefix; entries index a trace arena.
    let mut arena: Vec<(usize, Entry)> = Vec::new(); // (layer*n + state, entry)
    let mut layers: Vec<Vec<Entry>> = vec![vec![none; n]; input.len() + 1];
    let mut trace_of = vec![usize::MAX; (input.len() + 1) * n];

    let relax_eps = |layer: &mut Vec<Entry>,
                     li: usize,
                     arena: &mut Vec<(usize, Entry)>,
                     trace_of: &mut Vec<usize>| {
        let mut changed = true;
        let mut rounds = 0;
        while changed {
            changed = false;
            rounds += 1;
            if rounds > n + 2 {
                break; // negative epsilon cycle guard
            }
            for s in 0..n {
                if layer[s].cost.is_infinite() {
                    continue;
                }
                let from_cost = layer[s].cost;
                let from_trace = trace_of[li * n + s];
                for a in g.arcs(s) {
                    if a.ilabel != EPSILON {
                        continue;
                    }
                    let c = from_cost + a.weight;
                    if c < layer[a.nextstate].cost {
                        layer[a.nextstate] = Entry {
                            cost: c,
                            prev: from_trace,
                            olabel: a.olabel,
                        };
                        arena.push((li * n + a.nextstate, layer[a.nextstate]));
                        trace_of[li * n + a.nextstate] = arena.len() - 1;
                        changed = true;
                    }
                }
            }
        }
    };

    layers[0][g.start()] = Entry {
        cost: 0.0,
        prev: usize::MAX,
        olabel: EPSILON,
    };
    arena.push((g.start(), layers[0][g.start()]));
    trace_of[g.start()] = 0;
    let mut l0 = std::mem::take(&mut layers[0]);
    relax_eps(&mut l0, 0, &mut arena, &mut trace_of);
    layers[0] = l0;

    for (pos, &sym) in input.iter().enumerate() {
        let mut next = vec![none; n];
        for s in 0..n {
            if layers[pos][s].cost.is_infinite() {
                continue;
            }
            for a in g.arcs(s) {
                if a.ilabel != sym {
                    continue;
                }
                let c = layers[pos][s].cost + a.weight;
                if c < next[a.nextstate].cost {
                    next[a.nextstate] = Entry {
                        cost: c,
                        prev: trace_of[pos * n + s],
                        olabel: a.olabel,
                    };
                    arena.push(((pos + 1) * n + a.nextstate, next[a.nextstate]));
                    trace_of[(pos + 1) * n + a.nextstate] = arena.len() - 1;
                }
            }
        }
        relax_eps(&mut next, pos + 1, &mut arena, &mut trace_of);
        layers[pos + 1] = next;
    }

    let last = &layers[input.len()];
    let mut best: Option<(f64, usize)> = None;
    for s in 0..n {
        if last[s].cost.is_finite() && g.is_final(s) {
            let total = last[s].cost + g.final_weight(s);
            if best.map_or(true, |(bc, _)| total < bc) {
                best = Some((total, trace_of[input.len() * n + s]));
            }
        }
    }
    let (cost, mut trace) = best?;
    let mut output = Vec::new();
    while trace != usize::MAX {
        let (_, e) = arena[trace];
        if e.olabel != EPSILON {
            output.push(e.olabel);
        }
        trace = e.prev;
    }
    output.reverse();
    Some((cost, output))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Wfst {
        let isyms = SymbolTable::from_names(["a", "b"]);
        let osyms = SymbolTable::from_names(["x", "y"]);
        let mut g = Wfst::new(isyms, osyms);
        let s0 = g.add_state();
        let s1 = g.add_state();
        let s2 = g.add_state();
        g.set_start(s0);
        g.set_final(s2, 0.5);
        g.add_arc(s0, Arc { ilabel: 1, olabel: 1, weight: 1.0, nextstate: s1 });
        g.add_arc(s1, Arc { ilabel: 2, olabel: 2, weight: 2.0, nextstate: s2 });
        g.add_arc(s0, Arc { ilabel: 1, olabel: 2, weight: 0.25, nextstate: s2 });
        g
    }

    #[test]
    fn serialization_roundtrip() {
        let g = toy();
        let bytes = serialize_wfst(&g);
        let h = parse_wfst(&bytes).unwrap();
        assert_eq!(h.num_states(), g.num_states());
        assert_eq!(h.num_arcs(), g.num_arcs());
        assert_eq!(h.start(), g.start());
        assert_eq!(h.isyms, g.isyms);
        assert_eq!(h.final_weight(2), 0.5);
        assert_eq!(serialize_wfst(&h), bytes);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_wfst(b"junk").is_err());
        let mut bytes = serialize_wfst(&toy());
        bytes.pop();
        assert!(parse_wfst(&bytes).is_err());
    }

    #[test]
    fn stats_on_empty_graph() {
        let mut g = Wfst::new(SymbolTable::new(), SymbolTable::new());
        let s = g.add_state();
        g.set_start(s);
        let stats = graph_stats(&g);
        assert_eq!(stats.states, 1);
        assert_eq!(stats.arcs, 0);
        assert_eq!(stats.serialized_bytes, serialize_wfst(&g).len());
    }

    #[test]
    fn connect_removes_dead_states() {
        let mut g = toy();
        let dead = g.add_state();
        g.add_arc(dead, Arc { ilabel: 1, olabel: 1, weight: 0.0, nextstate: dead });
        // Also a reachable but non-coaccessible state.
        let sink = g.add_state();
        g.add_arc(g.start(), Arc { ilabel: 2, olabel: 1, weight: 0.0, nextstate: sink });
        let t = g.connect();
        assert_eq!(t.num_states(), 3);
        assert_eq!(t.num_arcs(), 3);
    }

    #[test]
    fn accept_best_finds_cheapest_path() {
        let g = toy();
        let (cost, outs) = accept_best(&g, &[1]).unwrap();
        assert!((cost - 0.75).abs() < 1e-12); // 0.25 + final 0.5
        assert_eq!(outs, vec![2]);
        let (cost, outs) = accept_best(&g, &[1, 2]).unwrap();
        assert!((cost - 3.5).abs() < 1e-12);
        assert_eq!(outs, vec![1, 2]);
        assert!(accept_best(&g, &[2]).is_none());
    }

    #[test]
    fn paths_enumeration() {
        let g = toy();
        let paths = paths_up_to(&g, 4, 100).unwrap();
        assert_eq!(paths.len(), 2);
    }
}
