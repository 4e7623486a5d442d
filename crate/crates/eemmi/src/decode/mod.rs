//! WFST construction and composition, frame-synchronous beam decoding,
//! forced alignment, and posterior-averaging ensembles.

mod build;
mod compose;
mod search;
mod wfst;

pub use build::{
    build_g, build_h, build_hlg, build_l, build_l_ctc, build_t_ctc, build_tlg, unit_symbols,
    word_symbols, SENT_BEGIN, SENT_END,
};
pub use compose::compose;
pub use search::{
    ensemble_average, forced_align, viterbi_beam_decode, DecodeConfig, DecodeResult,
    FRAME_PERIOD_SECONDS,
};
pub use wfst::{
    accept_best, graph_stats, load_wfst, parse_wfst, paths_up_to, save_wfst, serialize_wfst, Arc,
    GraphStats, Label, SymbolTable, Wfst, EPSILON,
};
