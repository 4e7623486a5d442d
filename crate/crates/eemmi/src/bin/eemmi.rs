//! Command-line front end: corpus generation, training, graph building,
//! decoding, forced alignment and evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use eemmi::acoustic::{load_checkpoint, save_checkpoint, LossKind, TrainConfig};
use eemmi::decode::{build_hlg, build_tlg, graph_stats, load_wfst, save_wfst, DecodeConfig};
use eemmi::error::{Error, Result};
use eemmi::harness::config::{parse_train_config, KvConfig};
use eemmi::harness::corpus::{load_corpus, write_corpus};
use eemmi::harness::eval::{
    alignment_accuracy, compute_error_rate, measure_rtf, EvalReport, EVAL_CSV_HEADER,
};
use eemmi::harness::synth::{generate_corpus, Corpus, SyntheticCorpusSpec, Utterance};
use eemmi::harness::{align_corpus, decode_corpus, prepare_items, write_manifest, SystemModel};
use eemmi::inventory::{parse_transcript_file, StateId};
use eemmi::lm::{StateLM, StateLmKind};

#[derive(Parser)]
#[command(name = "eemmi", version, about = "End-to-end MMI phonetic recognizer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Mmi,
    Ctc,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainLmArg {
    Uniform,
    Unigram,
    Bigram,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphKindArg {
    Mmi,
    Ctc,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    Train,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from a spec file.
    Gen {
        /// Corpus spec (`key = value`); omit for the built-in defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "mmi")]
        loss: LossArg,
        /// State-level train LM flavor.
        #[arg(long = "train-lm", value_enum, default_value = "bigram")]
        train_lm: TrainLmArg,
        /// Training configuration file (`key = value`).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Build a decode graph (HLG for MMI models, TLG for CTC).
    Graph {
        #[arg(long)]
        corpus: PathBuf,
        /// Model checkpoint; required for `--kind mmi`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mmi")]
        kind: GraphKindArg,
        /// Word LM in ARPA format; defaults to the corpus LM.
        #[arg(long)]
        arpa: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a corpus subset over a graph; several --model flags average
    /// the posteriors and run a single search per utterance.
    Decode {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        subset: SubsetArg,
        #[arg(long, default_value_t = 0.7)]
        acoustic_scale: f64,
        #[arg(long, default_value_t = 16.0)]
        beam: f64,
        #[arg(long, default_value_t = 2000)]
        max_active: usize,
    },
    /// Force-align a corpus subset against its reference transcripts.
    Align {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// State LM matrix saved by `train` (needed for lattice weights).
        #[arg(long = "state-lm")]
        state_lm: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        subset: SubsetArg,
    },
    /// Score a decode run: WER/PER, alignment accuracy and RTF.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        /// Directory written by `decode`.
        #[arg(long)]
        decode: PathBuf,
        /// Graph file to report size statistics for.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Label for the system column in the report.
        #[arg(long, default_value = "eemmi")]
        system: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn read_kv(path: &Path) -> Result<KvConfig> {
    KvConfig::parse(&fs::read_to_string(path)?)
}

fn subset(corpus: &Corpus, which: SubsetArg) -> Vec<Utterance> {
    match which {
        SubsetArg::Train => corpus.train.clone(),
        SubsetArg::Test => corpus.test.clone(),
        SubsetArg::All => corpus.all_utterances().cloned().collect(),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen { spec, out } => {
            let spec = match spec {
                Some(path) => SyntheticCorpusSpec::from_config(&read_kv(&path)?)?,
                None => SyntheticCorpusSpec::default(),
            };
            let (corpus, _) = generate_corpus(&spec)?;
            fs::create_dir_all(&out)?;
            write_corpus(&out, &corpus)?;
            write_manifest(
                &out.join("manifest.txt"),
                "gen",
                &[
                    ("seed", spec.seed.to_string()),
                    ("spec", format!("\n{}", spec.to_config_text())),
                ],
            )?;
            println!(
                "wrote corpus: {} train + {} test utterances, {} words, {} phonemes",
                corpus.train.len(),
                corpus.test.len(),
                corpus.lexicon.len(),
                corpus.inventory.len() - 3
            );
            Ok(())
        }

        Command::Train {
            corpus,
            out,
            loss,
            train_lm,
            config,
            seed,
            epochs,
        } => {
            let corpus = load_corpus(&corpus)?;
            let mut cfg = match config {
                Some(path) => parse_train_config(&read_kv(&path)?)?,
                None => TrainConfig::default(),
            };
            cfg.train_lm_kind = match train_lm {
                TrainLmArg::Uniform => StateLmKind::Uniform,
                TrainLmArg::Unigram => StateLmKind::Unigram,
                TrainLmArg::Bigram => StateLmKind::Bigram,
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let kind = match loss {
                LossArg::Mmi => LossKind::Mmi,
                LossArg::Ctc => LossKind::Ctc,
            };
            let items = prepare_items(&corpus.train, cfg.window_radius)?;
            let outcome = eemmi::acoustic::train(&items, corpus.inventory.len(), &cfg, kind)?;

            fs::create_dir_all(&out)?;
            let feature_dim = corpus.train[0].features.dim;
            save_checkpoint(
                &out.join("model.ckpt"),
                &outcome.net,
                &outcome.params,
                cfg.window_radius,
                feature_dim,
            )?;
            fs::write(out.join("statelm.txt"), outcome.params.state_lm().serialize())?;
            let mut csv = String::from("epoch,train_loss,valid_loss,valid_per,lr\n");
            for m in &outcome.metrics {
                csv.push_str(&format!(
                    "{},{:.6},{:.6},{:.6},{:.6}\n",
                    m.epoch, m.train_loss, m.valid_loss, m.valid_per, m.lr
                ));
            }
            fs::write(out.join("metrics.csv"), csv)?;
            write_manifest(
                &out.join("manifest.txt"),
                "train",
                &[
                    ("loss", kind.as_str().to_string()),
                    ("train_lm", cfg.train_lm_kind.as_str().to_string()),
                    ("seed", cfg.seed.to_string()),
                    ("epochs", cfg.epochs.to_string()),
                    ("learning_rate", cfg.learning_rate.to_string()),
                    ("clip_norm", cfg.clip_norm.to_string()),
                    ("batch_size", cfg.batch_size.to_string()),
                    ("window_radius", cfg.window_radius.to_string()),
                    (
                        "hidden",
                        cfg.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
                    ),
                ],
            )?;
            if let Some(last) = outcome.metrics.last() {
                println!(
                    "trained {} epochs: train_loss {:.4}, valid_loss {:.4}, valid_per {:.4}",
                    outcome.metrics.len(),
                    last.train_loss,
                    last.valid_loss,
                    last.valid_per
                );
            }
            Ok(())
        }

        Command::Graph {
            corpus,
            model,
            kind,
            arpa,
            out,
        } => {
            let corpus_data = load_corpus(&corpus)?;
            let lm = match arpa {
                Some(path) => eemmi::lm::parse_arpa(&fs::read_to_string(path)?)?,
                None => corpus_data.word_lm.clone(),
            };
            let graph = match kind {
                GraphKindArg::Mmi => {
                    let model_path = model.ok_or_else(|| {
                        Error::validation("--kind mmi needs --model for the transition weights")
                    })?;
                    let ck = load_checkpoint(&model_path)?;
                    let params = ck.params_with_uniform_lm()?;
                    build_hlg(&params, &corpus_data.inventory, &corpus_data.lexicon, &lm)?
                }
                GraphKindArg::Ctc => build_tlg(&corpus_data.inventory, &corpus_data.lexicon, &lm)?,
            };
            save_wfst(&out, &graph)?;
            let stats = graph_stats(&graph);
            println!(
                "graph: {} states, {} arcs, {} bytes",
                stats.states, stats.arcs, stats.serialized_bytes
            );
            Ok(())
        }

        Command::Decode {
            corpus,
            graph,
            model,
            out,
            subset: which,
            acoustic_scale,
            beam,
            max_active,
        } => {
            let corpus = load_corpus(&corpus)?;
            let graph = load_wfst(&graph)?;
            let models: Vec<SystemModel> = model
                .iter()
                .map(|p| SystemModel::from_checkpoint(&load_checkpoint(p)?))
                .collect::<Result<_>>()?;
            let utts = subset(&corpus, which);
            let cfg = DecodeConfig {
                beam,
                max_active,
                acoustic_scale,
            };
            let run = decode_corpus(&graph, &utts, &models, &cfg)?;

            fs::create_dir_all(&out)?;
            let mut hyps = String::new();
            for (id, words) in &run.hyps {
                hyps.push_str(&format!("{id}\t{}\n", words.join(" ")));
            }
            fs::write(out.join("hyps.txt"), hyps)?;
            let mut alignment = String::new();
            for (id, states) in &run.alignments {
                let row: Vec<String> = states.iter().map(|s| s.to_string()).collect();
                alignment.push_str(&format!("{id}\t{}\n", row.join(" ")));
            }
            fs::write(out.join("alignment.txt"), alignment)?;
            let mut rtf = String::from("utt_id,frames,seconds\n");
            for ((id, _), (frames, secs)) in run.hyps.iter().zip(run.rtf_runs.iter()) {
                rtf.push_str(&format!("{id},{frames},{secs:.6}\n"));
            }
            fs::write(out.join("rtf.csv"), rtf)?;
            write_manifest(
                &out.join("manifest.txt"),
                "decode",
                &[
                    ("models", model.len().to_string()),
                    ("acoustic_scale", acoustic_scale.to_string()),
                    ("beam", beam.to_string()),
                    ("max_active", max_active.to_string()),
                    ("searches", run.searches.to_string()),
                ],
            )?;
            println!(
                "decoded {} utterances ({} searches), mean RTF {:.4}",
                run.hyps.len(),
                run.searches,
                measure_rtf(&run.rtf_runs)
            );
            Ok(())
        }

        Command::Align {
            corpus,
            model,
            state_lm,
            out,
            subset: which,
        } => {
            let corpus = load_corpus(&corpus)?;
            let ck = load_checkpoint(&model)?;
            let lm = StateLM::parse(&fs::read_to_string(state_lm)?)?;
            let system = SystemModel::from_checkpoint_with_lm(&ck, lm)?;
            let utts = subset(&corpus, which);
            let aligned = align_corpus(&utts, &system)?;

            fs::create_dir_all(&out)?;
            let mut text = String::new();
            for (id, states) in &aligned {
                let row: Vec<String> = states.iter().map(|s| s.to_string()).collect();
                text.push_str(&format!("{id}\t{}\n", row.join(" ")));
            }
            fs::write(out.join("alignment.txt"), text)?;
            let gold: Vec<(String, Vec<StateId>)> = utts
                .iter()
                .map(|u| (u.utt_id.clone(), u.gold_alignment.clone()))
                .collect();
            let accuracy = alignment_accuracy(&gold, &aligned)?;
            write_manifest(
                &out.join("manifest.txt"),
                "align",
                &[("frame_accuracy", format!("{accuracy:.6}"))],
            )?;
            println!(
                "aligned {} utterances, frame accuracy {:.2}%",
                aligned.len(),
                100.0 * accuracy
            );
            Ok(())
        }

        Command::Eval {
            corpus,
            decode,
            graph,
            out,
            system,
        } => {
            let corpus = load_corpus(&corpus)?;
            let hyps = parse_transcript_file(&fs::read_to_string(decode.join("hyps.txt"))?)?;
            let by_id: std::collections::HashMap<&str, &Utterance> = corpus
                .all_utterances()
                .map(|u| (u.utt_id.as_str(), u))
                .collect();

            let mut refs = Vec::new();
            for (id, _) in &hyps {
                let utt = by_id.get(id.as_str()).ok_or_else(|| {
                    Error::validation(format!("hypothesis for unknown utterance `{id}`"))
                })?;
                refs.push((id.clone(), utt.words.clone()));
            }
            let wer = compute_error_rate(&refs, &hyps)?;

            // PER from the decode alignment, collapsed to phonemes.
            let decode_align = read_alignment(&decode.join("alignment.txt"))?;
            let mut ref_phones = Vec::new();
            let mut hyp_phones = Vec::new();
            for (id, states) in &decode_align {
                let utt = by_id.get(id.as_str()).ok_or_else(|| {
                    Error::validation(format!("alignment for unknown utterance `{id}`"))
                })?;
                ref_phones.push((id.clone(), utt.transcript.phones()));
                let phones: Vec<StateId> = eemmi::inventory::collapse_states(states)
                    .into_iter()
                    .filter(|&s| s >= 3)
                    .collect();
                hyp_phones.push((id.clone(), phones));
            }
            let per = compute_error_rate(&ref_phones, &hyp_phones)?;

            let gold: Vec<(String, Vec<StateId>)> = decode_align
                .iter()
                .map(|(id, _)| {
                    let utt = by_id[id.as_str()];
                    (id.clone(), utt.gold_alignment.clone())
                })
                .collect();
            let align_acc = alignment_accuracy(&gold, &decode_align).ok();

            let rtf_rows = fs::read_to_string(decode.join("rtf.csv"))?;
            let mut runs = Vec::new();
            for line in rtf_rows.lines().skip(1) {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() == 3 {
                    let frames: usize = fields[1].parse().map_err(|_| Error::Parse {
                        line: 0,
                        msg: "bad rtf.csv frames".into(),
                    })?;
                    let secs: f64 = fields[2].parse().map_err(|_| Error::Parse {
                        line: 0,
                        msg: "bad rtf.csv seconds".into(),
                    })?;
                    runs.push((frames, secs));
                }
            }

            let graph_info = match graph {
                Some(path) => Some(graph_stats(&load_wfst(&path)?)),
                None => None,
            };

            let report = EvalReport {
                system,
                wer,
                per,
                alignment_accuracy: align_acc,
                mean_rtf: measure_rtf(&runs),
                graph: graph_info,
            };
            fs::create_dir_all(&out)?;
            fs::write(
                out.join("report.csv"),
                format!("{EVAL_CSV_HEADER}\n{}\n", report.csv_row()),
            )?;
            fs::write(out.join("report.txt"), report.text_block())?;
            print!("{}", report.text_block());
            Ok(())
        }
    }
}

fn read_alignment(path: &Path) -> Result<Vec<(String, Vec<StateId>)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (id, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            msg: "expected `utt_id<TAB>state ...`".into(),
        })?;
        let states: std::result::Result<Vec<StateId>, _> =
            rest.split_whitespace().map(|t| t.parse()).collect();
        out.push((
            id.to_string(),
            states.map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("bad state id: {e}"),
            })?,
        ));
    }
    Ok(out)
}
