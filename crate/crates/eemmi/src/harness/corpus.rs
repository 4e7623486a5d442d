//! On-disk corpus layout: per-utterance feature files (text header plus
//! little-endian f32 data), corpus-level transcript/alignment text files,
//! the lexicon, the phoneme list and the decode LM.

use std::fs;
use std::path::Path;

use crate::acoustic::FeatureSequence;
use crate::error::{Error, Result};
use crate::harness::synth::{Corpus, Utterance};
use crate::inventory::{
    build_inventory, build_transcript, parse_transcript_file, Lexicon, StateId,
};
use crate::lm::parse_arpa;

const FEAT_MAGIC: &str = "EEMMI-FEAT 1";

/// Feature file: a small text header (`utt`, `speaker`, `frames`, `dim`),
/// a `data` line, then frames×dim little-endian f32 values.
pub fn serialize_features(seq: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::new();
    let header = format!(
        "{FEAT_MAGIC}\nutt {}\nspeaker {}\nframes {}\ndim {}\ndata\n",
        seq.utt_id,
        seq.speaker_id,
        seq.num_frames(),
        seq.dim
    );
    out.extend_from_slice(header.as_bytes());
    for &v in &seq.frames {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn parse_features(buf: &[u8]) -> Result<FeatureSequence> {
    let data_marker = b"data\n";
    let header_end = buf
        .windows(data_marker.len())
        .position(|w| w == data_marker)
        .ok_or_else(|| Error::Parse {
            line: 0,
            msg: "feature file has no data marker".into(),
        })?
        + data_marker.len();
    let header = std::str::from_utf8(&buf[..header_end]).map_err(|_| Error::Parse {
        line: 0,
        msg: "feature header is not UTF-8".into(),
    })?;
    let mut utt = None;
    let mut speaker = None;
    let mut frames: Option<usize> = None;
    let mut dim: Option<usize> = None;
    for (i, line) in header.lines().enumerate() {
        if i == 0 {
            if line != FEAT_MAGIC {
                return Err(Error::Parse {
                    line: 1,
                    msg: "bad feature file magic".into(),
                });
            }
            continue;
        }
        if line == "data" {
            break;
        }
        let (key, value) = line.split_once(' ').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "bad header line".into(),
        })?;
        match key {
            "utt" => utt = Some(value.to_string()),
            "speaker" => speaker = Some(value.to_string()),
            "frames" => frames = value.parse().ok(),
            "dim" => dim = value.parse().ok(),
            other => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("unknown header field `{other}`"),
                })
            }
        }
    }
    let (utt, speaker, frames, dim) = match (utt, speaker, frames, dim) {
        (Some(u), Some(s), Some(f), Some(d)) => (u, s, f, d),
        _ => {
            return Err(Error::Parse {
                line: 0,
                msg: "incomplete feature header".into(),
            })
        }
    };
    let payload = &buf[header_end..];
    if payload.len() != frames * dim * 4 {
        return Err(Error::Parse {
            line: 0,
            msg: format!(
                "feature payload is {} bytes, expected {}",
                payload.len(),
                frames * dim * 4
            ),
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureSequence::new(&utt, &speaker, dim, values)
}

/// Writes the corpus directory: `phones.txt`, `lexicon.txt`, `words.arpa`,
/// `transcripts.txt`, `alignments.txt`, `split.txt` and `feats/*.feat`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir.join("feats"))?;
    let inv = &corpus.inventory;

    let phones: Vec<String> = inv.phoneme_ids().map(|i| inv.name(i).to_string()).collect();
    fs::write(dir.join("phones.txt"), phones.join("\n") + "\n")?;
    fs::write(dir.join("lexicon.txt"), corpus.lexicon.serialize(inv))?;
    fs::write(dir.join("words.arpa"), corpus.word_lm.serialize_arpa())?;

    let mut transcripts = String::new();
    let mut alignments = String::new();
    let mut split = String::new();
    for (name, utts) in [("train", &corpus.train), ("test", &corpus.test)] {
        for utt in utts.iter() {
            transcripts.push_str(&format!("{}\t{}\n", utt.utt_id, utt.words.join(" ")));
            let states: Vec<String> =
                utt.gold_alignment.iter().map(|s| s.to_string()).collect();
            alignments.push_str(&format!("{}\t{}\n", utt.utt_id, states.join(" ")));
            split.push_str(&format!("{}\t{}\n", utt.utt_id, name));
            fs::write(
                dir.join("feats").join(format!("{}.feat", utt.utt_id)),
                serialize_features(&utt.features),
            )?;
        }
    }
    fs::write(dir.join("transcripts.txt"), transcripts)?;
    fs::write(dir.join("alignments.txt"), alignments)?;
    fs::write(dir.join("split.txt"), split)?;
    Ok(())
}

fn parse_alignment_file(text: &str) -> Result<Vec<(String, Vec<StateId>)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (utt, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            msg: "expected `utt_id<TAB>state state ...`".into(),
        })?;
        let states: std::result::Result<Vec<StateId>, _> =
            rest.split_whitespace().map(|t| t.parse::<StateId>()).collect();
        out.push((
            utt.to_string(),
            states.map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("bad state id: {e}"),
            })?,
        ));
    }
    Ok(out)
}

/// Loads a corpus directory written by [`write_corpus`].
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let phones_text = fs::read_to_string(dir.join("phones.txt"))?;
    let phones: Vec<&str> = phones_text.lines().filter(|l| !l.trim().is_empty()).collect();
    let inventory = build_inventory(&phones)?;
    let lexicon = Lexicon::parse(&fs::read_to_string(dir.join("lexicon.txt"))?, &inventory)?;
    let word_lm = parse_arpa(&fs::read_to_string(dir.join("words.arpa"))?)?;

    let transcripts = parse_transcript_file(&fs::read_to_string(dir.join("transcripts.txt"))?)?;
    let alignments = parse_alignment_file(&fs::read_to_string(dir.join("alignments.txt"))?)?;
    let split_rows = parse_transcript_file(&fs::read_to_string(dir.join("split.txt"))?)?;

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, (utt_id, words)) in transcripts.iter().enumerate() {
        let (a_id, gold) = &alignments[i];
        if a_id != utt_id {
            return Err(Error::validation(format!(
                "alignment id `{a_id}` does not match transcript id `{utt_id}`"
            )));
        }
        let (s_id, split_val) = &split_rows[i];
        if s_id != utt_id {
            return Err(Error::validation(format!(
                "split id `{s_id}` does not match transcript id `{utt_id}`"
            )));
        }
        let features =
            parse_features(&fs::read(dir.join("feats").join(format!("{utt_id}.feat")))?)?;
        if &features.utt_id != utt_id {
            return Err(Error::validation(format!(
                "feature file for `{utt_id}` names `{}`",
                features.utt_id
            )));
        }
        let transcript = build_transcript(words, &lexicon, &inventory)?;
        let utt = Utterance {
            utt_id: utt_id.clone(),
            speaker_id: features.speaker_id.clone(),
            features,
            words: words.clone(),
            transcript,
            gold_alignment: gold.clone(),
        };
        match split_val.first().map(|s| s.as_str()) {
            Some("train") => train.push(utt),
            Some("test") => test.push(utt),
            other => {
                return Err(Error::validation(format!(
                    "bad split value {other:?} for `{utt_id}`"
                )))
            }
        }
    }
    Ok(Corpus {
        inventory,
        lexicon,
        word_lm,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{generate_corpus, SyntheticCorpusSpec};

    #[test]
    fn features_roundtrip() {
        let seq = FeatureSequence::new("u7", "spk01", 2, vec![1.5, -2.25, 0.5, 3.0]).unwrap();
        let bytes = serialize_features(&seq);
        let back = parse_features(&bytes).unwrap();
        assert_eq!(back.utt_id, "u7");
        assert_eq!(back.speaker_id, "spk01");
        assert_eq!(back.dim, 2);
        assert_eq!(back.frames, seq.frames); // values are f32-exact
    }

    #[test]
    fn feature_parse_rejects_bad_input() {
        assert!(parse_features(b"not a feature file").is_err());
        let seq = FeatureSequence::new("u", "s", 1, vec![1.0]).unwrap();
        let mut bytes = serialize_features(&seq);
        bytes.pop();
        assert!(parse_features(&bytes).is_err());
    }

    #[test]
    fn corpus_directory_roundtrip() {
        let spec = SyntheticCorpusSpec {
            phonemes: 4,
            words: 5,
            train_utterances: 4,
            test_utterances: 2,
            feature_dim: 3,
            speakers: 2,
            ..SyntheticCorpusSpec::default()
        };
        let (corpus, _) = generate_corpus(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back.train.len(), 4);
        assert_eq!(back.test.len(), 2);
        assert_eq!(back.inventory, corpus.inventory);
        assert_eq!(back.lexicon, corpus.lexicon);
        for (a, b) in corpus.all_utterances().zip(back.all_utterances()) {
            assert_eq!(a.utt_id, b.utt_id);
            assert_eq!(a.words, b.words);
            assert_eq!(a.transcript, b.transcript);
            assert_eq!(a.gold_alignment, b.gold_alignment);
            for (x, y) in a.features.frames.iter().zip(b.features.frames.iter()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        // The LM file round-trips entry-for-entry.
        assert_eq!(
            corpus.word_lm.serialize_arpa(),
            back.word_lm.serialize_arpa()
        );
    }
}
