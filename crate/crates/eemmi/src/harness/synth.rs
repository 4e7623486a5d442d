//! Synthetic corpus generation with known ground truth: a random lexicon,
//! sentences from a random word bigram, state durations from a self-loop
//! parameter, Gaussian emissions around per-state means, and per-speaker
//! affine distortion. Fully reproducible from the seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::acoustic::FeatureSequence;
use crate::error::{Error, Result};
use crate::harness::config::KvConfig;
use crate::inventory::{build_inventory, build_transcript, Lexicon, StateId, StateInventory, Transcript};
use crate::lm::{NgramEntry, WordNgramLM};

#[derive(Debug, Clone)]
pub struct SyntheticCorpusSpec {
    pub phonemes: usize,
    pub words: usize,
    pub word_len_min: usize,
    pub word_len_max: usize,
    pub sent_len_min: usize,
    pub sent_len_max: usize,
    pub feature_dim: usize,
    /// Scale of the per-state emission means.
    pub mean_scale: f64,
    /// Emission noise σ.
    pub noise: f64,
    /// Probability of repeating a state at the next frame.
    pub self_loop_prob: f64,
    pub speakers: usize,
    /// Magnitude of the per-speaker affine distortion.
    pub speaker_shift: f64,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            phonemes: 10,
            words: 20,
            word_len_min: 2,
            word_len_max: 4,
            sent_len_min: 2,
            sent_len_max: 6,
            feature_dim: 6,
            mean_scale: 1.0,
            noise: 0.4,
            self_loop_prob: 0.5,
            speakers: 4,
            speaker_shift: 0.5,
            train_utterances: 100,
            test_utterances: 20,
            seed: 1,
        }
    }
}

const SPEC_KEYS: [&str; 15] = [
    "phonemes",
    "words",
    "word_len_min",
    "word_len_max",
    "sent_len_min",
    "sent_len_max",
    "feature_dim",
    "mean_scale",
    "noise",
    "self_loop_prob",
    "speakers",
    "speaker_shift",
    "train_utterances",
    "test_utterances",
    "seed",
];

impl SyntheticCorpusSpec {
    pub fn from_config(kv: &KvConfig) -> Result<Self> {
        kv.check_keys(&SPEC_KEYS)?;
        let d = SyntheticCorpusSpec::default();
        let spec = SyntheticCorpusSpec {
            phonemes: kv.get_or("phonemes", d.phonemes)?,
            words: kv.get_or("words", d.words)?,
            word_len_min: kv.get_or("word_len_min", d.word_len_min)?,
            word_len_max: kv.get_or("word_len_max", d.word_len_max)?,
            sent_len_min: kv.get_or("sent_len_min", d.sent_len_min)?,
            sent_len_max: kv.get_or("sent_len_max", d.sent_len_max)?,
            feature_dim: kv.get_or("feature_dim", d.feature_dim)?,
            mean_scale: kv.get_or("mean_scale", d.mean_scale)?,
            noise: kv.get_or("noise", d.noise)?,
            self_loop_prob: kv.get_or("self_loop_prob", d.self_loop_prob)?,
            speakers: kv.get_or("speakers", d.speakers)?,
            speaker_shift: kv.get_or("speaker_shift", d.speaker_shift)?,
            train_utterances: kv.get_or("train_utterances", d.train_utterances)?,
            test_utterances: kv.get_or("test_utterances", d.test_utterances)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phonemes == 0
            || self.words == 0
            || self.feature_dim == 0
            || self.speakers == 0
            || self.train_utterances == 0
            || self.test_utterances == 0
        {
            return Err(Error::validation("corpus spec counts must be >= 1"));
        }
        if self.word_len_min == 0 || self.word_len_min > self.word_len_max {
            return Err(Error::validation("bad word length range"));
        }
        if self.sent_len_min == 0 || self.sent_len_min > self.sent_len_max {
            return Err(Error::validation("bad sentence length range"));
        }
        if self.noise < 0.0 || self.mean_scale <= 0.0 || self.speaker_shift < 0.0 {
            return Err(Error::validation("bad emission parameters"));
        }
        if !(0.0..1.0).contains(&self.self_loop_prob) {
            return Err(Error::validation("self_loop_prob must be in [0,1)"));
        }
        Ok(())
    }

    pub fn to_config_text(&self) -> String {
        format!(
            "phonemes = {}\nwords = {}\nword_len_min = {}\nword_len_max = {}\nsent_len_min = {}\nsent_len_max = {}\nfeature_dim = {}\nmean_scale = {}\nnoise = {}\nself_loop_prob = {}\nspeakers = {}\nspeaker_shift = {}\ntrain_utterances = {}\ntest_utterances = {}\nseed = {}\n",
            self.phonemes,
            self.words,
            self.word_len_min,
            self.word_len_max,
            self.sent_len_min,
            self.sent_len_max,
            self.feature_dim,
            self.mean_scale,
            self.noise,
            self.self_loop_prob,
            self.speakers,
            self.speaker_shift,
            self.train_utterances,
            self.test_utterances,
            self.seed
        )
    }
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: String,
    pub features: FeatureSequence,
    pub words: Vec<String>,
    pub transcript: Transcript,
    pub gold_alignment: Vec<StateId>,
}

/// A corpus with everything the pipelines need: the state inventory, the
/// lexicon, the generator's word bigram as a decode LM, and the two splits.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub inventory: StateInventory,
    pub lexicon: Lexicon,
    pub word_lm: WordNgramLM,
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl Corpus {
    pub fn all_utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.train.iter().chain(self.test.iter())
    }
}

/// Ground-truth emission model, returned alongside the corpus so tests can
/// evaluate idealized classifiers against it.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    /// L×D per-state emission means (before speaker distortion).
    pub state_means: Vec<f64>,
    pub feature_dim: usize,
}

impl GeneratorModel {
    pub fn mean(&self, state: StateId) -> &[f64] {
        &self.state_means[state * self.feature_dim..(state + 1) * self.feature_dim]
    }

    /// Frame accuracy of a nearest-mean classifier on undistorted features.
    pub fn nearest_mean_accuracy(&self, corpus: &Corpus) -> f64 {
        let l = self.state_means.len() / self.feature_dim;
        let mut hits = 0usize;
        let mut total = 0usize;
        for utt in corpus.all_utterances() {
            for t in 0..utt.features.num_frames() {
                let x = utt.features.frame(t);
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for s in 0..l {
                    let m = self.mean(s);
                    let d: f64 = x.iter().zip(m.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best_d {
                        best_d = d;
                        best = s;
                    }
                }
                hits += usize::from(best == utt.gold_alignment[t]);
                total += 1;
            }
        }
        hits as f64 / total as f64
    }
}

fn sample_run_length<R: Rng>(p_stay: f64, rng: &mut R) -> usize {
    let mut n = 1;
    while n < 30 && rng.gen::<f64>() < p_stay {
        n += 1;
    }
    n
}

/// Generates the corpus described by the spec. The same seed always yields
/// the identical corpus.
pub fn generate_corpus(spec: &SyntheticCorpusSpec) -> Result<(Corpus, GeneratorModel)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    let phoneme_names: Vec<String> = (0..spec.phonemes).map(|i| format!("p{i:02}")).collect();
    let inventory = build_inventory(&phoneme_names)?;
    let l = inventory.len();

    let mut lexicon = Lexicon::new();
    let word_names: Vec<String> = (0..spec.words).map(|i| format!("w{i:03}")).collect();
    for name in &word_names {
        let len = rng.gen_range(spec.word_len_min..=spec.word_len_max);
        let phones: Vec<StateId> =
            (0..len).map(|_| 3 + rng.gen_range(0..spec.phonemes)).collect();
        lexicon.insert(name, phones, &inventory)?;
    }

    // Random word bigram with explicit sentence-end probability; kept as a
    // fully covered ARPA LM so the decode grammar needs no back-off.
    let w = spec.words;
    let mean_len = (spec.sent_len_min + spec.sent_len_max) as f64 / 2.0;
    let p_end = 1.0 / mean_len;
    let normalize = |v: &mut Vec<f64>| {
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
    };
    let mut initial: Vec<f64> = (0..w).map(|_| rng.gen_range(0.5..1.5)).collect();
    normalize(&mut initial);
    let mut trans: Vec<Vec<f64>> = (0..w)
        .map(|_| {
            let mut row: Vec<f64> = (0..w).map(|_| rng.gen_range(0.5..1.5)).collect();
            normalize(&mut row);
            row
        })
        .collect();
    for row in trans.iter_mut() {
        row.iter_mut().for_each(|p| *p *= 1.0 - p_end);
    }

    let mut word_lm = WordNgramLM::new(2)?;
    let begin = word_lm.intern(crate::decode::SENT_BEGIN);
    let end = word_lm.intern(crate::decode::SENT_END);
    let word_ids: Vec<u32> = word_names.iter().map(|n| word_lm.intern(n)).collect();
    word_lm.add_gram(vec![begin], NgramEntry { log10_prob: -99.0, backoff_log10: None })?;
    word_lm.add_gram(
        vec![end],
        NgramEntry { log10_prob: p_end.log10(), backoff_log10: None },
    )?;
    for (i, &wid) in word_ids.iter().enumerate() {
        word_lm.add_gram(
            vec![wid],
            NgramEntry { log10_prob: initial[i].log10(), backoff_log10: None },
        )?;
        word_lm.add_gram(
            vec![begin, wid],
            NgramEntry { log10_prob: initial[i].log10(), backoff_log10: None },
        )?;
        word_lm.add_gram(
            vec![wid, end],
            NgramEntry { log10_prob: p_end.log10(), backoff_log10: None },
        )?;
        for (j, &wjd) in word_ids.iter().enumerate() {
            word_lm.add_gram(
                vec![wid, wjd],
                NgramEntry { log10_prob: trans[i][j].log10(), backoff_log10: None },
            )?;
        }
    }
    word_lm.validate()?;

    let state_means: Vec<f64> = (0..l * spec.feature_dim)
        .map(|_| spec.mean_scale * std_normal.sample(&mut rng))
        .collect();
    let model = GeneratorModel {
        state_means: state_means.clone(),
        feature_dim: spec.feature_dim,
    };

    // Per-speaker affine distortion: x -> a ⊙ x + b per dimension.
    let s_mag = spec.speaker_shift;
    let speakers: Vec<(String, Vec<f64>, Vec<f64>)> = (0..spec.speakers)
        .map(|i| {
            let scale: Vec<f64> = (0..spec.feature_dim)
                .map(|_| 1.0 + 0.1 * s_mag.min(1.0) * rng.gen_range(-1.0..1.0))
                .collect();
            let offset: Vec<f64> =
                (0..spec.feature_dim).map(|_| s_mag * std_normal.sample(&mut rng)).collect();
            (format!("spk{i:02}"), scale, offset)
        })
        .collect();

    let sample_sentence = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        loop {
            let mut sent = Vec::new();
            let mut cur = sample_categorical(&initial, rng);
            sent.push(cur);
            loop {
                if rng.gen::<f64>() < p_end {
                    break;
                }
                cur = sample_categorical(&trans[cur], rng);
                sent.push(cur);
                if sent.len() > spec.sent_len_max {
                    break;
                }
            }
            if sent.len() >= spec.sent_len_min && sent.len() <= spec.sent_len_max {
                return sent;
            }
        }
    };

    let make_split = |prefix: &str, count: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Utterance>> {
        let mut utts = Vec::with_capacity(count);
        for i in 0..count {
            let utt_id = format!("{prefix}{i:04}");
            let (speaker_id, scale, offset) = &speakers[i % speakers.len()];
            let sent = sample_sentence(rng);
            let words: Vec<String> = sent.iter().map(|&wi| word_names[wi].clone()).collect();
            let transcript = build_transcript(&words, &lexicon, &inventory)?;

            let mut gold = Vec::new();
            for &s in transcript.states() {
                for _ in 0..sample_run_length(spec.self_loop_prob, rng) {
                    gold.push(s);
                }
            }
            let frames = gold.len();
            let mut feats = Vec::with_capacity(frames * spec.feature_dim);
            for &s in &gold {
                let mean = &state_means[s * spec.feature_dim..(s + 1) * spec.feature_dim];
                for d in 0..spec.feature_dim {
                    let x = mean[d] + spec.noise * std_normal.sample(rng);
                    feats.push(scale[d] * x + offset[d]);
                }
            }
            let features = FeatureSequence::new(&utt_id, speaker_id, spec.feature_dim, feats)?;
            debug_assert_eq!(crate::inventory::collapse_states(&gold), transcript.states());
            utts.push(Utterance {
                utt_id,
                speaker_id: speaker_id.clone(),
                features,
                words,
                transcript,
                gold_alignment: gold,
            });
        }
        Ok(utts)
    };

    let train = make_split("tr", spec.train_utterances, &mut rng)?;
    let test = make_split("te", spec.test_utterances, &mut rng)?;

    Ok((
        Corpus {
            inventory,
            lexicon,
            word_lm,
            train,
            test,
        },
        model,
    ))
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        x -= p;
        if x <= 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inventory::collapse_states;

    fn tiny_spec() -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            phonemes: 4,
            words: 5,
            train_utterances: 6,
            test_utterances: 3,
            feature_dim: 3,
            speakers: 2,
            ..SyntheticCorpusSpec::default()
        }
    }

    #[test]
    fn alignments_collapse_to_transcripts() {
        let (corpus, _) = generate_corpus(&tiny_spec()).unwrap();
        for utt in corpus.all_utterances() {
            assert_eq!(collapse_states(&utt.gold_alignment), utt.transcript.states());
            assert_eq!(utt.features.num_frames(), utt.gold_alignment.len());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, _) = generate_corpus(&tiny_spec()).unwrap();
        let (b, _) = generate_corpus(&tiny_spec()).unwrap();
        assert_eq!(a.train.len(), b.train.len());
        for (x, y) in a.all_utterances().zip(b.all_utterances()) {
            assert_eq!(x.utt_id, y.utt_id);
            assert_eq!(x.words, y.words);
            assert_eq!(x.gold_alignment, y.gold_alignment);
            let same = x
                .features
                .frames
                .iter()
                .zip(y.features.frames.iter())
                .all(|(p, q)| p.to_bits() == q.to_bits());
            assert!(same, "features differ for {}", x.utt_id);
        }
    }

    #[test]
    fn noiseless_single_speaker_is_classifiable_exactly() {
        let spec = SyntheticCorpusSpec {
            noise: 0.0,
            speakers: 1,
            speaker_shift: 0.0,
            ..tiny_spec()
        };
        let (corpus, model) = generate_corpus(&spec).unwrap();
        // Frames equal the state means exactly.
        for utt in corpus.all_utterances() {
            for t in 0..utt.features.num_frames() {
                let s = utt.gold_alignment[t];
                assert_eq!(utt.features.frame(t), model.mean(s));
            }
        }
        assert_eq!(model.nearest_mean_accuracy(&corpus), 1.0);
    }

    #[test]
    fn word_lm_scores_generated_sentences() {
        let (corpus, _) = generate_corpus(&tiny_spec()).unwrap();
        for utt in corpus.train.iter().take(3) {
            assert!(corpus.word_lm.score_word_sequence(&utt.words).unwrap() < 0.0);
        }
    }

    #[test]
    fn spec_validation() {
        let mut spec = tiny_spec();
        spec.word_len_min = 5;
        spec.word_len_max = 2;
        assert!(generate_corpus(&spec).is_err());
        let kv = KvConfig::parse("phonemes = 3\nbogus = 1\n").unwrap();
        assert!(SyntheticCorpusSpec::from_config(&kv).is_err());
        let kv = KvConfig::parse("phonemes = 3\nnoise = 0.2\n").unwrap();
        let spec = SyntheticCorpusSpec::from_config(&kv).unwrap();
        assert_eq!(spec.phonemes, 3);
        assert_eq!(spec.noise, 0.2);
    }

    #[test]
    fn config_text_roundtrip() {
        let spec = tiny_spec();
        let kv = KvConfig::parse(&spec.to_config_text()).unwrap();
        let again = SyntheticCorpusSpec::from_config(&kv).unwrap();
        assert_eq!(again.phonemes, spec.phonemes);
        assert_eq!(again.noise, spec.noise);
        assert_eq!(again.seed, spec.seed);
    }
}
