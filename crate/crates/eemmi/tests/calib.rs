// Scratch calibration runs (deleted before shipping).

use std::time::Instant;

use eemmi::acoustic::{train, LossKind, TrainConfig};
use eemmi::decode::{build_hlg, DecodeConfig};
use eemmi::harness::eval::compute_error_rate;
use eemmi::harness::synth::{generate_corpus, SyntheticCorpusSpec};
use eemmi::harness::{decode_corpus, prepare_items, SystemModel};
use eemmi::lm::StateLmKind;

fn c5_spec(noise: f64, seed: u64) -> SyntheticCorpusSpec {
    SyntheticCorpusSpec {
        phonemes: 10,
        words: 20,
        word_len_min: 2,
        word_len_max: 4,
        sent_len_min: 2,
        sent_len_max: 6,
        feature_dim: 6,
        mean_scale: 1.0,
        noise,
        self_loop_prob: 0.5,
        speakers: 10,
        speaker_shift: 0.3,
        train_utterances: 500,
        test_utterances: 50,
        seed,
    }
}

#[test]
#[ignore]
fn classifier_accuracy_sweep() {
    for noise in [0.5, 0.6, 0.7, 0.8, 0.9] {
        let (corpus, model) = generate_corpus(&c5_spec(noise, 11)).unwrap();
        let acc = model.nearest_mean_accuracy(&corpus);
        let frames: usize = corpus.train.iter().map(|u| u.features.num_frames()).sum();
        println!("noise {noise}: classifier {acc:.4}, train frames {frames}");
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

#[test]
#[ignore]
fn c678_fixture() {
    let noise: f64 = std::env::var("NOISE").map(|v| v.parse().unwrap()).unwrap_or(0.9);
    let epochs: usize = std::env::var("EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(10);
    let started = Instant::now();
    let spec = SyntheticCorpusSpec {
        phonemes: 8,
        words: 12,
        word_len_min: 2,
        word_len_max: 4,
        sent_len_min: 2,
        sent_len_max: 5,
        feature_dim: 6,
        mean_scale: 1.0,
        noise,
        self_loop_prob: 0.5,
        speakers: 6,
        speaker_shift: 0.3,
        train_utterances: 160,
        test_utterances: 40,
        seed: 21,
    };
    let (corpus, model) = generate_corpus(&spec).unwrap();
    println!("classifier: {:.4}", model.nearest_mean_accuracy(&corpus));
    let refs: Vec<(String, Vec<String>)> = corpus
        .test
        .iter()
        .map(|u| (u.utt_id.clone(), u.words.clone()))
        .collect();
    let gold: Vec<(String, Vec<usize>)> = corpus
        .test
        .iter()
        .map(|u| (u.utt_id.clone(), u.gold_alignment.clone()))
        .collect();

    let train_one = |seed: u64, kind: LossKind, lm_kind: StateLmKind| {
        let cfg = TrainConfig {
            epochs,
            batch_size: 8,
            hidden: vec![64, 64],
            window_radius: 3,
            train_lm_kind: lm_kind,
            seed,
            ..TrainConfig::default()
        };
        let items = prepare_items(&corpus.train, cfg.window_radius).unwrap();
        let outcome = train(&items, corpus.inventory.len(), &cfg, kind).unwrap();
        SystemModel {
            net: outcome.net,
            params: outcome.params,
            window_radius: cfg.window_radius,
        }
    };
    let wer_of = |sys: &SystemModel, models: &[SystemModel]| {
        let hlg =
            build_hlg(&sys.params, &corpus.inventory, &corpus.lexicon, &corpus.word_lm).unwrap();
        let run = decode_corpus(&hlg, &corpus.test, models, &DecodeConfig::default()).unwrap();
        compute_error_rate(&refs, &run.hyps).unwrap().rate()
    };

    let mut wers: std::collections::HashMap<&str, Vec<f64>> = Default::default();
    let mut align_mmi = Vec::new();
    let mut align_ctc = Vec::new();
    let mut bigram_models = Vec::new();
    for seed in [1u64, 2, 3] {
        let big = train_one(seed, LossKind::Mmi, StateLmKind::Bigram);
        let uni = train_one(seed, LossKind::Mmi, StateLmKind::Unigram);
        let unif = train_one(seed, LossKind::Mmi, StateLmKind::Uniform);
        let ctc = train_one(seed, LossKind::Ctc, StateLmKind::Bigram);
        wers.entry("bigram").or_default().push(wer_of(&big, std::slice::from_ref(&big)));
        wers.entry("unigram").or_default().push(wer_of(&uni, std::slice::from_ref(&uni)));
        wers.entry("uniform").or_default().push(wer_of(&unif, std::slice::from_ref(&unif)));

        let fa = eemmi::harness::align_corpus(&corpus.test, &big).unwrap();
        let acc_mmi = eemmi::harness::eval::alignment_accuracy(&gold, &fa).unwrap();
        let ba = eemmi::harness::ctc_align_corpus(&corpus.test, &ctc).unwrap();
        let acc_ctc = eemmi::harness::eval::alignment_accuracy(&gold, &ba).unwrap();
        align_mmi.push(acc_mmi);
        align_ctc.push(acc_ctc);
        println!("seed {seed}: align mmi {acc_mmi:.4} ctc {acc_ctc:.4}");
        bigram_models.push(big);
    }
    for k in ["bigram", "unigram", "uniform"] {
        println!("{k}: wers {:?} median {:.4}", wers[k], median(wers[k].clone()));
    }
    println!(
        "align medians: mmi {:.4} ctc {:.4}",
        median(align_mmi.clone()),
        median(align_ctc.clone())
    );
    let ens = wer_of(&bigram_models[0].clone(), &bigram_models);
    let best_single = wers["bigram"].iter().cloned().fold(f64::INFINITY, f64::min);
    println!("ensemble WER {:.4} vs best single {:.4}", ens, best_single);
    let m0 = bigram_models[0].clone();
    println!("sanity single-as-ensemble: {:.4}", wer_of(&m0, &[m0.clone(), m0.clone(), m0.clone()]));
    println!(
        "pairwise ensembles: 01 {:.4} 02 {:.4} 12 {:.4}",
        wer_of(&bigram_models[0].clone(), &bigram_models[0..2]),
        wer_of(&bigram_models[0].clone(), &[bigram_models[0].clone(), bigram_models[2].clone()]),
        wer_of(&bigram_models[1].clone(), &bigram_models[1..3]),
    );
    println!("total time: {:.1}s", started.elapsed().as_secs_f64());
}

#[test]
#[ignore]
fn c5_end_to_end() {
    let noise: f64 = std::env::var("NOISE").map(|v| v.parse().unwrap()).unwrap_or(0.7);
    let epochs: usize = std::env::var("EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(20);
    let hidden: usize = std::env::var("HIDDEN").map(|v| v.parse().unwrap()).unwrap_or(96);
    let radius: usize = std::env::var("RADIUS").map(|v| v.parse().unwrap()).unwrap_or(3);
    let started = Instant::now();
    let (corpus, model) = generate_corpus(&c5_spec(noise, 11)).unwrap();
    println!("classifier: {:.4}", model.nearest_mean_accuracy(&corpus));

    let cfg = TrainConfig {
        epochs,
        batch_size: 8,
        hidden: vec![hidden, hidden],
        window_radius: radius,
        train_lm_kind: StateLmKind::Bigram,
        ..TrainConfig::default()
    };
    let items = prepare_items(&corpus.train, cfg.window_radius).unwrap();
    let outcome = train(&items, corpus.inventory.len(), &cfg, LossKind::Mmi).unwrap();
    for m in &outcome.metrics {
        println!(
            "epoch {}: train {:.4} valid {:.4} per {:.4} lr {:.5}",
            m.epoch, m.train_loss, m.valid_loss, m.valid_per, m.lr
        );
    }
    println!("train time: {:.1}s", started.elapsed().as_secs_f64());

    let sys = SystemModel {
        net: outcome.net,
        params: outcome.params,
        window_radius: cfg.window_radius,
    };
    let hlg = build_hlg(&sys.params, &corpus.inventory, &corpus.lexicon, &corpus.word_lm).unwrap();
    println!("HLG: {} states {} arcs", hlg.num_states(), hlg.num_arcs());
    for scale in [0.5, 0.6, 0.7, 0.8, 0.9] {
        let cfg = DecodeConfig { acoustic_scale: scale, ..DecodeConfig::default() };
        let run = decode_corpus(&hlg, &corpus.test, &[sys.clone()], &cfg).unwrap();
        let refs: Vec<(String, Vec<String>)> = corpus
            .test
            .iter()
            .map(|u| (u.utt_id.clone(), u.words.clone()))
            .collect();
        let wer = compute_error_rate(&refs, &run.hyps).unwrap();
        println!("scale {scale}: WER {:.4} ({} errs)", wer.rate(), wer.errors());
    }
    println!("total time: {:.1}s", started.elapsed().as_secs_f64());
}
