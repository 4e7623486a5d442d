//! Mini-batch training loop: per-utterance losses in parallel, ordered
//! reduction, global-norm clipping and ADAM, with a length-sorted seeded
//! train/validation split and validation-driven learning-rate decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acoustic::features::WindowedFeatures;
use crate::acoustic::net::AcousticNet;
use crate::ctc::{ctc_best_path_align, ctc_loss_and_grad, CtcLabeling};
use crate::error::{Error, Result};
use crate::inventory::Transcript;
use crate::lm::{estimate_state_lm, StateLmKind};
use crate::mmi::{mmi_loss_and_grad, ModelParameters};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mmi,
    Ctc,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Mmi => "mmi",
            LossKind::Ctc => "ctc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mmi" => Ok(LossKind::Mmi),
            "ctc" => Ok(LossKind::Ctc),
            other => Err(Error::validation(format!("unknown loss kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub valid_fraction: f64,
    pub seed: u64,
    pub shift_interval: usize,
    pub window_radius: usize,
    pub hidden: Vec<usize>,
    pub train_lm_kind: StateLmKind,
    pub lm_alpha: f64,
    /// Consecutive non-improving epochs before the learning rate is halved.
    pub lr_halve_patience: usize,
    /// Consecutive non-improving epochs before training stops.
    pub stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            clip_norm: 50.0,
            batch_size: 8,
            epochs: 20,
            valid_fraction: 0.05,
            seed: 1,
            shift_interval: 25,
            window_radius: 5,
            hidden: vec![128, 128],
            train_lm_kind: StateLmKind::Bigram,
            lm_alpha: 0.1,
            lr_halve_patience: 2,
            stop_patience: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0
            || self.clip_norm <= 0.0
            || self.batch_size == 0
            || self.epochs == 0
            || self.shift_interval == 0
            || self.lm_alpha < 0.0
            || self.hidden.iter().any(|&h| h == 0)
        {
            return Err(Error::validation("train config fields must be positive"));
        }
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return Err(Error::validation("valid_fraction must be in (0,1)"));
        }
        Ok(())
    }
}

/// One prepared training utterance.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub utt_id: String,
    pub windows: WindowedFeatures,
    pub transcript: Transcript,
    pub ctc: CtcLabeling,
}

impl TrainItem {
    pub fn new(utt_id: &str, windows: WindowedFeatures, transcript: Transcript) -> Result<Self> {
        let ctc = CtcLabeling::from_labels(transcript.phones())?;
        Ok(TrainItem {
            utt_id: utt_id.to_string(),
            windows,
            transcript,
            ctc,
        })
    }
}

/// ADAM accumulators over the concatenated parameter vector
/// (net weights, then transition logits, then prior logits).
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(net: &AcousticNet, num_states: usize) -> Self {
        let n = net.num_params() + 2 * num_states;
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// Scales the gradient so its global L2 norm is at most `clip`.
/// Returns (norm before, norm after).
pub fn clip_global_norm(grad: &mut [f64], clip: f64) -> (f64, f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > clip {
        let s = clip / norm;
        grad.iter_mut().for_each(|g| *g *= s);
        (norm, clip)
    } else {
        (norm, norm)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    /// Batch loss, summed over utterances and divided by total frames.
    pub loss_per_frame: f64,
    pub frames: usize,
    pub grad_norm: f64,
    pub applied_norm: f64,
}

struct UttGrad {
    loss: f64,
    frames: usize,
    net_grad: Vec<f64>,
    transition_grad: Vec<f64>,
    prior_grad: Vec<f64>,
}

fn utterance_grads(
    net: &AcousticNet,
    params: &ModelParameters,
    item: &TrainItem,
    kind: LossKind,
    shift_interval: usize,
) -> Result<UttGrad> {
    let (grid, cache) = net.forward_cached(&item.windows)?;
    let l = params.num_states();
    let (loss, grad_y, transition_grad, prior_grad) = match kind {
        LossKind::Mmi => {
            let out = mmi_loss_and_grad(&grid, &item.transcript, params, shift_interval)?;
            (out.loss, out.grad_y, out.grad_transition_logits, out.grad_prior_logits)
        }
        LossKind::Ctc => {
            let out = ctc_loss_and_grad(&grid, &item.ctc)?;
            (out.loss, out.grad_y, vec![0.0; l], vec![0.0; l])
        }
    };
    let net_grad = net.backward(&item.windows, &grid, &cache, &grad_y)?.flat;
    Ok(UttGrad {
        loss,
        frames: item.windows.frames,
        net_grad,
        transition_grad,
        prior_grad,
    })
}

/// One ascent step on a mini-batch: per-utterance gradients (in parallel),
/// summed in utterance order, clipped by global norm, then one ADAM update.
/// CTC mode leaves the transition and prior logits untouched.
pub fn train_step(
    net: &mut AcousticNet,
    params: &mut ModelParameters,
    batch: &[&TrainItem],
    cfg: &TrainConfig,
    kind: LossKind,
    adam: &mut AdamState,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let l = params.num_states();
    let per_utt: Vec<Result<UttGrad>> = par::map_slice(batch, |item| {
        utterance_grads(net, params, item, kind, cfg.shift_interval)
    });

    let n_net = net.num_params();
    let mut grad = vec![0.0; n_net + 2 * l];
    let mut total_loss = 0.0;
    let mut total_frames = 0usize;
    for res in per_utt {
        let u = res?;
        if !u.loss.is_finite() {
            return Err(Error::NonFinite("batch loss".into()));
        }
        total_loss += u.loss;
        total_frames += u.frames;
        for (g, v) in grad[..n_net].iter_mut().zip(u.net_grad.iter()) {
            *g += v;
        }
        for (g, v) in grad[n_net..n_net + l].iter_mut().zip(u.transition_grad.iter()) {
            *g += v;
        }
        for (g, v) in grad[n_net + l..].iter_mut().zip(u.prior_grad.iter()) {
            *g += v;
        }
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("batch gradient".into()));
    }

    let (grad_norm, applied_norm) = clip_global_norm(&mut grad, cfg.clip_norm);

    adam.step += 1;
    let t = adam.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    let mut theta = net.flatten();
    theta.extend_from_slice(params.transition_logits());
    theta.extend_from_slice(params.prior_logits());
    for i in 0..theta.len() {
        adam.m[i] = ADAM_BETA1 * adam.m[i] + (1.0 - ADAM_BETA1) * grad[i];
        adam.v[i] = ADAM_BETA2 * adam.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let m_hat = adam.m[i] / bias1;
        let v_hat = adam.v[i] / bias2;
        theta[i] += cfg.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    net.unflatten(&theta[..n_net])?;
    params.set_transition_logits(theta[n_net..n_net + l].to_vec())?;
    params.set_prior_logits(theta[n_net + l..].to_vec())?;

    Ok(StepOutcome {
        loss_per_frame: total_loss / total_frames as f64,
        frames: total_frames,
        grad_norm,
        applied_norm,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_per: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub net: AcousticNet,
    pub params: ModelParameters,
    pub metrics: Vec<EpochMetrics>,
}

fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

struct ValidMetrics {
    loss_per_frame: f64,
    per: f64,
}

fn validate_items(
    net: &AcousticNet,
    params: &ModelParameters,
    items: &[&TrainItem],
    kind: LossKind,
    shift_interval: usize,
) -> Result<ValidMetrics> {
    let rows: Vec<Result<(f64, usize, usize, usize)>> = par::map_slice(items, |item| {
        let grid = net.forward(&item.windows)?;
        let loss = match kind {
            LossKind::Mmi => mmi_loss_and_grad(&grid, &item.transcript, params, shift_interval)?.loss,
            LossKind::Ctc => ctc_loss_and_grad(&grid, &item.ctc)?.loss,
        };
        let (_, hyp_labels) = ctc_best_path_align(&grid);
        let hyp: Vec<usize> = hyp_labels
            .into_iter()
            .filter(|&c| c >= crate::inventory::RESERVED_NAMES.len())
            .collect();
        let reference = item.transcript.phones();
        let errs = edit_distance(&reference, &hyp);
        Ok((loss, item.windows.frames, errs, reference.len()))
    });
    let mut loss = 0.0;
    let mut frames = 0usize;
    let mut errs = 0usize;
    let mut ref_len = 0usize;
    for r in rows {
        let (l, f, e, n) = r?;
        loss += l;
        frames += f;
        errs += e;
        ref_len += n;
    }
    Ok(ValidMetrics {
        loss_per_frame: loss / frames as f64,
        per: errs as f64 / ref_len.max(1) as f64,
    })
}

/// Full training: seeded 95/5 split, train side sorted by length, epoch
/// loop with per-epoch metrics, validation-driven lr halving and stopping.
/// The state LM is estimated from the training-side transcripts. Returns
/// the best-validation model.
pub fn train(items: &[TrainItem], num_states: usize, cfg: &TrainConfig, kind: LossKind) -> Result<TrainOutcome> {
    cfg.validate()?;
    if items.len() < 2 {
        return Err(Error::validation("need at least two utterances"));
    }
    let width = items[0].windows.width;
    if items.iter().any(|i| i.windows.width != width) {
        return Err(Error::shape("mixed window widths"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    let n_valid = ((items.len() as f64 * cfg.valid_fraction).round() as usize)
        .clamp(1, items.len() - 1);
    let valid_idx = &order[..n_valid];
    let mut train_idx: Vec<usize> = order[n_valid..].to_vec();
    train_idx.sort_by_key(|&i| (items[i].windows.frames, i));

    let train_transcripts: Vec<Transcript> =
        train_idx.iter().map(|&i| items[i].transcript.clone()).collect();
    let state_lm = estimate_state_lm(&train_transcripts, num_states, cfg.train_lm_kind, cfg.lm_alpha)?;

    let mut net = AcousticNet::new(width, &cfg.hidden, num_states, cfg.seed)?;
    let mut params = ModelParameters::symmetric(state_lm);
    let mut adam = AdamState::new(&net, num_states);

    let batches: Vec<Vec<usize>> =
        train_idx.chunks(cfg.batch_size).map(|c| c.to_vec()).collect();
    let valid_items: Vec<&TrainItem> = valid_idx.iter().map(|&i| &items[i]).collect();

    let mut lr = cfg.learning_rate;
    let mut best: Option<(f64, f64)> = None; // (per, loss)
    let mut best_model: Option<(AcousticNet, ModelParameters)> = None;
    let mut since_improve = 0usize;
    let mut metrics = Vec::new();

    for epoch in 0..cfg.epochs {
        let mut batch_order: Vec<usize> = (0..batches.len()).collect();
        batch_order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut epoch_frames = 0usize;
        let step_cfg = TrainConfig { learning_rate: lr, ..cfg.clone() };
        for &bi in &batch_order {
            let batch: Vec<&TrainItem> = batches[bi].iter().map(|&i| &items[i]).collect();
            let out = train_step(&mut net, &mut params, &batch, &step_cfg, kind, &mut adam)?;
            epoch_loss += out.loss_per_frame * out.frames as f64;
            epoch_frames += out.frames;
        }

        let vm = validate_items(&net, &params, &valid_items, kind, cfg.shift_interval)?;
        metrics.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss / epoch_frames as f64,
            valid_loss: vm.loss_per_frame,
            valid_per: vm.per,
            lr,
        });

        let improved = match best {
            None => true,
            Some((bp, bl)) => vm.per < bp - 1e-12 || (vm.per <= bp + 1e-12 && vm.loss_per_frame > bl + 1e-12),
        };
        if improved {
            best = Some((vm.per, vm.loss_per_frame));
            best_model = Some((net.clone(), params.clone()));
            since_improve = 0;
        } else {
            since_improve += 1;
            if since_improve == cfg.lr_halve_patience {
                lr *= 0.5;
            }
            if since_improve >= cfg.stop_patience {
                break;
            }
        }
    }

    let (net, params) = best_model.unwrap_or((net, params));
    Ok(TrainOutcome { net, params, metrics })
}
