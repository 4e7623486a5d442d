//! Seeded instance samplers and finite-difference checks shared by unit
//! tests, the acceptance suite and the benches.

#![doc(hidden)]

use rand::Rng;

use crate::ctc::{ctc_loss_and_grad, CtcLabeling};
use crate::inventory::Transcript;
use crate::lm::{StateLM, StateLmKind};
use crate::mmi::{mmi_loss_and_grad, LogPosteriorGrid, ModelParameters};

/// Random row-normalized grid from uniform logits in [−2, 2].
pub fn random_grid<R: Rng>(frames: usize, states: usize, rng: &mut R) -> LogPosteriorGrid {
    let logits: Vec<f64> = (0..frames * states).map(|_| rng.gen_range(-2.0..2.0)).collect();
    LogPosteriorGrid::from_logits(frames, states, &logits).expect("finite logits")
}

/// Random state LM with all off-diagonal transitions strictly positive.
pub fn random_state_lm<R: Rng>(states: usize, rng: &mut R) -> StateLM {
    let mut q = vec![0.0; states * states];
    for c in 0..states {
        let mut sum = 0.0;
        for j in 0..states {
            if j != c {
                let w = rng.gen_range(0.1..1.0);
                q[c * states + j] = w;
                sum += w;
            }
        }
        for j in 0..states {
            q[c * states + j] /= sum;
        }
    }
    StateLM::from_matrix(StateLmKind::Bigram, states, q).expect("valid rows")
}

pub fn random_params<R: Rng>(states: usize, rng: &mut R) -> ModelParameters {
    let lm = random_state_lm(states, rng);
    let trans: Vec<f64> = (0..states).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let prior: Vec<f64> = (0..states).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ModelParameters::new(trans, prior, lm).expect("valid logits")
}

/// Random repeat-free state chain with K+1 entries (K = `k`).
pub fn random_transcript<R: Rng>(states: usize, k: usize, rng: &mut R) -> Transcript {
    let mut gamma = Vec::with_capacity(k + 1);
    for _ in 0..=k {
        loop {
            let s = rng.gen_range(0..states);
            if gamma.last() != Some(&s) {
                gamma.push(s);
                break;
            }
        }
    }
    Transcript::from_states(gamma).expect("no adjacent repeats")
}

/// Random instance with L ≤ `l_max`, T ≤ `t_max`, K ≤ min(T, `k_max`).
pub fn random_instance<R: Rng>(
    l_max: usize,
    t_max: usize,
    k_max: usize,
    rng: &mut R,
) -> (LogPosteriorGrid, Transcript, ModelParameters) {
    let l = rng.gen_range(2..=l_max);
    let t = rng.gen_range(1..=t_max);
    let k = rng.gen_range(0..=k_max.min(t));
    random_instance_sized(l, t, k, rng)
}

pub fn random_instance_sized<R: Rng>(
    l: usize,
    t: usize,
    k: usize,
    rng: &mut R,
) -> (LogPosteriorGrid, Transcript, ModelParameters) {
    let y = random_grid(t, l, rng);
    let gamma = random_transcript(l, k, rng);
    let params = random_params(l, rng);
    (y, gamma, params)
}

/// Relative error with an absolute floor, so finite-difference noise on
/// near-zero entries does not dominate.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn central_diff(mut f: impl FnMut(f64) -> f64, eps: f64) -> f64 {
    (f(eps) - f(-eps)) / (2.0 * eps)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FdReport {
    pub max_rel_err_y: f64,
    pub max_rel_err_transition: f64,
    pub max_rel_err_prior: f64,
}

/// Central-difference check of all three MMI gradient groups. Grid
/// perturbations go through a row log-softmax, so the grid stays valid;
/// at a normalized grid that convention has the same derivative.
pub fn mmi_fd_check(
    y: &LogPosteriorGrid,
    gamma: &Transcript,
    params: &ModelParameters,
    eps: f64,
) -> FdReport {
    let out = mmi_loss_and_grad(y, gamma, params, 1).expect("analytic loss");
    let frames = y.frames();
    let l = y.states();
    let mut report = FdReport::default();

    for i in 0..frames * l {
        let fd = central_diff(
            |d| {
                let mut logits = y.values().to_vec();
                logits[i] += d;
                let yp = LogPosteriorGrid::from_logits(frames, l, &logits).unwrap();
                mmi_loss_and_grad(&yp, gamma, params, 1).unwrap().loss
            },
            eps,
        );
        report.max_rel_err_y = report.max_rel_err_y.max(rel_err(fd, out.grad_y[i]));
    }

    for c in 0..l {
        let fd = central_diff(
            |d| {
                let mut p = params.clone();
                let mut logits = p.transition_logits().to_vec();
                logits[c] += d;
                p.set_transition_logits(logits).unwrap();
                mmi_loss_and_grad(y, gamma, &p, 1).unwrap().loss
            },
            eps,
        );
        report.max_rel_err_transition = report
            .max_rel_err_transition
            .max(rel_err(fd, out.grad_transition_logits[c]));
    }

    for c in 0..l {
        let fd = central_diff(
            |d| {
                let mut p = params.clone();
                let mut logits = p.prior_logits().to_vec();
                logits[c] += d;
                p.set_prior_logits(logits).unwrap();
                mmi_loss_and_grad(y, gamma, &p, 1).unwrap().loss
            },
            eps,
        );
        report.max_rel_err_prior = report
            .max_rel_err_prior
            .max(rel_err(fd, out.grad_prior_logits[c]));
    }
    report
}

/// Central-difference check of the CTC grid gradient (same log-softmax
/// perturbation convention as [`mmi_fd_check`]).
pub fn ctc_fd_check(y: &LogPosteriorGrid, labeling: &CtcLabeling, eps: f64) -> f64 {
    let out = ctc_loss_and_grad(y, labeling).expect("analytic loss");
    let frames = y.frames();
    let l = y.states();
    let mut max_err: f64 = 0.0;
    for i in 0..frames * l {
        let fd = central_diff(
            |d| {
                let mut logits = y.values().to_vec();
                logits[i] += d;
                let yp = LogPosteriorGrid::from_logits(frames, l, &logits).unwrap();
                ctc_loss_and_grad(&yp, labeling).unwrap().loss
            },
            eps,
        );
        max_err = max_err.max(rel_err(fd, out.grad_y[i]));
    }
    max_err
}
