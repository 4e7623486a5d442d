//! The MMI training criterion: numerator and denominator forward-backward
//! recursions, log P(Γ|õ), and analytic gradients with respect to the
//! network outputs, the transition logits and the prior logits.
//!
//! All recursions run in log scale. On top of that, every `shift_interval`
//! frames the per-frame maximum is subtracted from the whole column and
//! accumulated, so the stored tables stay near zero on arbitrarily long
//! inputs; totals are recovered by re-adding the accumulated shifts, which
//! makes results exactly invariant to the interval choice.

use crate::error::{Error, Result};
use crate::inventory::{collapse_states, StateId, Transcript};
use crate::lm::StateLM;

/// Transition/prior parameters plus the fixed state LM. The acoustic
/// network weights are owned by [`crate::acoustic::AcousticNet`].
#[derive(Debug, Clone)]
pub struct ModelParameters {
    transition_logits: Vec<f64>,
    prior_logits: Vec<f64>,
    state_lm: StateLM,
    log_p_stay: Vec<f64>,
    log_p_leave: Vec<f64>,
    log_priors: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// log(sigmoid(x)) without catastrophic cancellation for large |x|.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&v| (v - m).exp()).sum();
    let log_z = m + z.ln();
    logits.iter().map(|&v| v - log_z).collect()
}

impl ModelParameters {
    /// `transition_logits[c]` is the self-loop logit a_c with
    /// p_c(0) = sigmoid(a_c); priors are the log-softmax of `prior_logits`.
    pub fn new(transition_logits: Vec<f64>, prior_logits: Vec<f64>, state_lm: StateLM) -> Result<Self> {
        let l = state_lm.num_states();
        if transition_logits.len() != l || prior_logits.len() != l {
            return Err(Error::shape(format!(
                "expected {l} transition and prior logits, got {} and {}",
                transition_logits.len(),
                prior_logits.len()
            )));
        }
        if transition_logits.iter().chain(prior_logits.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model logits".into()));
        }
        let mut p = ModelParameters {
            transition_logits,
            prior_logits,
            state_lm,
            log_p_stay: Vec::new(),
            log_p_leave: Vec::new(),
            log_priors: Vec::new(),
        };
        p.refresh();
        Ok(p)
    }

    /// Symmetric start: p_c(0) = 0.5 for every state, uniform priors.
    pub fn symmetric(state_lm: StateLM) -> Self {
        let l = state_lm.num_states();
        ModelParameters::new(vec![0.0; l], vec![0.0; l], state_lm).expect("valid by construction")
    }

    fn refresh(&mut self) {
        self.log_p_stay = self.transition_logits.iter().map(|&a| log_sigmoid(a)).collect();
        self.log_p_leave = self.transition_logits.iter().map(|&a| log_sigmoid(-a)).collect();
        self.log_priors = log_softmax(&self.prior_logits);
    }

    pub fn num_states(&self) -> usize {
        self.log_priors.len()
    }

    pub fn state_lm(&self) -> &StateLM {
        &self.state_lm
    }

    pub fn transition_logits(&self) -> &[f64] {
        &self.transition_logits
    }

    pub fn prior_logits(&self) -> &[f64] {
        &self.prior_logits
    }

    pub fn set_transition_logits(&mut self, logits: Vec<f64>) -> Result<()> {
        if logits.len() != self.num_states() {
            return Err(Error::shape("transition logit length"));
        }
        self.transition_logits = logits;
        self.refresh();
        Ok(())
    }

    pub fn set_prior_logits(&mut self, logits: Vec<f64>) -> Result<()> {
        if logits.len() != self.num_states() {
            return Err(Error::shape("prior logit length"));
        }
        self.prior_logits = logits;
        self.refresh();
        Ok(())
    }

    /// p_c(0), the self-loop probability.
    pub fn p_stay(&self, c: StateId) -> f64 {
        sigmoid(self.transition_logits[c])
    }

    pub fn log_p_stay(&self, c: StateId) -> f64 {
        self.log_p_stay[c]
    }

    pub fn log_p_leave(&self, c: StateId) -> f64 {
        self.log_p_leave[c]
    }

    /// ω_l = log P(l).
    pub fn log_prior(&self, l: StateId) -> f64 {
        self.log_priors[l]
    }

    pub fn log_priors(&self) -> &[f64] {
        &self.log_priors
    }
}

/// T×L grid of per-frame log posteriors; every row exponentiates to a
/// distribution over the L states.
#[derive(Debug, Clone)]
pub struct LogPosteriorGrid {
    frames: usize,
    states: usize,
    y: Vec<f64>,
}

impl LogPosteriorGrid {
    pub fn new(frames: usize, states: usize, y: Vec<f64>) -> Result<Self> {
        if frames == 0 || states == 0 || y.len() != frames * states {
            return Err(Error::shape(format!(
                "grid must be {frames}x{states}, got {} entries",
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("log posterior grid".into()));
        }
        for t in 0..frames {
            let sum: f64 = y[t * states..(t + 1) * states].iter().map(|&v| v.exp()).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::validation(format!(
                    "grid row {t} exponentiates to {sum}, expected 1"
                )));
            }
        }
        Ok(LogPosteriorGrid { frames, states, y })
    }

    /// Builds a grid from unnormalized logits by row-wise log-softmax.
    pub fn from_logits(frames: usize, states: usize, logits: &[f64]) -> Result<Self> {
        if logits.len() != frames * states {
            return Err(Error::shape("logit grid size"));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logit grid".into()));
        }
        let mut y = Vec::with_capacity(logits.len());
        for t in 0..frames {
            y.extend(log_softmax(&logits[t * states..(t + 1) * states]));
        }
        LogPosteriorGrid::new(frames, states, y)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn states(&self) -> usize {
        self.states
    }

    /// y at 0-based frame row `t` and state `l`.
    pub fn at(&self, t: usize, l: StateId) -> f64 {
        self.y[t * self.states + l]
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    /// ȳ_{t,l} = y_{t,l} − ω_l (0-based frame row).
    pub fn pseudo_loglik(&self, t: usize, l: StateId, params: &ModelParameters) -> f64 {
        self.at(t, l) - params.log_prior(l)
    }
}

/// Forward/backward tables in shifted log scale.
///
/// Stored entries at column `t` relate to the true quantities by
/// `log α_t = stored + alpha_shift[t]` (same for β); `log_total` already has
/// the shifts re-added.
#[derive(Debug, Clone)]
pub struct FbTables {
    /// Columns (T+1), column t starting at `t * width`.
    pub cols: usize,
    /// K+1 for the numerator, L for the denominator.
    pub width: usize,
    pub log_alpha: Vec<f64>,
    pub log_beta: Vec<f64>,
    pub alpha_shift: Vec<f64>,
    pub beta_shift: Vec<f64>,
    pub log_total: f64,
}

impl FbTables {
    /// Shift-corrected log Σ_k α_t(k)β_t(k); constant over t.
    pub fn slice_log_total(&self, t: usize) -> f64 {
        let w = self.width;
        let a = &self.log_alpha[t * w..(t + 1) * w];
        let b = &self.log_beta[t * w..(t + 1) * w];
        let mut m = f64::NEG_INFINITY;
        for k in 0..w {
            m = m.max(a[k] + b[k]);
        }
        if m == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let s: f64 = (0..w).map(|k| (a[k] + b[k] - m).exp()).sum();
        m + s.ln() + self.alpha_shift[t] + self.beta_shift[t]
    }

    /// Column-normalized occupancy weights exp(α+β)/Σ at column t
    /// (shifts cancel inside a column).
    fn column_occupancy(&self, t: usize, out: &mut [f64]) {
        let w = self.width;
        let a = &self.log_alpha[t * w..(t + 1) * w];
        let b = &self.log_beta[t * w..(t + 1) * w];
        let mut m = f64::NEG_INFINITY;
        for k in 0..w {
            out[k] = a[k] + b[k];
            m = m.max(out[k]);
        }
        let mut s = 0.0;
        for v in out.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in out.iter_mut() {
            *v /= s;
        }
    }
}

/// log(Σ exp) over `n` lazily computed terms.
fn logsumexp_terms(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for i in 0..n {
        let v = f(i);
        if v > m {
            m = v;
        }
    }
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut s = 0.0;
    for i in 0..n {
        s += (f(i) - m).exp();
    }
    m + s.ln()
}

fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Applies one max-subtraction to a column and returns the shift amount.
fn shift_column(col: &mut [f64]) -> f64 {
    let m = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return 0.0;
    }
    for v in col.iter_mut() {
        *v -= m;
    }
    m
}

fn validate_common(y: &LogPosteriorGrid, params: &ModelParameters, shift_interval: usize) -> Result<()> {
    if shift_interval == 0 {
        return Err(Error::validation("shift_interval must be >= 1"));
    }
    if y.states() != params.num_states() {
        return Err(Error::shape(format!(
            "grid has {} states but the model has {}",
            y.states(),
            params.num_states()
        )));
    }
    Ok(())
}

/// Numerator forward-backward over the transcript-constrained lattice.
///
/// Positions k index the transcript; the path starts pinned at k=0 before
/// the first frame (s_0 is non-emitting) and must sit at k=K after frame T.
pub fn numerator_forward_backward(
    y: &LogPosteriorGrid,
    gamma: &Transcript,
    params: &ModelParameters,
    shift_interval: usize,
) -> Result<FbTables> {
    validate_common(y, params, shift_interval)?;
    let frames = y.frames();
    let k_max = gamma.k();
    let g = gamma.states();
    if let Some(&s) = g.iter().find(|&&s| s >= params.num_states()) {
        return Err(Error::shape(format!("transcript state {s} out of range")));
    }
    // K advances are needed to reach position K; one per frame at most.
    if frames < k_max {
        return Err(Error::InfeasibleTranscript {
            needed: k_max,
            got: frames,
        });
    }

    let width = k_max + 1;
    let cols = frames + 1;
    let lm = params.state_lm();
    let mut log_alpha = vec![f64::NEG_INFINITY; cols * width];
    let mut log_beta = vec![f64::NEG_INFINITY; cols * width];
    let mut alpha_shift = vec![0.0; cols];
    let mut beta_shift = vec![0.0; cols];

    log_alpha[0] = 0.0;
    for t in 1..=frames {
        let (prev_cols, cur_cols) = log_alpha.split_at_mut(t * width);
        let prev = &prev_cols[(t - 1) * width..];
        let cur = &mut cur_cols[..width];
        for k in 0..width {
            let stay = prev[k] + params.log_p_stay(g[k]);
            let advance = if k > 0 {
                prev[k - 1] + params.log_p_leave(g[k - 1]) + lm.log_prob(g[k - 1], g[k])
            } else {
                f64::NEG_INFINITY
            };
            cur[k] = logsumexp2(stay, advance) + y.pseudo_loglik(t - 1, g[k], params);
        }
        alpha_shift[t] = alpha_shift[t - 1];
        if t % shift_interval == 0 {
            alpha_shift[t] += shift_column(cur);
        }
    }

    log_beta[frames * width + k_max] = 0.0;
    for t in (0..frames).rev() {
        let (cur_cols, next_cols) = log_beta.split_at_mut((t + 1) * width);
        let next = &next_cols[..width];
        let cur = &mut cur_cols[t * width..];
        for k in 0..width {
            let stay = next[k] + params.log_p_stay(g[k]) + y.pseudo_loglik(t, g[k], params);
            let advance = if k + 1 <= k_max {
                next[k + 1]
                    + params.log_p_leave(g[k])
                    + lm.log_prob(g[k], g[k + 1])
                    + y.pseudo_loglik(t, g[k + 1], params)
            } else {
                f64::NEG_INFINITY
            };
            cur[k] = logsumexp2(stay, advance);
        }
        beta_shift[t] = beta_shift[t + 1];
        if (frames - t) % shift_interval == 0 {
            beta_shift[t] += shift_column(cur);
        }
    }

    let mut tables = FbTables {
        cols,
        width,
        log_alpha,
        log_beta,
        alpha_shift,
        beta_shift,
        log_total: f64::NEG_INFINITY,
    };
    tables.log_total = tables.slice_log_total(frames);
    if !tables.log_total.is_finite() {
        return Err(Error::NonFinite(
            "numerator probability is zero (a transcript transition has zero LM probability)".into(),
        ));
    }
    Ok(tables)
}

/// Denominator forward-backward over all state sequences that start in
/// `start`; the final state is unconstrained.
pub fn denominator_forward_backward(
    y: &LogPosteriorGrid,
    params: &ModelParameters,
    start: StateId,
    shift_interval: usize,
) -> Result<FbTables> {
    validate_common(y, params, shift_interval)?;
    let frames = y.frames();
    let l = params.num_states();
    if start >= l {
        return Err(Error::shape(format!("start state {start} out of range")));
    }

    let width = l;
    let cols = frames + 1;
    let lm = params.state_lm();
    let mut log_alpha = vec![f64::NEG_INFINITY; cols * width];
    let mut log_beta = vec![f64::NEG_INFINITY; cols * width];
    let mut alpha_shift = vec![0.0; cols];
    let mut beta_shift = vec![0.0; cols];

    log_alpha[start] = 0.0;
    for t in 1..=frames {
        let (prev_cols, cur_cols) = log_alpha.split_at_mut(t * width);
        let prev = &prev_cols[(t - 1) * width..];
        let cur = &mut cur_cols[..width];
        for c in 0..l {
            // Term l == c is the self-loop; the others enter c from c'.
            let total = logsumexp_terms(l, |cp| {
                if cp == c {
                    prev[c] + params.log_p_stay(c)
                } else {
                    prev[cp] + params.log_p_leave(cp) + lm.log_prob(cp, c)
                }
            });
            cur[c] = total + y.pseudo_loglik(t - 1, c, params);
        }
        alpha_shift[t] = alpha_shift[t - 1];
        if t % shift_interval == 0 {
            alpha_shift[t] += shift_column(cur);
        }
    }

    for c in 0..l {
        log_beta[frames * width + c] = 0.0;
    }
    for t in (0..frames).rev() {
        let (cur_cols, next_cols) = log_beta.split_at_mut((t + 1) * width);
        let next = &next_cols[..width];
        let cur = &mut cur_cols[t * width..];
        for c in 0..l {
            let total = logsumexp_terms(l, |cn| {
                if cn == c {
                    next[c] + params.log_p_stay(c) + y.pseudo_loglik(t, c, params)
                } else {
                    next[cn]
                        + params.log_p_leave(c)
                        + lm.log_prob(c, cn)
                        + y.pseudo_loglik(t, cn, params)
                }
            });
            cur[c] = total;
        }
        beta_shift[t] = beta_shift[t + 1];
        if (frames - t) % shift_interval == 0 {
            beta_shift[t] += shift_column(cur);
        }
    }

    let mut tables = FbTables {
        cols,
        width,
        log_alpha,
        log_beta,
        alpha_shift,
        beta_shift,
        log_total: f64::NEG_INFINITY,
    };
    tables.log_total = tables.slice_log_total(frames);
    if !tables.log_total.is_finite() {
        return Err(Error::NonFinite("denominator probability is zero".into()));
    }
    Ok(tables)
}

/// Loss and gradients for one utterance.
#[derive(Debug, Clone)]
pub struct LossOutput {
    /// log P(Γ|õ), to be maximized; never positive.
    pub loss: f64,
    /// T×L, equals numerator minus denominator occupancy.
    pub grad_y: Vec<f64>,
    pub grad_transition_logits: Vec<f64>,
    pub grad_prior_logits: Vec<f64>,
    /// γⁿ, T×L; rows sum to 1.
    pub numerator_occupancy: Vec<f64>,
    /// γᵈ, T×L; rows sum to 1.
    pub denominator_occupancy: Vec<f64>,
}

/// Computes log P(Γ|õ) = log P(õ,Γ) − log P(õ) and its analytic gradients.
///
/// The denominator starts at Γ_0, matching the numerator, so the transcript
/// paths are a subset of the denominator paths and the loss is ≤ 0.
pub fn mmi_loss_and_grad(
    y: &LogPosteriorGrid,
    gamma: &Transcript,
    params: &ModelParameters,
    shift_interval: usize,
) -> Result<LossOutput> {
    let num = numerator_forward_backward(y, gamma, params, shift_interval)?;
    let den = denominator_forward_backward(y, params, gamma.states()[0], shift_interval)?;
    let frames = y.frames();
    let l = params.num_states();
    let g = gamma.states();
    let k_max = gamma.k();
    let lm = params.state_lm();

    // Occupancies from column-normalized α·β products.
    let mut gamma_num = vec![0.0; frames * l];
    let mut gamma_den = vec![0.0; frames * l];
    let mut col = vec![0.0; num.width.max(den.width)];
    for t in 1..=frames {
        num.column_occupancy(t, &mut col[..num.width]);
        for k in 0..num.width {
            gamma_num[(t - 1) * l + g[k]] += col[k];
        }
        den.column_occupancy(t, &mut col[..den.width]);
        gamma_den[(t - 1) * l..t * l].copy_from_slice(&col[..den.width]);
    }

    let mut grad_y = vec![0.0; frames * l];
    for i in 0..frames * l {
        grad_y[i] = gamma_num[i] - gamma_den[i];
    }

    // Arc pair-occupancies for the transition-logit gradient: expected
    // self-loop and forward-transition counts per state, numerator and
    // denominator separately.
    let mut xi_self = vec![0.0; l]; // numerator minus denominator
    let mut xi_fwd = vec![0.0; l];
    for t in 1..=frames {
        let na = &num.log_alpha[(t - 1) * num.width..t * num.width];
        let nb = &num.log_beta[t * num.width..(t + 1) * num.width];
        let nshift = num.alpha_shift[t - 1] + num.beta_shift[t] - num.log_total;
        for k in 0..num.width {
            let c = g[k];
            let stay =
                na[k] + params.log_p_stay(c) + y.pseudo_loglik(t - 1, c, params) + nb[k] + nshift;
            xi_self[c] += stay.exp();
            if k < k_max {
                let adv = na[k]
                    + params.log_p_leave(c)
                    + lm.log_prob(c, g[k + 1])
                    + y.pseudo_loglik(t - 1, g[k + 1], params)
                    + nb[k + 1]
                    + nshift;
                xi_fwd[c] += adv.exp();
            }
        }
        let da = &den.log_alpha[(t - 1) * den.width..t * den.width];
        let db = &den.log_beta[t * den.width..(t + 1) * den.width];
        let dshift = den.alpha_shift[t - 1] + den.beta_shift[t] - den.log_total;
        for c in 0..l {
            let stay =
                da[c] + params.log_p_stay(c) + y.pseudo_loglik(t - 1, c, params) + db[c] + dshift;
            xi_self[c] -= stay.exp();
            for cn in 0..l {
                if cn == c {
                    continue;
                }
                let adv = da[c]
                    + params.log_p_leave(c)
                    + lm.log_prob(c, cn)
                    + y.pseudo_loglik(t - 1, cn, params)
                    + db[cn]
                    + dshift;
                xi_fwd[c] -= adv.exp();
            }
        }
    }
    let mut grad_transition_logits = vec![0.0; l];
    for c in 0..l {
        let p_stay = params.p_stay(c);
        grad_transition_logits[c] = xi_self[c] * (1.0 - p_stay) - xi_fwd[c] * p_stay;
    }

    // Priors: ∂loss/∂ω_l = −Σ_t grad_y[t,l], chained through the softmax.
    let mut grad_omega = vec![0.0; l];
    for t in 0..frames {
        for c in 0..l {
            grad_omega[c] -= grad_y[t * l + c];
        }
    }
    let total: f64 = grad_omega.iter().sum();
    let mut grad_prior_logits = vec![0.0; l];
    for c in 0..l {
        let pi = (params.log_prior(c)).exp();
        grad_prior_logits[c] = grad_omega[c] - pi * total;
    }

    Ok(LossOutput {
        loss: num.log_total - den.log_total,
        grad_y,
        grad_transition_logits,
        grad_prior_logits,
        numerator_occupancy: gamma_num,
        denominator_occupancy: gamma_den,
    })
}

/// Enumeration target for [`brute_force_logprob`].
#[derive(Debug, Clone, Copy)]
pub enum BruteForceMode<'a> {
    /// Sum over sequences whose collapse equals the transcript (s_0 = Γ_0
    /// implied, last state Γ_K implied).
    Transcript(&'a Transcript),
    /// Sum over all sequences with the given s_0.
    AllSequences { start: StateId },
}

/// Definition-level path enumeration oracle: sums Π p·Π e^{ȳ} over the
/// selected sequence set, accumulating in 64-bit log space.
pub fn brute_force_logprob(
    y: &LogPosteriorGrid,
    params: &ModelParameters,
    mode: BruteForceMode,
) -> Result<f64> {
    validate_common(y, params, 1)?;
    let frames = y.frames();
    let l = params.num_states();
    if (l as f64).powi(frames as i32) > 1e7 {
        return Err(Error::TooLarge(format!("L={l}, T={frames}")));
    }

    // Streaming log-sum-exp accumulator.
    struct Acc {
        max: f64,
        sum: f64,
    }
    impl Acc {
        fn push(&mut self, x: f64) {
            if x == f64::NEG_INFINITY {
                return;
            }
            if x <= self.max {
                self.sum += (x - self.max).exp();
            } else {
                self.sum = self.sum * (self.max - x).exp() + 1.0;
                self.max = x;
            }
        }
        fn total(&self) -> f64 {
            if self.sum == 0.0 {
                f64::NEG_INFINITY
            } else {
                self.max + self.sum.ln()
            }
        }
    }
    let mut acc = Acc {
        max: f64::NEG_INFINITY,
        sum: 0.0,
    };

    let lm = params.state_lm();
    let step = |prev: StateId, next: StateId, t: usize| -> f64 {
        let trans = if prev == next {
            params.log_p_stay(prev)
        } else {
            params.log_p_leave(prev) + lm.log_prob(prev, next)
        };
        trans + y.pseudo_loglik(t - 1, next, params)
    };

    match mode {
        BruteForceMode::AllSequences { start } => {
            if start >= l {
                return Err(Error::shape("start state out of range"));
            }
            // DFS over all s_1..s_T.
            fn walk(
                t: usize,
                frames: usize,
                prev: StateId,
                logw: f64,
                l: usize,
                step: &impl Fn(StateId, StateId, usize) -> f64,
                acc: &mut Acc,
            ) {
                if t > frames {
                    acc.push(logw);
                    return;
                }
                for next in 0..l {
                    let w = logw + step(prev, next, t);
                    if w > f64::NEG_INFINITY {
                        walk(t + 1, frames, next, w, l, step, acc);
                    }
                }
            }
            walk(1, frames, start, 0.0, l, &step, &mut acc);
        }
        BruteForceMode::Transcript(gamma) => {
            let g = gamma.states();
            let k_max = gamma.k();
            // Collapse-consistency leaves two successors per step: repeat
            // Γ_k or move to Γ_{k+1}; the path must finish at k = K.
            fn walk(
                t: usize,
                frames: usize,
                k: usize,
                logw: f64,
                g: &[StateId],
                k_max: usize,
                step: &impl Fn(StateId, StateId, usize) -> f64,
                acc: &mut Acc,
            ) {
                if t > frames {
                    if k == k_max {
                        acc.push(logw);
                    }
                    return;
                }
                let stay = logw + step(g[k], g[k], t);
                if stay > f64::NEG_INFINITY {
                    walk(t + 1, frames, k, stay, g, k_max, step, acc);
                }
                if k < k_max {
                    let adv = logw + step(g[k], g[k + 1], t);
                    if adv > f64::NEG_INFINITY {
                        walk(t + 1, frames, k + 1, adv, g, k_max, step, acc);
                    }
                }
            }
            walk(1, frames, 0, 0.0, g, k_max, &step, &mut acc);
        }
    }
    Ok(acc.total())
}

/// Sanity helper used by tests: true when collapse(s) equals the transcript.
pub fn consistent_with(s: &[StateId], gamma: &Transcript) -> bool {
    collapse_states(s) == gamma.states()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{StateLM, StateLmKind};
    use crate::testkit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_lm(l: usize) -> StateLM {
        let mut q = vec![0.0; l * l];
        for c in 0..l {
            for j in 0..l {
                if c != j {
                    q[c * l + j] = 1.0 / (l - 1) as f64;
                }
            }
        }
        StateLM::from_matrix(StateLmKind::Uniform, l, q).unwrap()
    }

    #[test]
    fn single_frame_self_loop() {
        // T=1, Γ=[a] with a=0, p_a(0)=0.5, e^{ȳ_{1,a}}=0.4: P = 0.2.
        let l = 2;
        let params = ModelParameters::symmetric(uniform_lm(l));
        // Uniform priors: ω = −ln 2, so e^{ȳ_a} = e^{y_a}·2 = 0.4 → y_a = ln 0.2.
        let y = LogPosteriorGrid::new(1, l, vec![0.2f64.ln(), 0.8f64.ln()]).unwrap();
        let gamma = Transcript::from_states(vec![0]).unwrap();
        let fb = numerator_forward_backward(&y, &gamma, &params, 1).unwrap();
        assert!((fb.log_total - 0.2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frame_two_path_formula() {
        let l = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = testkit::random_params(l, &mut rng);
        let y = testkit::random_grid(2, l, &mut rng);
        let gamma = Transcript::from_states(vec![0, 1]).unwrap();

        let ybar = |t: usize, c: usize| y.pseudo_loglik(t, c, &params);
        let q = params.state_lm().prob(0, 1);
        let p0 = params.p_stay(0);
        let p1 = params.p_stay(1);
        let path_a = p0 * ybar(0, 0).exp() * (1.0 - p0) * q * ybar(1, 1).exp();
        let path_b = (1.0 - p0) * q * ybar(0, 1).exp() * p1 * ybar(1, 1).exp();
        let expect = (path_a + path_b).ln();

        let fb = numerator_forward_backward(&y, &gamma, &params, 1).unwrap();
        assert!((fb.log_total - expect).abs() < 1e-12);

        let bf = brute_force_logprob(&y, &params, BruteForceMode::Transcript(&gamma)).unwrap();
        assert!((fb.log_total - bf).abs() < 1e-12);
    }

    #[test]
    fn shift_interval_does_not_change_totals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = 5;
        let t = 9;
        let params = testkit::random_params(l, &mut rng);
        let y = testkit::random_grid(t, l, &mut rng);
        let gamma = testkit::random_transcript(l, 4, &mut rng);
        let base = numerator_forward_backward(&y, &gamma, &params, 1).unwrap().log_total;
        for interval in [7, t + 1] {
            let fb = numerator_forward_backward(&y, &gamma, &params, interval).unwrap();
            assert!((fb.log_total - base).abs() < 1e-10, "interval {interval}");
        }
        let dbase = denominator_forward_backward(&y, &params, 0, 1).unwrap().log_total;
        for interval in [7, t + 1] {
            let fb = denominator_forward_backward(&y, &params, 0, interval).unwrap();
            assert!((fb.log_total - dbase).abs() < 1e-10);
        }
    }

    #[test]
    fn denominator_single_frame_hand_sum() {
        let l = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = testkit::random_params(l, &mut rng);
        let y = testkit::random_grid(1, l, &mut rng);
        let fb = denominator_forward_backward(&y, &params, 0, 1).unwrap();
        let mut total = params.p_stay(0) * y.pseudo_loglik(0, 0, &params).exp();
        for c in 1..l {
            total += (1.0 - params.p_stay(0))
                * params.state_lm().prob(0, c)
                * y.pseudo_loglik(0, c, &params).exp();
        }
        assert!((fb.log_total - total.ln()).abs() < 1e-12);
    }

    #[test]
    fn denominator_transitions_sum_out_when_y_matches_priors() {
        // Rows equal to the priors make ȳ ≡ 0, so log P(õ) = 0 exactly.
        let l = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = testkit::random_params(l, &mut rng);
        let frames = 6;
        let mut rows = Vec::new();
        for _ in 0..frames {
            rows.extend_from_slice(params.log_priors());
        }
        let y = LogPosteriorGrid::new(frames, l, rows).unwrap();
        let fb = denominator_forward_backward(&y, &params, 0, 1).unwrap();
        assert!(fb.log_total.abs() < 1e-10);
    }

    #[test]
    fn oracle_equivalence_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..20 {
            let (y, gamma, params) = testkit::random_instance(5, 6, 4, &mut rng);
            let num = numerator_forward_backward(&y, &gamma, &params, 1).unwrap();
            let bf_num =
                brute_force_logprob(&y, &params, BruteForceMode::Transcript(&gamma)).unwrap();
            assert!(
                (num.log_total - bf_num).abs() < 1e-9,
                "case {case}: num {} vs {}",
                num.log_total,
                bf_num
            );
            let den = denominator_forward_backward(&y, &params, gamma.states()[0], 1).unwrap();
            let bf_den = brute_force_logprob(
                &y,
                &params,
                BruteForceMode::AllSequences { start: gamma.states()[0] },
            )
            .unwrap();
            assert!((den.log_total - bf_den).abs() < 1e-9, "case {case}");
        }
    }

    #[test]
    fn all_sequences_single_effective_state() {
        // p_0(0) ≈ 1 keeps the chain at the start state: the sum collapses
        // to the single all-self-loop path.
        let l = 2;
        let lm = uniform_lm(l);
        let params = ModelParameters::new(vec![40.0, 0.0], vec![0.0, 0.0], lm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = 5;
        let y = testkit::random_grid(t, l, &mut rng);
        let bf =
            brute_force_logprob(&y, &params, BruteForceMode::AllSequences { start: 0 }).unwrap();
        let expect: f64 = (0..t).map(|r| y.pseudo_loglik(r, 0, &params)).sum::<f64>()
            + t as f64 * params.log_p_stay(0);
        assert!((bf - expect).abs() < 1e-12);
    }

    #[test]
    fn infeasible_transcript() {
        let l = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = testkit::random_params(l, &mut rng);
        let y = testkit::random_grid(2, l, &mut rng);
        let gamma = Transcript::from_states(vec![0, 1, 2, 3]).unwrap();
        assert!(matches!(
            numerator_forward_backward(&y, &gamma, &params, 1),
            Err(Error::InfeasibleTranscript { needed: 3, got: 2 })
        ));
        // The brute-force oracle reports the empty sum instead.
        let bf = brute_force_logprob(&y, &params, BruteForceMode::Transcript(&gamma)).unwrap();
        assert_eq!(bf, f64::NEG_INFINITY);
    }

    #[test]
    fn time_slice_totals_are_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (y, gamma, params) = testkit::random_instance(5, 7, 4, &mut rng);
        for interval in [1usize, 3] {
            let num = numerator_forward_backward(&y, &gamma, &params, interval).unwrap();
            for t in 0..=y.frames() {
                assert!(
                    (num.slice_log_total(t) - num.log_total).abs()
                        <= 1e-9 * num.log_total.abs().max(1.0),
                    "numerator slice at t={t}"
                );
            }
            let den =
                denominator_forward_backward(&y, &params, gamma.states()[0], interval).unwrap();
            for t in 0..=y.frames() {
                assert!(
                    (den.slice_log_total(t) - den.log_total).abs()
                        <= 1e-9 * den.log_total.abs().max(1.0),
                    "denominator slice at t={t}"
                );
            }
        }
    }

    #[test]
    fn loss_is_nonpositive_and_rows_conserve() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let (y, gamma, params) = testkit::random_instance(5, 6, 3, &mut rng);
            let out = mmi_loss_and_grad(&y, &gamma, &params, 1).unwrap();
            assert!(out.loss <= 0.0);
            let l = params.num_states();
            for t in 0..y.frames() {
                let row_n: f64 = out.numerator_occupancy[t * l..(t + 1) * l].iter().sum();
                let row_d: f64 = out.denominator_occupancy[t * l..(t + 1) * l].iter().sum();
                let row_g: f64 = out.grad_y[t * l..(t + 1) * l].iter().sum();
                assert!((row_n - 1.0).abs() <= 1e-9);
                assert!((row_d - 1.0).abs() <= 1e-9);
                assert!(row_g.abs() <= 1e-9);
                assert!(out.grad_y[t * l..(t + 1) * l]
                    .iter()
                    .all(|&v| (-1.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (y, gamma, params) = testkit::random_instance(5, 6, 3, &mut rng);
        let report = testkit::mmi_fd_check(&y, &gamma, &params, 1e-4);
        assert!(report.max_rel_err_y < 1e-5, "grad_y: {}", report.max_rel_err_y);
        assert!(
            report.max_rel_err_transition < 1e-5,
            "transition: {}",
            report.max_rel_err_transition
        );
        assert!(
            report.max_rel_err_prior < 1e-5,
            "prior: {}",
            report.max_rel_err_prior
        );
    }

    #[test]
    fn perfect_posteriors_drive_loss_to_zero() {
        // One feasible path, y concentrated on it, sharp LM: loss → 0⁻.
        let l = 3;
        let mut q = vec![0.0; l * l];
        // Near-deterministic chain 0→1→2.
        q[0 * l + 1] = 1.0 - 1e-9;
        q[0 * l + 2] = 1e-9;
        q[1 * l + 2] = 1.0 - 1e-9;
        q[1 * l + 0] = 1e-9;
        q[2 * l + 0] = 0.5;
        q[2 * l + 1] = 0.5;
        let lm = StateLM::from_matrix(StateLmKind::Bigram, l, q).unwrap();
        let params = ModelParameters::new(vec![-30.0; l], vec![0.0; l], lm).unwrap();
        let gamma = Transcript::from_states(vec![0, 1, 2]).unwrap();
        // Frame t emits Γ_t with near-one probability.
        let big = 30.0;
        let mut logits = vec![0.0; 3 * l];
        logits[0] = big;
        logits[l + 1] = big;
        logits[2 * l + 2] = big;
        let y = LogPosteriorGrid::from_logits(3, l, &logits).unwrap();
        let out = mmi_loss_and_grad(&y, &gamma, &params, 1).unwrap();
        assert!(out.loss <= 0.0);
        assert!(out.loss > -1e-6, "loss {}", out.loss);
    }

    #[test]
    fn long_input_stays_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let l = 6;
        let frames = 20_000;
        let params = testkit::random_params(l, &mut rng);
        let y = testkit::random_grid(frames, l, &mut rng);
        let gamma = testkit::random_transcript(l, 7, &mut rng);
        let out = mmi_loss_and_grad(&y, &gamma, &params, 25).unwrap();
        assert!(out.loss.is_finite());
        assert!(out.grad_y.iter().all(|v| v.is_finite()));
        assert!(out.grad_transition_logits.iter().all(|v| v.is_finite()));
        assert!(out.grad_prior_logits.iter().all(|v| v.is_finite()));
    }
}
