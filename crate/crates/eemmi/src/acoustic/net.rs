//! Feed-forward network over time-extended windows, emitting normalized
//! log posteriors, plus the binary checkpoint format.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acoustic::features::WindowedFeatures;
use crate::error::{Error, Result};
use crate::mmi::{LogPosteriorGrid, ModelParameters};

/// Dense layers with tanh hidden activations and a linear output layer;
/// the output rows are log-softmax normalized.
#[derive(Debug, Clone)]
pub struct AcousticNet {
    /// input, hidden..., output sizes.
    dims: Vec<usize>,
    /// Per layer: out×in row-major weights, then `out` biases.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl AcousticNet {
    /// Seeded uniform init with Xavier-style scale.
    pub fn new(input: usize, hidden: &[usize], output: usize, seed: u64) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::validation("zero-sized layer"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push((0..fan_in * fan_out).map(|_| rng.gen_range(-scale..scale)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        Ok(AcousticNet { dims, weights, biases })
    }

    /// All-zero weights; useful as a symmetric starting point in tests.
    pub fn zeroed(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut net = AcousticNet::new(input, hidden, output, 0)?;
        for w in net.weights.iter_mut() {
            w.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flattened parameter vector: per layer weights then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for i in 0..self.num_layers() {
            out.extend_from_slice(&self.weights[i]);
            out.extend_from_slice(&self.biases[i]);
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("flat parameter length"));
        }
        let mut pos = 0;
        for i in 0..self.weights.len() {
            let wl = self.weights[i].len();
            self.weights[i].copy_from_slice(&flat[pos..pos + wl]);
            pos += wl;
            let bl = self.biases[i].len();
            self.biases[i].copy_from_slice(&flat[pos..pos + bl]);
            pos += bl;
        }
        Ok(())
    }

    /// Forward pass producing the per-frame log posterior grid.
    pub fn forward(&self, windows: &WindowedFeatures) -> Result<LogPosteriorGrid> {
        Ok(self.forward_cached(windows)?.0)
    }

    /// Forward pass keeping per-layer activations for backprop.
    pub fn forward_cached(&self, windows: &WindowedFeatures) -> Result<(LogPosteriorGrid, NetCache)> {
        if windows.width != self.input_dim() {
            return Err(Error::shape(format!(
                "window width {} does not match net input {}",
                windows.width,
                self.input_dim()
            )));
        }
        let frames = windows.frames;
        let n_layers = self.num_layers();
        // activations[i]: frames × dims[i+1] outputs of layer i (post tanh
        // for hidden layers, raw logits for the final layer).
        let mut activations: Vec<Vec<f64>> =
            (0..n_layers).map(|i| vec![0.0; frames * self.dims[i + 1]]).collect();

        for t in 0..frames {
            for i in 0..n_layers {
                let (fan_in, fan_out) = (self.dims[i], self.dims[i + 1]);
                let w = &self.weights[i];
                let b = &self.biases[i];
                // Split to appease the borrow checker: input row comes either
                // from the windows or the previous activation buffer.
                let (head, tail) = activations.split_at_mut(i);
                let input: &[f64] = if i == 0 {
                    windows.row(t)
                } else {
                    &head[i - 1][t * fan_in..(t + 1) * fan_in]
                };
                let out = &mut tail[0][t * fan_out..(t + 1) * fan_out];
                for o in 0..fan_out {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    let mut acc = b[o];
                    for (x, wv) in input.iter().zip(row.iter()) {
                        acc += x * wv;
                    }
                    out[o] = if i + 1 < n_layers { acc.tanh() } else { acc };
                }
            }
        }

        let logits = activations.last().unwrap();
        let grid = LogPosteriorGrid::from_logits(frames, self.output_dim(), logits)?;
        Ok((grid, NetCache { activations }))
    }

    /// Backpropagates `grad_y` (T×L, d loss / d log-posterior) through the
    /// output normalization and all layers; returns parameter gradients in
    /// flat layout. `windows` must be the forward input.
    pub fn backward(
        &self,
        windows: &WindowedFeatures,
        grid: &LogPosteriorGrid,
        cache: &NetCache,
        grad_y: &[f64],
    ) -> Result<NetGradients> {
        let frames = windows.frames;
        let l = self.output_dim();
        if grad_y.len() != frames * l {
            return Err(Error::shape("grad_y size"));
        }
        let n_layers = self.num_layers();
        let mut grad_w: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut grad_b: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();

        let max_dim = *self.dims.iter().max().unwrap();
        let mut delta = vec![0.0; max_dim];
        let mut delta_prev = vec![0.0; max_dim];

        for t in 0..frames {
            // Through log-softmax: dz = g − softmax(z)·Σg.
            let gsum: f64 = grad_y[t * l..(t + 1) * l].iter().sum();
            for o in 0..l {
                delta[o] = grad_y[t * l + o] - grid.at(t, o).exp() * gsum;
            }
            for i in (0..n_layers).rev() {
                let (fan_in, fan_out) = (self.dims[i], self.dims[i + 1]);
                let input: &[f64] = if i == 0 {
                    windows.row(t)
                } else {
                    &cache.activations[i - 1][t * fan_in..(t + 1) * fan_in]
                };
                let gw = &mut grad_w[i];
                for o in 0..fan_out {
                    let d = delta[o];
                    grad_b[i][o] += d;
                    let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for (g, x) in row.iter_mut().zip(input.iter()) {
                        *g += d * x;
                    }
                }
                if i > 0 {
                    delta_prev[..fan_in].iter_mut().for_each(|v| *v = 0.0);
                    let w = &self.weights[i];
                    for o in 0..fan_out {
                        let d = delta[o];
                        let row = &w[o * fan_in..(o + 1) * fan_in];
                        for (dp, wv) in delta_prev[..fan_in].iter_mut().zip(row.iter()) {
                            *dp += d * wv;
                        }
                    }
                    // Through tanh.
                    for (dp, a) in delta_prev[..fan_in].iter_mut().zip(input.iter()) {
                        *dp *= 1.0 - a * a;
                    }
                    std::mem::swap(&mut delta, &mut delta_prev);
                }
            }
        }

        let mut flat = Vec::with_capacity(self.num_params());
        for i in 0..n_layers {
            flat.extend_from_slice(&grad_w[i]);
            flat.extend_from_slice(&grad_b[i]);
        }
        Ok(NetGradients { flat })
    }
}

/// Per-layer activations kept by [`AcousticNet::forward_cached`].
pub struct NetCache {
    activations: Vec<Vec<f64>>,
}

/// Parameter gradients in the same flat layout as [`AcousticNet::flatten`].
#[derive(Debug, Clone)]
pub struct NetGradients {
    pub flat: Vec<f64>,
}

const CKPT_MAGIC: &[u8; 8] = b"EEMMICKP";
const CKPT_VERSION: u32 = 1;

/// A loaded model checkpoint: network weights plus the transition and prior
/// logits. The state LM is stored separately (text matrix) because decoding
/// does not need it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: AcousticNet,
    pub window_radius: usize,
    pub feature_dim: usize,
    pub transition_logits: Vec<f64>,
    pub prior_logits: Vec<f64>,
}

impl Checkpoint {
    pub fn num_states(&self) -> usize {
        self.net.output_dim()
    }

    /// Model parameters backed by the given state LM.
    pub fn params_with(&self, state_lm: crate::lm::StateLM) -> Result<ModelParameters> {
        ModelParameters::new(self.transition_logits.clone(), self.prior_logits.clone(), state_lm)
    }

    /// Model parameters with a uniform placeholder LM, for decoding paths
    /// that only use the priors and self-loop probabilities.
    pub fn params_with_uniform_lm(&self) -> Result<ModelParameters> {
        let l = self.num_states();
        let mut q = vec![0.0; l * l];
        for c in 0..l {
            for j in 0..l {
                if c != j {
                    q[c * l + j] = 1.0 / (l - 1) as f64;
                }
            }
        }
        let lm = crate::lm::StateLM::from_matrix(crate::lm::StateLmKind::Uniform, l, q)?;
        self.params_with(lm)
    }
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes the checkpoint: magic, version, header (feature dim, window
/// radius, layer sizes, L), then little-endian f64 weight arrays per layer,
/// then the transition and prior logits.
pub fn serialize_checkpoint(
    net: &AcousticNet,
    params: &ModelParameters,
    window_radius: usize,
    feature_dim: usize,
) -> Result<Vec<u8>> {
    if params.num_states() != net.output_dim() {
        return Err(Error::shape("net output does not match model states"));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    push_u32(&mut buf, CKPT_VERSION);
    push_u32(&mut buf, feature_dim as u32);
    push_u32(&mut buf, window_radius as u32);
    push_u32(&mut buf, net.dims().len() as u32);
    for &d in net.dims() {
        push_u32(&mut buf, d as u32);
    }
    for i in 0..net.num_layers() {
        push_f64s(&mut buf, &net.weights[i]);
        push_f64s(&mut buf, &net.biases[i]);
    }
    push_f64s(&mut buf, params.transition_logits());
    push_f64s(&mut buf, params.prior_logits());
    Ok(buf)
}

pub fn save_checkpoint(
    path: &Path,
    net: &AcousticNet,
    params: &ModelParameters,
    window_radius: usize,
    feature_dim: usize,
) -> Result<()> {
    fs::write(path, serialize_checkpoint(net, params, window_radius, feature_dim)?)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn parse_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != CKPT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let feature_dim = r.u32()? as usize;
    let window_radius = r.u32()? as usize;
    let n_dims = r.u32()? as usize;
    if !(2..=16).contains(&n_dims) {
        return Err(Error::Checkpoint(format!("implausible layer count {n_dims}")));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(r.u32()? as usize);
    }
    let hidden = &dims[1..n_dims - 1];
    let mut net = AcousticNet::new(dims[0], hidden, dims[n_dims - 1], 0)?;
    for i in 0..net.num_layers() {
        let wl = net.weights[i].len();
        net.weights[i] = r.f64s(wl)?;
        let bl = net.biases[i].len();
        net.biases[i] = r.f64s(bl)?;
    }
    let l = net.output_dim();
    let transition_logits = r.f64s(l)?;
    let prior_logits = r.f64s(l)?;
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        net,
        window_radius,
        feature_dim,
        transition_logits,
        prior_logits,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    parse_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustic::features::{extract_windows, FeatureSequence};
    use crate::testkit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn windows(frames: usize, dim: usize, seed: u64) -> WindowedFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..frames * dim)
            .map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0))
            .collect();
        let seq = FeatureSequence::new("u", "s", dim, data).unwrap();
        extract_windows(&seq, 1)
    }

    #[test]
    fn zero_net_is_uniform() {
        let w = windows(4, 3, 1);
        let net = AcousticNet::zeroed(w.width, &[8], 5).unwrap();
        let grid = net.forward(&w).unwrap();
        for t in 0..4 {
            for c in 0..5 {
                assert!((grid.at(t, c) - (-(5f64).ln())).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rows_normalize_and_repeat_deterministically() {
        let w = windows(5, 2, 2);
        let net = AcousticNet::new(w.width, &[6, 6], 4, 77).unwrap();
        let a = net.forward(&w).unwrap();
        let b = net.forward(&w).unwrap();
        assert_eq!(a.values(), b.values());
        for t in 0..5 {
            let sum: f64 = (0..4).map(|c| a.at(t, c).exp()).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let w = windows(3, 2, 3);
        let net = AcousticNet::new(w.width + 1, &[4], 3, 0).unwrap();
        assert!(net.forward(&w).is_err());
    }

    #[test]
    fn backward_matches_finite_differences_through_a_quadratic_readout() {
        // Scalar probe loss: Σ c_{t,l}·y_{t,l} with random coefficients, so
        // d loss / d y = c and the net gradient can be FD-checked alone.
        let w = windows(3, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = 4;
        let net = AcousticNet::new(w.width, &[5], l, 13).unwrap();
        let coef: Vec<f64> = (0..3 * l).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();

        let loss_of = |net: &AcousticNet| {
            let grid = net.forward(&w).unwrap();
            grid.values().iter().zip(coef.iter()).map(|(y, c)| y * c).sum::<f64>()
        };

        let (grid, cache) = net.forward_cached(&w).unwrap();
        let grads = net.backward(&w, &grid, &cache, &coef).unwrap();

        let flat = net.flatten();
        let eps = 1e-5;
        for i in 0..flat.len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut fp = flat.clone();
            fp[i] += eps;
            plus.unflatten(&fp).unwrap();
            fp[i] -= 2.0 * eps;
            minus.unflatten(&fp).unwrap();
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            assert!(
                testkit::rel_err(fd, grads.flat[i]) < 1e-6,
                "param {i}: fd {fd} vs {}",
                grads.flat[i]
            );
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let net = AcousticNet::new(6, &[5], 4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = testkit::random_params(4, &mut rng);
        let bytes = serialize_checkpoint(&net, &params, 2, 2).unwrap();
        let ck = parse_checkpoint(&bytes).unwrap();
        assert_eq!(ck.window_radius, 2);
        assert_eq!(ck.feature_dim, 2);
        assert_eq!(ck.net.dims(), net.dims());
        assert_eq!(ck.net.flatten(), net.flatten());
        assert_eq!(ck.transition_logits, params.transition_logits());
        assert_eq!(ck.prior_logits, params.prior_logits());
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(parse_checkpoint(b"notamagicblob").is_err());
        let net = AcousticNet::new(3, &[2], 2, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = testkit::random_params(2, &mut rng);
        let mut bytes = serialize_checkpoint(&net, &params, 1, 1).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(parse_checkpoint(&bytes).is_err());
    }
}
