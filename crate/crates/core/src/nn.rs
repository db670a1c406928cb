//! Fixed-topology network stack for the actor/critic pair: 1D valid
//! convolution over the observation window, two ReLU hidden layers, linear
//! head, with exact reverse-mode gradients, Adam, and a versioned binary
//! policy file.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const POLICY_MAGIC: &[u8; 4] = b"GRLP";
pub const POLICY_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub input_length: usize,
    pub kernel: usize,
    pub conv_filters: usize,
    pub hidden: [usize; 2],
    pub outputs: usize,
}

impl NetworkSpec {
    pub fn actor(input_channels: usize, actions: usize, conv_filters: usize) -> Self {
        NetworkSpec {
            input_channels,
            input_length: crate::config::WINDOW_LEN,
            kernel: 3,
            conv_filters,
            hidden: [512, 512],
            outputs: actions,
        }
    }

    pub fn critic(input_channels: usize, conv_filters: usize) -> Self {
        NetworkSpec {
            input_channels,
            input_length: crate::config::WINDOW_LEN,
            kernel: 3,
            conv_filters,
            hidden: [512, 512],
            outputs: 1,
        }
    }

    pub fn conv_out_len(&self) -> usize {
        self.input_length - self.kernel + 1
    }

    pub fn flat_len(&self) -> usize {
        self.conv_filters * self.conv_out_len()
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_length
    }

    pub fn param_count(&self) -> usize {
        let f = self.conv_filters;
        let [h1, h2] = self.hidden;
        f * self.input_channels * self.kernel
            + f
            + h1 * self.flat_len()
            + h1
            + h2 * h1
            + h2
            + self.outputs * h2
            + self.outputs
    }

    fn validate(&self) -> Result<()> {
        if self.input_length < self.kernel || self.kernel == 0 {
            return Err(Error::ShapeMismatch(format!(
                "kernel {} does not fit input length {}",
                self.kernel, self.input_length
            )));
        }
        if self.input_channels == 0
            || self.conv_filters == 0
            || self.hidden.contains(&0)
            || self.outputs == 0
        {
            return Err(Error::ShapeMismatch("zero-sized layer".into()));
        }
        Ok(())
    }
}

/// Parameter-vector offsets for one network.
#[derive(Clone, Copy, Debug)]
struct Layout {
    conv_w: usize,
    conv_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

impl Layout {
    fn of(spec: &NetworkSpec) -> Layout {
        let f = spec.conv_filters;
        let [h1, h2] = spec.hidden;
        let conv_w = 0;
        let conv_b = conv_w + f * spec.input_channels * spec.kernel;
        let w1 = conv_b + f;
        let b1 = w1 + h1 * spec.flat_len();
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + spec.outputs * h2;
        Layout {
            conv_w,
            conv_b,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        }
    }
}

/// Intermediate activations recorded by a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Vec<f64>,
    conv: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub theta: Vec<f64>,
}

impl Network {
    /// He-uniform initialization for the ReLU trunk; the head starts near
    /// zero so the initial policy is close to uniform.
    pub fn init(spec: NetworkSpec, rng: &mut ChaCha8Rng) -> Result<Network> {
        spec.validate()?;
        let l = Layout::of(&spec);
        let mut theta = vec![0.0; spec.param_count()];
        let mut uniform = |slice: std::ops::Range<usize>, limit: f64, theta: &mut Vec<f64>| {
            for t in &mut theta[slice] {
                *t = rng.gen_range(-limit..limit);
            }
        };
        let conv_fan = spec.input_channels * spec.kernel;
        uniform(l.conv_w..l.conv_b, (6.0 / conv_fan as f64).sqrt(), &mut theta);
        uniform(l.w1..l.b1, (6.0 / spec.flat_len() as f64).sqrt(), &mut theta);
        uniform(l.w2..l.b2, (6.0 / spec.hidden[0] as f64).sqrt(), &mut theta);
        uniform(l.w3..l.b3, 1e-3, &mut theta);
        uniform(l.b3..theta.len(), 1e-3, &mut theta);
        Ok(Network { spec, theta })
    }

    /// Valid (no-padding) stride-1 cross-correlation over the window.
    pub fn conv1d_forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let s = &self.spec;
        if input.len() != s.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "input length {} != {} ({} channels × {})",
                input.len(),
                s.input_len(),
                s.input_channels,
                s.input_length
            )));
        }
        let l = Layout::of(s);
        let out_len = s.conv_out_len();
        let mut out = vec![0.0; s.conv_filters * out_len];
        for f in 0..s.conv_filters {
            let bias = self.theta[l.conv_b + f];
            for t in 0..out_len {
                let mut acc = bias;
                for c in 0..s.input_channels {
                    let w0 = l.conv_w + (f * s.input_channels + c) * s.kernel;
                    let x0 = c * s.input_length + t;
                    for k in 0..s.kernel {
                        acc += self.theta[w0 + k] * input[x0 + k];
                    }
                }
                out[f * out_len + t] = acc;
            }
        }
        Ok(out)
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache> {
        let s = &self.spec;
        let l = Layout::of(s);
        let conv = self.conv1d_forward(input)?;
        let flat = s.flat_len();
        let [n1, n2] = s.hidden;

        let mut h1 = vec![0.0; n1];
        for (j, h) in h1.iter_mut().enumerate() {
            let row = &self.theta[l.w1 + j * flat..l.w1 + (j + 1) * flat];
            let pre: f64 =
                row.iter().zip(&conv).map(|(w, x)| w * x).sum::<f64>() + self.theta[l.b1 + j];
            *h = pre.max(0.0);
        }
        let mut h2 = vec![0.0; n2];
        for (j, h) in h2.iter_mut().enumerate() {
            let row = &self.theta[l.w2 + j * n1..l.w2 + (j + 1) * n1];
            let pre: f64 =
                row.iter().zip(&h1).map(|(w, x)| w * x).sum::<f64>() + self.theta[l.b2 + j];
            *h = pre.max(0.0);
        }
        let mut output = vec![0.0; s.outputs];
        for (o, out) in output.iter_mut().enumerate() {
            let row = &self.theta[l.w3 + o * n2..l.w3 + (o + 1) * n2];
            *out = row.iter().zip(&h2).map(|(w, x)| w * x).sum::<f64>() + self.theta[l.b3 + o];
        }
        Ok(ForwardCache {
            input: input.to_vec(),
            conv,
            h1,
            h2,
            output,
        })
    }

    /// Accumulate exact gradients of a scalar loss into `grads`, given the
    /// loss gradient w.r.t. the network output. ReLU uses subgradient 0 at 0.
    pub fn backward_into(&self, cache: &ForwardCache, d_output: &[f64], grads: &mut [f64]) {
        let s = &self.spec;
        let l = Layout::of(s);
        assert_eq!(d_output.len(), s.outputs, "output gradient width");
        assert_eq!(grads.len(), self.theta.len(), "gradient buffer length");
        let flat = s.flat_len();
        let [n1, n2] = s.hidden;

        // Head.
        let mut d_h2 = vec![0.0; n2];
        for (o, &d) in d_output.iter().enumerate() {
            grads[l.b3 + o] += d;
            let row = &self.theta[l.w3 + o * n2..l.w3 + (o + 1) * n2];
            let grow = &mut grads[l.w3 + o * n2..l.w3 + (o + 1) * n2];
            for j in 0..n2 {
                grow[j] += d * cache.h2[j];
                d_h2[j] += d * row[j];
            }
        }
        // Layer 2 (ReLU).
        let mut d_h1 = vec![0.0; n1];
        for j in 0..n2 {
            if cache.h2[j] <= 0.0 {
                continue;
            }
            let d = d_h2[j];
            grads[l.b2 + j] += d;
            let row = &self.theta[l.w2 + j * n1..l.w2 + (j + 1) * n1];
            let grow = &mut grads[l.w2 + j * n1..l.w2 + (j + 1) * n1];
            for i in 0..n1 {
                grow[i] += d * cache.h1[i];
                d_h1[i] += d * row[i];
            }
        }
        // Layer 1 (ReLU).
        let mut d_conv = vec![0.0; flat];
        for j in 0..n1 {
            if cache.h1[j] <= 0.0 {
                continue;
            }
            let d = d_h1[j];
            grads[l.b1 + j] += d;
            let row = &self.theta[l.w1 + j * flat..l.w1 + (j + 1) * flat];
            let grow = &mut grads[l.w1 + j * flat..l.w1 + (j + 1) * flat];
            for i in 0..flat {
                grow[i] += d * cache.conv[i];
                d_conv[i] += d * row[i];
            }
        }
        // Convolution.
        let out_len = s.conv_out_len();
        for f in 0..s.conv_filters {
            for t in 0..out_len {
                let d = d_conv[f * out_len + t];
                if d == 0.0 {
                    continue;
                }
                grads[l.conv_b + f] += d;
                for c in 0..s.input_channels {
                    let w0 = l.conv_w + (f * s.input_channels + c) * s.kernel;
                    let x0 = c * s.input_length + t;
                    for k in 0..s.kernel {
                        grads[w0 + k] += d * cache.input[x0 + k];
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits
        .iter()
        .map(|&z| (z - max).exp())
        .sum::<f64>()
        .ln();
    logits.iter().map(|&z| z - max - log_sum).collect()
}

/// Shannon entropy of a probability vector, nats.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Scale gradients in place so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Bias-corrected Adam over one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(lr: f64, param_count: usize) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step_count: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grads: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam: {} params, {} grads, {} moments",
                theta.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for i in 0..theta.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Actor/critic parameter sets plus optimizer state; the unit persisted to a
/// policy file.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyBundle {
    pub actor: Network,
    pub critic: Network,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    /// Hash of the resolved training configuration.
    pub config_hash: [u8; 32],
}

impl PolicyBundle {
    pub fn init(
        channels: usize,
        actions: usize,
        conv_filters: usize,
        learning_rate: f64,
        config_hash: [u8; 32],
        rng: &mut ChaCha8Rng,
    ) -> Result<PolicyBundle> {
        let actor = Network::init(NetworkSpec::actor(channels, actions, conv_filters), rng)?;
        let critic = Network::init(NetworkSpec::critic(channels, conv_filters), rng)?;
        let actor_opt = AdamState::new(learning_rate, actor.spec.param_count());
        let critic_opt = AdamState::new(learning_rate, critic.spec.param_count());
        Ok(PolicyBundle {
            actor,
            critic,
            actor_opt,
            critic_opt,
            config_hash,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(POLICY_MAGIC);
        buf.extend_from_slice(&POLICY_VERSION.to_le_bytes());
        write_spec(&mut buf, &self.actor.spec);
        write_spec(&mut buf, &self.critic.spec);
        buf.extend_from_slice(&self.config_hash);
        write_f64s(&mut buf, &self.actor.theta);
        write_f64s(&mut buf, &self.critic.theta);
        write_adam(&mut buf, &self.actor_opt);
        write_adam(&mut buf, &self.critic_opt);
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PolicyBundle> {
        if bytes.len() < POLICY_MAGIC.len() + 4 + 32 {
            return Err(Error::Truncated);
        }
        if &bytes[..4] != POLICY_MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != POLICY_VERSION {
            return Err(Error::VersionMismatch(version));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - 32);
        let digest = Sha256::digest(body);
        if digest.as_slice() != checksum {
            return Err(Error::ChecksumMismatch);
        }
        let mut r = Reader {
            buf: body,
            pos: 8,
        };
        let actor_spec = read_spec(&mut r)?;
        let critic_spec = read_spec(&mut r)?;
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(r.take(32)?);
        let actor_theta = read_f64s(&mut r)?;
        let critic_theta = read_f64s(&mut r)?;
        let actor_opt = read_adam(&mut r)?;
        let critic_opt = read_adam(&mut r)?;
        if r.pos != body.len() {
            return Err(Error::Truncated);
        }
        if actor_theta.len() != actor_spec.param_count()
            || critic_theta.len() != critic_spec.param_count()
        {
            return Err(Error::SpecMismatch(
                "parameter count does not match stored spec".into(),
            ));
        }
        Ok(PolicyBundle {
            actor: Network {
                spec: actor_spec,
                theta: actor_theta,
            },
            critic: Network {
                spec: critic_spec,
                theta: critic_theta,
            },
            actor_opt,
            critic_opt,
            config_hash,
        })
    }

    /// Load, additionally checking the channel count against an expected tap
    /// configuration.
    pub fn from_bytes_expecting(bytes: &[u8], expected_channels: usize) -> Result<PolicyBundle> {
        let bundle = PolicyBundle::from_bytes(bytes)?;
        if bundle.actor.spec.input_channels != expected_channels {
            return Err(Error::SpecMismatch(format!(
                "policy has {} input channels, expected {}",
                bundle.actor.spec.input_channels, expected_channels
            )));
        }
        Ok(bundle)
    }
}

fn write_spec(buf: &mut Vec<u8>, s: &NetworkSpec) {
    for v in [
        s.input_channels,
        s.input_length,
        s.kernel,
        s.conv_filters,
        s.hidden[0],
        s.hidden[1],
        s.outputs,
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
}

fn write_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    buf.extend_from_slice(&(xs.len() as u64).to_le_bytes());
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn write_adam(buf: &mut Vec<u8>, a: &AdamState) {
    for x in [a.lr, a.beta1, a.beta2, a.eps] {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf.extend_from_slice(&a.step_count.to_le_bytes());
    write_f64s(buf, &a.m);
    write_f64s(buf, &a.v);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_spec(r: &mut Reader) -> Result<NetworkSpec> {
    Ok(NetworkSpec {
        input_channels: r.u32()? as usize,
        input_length: r.u32()? as usize,
        kernel: r.u32()? as usize,
        conv_filters: r.u32()? as usize,
        hidden: [r.u32()? as usize, r.u32()? as usize],
        outputs: r.u32()? as usize,
    })
}

fn read_f64s(r: &mut Reader) -> Result<Vec<f64>> {
    let n = r.u64()? as usize;
    if n > (1 << 32) {
        return Err(Error::Truncated);
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(r.f64()?);
    }
    Ok(out)
}

fn read_adam(r: &mut Reader) -> Result<AdamState> {
    let lr = r.f64()?;
    let beta1 = r.f64()?;
    let beta2 = r.f64()?;
    let eps = r.f64()?;
    let step_count = r.u64()?;
    let m = read_f64s(r)?;
    let v = read_f64s(r)?;
    if m.len() != v.len() {
        return Err(Error::SpecMismatch("optimizer moment shapes differ".into()));
    }
    Ok(AdamState {
        lr,
        beta1,
        beta2,
        eps,
        m,
        v,
        step_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_spec(channels: usize, outputs: usize) -> NetworkSpec {
        NetworkSpec {
            input_channels: channels,
            input_length: 10,
            kernel: 3,
            conv_filters: 2,
            hidden: [6, 5],
            outputs,
        }
    }

    fn rand_input(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..spec.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv_shifted_identity_kernel() {
        let spec = NetworkSpec {
            input_channels: 1,
            input_length: 10,
            kernel: 3,
            conv_filters: 1,
            hidden: [4, 4],
            outputs: 2,
        };
        let mut net = Network {
            spec,
            theta: vec![0.0; spec.param_count()],
        };
        net.theta[1] = 1.0; // kernel [0, 1, 0], zero bias
        let input: Vec<f64> = (1..=10).map(f64::from).collect();
        let out = net.conv1d_forward(&input).unwrap();
        assert_eq!(out, (2..=9).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn conv_zero_input_broadcasts_bias() {
        let spec = small_spec(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::init(spec, &mut rng).unwrap();
        let out = net.conv1d_forward(&vec![0.0; spec.input_len()]).unwrap();
        let l = Layout::of(&spec);
        for f in 0..spec.conv_filters {
            for t in 0..spec.conv_out_len() {
                assert_eq!(out[f * spec.conv_out_len() + t], net.theta[l.conv_b + f]);
            }
        }
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let spec = small_spec(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::init(spec, &mut rng).unwrap();
        let input = rand_input(&spec, &mut rng);
        let got = net.conv1d_forward(&input).unwrap();
        let l = Layout::of(&spec);
        for f in 0..spec.conv_filters {
            for t in 0..spec.conv_out_len() {
                let mut want = net.theta[l.conv_b + f];
                for c in 0..spec.input_channels {
                    for k in 0..spec.kernel {
                        want += net.theta[l.conv_w + (f * spec.input_channels + c) * spec.kernel + k]
                            * input[c * spec.input_length + t + k];
                    }
                }
                assert!((got[f * spec.conv_out_len() + t] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let spec = small_spec(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::init(spec, &mut rng).unwrap();
        assert!(net.forward(&vec![0.0; 5]).is_err());
    }

    #[test]
    fn zero_head_gives_uniform_policy() {
        let spec = small_spec(2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Network::init(spec, &mut rng).unwrap();
        let l = Layout::of(&spec);
        for t in &mut net.theta[l.w3..] {
            *t = 0.0;
        }
        let input = rand_input(&spec, &mut rng);
        let probs = softmax(&net.forward(&input).unwrap().output);
        for p in &probs {
            assert!((p - 1.0 / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let logits = [0.3, -2.0, 1.7, 0.0, 5.5];
        let p = softmax(&logits);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = logits.iter().map(|z| z + 123.4).collect();
        let q = softmax(&shifted);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_zero_output_grad_gives_zero_grads() {
        let spec = small_spec(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Network::init(spec, &mut rng).unwrap();
        let input = rand_input(&spec, &mut rng);
        let cache = net.forward(&input).unwrap();
        let mut grads = vec![0.0; net.theta.len()];
        net.backward_into(&cache, &vec![0.0; spec.outputs], &mut grads);
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    /// Central finite differences of an arbitrary scalar loss over the
    /// network output; the independent oracle for backward_into.
    pub(crate) fn finite_diff_grads<F>(net: &Network, input: &[f64], loss: F, h: f64) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut grads = vec![0.0; net.theta.len()];
        let mut probe = net.clone();
        for i in 0..net.theta.len() {
            probe.theta[i] = net.theta[i] + h;
            let up = loss(&probe.forward(input).unwrap().output);
            probe.theta[i] = net.theta[i] - h;
            let down = loss(&probe.forward(input).unwrap().output);
            probe.theta[i] = net.theta[i];
            grads[i] = (up - down) / (2.0 * h);
        }
        grads
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Quadratic-in-output loss; exercises every layer.
        let spec = small_spec(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = Network::init(spec, &mut rng).unwrap();
        let input = rand_input(&spec, &mut rng);
        let targets = [0.3, -0.8, 0.1];
        let cache = net.forward(&input).unwrap();
        let d_out: Vec<f64> = cache
            .output
            .iter()
            .zip(&targets)
            .map(|(o, t)| 2.0 * (o - t))
            .collect();
        let mut analytic = vec![0.0; net.theta.len()];
        net.backward_into(&cache, &d_out, &mut analytic);
        let numeric = finite_diff_grads(
            &net,
            &input,
            |out| {
                out.iter()
                    .zip(&targets)
                    .map(|(o, t)| (o - t) * (o - t))
                    .sum()
            },
            1e-5,
        );
        for (a, n) in analytic.iter().zip(&numeric) {
            let denom = a.abs().max(n.abs()).max(1e-8);
            assert!((a - n).abs() / denom < 1e-5, "{a} vs {n}");
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut theta = vec![1.0, -2.0, 0.5];
        let mut opt = AdamState::new(3e-5, 3);
        opt.step(&mut theta, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(theta, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        // With |g| >> eps, bias correction gives m̂ = g, v̂ = g², so the first
        // step is -lr · sign(g).
        let mut theta = vec![0.0, 0.0];
        let mut opt = AdamState::new(0.01, 2);
        opt.step(&mut theta, &[5.0, -0.5]).unwrap();
        assert!((theta[0] - (-0.01)).abs() < 1e-6);
        assert!((theta[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn adam_two_steps_match_reference_formula() {
        let g1 = [0.3, -1.1];
        let g2 = [-0.2, 0.4];
        let mut theta = vec![0.1, 0.2];
        let mut opt = AdamState::new(1e-3, 2);
        opt.step(&mut theta, &g1).unwrap();
        opt.step(&mut theta, &g2).unwrap();

        // Hand-unrolled reference.
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 1e-3);
        let mut want = [0.1, 0.2];
        let mut m = [0.0; 2];
        let mut v = [0.0; 2];
        for (t, g) in [g1, g2].iter().enumerate() {
            let t = (t + 1) as i32;
            for i in 0..2 {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                want[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        for i in 0..2 {
            assert!((theta[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut bundle = PolicyBundle::init(4, 3, 2, 3e-5, [7u8; 32], &mut rng).unwrap();
        bundle.actor_opt.step_count = 12;
        bundle.actor_opt.m[0] = 0.25;
        let bytes = bundle.to_bytes();
        let loaded = PolicyBundle::from_bytes(&bytes).unwrap();
        assert_eq!(bundle, loaded);
    }

    #[test]
    fn policy_load_errors_are_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let bundle = PolicyBundle::init(2, 3, 2, 3e-5, [0u8; 32], &mut rng).unwrap();
        let bytes = bundle.to_bytes();

        let mut corrupted = bytes.clone();
        let mid = corrupted.len() / 2;
        corrupted[mid] ^= 0xff;
        assert!(matches!(
            PolicyBundle::from_bytes(&corrupted),
            Err(Error::ChecksumMismatch)
        ));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            PolicyBundle::from_bytes(&bad_magic),
            Err(Error::BadMagic)
        ));

        let mut bad_version = bytes.clone();
        bad_version[4] = 99;
        assert!(matches!(
            PolicyBundle::from_bytes(&bad_version),
            Err(Error::VersionMismatch(_))
        ));

        assert!(matches!(
            PolicyBundle::from_bytes(&bytes[..10]),
            Err(Error::Truncated)
        ));

        assert!(matches!(
            PolicyBundle::from_bytes_expecting(&bytes, 7),
            Err(Error::SpecMismatch(_))
        ));
    }
}
