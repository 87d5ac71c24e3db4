//! The fixed decoder: five `[conv1d → instance_norm → leaky_relu]` blocks,
//! adaptive average pooling to the message length and a sigmoid. Weights
//! are never trained; they are drawn from SplitMix64 seeded with the key.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{Graph, Tensor, Var};
use crate::message::Message;
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// The shared 64-bit secret.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DecoderKey {
    pub seed: u64,
}

impl DecoderKey {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn to_hex(self) -> String {
        format!("{:016x}", self.seed)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches("0x");
        u64::from_str_radix(t, 16)
            .map(Self::new)
            .map_err(|e| Error::InvalidArgument(format!("key seed {s:?}: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub message_len: usize,
    pub blocks: Vec<BlockSpec>,
    pub leaky_slope: f64,
    pub norm_eps: f64,
}

pub const DEFAULT_CHANNELS: [usize; 6] = [1, 16, 32, 32, 16, 1];
pub const DEFAULT_KERNELS: [usize; 5] = [41, 21, 11, 5, 3];

impl Default for DecoderConfig {
    fn default() -> Self {
        Self::with_message_len(1600)
    }
}

impl DecoderConfig {
    pub fn with_message_len(message_len: usize) -> Self {
        let blocks = DEFAULT_KERNELS
            .iter()
            .enumerate()
            .map(|(i, &k)| BlockSpec {
                in_channels: DEFAULT_CHANNELS[i],
                out_channels: DEFAULT_CHANNELS[i + 1],
                kernel_width: k,
            })
            .collect();
        Self { message_len, blocks, leaky_slope: 0.2, norm_eps: 1e-5 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::DecoderConfig(m));
        if self.message_len == 0 {
            return bad("message_len must be at least 1".into());
        }
        if self.blocks.len() != 5 {
            return bad(format!("{} blocks, expected 5", self.blocks.len()));
        }
        if self.blocks[0].in_channels != 1 || self.blocks[4].out_channels != 1 {
            return bad("first block must take 1 channel and last must emit 1".into());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.in_channels == 0 || b.out_channels == 0 {
                return bad(format!("block {i} has a zero channel count"));
            }
            if b.kernel_width % 2 == 0 {
                return bad(format!("block {i} kernel width {} is even", b.kernel_width));
            }
            if i > 0 {
                let p = &self.blocks[i - 1];
                if p.out_channels != b.in_channels {
                    return bad(format!("block {i} input {} != previous output {}", b.in_channels, p.out_channels));
                }
                if b.kernel_width > p.kernel_width {
                    return bad(format!("kernel widths must be non-increasing at block {i}"));
                }
            }
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky slope {} not in (0, 1)", self.leaky_slope));
        }
        if !(self.norm_eps > 0.0) {
            return bad(format!("norm eps {} must be positive", self.norm_eps));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    key: DecoderKey,
    config: DecoderConfig,
    blocks: Vec<BlockWeights>,
}

/// Kaiming-uniform bound for a leaky-ReLU layer.
pub fn weight_bound(fan_in: usize, slope: f64) -> f64 {
    (6.0 / fan_in as f64).sqrt() * (2.0 / (1.0 + slope * slope)).sqrt()
}

/// Draws `out × in × width` weights then `out` biases from `rng`.
pub(crate) fn draw_conv(
    rng: &mut SplitMix64,
    out: usize,
    inp: usize,
    width: usize,
    slope: f64,
) -> Result<BlockWeights> {
    let fan_in = inp * width;
    let b = weight_bound(fan_in, slope);
    let w = (0..out * inp * width).map(|_| rng.next_symmetric(b) as f32).collect();
    let bb = 1.0 / (fan_in as f64).sqrt();
    let bias = (0..out).map(|_| rng.next_symmetric(bb) as f32).collect();
    Ok(BlockWeights { weight: Tensor::new(&[out, inp, width], w)?, bias: Tensor::new(&[out], bias)? })
}

pub fn init_decoder(key: DecoderKey, config: DecoderConfig) -> Result<DecoderModel> {
    config.validate()?;
    let mut rng = SplitMix64::new(key.seed);
    let slope = config.leaky_slope;
    let blocks = config
        .blocks
        .iter()
        .map(|b| draw_conv(&mut rng, b.out_channels, b.in_channels, b.kernel_width, slope))
        .collect::<Result<_>>()?;
    Ok(DecoderModel { key, config, blocks })
}

impl DecoderModel {
    pub fn key(&self) -> DecoderKey {
        self.key
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn message_len(&self) -> usize {
        self.config.message_len
    }

    pub fn blocks(&self) -> &[BlockWeights] {
        &self.blocks
    }

    /// Same weights, different pooling length.
    pub fn with_message_len(&self, k: usize) -> Result<Self> {
        let mut m = self.clone();
        m.config.message_len = k;
        m.config.validate()?;
        Ok(m)
    }

    /// SHA-256 over the little-endian f32 weights, in draw order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.blocks {
            for v in b.weight.data().iter().chain(b.bias.data()) {
                h.update(v.to_le_bytes());
            }
        }
        hex_string(&h.finalize())
    }

    /// Adds the decoder to `g` on a `1×H` input, returning `1×K` probabilities.
    pub fn forward(&self, g: &mut Graph<f32>, x: Var) -> Result<Var> {
        let s = g.shape(x);
        let k = self.config.message_len;
        if s.len() != 2 || s[0] != 1 {
            return Err(Error::shape("decode", format!("expected 1×H input, got {s:?}")));
        }
        if s[1] < k {
            return Err(Error::MessageTooLong { k, h: s[1] });
        }
        let mut h = x;
        for b in &self.blocks {
            let w = g.constant(b.weight.clone())?;
            let bias = g.constant(b.bias.clone())?;
            h = g.conv1d(h, w, Some(bias))?;
            h = g.instance_norm1d(h, self.config.norm_eps as f32)?;
            h = g.leaky_relu(h, self.config.leaky_slope as f32);
        }
        let p = g.adaptive_avg_pool1d(h, k)?;
        Ok(g.sigmoid(p))
    }

    pub fn decode(&self, signal: &[f32]) -> Result<Vec<f32>> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::signal(signal.to_vec()))?;
        let p = self.forward(&mut g, x)?;
        Ok(g.value(p).data().to_vec())
    }

    pub fn extract(&self, signal: &[f32]) -> Result<Message> {
        harden(&self.decode(signal)?)
    }
}

/// Bit is 1 iff `p ≥ 0.5`.
pub fn harden(probabilities: &[f32]) -> Result<Message> {
    Message::from_bits(probabilities.iter().map(|&p| (p >= 0.5) as u8).collect())
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// On-disk key: hex seed plus the decoder architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyFile {
    pub seed: String,
    pub config: DecoderConfig,
}

impl KeyFile {
    pub fn new(key: DecoderKey, config: DecoderConfig) -> Self {
        Self { seed: key.to_hex(), config }
    }

    pub fn key(&self) -> Result<DecoderKey> {
        DecoderKey::from_hex(&self.seed)
    }

    pub fn model(&self) -> Result<DecoderModel> {
        init_decoder(self.key()?, self.config.clone())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("key file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let k: KeyFile = serde_json::from_str(s)?;
        k.key()?;
        k.config.validate()?;
        Ok(k)
    }
}
