//! Surrogate steganalyzers: a fixed high-pass residual filter, strided
//! convolution blocks, global average pooling and a two-logit head.

use serde::{Deserialize, Serialize};

use crate::decoder::{draw_conv, BlockWeights};
use crate::embed::{Adam, AdamConfig};
use crate::graph::{Graph, Tensor, Var};
use crate::rng::SplitMix64;
use crate::wavio::AudioClip;
use crate::{Error, Result};

pub const MIN_INPUT_LEN: usize = 64;
const SLOPE: f64 = 0.2;
const STRIDE: usize = 2;
/// Scales the residual into the working range of the Kaiming-initialized blocks.
pub const INPUT_GAIN: f32 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    A,
    B,
}

impl Variant {
    pub fn front_kernel(self) -> &'static [f32] {
        match self {
            Variant::A => &[1.0, -2.0, 1.0],
            Variant::B => &[1.0, -1.0],
        }
    }

    pub fn channels(self) -> &'static [usize] {
        match self {
            Variant::A => &[1, 8, 16, 32, 64],
            Variant::B => &[1, 8, 16, 32],
        }
    }

    pub fn kernel_width(self) -> usize {
        match self {
            Variant::A => 7,
            Variant::B => 11,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Variant::A),
            "B" | "b" => Ok(Variant::B),
            _ => Err(Error::InvalidArgument(format!("unknown detector variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    variant: Variant,
    seed: u64,
    epochs: usize,
    blocks: Vec<BlockWeights>,
    head: BlockWeights,
}

pub fn init_detector(seed: u64, variant: Variant) -> Result<DetectorModel> {
    let mut rng = SplitMix64::new(seed);
    let ch = variant.channels();
    let k = variant.kernel_width();
    let blocks = ch.windows(2).map(|c| draw_conv(&mut rng, c[1], c[0], k, SLOPE)).collect::<Result<_>>()?;
    let head = draw_conv(&mut rng, 2, *ch.last().unwrap(), 1, SLOPE)?;
    Ok(DetectorModel { variant, seed, epochs: 0, blocks, head })
}

/// Stable two-class softmax probability of class 1.
pub fn stego_probability(logits: [f32; 2]) -> f32 {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    e1 / (e0 + e1)
}

impl DetectorModel {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    fn tensors(&self) -> impl Iterator<Item = &Tensor<f32>> {
        self.blocks.iter().chain(std::iter::once(&self.head)).flat_map(|b| [&b.weight, &b.bias])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<f32>> {
        self.blocks.iter_mut().chain(std::iter::once(&mut self.head)).flat_map(|b| [&mut b.weight, &mut b.bias])
    }

    /// Pushes the weights into `g`, as parameters when `trainable`.
    pub fn push_weights(&self, g: &mut Graph<f32>, trainable: bool) -> Result<Vec<Var>> {
        self.tensors().map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) }).collect()
    }

    /// Logits (`1×2`) for a `1×L` signal given weights from [`Self::push_weights`].
    pub fn logits_with(&self, g: &mut Graph<f32>, x: Var, weights: &[Var]) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 2 || s[0] != 1 {
            return Err(Error::shape("detect", format!("expected 1×L input, got {s:?}")));
        }
        if s[1] < MIN_INPUT_LEN {
            return Err(Error::InvalidArgument(format!("detector input of {} samples, need {MIN_INPUT_LEN}", s[1])));
        }
        let front: Vec<f32> = self.variant.front_kernel().iter().map(|v| v * INPUT_GAIN).collect();
        let fw = g.constant(Tensor::new(&[1, 1, front.len()], front)?)?;
        let mut h = self.front(g, x, fw)?;
        let k = self.variant.kernel_width();
        for pair in weights[..2 * self.blocks.len()].chunks(2) {
            h = g.conv1d_strided(h, pair[0], Some(pair[1]), STRIDE, (k - 1) / 2)?;
            h = g.leaky_relu(h, SLOPE as f32);
        }
        let c = g.shape(h)[0];
        let pooled = g.adaptive_avg_pool1d(h, 1)?;
        let pooled = g.reshape(pooled, &[c, 1])?;
        let n = weights.len();
        let logits = g.conv1d(pooled, weights[n - 2], Some(weights[n - 1]))?;
        g.reshape(logits, &[1, 2])
    }

    /// Residual filter with zero padding; the width-2 kernel has no centre
    /// and is padded on the right only.
    fn front(&self, g: &mut Graph<f32>, x: Var, fw: Var) -> Result<Var> {
        let w = self.variant.front_kernel().len();
        if w % 2 == 1 {
            return g.conv1d(x, fw, None);
        }
        let h = g.conv1d_strided(x, fw, None, 1, w / 2)?;
        let len = g.shape(x)[1];
        g.slice_cols(h, 1, len)
    }

    pub fn logits(&self, signal: &[f32]) -> Result<[f32; 2]> {
        let mut g = Graph::new();
        let w = self.push_weights(&mut g, false)?;
        let x = g.constant(Tensor::signal(signal.to_vec()))?;
        let l = self.logits_with(&mut g, x, &w)?;
        let d = g.value(l).data();
        Ok([d[0], d[1]])
    }

    /// Probability that `signal` is stego, kept strictly inside (0, 1).
    pub fn detect(&self, signal: &[f32]) -> Result<f32> {
        let p = stego_probability(self.logits(signal)?);
        Ok(p.clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON / 2.0))
    }

    /// Differentiable stego probability of `x` (`1×1`).
    pub fn detect_var(&self, g: &mut Graph<f32>, x: Var) -> Result<Var> {
        let w = self.push_weights(g, false)?;
        let l = self.logits_with(g, x, &w)?;
        g.softmax_pick(l, 1)
    }

    /// Checkpoint: u32 LE header length, JSON header, f32 LE weights.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            variant: self.variant,
            seed: self.seed,
            epochs: self.epochs,
            shapes: self.tensors().map(|t| t.shape().to_vec()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidArgument(format!("detector checkpoint: {m}"));
        if bytes.len() < 4 {
            return Err(bad("truncated header length"));
        }
        let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let json = bytes.get(4..4 + n).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(json)?;
        let mut model = init_detector(header.seed, header.variant)?;
        model.epochs = header.epochs;
        let shapes: Vec<Vec<usize>> = model.tensors().map(|t| t.shape().to_vec()).collect();
        if shapes != header.shapes {
            return Err(bad("tensor shapes do not match the variant"));
        }
        let mut payload = bytes[4 + n..].chunks_exact(4);
        if payload.len() != shapes.iter().map(|s| s.iter().product::<usize>()).sum::<usize>() || !payload.remainder().is_empty() {
            return Err(bad("payload size does not match the header"));
        }
        for t in model.tensors_mut() {
            let vals: Vec<f32> = payload.by_ref().take(t.len()).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("detector checkpoint".into()));
            }
            *t = Tensor::new(t.shape(), vals)?;
        }
        Ok(model)
    }
}


#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    variant: Variant,
    seed: u64,
    epochs: usize,
    shapes: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Random paired crop length; `None` trains on whole clips.
    pub crop_len: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, lr: 1e-3, crop_len: Some(4000), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Whole-clip accuracy at threshold 0.5 after the last epoch.
    pub final_accuracy: f64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,accuracy\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.accuracy));
        }
        s
    }
}

fn check_pairs(covers: &[AudioClip], stegos: &[AudioClip]) -> Result<()> {
    if covers.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    if covers.len() != stegos.len() {
        return Err(Error::InvalidArgument(format!("{} covers vs {} stegos", covers.len(), stegos.len())));
    }
    for (i, (c, s)) in covers.iter().zip(stegos).enumerate() {
        if c.len() != s.len() {
            return Err(Error::InvalidArgument(format!("pair {i}: lengths {} and {}", c.len(), s.len())));
        }
        if c.len() < MIN_INPUT_LEN {
            return Err(Error::InvalidArgument(format!("pair {i}: {} samples is too short", c.len())));
        }
    }
    Ok(())
}

/// Trains on index-paired covers (label 0) and stegos (label 1), one
/// paired batch per step, minimizing the mean cross-entropy with Adam.
pub fn train_detector(
    mut model: DetectorModel,
    covers: &[AudioClip],
    stegos: &[AudioClip],
    config: &TrainConfig,
) -> Result<(DetectorModel, TrainReport)> {
    check_pairs(covers, stegos)?;
    let adam_cfg = AdamConfig::with_lr(config.lr);
    adam_cfg.validate()?;
    let mut adams: Vec<Adam> = model.tensors().map(|t| Adam::new(t.len(), adam_cfg)).collect();
    let mut rng = SplitMix64::new(config.seed);
    let mut order: Vec<usize> = (0..covers.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, (rng.next_u64() % (i as u64 + 1)) as usize);
        }
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for &idx in &order {
            let len = covers[idx].len();
            let crop = config.crop_len.unwrap_or(len).clamp(MIN_INPUT_LEN, len);
            let off = (rng.next_u64() % (len - crop + 1) as u64) as usize;
            let mut g = Graph::new();
            let w = model.push_weights(&mut g, true)?;
            let mut terms = Vec::with_capacity(2);
            for (label, clip) in [(0usize, &covers[idx]), (1, &stegos[idx])] {
                let x = g.constant(Tensor::signal(clip.samples()[off..off + crop].to_vec()))?;
                let l = model.logits_with(&mut g, x, &w)?;
                let d = g.value(l).data();
                correct += ((stego_probability([d[0], d[1]]) >= 0.5) as usize == label) as usize;
                terms.push((g.softmax_xent(l, label)?, 0.5));
            }
            let loss = g.weighted_sum(&terms)?;
            let lv = g.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("detector loss at epoch {epoch}")));
            }
            loss_sum += lv as f64;
            g.backward(loss)?;
            for ((t, v), adam) in model.tensors_mut().zip(&w).zip(&mut adams) {
                let grad = g.grad(*v);
                let mut data = std::mem::replace(t, Tensor::zeros(&[1])).into_data();
                adam.step(&mut data, &grad)?;
                *t = Tensor::new(g.shape(*v), data)?;
            }
        }
        logs.push(EpochLog {
            epoch: model.epochs + epoch,
            loss: loss_sum / covers.len() as f64,
            accuracy: correct as f64 / (2 * covers.len()) as f64,
        });
    }
    model.epochs += config.epochs;
    let final_accuracy = accuracy(&model, covers, stegos)?;
    Ok((model, TrainReport { epochs: logs, final_accuracy }))
}

/// Fraction of clips classified correctly at threshold 0.5.
pub fn accuracy(model: &DetectorModel, covers: &[AudioClip], stegos: &[AudioClip]) -> Result<f64> {
    let mut correct = 0;
    for c in covers {
        correct += (model.detect(c.samples())? < 0.5) as usize;
    }
    for s in stegos {
        correct += (model.detect(s.samples())? >= 0.5) as usize;
    }
    Ok(correct as f64 / (covers.len() + stegos.len()) as f64)
}

/// `P̄_E = min_τ (P_FA(τ) + P_MD(τ)) / 2`, deciding "stego" when score ≥ τ.
pub fn p_e_from_scores(cover_scores: &[f64], stego_scores: &[f64]) -> Result<f64> {
    if cover_scores.is_empty() || stego_scores.is_empty() {
        return Err(Error::InvalidArgument("P_E needs both cover and stego scores".into()));
    }
    let mut thresholds: Vec<f64> = cover_scores.iter().chain(stego_scores).copied().collect();
    if thresholds.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("detector scores".into()));
    }
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let (nc, ns) = (cover_scores.len() as f64, stego_scores.len() as f64);
    let mut best = f64::INFINITY;
    for &t in &thresholds {
        let fa = cover_scores.iter().filter(|&&s| s >= t).count() as f64 / nc;
        let md = stego_scores.iter().filter(|&&s| s < t).count() as f64 / ns;
        best = best.min((fa + md) / 2.0);
    }
    Ok(best)
}

pub fn p_e(model: &DetectorModel, covers: &[AudioClip], stegos: &[AudioClip]) -> Result<f64> {
    let score = |c: &AudioClip| model.detect(c.samples()).map(|p| p as f64);
    let cs = covers.iter().map(score).collect::<Result<Vec<_>>>()?;
    let ss = stegos.iter().map(score).collect::<Result<Vec<_>>>()?;
    p_e_from_scores(&cs, &ss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_clip(seed: u64, len: usize, amp: f64, offset: f32) -> AudioClip {
        let mut r = SplitMix64::new(seed);
        let s = (0..len).map(|_| r.next_symmetric(amp) as f32 + offset).collect();
        AudioClip::new(s, 16000).unwrap()
    }

    #[test]
    fn p_e_oracles() {
        assert_eq!(p_e_from_scores(&[0.1, 0.4], &[0.3, 0.9]).unwrap(), 0.25);
        assert_eq!(p_e_from_scores(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 0.0);
        assert_eq!(p_e_from_scores(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.5);
        // monotone transform invariance
        let c = [0.1, 0.4, 0.35, 0.7];
        let s = [0.3, 0.9, 0.2, 0.8];
        let f = |v: &[f64]| v.iter().map(|x| (5.0 * x).exp()).collect::<Vec<_>>();
        assert_eq!(p_e_from_scores(&c, &s).unwrap(), p_e_from_scores(&f(&c), &f(&s)).unwrap());
    }

    #[test]
    fn softmax_probability_cases() {
        assert_eq!(stego_probability([0.0, 0.0]), 0.5);
        assert!((stego_probability([0.0, 3f32.ln()]) - 0.75).abs() < 1e-6);
        assert_eq!(stego_probability([200.0, -200.0]), 0.0);
    }

    #[test]
    fn variants_are_distinct_and_seeded() {
        let a = init_detector(3, Variant::A).unwrap();
        assert_eq!(a, init_detector(3, Variant::A).unwrap());
        let b = init_detector(3, Variant::B).unwrap();
        assert_ne!(a.variant.front_kernel(), b.variant.front_kernel());
        assert_ne!(a.blocks.len(), b.blocks.len());
        assert_ne!(a.variant.kernel_width(), b.variant.kernel_width());
        for len in [64, 100, 16000] {
            let x = noise_clip(1, len, 0.1, 0.0);
            let p = a.detect(x.samples()).unwrap();
            assert!(p > 0.0 && p < 1.0);
            assert!(b.detect(x.samples()).is_ok());
        }
        assert!(a.detect(&[0.0; 63]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = init_detector(5, Variant::B).unwrap();
        let bytes = a.to_bytes();
        assert_eq!(DetectorModel::from_bytes(&bytes).unwrap(), a);
        assert!(DetectorModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(DetectorModel::from_bytes(&[1, 0]).is_err());
    }

    #[test]
    fn untrained_detector_is_chance() {
        let a = init_detector(11, Variant::A).unwrap();
        let covers: Vec<_> = (0..300).map(|i| noise_clip(i, 256, 0.1, 0.0)).collect();
        let stegos: Vec<_> = (300..600).map(|i| noise_clip(i, 256, 0.1, 0.0)).collect();
        let pe = p_e(&a, &covers, &stegos).unwrap();
        assert!((0.45..=0.55).contains(&pe), "P_E {pe}");
    }

    fn offset(c: &AudioClip, f: impl Fn(usize) -> f32) -> AudioClip {
        AudioClip::new(c.samples().iter().enumerate().map(|(t, v)| v + f(t)).collect(), 16000).unwrap()
    }

    #[test]
    fn learns_a_separable_offset() {
        let covers: Vec<_> = (0..8).map(|i| noise_clip(i, 1024, 0.02, 0.0)).collect();
        let stegos: Vec<_> = covers.iter().map(|c| offset(c, |t| if t % 2 == 0 { 0.05 } else { -0.05 })).collect();
        for v in [Variant::A, Variant::B] {
            let cfg = TrainConfig { epochs: 20, lr: 1e-3, crop_len: None, seed: 1 };
            let (_, rep) = train_detector(init_detector(2, v).unwrap(), &covers, &stegos, &cfg).unwrap();
            assert!(rep.final_accuracy > 0.95, "{v:?}: {rep:?}");
        }
    }

    #[test]
    fn residual_front_ignores_dc_away_from_edges() {
        let x = noise_clip(1, 1024, 0.02, 0.0);
        let y = offset(&x, |_| 0.05);
        let m = init_detector(2, Variant::A).unwrap();
        let mut g = Graph::new();
        let fw = g.constant(Tensor::new(&[1, 1, 3], vec![1.0, -2.0, 1.0]).unwrap()).unwrap();
        let rx = g.constant(Tensor::signal(x.samples().to_vec())).unwrap();
        let ry = g.constant(Tensor::signal(y.samples().to_vec())).unwrap();
        let a = m.front(&mut g, rx, fw).unwrap();
        let b = m.front(&mut g, ry, fw).unwrap();
        let (a, b) = (g.value(a).data(), g.value(b).data());
        assert!((1..1023).all(|t| (a[t] - b[t]).abs() < 1e-6));
        assert!((a[0] - b[0]).abs() > 0.04);
    }

    #[test]
    fn identical_sets_stay_near_chance() {
        let covers: Vec<_> = (0..8).map(|i| noise_clip(i, 512, 0.05, 0.0)).collect();
        let model = init_detector(2, Variant::A).unwrap();
        let cfg = TrainConfig { epochs: 3, lr: 1e-3, crop_len: None, seed: 1 };
        let (_, rep) = train_detector(model, &covers, &covers, &cfg).unwrap();
        assert!((rep.final_accuracy - 0.5).abs() < 1e-9);
    }

    #[test]
    fn training_is_deterministic_and_validates_input() {
        let covers: Vec<_> = (0..3).map(|i| noise_clip(i, 512, 0.05, 0.0)).collect();
        let stegos: Vec<_> = (3..6).map(|i| noise_clip(i, 512, 0.05, 0.0)).collect();
        let cfg = TrainConfig { epochs: 2, lr: 1e-3, crop_len: Some(256), seed: 9 };
        let m = init_detector(2, Variant::A).unwrap();
        let a = train_detector(m.clone(), &covers, &stegos, &cfg).unwrap();
        let b = train_detector(m.clone(), &covers, &stegos, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.epochs(), 2);
        assert!(train_detector(m.clone(), &[], &[], &cfg).is_err());
        assert!(train_detector(m, &covers, &stegos[..2], &cfg).is_err());
    }
}
