use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{loss_l1, loss_l3, loss_robust, project, total_loss, Adam, AdamConfig, BoundMode, DecodeInput, EmbedConfig, GammaSchedule};
use crate::attacks::{apply_attack, mean_power, AttackEnv, AttackSpec};
use crate::decoder::{harden, DecoderModel};
use crate::detectors::DetectorModel;
use crate::graph::{Graph, MdctBasis, Tensor, Var};
use crate::message::Message;
use crate::metrics::recovery_accuracy;
use crate::rng::SplitMix64;
use crate::wavio::AudioClip;
use crate::{Error, Result};

pub const TRACE_HEADER: &str = "iteration,l1,l2,l3,total,accuracy";

/// One iteration of the loss trace. `l2` is the robust loss in robust
/// mode; `accuracy` is the float clean bit accuracy (fraction) before the
/// update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub l1: f32,
    pub l2: f32,
    pub l3: f32,
    pub total: f32,
    pub accuracy: f32,
}

impl TraceRow {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{},{}", self.iteration, self.l1, self.l2, self.l3, self.total, self.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedResult {
    /// Float stego signal `clamp(A_c + δ, −1, 1)`.
    pub stego: AudioClip,
    pub delta: Vec<f32>,
    pub trace: Vec<TraceRow>,
    /// Bit accuracy in percent after PCM16 quantization.
    pub accuracy: f64,
    /// Bit accuracy in percent of the float stego.
    pub float_accuracy: f64,
    pub iterations: usize,
    pub early_exit: bool,
    pub wall_time_s: f64,
}

impl EmbedResult {
    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }
}

pub(crate) fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::with_capacity(rows.len() * 48 + 40);
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

fn bit_accuracy(probs: &[f32], message: &Message) -> Result<f64> {
    let got = harden(probs)?;
    let same = got.bits().iter().zip(message.bits()).filter(|(a, b)| a == b).count();
    Ok(same as f64 / message.len() as f64)
}

#[cfg(not(target_arch = "wasm32"))]
#[derive(Debug, Clone)]
struct Timer(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Timer {
    fn start() -> Self {
        Timer(std::time::Instant::now())
    }

    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[cfg(target_arch = "wasm32")]
#[derive(Debug, Clone)]
struct Timer;

#[cfg(target_arch = "wasm32")]
impl Timer {
    fn start() -> Self {
        Timer
    }

    fn seconds(&self) -> f64 {
        0.0
    }
}

/// Steppable embedding run; cloning it snapshots the full state.
#[derive(Debug, Clone)]
pub struct Embedder {
    cover: AudioClip,
    message: Message,
    targets: Vec<f32>,
    decoder: DecoderModel,
    detectors: Vec<DetectorModel>,
    config: EmbedConfig,
    /// `δ` in projection mode, the pre-tanh variable in tanh mode.
    var: Vec<f32>,
    adam: Adam,
    rng: SplitMix64,
    mdct: Option<Arc<MdctBasis<f32>>>,
    reference_power: f64,
    iteration: usize,
    trace: Vec<TraceRow>,
    stopped: bool,
    seconds: f64,
}

impl Embedder {
    pub fn new(
        cover: &AudioClip,
        message: &Message,
        decoder: &DecoderModel,
        detectors: &[DetectorModel],
        config: &EmbedConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate(cover.sample_rate())?;
        let (k, h) = (message.len(), cover.len());
        if k > h {
            return Err(Error::MessageTooLong { k, h });
        }
        if config.gamma.final_value > 0.0 && config.gamma.ramp_start < config.iterations && detectors.is_empty() {
            return Err(Error::InvalidArgument("γ > 0 needs at least one detector".into()));
        }
        let adam_cfg = match config.bound {
            BoundMode::Project => config.adam,
            BoundMode::Tanh => AdamConfig { lr: config.adam.lr / config.epsilon, ..config.adam },
        };
        Ok(Self {
            cover: cover.clone(),
            message: message.clone(),
            targets: message.as_targets(),
            decoder: decoder.with_message_len(k)?,
            detectors: detectors.to_vec(),
            config: config.clone(),
            var: vec![0.0; h],
            adam: Adam::new(h, adam_cfg),
            rng: SplitMix64::new(seed),
            mdct: None,
            reference_power: mean_power(cover.samples()),
            iteration: 0,
            trace: Vec::new(),
            stopped: false,
            seconds: 0.0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &EmbedConfig {
        &self.config
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn is_done(&self) -> bool {
        self.stopped || self.iteration >= self.config.iterations
    }

    /// Continues this run under a different γ schedule and detector set.
    ///
    /// Only allowed while `γ` has been zero for every iteration so far under
    /// both schedules, so the `δ` trajectory matches a run that used the new
    /// settings from the start. The `l3` trace column of earlier rows stays
    /// as recorded.
    pub fn fork(&self, gamma: GammaSchedule, detectors: &[DetectorModel]) -> Result<Self> {
        let n = self.config.iterations;
        let zero_so_far = |s: &GammaSchedule| (1..=self.iteration).all(|i| s.at(i, n) == 0.0);
        if !zero_so_far(&self.config.gamma) || !zero_so_far(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "cannot change γ after iteration {} once it is non-zero",
                self.iteration
            )));
        }
        if gamma.final_value > 0.0 && detectors.is_empty() {
            return Err(Error::InvalidArgument("γ > 0 needs at least one detector".into()));
        }
        let mut next = self.clone();
        next.config.gamma = gamma;
        next.detectors = detectors.to_vec();
        next.stopped = false;
        Ok(next)
    }

    /// Current perturbation.
    pub fn delta(&self) -> Vec<f32> {
        match self.config.bound {
            BoundMode::Project => self.var.clone(),
            BoundMode::Tanh => {
                let e = self.config.epsilon as f32;
                self.var.iter().map(|w| e * w.tanh()).collect()
            }
        }
    }

    fn stego_samples(&self) -> Vec<f32> {
        self.cover.samples().iter().zip(self.delta()).map(|(c, d)| (c + d).clamp(-1.0, 1.0)).collect()
    }

    fn build_delta(&self, g: &mut Graph<f32>) -> Result<(Var, Var)> {
        let v = g.param(Tensor::signal(self.var.clone()))?;
        let d = match self.config.bound {
            BoundMode::Project => v,
            BoundMode::Tanh => {
                // tanh(w) = 2σ(2w) − 1
                let w2 = g.scale(v, 2.0);
                let s = g.sigmoid(w2);
                let s2 = g.scale(s, 2.0);
                let t = g.add_const(s2, &vec![-1.0; self.var.len()])?;
                g.scale(t, self.config.epsilon as f32)
            }
        };
        Ok((v, d))
    }

    /// Runs one iteration; returns `None` once the run is finished.
    pub fn step(&mut self) -> Result<Option<TraceRow>> {
        if self.is_done() {
            return Ok(None);
        }
        let timer = Timer::start();
        let i = self.iteration + 1;
        let cfg = &self.config;
        let mut g = Graph::new();
        let (v, d) = self.build_delta(&mut g)?;
        let raw = g.add_const(d, self.cover.samples())?;
        let stego = g.clamp(raw, -1.0, 1.0)?;
        let cover = g.constant(Tensor::signal(self.cover.samples().to_vec()))?;
        let clean_in = match cfg.decode_input {
            DecodeInput::Stego => stego,
            DecodeInput::Delta => d,
        };
        let probs = self.decoder.forward(&mut g, clean_in)?;
        let l1 = loss_l1(&mut g, stego, cover)?;

        let attack: Option<AttackSpec> = if cfg.robust && !cfg.curriculum.is_empty() {
            cfg.curriculum.schedule(i)?.filter(|a| !a.is_none()).cloned()
        } else {
            None
        };
        let attacked = match &attack {
            None => None,
            Some(spec) => {
                let mut env = AttackEnv::new(self.cover.sample_rate(), self.reference_power, &cfg.attack_settings);
                env.mdct = self.mdct.clone();
                let a = apply_attack(&mut g, stego, spec, &mut env, &mut self.rng)?;
                self.mdct = env.mdct.take();
                let input = match cfg.decode_input {
                    DecodeInput::Stego => a,
                    DecodeInput::Delta => g.sub(a, cover)?,
                };
                Some(self.decoder.forward(&mut g, input)?)
            }
        };
        let omega = cfg.omega_at(i);
        let l2 = loss_robust(&mut g, &self.targets, probs, attacked, omega)?;

        let gamma = cfg.gamma_at(i);
        let l3 = if self.detectors.is_empty() {
            None
        } else {
            let ps = self.detectors.iter().map(|det| det.detect_var(&mut g, stego)).collect::<Result<Vec<_>>>()?;
            Some(loss_l3(&mut g, &ps)?)
        };
        let total = total_loss(&mut g, l1, l2, l3, cfg.alpha, cfg.beta, gamma)?;

        let scalar = |x: Var| g.value(x).data()[0];
        let row = TraceRow {
            iteration: i,
            l1: scalar(l1),
            l2: scalar(l2),
            l3: l3.map(scalar).unwrap_or(0.0),
            total: scalar(total),
            accuracy: bit_accuracy(g.value(probs).data(), &self.message)? as f32,
        };
        if ![row.l1, row.l2, row.l3, row.total].iter().all(|x| x.is_finite()) {
            return Err(Error::Diverged { iteration: i, detail: format!("non-finite loss {row:?}") });
        }
        g.backward(total)?;
        let grad = g.grad(v);
        if grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { iteration: i, detail: "non-finite gradient".into() });
        }
        self.adam.step(&mut self.var, &grad)?;
        let eps = self.config.epsilon as f32;
        if self.config.bound == BoundMode::Project {
            project(&mut self.var, -eps, eps);
        }
        let delta = self.delta();
        if delta.iter().any(|x| !(x.abs() <= eps)) {
            return Err(Error::Diverged { iteration: i, detail: "perturbation left the ε-ball".into() });
        }
        self.iteration = i;
        self.trace.push(row);

        let cfg = &self.config;
        if cfg.early_exit && !cfg.robust && cfg.gamma.complete(i, cfg.iterations) && row.accuracy == 1.0 {
            let q = AudioClip::from_clamped(self.stego_samples(), self.cover.sample_rate())?.quantized();
            if bit_accuracy(&self.decoder.decode(q.samples())?, &self.message)? == 1.0 {
                self.stopped = true;
            }
        }
        self.seconds += timer.seconds();
        Ok(Some(row))
    }

    /// Steps until iteration `i` (or the end of the run).
    pub fn run_to(&mut self, i: usize) -> Result<()> {
        while self.iteration < i && self.step()?.is_some() {}
        Ok(())
    }

    pub fn run(mut self) -> Result<EmbedResult> {
        while self.step()?.is_some() {}
        self.finish()
    }

    pub fn finish(self) -> Result<EmbedResult> {
        let sr = self.cover.sample_rate();
        let stego = AudioClip::from_clamped(self.stego_samples(), sr)?;
        let q = stego.quantized();
        let accuracy = recovery_accuracy(&self.message, &self.decoder.extract(q.samples())?)?;
        let float_accuracy = recovery_accuracy(&self.message, &self.decoder.extract(stego.samples())?)?;
        Ok(EmbedResult {
            stego,
            delta: self.delta(),
            trace: self.trace,
            accuracy,
            float_accuracy,
            iterations: self.iteration,
            early_exit: self.stopped,
            wall_time_s: self.seconds,
        })
    }
}

/// Runs a full embedding.
pub fn embed(
    cover: &AudioClip,
    message: &Message,
    decoder: &DecoderModel,
    detectors: &[DetectorModel],
    config: &EmbedConfig,
    seed: u64,
) -> Result<EmbedResult> {
    Embedder::new(cover, message, decoder, detectors, config, seed)?.run()
}
