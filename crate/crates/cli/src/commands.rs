use std::collections::BTreeMap;
use std::fs;
use std::hash::{BuildHasher, Hasher};
use std::path::{Path, PathBuf};

use advsteg_core::attacks::attack_clip;
use advsteg_core::decoder::{init_decoder, DecoderKey, DecoderModel, KeyFile};
use advsteg_core::detectors::{init_detector, p_e, train_detector, DetectorModel, Variant};
use advsteg_core::embed::{embed as run_embed, GammaSchedule};
use advsteg_core::message::{message_len, Message};
use advsteg_core::metrics::{
    build_report, config_digest, psnr, recovery_accuracy, DetectorRole, DetectorSummary, ReportRow,
};
use advsteg_core::rng::SplitMix64;
use advsteg_core::wavio::{fit_length, write_wav, AudioClip};
use anyhow::{bail, Context as _, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{parse_attack, RunConfig};
use crate::files::{read_input, read_inputs, sidecar, wav_paths, Input, Manifest, Outputs};
use crate::{AttackArgs, EmbedArgs, EvaluateArgs, ExtractArgs, KeygenArgs, TrainArgs};

pub struct Context {
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Context {
    fn config(&self) -> Result<RunConfig> {
        RunConfig::load(self.config_path.as_deref())
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

fn os_entropy_seed() -> u64 {
    // RandomState keys come from the OS generator
    let mut h = std::collections::hash_map::RandomState::new().build_hasher();
    h.write_u64(std::process::id() as u64);
    h.finish()
}

fn load_key(path: &Path) -> Result<(Vec<u8>, DecoderModel)> {
    let bytes = fs::read(path).with_context(|| format!("reading key {}", path.display()))?;
    let text = String::from_utf8(bytes.clone()).context("key file is not UTF-8")?;
    let model = KeyFile::from_json(&text)
        .and_then(|k| k.model())
        .with_context(|| format!("bad key file {}", path.display()))?;
    Ok((bytes, model))
}

struct LoadedDetector {
    name: String,
    path: PathBuf,
    bytes: Vec<u8>,
    model: DetectorModel,
}

fn load_detector(path: &Path) -> Result<LoadedDetector> {
    let bytes = fs::read(path).with_context(|| format!("reading detector {}", path.display()))?;
    let model = DetectorModel::from_bytes(&bytes).with_context(|| format!("bad detector {}", path.display()))?;
    let name = crate::files::clip_id(path);
    Ok(LoadedDetector { name, path: path.to_path_buf(), bytes, model })
}

fn provenance(d: &DetectorModel) -> String {
    format!("local surrogate, variant {:?}, seed {}, {} epochs", d.variant(), d.seed(), d.epochs())
}

fn fit(clip: AudioClip, cfg: &RunConfig) -> Result<AudioClip> {
    Ok(match cfg.fit_length {
        Some(n) => fit_length(&clip, n)?,
        None => clip,
    })
}

pub fn keygen(ctx: &Context, a: KeygenArgs) -> Result<()> {
    let cfg = ctx.config()?;
    let seed = a.key_seed.or(ctx.seed).unwrap_or_else(os_entropy_seed);
    let key = DecoderKey::new(seed);
    let model = init_decoder(key, cfg.decoder.clone())?;
    let digest = model.digest();
    let file = KeyFile::new(key, cfg.decoder.clone());
    let mut out = Outputs::default();
    out.add(a.out.clone(), file.to_json().into_bytes());
    let mut m = Manifest::new("keygen", Some(seed), config_digest(&cfg));
    m.outputs = out.digests();
    m.details = json!({ "key_seed": key.to_hex(), "weight_digest": digest });
    out.add_json(sidecar(&a.out, ".manifest.json"), &m);
    out.commit()?;
    println!("key {}", key.to_hex());
    println!("digest {digest}");
    Ok(())
}

/// Per-clip result written next to each stego WAV.
#[derive(Debug, Serialize, Deserialize)]
pub struct ClipResult {
    pub clip_id: String,
    pub sample_rate: u32,
    pub samples: usize,
    pub message_len: usize,
    pub payload_bps: f64,
    pub message_hex: String,
    pub message_seed: Option<u64>,
    pub embed_seed: u64,
    /// Bit accuracy (%) after PCM16 quantization.
    pub accuracy: f64,
    pub float_accuracy: f64,
    pub psnr_db: f64,
    pub iterations: usize,
    pub early_exit: bool,
    pub wall_time_s: f64,
}

pub fn embed(ctx: &Context, a: EmbedArgs) -> Result<()> {
    let mut cfg = ctx.config()?;
    if let Some(b) = a.payload_bps {
        cfg.payload_bps = b;
    }
    if a.message_hex.is_some() {
        cfg.message_hex = a.message_hex.clone();
    }
    if let Some(n) = a.iterations {
        cfg.embed.iterations = n;
    }
    if let Some(e) = a.epsilon {
        cfg.embed.epsilon = e;
    }
    if a.robust {
        cfg.embed.robust = true;
    }
    cfg.detectors.extend(a.detectors.iter().cloned());
    if cfg.detectors.is_empty() {
        cfg.embed.gamma = GammaSchedule::off();
    }
    let seed = ctx.seed();

    let (key_bytes, decoder) = load_key(&a.key)?;
    let detectors = cfg.detectors.iter().map(|p| load_detector(p)).collect::<Result<Vec<_>>>()?;
    let det_models: Vec<DetectorModel> = detectors.iter().map(|d| d.model.clone()).collect();
    let inputs = read_inputs(&wav_paths(&a.covers)?)?;
    let covers = inputs
        .iter()
        .map(|i| fit(i.clip.clone(), &cfg).with_context(|| format!("clip {}", i.id)))
        .collect::<Result<Vec<_>>>()?;

    let results: Vec<(ClipResult, Vec<u8>, String)> = covers
        .par_iter()
        .enumerate()
        .map(|(i, cover)| {
            let id = &inputs[i].id;
            let run = || -> Result<_> {
                let mut rng = SplitMix64::derive(seed, i as u64);
                let message_seed = rng.next_u64();
                let embed_seed = rng.next_u64();
                let k = message_len(cfg.payload_bps, cover.len())?;
                let (message, message_seed) = match &cfg.message_hex {
                    Some(h) => (Message::from_hex(h, k)?, None),
                    None => (Message::random(k, message_seed)?, Some(message_seed)),
                };
                let r = run_embed(cover, &message, &decoder, &det_models, &cfg.embed, embed_seed)?;
                let stego = r.stego.quantized();
                let result = ClipResult {
                    clip_id: id.clone(),
                    sample_rate: cover.sample_rate(),
                    samples: cover.len(),
                    message_len: k,
                    payload_bps: k as f64 / cover.len() as f64,
                    message_hex: message.to_hex(),
                    message_seed,
                    embed_seed,
                    accuracy: r.accuracy,
                    float_accuracy: r.float_accuracy,
                    psnr_db: psnr(cover.samples(), stego.samples())?,
                    iterations: r.iterations,
                    early_exit: r.early_exit,
                    wall_time_s: r.wall_time_s,
                };
                Ok((result, write_wav(&stego), r.trace_csv()))
            };
            run().with_context(|| format!("clip {id}"))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Outputs::default();
    let mut m = Manifest::new("embed", Some(seed), config_digest(&cfg));
    m.input(&a.key, &key_bytes);
    for d in &detectors {
        m.input(&d.path, &d.bytes);
    }
    for i in &inputs {
        m.input(&i.path, &i.bytes);
    }
    let mut clips = Vec::new();
    for (r, wav, trace) in results {
        out.add(a.out_dir.join(format!("{}.wav", r.clip_id)), wav);
        out.add(a.out_dir.join(format!("{}.trace.csv", r.clip_id)), trace.into_bytes());
        out.add_json(a.out_dir.join(format!("{}.result.json", r.clip_id)), &r);
        println!(
            "{}: K={} accuracy {:.2}% psnr {:.2} dB iterations {}",
            r.clip_id, r.message_len, r.accuracy, r.psnr_db, r.iterations
        );
        clips.push(json!({ "clip_id": r.clip_id, "message_seed": r.message_seed, "embed_seed": r.embed_seed }));
    }
    m.outputs = out.digests();
    m.details = json!({ "weight_digest": decoder.digest(), "clips": clips, "config": cfg });
    out.add_json(a.out_dir.join("manifest.json"), &m);
    out.commit()?;
    Ok(())
}

pub fn extract(ctx: &Context, a: ExtractArgs) -> Result<()> {
    let cfg = ctx.config()?;
    let (key_bytes, decoder) = load_key(&a.key)?;
    let input = read_input(&a.stego)?;
    let h = input.clip.len();
    let k = match (a.message_len, a.payload_bps) {
        (Some(k), _) => k,
        (None, Some(b)) => message_len(b, h)?,
        (None, None) => message_len(cfg.payload_bps, h)?,
    };
    if k == 0 || k > h {
        bail!("message length {k} must be between 1 and the clip length {h}");
    }
    let model = decoder.with_message_len(k)?;
    let probs = model.decode(input.clip.samples())?;
    let message = model.extract(input.clip.samples())?;
    let accuracy = match &a.expect {
        Some(hex) => Some(recovery_accuracy(&Message::from_hex(hex, k)?, &message)?),
        None => None,
    };
    println!("{}", message.to_hex());
    if let Some(acc) = accuracy {
        println!("accuracy {acc}");
    }
    if let Some(path) = a.out {
        let mut out = Outputs::default();
        out.add_json(
            path.clone(),
            &json!({
                "clip_id": input.id,
                "message_len": k,
                "message_hex": message.to_hex(),
                "accuracy": accuracy,
                "probabilities": probs,
            }),
        );
        let mut m = Manifest::new("extract", None, config_digest(&cfg));
        m.input(&a.key, &key_bytes);
        m.input(&input.path, &input.bytes);
        m.outputs = out.digests();
        m.details = json!({ "weight_digest": decoder.digest() });
        out.add_json(sidecar(&path, ".manifest.json"), &m);
        out.commit()?;
    }
    Ok(())
}

pub fn attack(ctx: &Context, a: AttackArgs) -> Result<()> {
    let cfg = ctx.config()?;
    let spec = parse_attack(&a.spec)?;
    let input = read_input(&a.input)?;
    spec.validate(input.clip.sample_rate(), &cfg.embed.attack_settings)?;
    let seed = ctx.seed();
    let bytes = if spec.is_none() {
        input.bytes.clone()
    } else {
        let attacked = attack_clip(&input.clip, &spec, &cfg.embed.attack_settings, seed)
            .with_context(|| format!("clip {}", input.id))?;
        write_wav(&attacked)
    };
    let mut out = Outputs::default();
    out.add(a.out.clone(), bytes);
    let mut m = Manifest::new("attack", Some(seed), config_digest(&cfg));
    m.input(&input.path, &input.bytes);
    m.outputs = out.digests();
    m.details = json!({ "attack": spec, "label": spec.label() });
    out.add_json(sidecar(&a.out, ".manifest.json"), &m);
    out.commit()?;
    println!("{} -> {}", spec.label(), a.out.display());
    Ok(())
}

/// Pairs `covers/<id>.wav` with `stegos/<id>.wav`.
fn paired(covers_dir: &Path, stegos_dir: &Path) -> Result<(Vec<Input>, Vec<Input>)> {
    let covers = wav_paths(&[covers_dir.to_path_buf()])?;
    let stegos = wav_paths(&[stegos_dir.to_path_buf()])?;
    if covers.is_empty() || stegos.is_empty() {
        bail!("no WAV files in {} or {}", covers_dir.display(), stegos_dir.display());
    }
    let ids = |v: &[PathBuf]| v.iter().map(|p| crate::files::clip_id(p)).collect::<Vec<_>>();
    let (ci, si) = (ids(&covers), ids(&stegos));
    let unpaired: Vec<&String> =
        ci.iter().filter(|c| !si.contains(c)).chain(si.iter().filter(|s| !ci.contains(s))).collect();
    if !unpaired.is_empty() {
        bail!("unpaired clips: {}", unpaired.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "));
    }
    Ok((read_inputs(&covers)?, read_inputs(&stegos)?))
}

pub fn train(ctx: &Context, a: TrainArgs) -> Result<()> {
    let mut cfg = ctx.config()?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    let variant: Variant = a.variant.parse()?;
    let seed = ctx.seed();
    cfg.train.seed = SplitMix64::derive(seed, 1).next_u64();
    let (covers, stegos) = paired(&a.covers, &a.stegos)?;
    let fit_all = |v: &[Input]| v.iter().map(|i| fit(i.clip.clone(), &cfg)).collect::<Result<Vec<_>>>();
    let (cc, sc) = (fit_all(&covers)?, fit_all(&stegos)?);
    let model = init_detector(SplitMix64::derive(seed, 0).next_u64(), variant)?;
    let (model, report) = train_detector(model, &cc, &sc, &cfg.train)?;
    let log = a.log.clone().unwrap_or_else(|| sidecar(&a.out, ".log.csv"));
    let mut out = Outputs::default();
    out.add(a.out.clone(), model.to_bytes());
    out.add(log, report.to_csv().into_bytes());
    let mut m = Manifest::new("train-detector", Some(seed), config_digest(&cfg));
    for i in covers.iter().chain(&stegos) {
        m.input(&i.path, &i.bytes);
    }
    m.outputs = out.digests();
    m.details = json!({
        "variant": format!("{variant:?}"),
        "init_seed": model.seed(),
        "train": cfg.train,
        "final_accuracy": report.final_accuracy,
    });
    out.add_json(sidecar(&a.out, ".manifest.json"), &m);
    out.commit()?;
    println!("variant {variant:?}: training accuracy {:.2}%", 100.0 * report.final_accuracy);
    Ok(())
}

struct StegoEntry {
    input: Input,
    result: ClipResult,
}

fn read_corpus(dir: &Path, missing: &mut Vec<String>) -> Result<Vec<(PathBuf, PathBuf)>> {
    if !dir.is_dir() {
        missing.push(format!("directory {}", dir.display()));
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for p in wav_paths(&[dir.to_path_buf()])? {
        let json = dir.join(format!("{}.result.json", crate::files::clip_id(&p)));
        if !json.is_file() {
            missing.push(json.display().to_string());
        }
        out.push((p, json));
    }
    if out.is_empty() {
        missing.push(format!("stego WAVs in {}", dir.display()));
    }
    Ok(out)
}

fn load_entries(pairs: &[(PathBuf, PathBuf)]) -> Result<Vec<StegoEntry>> {
    pairs
        .iter()
        .map(|(wav, json)| {
            let input = read_input(wav)?;
            let text = fs::read_to_string(json).with_context(|| format!("reading {}", json.display()))?;
            let result: ClipResult =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", json.display()))?;
            Ok(StegoEntry { input, result })
        })
        .collect()
}

pub fn evaluate(ctx: &Context, a: EvaluateArgs) -> Result<()> {
    let mut cfg = ctx.config()?;
    if !a.attacks.is_empty() {
        cfg.attacks = a.attacks.iter().map(|s| parse_attack(s)).collect::<Result<_>>()?;
    }
    let seed = ctx.seed();

    // every missing input is reported before any work starts
    let mut missing = Vec::new();
    for p in [&a.key].into_iter().chain(&a.in_loop).chain(&a.held_out) {
        if !p.is_file() {
            missing.push(p.display().to_string());
        }
    }
    let main_pairs = read_corpus(&a.stegos, &mut missing)?;
    let ablation_pairs = match &a.ablation_stegos {
        Some(d) => read_corpus(d, &mut missing)?,
        None => Vec::new(),
    };
    let cover_path = |wav: &PathBuf| a.covers.join(wav.file_name().unwrap());
    for (wav, _) in main_pairs.iter().chain(&ablation_pairs) {
        let c = cover_path(wav);
        if !c.is_file() {
            missing.push(c.display().to_string());
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        bail!("missing inputs:\n  {}", missing.join("\n  "));
    }

    let (key_bytes, decoder) = load_key(&a.key)?;
    let mut detectors = Vec::new();
    for p in &a.in_loop {
        detectors.push((load_detector(p)?, DetectorRole::InLoop));
    }
    for p in &a.held_out {
        detectors.push((load_detector(p)?, DetectorRole::HeldOut));
    }
    let mut names = std::collections::BTreeSet::new();
    for (d, _) in &detectors {
        if !names.insert(d.name.clone()) {
            bail!("two detectors are named {}", d.name);
        }
    }
    let main = load_entries(&main_pairs)?;
    let ablation = load_entries(&ablation_pairs)?;
    let load_cover = |e: &StegoEntry| -> Result<(Input, AudioClip)> {
        let input = read_input(&cover_path(&e.input.path))?;
        let clip = fit(input.clip.clone(), &cfg)?;
        Ok((input, clip))
    };
    let main_covers = main.iter().map(load_cover).collect::<Result<Vec<_>>>()?;
    let ablation_covers = ablation.iter().map(load_cover).collect::<Result<Vec<_>>>()?;
    for s in &cfg.attacks {
        s.validate(main[0].input.clip.sample_rate(), &cfg.embed.attack_settings)?;
    }

    let rows: Vec<ReportRow> = main
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let id = &e.input.id;
            let run = || -> Result<ReportRow> {
                let cover = &main_covers[i].1;
                let stego = &e.input.clip;
                let k = e.result.message_len;
                let sent = Message::from_hex(&e.result.message_hex, k)?;
                let model = decoder.with_message_len(k)?;
                let clean = recovery_accuracy(&sent, &model.extract(stego.samples())?)?;
                let mut attack_accuracy = BTreeMap::new();
                for (j, spec) in cfg.attacks.iter().enumerate() {
                    let s = SplitMix64::derive(seed, (i as u64) << 16 | j as u64).next_u64();
                    let attacked = attack_clip(stego, spec, &cfg.embed.attack_settings, s)?;
                    let acc = recovery_accuracy(&sent, &model.extract(attacked.samples())?)?;
                    attack_accuracy.insert(spec.label(), acc);
                }
                let mut detector_scores = BTreeMap::new();
                for (d, _) in &detectors {
                    detector_scores.insert(d.name.clone(), d.model.detect(stego.samples())? as f64);
                }
                Ok(ReportRow {
                    clip_id: id.clone(),
                    payload_bps: k as f64 / stego.len() as f64,
                    psnr_db: psnr(cover.samples(), stego.samples())?,
                    clean_accuracy: clean,
                    attack_accuracy,
                    detector_scores,
                })
            };
            run().with_context(|| format!("clip {id}"))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summaries = Vec::new();
    let corpora = [("main", &main, &main_covers), ("ablation", &ablation, &ablation_covers)];
    for (label, entries, covers) in corpora {
        if entries.is_empty() {
            continue;
        }
        let stegos: Vec<AudioClip> = entries.iter().map(|e| e.input.clip.clone()).collect();
        let cover_clips: Vec<AudioClip> = covers.iter().map(|c| c.1.clone()).collect();
        for (d, role) in &detectors {
            summaries.push(DetectorSummary {
                name: d.name.clone(),
                provenance: provenance(&d.model),
                role: *role,
                corpus: label.into(),
                p_e: 100.0 * p_e(&d.model, &cover_clips, &stegos)?,
            });
        }
    }

    let report = build_report(rows, config_digest(&cfg), summaries)?;
    let mut out = Outputs::default();
    out.add(a.out_dir.join("rows.csv"), report.rows_csv()?.into_bytes());
    out.add(a.out_dir.join("aggregates.csv"), report.aggregates_csv()?.into_bytes());
    out.add(a.out_dir.join("report.json"), report.to_json().into_bytes());
    let mut m = Manifest::new("evaluate", Some(seed), report.config_digest.clone());
    m.input(&a.key, &key_bytes);
    for (d, _) in &detectors {
        m.input(&d.path, &d.bytes);
    }
    for e in main.iter().chain(&ablation) {
        m.input(&e.input.path, &e.input.bytes);
    }
    for (c, _) in main_covers.iter().chain(&ablation_covers) {
        m.input(&c.path, &c.bytes);
    }
    m.outputs = out.digests();
    m.details = json!({ "weight_digest": decoder.digest(), "config": cfg });
    out.add_json(a.out_dir.join("manifest.json"), &m);
    out.commit()?;
    for c in &report.aggregates {
        println!("{} {}: {:.3}", c.payload_bps, c.column, c.mean);
    }
    for d in &report.detectors {
        println!("{} {:?} {}: P_E {:.2}%", d.corpus, d.role, d.name, d.p_e);
    }
    Ok(())
}
