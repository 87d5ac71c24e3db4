//! PSNR, bit recovery accuracy and evaluation reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::hex_string;
use crate::message::Message;
use crate::{Error, Result};

pub const PSNR_CAP_DB: f64 = 200.0;
const MSE_FLOOR: f64 = 1e-20;
/// Placeholder for the perceptual quality column, which is not computed.
pub const PEAQ_UNAVAILABLE: &str = "unavailable";

/// `10·log10(1/MSE)` with peak amplitude 1, capped at 200 dB.
pub fn psnr(cover: &[f32], stego: &[f32]) -> Result<f64> {
    if cover.len() != stego.len() || cover.is_empty() {
        return Err(Error::shape("psnr", format!("lengths {} and {}", cover.len(), stego.len())));
    }
    let mse = cover.iter().zip(stego).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / cover.len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Percentage of matching bits.
pub fn recovery_accuracy(sent: &Message, received: &Message) -> Result<f64> {
    if sent.len() != received.len() {
        return Err(Error::shape("recovery_accuracy", format!("lengths {} and {}", sent.len(), received.len())));
    }
    let same = sent.bits().iter().zip(received.bits()).filter(|(a, b)| a == b).count();
    Ok(100.0 * same as f64 / sent.len() as f64)
}

/// SHA-256 of the canonical JSON encoding of `config`.
pub fn config_digest<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex_string(&Sha256::digest(bytes))
}

/// One evaluated clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub clip_id: String,
    pub payload_bps: f64,
    pub psnr_db: f64,
    pub clean_accuracy: f64,
    /// Accuracy (%) per attack label.
    pub attack_accuracy: BTreeMap<String, f64>,
    /// Stego probability per detector name.
    pub detector_scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorRole {
    InLoop,
    HeldOut,
}

/// Corpus-level detector result; detectors are locally trained surrogates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSummary {
    pub name: String,
    pub provenance: String,
    pub role: DetectorRole,
    /// Stego corpus the error rate was measured on.
    pub corpus: String,
    pub p_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub payload_bps: f64,
    pub column: String,
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<AggregateCell>,
    pub config_digest: String,
    pub detectors: Vec<DetectorSummary>,
    pub peaq: String,
    pub attack_note: String,
}

fn columns(rows: &[ReportRow]) -> (Vec<String>, Vec<String>) {
    let first = &rows[0];
    (first.attack_accuracy.keys().cloned().collect(), first.detector_scores.keys().cloned().collect())
}

fn row_values(r: &ReportRow) -> Vec<(String, f64)> {
    let mut v = vec![("psnr_db".to_string(), r.psnr_db), ("clean_accuracy".to_string(), r.clean_accuracy)];
    v.extend(r.attack_accuracy.iter().map(|(k, &x)| (format!("acc_{k}"), x)));
    v.extend(r.detector_scores.iter().map(|(k, &x)| (format!("score_{k}"), x)));
    v
}

/// Aggregates rows per (payload, column) cell. All rows must carry the same
/// attack and detector columns.
pub fn build_report(rows: Vec<ReportRow>, config_digest: String, detectors: Vec<DetectorSummary>) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("report needs at least one row".into()));
    }
    let (attacks, dets) = columns(&rows);
    for r in &rows {
        let (a, d) = columns(std::slice::from_ref(r));
        if a != attacks || d != dets {
            return Err(Error::InvalidArgument(format!("row {} has different columns", r.clip_id)));
        }
    }
    let mut payloads: Vec<f64> = rows.iter().map(|r| r.payload_bps).collect();
    payloads.sort_by(|a, b| a.partial_cmp(b).unwrap());
    payloads.dedup();
    let mut aggregates = Vec::new();
    for p in payloads {
        let group: Vec<&ReportRow> = rows.iter().filter(|r| r.payload_bps == p).collect();
        let names: Vec<String> = row_values(group[0]).into_iter().map(|(n, _)| n).collect();
        for (ci, name) in names.into_iter().enumerate() {
            // sequential sum keeps the mean reproducible bit-for-bit
            let sum: f64 = group.iter().map(|r| row_values(r)[ci].1).sum();
            aggregates.push(AggregateCell { payload_bps: p, column: name, mean: sum / group.len() as f64, count: group.len() });
        }
    }
    Ok(EvalReport {
        rows,
        aggregates,
        config_digest,
        detectors,
        peaq: PEAQ_UNAVAILABLE.into(),
        attack_note: "attacks are this toolkit's differentiable simulations, not real codecs".into(),
    })
}

impl EvalReport {
    /// Per-clip table; floats use the shortest round-trip representation.
    pub fn rows_csv(&self) -> Result<String> {
        let (attacks, dets) = columns(&self.rows);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["clip_id".to_string(), "payload_bps".into(), "psnr_db".into(), "peaq".into(), "clean_accuracy".into()];
        header.extend(attacks.iter().map(|a| format!("acc_{a}")));
        header.extend(dets.iter().map(|d| format!("score_{d}")));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.clip_id.clone(),
                r.payload_bps.to_string(),
                r.psnr_db.to_string(),
                self.peaq.clone(),
                r.clean_accuracy.to_string(),
            ];
            rec.extend(r.attack_accuracy.values().map(|v| v.to_string()));
            rec.extend(r.detector_scores.values().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        finish_csv(w)
    }

    /// Mean per (payload, column), plus `pe_in_loop` / `pe_held_out` rows
    /// for each detector, keyed by corpus in place of the payload.
    pub fn aggregates_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["payload_bps", "column", "mean", "count"]).map_err(csv_err)?;
        for a in &self.aggregates {
            w.write_record([a.payload_bps.to_string(), a.column.clone(), a.mean.to_string(), a.count.to_string()])
                .map_err(csv_err)?;
        }
        for d in &self.detectors {
            let col = match d.role {
                DetectorRole::InLoop => format!("pe_in_loop_{}", d.name),
                DetectorRole::HeldOut => format!("pe_held_out_{}", d.name),
            };
            w.write_record([d.corpus.clone(), col, d.p_e.to_string(), self.rows.len().to_string()]).map_err(csv_err)?;
        }
        finish_csv(w)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn mean(&self, payload_bps: f64, column: &str) -> Option<f64> {
        self.aggregates.iter().find(|a| a.payload_bps == payload_bps && a.column == column).map(|a| a.mean)
    }
}

/// Parses [`EvalReport::rows_csv`] output back into rows.
pub fn parse_rows_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("report value {s:?}: {e}")));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let mut row = ReportRow {
            clip_id: rec[0].to_string(),
            payload_bps: num(&rec[1])?,
            psnr_db: num(&rec[2])?,
            clean_accuracy: num(&rec[4])?,
            attack_accuracy: BTreeMap::new(),
            detector_scores: BTreeMap::new(),
        };
        for (h, v) in header.iter().zip(rec.iter()).skip(5) {
            if let Some(a) = h.strip_prefix("acc_") {
                row.attack_accuracy.insert(a.to_string(), num(v)?);
            } else if let Some(d) = h.strip_prefix("score_") {
                row.detector_scores.insert(d.to_string(), num(v)?);
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, psnr: f64, acc: f64) -> ReportRow {
        ReportRow {
            clip_id: id.into(),
            payload_bps: 0.1,
            psnr_db: psnr,
            clean_accuracy: acc,
            attack_accuracy: [("mp3_128k".to_string(), acc - 10.0), ("none".to_string(), acc)].into(),
            detector_scores: [("a".to_string(), 0.3)].into(),
        }
    }

    #[test]
    fn psnr_cases() {
        let a = vec![0.25f32; 100];
        assert_eq!(psnr(&a, &a).unwrap(), 200.0);
        assert!((psnr_from_mse(1e-10) - 100.0).abs() < 1e-9);
        assert!((psnr_from_mse(4e-10) - 93.979_400_086_720_38).abs() < 1e-9);
        assert!(psnr(&a, &a[..10]).is_err());
        let b: Vec<f32> = a.iter().map(|v| v + 1e-3).collect();
        let c: Vec<f32> = a.iter().map(|v| v + 2e-3).collect();
        assert!(psnr(&a, &b).unwrap() > psnr(&a, &c).unwrap());
    }

    #[test]
    fn accuracy_cases() {
        let m = Message::from_bits(vec![1, 0, 1, 1]).unwrap();
        let inv = Message::from_bits(vec![0, 1, 0, 0]).unwrap();
        let half = Message::from_bits(vec![0, 1, 1, 1]).unwrap();
        assert_eq!(recovery_accuracy(&m, &m).unwrap(), 100.0);
        assert_eq!(recovery_accuracy(&m, &inv).unwrap(), 0.0);
        assert_eq!(recovery_accuracy(&m, &half).unwrap(), 50.0);
        assert_eq!(recovery_accuracy(&half, &m).unwrap(), 50.0);
        assert!(recovery_accuracy(&m, &Message::from_bits(vec![1]).unwrap()).is_err());
    }

    #[test]
    fn aggregates() {
        let one = build_report(vec![row("x", 100.0, 90.0)], "d".into(), vec![]).unwrap();
        assert_eq!(one.mean(0.1, "psnr_db"), Some(100.0));
        assert_eq!(one.mean(0.1, "acc_mp3_128k"), Some(80.0));
        let two = build_report(vec![row("x", 100.0, 90.0), row("y", 110.0, 70.0)], "d".into(), vec![]).unwrap();
        assert_eq!(two.mean(0.1, "psnr_db"), Some(105.0));
        assert!(build_report(vec![], "d".into(), vec![]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row("clip,1", 101.123456789, 55.5), row("b", 93.1, 61.25)];
        let rep = build_report(rows.clone(), "d".into(), vec![]).unwrap();
        let csv = rep.rows_csv().unwrap();
        assert!(csv.starts_with("clip_id,payload_bps,psnr_db,peaq,clean_accuracy,acc_mp3_128k,acc_none,score_a\n"));
        let back = parse_rows_csv(&csv).unwrap();
        assert_eq!(back, rows);
        let again = build_report(back, "d".into(), vec![]).unwrap();
        assert_eq!(again.aggregates, rep.aggregates);
    }

    #[test]
    fn digest_tracks_config() {
        let a = crate::embed::EmbedConfig::default();
        let b = crate::embed::EmbedConfig { beta: 0.6, ..a.clone() };
        assert_eq!(config_digest(&a), config_digest(&a.clone()));
        assert_ne!(config_digest(&a), config_digest(&b));
    }

    #[test]
    fn detector_columns() {
        let d = vec![
            DetectorSummary { name: "a".into(), provenance: "surrogate".into(), role: DetectorRole::InLoop, corpus: "main".into(), p_e: 0.4 },
            DetectorSummary { name: "b".into(), provenance: "surrogate".into(), role: DetectorRole::HeldOut, corpus: "main".into(), p_e: 0.45 },
        ];
        let rep = build_report(vec![row("x", 100.0, 90.0)], "d".into(), d).unwrap();
        let agg = rep.aggregates_csv().unwrap();
        assert!(agg.contains("main,pe_in_loop_a,0.4,1"));
        assert!(agg.contains("main,pe_held_out_b,0.45,1"));
    }
}
