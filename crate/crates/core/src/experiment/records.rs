//! `records.csv` and `summary.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const RECORDS_HEADER: &str = "condition,seed,stage,episode,edge_from,edge_to,probability";
pub const SUMMARY_HEADER: &str = "condition,stage,edge_from,edge_to,threshold,seeds,reached,\
episodes_to_threshold_mean,episodes_to_threshold_std,mean_curve_crossing";

/// Probability of one learnable edge at the start of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub condition: String,
    pub seed: u64,
    pub stage: u8,
    pub episode: usize,
    pub edge_from: String,
    pub edge_to: String,
    pub probability: f64,
}

impl RunRecord {
    fn sort_key(&self) -> (&str, u64, u8, usize, &str, &str) {
        (
            &self.condition,
            self.seed,
            self.stage,
            self.episode,
            &self.edge_from,
            &self.edge_to,
        )
    }
}

/// Canonical order: condition, seed, stage, episode, edge.
pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

pub fn format_records(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(48 * (records.len() + 1));
    out.push_str(RECORDS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.6}",
            r.condition, r.seed, r.stage, r.episode, r.edge_from, r.edge_to, r.probability
        );
    }
    out
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    std::fs::write(path, format_records(records)).map_err(|e| Error::io(path, e))
}

pub fn parse_records(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == RECORDS_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Records {
                line: 1,
                message: format!("expected header {RECORDS_HEADER:?}, got {h:?}"),
            })
        }
        None => {
            return Err(Error::Records {
                line: 1,
                message: "missing header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let line_no = n + 1;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Records { line: line_no, message };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(bad(format!("expected 7 fields, got {}", fields.len())));
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("invalid {name} {:?}", fields[i])))
        };
        let probability = num(6, "probability")?;
        if !(0.0..=1.0).contains(&probability) {
            return Err(bad(format!("probability {probability} outside [0,1]")));
        }
        out.push(RunRecord {
            condition: fields[0].to_string(),
            seed: fields[1]
                .parse()
                .map_err(|_| bad(format!("invalid seed {:?}", fields[1])))?,
            stage: fields[2]
                .parse()
                .map_err(|_| bad(format!("invalid stage {:?}", fields[2])))?,
            episode: fields[3]
                .parse()
                .map_err(|_| bad(format!("invalid episode {:?}", fields[3])))?,
            edge_from: fields[4].to_string(),
            edge_to: fields[5].to_string(),
            probability,
        });
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text)
}

/// Episodes-to-threshold statistics for one edge under one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSummary {
    pub condition: String,
    pub stage: u8,
    pub edge_from: String,
    pub edge_to: String,
    pub threshold: f64,
    pub seeds: usize,
    /// Seeds whose probability exceeded the threshold within the recorded episodes.
    pub reached: usize,
    /// Per seed: first episode with probability `> threshold`, or the episode
    /// count when never reached.
    pub episodes_to_threshold: Vec<usize>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// First episode at which the across-seed mean exceeds the threshold.
    pub mean_curve_crossing: Option<usize>,
}

/// Mean curve over seeds for one edge: `(episode, mean, population std)` per condition.
pub fn edge_curves(
    records: &[RunRecord],
    stage: u8,
    edge_from: &str,
    edge_to: &str,
) -> BTreeMap<String, Vec<(usize, f64, f64)>> {
    let mut grouped: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.stage == stage && r.edge_from == edge_from && r.edge_to == edge_to)
    {
        grouped
            .entry(r.condition.clone())
            .or_default()
            .entry(r.episode)
            .or_default()
            .push(r.probability);
    }
    grouped
        .into_iter()
        .map(|(cond, eps)| {
            let curve = eps
                .into_iter()
                .map(|(e, vals)| {
                    let (m, s) = mean_std(&vals);
                    (e, m, s)
                })
                .collect();
            (cond, curve)
        })
        .collect()
}

pub fn mean_std(vals: &[f64]) -> (f64, f64) {
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize(
    records: &[RunRecord],
    stage: u8,
    edge_from: &str,
    edge_to: &str,
    threshold: f64,
) -> Result<Vec<ConditionSummary>> {
    // condition -> seed -> episode -> probability
    let mut by_seed: BTreeMap<&str, BTreeMap<u64, BTreeMap<usize, f64>>> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.stage == stage && r.edge_from == edge_from && r.edge_to == edge_to)
    {
        by_seed
            .entry(&r.condition)
            .or_default()
            .entry(r.seed)
            .or_default()
            .insert(r.episode, r.probability);
    }
    if by_seed.is_empty() {
        let mut edges: Vec<String> = records
            .iter()
            .filter(|r| r.stage == stage)
            .map(|r| format!("{}:{}", r.edge_from, r.edge_to))
            .collect();
        edges.sort();
        edges.dedup();
        return Err(Error::Records {
            line: 0,
            message: format!(
                "no stage-{stage} records for edge {edge_from}:{edge_to}; available: {}",
                edges.join(" ")
            ),
        });
    }
    let curves = edge_curves(records, stage, edge_from, edge_to);
    let mut out = Vec::new();
    for (cond, seeds) in by_seed {
        let mut hits = Vec::with_capacity(seeds.len());
        let mut reached = 0;
        for eps in seeds.values() {
            let horizon = eps.keys().max().map_or(0, |m| m + 1);
            match eps.iter().find(|(_, &p)| p > threshold) {
                Some((&e, _)) => {
                    reached += 1;
                    hits.push(e);
                }
                None => hits.push(horizon),
            }
        }
        let as_f: Vec<f64> = hits.iter().map(|&h| h as f64).collect();
        let (mean, std) = mean_std(&as_f);
        let mean_curve_crossing = curves[cond].iter().find(|(_, m, _)| *m > threshold).map(|(e, _, _)| *e);
        out.push(ConditionSummary {
            condition: cond.to_string(),
            stage,
            edge_from: edge_from.to_string(),
            edge_to: edge_to.to_string(),
            threshold,
            seeds: seeds.len(),
            reached,
            episodes_to_threshold: hits,
            mean,
            std,
            mean_curve_crossing,
        });
    }
    Ok(out)
}

pub fn format_summary(rows: &[ConditionSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:.3},{:.3},{}",
            r.condition,
            r.stage,
            r.edge_from,
            r.edge_to,
            r.threshold,
            r.seeds,
            r.reached,
            r.mean,
            r.std,
            r.mean_curve_crossing.map_or(String::new(), |e| e.to_string())
        );
    }
    out
}
