use std::io::Write;

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::study::{ReplicateRecord, StudyOptions};
use crate::error::Result;

/// Two-sided 95% standard normal quantile.
pub const Z_975: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ZZC")]
    Zzc,
    Proposed,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Zzc => "ZZC",
            Method::Proposed => "Proposed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub p_c: f64,
    pub q_c: f64,
    pub method: Method,
    pub rho: f64,
    pub parameter: String,
    pub bias: f64,
    pub ssd: f64,
    pub ese: f64,
    pub cp: f64,
    /// `SSD(ZZC)^2 / SSD(Proposed)^2`; absent on ZZC rows.
    pub re: Option<f64>,
    pub replicates_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub sigma_e: f64,
    pub rho: f64,
    pub replicates_used: usize,
    pub replicates_failed: usize,
    /// Bootstrap draws dropped over all used replicates.
    pub bootstrap_failures: usize,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub levels: Vec<LevelSummary>,
    pub rows: Vec<ReportRow>,
    /// Per noise level, the records of the replicates that were used.
    pub records: Vec<Vec<ReplicateRecord>>,
}

impl ScenarioReport {
    pub fn row(&self, method: Method, level: usize, parameter: &str) -> Option<&ReportRow> {
        let rho = self.levels.get(level)?.rho;
        self.rows.iter().find(|r| r.method == method && r.rho == rho && r.parameter == parameter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub options: StudyOptions,
    pub scenarios: Vec<ScenarioReport>,
    /// Excluded from the CSV so that tables are byte-reproducible.
    pub wall_time_secs: f64,
}

pub const CSV_HEADER: [&str; 11] =
    ["p_c", "q_c", "method", "rho", "parameter", "bias", "ssd", "ese", "cp", "re", "replicates_used"];

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

impl ReplicationReport {
    pub fn rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.scenarios.iter().flat_map(|s| s.rows.iter())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for r in self.rows() {
            w.write_record([
                format!("{}", r.p_c),
                format!("{}", r.q_c),
                r.method.label().to_string(),
                format!("{:.3}", r.rho),
                r.parameter.clone(),
                fmt(r.bias),
                fmt(r.ssd),
                fmt(r.ese),
                fmt(r.cp),
                r.re.map(fmt).unwrap_or_default(),
                r.replicates_used.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

struct Metrics {
    bias: f64,
    ssd: f64,
    ese: f64,
    cp: f64,
}

fn metrics(estimates: &[f64], ses: &[f64], truth: f64) -> Metrics {
    let covered = estimates
        .iter()
        .zip(ses)
        .filter(|(e, s)| (*e - truth).abs() <= Z_975 * **s)
        .count();
    Metrics {
        bias: mean(estimates) - truth,
        ssd: sample_sd(estimates),
        ese: mean(ses),
        cp: covered as f64 / estimates.len() as f64,
    }
}

pub(crate) fn summarize(scenario: &Scenario, opts: &StudyOptions, outcomes: &[Vec<Option<ReplicateRecord>>]) -> ScenarioReport {
    let truth = scenario.truth();
    let names = scenario.parameter_names();
    let mut levels = Vec::new();
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (level, (sigma_e, rho)) in scenario.sigma_e.values().into_iter().zip(scenario.rhos()).enumerate() {
        let used: Vec<ReplicateRecord> = outcomes.iter().filter_map(|o| o[level].clone()).collect();
        levels.push(LevelSummary {
            sigma_e,
            rho,
            replicates_used: used.len(),
            replicates_failed: outcomes.len() - used.len(),
            bootstrap_failures: used.iter().map(|r| opts.bootstrap - r.bootstrap_used).sum(),
            fallbacks: used.iter().filter(|r| r.fallback).count(),
        });
        for (k, name) in names.iter().enumerate() {
            let pick = |f: fn(&ReplicateRecord) -> &Vec<f64>| used.iter().map(|r| f(r)[k]).collect::<Vec<f64>>();
            let zzc = metrics(&pick(|r| &r.zzc), &pick(|r| &r.zzc_se), truth[k]);
            let prop = metrics(&pick(|r| &r.proposed), &pick(|r| &r.proposed_se), truth[k]);
            let re = (zzc.ssd / prop.ssd).powi(2);
            for (method, m, re) in [(Method::Zzc, zzc, None), (Method::Proposed, prop, Some(re))] {
                rows.push(ReportRow {
                    p_c: scenario.p_c,
                    q_c: scenario.q_c,
                    method,
                    rho,
                    parameter: name.clone(),
                    bias: m.bias,
                    ssd: m.ssd,
                    ese: m.ese,
                    cp: m.cp,
                    re,
                    replicates_used: used.len(),
                });
            }
        }
        records.push(used);
    }
    ScenarioReport { scenario: scenario.clone(), levels, rows, records }
}
