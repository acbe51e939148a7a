//! Metric logs: one JSON object per line, tagged by `"kind"`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamCount;
use crate::tasks::train::{StepRecord, TrainLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub task: String,
    pub seed: u64,
    pub steps: usize,
    pub psnr: Option<f64>,
    pub giou: Option<f64>,
    pub param_projection: usize,
    pub param_coefficient: usize,
    pub param_basis: usize,
    pub param_count: usize,
    pub total_ms: f64,
    /// Task-specific extras such as held-out or masked-region PSNR.
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

impl FinalRecord {
    pub fn new(task: impl Into<String>, seed: u64, steps: usize, count: ParamCount, total_ms: f64) -> Self {
        Self {
            task: task.into(),
            seed,
            steps,
            psnr: None,
            giou: None,
            param_projection: count.projection,
            param_coefficient: count.coefficient,
            param_basis: count.basis,
            param_count: count.total,
            total_ms,
            extra: BTreeMap::new(),
        }
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        let mut s = format!("{} seed={} steps={}", self.task, self.seed, self.steps);
        if let Some(p) = self.psnr {
            s += &format!(" psnr={p:.3}");
        }
        if let Some(g) = self.giou {
            s += &format!(" giou={g:.5}");
        }
        for (k, v) in &self.extra {
            s += &format!(" {k}={v:.4}");
        }
        s += &format!(" params={} time={:.1}s", self.param_count, self.total_ms / 1000.0);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Step { step: usize, loss: f64, ms: f64 },
    Final(FinalRecord),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub records: Vec<Record>,
}

impl MetricReport {
    pub fn from_log(log: &TrainLog, fin: FinalRecord) -> Self {
        let mut records: Vec<Record> = log
            .records
            .iter()
            .map(|&StepRecord { step, loss, ms }| Record::Step { step, loss, ms })
            .collect();
        records.push(Record::Final(fin));
        Self { records }
    }

    pub fn final_record(&self) -> Option<&FinalRecord> {
        self.records.iter().rev().find_map(|r| match r {
            Record::Final(f) => Some(f),
            _ => None,
        })
    }

    /// Step numbers must increase strictly.
    pub fn validate(&self) -> Result<()> {
        let mut last = None;
        for r in &self.records {
            if let Record::Step { step, .. } = r {
                if last.is_some_and(|l| *step <= l) {
                    return Err(Error::InvalidArgument(format!("metric step {step} is not increasing")));
                }
                last = Some(*step);
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        let mut offset = 0u64;
        for line in r.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                let rec = serde_json::from_str(&line)
                    .map_err(|e| Error::format("metric log", offset + e.column() as u64, e.to_string()))?;
                records.push(rec);
            }
            offset += line.len() as u64 + 1;
        }
        let report = Self { records };
        report.validate()?;
        Ok(report)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        super::write_file(path.as_ref(), &buf)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read(super::read_file(path.as_ref())?.as_slice())
    }
}
