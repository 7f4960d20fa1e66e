use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{LxlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Growth stage for autoencoder runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<usize>,
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balanced_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction_loss: Option<f64>,
    /// Discriminator BCE.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial_loss: Option<f64>,
    /// Encoder loss against the discriminator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fade_alpha: Option<f64>,
}

impl EpochRecord {
    pub fn new(epoch: usize) -> Self {
        EpochRecord {
            stage: None,
            epoch,
            classifier_loss: None,
            balanced_accuracy: None,
            reconstruction_loss: None,
            adversarial_loss: None,
            generator_loss: None,
            fade_alpha: None,
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> {
        [
            self.classifier_loss,
            self.balanced_accuracy,
            self.reconstruction_loss,
            self.adversarial_loss,
            self.generator_loss,
            self.fade_alpha,
        ]
        .into_iter()
        .flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub extent: usize,
    pub epochs: usize,
    pub latent_dim: usize,
    pub discriminator_width: usize,
    pub per_class_rmse: BTreeMap<String, f64>,
    pub diversity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportLine {
    Epoch(EpochRecord),
    Stage(StageRecord),
    Warning { message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<String>,
}

impl TrainReport {
    pub fn final_epoch(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// Finite entries, and epochs ordered within each stage.
    pub fn validate(&self) -> Result<()> {
        for e in &self.epochs {
            if e.values().any(|v| !v.is_finite()) {
                return Err(LxlError::NonFinite(format!("report epoch {}", e.epoch)));
            }
        }
        for w in self.epochs.windows(2) {
            let ordered = (w[0].stage, w[0].epoch) < (w[1].stage, w[1].epoch);
            if !ordered {
                return Err(LxlError::Validation("report epochs out of order".into()));
            }
        }
        Ok(())
    }

    /// One JSON object per line: every epoch in order, each stage summary after its epochs,
    /// then warnings.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for line in self.lines() {
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    fn lines(&self) -> Vec<ReportLine> {
        let mut out = Vec::new();
        let mut stages = self.stages.iter().peekable();
        for (i, e) in self.epochs.iter().enumerate() {
            out.push(ReportLine::Epoch(e.clone()));
            let stage_ends = self.epochs.get(i + 1).map(|n| n.stage) != Some(e.stage);
            if stage_ends && e.stage.is_some() {
                if let Some(s) = stages.next_if(|s| Some(s.stage) == e.stage) {
                    out.push(ReportLine::Stage(s.clone()));
                }
            }
        }
        out.extend(stages.cloned().map(ReportLine::Stage));
        out.extend(self.warnings.iter().map(|m| ReportLine::Warning { message: m.clone() }));
        out
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ReportLine>(&line)? {
                ReportLine::Epoch(e) => report.epochs.push(e),
                ReportLine::Stage(s) => report.stages.push(s),
                ReportLine::Warning { message } => report.warnings.push(message),
            }
        }
        Ok(report)
    }
}
