//! Metrics records and the JSON-lines stream.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Image,
    Video,
}

/// One row of the metrics stream, emitted at every eval interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub stage: Stage,
    pub loss_total: f64,
    pub loss_ce_image: f64,
    pub loss_ce_frame: f64,
    pub loss_domain_image_target: f64,
    pub loss_domain_video_target: f64,
    pub loss_domain_image_video: f64,
    /// Top-1 accuracy on the labeled target eval split.
    pub target_accuracy: f64,
    /// Discriminator accuracy per pair (I, V, B) on this step's batches.
    pub disc_accuracy: [f64; 3],
    /// Mean entropy of the attention weight vectors at this step.
    pub attention_entropy: f64,
}

pub struct MetricsWriter {
    file: std::fs::File,
    records: Vec<MetricsRecord>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> crate::Result<Self> {
        Ok(MetricsWriter {
            file: std::fs::File::create(path)?,
            records: Vec::new(),
        })
    }

    pub fn append(&mut self, record: MetricsRecord) -> crate::Result<()> {
        let line = serde_json::to_string(&record)?;
        writeln!(self.file, "{line}")?;
        self.records.push(record);
        Ok(())
    }

    pub fn finish(mut self) -> crate::Result<Vec<MetricsRecord>> {
        self.file.flush()?;
        Ok(self.records)
    }
}

/// Reads a metrics stream back.
pub fn read_metrics(path: &Path) -> crate::Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line)?);
    }
    Ok(out)
}
