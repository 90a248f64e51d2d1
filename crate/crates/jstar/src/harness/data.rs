//! Dataset records and line-delimited JSON storage.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::FeatureSequence;
use crate::numcore::Tensor;
use crate::sot::{serialize, SotSequence, TimedWord};

use super::HarnessError;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Flattened `[t, d]` frame matrix; floats serialize as decimal text and
/// round-trip bit-exactly through serde_json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frames {
    pub t: usize,
    pub d: usize,
    pub frame_ms: u32,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub split: Split,
    /// Acoustic-style features; absent for character-input records.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub frames: Option<Frames>,
    /// Source character stream; absent for feature records.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source_chars: Option<String>,
    /// Source words with speaker and times.
    pub words: Vec<TimedWord>,
    /// Translated words (times inherited through the word alignment). For
    /// translation records the stored order is the target sentence order.
    pub translation_words: Vec<TimedWord>,
}

impl DatasetRecord {
    pub fn features(&self) -> Result<FeatureSequence> {
        let f = self
            .frames
            .as_ref()
            .ok_or_else(|| HarnessError::Data(format!("record {} has no frames", self.id)))?;
        Ok(FeatureSequence::new(
            Tensor::new(vec![f.t, f.d], f.data.clone())
                .map_err(|e| HarnessError::Data(e.to_string()))?,
            f.frame_ms,
        )
        .map_err(|e| HarnessError::Data(e.to_string()))?)
    }

    /// Recognition-side SOT stream.
    pub fn asr_sot(&self) -> SotSequence {
        serialize(&self.words)
    }

    /// Translation-side SOT stream (chronological by inherited end times).
    pub fn st_sot(&self) -> SotSequence {
        serialize(&self.translation_words)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&DatasetRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let r = BufReader::new(File::open(&path)?);
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: DatasetRecord = serde_json::from_str(&line).map_err(|e| {
                HarnessError::Data(format!(
                    "{}:{}: {e}",
                    path.as_ref().display(),
                    i + 1
                ))
            })?;
            records.push(record);
        }
        Ok(Dataset { records })
    }
}
