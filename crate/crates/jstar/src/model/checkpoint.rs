//! Named-tensor checkpoint file and scoped parameter initialization.
//!
//! On disk: a UTF-8 header of `name dtype shape offset` lines (shape as
//! comma-separated extents, offset a byte position into the payload), one
//! blank line, then the raw little-endian f32 payload. Round trips are
//! bit-exact.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::numcore::Tensor;

use super::{Model, ModelError, Result};

pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl Checkpoint {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        let index = entries.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        Checkpoint { entries, index }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut offset = 0usize;
        for (name, tensor) in &self.entries {
            let shape = tensor
                .shape()
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",");
            writeln!(w, "{name} f32 {shape} {offset}")?;
            offset += tensor.numel() * 4;
        }
        writeln!(w)?;
        for (_, tensor) in &self.entries {
            for &v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let split = find_header_end(&bytes)
            .ok_or_else(|| ModelError::CheckpointFormat("no blank line after header".into()))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|_| ModelError::CheckpointFormat("header is not UTF-8".into()))?;
        let payload = &bytes[split + 1..];

        let mut entries = Vec::new();
        for line in header.lines() {
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() != 4 {
                return Err(ModelError::CheckpointFormat(format!("bad header line '{line}'")));
            }
            let (name, dtype, shape, offset) = (fields[0], fields[1], fields[2], fields[3]);
            if dtype != "f32" {
                return Err(ModelError::CheckpointFormat(format!("unsupported dtype '{dtype}'")));
            }
            let shape: Vec<usize> = shape
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| ModelError::CheckpointFormat(format!("bad shape in '{line}'")))?;
            let offset: usize = offset
                .parse()
                .map_err(|_| ModelError::CheckpointFormat(format!("bad offset in '{line}'")))?;
            let numel: usize = shape.iter().product();
            let end = offset + numel * 4;
            if end > payload.len() {
                return Err(ModelError::CheckpointFormat(format!(
                    "payload too short for '{name}': needs {end} bytes, has {}",
                    payload.len()
                )));
            }
            let data: Vec<f32> = payload[offset..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            entries.push((name.to_string(), Tensor::new(shape, data)?));
        }
        Ok(Checkpoint::from_entries(entries))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    bytes.windows(2).position(|w| w == b"\n\n").map(|p| p + 1)
}

/// Which pre-trained parameter groups to copy into a fresh model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScope {
    /// Front projection, fast encoder, recognition predictor + joiner.
    Fast,
    /// Slow encoder, translation predictor + joiner.
    Slow,
    FastSlow,
}

impl InitScope {
    pub fn prefixes(self) -> &'static [&'static str] {
        const FAST: &[&str] = &["front.", "fast.", "asr_pred.", "asr_join."];
        const SLOW: &[&str] = &["slow.", "st_pred.", "st_join."];
        const BOTH: &[&str] =
            &["front.", "fast.", "asr_pred.", "asr_join.", "slow.", "st_pred.", "st_join."];
        match self {
            InitScope::Fast => FAST,
            InitScope::Slow => SLOW,
            InitScope::FastSlow => BOTH,
        }
    }
}

impl FromStr for InitScope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fast" => Ok(InitScope::Fast),
            "slow" => Ok(InitScope::Slow),
            "fast+slow" => Ok(InitScope::FastSlow),
            other => Err(format!("unknown init scope '{other}' (use fast, slow, fast+slow)")),
        }
    }
}

impl std::fmt::Display for InitScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitScope::Fast => "fast",
            InitScope::Slow => "slow",
            InitScope::FastSlow => "fast+slow",
        })
    }
}

impl Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_entries(
            self.params.entries().map(|(_, e)| (e.name.clone(), e.value.clone())).collect(),
        )
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    /// Restore every parameter; the checkpoint must cover the full model
    /// with matching shapes.
    pub fn restore_all(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let names: Vec<String> =
            self.params.entries().map(|(_, e)| e.name.clone()).collect();
        for name in names {
            self.copy_param(ckpt, &name)?;
        }
        Ok(())
    }

    /// Copy the checkpoint's parameters for the given scope; everything
    /// outside the scope keeps its fresh initialization. Fails on the first
    /// missing key or shape mismatch, naming the offending parameter.
    pub fn init_from_checkpoint(&mut self, ckpt: &Checkpoint, scope: InitScope) -> Result<()> {
        let names: Vec<String> = self
            .params
            .entries()
            .map(|(_, e)| e.name.clone())
            .filter(|n| scope.prefixes().iter().any(|p| n.starts_with(p)))
            .collect();
        for name in names {
            self.copy_param(ckpt, &name)?;
        }
        Ok(())
    }

    fn copy_param(&mut self, ckpt: &Checkpoint, name: &str) -> Result<()> {
        let src = ckpt.get(name).ok_or_else(|| ModelError::MissingKey(name.to_string()))?;
        let id = self.params.id(name).expect("own parameter name");
        let dst = self.params.value_mut(id);
        if dst.shape() != src.shape() {
            return Err(ModelError::ParamShape {
                name: name.to_string(),
                expected: dst.shape().to_vec(),
                got: src.shape().to_vec(),
            });
        }
        dst.data_mut().copy_from_slice(src.data());
        Ok(())
    }
}
