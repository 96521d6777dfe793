use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, ScoredExample, TokenSequence, MAX_TOKENS};
use crate::{Error, Result};

/// Value of the header's `format` field.
pub const FORMAT_TAG: &str = "qaff-v1";

/// First line of a `qaff-v1` file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterchangeHeader {
    pub format: String,
    pub dim: usize,
    pub channels: Vec<String>,
}

impl InterchangeHeader {
    pub fn new(dim: usize, channels: Vec<String>) -> Self {
        Self {
            format: FORMAT_TAG.to_string(),
            dim,
            channels,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    tokens: Vec<String>,
    scores: BTreeMap<String, f64>,
    hidden_b64: String,
}

/// Streaming reader over the records of a `qaff-v1` file. Any malformed
/// record ends the stream with a parse error naming its line.
pub struct InterchangeReader<R> {
    header: InterchangeHeader,
    lines: std::io::Lines<R>,
    line: usize,
    failed: bool,
}

impl<R: BufRead> InterchangeReader<R> {
    pub fn new(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let first = lines.next().ok_or_else(|| Error::parse(1, "missing header line"))??;
        let header: InterchangeHeader =
            serde_json::from_str(&first).map_err(|e| Error::parse(1, format!("invalid header: {e}")))?;
        if header.format != FORMAT_TAG {
            return Err(Error::parse(1, format!("unsupported format {:?}", header.format)));
        }
        if header.dim == 0 {
            return Err(Error::parse(1, "header dim must be positive"));
        }
        Ok(Self {
            header,
            lines,
            line: 1,
            failed: false,
        })
    }

    pub fn header(&self) -> &InterchangeHeader {
        &self.header
    }

    fn parse_record(&self, text: &str) -> Result<ScoredExample> {
        let line = self.line;
        let rec: Record = serde_json::from_str(text).map_err(|e| Error::parse(line, e.to_string()))?;
        let n = rec.tokens.len();
        let seq = TokenSequence::new(rec.tokens, n.max(MAX_TOKENS)).map_err(|e| Error::parse(line, e.to_string()))?;
        let bytes = B64
            .decode(rec.hidden_b64.as_bytes())
            .map_err(|e| Error::parse(line, format!("invalid base64: {e}")))?;
        let expected = n * self.header.dim;
        if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
            return Err(Error::parse(
                line,
                format!(
                    "hidden states hold {} bytes, expected {n} tokens × dim {} × 4",
                    bytes.len(),
                    self.header.dim
                ),
            ));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse(
                line,
                format!("non-finite hidden value at row {}, column {}", i / self.header.dim, i % self.header.dim),
            ));
        }
        let mut expected_channels = self.header.channels.clone();
        expected_channels.sort();
        if !rec.scores.keys().eq(expected_channels.iter()) {
            return Err(Error::parse(
                line,
                format!("score channels {:?} differ from header {:?}", rec.scores.keys().collect::<Vec<_>>(), self.header.channels),
            ));
        }
        let features = FeatureMatrix::new(n, self.header.dim, data)?;
        ScoredExample::new(seq, features, rec.scores).map_err(|e| Error::parse(line, e.to_string()))
    }
}

impl<R: BufRead> Iterator for InterchangeReader<R> {
    type Item = Result<ScoredExample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let text = match self.lines.next()? {
            Ok(t) => t,
            Err(e) => {
                self.failed = true;
                return Some(Err(e.into()));
            }
        };
        self.line += 1;
        let result = self.parse_record(&text);
        self.failed = result.is_err();
        Some(result)
    }
}

/// Opens a `qaff-v1` file and parses its header.
pub fn read_interchange(path: impl AsRef<Path>) -> Result<InterchangeReader<BufReader<File>>> {
    InterchangeReader::new(BufReader::new(File::open(path)?))
}

/// Writes `examples` to `path`, checking each against the header.
pub fn write_interchange(header: &InterchangeHeader, examples: &[ScoredExample], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_interchange_to(header, examples, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_interchange_to<W: Write>(header: &InterchangeHeader, examples: &[ScoredExample], mut w: W) -> Result<()> {
    if header.format != FORMAT_TAG {
        return Err(Error::Config(format!("unsupported format {:?}", header.format)));
    }
    serde_json::to_writer(&mut w, header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    let mut channels = header.channels.clone();
    channels.sort();
    for (i, ex) in examples.iter().enumerate() {
        if ex.features.dim() != header.dim {
            return Err(Error::DimMismatch {
                expected: header.dim,
                found: ex.features.dim(),
            });
        }
        if !ex.scores.keys().eq(channels.iter()) {
            return Err(Error::Domain(format!("example {i} has channels that differ from the header")));
        }
        if ex.features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("example {i} has non-finite features")));
        }
        let mut bytes = Vec::with_capacity(ex.features.as_slice().len() * 4);
        for v in ex.features.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let rec = Record {
            tokens: ex.tokens().to_vec(),
            scores: ex.scores.clone(),
            hidden_b64: B64.encode(bytes),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
