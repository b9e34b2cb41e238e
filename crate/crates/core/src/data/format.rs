//! TSDS binary dataset files and CSV export.
//!
//! Layout (little-endian): magic `TSDS`, version `u32`, `N C L classes` as
//! `u32`, one flags byte (bit 0: subject ids present), labels `i32 x N`,
//! optional subjects `i32 x N`, samples `f64 x N*C*L`, then a `u32`-length
//! prefixed UTF-8 metadata block of `key=value` lines.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Dataset;
use crate::error::{FormatError, Result};

pub const TSDS_MAGIC: [u8; 4] = *b"TSDS";
pub const TSDS_VERSION: u32 = 1;

const FLAG_SUBJECTS: u8 = 1;
const HEADER_LEN: usize = 4 + 4 + 16 + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub samples: usize,
    pub channels: usize,
    pub length: usize,
    pub classes: usize,
    pub has_subjects: bool,
}

impl DatasetHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("four bytes");
        if magic != TSDS_MAGIC {
            return Err(FormatError::BadMagic { expected: TSDS_MAGIC, found: magic });
        }
        let version = r.u32("version")?;
        if version != TSDS_VERSION {
            return Err(FormatError::Version { expected: TSDS_VERSION, found: version });
        }
        let samples = r.u32("sample count")? as usize;
        let channels = r.u32("channel count")? as usize;
        let length = r.u32("length")? as usize;
        let classes = r.u32("class count")? as usize;
        let flags = r.take(1, "flags")?[0];
        if flags & !FLAG_SUBJECTS != 0 {
            return Err(FormatError::Malformed(format!("unknown flag bits {flags:#04x}")));
        }
        Ok(Self { version, samples, channels, length, classes, has_subjects: flags & FLAG_SUBJECTS != 0 })
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&TSDS_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        for v in [self.samples, self.channels, self.length, self.classes] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(if self.has_subjects { FLAG_SUBJECTS } else { 0 });
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated(what))?;
        if end > self.buf.len() {
            return Err(FormatError::Truncated(what));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }

    fn i32s(&mut self, n: usize, what: &'static str) -> Result<Vec<i32>, FormatError> {
        let bytes = self.take(n.checked_mul(4).ok_or(FormatError::Truncated(what))?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().expect("four bytes"))).collect())
    }

    fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(8).ok_or(FormatError::Truncated(what))?, what)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect())
    }
}

/// Reads only the fixed-size header of a TSDS file.
pub fn read_header(path: impl AsRef<Path>) -> Result<DatasetHeader> {
    use std::io::Read;
    let f = fs::File::open(path)?;
    let mut buf = Vec::with_capacity(HEADER_LEN);
    f.take(HEADER_LEN as u64).read_to_end(&mut buf)?;
    Ok(DatasetHeader::parse(&buf)?)
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let header = DatasetHeader {
        version: TSDS_VERSION,
        samples: ds.len(),
        channels: ds.channels,
        length: ds.length,
        classes: ds.classes,
        has_subjects: ds.subjects.is_some(),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + ds.len() * 8 + ds.values().len() * 8 + 64);
    header.encode(&mut out);
    for &l in &ds.labels {
        out.extend_from_slice(&(l as i32).to_le_bytes());
    }
    if let Some(subjects) = &ds.subjects {
        for &s in subjects {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    for &v in ds.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let meta = format!("name={}\nchannels={}\n", ds.name, ds.channel_names.join(","));
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let h = DatasetHeader::parse(bytes)?;
    let mut r = Reader { buf: bytes, pos: HEADER_LEN };
    let labels = r.i32s(h.samples, "labels")?;
    let subjects = if h.has_subjects { Some(r.i32s(h.samples, "subject ids")?) } else { None };
    let n_values = h
        .samples
        .checked_mul(h.channels)
        .and_then(|v| v.checked_mul(h.length))
        .ok_or(FormatError::Malformed("sample dimensions overflow".into()))?;
    let values = r.f64s(n_values, "samples")?;
    let meta_len = r.u32("metadata length")? as usize;
    let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
        .map_err(|e| FormatError::Malformed(format!("metadata is not UTF-8: {e}")))?;
    if r.pos != bytes.len() {
        return Err(FormatError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)).into());
    }

    let mut name = String::new();
    let mut channel_names = None;
    for line in meta.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FormatError::Malformed(format!("metadata line without '=': {line}")))?;
        match k {
            "name" => name = v.to_string(),
            "channels" => channel_names = Some(v.split(',').map(str::to_string).collect::<Vec<_>>()),
            _ => {}
        }
    }
    let labels = labels
        .into_iter()
        .map(|l| usize::try_from(l).map_err(|_| FormatError::Malformed(format!("negative label {l}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut ds = Dataset::new(name, values, labels, subjects, h.channels, h.length, h.classes)?;
    if let Some(names) = channel_names {
        if names.len() != h.channels {
            return Err(FormatError::Malformed(format!(
                "{} channel names for {} channels",
                names.len(),
                h.channels
            ))
            .into());
        }
        ds.channel_names = names;
    }
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dataset(ds))?;
    Ok(())
}

/// Parses the whole file before constructing anything, so a failure never
/// yields a partial dataset.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

/// One row per sample: `id,label,subject,values...` with values channel-major.
pub fn export_csv(ds: &Dataset, out: &mut impl Write) -> Result<()> {
    write!(out, "id,label,subject")?;
    for c in &ds.channel_names {
        for t in 0..ds.length {
            write!(out, ",{c}_{t}")?;
        }
    }
    writeln!(out)?;
    for i in 0..ds.len() {
        let subject = ds.subjects.as_ref().map(|s| s[i].to_string()).unwrap_or_default();
        write!(out, "{i},{},{subject}", ds.labels[i])?;
        for v in ds.sample(i) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
