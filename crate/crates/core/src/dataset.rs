//! Binary dataset files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "CFIS" | u32 version=1 | u32 M | u32 U | u32 Q | u32 N_t | u64 count
//! per sample:
//!   h      M*U*N_t x (f32 re, f32 im), m-major then u then antenna
//!   theta  M x f32
//!   zeta2  M*M x f32, row-major, transmit AP as the row
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::system::ChannelSample;

pub const MAGIC: &[u8; 4] = b"CFIS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 5 + 8;

/// The scenario dimensions recorded in a dataset header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub ap_count: usize,
    pub ue_count: usize,
    pub sensing_streams: usize,
    pub tx_antennas: usize,
}

impl DatasetHeader {
    pub fn from_config(config: &SystemConfig) -> Self {
        DatasetHeader {
            ap_count: config.ap_count,
            ue_count: config.ue_count,
            sensing_streams: config.sensing_streams,
            tx_antennas: config.tx_antennas,
        }
    }

    fn sample_bytes(&self) -> usize {
        let m = self.ap_count;
        8 * m * self.ue_count * self.tx_antennas + 4 * m + 4 * m * m
    }

    /// Fails with the name of the first field that disagrees with `config`.
    pub fn check_against(&self, config: &SystemConfig) -> Result<()> {
        let pairs = [
            ("M", self.ap_count, config.ap_count),
            ("U", self.ue_count, config.ue_count),
            ("Q", self.sensing_streams, config.sensing_streams),
            ("N_t", self.tx_antennas, config.tx_antennas),
        ];
        for (name, file, cfg) in pairs {
            if file != cfg {
                return Err(Error::format(
                    name,
                    format!("dataset has {name}={file} but configuration has {name}={cfg}"),
                ));
            }
        }
        Ok(())
    }
}

pub fn encode_dataset(config: &SystemConfig, samples: &[ChannelSample]) -> Result<Vec<u8>> {
    let header = DatasetHeader::from_config(config);
    for (i, s) in samples.iter().enumerate() {
        s.check_dims(config)
            .map_err(|e| Error::DimensionMismatch(format!("sample {i}: {e}")))?;
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + samples.len() * header.sample_bytes());
    buf.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        header.ap_count as u32,
        header.ue_count as u32,
        header.sensing_streams as u32,
        header.tx_antennas as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        for z in s.h_flat() {
            buf.extend_from_slice(&(z.re as f32).to_le_bytes());
            buf.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
        for t in s.theta() {
            buf.extend_from_slice(&(*t as f32).to_le_bytes());
        }
        for z in s.zeta2_flat() {
            buf.extend_from_slice(&(*z as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as f64)
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<(DatasetHeader, Vec<ChannelSample>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format("magic", "expected \"CFIS\""));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            "version",
            format!("unsupported version {version}"),
        ));
    }
    let mut dim = |name: &'static str, min: u32| -> Result<usize> {
        let v = r.u32(name)?;
        if v < min {
            return Err(Error::format(
                name,
                format!("value {v} below minimum {min}"),
            ));
        }
        Ok(v as usize)
    };
    let ap_count = dim("M", 1)?;
    let ue_count = dim("U", 1)?;
    let sensing_streams = dim("Q", 0)?;
    if sensing_streams > 1 {
        return Err(Error::format(
            "Q",
            format!("value {sensing_streams} above 1"),
        ));
    }
    let tx_antennas = dim("N_t", 1)?;
    let header = DatasetHeader {
        ap_count,
        ue_count,
        sensing_streams,
        tx_antennas,
    };
    let count = u64::from_le_bytes(r.take(8, "sample_count")?.try_into().unwrap()) as usize;
    let remaining = bytes.len() - r.pos;
    let expected = count
        .checked_mul(header.sample_bytes())
        .ok_or_else(|| Error::format("sample_count", "overflows"))?;
    if remaining < expected {
        return Err(Error::Corrupt(format!(
            "header declares {count} samples ({expected} bytes) but only {remaining} bytes follow"
        )));
    }
    if remaining > expected {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after {count} samples",
            remaining - expected
        )));
    }
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let h = (0..ap_count * ue_count * tx_antennas)
            .map(|_| Ok(Complex64::new(r.f32("h")?, r.f32("h")?)))
            .collect::<Result<Vec<_>>>()?;
        let theta = (0..ap_count)
            .map(|_| r.f32("theta"))
            .collect::<Result<Vec<_>>>()?;
        let zeta2 = (0..ap_count * ap_count)
            .map(|_| r.f32("zeta2"))
            .collect::<Result<Vec<_>>>()?;
        let s = ChannelSample::new(ap_count, ue_count, tx_antennas, h, theta, zeta2)
            .map_err(|e| Error::format(format!("sample[{i}]"), e.to_string()))?;
        samples.push(s);
    }
    Ok((header, samples))
}

pub fn write_dataset(
    path: impl AsRef<Path>,
    config: &SystemConfig,
    samples: &[ChannelSample],
) -> Result<()> {
    let bytes = encode_dataset(config, samples)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    file.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<ChannelSample>)> {
    decode_dataset(&fs::read(path)?)
}
