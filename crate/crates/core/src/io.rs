//! Binary record container.
//!
//! Layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `QTRK` |
//! | 2     | version (1) |
//! | 1     | payload kind |
//! | 1     | channels |
//! | 8     | dt, seconds (f64) |
//! | 8     | samples per channel n (u64) |
//! | 8     | seed (u64) |
//! | 8     | realization (u64) |
//! | 8     | params hash (u64) |
//! | 8     | aux (f64): Ω_m for carrier records, else 0 |
//!
//! followed by n·channels f64 values, channel-interleaved.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::filters::{EstimateKind, StateTrajectory};
use crate::riccati::{Direction, Schedule};
use crate::simulate::{CarrierRecord, MeasurementRecord};

const MAGIC: &[u8; 4] = b"QTRK";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 56;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum PayloadKind {
    Baseband = 0,
    Carrier = 1,
    Predicted = 2,
    Retrodicted = 3,
}

impl PayloadKind {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => Self::Baseband,
            1 => Self::Carrier,
            2 => Self::Predicted,
            3 => Self::Retrodicted,
            _ => return None,
        })
    }

    fn channels(self) -> u8 {
        match self {
            Self::Baseband => 2,
            Self::Carrier => 1,
            // rX, rY, variance, gain, conditioned
            Self::Predicted | Self::Retrodicted => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub kind: PayloadKind,
    pub dt: f64,
    pub n: u64,
    pub seed: u64,
    pub realization: u64,
    pub params_hash: u64,
    pub aux: f64,
}

fn encode(header: &Header, data: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + header.n as usize * header.kind.channels() as usize * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(header.kind as u8);
    out.push(header.kind.channels());
    out.extend_from_slice(&header.dt.to_le_bytes());
    out.extend_from_slice(&header.n.to_le_bytes());
    out.extend_from_slice(&header.seed.to_le_bytes());
    out.extend_from_slice(&header.realization.to_le_bytes());
    out.extend_from_slice(&header.params_hash.to_le_bytes());
    out.extend_from_slice(&header.aux.to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn word(bytes: &[u8], at: usize) -> [u8; 8] {
    bytes[at..at + 8].try_into().expect("8-byte slice")
}

/// Parses a container, returning its header and flat sample data.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(Header, Vec<f64>)> {
    let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("missing QTRK magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let kind = PayloadKind::from_byte(bytes[6]).ok_or_else(|| bad(format!("unknown payload kind {}", bytes[6])))?;
    let channels = bytes[7];
    if channels != kind.channels() {
        return Err(bad(format!("{kind:?} payload with {channels} channels")));
    }
    let header = Header {
        kind,
        dt: f64::from_le_bytes(word(bytes, 8)),
        n: u64::from_le_bytes(word(bytes, 16)),
        seed: u64::from_le_bytes(word(bytes, 24)),
        realization: u64::from_le_bytes(word(bytes, 32)),
        params_hash: u64::from_le_bytes(word(bytes, 40)),
        aux: f64::from_le_bytes(word(bytes, 48)),
    };
    if !(header.dt > 0.0 && header.dt.is_finite()) {
        return Err(bad(format!("bad sample interval {}", header.dt)));
    }
    let expected = (header.n as usize)
        .checked_mul(channels as usize * 8)
        .and_then(|b| b.checked_add(HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(bad(format!(
            "header announces {} samples × {channels} channels but the file holds {} bytes",
            header.n,
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, data))
}

fn read_kind(path: &Path, want: &[PayloadKind]) -> Result<(Header, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let (header, data) = decode(&bytes, path)?;
    if !want.contains(&header.kind) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected {want:?}, found {:?}", header.kind),
        });
    }
    Ok((header, data))
}

pub fn record_bytes(record: &MeasurementRecord) -> Vec<u8> {
    let header = Header {
        kind: PayloadKind::Baseband,
        dt: record.dt,
        n: record.len() as u64,
        seed: record.seed,
        realization: record.realization,
        params_hash: record.params_hash,
        aux: 0.0,
    };
    encode(&header, record.i.iter().flatten().copied())
}

pub fn write_record(path: &Path, record: &MeasurementRecord) -> Result<()> {
    Ok(fs::write(path, record_bytes(record))?)
}

pub fn read_record(path: &Path) -> Result<MeasurementRecord> {
    let (h, data) = read_kind(path, &[PayloadKind::Baseband])?;
    Ok(MeasurementRecord {
        dt: h.dt,
        i: data.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        seed: h.seed,
        realization: h.realization,
        params_hash: h.params_hash,
    })
}

pub fn write_carrier(path: &Path, carrier: &CarrierRecord) -> Result<()> {
    let header = Header {
        kind: PayloadKind::Carrier,
        dt: carrier.dt(),
        n: carrier.len() as u64,
        seed: carrier.seed,
        realization: carrier.realization,
        params_hash: carrier.params_hash,
        aux: carrier.omega_m,
    };
    Ok(fs::write(path, encode(&header, carrier.samples.iter().copied()))?)
}

pub fn read_carrier(path: &Path) -> Result<CarrierRecord> {
    let (h, samples) = read_kind(path, &[PayloadKind::Carrier])?;
    Ok(CarrierRecord {
        fs: 1.0 / h.dt,
        omega_m: h.aux,
        samples,
        seed: h.seed,
        realization: h.realization,
        params_hash: h.params_hash,
    })
}

/// `seed`, `realization` and `params_hash` are copied from the record the
/// trajectory was computed from.
pub fn write_trajectory(path: &Path, traj: &StateTrajectory, source: &MeasurementRecord) -> Result<()> {
    let kind = match traj.kind {
        EstimateKind::Predicted => PayloadKind::Predicted,
        EstimateKind::Retrodicted => PayloadKind::Retrodicted,
    };
    let header = Header {
        kind,
        dt: traj.dt,
        n: traj.len() as u64,
        seed: source.seed,
        realization: source.realization,
        params_hash: source.params_hash,
        aux: 0.0,
    };
    let s = &traj.schedule;
    let data = (0..traj.len()).flat_map(|k| {
        [
            traj.mean[k][0],
            traj.mean[k][1],
            s.variance[k],
            s.gain[k],
            if s.conditioned[k] { 1.0 } else { 0.0 },
        ]
    });
    Ok(fs::write(path, encode(&header, data))?)
}

pub fn read_trajectory(path: &Path) -> Result<StateTrajectory> {
    let (h, data) = read_kind(path, &[PayloadKind::Predicted, PayloadKind::Retrodicted])?;
    let (kind, direction) = match h.kind {
        PayloadKind::Predicted => (EstimateKind::Predicted, Direction::Forward),
        _ => (EstimateKind::Retrodicted, Direction::Backward),
    };
    let rows: Vec<&[f64]> = data.chunks_exact(5).collect();
    let schedule = Schedule {
        dt: h.dt,
        direction,
        variance: rows.iter().map(|r| r[2]).collect(),
        gain: rows.iter().map(|r| r[3]).collect(),
        conditioned: rows.iter().map(|r| r[4] != 0.0).collect(),
    };
    Ok(StateTrajectory {
        dt: h.dt,
        kind,
        mean: rows.iter().map(|r| [r[0], r[1]]).collect(),
        schedule: Arc::new(schedule),
    })
}
