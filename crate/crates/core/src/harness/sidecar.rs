//! Columnar binary store for trajectories.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "PBTRAJ\0\x01"
//! count      u32      number of records
//! index      count x { present: u8, steps: u32, state_dim: u32 }
//! states     f64 x sum(steps * state_dim)   record-major, then step-major
//! actions    f64 x sum(steps * 7)
//! ```

use super::{Action, TrajectoryStep, ACTION_DIM};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Cursor, Read};

pub const SIDECAR_MAGIC: [u8; 8] = *b"PBTRAJ\0\x01";

#[derive(Debug, thiserror::Error)]
pub enum SidecarError {
    #[error("not a trajectory sidecar")]
    Magic,
    #[error("truncated sidecar: {0}")]
    Truncated(#[from] std::io::Error),
    #[error("record {index}: states have different lengths")]
    Ragged { index: usize },
    #[error("record {index}: invalid action")]
    Action { index: usize },
    #[error("{records} records but {sidecar} sidecar entries")]
    Mismatch { records: usize, sidecar: usize },
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

pub fn write_sidecar(records: &[super::EpisodeRecord]) -> Result<Vec<u8>, SidecarError> {
    for (index, r) in records.iter().enumerate() {
        if let Some(t) = &r.trajectory {
            if t.windows(2).any(|w| w[0].state.len() != w[1].state.len()) {
                return Err(SidecarError::Ragged { index });
            }
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(&SIDECAR_MAGIC);
    out.write_u32::<LittleEndian>(records.len() as u32).expect("vec write");
    for r in records {
        let t = r.trajectory.as_deref();
        let steps = t.map_or(0, |t| t.len());
        let dim = t.and_then(|t| t.first()).map_or(0, |s| s.state.len());
        out.write_u8(u8::from(t.is_some())).expect("vec write");
        out.write_u32::<LittleEndian>(steps as u32).expect("vec write");
        out.write_u32::<LittleEndian>(dim as u32).expect("vec write");
    }
    for r in records {
        for s in r.trajectory.iter().flatten() {
            for v in &s.state {
                out.write_f64::<LittleEndian>(*v).expect("vec write");
            }
        }
    }
    for r in records {
        for s in r.trajectory.iter().flatten() {
            for v in s.action.values() {
                out.write_f64::<LittleEndian>(*v).expect("vec write");
            }
        }
    }
    Ok(out)
}

pub fn read_sidecar(bytes: &[u8]) -> Result<Vec<Option<Vec<TrajectoryStep>>>, SidecarError> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)?;
    if magic != SIDECAR_MAGIC {
        return Err(SidecarError::Magic);
    }
    let count = cur.read_u32::<LittleEndian>()? as usize;
    let mut index = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let present = cur.read_u8()? != 0;
        let steps = cur.read_u32::<LittleEndian>()? as usize;
        let dim = cur.read_u32::<LittleEndian>()? as usize;
        index.push((present, steps, dim));
    }
    let mut states = Vec::with_capacity(count.min(1 << 20));
    for &(_, steps, dim) in &index {
        let mut rec = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut s = vec![0.0; dim];
            cur.read_f64_into::<LittleEndian>(&mut s)?;
            rec.push(s);
        }
        states.push(rec);
    }
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for (i, (&(present, steps, _), st)) in index.iter().zip(states).enumerate() {
        let mut traj = Vec::with_capacity(steps);
        for state in st {
            let mut a = [0.0; ACTION_DIM];
            cur.read_f64_into::<LittleEndian>(&mut a)?;
            let action = Action::new(a).map_err(|_| SidecarError::Action { index: i })?;
            traj.push(TrajectoryStep { state, action });
        }
        out.push(present.then_some(traj));
    }
    let rest = bytes.len() - cur.position() as usize;
    if rest != 0 {
        return Err(SidecarError::Trailing(rest));
    }
    Ok(out)
}
