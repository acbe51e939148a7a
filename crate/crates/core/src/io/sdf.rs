//! SDF sample files: `"SDF1"`, `u64` count, then `count` records of four
//! `f32` values `(x, y, z, sdf)`.

use std::path::Path;

use super::{read_file, write_file, Reader};
use crate::error::Result;
use crate::tasks::data::{SampleTag, SdfSampleSet};

const MAGIC: &[u8; 4] = b"SDF1";
const HEADER: usize = 12;
const RECORD: usize = 16;

pub fn encode_sdf(set: &SdfSampleSet) -> Vec<u8> {
    let n = set.len();
    let mut out = Vec::with_capacity(HEADER + n * RECORD);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for i in 0..n {
        for v in &set.points[3 * i..3 * i + 3] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&set.sdf[i].to_le_bytes());
    }
    out
}

/// Tags are not stored; loaded samples are tagged `Unknown`.
pub fn decode_sdf(bytes: &[u8]) -> Result<SdfSampleSet> {
    let mut r = Reader::new("sdf", bytes);
    r.magic(MAGIC)?;
    let count = r.u64("record count")?;
    let body = r.remaining();
    if body % RECORD != 0 || (body / RECORD) as u64 != count {
        return Err(r.error(
            4,
            format!(
                "header declares {count} records but {body} payload bytes hold {} records",
                body as f64 / RECORD as f64
            ),
        ));
    }
    let n = count as usize;
    let mut points = Vec::with_capacity(3 * n);
    let mut sdf = Vec::with_capacity(n);
    for rec in r.take(body, "records")?.chunks_exact(RECORD) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        points.extend([f(0), f(1), f(2)]);
        sdf.push(f(3));
    }
    Ok(SdfSampleSet {
        points,
        sdf,
        tags: vec![SampleTag::Unknown; n],
    })
}

pub fn load_sdf_samples(path: impl AsRef<Path>) -> Result<SdfSampleSet> {
    decode_sdf(&read_file(path.as_ref())?)
}

pub fn save_sdf_samples(path: impl AsRef<Path>, set: &SdfSampleSet) -> Result<()> {
    write_file(path.as_ref(), &encode_sdf(set))
}
