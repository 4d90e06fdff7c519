//! File formats: the ELRIR1 binary container, CSV mirrors and provenance.
//!
//! ELRIR1 layout (all little-endian):
//!
//! ```text
//! b"ELRIR1" | M: u32 | N: u32 | f_s: f64 | c: f64 | M·N × f64 (row-major)
//! ```
//!
//! Every CSV file starts with a `#` provenance comment line; readers skip it.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::{Observation, SparseMeasure};
use crate::geometry::{ImageSourceSet, Vec3};

pub const ELRIR_MAGIC: &[u8; 6] = b"ELRIR1";

/// Contents of an ELRIR1 file. Microphone positions and the kernel are not
/// stored and have to come from the scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRir {
    pub n_mics: usize,
    pub n_samples: usize,
    pub fs: f64,
    pub c: f64,
    pub data: Vec<f64>,
}

impl From<&Observation> for RawRir {
    fn from(obs: &Observation) -> Self {
        RawRir {
            n_mics: obs.n_mics(),
            n_samples: obs.n_samples(),
            fs: obs.model.spec.fs,
            c: obs.model.c,
            data: obs.data.clone(),
        }
    }
}

pub fn write_elrir<W: Write>(mut w: W, rir: &RawRir) -> Result<()> {
    if rir.data.len() != rir.n_mics * rir.n_samples {
        return Err(Error::DimensionMismatch(format!(
            "{} samples for a {}×{} RIR",
            rir.data.len(),
            rir.n_mics,
            rir.n_samples
        )));
    }
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| Error::invalid(format!("dimension {v} does not fit in u32")))
    };
    w.write_all(ELRIR_MAGIC)?;
    w.write_all(&dim(rir.n_mics)?.to_le_bytes())?;
    w.write_all(&dim(rir.n_samples)?.to_le_bytes())?;
    w.write_all(&rir.fs.to_le_bytes())?;
    w.write_all(&rir.c.to_le_bytes())?;
    let mut buf = Vec::with_capacity(rir.data.len() * 8);
    for x in &rir.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_elrir<R: Read>(mut r: R) -> Result<RawRir> {
    let mut magic = [0u8; 6];
    read_exact(&mut r, &mut magic)?;
    if &magic != ELRIR_MAGIC {
        return Err(Error::Format("not an ELRIR1 file (bad magic)".into()));
    }
    let mut u = [0u8; 4];
    let mut f = [0u8; 8];
    read_exact(&mut r, &mut u)?;
    let n_mics = u32::from_le_bytes(u) as usize;
    read_exact(&mut r, &mut u)?;
    let n_samples = u32::from_le_bytes(u) as usize;
    read_exact(&mut r, &mut f)?;
    let fs = f64::from_le_bytes(f);
    read_exact(&mut r, &mut f)?;
    let c = f64::from_le_bytes(f);
    let len = n_mics
        .checked_mul(n_samples)
        .ok_or_else(|| Error::Format("ELRIR1 dimensions overflow".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(Error::Format(format!(
            "ELRIR1 payload has {} bytes, expected {}",
            bytes.len(),
            len * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    Ok(RawRir { n_mics, n_samples, fs, c, data })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("truncated ELRIR1 header".into())
        } else {
            Error::Io(e)
        }
    })
}

/// Who produced a file and from what configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// SHA-256 of the compact JSON form of the effective configuration.
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new<C: Serialize>(config: &C, seed: u64) -> Result<Self> {
        let bytes = serde_json::to_vec(config)?;
        let digest = Sha256::digest(&bytes);
        let config_hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Ok(Provenance {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash,
            seed,
        })
    }

    pub fn comment_line(&self) -> String {
        format!(
            "# {} {} config_hash={} seed={}",
            self.tool, self.version, self.config_hash, self.seed
        )
    }
}

fn write_header_comment<W: Write>(w: &mut W, prov: Option<&Provenance>) -> Result<()> {
    if let Some(p) = prov {
        writeln!(w, "{}", p.comment_line())?;
    }
    Ok(())
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r)
}

/// Long-form RIR export with columns `mic,sample,value`.
pub fn write_rir_csv<W: Write>(mut w: W, rir: &RawRir, prov: Option<&Provenance>) -> Result<()> {
    write_header_comment(&mut w, prov)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["mic", "sample", "value"])?;
    for m in 0..rir.n_mics {
        for n in 0..rir.n_samples {
            let v = rir.data[m * rir.n_samples + n];
            out.write_record([m.to_string(), n.to_string(), format!("{v:e}")])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row of the source CSV schema. Solver output leaves the image indices
/// and order empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRow {
    pub qx: Option<i32>,
    pub qy: Option<i32>,
    pub qz: Option<i32>,
    pub ex: Option<i8>,
    pub ey: Option<i8>,
    pub ez: Option<i8>,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub amplitude: f64,
    pub order: Option<u32>,
}

impl SourceRow {
    pub fn position(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }
}

pub fn source_rows(set: &ImageSourceSet) -> Vec<SourceRow> {
    set.sources
        .iter()
        .map(|s| SourceRow {
            qx: Some(s.q[0]),
            qy: Some(s.q[1]),
            qz: Some(s.q[2]),
            ex: Some(s.eps[0]),
            ey: Some(s.eps[1]),
            ez: Some(s.eps[2]),
            x: s.position.x,
            y: s.position.y,
            z: s.position.z,
            amplitude: s.amplitude,
            order: Some(s.order),
        })
        .collect()
}

pub fn spike_rows(measure: &SparseMeasure) -> Vec<SourceRow> {
    measure
        .spikes
        .iter()
        .map(|s| SourceRow {
            qx: None,
            qy: None,
            qz: None,
            ex: None,
            ey: None,
            ez: None,
            x: s.position.x,
            y: s.position.y,
            z: s.position.z,
            amplitude: s.amplitude,
            order: None,
        })
        .collect()
}

pub fn write_sources_csv<W: Write>(mut w: W, rows: &[SourceRow], prov: Option<&Provenance>) -> Result<()> {
    write_header_comment(&mut w, prov)?;
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(["qx", "qy", "qz", "ex", "ey", "ez", "x", "y", "z", "amplitude", "order"])?;
    }
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sources_csv<R: Read>(r: R) -> Result<Vec<SourceRow>> {
    let mut rows = Vec::new();
    for rec in csv_reader(r).deserialize() {
        let row: SourceRow = rec?;
        if !row.position().is_finite() || !row.amplitude.is_finite() {
            return Err(Error::Format("non-finite value in source CSV".into()));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Three-column grid export `x,y,value` for plane samples.
pub fn write_grid_csv<W: Write>(
    mut w: W,
    points: &[(f64, f64, f64)],
    prov: Option<&Provenance>,
) -> Result<()> {
    write_header_comment(&mut w, prov)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "y", "value"])?;
    for &(x, y, v) in points {
        out.write_record([format!("{x}"), format!("{y}"), format!("{v:e}")])?;
    }
    out.flush()?;
    Ok(())
}
