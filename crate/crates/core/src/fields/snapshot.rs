//! Field snapshots on disk.
//!
//! A snapshot is a pair of files sharing a stem: `<stem>.bin` holds the
//! physical grid values as little-endian `f64`, row-major in x (value
//! `(i, j)` at offset `8 * (i * nz + j)`), and `<stem>.json` holds the
//! header. A CSV variant (`x,z,value` rows, same ordering) is also
//! available for inspection.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{forward_transform, Grid, Parity, PhysicalField, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub nx: usize,
    pub nz: usize,
    pub parity: Parity,
    pub time: f64,
    pub layout: Layout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// little-endian f64, row-major in x
    F64LeRowMajorX,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn encode_values(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_values(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::InvalidArgument(format!("snapshot payload of {} bytes is not a multiple of 8", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

/// Encoded `.bin` payload and `.json` header of a snapshot.
pub fn snapshot_bytes(field: &SpectralField, time: f64) -> Result<(Vec<u8>, Vec<u8>)> {
    let phys = field.to_physical()?;
    let g = field.grid();
    let header = SnapshotHeader { nx: g.nx(), nz: g.nz(), parity: field.parity(), time, layout: Layout::F64LeRowMajorX };
    Ok((encode_values(phys.values()), serde_json::to_vec_pretty(&header)?))
}

/// Writes `<stem>.bin` and `<stem>.json`; returns the two paths.
pub fn write_snapshot(stem: &Path, field: &SpectralField, time: f64) -> Result<(PathBuf, PathBuf)> {
    let (payload, header) = snapshot_bytes(field, time)?;
    let bin = with_ext(stem, "bin");
    let json = with_ext(stem, "json");
    fs::write(&bin, payload)?;
    fs::write(&json, header)?;
    Ok((bin, json))
}

pub fn read_snapshot(stem: &Path) -> Result<(SnapshotHeader, SpectralField)> {
    let header: SnapshotHeader = serde_json::from_slice(&fs::read(with_ext(stem, "json"))?)?;
    let values = decode_values(&fs::read(with_ext(stem, "bin"))?)?;
    let grid = Grid::new(header.nx, header.nz)?;
    let phys = PhysicalField::new(grid, values)?;
    Ok((header, forward_transform(&phys, header.parity)?))
}

pub fn write_csv<W: Write>(mut out: W, field: &SpectralField) -> Result<()> {
    let phys = field.to_physical()?;
    let g = field.grid();
    writeln!(out, "x,z,value")?;
    for i in 0..g.nx() {
        for j in 0..g.nz() {
            writeln!(out, "{},{},{:e}", g.x(i), g.z(j), phys.get(i, j))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::TWO_PI;

    #[test]
    fn layout_is_row_major_in_x() {
        let g = Grid::new(8, 4).unwrap();
        let f = SpectralField::from_fn(g, Parity::Even, |x, z| (TWO_PI * x).cos() + 0.5 * (TWO_PI * z).cos()).unwrap();
        let dir = std::env::temp_dir().join(format!("hydrostat-snap-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let stem = dir.join("u_0000");
        let (bin, _) = write_snapshot(&stem, &f, 0.25).unwrap();
        let bytes = fs::read(&bin).unwrap();
        assert_eq!(bytes.len(), 8 * 32);
        let vals = decode_values(&bytes).unwrap();
        // (i=1, j=0) sits at offset nz = 4
        let expect = (TWO_PI / 8.0).cos() + 0.5;
        assert!((vals[4] - expect).abs() < 1e-14);

        let (h, back) = read_snapshot(&stem).unwrap();
        assert_eq!(h.time, 0.25);
        assert_eq!(h.parity, Parity::Even);
        assert!(back.sub(&f).max_abs_coeff() < 1e-15);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_truncated_payload() {
        assert!(decode_values(&[0u8; 12]).is_err());
    }
}
