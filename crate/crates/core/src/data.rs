//! Point clouds and their on-disk formats.
//!
//! Binary layout (little endian): magic `IMSM`, `u32` version 1, `u32` N,
//! `u32` d, then `N * d` `f64` values row-major. CSV layout: header
//! `x0,...,x{d-1}` and one point per row. Provenance lives in a JSON sidecar
//! next to the data file (`<file>.meta.json`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"IMSM";
pub const FORMAT_VERSION: u32 = 1;

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub system: String,
    pub seed: u64,
    pub dt: f64,
    pub burn_in_steps: usize,
    pub stride: usize,
    pub n_trajectories: usize,
    #[serde(default)]
    pub subsample: Option<usize>,
}

/// `N` unlabeled points in `d` dimensions, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Array2<f64>,
    pub provenance: Option<Provenance>,
}

impl PointCloud {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::Data(format!(
                "point cloud must be non-empty, got {}x{}",
                points.nrows(),
                points.ncols()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("point cloud contains non-finite values".into()));
        }
        Ok(Self {
            points,
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = Some(p);
        self
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    /// Per-axis `(min, max)`.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.points
            .axis_iter(Axis(1))
            .map(|c| {
                c.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .collect()
    }

    /// Axis-aligned bounding box padded by `frac` of its width on each side.
    pub fn padded_bounds(&self, frac: f64) -> Vec<(f64, f64)> {
        self.bounds()
            .into_iter()
            .map(|(lo, hi)| {
                let w = (hi - lo).max(1e-12);
                (lo - frac * w, hi + frac * w)
            })
            .collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.points.mean_axis(Axis(0)).unwrap().to_vec()
    }

    /// Per-axis population standard deviation.
    pub fn std(&self) -> Vec<f64> {
        self.points.std_axis(Axis(0), 0.0).to_vec()
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let (n, d) = self.points.dim();
        let mut out = Vec::with_capacity(16 + 8 * n * d);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for v in self.points.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[0..4] != MAGIC {
            return Err(Error::Data("not an IMSM dataset (bad magic)".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported dataset version {version}"
            )));
        }
        let (n, d) = (word(8) as usize, word(12) as usize);
        let need = 16 + 8 * n * d;
        if bytes.len() != need {
            return Err(Error::Data(format!(
                "dataset header announces {n}x{d} values ({need} bytes), file has {}",
                bytes.len()
            )));
        }
        let vals: Vec<f64> = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let points = Array2::from_shape_vec((n, d), vals).expect("length checked");
        Self::new(points)
    }

    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut s = (0..d)
            .map(|i| format!("x{i}"))
            .collect::<Vec<_>>()
            .join(",");
        s.push('\n');
        for row in self.points.rows() {
            let line = row
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            s.push_str(&line);
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty CSV dataset".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        for (i, c) in cols.iter().enumerate() {
            if *c != format!("x{i}") {
                return Err(Error::Data(format!(
                    "CSV header column {i} is '{c}', expected 'x{i}'"
                )));
            }
        }
        let d = cols.len();
        let mut vals = Vec::new();
        let mut n = 0;
        for (lineno, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("CSV row {}: {e}", lineno + 2)))?;
            if row.len() != d {
                return Err(Error::Data(format!(
                    "CSV row {} has {} columns, expected {d}",
                    lineno + 2,
                    row.len()
                )));
            }
            vals.extend(row);
            n += 1;
        }
        Self::new(Array2::from_shape_vec((n, d), vals).expect("length checked"))
    }

    /// Loads a dataset, picking the format from the extension (`.csv` or
    /// binary otherwise), plus the provenance sidecar when present.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut pc = if is_csv(path) {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Data(format!("{} is not UTF-8 CSV", path.display())))?;
            Self::from_csv(&text)?
        } else {
            Self::from_binary(&bytes)?
        };
        let side = sidecar_path(path);
        if side.exists() {
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let meta: DatasetMeta = serde_json::from_str(&text)
                .map_err(|e| Error::Data(format!("{}: {e}", side.display())))?;
            pc.provenance = meta.provenance;
        }
        Ok(pc)
    }

    /// Writes the dataset atomically. `extra` is merged into the sidecar.
    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let bytes = if is_csv(path) {
            self.to_csv().into_bytes()
        } else {
            self.to_binary()
        };
        write_atomic(path, &bytes)?;
        let meta = DatasetMeta {
            n: self.len(),
            d: self.dim(),
            provenance: self.provenance.clone(),
            extra,
        };
        let text = serde_json::to_string_pretty(&meta).expect("serializable");
        write_atomic(&sidecar_path(path), text.as_bytes())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    n: usize,
    d: usize,
    provenance: Option<Provenance>,
    #[serde(default)]
    extra: serde_json::Value,
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes to a temporary sibling and renames it over `path`, so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let pc = PointCloud::new(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let mut b = pc.to_binary();
        b[0] = b'X';
        assert!(matches!(PointCloud::from_binary(&b), Err(Error::Data(_))));
        let b = pc.to_binary();
        assert!(PointCloud::from_binary(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn binary_header_layout() {
        let pc = PointCloud::new(array![[1.5], [2.5], [3.5]]).unwrap();
        let b = pc.to_binary();
        assert_eq!(&b[0..4], b"IMSM");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(b[16..24].try_into().unwrap()), 1.5);
    }

    #[test]
    fn csv_header_is_checked() {
        assert!(PointCloud::from_csv("a,b\n1,2\n").is_err());
        let pc = PointCloud::from_csv("x0,x1\n1,2\n3,4\n").unwrap();
        assert_eq!(pc.points, array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(PointCloud::new(array![[f64::NAN]]).is_err());
    }

    proptest! {
        #[test]
        fn csv_and_binary_agree(vals in prop::collection::vec(-1e6f64..1e6, 1..40), d in 1usize..4) {
            let n = vals.len() / d;
            prop_assume!(n >= 1);
            let pts = Array2::from_shape_vec((n, d), vals[..n * d].to_vec()).unwrap();
            let pc = PointCloud::new(pts).unwrap();
            let a = PointCloud::from_binary(&pc.to_binary()).unwrap();
            let b = PointCloud::from_csv(&pc.to_csv()).unwrap();
            prop_assert_eq!(&a.points, &pc.points);
            prop_assert_eq!(&b.points, &pc.points);
        }
    }
}
