use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tasks::TaskSample;
use crate::compute::Tensor2D;
use crate::error::{Error, Result};

/// Where a record's features come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureRef {
    /// Re-render from `render_seed`; the frame counts are stored for checking.
    Inline { frames_per_token: Vec<usize> },
    /// An f32 blob relative to the dataset file.
    Blob { path: String },
    /// Text-only sample.
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    #[serde(flatten)]
    pub sample: TaskSample,
    pub features: FeatureRef,
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

fn shape_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".shape");
    PathBuf::from(s)
}

/// Little-endian f32 values plus a `<path>.shape` sidecar holding `rows cols`.
pub fn write_f32_blob(path: &Path, m: &Tensor2D) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &v in m.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    std::fs::write(shape_path(path), format!("{} {}\n", m.rows(), m.cols()))?;
    Ok(())
}

pub fn read_f32_blob(path: &Path) -> Result<Tensor2D> {
    let header = std::fs::read_to_string(shape_path(path))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Input(format!("bad shape header {header:?}"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Input(format!("shape header needs two dims, got {header:?}")));
    };
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != rows * cols * 4 {
        return Err(Error::Input(format!("{}: {} bytes for shape {rows}x{cols}", path.display(), bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Tensor2D::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32");
        let m = Tensor2D::from_rows(&[vec![0.5, -1.25, 3.0], vec![1e-3, 2.0, 7.5]]).unwrap();
        write_f32_blob(&p, &m).unwrap();
        let back = read_f32_blob(&p).unwrap();
        assert_eq!(back.shape(), (2, 3));
        for (a, b) in back.data().iter().zip(m.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
}
