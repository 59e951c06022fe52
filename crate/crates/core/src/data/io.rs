//! Dataset directories.
//!
//! ```text
//! <dir>/classes.txt     one class name per line, in label order
//! <dir>/metadata.csv    filename,class_name,azimuth_deg,nuisance_deg,split
//! <dir>/<filename>      one raster per chip
//! ```
//!
//! `azimuth_deg` may be empty for chips without pose. Rasters are either the
//! native `F64R` format (ASCII header `F64R <width> <height>\n` followed by
//! little-endian `f64` pixels, row-major, top row first) or 8/16-bit binary
//! PGM (`P5`), which is scaled to `[0, 1]`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Chip, Dataset, Split};
use crate::error::{Error, Result};
use crate::pose::Azimuth;
use crate::tensor::Tensor;

pub const METADATA_FILE: &str = "metadata.csv";
pub const CLASSES_FILE: &str = "classes.txt";
const RASTER_MAGIC: &str = "F64R";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetadataRow {
    filename: String,
    class_name: String,
    azimuth_deg: Option<f64>,
    nuisance_deg: f64,
    split: String,
}

/// Encode a single-channel image in the `F64R` format.
pub fn write_raster(path: &Path, image: &Tensor) -> Result<()> {
    let &[1, h, w] = image.shape() else {
        return Err(Error::Dimension(format!(
            "rasters hold 1×H×W images, got {:?}",
            image.shape()
        )));
    };
    let mut bytes = format!("{RASTER_MAGIC} {w} {h}\n").into_bytes();
    bytes.reserve(image.len() * 8);
    for v in &image.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn header_fields(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    // whitespace-separated tokens, the last one followed by exactly one
    // whitespace byte before the payload
    let mut fields = Vec::with_capacity(count);
    let mut i = 0;
    while fields.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if bytes.get(i) == Some(&b'#') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    (i < bytes.len()).then_some((fields, i + 1))
}

/// Decode an `F64R` or binary PGM raster into a `1 × H × W` tensor.
pub fn read_raster(path: &Path) -> std::result::Result<Tensor, String> {
    let bytes = fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    if bytes.starts_with(RASTER_MAGIC.as_bytes()) {
        let (f, off) = header_fields(&bytes, 3).ok_or("truncated F64R header")?;
        let w: usize = f[1].parse().map_err(|_| "bad F64R width")?;
        let h: usize = f[2].parse().map_err(|_| "bad F64R height")?;
        let payload = &bytes[off..];
        if w == 0 || h == 0 || payload.len() != w * h * 8 {
            return Err(format!(
                "F64R payload is {} bytes, header says {w}×{h}",
                payload.len()
            ));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::from_vec(&[1, h, w], data).map_err(|e| e.to_string())
    } else if bytes.starts_with(b"P5") {
        let (f, off) = header_fields(&bytes, 4).ok_or("truncated PGM header")?;
        let w: usize = f[1].parse().map_err(|_| "bad PGM width")?;
        let h: usize = f[2].parse().map_err(|_| "bad PGM height")?;
        let max: u32 = f[3].parse().map_err(|_| "bad PGM maxval")?;
        if max == 0 || max > 65535 {
            return Err(format!("PGM maxval {max} out of range"));
        }
        let depth = if max < 256 { 1 } else { 2 };
        let payload = &bytes[off..];
        if w == 0 || h == 0 || payload.len() != w * h * depth {
            return Err("PGM payload size does not match header".into());
        }
        let data = if depth == 1 {
            payload.iter().map(|&b| f64::from(b) / f64::from(max)).collect()
        } else {
            payload
                .chunks_exact(2)
                .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / f64::from(max))
                .collect()
        };
        Tensor::from_vec(&[1, h, w], data).map_err(|e| e.to_string())
    } else {
        Err("unrecognized raster format (expected F64R or P5 PGM)".into())
    }
}

/// Write `dataset` into `dir` (created if needed). Filenames are
/// `chip_NNNNNN.f64r` in dataset order.
pub fn export_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let classes_path = dir.join(CLASSES_FILE);
    let mut classes = String::new();
    for name in &dataset.class_names {
        if name.is_empty() || name.contains('\n') {
            return Err(Error::Data(format!("invalid class name {name:?}")));
        }
        classes.push_str(name);
        classes.push('\n');
    }
    fs::write(&classes_path, classes).map_err(|e| Error::io(&classes_path, e))?;

    let meta_path = dir.join(METADATA_FILE);
    let mut writer = csv::Writer::from_writer(Vec::new());
    for (i, chip) in dataset.chips.iter().enumerate() {
        let filename = format!("chip_{i:06}.f64r");
        write_raster(&dir.join(&filename), &chip.image)?;
        let name = dataset
            .class_names
            .get(chip.class_label)
            .ok_or(Error::Label {
                label: chip.class_label,
                classes: dataset.class_names.len(),
            })?;
        writer
            .serialize(MetadataRow {
                filename,
                class_name: name.clone(),
                azimuth_deg: chip.azimuth.map(Azimuth::degrees),
                nuisance_deg: chip.nuisance,
                split: chip.split.as_str().into(),
            })
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    let mut f = fs::File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&meta_path, e))
}

fn ingestion(file: &Path, row: usize, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        file: file.to_path_buf(),
        row,
        reason: reason.into(),
    }
}

/// Read a dataset directory. Azimuths are converted from degrees and
/// canonicalized; rows are numbered from 1 counting the header line.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let classes_path = dir.join(CLASSES_FILE);
    let meta_path: PathBuf = dir.join(METADATA_FILE);
    if !meta_path.is_file() {
        return Err(ingestion(&meta_path, 0, "metadata file missing"));
    }
    let class_names: Vec<String> = fs::read_to_string(&classes_path)
        .map_err(|e| ingestion(&classes_path, 0, format!("class list unreadable: {e}")))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if class_names.len() < 2 {
        return Err(ingestion(&classes_path, 0, "need at least two classes"));
    }
    let mut reader = csv::Reader::from_path(&meta_path)
        .map_err(|e| ingestion(&meta_path, 0, e.to_string()))?;
    let mut chips = Vec::new();
    let mut shape: Option<Vec<usize>> = None;
    for (i, row) in reader.deserialize::<MetadataRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| ingestion(&meta_path, line, e.to_string()))?;
        let class_label = class_names
            .iter()
            .position(|c| *c == row.class_name)
            .ok_or_else(|| {
                ingestion(&meta_path, line, format!("class {:?} not declared", row.class_name))
            })?;
        let split: Split = row
            .split
            .parse()
            .map_err(|e: String| ingestion(&meta_path, line, e))?;
        let azimuth = match row.azimuth_deg {
            Some(d) if d.is_finite() => Some(Azimuth::from_degrees(d)),
            Some(d) => return Err(ingestion(&meta_path, line, format!("bad azimuth {d}"))),
            None => None,
        };
        if !row.nuisance_deg.is_finite() {
            return Err(ingestion(&meta_path, line, "bad nuisance angle"));
        }
        let image = read_raster(&dir.join(&row.filename))
            .map_err(|e| ingestion(&meta_path, line, format!("{}: {e}", row.filename)))?;
        match &shape {
            Some(s) if s.as_slice() != image.shape() => {
                return Err(ingestion(
                    &meta_path,
                    line,
                    format!("image {:?} differs from {:?}", image.shape(), s),
                ))
            }
            None => shape = Some(image.shape().to_vec()),
            _ => {}
        }
        chips.push(Chip {
            image,
            class_label,
            azimuth,
            nuisance: row.nuisance_deg,
            split,
            augmented: false,
        });
    }
    if chips.is_empty() {
        return Err(ingestion(&meta_path, 0, "dataset has no chips"));
    }
    Ok(Dataset { class_names, chips })
}
