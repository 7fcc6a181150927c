//! File formats: embedding CSVs, PHLN checkpoints, binary PGM images, and
//! dataset directories. All writes go to a sibling temp file first and are
//! renamed into place.
//!
//! Embedding CSV: header `id,label,concentration,rep_0,...,rep_{D-1}`, one
//! row per sample, label and concentration cells may be empty, values
//! written with 10 significant digits. Fields must not contain commas.
//!
//! Checkpoint container: magic `PHLN`, u32 LE version (1), u64 LE JSON
//! header length, the JSON header, then all parameters as f32 LE. Encoder
//! payloads hold backbone layers then head layers, each weight matrix
//! row-major (out x in) followed by its bias; probe payloads hold the K x D
//! weight matrix row-major followed by the K biases.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use crate::data::{ImageGrid, SyntheticSample};
use crate::embedding::EmbeddingSet;
use crate::encoder::{EncoderArch, EncoderParams, LrSchedule};
use crate::error::{Error, Result};
use crate::probe::ProbeParams;

const MAGIC: &[u8; 4] = b"PHLN";
const VERSION: u32 = 1;

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = PathBuf::from(path);
    let mut name = path
        .file_name()
        .ok_or_else(|| Error::format(format!("path `{}` has no file name", path.display())))?
        .to_os_string();
    name.push(".tmp");
    tmp.set_file_name(name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Embedding CSV
// ---------------------------------------------------------------------------

fn format_value(v: f64) -> String {
    format!("{v:.9e}")
}

pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let dim = set.dim();
    let mut out = String::new();
    out.push_str("id,label,concentration");
    for d in 0..dim {
        out.push_str(&format!(",rep_{d}"));
    }
    out.push('\n');
    for i in 0..set.len() {
        let label = set.labels[i].as_deref().unwrap_or("");
        for field in [set.ids[i].as_str(), label] {
            if field.contains(',') || field.contains('\n') {
                return Err(Error::format(format!(
                    "field `{field}` contains a separator character"
                )));
            }
        }
        out.push_str(&set.ids[i]);
        out.push(',');
        out.push_str(label);
        out.push(',');
        if let Some(c) = set.concentrations[i] {
            out.push_str(&format_value(c));
        }
        for d in 0..dim {
            out.push(',');
            out.push_str(&format_value(set.reps[[i, d]]));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format_at(1, "missing header row"))?;
    let cols: Vec<&str> = header.split(',').collect();
    for (i, expected) in ["id", "label", "concentration"].iter().enumerate() {
        if cols.get(i).copied() != Some(*expected) {
            return Err(Error::format_at(
                1,
                format!("header column {} must be `{expected}`", i + 1),
            ));
        }
    }
    let dim = cols.len().saturating_sub(3);
    if dim == 0 {
        return Err(Error::format_at(1, "header has no rep_* columns"));
    }
    for (d, col) in cols[3..].iter().enumerate() {
        let expected = format!("rep_{d}");
        if *col != expected {
            return Err(Error::format_at(
                1,
                format!("header column {} must be `{expected}`, found `{col}`", d + 4),
            ));
        }
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut concentrations = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (line_idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = line_idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::format_at(
                line_no,
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        ids.push(fields[0].to_string());
        labels.push(if fields[1].is_empty() {
            None
        } else {
            Some(fields[1].to_string())
        });
        concentrations.push(if fields[2].is_empty() {
            None
        } else {
            Some(fields[2].parse::<f64>().map_err(|_| {
                Error::format_at(line_no, format!("non-numeric concentration `{}`", fields[2]))
            })?)
        });
        for f in &fields[3..] {
            values.push(
                f.parse::<f64>()
                    .map_err(|_| Error::format_at(line_no, format!("non-numeric value `{f}`")))?,
            );
        }
    }
    let n = ids.len();
    let reps = Array2::from_shape_vec((n, dim), values)
        .map_err(|e| Error::format(format!("inconsistent table shape: {e}")))?;
    EmbeddingSet::new(ids, reps, labels, concentrations)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum CheckpointHeader {
    Encoder {
        arch: EncoderArch,
        schedule: LrSchedule,
        step: u64,
        seed: u64,
    },
    Probe {
        dim: usize,
        classes: Vec<String>,
        class_weights: Vec<f64>,
        seed: u64,
    },
}

/// A loaded checkpoint payload.
#[derive(Debug, Clone)]
pub enum Checkpoint {
    Encoder {
        arch: EncoderArch,
        schedule: LrSchedule,
        step: u64,
        seed: u64,
        params: EncoderParams,
    },
    Probe { seed: u64, params: ProbeParams },
}

impl Checkpoint {
    pub fn into_encoder(self) -> Result<(EncoderArch, EncoderParams)> {
        match self {
            Checkpoint::Encoder { arch, params, .. } => Ok((arch, params)),
            Checkpoint::Probe { .. } => Err(Error::NotACheckpoint(
                "expected an encoder checkpoint, found a probe".into(),
            )),
        }
    }

    pub fn into_probe(self) -> Result<ProbeParams> {
        match self {
            Checkpoint::Probe { params, .. } => Ok(params),
            Checkpoint::Encoder { .. } => Err(Error::NotACheckpoint(
                "expected a probe checkpoint, found an encoder".into(),
            )),
        }
    }
}

fn write_container(path: &Path, header: &CheckpointHeader, payload: &[f32]) -> Result<()> {
    let header_json = serde_json::to_vec(header)
        .map_err(|e| Error::format(format!("header serialization: {e}")))?;
    let mut bytes = Vec::with_capacity(16 + header_json.len() + payload.len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn save_encoder_checkpoint(
    path: &Path,
    arch: &EncoderArch,
    schedule: &LrSchedule,
    step: u64,
    seed: u64,
    params: &EncoderParams,
) -> Result<()> {
    let header = CheckpointHeader::Encoder {
        arch: arch.clone(),
        schedule: schedule.clone(),
        step,
        seed,
    };
    write_container(path, &header, &params.to_flat())
}

pub fn save_probe_checkpoint(path: &Path, probe: &ProbeParams, seed: u64) -> Result<()> {
    let header = CheckpointHeader::Probe {
        dim: probe.dim(),
        classes: probe.classes.clone(),
        class_weights: probe.class_weights.clone(),
        seed,
    };
    let mut payload: Vec<f32> = probe.weights.iter().copied().collect();
    payload.extend(probe.bias.iter().copied());
    write_container(path, &header, &payload)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(Error::NotACheckpoint(format!(
            "file is only {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::NotACheckpoint(format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 16 + header_len {
        return Err(Error::CorruptCheckpoint(format!(
            "header length {header_len} exceeds file size"
        )));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| Error::CorruptCheckpoint(format!("header JSON: {e}")))?;
    let payload_bytes = &bytes[16 + header_len..];
    if payload_bytes.len() % 4 != 0 {
        return Err(Error::CorruptCheckpoint(format!(
            "payload has {} bytes, not a multiple of 4",
            payload_bytes.len()
        )));
    }
    let payload: Vec<f32> = payload_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();

    match header {
        CheckpointHeader::Encoder {
            arch,
            schedule,
            step,
            seed,
        } => {
            let expected = arch.parameter_count();
            if payload.len() != expected {
                return Err(Error::CorruptCheckpoint(format!(
                    "encoder payload has {} values, expected {expected}",
                    payload.len()
                )));
            }
            let params = EncoderParams::from_flat(&arch, &payload)?;
            Ok(Checkpoint::Encoder {
                arch,
                schedule,
                step,
                seed,
                params,
            })
        }
        CheckpointHeader::Probe {
            dim,
            classes,
            class_weights,
            seed,
        } => {
            let k = classes.len();
            let expected = k * dim + k;
            if payload.len() != expected {
                return Err(Error::CorruptCheckpoint(format!(
                    "probe payload has {} values, expected {expected}",
                    payload.len()
                )));
            }
            if class_weights.len() != k {
                return Err(Error::CorruptCheckpoint(format!(
                    "{} class weights for {k} classes",
                    class_weights.len()
                )));
            }
            let weights = Array2::from_shape_vec((k, dim), payload[..k * dim].to_vec())
                .expect("shape arithmetic");
            let bias = Array1::from_vec(payload[k * dim..].to_vec());
            Ok(Checkpoint::Probe {
                seed,
                params: ProbeParams {
                    classes,
                    class_weights,
                    weights,
                    bias,
                },
            })
        }
    }
}

// ---------------------------------------------------------------------------
// PGM images
// ---------------------------------------------------------------------------

pub fn write_pgm(path: &Path, img: &ImageGrid) -> Result<()> {
    let side = img.side();
    let mut bytes = format!("P5\n{side} {side}\n255\n").into_bytes();
    bytes.extend(img.pixels().iter().map(|&p| (p * 255.0).round() as u8));
    atomic_write(path, &bytes)
}

pub fn read_pgm(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and # comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("unexpected end of PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P5" {
        return Err(Error::format("not a binary PGM (missing P5)"));
    }
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::format("bad PGM width"))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::format("bad PGM height"))?;
    let maxval: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::format("bad PGM maxval"))?;
    if maxval != 255 {
        return Err(Error::format(format!("unsupported PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates header and data
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format("missing separator before PGM data"));
    }
    pos += 1;
    let data = &bytes[pos..];
    if data.len() != width * height {
        return Err(Error::format(format!(
            "PGM data has {} bytes, expected {}",
            data.len(),
            width * height
        )));
    }
    let px = Array2::from_shape_fn((height, width), |(r, c)| data[r * width + c] as f32 / 255.0);
    ImageGrid::new(px)
}

// ---------------------------------------------------------------------------
// Dataset directories
// ---------------------------------------------------------------------------

/// Write `samples.csv` (id,label,concentration) plus one PGM per sample.
pub fn write_dataset(dir: &Path, samples: &[SyntheticSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = String::from("id,label,concentration\n");
    for s in samples {
        for field in [s.id.as_str(), s.label.as_str()] {
            if field.contains(',') || field.contains('\n') {
                return Err(Error::format(format!(
                    "field `{field}` contains a separator character"
                )));
            }
        }
        csv.push_str(&format!(
            "{},{},{}\n",
            s.id,
            s.label,
            format_value(s.concentration)
        ));
        write_pgm(&dir.join(format!("{}.pgm", s.id)), &s.image)?;
    }
    atomic_write(&dir.join("samples.csv"), csv.as_bytes())
}

/// Read a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Vec<SyntheticSample>> {
    let csv_path = dir.join("samples.csv");
    let text = fs::read_to_string(&csv_path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format_at(1, "missing header row"))?;
    if header != "id,label,concentration" {
        return Err(Error::format_at(
            1,
            format!("expected header `id,label,concentration`, found `{header}`"),
        ));
    }
    let mut out = Vec::new();
    for (line_idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = line_idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::format_at(
                line_no,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let concentration: f64 = fields[2].parse().map_err(|_| {
            Error::format_at(line_no, format!("non-numeric concentration `{}`", fields[2]))
        })?;
        let image = read_pgm(&dir.join(format!("{}.pgm", fields[0])))?;
        out.push(SyntheticSample {
            id: fields[0].to_string(),
            image,
            label: fields[1].to_string(),
            concentration,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(format!(
            "dataset at `{}` has no samples",
            dir.display()
        )));
    }
    Ok(out)
}
