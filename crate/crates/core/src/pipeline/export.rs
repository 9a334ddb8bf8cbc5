use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::planner::Trajectory;
use crate::validate::{EffortStats, ValidationReport};

pub const RECORD_VERSION: u32 = 1;
pub const BINARY_MAGIC: &[u8; 4] = b"AKRT";
pub const BINARY_VERSION: u16 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// JSON schema of one jsonl record.
pub const RECORD_SCHEMA: &str = include_str!("record.schema.json");

pub const JSONL_FILE: &str = "dataset.jsonl";
pub const BINARY_FILE: &str = "dataset.akrt";
/// Companion of the binary file: the jsonl records without waypoints.
pub const BINARY_META_FILE: &str = "dataset.meta.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Jsonl,
    Binary,
}

impl ExportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ExportFormat::Jsonl => JSONL_FILE,
            ExportFormat::Binary => BINARY_FILE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec_hash: String,
    pub seed: u64,
    pub tool_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub version: u32,
    pub problem_index: usize,
    pub joint_names: Vec<String>,
    pub dt: f64,
    #[serde(default)]
    pub waypoints: Vec<Vec<f64>>,
    pub grasp_index: usize,
    pub start_index: usize,
    /// Object target state.
    pub goal: Vec<f64>,
    pub validation: ValidationReport,
    pub effort: EffortStats,
    pub provenance: Provenance,
}

impl DatasetRecord {
    pub fn trajectory(&self) -> Trajectory {
        Trajectory { waypoints: self.waypoints.clone(), dt: self.dt }
    }
}

/// Appends records to a dataset in one format.
pub struct DatasetWriter {
    format: ExportFormat,
    path: PathBuf,
    main: BufWriter<File>,
    meta: Option<(PathBuf, BufWriter<File>)>,
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| PipelineError::io(path, e))?))
}

impl DatasetWriter {
    pub fn create(out_dir: &Path, format: ExportFormat) -> Result<Self, PipelineError> {
        let path = out_dir.join(format.file_name());
        let main = create(&path)?;
        let meta = match format {
            ExportFormat::Jsonl => None,
            ExportFormat::Binary => {
                let p = out_dir.join(BINARY_META_FILE);
                let w = create(&p)?;
                Some((p, w))
            }
        };
        Ok(Self { format, path, main, meta })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, record: &DatasetRecord) -> Result<(), PipelineError> {
        let path = self.path.clone();
        match self.format {
            ExportFormat::Jsonl => write_json_line(&mut self.main, record).map_err(|e| PipelineError::io(&path, e)),
            ExportFormat::Binary => {
                write_binary(&mut self.main, record).map_err(|e| PipelineError::io(&path, e))?;
                let (p, w) = self.meta.as_mut().expect("binary writer has a meta file");
                let stripped = DatasetRecord { waypoints: Vec::new(), ..record.clone() };
                write_json_line(w, &stripped).map_err(|e| PipelineError::io(p, e))
            }
        }
    }

    pub fn finish(mut self) -> Result<PathBuf, PipelineError> {
        self.main.flush().map_err(|e| PipelineError::io(&self.path, e))?;
        if let Some((p, w)) = self.meta.as_mut() {
            w.flush().map_err(|e| PipelineError::io(p, e))?;
        }
        Ok(self.path)
    }
}

fn write_json_line<W: Write>(w: &mut W, record: &DatasetRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}

/// Writes one record to `out_dir` in `format` and returns the dataset path.
pub fn export_trajectory(record: &DatasetRecord, out_dir: &Path, format: ExportFormat) -> Result<PathBuf, PipelineError> {
    let mut w = DatasetWriter::create(out_dir, format)?;
    w.write(record)?;
    w.finish()
}

/// Header (magic, version u16, T u32, width u32, dt f64, joint names as
/// u32 length plus UTF-8) followed by row-major f64 waypoints, all
/// little-endian.
pub fn write_binary<W: Write>(w: &mut W, record: &DatasetRecord) -> std::io::Result<()> {
    let width = record.joint_names.len();
    if record.waypoints.iter().any(|r| r.len() != width) {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "waypoint width differs from joint name count"));
    }
    let narrow = |n: usize| {
        u32::try_from(n).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "count exceeds u32"))
    };
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&narrow(record.waypoints.len())?.to_le_bytes())?;
    w.write_all(&narrow(width)?.to_le_bytes())?;
    w.write_all(&record.dt.to_le_bytes())?;
    for name in &record.joint_names {
        w.write_all(&narrow(name.len())?.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
    }
    for v in record.waypoints.iter().flatten() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Waypoints, step and joint names of one binary record.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryTrajectory {
    pub joint_names: Vec<String>,
    pub dt: f64,
    pub waypoints: Vec<Vec<f64>>,
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Reads the next binary record; `None` at a clean end of input.
pub fn read_binary<R: Read>(r: &mut R) -> std::io::Result<Option<BinaryTrajectory>> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut magic[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    if got == 0 {
        return Ok(None);
    }
    let invalid = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    if got < 4 || &magic != BINARY_MAGIC {
        return Err(invalid("bad magic"));
    }
    let version = u16::from_le_bytes(read_array(r)?);
    if version != BINARY_VERSION {
        return Err(invalid(&format!("unsupported version {version}")));
    }
    let t = u32::from_le_bytes(read_array(r)?) as usize;
    let width = u32::from_le_bytes(read_array(r)?) as usize;
    let dt = f64::from_le_bytes(read_array(r)?);
    let mut joint_names = Vec::with_capacity(width);
    for _ in 0..width {
        let len = u32::from_le_bytes(read_array(r)?) as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        joint_names.push(String::from_utf8(buf).map_err(|_| invalid("joint name is not UTF-8"))?);
    }
    let mut waypoints = Vec::with_capacity(t);
    for _ in 0..t {
        let mut row = Vec::with_capacity(width);
        for _ in 0..width {
            row.push(f64::from_le_bytes(read_array(r)?));
        }
        waypoints.push(row);
    }
    Ok(Some(BinaryTrajectory { joint_names, dt, waypoints }))
}

fn read_jsonl(path: &Path) -> Result<Vec<DatasetRecord>, PipelineError> {
    let f = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| PipelineError::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        out.push(r);
    }
    Ok(out)
}

/// Reads a dataset written by [`DatasetWriter`]. A binary file is joined
/// with its meta companion from the same directory.
pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, PipelineError> {
    if path.extension().is_some_and(|e| e == "akrt") {
        let meta_path = path.with_file_name(BINARY_META_FILE);
        let mut records = read_jsonl(&meta_path)?;
        let f = File::open(path).map_err(|e| PipelineError::io(path, e))?;
        let mut r = BufReader::new(f);
        for (i, rec) in records.iter_mut().enumerate() {
            let b = read_binary(&mut r).map_err(|e| PipelineError::io(path, e))?.ok_or_else(|| PipelineError::Format {
                path: path.to_path_buf(),
                message: format!("binary file ends before record {i}"),
            })?;
            if b.joint_names != rec.joint_names {
                return Err(PipelineError::Format {
                    path: path.to_path_buf(),
                    message: format!("record {i}: joint names differ from the meta file"),
                });
            }
            rec.waypoints = b.waypoints;
            rec.dt = b.dt;
        }
        if read_binary(&mut r).map_err(|e| PipelineError::io(path, e))?.is_some() {
            return Err(PipelineError::Format { path: path.to_path_buf(), message: "more binary records than meta lines".into() });
        }
        Ok(records)
    } else {
        read_jsonl(path)
    }
}
