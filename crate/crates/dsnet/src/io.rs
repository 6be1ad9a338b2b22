//! SemanticKITTI-style files.
//!
//! * `velodyne/NNNNNN.bin`: little-endian `f32` quadruples `(x, y, z, intensity)`.
//! * `labels/NNNNNN.label`: little-endian `u32` words, semantic class in the
//!   low 16 bits and instance id in the high 16 bits.
//! * `poses.txt`: one row-major 3x4 `[R | T]` per line, camera frame.
//! * `calib.txt`: `key: values` lines; `Tr` is velodyne-to-camera.
//! * `centers/NNNNNN.bin`, `features/NNNNNN.bin`: little-endian `f64`
//!   regressed centers (3 per point) and head features (`D'` per point).
//!
//! Predictions go to `sequences/SS/predictions/NNNNNN.label`.
//! Every writer goes through a temp file and a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dsnet_core::{Matrix, PanopticLabeling, Point, Pose, Vec3};

use crate::{Error, Result};

const POINT_BYTES: usize = 16;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a whole file.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
/// Parent directories are created.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(io_err(&tmp)(e));
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn check_records(path: &Path, len: usize, record: usize) -> Result<usize> {
    if !len.is_multiple_of(record) {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: (len - len % record) as u64,
            record,
        });
    }
    Ok(len / record)
}

/// Raw `f32` quadruples; bit-exact, NaN payloads included.
pub fn decode_points_raw(path: &Path, bytes: &[u8]) -> Result<Vec<[f32; 4]>> {
    check_records(path, bytes.len(), POINT_BYTES)?;
    Ok(bytes
        .chunks_exact(POINT_BYTES)
        .map(|c| core::array::from_fn(|k| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap())))
        .collect())
}

pub fn encode_points_raw(points: &[[f32; 4]]) -> Vec<u8> {
    points.iter().flatten().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn read_points_raw(path: &Path) -> Result<Vec<[f32; 4]>> {
    decode_points_raw(path, &read_bytes(path)?)
}

pub fn write_points_raw(path: &Path, points: &[[f32; 4]]) -> Result<()> {
    write_atomic(path, &encode_points_raw(points))
}

/// Widens to `f64`; exact for every non-NaN value.
pub fn read_points(path: &Path) -> Result<Vec<Point>> {
    Ok(read_points_raw(path)?
        .into_iter()
        .map(|[x, y, z, i]| Point::new(x.into(), y.into(), z.into(), i.into()))
        .collect())
}

/// Narrows to `f32`, so values that came from a scan file survive unchanged.
pub fn write_points(path: &Path, points: &[Point]) -> Result<()> {
    let raw: Vec<[f32; 4]> = points
        .iter()
        .map(|p| [p.x as f32, p.y as f32, p.z as f32, p.intensity as f32])
        .collect();
    write_points_raw(path, &raw)
}

pub fn decode_label_words(path: &Path, bytes: &[u8]) -> Result<Vec<u32>> {
    check_records(path, bytes.len(), 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn encode_label_words(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

/// Packed label words; `expected` is the scan's point count when known.
pub fn read_label_words(path: &Path, expected: Option<usize>) -> Result<Vec<u32>> {
    let words = decode_label_words(path, &read_bytes(path)?)?;
    if let Some(n) = expected.filter(|&n| n != words.len()) {
        return Err(Error::CountMismatch {
            path: path.to_path_buf(),
            expected: n,
            got: words.len(),
        });
    }
    Ok(words)
}

pub fn write_label_words(path: &Path, words: &[u32]) -> Result<()> {
    write_atomic(path, &encode_label_words(words))
}

pub fn read_labels(path: &Path, expected: Option<usize>) -> Result<PanopticLabeling> {
    Ok(PanopticLabeling::from_packed(&read_label_words(path, expected)?))
}

/// Fails when an id does not fit the 16-bit fields.
pub fn write_labels(path: &Path, labels: &PanopticLabeling) -> Result<()> {
    write_label_words(path, &labels.to_packed()?)
}

fn parse_reals(path: &Path, line_no: usize, text: &str, want: usize) -> Result<Vec<f64>> {
    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        msg,
    };
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| parse_err(format!("`{t}` is not a number"))))
        .collect::<Result<_>>()?;
    if vals.len() != want {
        return Err(parse_err(format!("expected {want} values, found {}", vals.len())));
    }
    Ok(vals)
}

/// Row-major 3x4 matrices, one per non-blank line.
pub fn parse_pose_matrices(path: &Path, text: &str) -> Result<Vec<[f64; 12]>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Ok(parse_reals(path, i + 1, l, 12)?.try_into().unwrap()))
        .collect()
}

/// Shortest round-trip decimal formatting, so reading back is bit-exact.
pub fn format_pose_matrices(poses: &[[f64; 12]]) -> String {
    let mut s = String::new();
    for m in poses {
        let row: Vec<String> = m.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_pose_matrices(path: &Path) -> Result<Vec<[f64; 12]>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_pose_matrices(path, &text)
}

pub fn write_pose_matrices(path: &Path, poses: &[[f64; 12]]) -> Result<()> {
    write_atomic(path, format_pose_matrices(poses).as_bytes())
}

/// The `Tr` entry of a calibration file.
pub fn parse_calibration(path: &Path, text: &str) -> Result<Pose> {
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.trim_start().strip_prefix("Tr:") {
            let m: [f64; 12] = parse_reals(path, i + 1, rest, 12)?.try_into().unwrap();
            let tr = Pose::from_matrix_3x4(&m);
            tr.validate()?;
            return Ok(tr);
        }
    }
    Err(Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "no `Tr:` entry".into(),
    })
}

/// Sensor poses in the frame of the first scan's sensor: `Tr^-1 P Tr` for
/// each camera pose `P`.
pub fn read_poses(poses: &Path, calib: &Path) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(calib).map_err(io_err(calib))?;
    let tr = parse_calibration(calib, &text)?;
    let tr_inv = tr.inverse();
    read_pose_matrices(poses)?
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let p = Pose::from_matrix_3x4(m);
            p.validate().map_err(|e| Error::Parse {
                path: poses.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            Ok(tr_inv.compose(&p.compose(&tr)))
        })
        .collect()
}

/// Identity calibration, as written for synthetic sequences.
pub fn identity_calibration() -> String {
    let m = Pose::identity().to_matrix_3x4();
    let row: Vec<String> = m.iter().map(|v| format!("{v:e}")).collect();
    format!("Tr: {}\n", row.join(" "))
}

fn decode_f64(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    check_records(path, bytes.len(), 8)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn encode_f64<'a>(values: impl IntoIterator<Item = &'a f64>) -> Vec<u8> {
    values.into_iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn read_centers(path: &Path, expected: usize) -> Result<Vec<Vec3>> {
    let vals = decode_f64(path, &read_bytes(path)?)?;
    if vals.len() != 3 * expected {
        return Err(Error::CountMismatch {
            path: path.to_path_buf(),
            expected,
            got: vals.len() / 3,
        });
    }
    Ok(vals.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

pub fn write_centers(path: &Path, centers: &[Vec3]) -> Result<()> {
    write_atomic(path, &encode_f64(centers.iter().flatten()))
}

/// Feature rows for `rows` points; the column count follows from the size.
pub fn read_features(path: &Path, rows: usize) -> Result<Matrix> {
    let vals = decode_f64(path, &read_bytes(path)?)?;
    let cols = vals.len().checked_div(rows).unwrap_or(0);
    if cols * rows != vals.len() || (rows > 0 && cols == 0) {
        return Err(Error::CountMismatch {
            path: path.to_path_buf(),
            expected: rows,
            got: vals.len(),
        });
    }
    Ok(Matrix::from_vec(rows, cols, vals)?)
}

pub fn write_features(path: &Path, features: &Matrix) -> Result<()> {
    write_atomic(path, &encode_f64(&features.data))
}

/// File layout of one sequence directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceDir {
    pub root: PathBuf,
}

impl SequenceDir {
    /// `root/sequences/SS`.
    pub fn new(dataset: &Path, sequence: u32) -> Self {
        Self {
            root: dataset.join("sequences").join(format!("{sequence:02}")),
        }
    }

    fn file(&self, dir: &str, frame: usize, ext: &str) -> PathBuf {
        self.root.join(dir).join(format!("{frame:06}.{ext}"))
    }

    pub fn scan(&self, frame: usize) -> PathBuf {
        self.file("velodyne", frame, "bin")
    }

    pub fn labels(&self, frame: usize) -> PathBuf {
        self.file("labels", frame, "label")
    }

    pub fn predictions(&self, frame: usize) -> PathBuf {
        self.file("predictions", frame, "label")
    }

    pub fn centers(&self, frame: usize) -> PathBuf {
        self.file("centers", frame, "bin")
    }

    pub fn features(&self, frame: usize) -> PathBuf {
        self.file("features", frame, "bin")
    }

    pub fn poses(&self) -> PathBuf {
        self.root.join("poses.txt")
    }

    pub fn calib(&self) -> PathBuf {
        self.root.join("calib.txt")
    }

    /// Sorted frame indices present in `dir` with extension `ext`.
    pub fn frames_in(&self, dir: &str, ext: &str) -> Result<Vec<usize>> {
        let path = self.root.join(dir);
        let mut out = Vec::new();
        for entry in fs::read_dir(&path).map_err(io_err(&path))? {
            let p = entry.map_err(io_err(&path))?.path();
            if p.extension().and_then(|e| e.to_str()) == Some(ext) {
                if let Some(i) = p.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()) {
                    out.push(i);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }
}

/// Sorted sequence numbers under `dataset/sequences`.
pub fn list_sequences(dataset: &Path) -> Result<Vec<u32>> {
    let path = dataset.join("sequences");
    let mut out = Vec::new();
    for entry in fs::read_dir(&path).map_err(io_err(&path))? {
        let entry = entry.map_err(io_err(&path))?;
        if let Some(n) = entry.file_name().to_str().and_then(|s| s.parse().ok()) {
            out.push(n);
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// `key=value` lines, one metric per line.
pub fn format_key_values<'a>(fields: impl IntoIterator<Item = (&'a str, f64)>) -> String {
    fields.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse_key_values(path: &Path, text: &str) -> Result<Vec<(String, f64)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (k, v) = l.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected key=value".into(),
            })?;
            let v = v.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("`{v}` is not a number"),
            })?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}
