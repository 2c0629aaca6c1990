//! Recording I/O: per-frame point files plus a pose table.
//!
//! A recording is a directory containing
//!   - `poses.csv` with rows `timestamp,tx,ty,tz,yaw` (header optional), and
//!   - one point file per frame, either CSV rows `x,y,z,reflectivity`
//!     (header optional) or packed little-endian `f32 x,y,z,reflectivity`
//!     with extension `.bin`.
//!
//! Frame files are matched to pose rows in lexicographic filename order; the
//! row count must equal the frame-file count. On read, the first pose
//! translation is subtracted from all poses so the world origin sits at the
//! start of the recording.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::cloud::{CoordFrame, Frame, MarkPoint, PointCloud, Pose};
use crate::error::{Error, Result};

const POSES_FILE: &str = "poses.csv";

fn is_numeric_row(line: &str) -> bool {
    line.split(',').all(|tok| tok.trim().parse::<f64>().is_ok())
}

fn parse_float(tok: &str, path: &Path, line_no: usize) -> Result<f64> {
    tok.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        msg: format!("not a number: {tok:?}"),
    })
}

/// Parse one point CSV file (vehicle frame).
pub fn read_points_csv(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if idx == 0 && !is_numeric_row(trimmed) {
            continue; // header
        }
        let cols: Vec<&str> = trimmed.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("expected 4 columns, got {}", cols.len()),
            });
        }
        let p = MarkPoint::new(
            parse_float(cols[0], path, line_no)?,
            parse_float(cols[1], path, line_no)?,
            parse_float(cols[2], path, line_no)?,
            parse_float(cols[3], path, line_no)?,
        );
        p.validate().map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        })?;
        points.push(p);
    }
    Ok(PointCloud::new(points, CoordFrame::Vehicle))
}

/// Parse one packed binary point file (4 x f32 little-endian per point).
pub fn read_points_bin(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Structural(format!(
            "{}: binary length {} is not a multiple of 16",
            path.display(),
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for (i, rec) in bytes.chunks_exact(16).enumerate() {
        let f = |o: usize| f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]) as f64;
        let p = MarkPoint::new(f(0), f(4), f(8), f(12));
        p.validate().map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        })?;
        points.push(p);
    }
    Ok(PointCloud::new(points, CoordFrame::Vehicle))
}

fn read_poses(path: &Path) -> Result<Vec<(f64, Pose)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if idx == 0 && !is_numeric_row(trimmed) {
            continue;
        }
        let cols: Vec<&str> = trimmed.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("expected 5 columns, got {}", cols.len()),
            });
        }
        let ts = parse_float(cols[0], path, line_no)?;
        let t = Vector3::new(
            parse_float(cols[1], path, line_no)?,
            parse_float(cols[2], path, line_no)?,
            parse_float(cols[3], path, line_no)?,
        );
        let yaw = parse_float(cols[4], path, line_no)?;
        if !t.iter().all(|v| v.is_finite()) || !yaw.is_finite() || !ts.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: "non-finite pose value".into(),
            });
        }
        out.push((ts, Pose::new(t, yaw)));
    }
    Ok(out)
}

/// Frame point files of a recording directory, lexicographically sorted.
pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == POSES_FILE {
            continue;
        }
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") | Some("bin") => files.push(path),
            _ => {}
        }
    }
    files.sort();
    Ok(files)
}

/// Read a full recording; frames come back in timestamp order with their
/// clouds in the vehicle frame and poses shifted so the first translation
/// is the world origin.
pub fn read_recording(dir: &Path) -> Result<Vec<Frame>> {
    read_recording_with_origin(dir).map(|(frames, _)| frames)
}

/// As [`read_recording`], also returning the subtracted world origin (the
/// first pose translation) for georeferencing.
pub fn read_recording_with_origin(dir: &Path) -> Result<(Vec<Frame>, Vector3<f64>)> {
    let files = frame_files(dir)?;
    let poses_path = dir.join(POSES_FILE);
    if files.is_empty() && !poses_path.exists() {
        return Ok((Vec::new(), Vector3::zeros()));
    }
    let poses = read_poses(&poses_path)?;
    if poses.len() != files.len() {
        return Err(Error::Structural(format!(
            "{} pose rows but {} frame files in {}",
            poses.len(),
            files.len(),
            dir.display()
        )));
    }
    for w in poses.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::Structural(format!(
                "timestamps not strictly increasing ({} then {})",
                w[0].0, w[1].0
            )));
        }
    }
    let origin = poses.first().map(|(_, p)| p.translation).unwrap_or_default();
    let mut frames = Vec::with_capacity(files.len());
    for (file, (ts, pose)) in files.iter().zip(poses) {
        let cloud = match file.extension().and_then(|e| e.to_str()) {
            Some("bin") => read_points_bin(file)?,
            _ => read_points_csv(file)?,
        };
        frames.push(Frame {
            cloud,
            pose: Pose {
                translation: pose.translation - origin,
                yaw: pose.yaw,
            },
            timestamp: ts,
        });
    }
    Ok((frames, origin))
}

/// Recording writer used by the synthetic generator and perturbation tool.
pub struct RecordingWriter {
    dir: PathBuf,
    binary: bool,
    poses: Vec<(f64, Pose)>,
    next: usize,
}

impl RecordingWriter {
    pub fn create(dir: &Path, binary: bool) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(RecordingWriter {
            dir: dir.to_path_buf(),
            binary,
            poses: Vec::new(),
            next: 0,
        })
    }

    pub fn write_frame(&mut self, cloud: &PointCloud, pose: Pose, timestamp: f64) -> Result<()> {
        let ext = if self.binary { "bin" } else { "csv" };
        let path = self.dir.join(format!("frame_{:06}.{ext}", self.next));
        if self.binary {
            let mut bytes = Vec::with_capacity(cloud.len() * 16);
            for p in &cloud.points {
                for v in [p.x, p.y, p.z, p.reflectivity] {
                    bytes.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        } else {
            let mut out = String::from("x,y,z,reflectivity\n");
            for p in &cloud.points {
                out.push_str(&format!("{},{},{},{}\n", p.x, p.y, p.z, p.reflectivity));
            }
            fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        }
        self.poses.push((timestamp, pose));
        self.next += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let path = self.dir.join(POSES_FILE);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "timestamp,tx,ty,tz,yaw").map_err(|e| Error::io(&path, e))?;
        for (ts, pose) in &self.poses {
            writeln!(
                w,
                "{},{},{},{},{}",
                ts, pose.translation.x, pose.translation.y, pose.translation.z, pose.yaw
            )
            .map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
