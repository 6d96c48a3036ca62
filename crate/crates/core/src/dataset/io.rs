//! On-disk layout:
//!
//! ```text
//! <root>/<split>/<seq_id>/
//!     rgb_dyn/%06d.png    depth_dyn/%06d.pfm    sem_dyn/%06d.png
//!     rgb_sta/%06d.png    depth_sta/%06d.pfm    sem_sta/%06d.png
//!     poses.csv           poses_sta.csv         camera.json
//! ```
//!
//! RGB and semantics are 8-bit PNG, depth is single-channel little-endian
//! float PFM holding normalized depth. Pose rows are
//! `index,x,y,z,roll,pitch,yaw` in the simulator's left-handed frame.
//! Masks are not stored; they are recomputed from semantics on load.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use image::{ColorType, ImageReader};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{extract_dynamic_mask, CameraRig, ClassConfig, Frame, SequencePair};
use crate::error::{Error, Result};
use crate::geometry::Pose6;

#[derive(Debug, Clone, Copy)]
enum Side {
    Dynamic,
    Static,
}

impl Side {
    fn suffix(self) -> &'static str {
        match self {
            Side::Dynamic => "dyn",
            Side::Static => "sta",
        }
    }

    fn poses_file(self) -> &'static str {
        match self {
            Side::Dynamic => "poses.csv",
            Side::Static => "poses_sta.csv",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseRow {
    index: usize,
    x: f64,
    y: f64,
    z: f64,
    roll: f64,
    pitch: f64,
    yaw: f64,
}

pub fn sequence_dir(root: &Path, split: &str, seq_id: &str) -> PathBuf {
    root.join(split).join(seq_id)
}

fn frame_path(dir: &Path, modality: &str, side: Side, index: usize, ext: &str) -> PathBuf {
    dir.join(format!("{modality}_{}", side.suffix()))
        .join(format!("{index:06}.{ext}"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes one sequence pair; existing files are overwritten.
pub fn save_sequence(root: &Path, split: &str, pair: &SequencePair) -> Result<PathBuf> {
    let dir = sequence_dir(root, split, &pair.id);
    for side in [Side::Dynamic, Side::Static] {
        for m in ["rgb", "depth", "sem"] {
            create_dir(&dir.join(format!("{m}_{}", side.suffix())))?;
        }
        let frames = match side {
            Side::Dynamic => &pair.dynamic_frames,
            Side::Static => &pair.static_frames,
        };
        for f in frames {
            write_rgb_png(&frame_path(&dir, "rgb", side, f.index, "png"), &f.rgb)?;
            write_pfm(&frame_path(&dir, "depth", side, f.index, "pfm"), &f.depth)?;
            write_gray_png(&frame_path(&dir, "sem", side, f.index, "png"), &f.semantic)?;
        }
        write_poses(&dir.join(side.poses_file()), frames)?;
    }
    let camera_path = dir.join("camera.json");
    let json = serde_json::to_string_pretty(&pair.rig)?;
    fs::write(&camera_path, json + "\n").map_err(|e| Error::io(&camera_path, e))?;
    Ok(dir)
}

/// Loads `<root>/<split>/<seq_id>` and checks every pairing invariant.
pub fn load_sequence(
    root: &Path,
    split: &str,
    seq_id: &str,
    classes: &ClassConfig,
) -> Result<SequencePair> {
    let dir = sequence_dir(root, split, seq_id);
    let camera_path = dir.join("camera.json");
    let text = fs::read_to_string(&camera_path).map_err(|e| Error::io(&camera_path, e))?;
    let rig: CameraRig = serde_json::from_str(&text)?;
    let dynamic_frames = load_side(&dir, Side::Dynamic, classes)?;
    let static_frames = load_side(&dir, Side::Static, classes)?;
    let pair = SequencePair {
        id: seq_id.to_string(),
        dynamic_frames,
        static_frames,
        rig,
    };
    pair.validate(classes)?;
    Ok(pair)
}

/// Loads every sequence of a split, ordered by sequence id.
pub fn load_split(root: &Path, split: &str, classes: &ClassConfig) -> Result<Vec<SequencePair>> {
    let split_dir = root.join(split);
    let mut ids = Vec::new();
    for entry in fs::read_dir(&split_dir).map_err(|e| Error::io(&split_dir, e))? {
        let entry = entry.map_err(|e| Error::io(&split_dir, e))?;
        if entry.path().join("camera.json").is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    ids.iter()
        .map(|id| load_sequence(root, split, id, classes))
        .collect()
}

fn load_side(dir: &Path, side: Side, classes: &ClassConfig) -> Result<Vec<Frame>> {
    let mut poses = read_poses(&dir.join(side.poses_file()))?;
    poses.sort_by_key(|(i, _)| *i);
    poses
        .into_iter()
        .map(|(index, pose)| {
            let load_err = |modality: &str, reason: String| Error::Load {
                frame: index,
                modality: format!("{modality}_{}", side.suffix()),
                reason,
            };
            let rgb = read_rgb_png(&frame_path(dir, "rgb", side, index, "png"))
                .map_err(|e| load_err("rgb", e.to_string()))?;
            let depth = read_pfm(&frame_path(dir, "depth", side, index, "pfm"))
                .map_err(|e| load_err("depth", e.to_string()))?;
            let semantic = read_gray_png(&frame_path(dir, "sem", side, index, "png"))
                .map_err(|e| load_err("sem", e.to_string()))?;
            let mask = extract_dynamic_mask(&semantic, &classes.dynamic_ids);
            Ok(Frame {
                rgb,
                depth,
                semantic,
                mask,
                pose,
                index,
            })
        })
        .collect()
}

fn write_poses(path: &Path, frames: &[Frame]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    for f in frames {
        let p = f.pose;
        w.serialize(PoseRow {
            index: f.index,
            x: p.x,
            y: p.y,
            z: p.z,
            roll: p.roll,
            pitch: p.pitch,
            yaw: p.yaw,
        })
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_poses(path: &Path) -> Result<Vec<(usize, Pose6)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Load {
        frame: 0,
        modality: "poses".into(),
        reason: format!("{}: {e}", path.display()),
    })?;
    r.deserialize::<PoseRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            Ok((
                row.index,
                Pose6::new(row.x, row.y, row.z, row.roll, row.pitch, row.yaw),
            ))
        })
        .collect()
}

pub fn write_rgb_png(path: &Path, rgb: &Array3<u8>) -> Result<()> {
    let (h, w, c) = rgb.dim();
    if c != 3 {
        return Err(Error::Contract(format!("expected 3 channels, got {c}")));
    }
    let data: Vec<u8> = rgb.iter().copied().collect();
    image::save_buffer(path, &data, w as u32, h as u32, ColorType::Rgb8)?;
    Ok(())
}

pub fn write_gray_png(path: &Path, gray: &Array2<u8>) -> Result<()> {
    let (h, w) = gray.dim();
    let data: Vec<u8> = gray.iter().copied().collect();
    image::save_buffer(path, &data, w as u32, h as u32, ColorType::L8)?;
    Ok(())
}

pub fn read_rgb_png(path: &Path) -> Result<Array3<u8>> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()?
        .into_rgb8();
    let (w, h) = img.dimensions();
    Array3::from_shape_vec((h as usize, w as usize, 3), img.into_raw())
        .map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_gray_png(path: &Path) -> Result<Array2<u8>> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()?;
    if img.color() != ColorType::L8 {
        return Err(Error::Parse(format!(
            "{}: expected 8-bit single channel, got {:?}",
            path.display(),
            img.color()
        )));
    }
    let img = img.into_luma8();
    let (w, h) = img.dimensions();
    Array2::from_shape_vec((h as usize, w as usize), img.into_raw())
        .map_err(|e| Error::Parse(e.to_string()))
}

/// Portable float map, single channel, little endian, rows bottom-to-top.
pub fn write_pfm(path: &Path, data: &Array2<f32>) -> Result<()> {
    let (h, w) = data.dim();
    let mut buf = Vec::with_capacity(32 + h * w * 4);
    write!(buf, "Pf\n{w} {h}\n-1.0\n").map_err(|e| Error::io(path, e))?;
    for v in (0..h).rev() {
        for u in 0..w {
            buf.extend_from_slice(&data[[v, u]].to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Array2<f32>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = Vec::new();
    let mut line = String::new();
    while header.len() < 3 {
        line.clear();
        if r.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(Error::Parse(format!("{}: truncated PFM header", path.display())));
        }
        header.extend(line.split_whitespace().map(str::to_owned));
    }
    let bad = |what: &str| Error::Parse(format!("{}: bad PFM {what}", path.display()));
    if header[0] != "Pf" {
        return Err(bad("magic"));
    }
    let w: usize = header[1].parse().map_err(|_| bad("width"))?;
    let h: usize = header[2].parse().map_err(|_| bad("height"))?;
    line.clear();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let scale: f32 = line.trim().parse().map_err(|_| bad("scale"))?;
    let mut raw = vec![0u8; w * h * 4];
    r.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
    let mut out = Array2::<f32>::zeros((h, w));
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let x = if scale < 0.0 {
            f32::from_le_bytes(bytes)
        } else {
            f32::from_be_bytes(bytes)
        };
        let (row, u) = (i / w, i % w);
        out[[h - 1 - row, u]] = x;
    }
    Ok(out)
}
