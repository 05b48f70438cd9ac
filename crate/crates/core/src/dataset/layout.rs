//! On-disk dataset layouts.
//!
//! ```text
//! root/manifest.json
//! root/frames/<frame_id>.png   interleaved frame, 16-bit grayscale
//! root/gt/<frame_id>.json      optional simulator ground truth
//! ```
//!
//! The `orpam4k` layout accepts 8- or 16-bit grayscale PNGs in `root/frames/`
//! or directly in `root/`, with or without a manifest.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use super::{split_dataset, DatasetError, Frame, FrameSource};
use crate::fsutil;
use crate::image::Image;
use crate::scan_sim::{GroundTruthRecord, SimulationPlan};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Synthetic,
    Orpam4k,
}

impl std::str::FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "synthetic" => Ok(Layout::Synthetic),
            "orpam4k" => Ok(Layout::Orpam4k),
            _ => Err(format!("unknown layout {s:?} (expected synthetic or orpam4k)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub layout: Layout,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<String>,
    pub splits: SplitIds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationPlan>,
}

/// A frame to be written.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub frame_id: String,
    pub image: Image,
    pub ground_truth: Option<GroundTruthRecord>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `img` as 16-bit grayscale, `round(v * 65535)` after clipping.
pub fn write_png16(path: &Path, img: &Image) -> Result<(), DatasetError> {
    let (h, w) = img.dims();
    let raw: Vec<u16> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer matches dimensions");
    let mut bytes = Cursor::new(Vec::new());
    buf.write_to(&mut bytes, ImageFormat::Png)
        .map_err(|e| DatasetError::MalformedImage {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    fsutil::write_atomic(path, bytes.get_ref()).map_err(io_err(path))
}

/// Reads a PNG into `[0, 1]`: 16-bit as `v / 65535`, 8-bit as `v / 255`.
/// Colour images are converted to luma.
pub fn read_png(path: &Path) -> Result<Image, DatasetError> {
    let malformed = |reason: String| DatasetError::MalformedImage {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = fs::read(path).map_err(io_err(path))?;
    let decoded =
        image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| malformed(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let data: Vec<f64> = match decoded {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => other
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
    };
    Ok(Image::from_vec(h, w, data))
}

pub fn read_manifest(root: &Path) -> Result<Option<Manifest>, DatasetError> {
    let path = root.join("manifest.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DatasetError::MalformedMetadata {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(DatasetError::MalformedMetadata {
            path,
            reason: format!(
                "schema_version {} is not supported (expected {})",
                manifest.schema_version, MANIFEST_SCHEMA_VERSION
            ),
        });
    }
    Ok(Some(manifest))
}

/// Writes frames, sidecars and the manifest. All entries must share
/// dimensions and have even width.
pub fn write_dataset(
    root: &Path,
    layout: Layout,
    entries: &[DatasetEntry],
    splits: SplitIds,
    simulation: Option<SimulationPlan>,
) -> Result<Manifest, DatasetError> {
    let (height, width) = entries.first().map_or((0, 0), |e| e.image.dims());
    for e in entries {
        let path = root.join("frames").join(format!("{}.png", e.frame_id));
        if e.image.dims() != (height, width) {
            return Err(DatasetError::InconsistentDimensions {
                path,
                expected: (height, width),
                found: e.image.dims(),
            });
        }
        if width % 2 != 0 {
            return Err(DatasetError::OddWidth(width));
        }
        write_png16(&path, &e.image)?;
        if let Some(gt) = &e.ground_truth {
            let gt_path = root.join("gt").join(format!("{}.json", e.frame_id));
            fsutil::write_json_atomic(&gt_path, gt).map_err(io_err(&gt_path))?;
        }
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        layout,
        height,
        width,
        frames: entries.iter().map(|e| e.frame_id.clone()).collect(),
        splits,
        simulation,
    };
    let path = root.join("manifest.json");
    fsutil::write_json_atomic(&path, &manifest).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn synthetic_frame_id(index: usize) -> String {
    format!("frame_{index:05}")
}

/// Simulates `frames` frames from `plan` and writes them under `root`.
/// Fewer than 3 frames all go to the training split.
pub fn write_synthetic_dataset(
    root: &Path,
    plan: &SimulationPlan,
    frames: usize,
    ratios: [f64; 3],
    split_seed: u64,
) -> Result<Manifest, DatasetError> {
    let mut entries = Vec::with_capacity(frames);
    for index in 0..frames {
        let (gt, pair) = plan.frame(index)?;
        entries.push(DatasetEntry {
            frame_id: synthetic_frame_id(index),
            image: pair.interleaved,
            ground_truth: Some(GroundTruthRecord::from_ground_truth(&gt)),
        });
    }
    let ids: Vec<String> = entries.iter().map(|e| e.frame_id.clone()).collect();
    let splits = if ids.len() >= 3 {
        let s = split_dataset(&ids, ratios, split_seed)?;
        SplitIds {
            train: s.train_ids,
            val: s.val_ids,
            test: s.test_ids,
        }
    } else {
        SplitIds {
            train: ids,
            ..SplitIds::default()
        }
    };
    write_dataset(root, Layout::Synthetic, &entries, splits, Some(plan.clone()))
}

fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>, DatasetError> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            if let Some(stem) = path.file_stem() {
                out.push((stem.to_string_lossy().into_owned(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every frame under `root`, in manifest order when a manifest exists,
/// otherwise sorted by file name. An empty directory yields no frames.
pub fn load_dataset(root: &Path, layout: Layout) -> Result<Vec<Frame>, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::MissingDirectory(root.to_path_buf()));
    }
    let manifest = read_manifest(root)?;
    let frames_dir = root.join("frames");
    let files: Vec<(String, PathBuf)> = match &manifest {
        Some(m) => m
            .frames
            .iter()
            .map(|id| (id.clone(), frames_dir.join(format!("{id}.png"))))
            .collect(),
        None => {
            let mut found = png_stems(&frames_dir)?;
            if found.is_empty() && layout == Layout::Orpam4k {
                found = png_stems(root)?;
            }
            found
        }
    };
    let source = match layout {
        Layout::Synthetic => FrameSource::Synthetic,
        Layout::Orpam4k => FrameSource::Real,
    };
    let mut expected = manifest.as_ref().map(|m| (m.height, m.width));
    let mut frames = Vec::with_capacity(files.len());
    for (id, path) in files {
        let img = read_png(&path)?;
        if img.width() % 2 != 0 {
            return Err(DatasetError::MalformedImage {
                path,
                reason: format!("width {} is odd", img.width()),
            });
        }
        match expected {
            Some(dims) if dims != img.dims() => {
                return Err(DatasetError::InconsistentDimensions {
                    path,
                    expected: dims,
                    found: img.dims(),
                })
            }
            None => expected = Some(img.dims()),
            _ => {}
        }
        let gt = if layout == Layout::Synthetic {
            read_ground_truth(&root.join("gt").join(format!("{id}.json")))?
        } else {
            None
        };
        frames.push(Frame::new(id, img, source)?.with_ground_truth(gt));
    }
    Ok(frames)
}

fn read_ground_truth(path: &Path) -> Result<Option<GroundTruthRecord>, DatasetError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| DatasetError::MalformedMetadata {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png16_roundtrip_is_exact_on_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::from_fn(5, 6, |i, j| ((i * 6 + j) * 2000) as f64 / 65535.0);
        write_png16(&p, &img).unwrap();
        assert_eq!(read_png(&p).unwrap(), img);
    }

    #[test]
    fn reads_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.png");
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(2, 1, vec![0, 255]).unwrap();
        buf.save(&p).unwrap();
        assert_eq!(read_png(&p).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn synthetic_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let plan = SimulationPlan::desk_scale(3);
        let m = write_synthetic_dataset(dir.path(), &plan, 5, [0.6, 0.2, 0.2], 1).unwrap();
        assert_eq!(m.frames.len(), 5);
        assert_eq!(m.splits.train.len() + m.splits.val.len() + m.splits.test.len(), 5);
        let frames = load_dataset(dir.path(), Layout::Synthetic).unwrap();
        assert_eq!(frames.len(), 5);
        for (k, f) in frames.iter().enumerate() {
            let (gt, _) = plan.frame(k).unwrap();
            assert_eq!(f.ground_truth, Some(GroundTruthRecord::from_ground_truth(&gt)));
            assert_eq!(f.interleaved.dims(), (128, 64));
        }
        assert_eq!(read_manifest(dir.path()).unwrap().unwrap(), m);
    }

    #[test]
    fn empty_and_missing_directories() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path(), Layout::Synthetic).unwrap().is_empty());
        assert!(load_dataset(dir.path(), Layout::Orpam4k).unwrap().is_empty());
        assert!(matches!(
            load_dataset(&dir.path().join("nope"), Layout::Synthetic),
            Err(DatasetError::MissingDirectory(_))
        ));
    }

    #[test]
    fn odd_width_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        write_png16(&dir.path().join("frames/a.png"), &Image::zeros(4, 5)).unwrap();
        assert!(matches!(
            load_dataset(dir.path(), Layout::Orpam4k),
            Err(DatasetError::MalformedImage { .. })
        ));
    }

    #[test]
    fn undecodable_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.png"), b"not a png").unwrap();
        assert!(matches!(
            load_dataset(dir.path(), Layout::Orpam4k),
            Err(DatasetError::MalformedImage { .. })
        ));
    }

    #[test]
    fn inconsistent_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        write_png16(&dir.path().join("a.png"), &Image::zeros(4, 4)).unwrap();
        write_png16(&dir.path().join("b.png"), &Image::zeros(4, 6)).unwrap();
        assert!(matches!(
            load_dataset(dir.path(), Layout::Orpam4k),
            Err(DatasetError::InconsistentDimensions { .. })
        ));
    }

    #[test]
    fn schema_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("manifest.json"),
            r#"{"schema_version":99,"layout":"synthetic","height":4,"width":4,"frames":[],"splits":{"train":[],"val":[],"test":[]}}"#,
        )
        .unwrap();
        assert!(matches!(
            load_dataset(dir.path(), Layout::Synthetic),
            Err(DatasetError::MalformedMetadata { .. })
        ));
    }
}
