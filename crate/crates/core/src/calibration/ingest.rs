//! Reading accuracy tables and video frames from disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::FrameImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub task_id: String,
    pub metric_name: String,
    pub value: f64,
}

/// Accuracy values by metric name, then task id. LPIPS is stored negated so
/// that larger is always better.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccuracyTable {
    metrics: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Metrics whose raw values are distances and get negated on ingest.
fn is_distance(metric: &str) -> bool {
    metric.eq_ignore_ascii_case("lpips")
}

impl AccuracyTable {
    /// Adds a raw row, applying the sign convention. Duplicate
    /// `(task_id, metric_name)` rows are rejected.
    pub fn insert(&mut self, row: AccuracyRow) -> Result<()> {
        if !row.value.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite accuracy for task {} metric {}",
                row.task_id, row.metric_name
            )));
        }
        let value = if is_distance(&row.metric_name) { -row.value } else { row.value };
        let slot = self.metrics.entry(row.metric_name.clone()).or_default();
        if slot.insert(row.task_id.clone(), value).is_some() {
            return Err(Error::Config(format!(
                "duplicate accuracy row for task {} metric {}",
                row.task_id, row.metric_name
            )));
        }
        Ok(())
    }

    pub fn metric(&self, name: &str) -> Option<&BTreeMap<String, f64>> {
        self.metrics.get(name)
    }

    pub fn metric_names(&self) -> impl Iterator<Item = &str> {
        self.metrics.keys().map(String::as_str)
    }

    /// The table's only metric, if it has exactly one.
    pub fn sole_metric(&self) -> Option<&str> {
        (self.metrics.len() == 1).then(|| self.metrics.keys().next().unwrap().as_str())
    }

    /// Rows with values in their stored (sign-adjusted) convention undone, so
    /// that writing and re-reading round-trips.
    pub fn rows(&self) -> Vec<AccuracyRow> {
        self.metrics
            .iter()
            .flat_map(|(metric, tasks)| {
                tasks.iter().map(move |(task, &v)| AccuracyRow {
                    task_id: task.clone(),
                    metric_name: metric.clone(),
                    value: if is_distance(metric) { -v } else { v },
                })
            })
            .collect()
    }
}

/// Reads a CSV with header `task_id,metric_name,value`.
pub fn read_accuracy_csv(path: impl AsRef<Path>) -> Result<AccuracyTable> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected = ["task_id", "metric_name", "value"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Config(format!(
            "{}: header must be task_id,metric_name,value",
            path.display()
        )));
    }
    let mut table = AccuracyTable::default();
    for row in reader.deserialize::<AccuracyRow>() {
        table.insert(row?)?;
    }
    Ok(table)
}

pub fn write_accuracy_csv(path: impl AsRef<Path>, rows: &[AccuracyRow]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    // explicit so that an empty table still has its header
    writer.write_record(["task_id", "metric_name", "value"])?;
    for r in rows {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

fn frame_index(name: &str) -> Option<u64> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    (digits.len() == 6 && digits.bytes().all(|b| b.is_ascii_digit()))
        .then(|| digits.parse().ok())
        .flatten()
}

/// Frame files `frame_%06d.png` in `dir`, in index order.
pub fn frame_paths(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut frames = Vec::new();
    for entry in std::fs::read_dir(dir.as_ref())? {
        let entry = entry?;
        let name = entry.file_name();
        if let Some(i) = name.to_str().and_then(frame_index) {
            frames.push((i, entry.path()));
        }
    }
    frames.sort();
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

/// Decodes a PNG to `[0, 1]` reals; alpha is dropped, palettes expanded and
/// gray-alpha reduced to gray.
pub fn read_png(path: impl AsRef<Path>) -> Result<FrameImage> {
    let path = path.as_ref();
    let image_err = |e: png::DecodingError| Error::Image(format!("{}: {e}", path.display()));
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(image_err)?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Image(format!("{}: image too large", path.display())))?];
    let info = reader.next_frame(&mut buf).map_err(image_err)?;
    let (width, height) = (info.width as usize, info.height as usize);
    let (in_channels, out_channels) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => {
            return Err(Error::Image(format!("{}: unexpanded palette image", path.display())))
        }
    };
    let bytes = &buf[..info.buffer_size()];
    let samples: Vec<f64> = match info.bit_depth {
        png::BitDepth::Sixteen => bytes
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect(),
        png::BitDepth::Eight => bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        depth => {
            return Err(Error::Image(format!("{}: unsupported bit depth {depth:?}", path.display())))
        }
    };
    let data = samples
        .chunks_exact(in_channels)
        .flat_map(|px| px[..out_channels].iter().copied())
        .collect();
    FrameImage::new(width, height, out_channels, data)
}

/// Writes an 8-bit PNG; used to build fixtures.
pub fn write_png(path: impl AsRef<Path>, frame: &FrameImage) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    let mut encoder = png::Encoder::new(file, frame.width() as u32, frame.height() as u32);
    encoder.set_color(if frame.channels() == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    encoder.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = frame.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let encode_err = |e: png::EncodingError| Error::Image(e.to_string());
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)?;
    Ok(())
}

/// Loads every frame of a video directory.
pub fn read_video_frames(dir: impl AsRef<Path>) -> Result<Vec<FrameImage>> {
    let paths = frame_paths(&dir)?;
    if paths.is_empty() {
        return Err(Error::MissingVideo(format!("no frame_%06d.png files in {}", dir.as_ref().display())));
    }
    paths.iter().map(read_png).collect()
}

/// Resizes both sequences to the minimum common width and height.
pub fn resize_to_common(a: &[FrameImage], b: &[FrameImage]) -> Result<(Vec<FrameImage>, Vec<FrameImage>)> {
    let all = a.iter().chain(b);
    let width = all.clone().map(FrameImage::width).min().ok_or(Error::InsufficientSamples { needed: 1, got: 0 })?;
    let height = all.map(FrameImage::height).min().unwrap();
    let resize = |frames: &[FrameImage]| {
        frames
            .iter()
            .map(|f| f.resize_bilinear(width, height))
            .collect::<Result<Vec<_>>>()
    };
    Ok((resize(a)?, resize(b)?))
}
