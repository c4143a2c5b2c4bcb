use std::path::Path;

use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start_frame: usize,
    pub end_frame: usize,
    pub length: usize,
}

impl Segment {
    fn new(start: usize, end: usize) -> Self {
        Segment {
            start_frame: start,
            end_frame: end,
            length: end - start + 1,
        }
    }
}

const THUMB: u32 = 32;

fn thumbnail(frame: &RgbImage) -> GrayImage {
    let gray = imageops::grayscale(frame);
    imageops::resize(&gray, THUMB, THUMB, FilterType::Triangle)
}

fn mean_abs_diff(a: &GrayImage, b: &GrayImage) -> f64 {
    let total: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| (x as i32 - y as i32).unsigned_abs() as u64)
        .sum();
    total as f64 / a.as_raw().len() as f64
}

/// Cuts wherever the mean absolute difference between consecutive
/// 32x32 grayscale thumbnails exceeds `pixel_thresh` (0-255 scale).
/// Segments shorter than `min_len` merge into the next one; a short final
/// segment merges into the previous one.
pub fn segment_frames(
    frames: &[RgbImage],
    pixel_thresh: f64,
    min_len: usize,
) -> Result<Vec<Segment>, IngestError> {
    if frames.is_empty() {
        return Err(IngestError::EmptySequence);
    }
    if !(pixel_thresh > 0.0) || min_len == 0 {
        return Err(IngestError::InvalidConfig(format!(
            "pixel_thresh must be positive and min_len at least 1 (got {pixel_thresh}, {min_len})"
        )));
    }
    let thumbs: Vec<GrayImage> = frames.iter().map(thumbnail).collect();
    let mut cuts: Vec<usize> = (1..frames.len())
        .filter(|&i| mean_abs_diff(&thumbs[i - 1], &thumbs[i]) > pixel_thresh)
        .collect();
    cuts.push(frames.len());

    let mut out: Vec<Segment> = Vec::new();
    let mut start = 0;
    for end in cuts {
        if end - start >= min_len {
            out.push(Segment::new(start, end - 1));
            start = end;
        }
    }
    if start < frames.len() {
        match out.last_mut() {
            Some(last) => *last = Segment::new(last.start_frame, frames.len() - 1),
            None => out.push(Segment::new(0, frames.len() - 1)),
        }
    }
    Ok(out)
}

/// Frames from a directory, ordered by file name.
pub fn load_frames(dir: &Path) -> Result<Vec<RgbImage>, IngestError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| IngestError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            image::open(p).map(|i| i.to_rgb8()).map_err(|e| IngestError::Image {
                path: p.clone(),
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(v: u8, n: usize) -> Vec<RgbImage> {
        vec![RgbImage::from_pixel(16, 16, image::Rgb([v, v, v])); n]
    }

    #[test]
    fn constant_sequence_is_one_segment() {
        let s = segment_frames(&solid(10, 100), 5.0, 3).unwrap();
        assert_eq!(s, vec![Segment::new(0, 99)]);
    }

    #[test]
    fn hard_cut() {
        let mut f = solid(10, 20);
        f.extend(solid(200, 20));
        let s = segment_frames(&f, 30.0, 5).unwrap();
        assert_eq!(s, vec![Segment::new(0, 19), Segment::new(20, 39)]);
    }

    #[test]
    fn short_segments_merge() {
        let mut f = solid(10, 2);
        f.extend(solid(200, 10));
        f.extend(solid(90, 2));
        let s = segment_frames(&f, 30.0, 5).unwrap();
        assert_eq!(s, vec![Segment::new(0, 13)]);
        let mut f = solid(10, 6);
        f.extend(solid(200, 2));
        f.extend(solid(90, 6));
        assert_eq!(segment_frames(&f, 30.0, 5).unwrap(), vec![Segment::new(0, 5), Segment::new(6, 13)]);
    }

    #[test]
    fn errors() {
        assert!(matches!(segment_frames(&[], 1.0, 1), Err(IngestError::EmptySequence)));
        assert!(segment_frames(&solid(0, 3), 0.0, 1).is_err());
    }
}
