//! On-disk datasets, preprocessing, density maps and saliency export.
//!
//! Layout of a dataset root:
//!
//! ```text
//! <root>/<video-id>/frames/00001.png   8-bit RGB, numbered contiguously from 1
//! <root>/<video-id>/fixations.csv      frame,row,col (1-based frame, 0-based pixels)
//! <root>/<video-id>/maps/00001.png     optional 8-bit gray density maps
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Rgb, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::FixationRecord;
use crate::tensor::Tensor;

pub const FRAMES_DIR: &str = "frames";
pub const MAPS_DIR: &str = "maps";
pub const FIXATIONS_FILE: &str = "fixations.csv";

/// Decoded frames of one video.
#[derive(Clone, Debug)]
pub struct VideoSequence {
    pub id: String,
    pub frames: Vec<RgbImage>,
    /// `(H, W)` shared by every frame.
    pub native_size: [usize; 2],
    pub fps: Option<f64>,
}

impl VideoSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

pub fn frame_file_name(frame: usize) -> String {
    format!("{frame:05}.png")
}

fn video_id(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Lists `NNNNN.png` files in `dir`, checking numbering is contiguous from 1.
fn numbered_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut numbered = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let number = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::data(&path, "frame file name is not a number"))?;
        numbered.push((number, path));
    }
    numbered.sort();
    if numbered.is_empty() {
        return Err(Error::data(dir, "no frames found"));
    }
    for (i, (number, path)) in numbered.iter().enumerate() {
        if *number != i + 1 {
            return Err(Error::data(
                path,
                format!("non-contiguous frame numbering: expected {}, found {number}", i + 1),
            ));
        }
    }
    Ok(numbered.into_iter().map(|(_, p)| p).collect())
}

/// Loads `<dir>/frames/*.png` in frame order.
pub fn load_video(dir: &Path) -> Result<VideoSequence> {
    let files = numbered_pngs(&dir.join(FRAMES_DIR))?;
    let mut frames = Vec::with_capacity(files.len());
    let mut size = None;
    for path in &files {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .to_rgb8();
        let dims = [img.height() as usize, img.width() as usize];
        match size {
            None => size = Some(dims),
            Some(s) if s != dims => {
                return Err(Error::data(path, format!("frame size {dims:?} differs from {s:?}")));
            }
            _ => {}
        }
        frames.push(img);
    }
    Ok(VideoSequence {
        id: video_id(dir),
        frames,
        native_size: size.expect("at least one frame"),
        fps: None,
    })
}

/// Reads `fixations.csv` into one record per frame. A header line is optional.
pub fn load_fixations(path: &Path, frames: usize, size: [usize; 2]) -> Result<Vec<FixationRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records: Vec<FixationRecord> = (0..frames).map(|_| FixationRecord::new(size, Vec::new())).collect();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("frame")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<Vec<usize>> = fields.iter().map(|f| f.parse().ok()).collect();
        let Some([frame, row, col]) = parsed.as_deref().and_then(|p| <[usize; 3]>::try_from(p).ok()) else {
            return Err(Error::data(path, format!("line {}: expected frame,row,col", lineno + 1)));
        };
        if frame == 0 || frame > frames {
            return Err(Error::data(
                path,
                format!("line {}: frame {frame} outside 1..={frames}", lineno + 1),
            ));
        }
        if row >= size[0] || col >= size[1] {
            return Err(Error::data(
                path,
                format!("line {}: fixation ({row}, {col}) outside frame {size:?}", lineno + 1),
            ));
        }
        records[frame - 1].points.push((row, col));
    }
    Ok(records)
}

pub fn write_fixations(path: &Path, records: &[FixationRecord]) -> Result<()> {
    let mut out = String::from("frame,row,col\n");
    for (i, rec) in records.iter().enumerate() {
        for (r, c) in &rec.points {
            writeln!(out, "{},{r},{c}", i + 1).expect("write to string");
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads `<dir>/maps/*.png` as `[0, 1]` planes, or `None` when absent.
pub fn load_density_maps(dir: &Path) -> Result<Option<Vec<Tensor>>> {
    let maps_dir = dir.join(MAPS_DIR);
    if !maps_dir.is_dir() {
        return Ok(None);
    }
    load_gray_sequence(&maps_dir).map(Some)
}

/// Every `NNNNN.png` in `dir` as a gray `[0, 1]` plane, in frame order.
pub fn load_gray_sequence(dir: &Path) -> Result<Vec<Tensor>> {
    numbered_pngs(dir)?.iter().map(|p| load_gray(p)).collect()
}

/// An 8-bit grayscale PNG as an `(H, W)` tensor scaled to `[0, 1]`.
pub fn load_gray(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    Tensor::from_vec(vec![h as usize, w as usize], data)
}

/// Bilinear resize of a row-major plane with half-pixel centres.
/// Resizing to the same size returns the input unchanged.
pub fn resize_bilinear(src: &[f64], from: [usize; 2], to: [usize; 2]) -> Vec<f64> {
    if from == to {
        return src.to_vec();
    }
    let [sh, sw] = from;
    let [dh, dw] = to;
    let axis = |n_src: usize, n_dst: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_src as f64 / n_dst as f64;
        (0..n_dst)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
                let lo = (pos.floor() as usize).min(n_src - 1);
                let hi = (lo + 1).min(n_src - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let rows = axis(sh, dh);
    let cols = axis(sw, dw);
    let mut out = Vec::with_capacity(dh * dw);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = src[r0 * sw + c0] * (1.0 - fc) + src[r0 * sw + c1] * fc;
            let bottom = src[r1 * sw + c0] * (1.0 - fc) + src[r1 * sw + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Bilinear resize to `size`, then `x / 127.5 - 1` per channel. Returns `(3, H, W)`.
pub fn preprocess(frame: &RgbImage, size: [usize; 2]) -> Tensor {
    let native = [frame.height() as usize, frame.width() as usize];
    let mut data = Vec::with_capacity(3 * size[0] * size[1]);
    for ch in 0..3 {
        let plane: Vec<f64> = frame.pixels().map(|p| f64::from(p.0[ch])).collect();
        data.extend(resize_bilinear(&plane, native, size).into_iter().map(|v| v / 127.5 - 1.0));
    }
    Tensor::from_vec(vec![3, size[0], size[1]], data).expect("preprocess shape")
}

/// Sum of isotropic Gaussians at the fixations, each truncated at 4 sigma,
/// normalized to sum 1. Returns `(H, W)`.
pub fn density_from_fixations(fix: &FixationRecord, sigma: f64) -> Result<Tensor> {
    if fix.points.is_empty() {
        return Err(Error::InvalidArgument("density map needs at least one fixation".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let [h, w] = fix.size;
    let mut map = vec![0.0; h * w];
    let radius = 4.0 * sigma;
    let reach = radius.ceil() as isize;
    for &(r, c) in &fix.points {
        let (r, c) = (r as isize, c as isize);
        for y in (r - reach).max(0)..(r + reach + 1).min(h as isize) {
            for x in (c - reach).max(0)..(c + reach + 1).min(w as isize) {
                let d2 = ((y - r) * (y - r) + (x - c) * (x - c)) as f64;
                if d2 <= radius * radius {
                    map[y as usize * w + x as usize] += (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
    }
    let total: f64 = map.iter().sum();
    map.iter_mut().for_each(|v| *v /= total);
    Tensor::from_vec(vec![h, w], map)
}

/// Default Gaussian width for a frame: `W / 20`.
pub fn default_sigma(size: [usize; 2]) -> f64 {
    size[1] as f64 / 20.0
}

/// Linear 8-bit quantization: 0 maps to 0 and the maximum to 255. Maps
/// without a positive maximum, and constant maps, come out all 255.
pub fn quantize(map: &[f64]) -> Vec<u8> {
    let max = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = map.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || max == min {
        return vec![255; map.len()];
    }
    map.iter()
        .map(|&v| (v.max(0.0) / max * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

fn save_gray(path: &Path, pixels: Vec<u8>, size: [usize; 2]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let img = GrayImage::from_raw(size[1] as u32, size[0] as u32, pixels).expect("gray buffer size");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes an `(H, W)` saliency map as an 8-bit PNG at `native_size`.
pub fn export_saliency(map: &Tensor, path: &Path, native_size: [usize; 2]) -> Result<()> {
    let [h, w] = <[usize; 2]>::try_from(map.shape()).map_err(|_| Error::InvalidShape {
        op: "export_saliency",
        detail: format!("expected an (H, W) map, got {:?}", map.shape()),
    })?;
    let resized = resize_bilinear(map.data(), [h, w], native_size);
    save_gray(path, quantize(&resized), native_size)
}

/// Every `<root>/<id>` directory that has a `frames/` subdirectory, by id.
pub fn list_videos(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join(FRAMES_DIR).is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::data(root, "no videos (directories with frames/) found"));
    }
    Ok(dirs)
}

/// A video prepared for the network: preprocessed frames, a target density
/// per frame and the fixations, all at the working resolution.
#[derive(Clone, Debug)]
pub struct PreparedVideo {
    pub id: String,
    pub native_size: [usize; 2],
    /// `(3, H, W)` each.
    pub frames: Vec<Tensor>,
    /// `(H, W)` each, nonnegative with positive sum.
    pub targets: Vec<Tensor>,
    pub fixations: Vec<FixationRecord>,
}

impl PreparedVideo {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn scale_point(p: (usize, usize), from: [usize; 2], to: [usize; 2]) -> (usize, usize) {
    let s = |v: usize, a: usize, b: usize| (((v as f64 + 0.5) * b as f64 / a as f64) as usize).min(b - 1);
    (s(p.0, from[0], to[0]), s(p.1, from[1], to[1]))
}

/// Loads one video directory and brings it to `input_size`.
pub fn prepare_video(dir: &Path, input_size: [usize; 2]) -> Result<PreparedVideo> {
    let video = load_video(dir)?;
    let native = video.native_size;
    let fix_path = dir.join(FIXATIONS_FILE);
    let fixations = load_fixations(&fix_path, video.len(), native)?;
    let maps = load_density_maps(dir)?;
    if let Some(maps) = &maps {
        if maps.len() != video.len() {
            return Err(Error::data(
                dir.join(MAPS_DIR),
                format!("{} maps for {} frames", maps.len(), video.len()),
            ));
        }
    }
    let scaled: Vec<FixationRecord> = fixations
        .iter()
        .map(|f| FixationRecord::new(input_size, f.points.iter().map(|&p| scale_point(p, native, input_size)).collect()))
        .collect();
    let mut targets = Vec::with_capacity(video.len());
    for (i, fix) in scaled.iter().enumerate() {
        let target = match &maps {
            Some(maps) => {
                let [mh, mw] = <[usize; 2]>::try_from(maps[i].shape()).expect("gray map");
                Tensor::from_vec(input_size.to_vec(), resize_bilinear(maps[i].data(), [mh, mw], input_size))?
            }
            None => density_from_fixations(fix, default_sigma(input_size)).map_err(|_| {
                Error::data(&fix_path, format!("frame {} has neither fixations nor a density map", i + 1))
            })?,
        };
        if !(target.sum() > 0.0) {
            return Err(Error::data(dir, format!("frame {} has an all-zero density map", i + 1)));
        }
        targets.push(target);
    }
    Ok(PreparedVideo {
        id: video.id,
        native_size: native,
        frames: video.frames.iter().map(|f| preprocess(f, input_size)).collect(),
        targets,
        fixations: scaled,
    })
}

/// Loads every video under `root`.
pub fn prepare_dataset(root: &Path, input_size: [usize; 2]) -> Result<Vec<PreparedVideo>> {
    list_videos(root)?
        .iter()
        .map(|dir| prepare_video(dir, input_size))
        .collect()
}

/// Parameters of the moving-blob generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub videos: usize,
    pub frames: usize,
    /// `(H, W)`.
    pub size: [usize; 2],
    pub blobs: usize,
    /// Trajectory waypoints per video (piecewise-linear path between them).
    #[serde(default = "default_waypoints")]
    pub waypoints: usize,
    #[serde(default = "default_fixations_per_frame")]
    pub fixations_per_frame: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_waypoints() -> usize {
    4
}
fn default_fixations_per_frame() -> usize {
    8
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            videos: 6,
            frames: 70,
            size: [32, 64],
            blobs: 1,
            waypoints: 4,
            fixations_per_frame: 8,
            seed: 0,
        }
    }
}

/// Blob centre `(row, col)` of every blob at every frame.
fn trajectories<R: Rng>(p: &SynthParams, rng: &mut R) -> Vec<Vec<(f64, f64)>> {
    let [h, w] = p.size;
    let margin = |d: usize| (d as f64 * 0.15).max(1.0);
    let mut paths = Vec::with_capacity(p.blobs);
    for _ in 0..p.blobs {
        let points: Vec<(f64, f64)> = (0..p.waypoints.max(2))
            .map(|_| {
                (
                    rng.random_range(margin(h)..h as f64 - margin(h)),
                    rng.random_range(margin(w)..w as f64 - margin(w)),
                )
            })
            .collect();
        let segments = points.len() - 1;
        let path = (0..p.frames)
            .map(|f| {
                let u = if p.frames > 1 {
                    f as f64 / (p.frames - 1) as f64 * segments as f64
                } else {
                    0.0
                };
                let seg = (u.floor() as usize).min(segments - 1);
                let t = u - seg as f64;
                let (a, b) = (points[seg], points[seg + 1]);
                (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
            })
            .collect();
        paths.push(path);
    }
    paths
}

/// Writes a synthetic dataset of moving bright blobs over a textured
/// background. Ground-truth maps are Gaussians centred on the blobs and
/// fixations are drawn around the blob centres.
pub fn synth_dataset<R: Rng>(root: &Path, params: &SynthParams, rng: &mut R) -> Result<Vec<PathBuf>> {
    if params.videos == 0 || params.frames == 0 || params.blobs == 0 || params.size.contains(&0) {
        return Err(Error::InvalidArgument(format!("degenerate synth params {params:?}")));
    }
    let [h, w] = params.size;
    let blob_sigma = (w as f64 / 16.0).max(1.0);
    let map_sigma = default_sigma(params.size);
    let fix_sigma = (w as f64 / 40.0).max(0.5);
    let mut dirs = Vec::with_capacity(params.videos);
    for v in 0..params.videos {
        let dir = root.join(format!("video{:03}", v + 1));
        fs::create_dir_all(dir.join(FRAMES_DIR)).map_err(|e| Error::io(&dir, e))?;
        fs::create_dir_all(dir.join(MAPS_DIR)).map_err(|e| Error::io(&dir, e))?;

        // static texture: a few random plane waves plus per-pixel noise
        let waves: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.1..0.6),
                    rng.random_range(0.1..0.6),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let texture: Vec<f64> = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                let wave: f64 = waves.iter().map(|(fy, fx, ph)| (fy * y + fx * x + ph).sin()).sum();
                70.0 + 12.0 * wave + rng.random_range(-10.0..10.0)
            })
            .collect();
        let paths = trajectories(params, rng);
        let jitter = Normal::new(0.0, fix_sigma).expect("positive sigma");
        let mut records = Vec::with_capacity(params.frames);
        for f in 0..params.frames {
            let centres: Vec<(f64, f64)> = paths.iter().map(|p| p[f]).collect();
            let mut frame = RgbImage::new(w as u32, h as u32);
            let mut map = vec![0.0; h * w];
            for (i, px) in frame.pixels_mut().enumerate() {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                let mut blob = 0.0f64;
                for &(cy, cx) in &centres {
                    let d2 = (y - cy).powi(2) + (x - cx).powi(2);
                    blob = blob.max((-d2 / (2.0 * blob_sigma * blob_sigma)).exp());
                    map[i] += (-d2 / (2.0 * map_sigma * map_sigma)).exp();
                }
                let base = texture[i];
                let v = |tint: f64| (base * (1.0 - blob) + tint * blob).round().clamp(0.0, 255.0) as u8;
                *px = Rgb([v(255.0), v(240.0), v(200.0)]);
            }
            save_gray(&dir.join(MAPS_DIR).join(frame_file_name(f + 1)), quantize(&map), params.size)?;
            let frame_path = dir.join(FRAMES_DIR).join(frame_file_name(f + 1));
            frame.save(&frame_path).map_err(|source| Error::Image {
                path: frame_path.clone(),
                source,
            })?;
            let mut points = Vec::with_capacity(params.fixations_per_frame);
            for k in 0..params.fixations_per_frame {
                let (cy, cx) = centres[k % centres.len()];
                let r = (cy + jitter.sample(rng)).round().clamp(0.0, (h - 1) as f64) as usize;
                let c = (cx + jitter.sample(rng)).round().clamp(0.0, (w - 1) as f64) as usize;
                points.push((r, c));
            }
            records.push(FixationRecord::new(params.size, points));
        }
        write_fixations(&dir.join(FIXATIONS_FILE), &records)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn preprocess_constants() {
        let gray = RgbImage::from_pixel(384, 224, Rgb([128, 128, 128]));
        let t = preprocess(&gray, [224, 384]);
        assert_eq!(t.shape(), [3, 224, 384]);
        let expect = 128.0 / 127.5 - 1.0;
        assert!(t.data().iter().all(|&v| (v - expect).abs() < 1e-15));
        assert!((expect - 0.00392).abs() < 1e-5);
        let black = preprocess(&RgbImage::from_pixel(8, 4, Rgb([0, 0, 0])), [4, 8]);
        assert!(black.data().iter().all(|&v| v == -1.0));
        let white = preprocess(&RgbImage::from_pixel(8, 4, Rgb([255, 255, 255])), [2, 4]);
        assert!(white.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn same_size_resize_is_passthrough() {
        let mut r = rng::seeded(1);
        let plane: Vec<f64> = (0..12).map(|_| r.random_range(0.0..1.0)).collect();
        assert_eq!(resize_bilinear(&plane, [3, 4], [3, 4]), plane);
    }

    #[test]
    fn density_single_fixation_is_symmetric() {
        let fix = FixationRecord::new([21, 21], vec![(10, 10)]);
        let d = density_from_fixations(&fix, 2.0).unwrap();
        let at = |r: usize, c: usize| d.data()[r * 21 + c];
        assert!((d.sum() - 1.0).abs() < 1e-12);
        for k in 1..8 {
            assert!((at(10 + k, 10) - at(10 - k, 10)).abs() < 1e-15);
            assert!((at(10, 10 + k) - at(10 + k, 10)).abs() < 1e-15);
        }
        assert_eq!(d.max_value(), at(10, 10));
    }

    #[test]
    fn density_two_distant_fixations_split_mass() {
        let fix = FixationRecord::new([20, 60], vec![(10, 10), (10, 48)]);
        let d = density_from_fixations(&fix, 2.0).unwrap();
        let left: f64 = (0..20).flat_map(|r| (0..30).map(move |c| (r, c))).map(|(r, c)| d.data()[r * 60 + c]).sum();
        assert!((left - 0.5).abs() < 1e-12);
    }

    #[test]
    fn density_requires_fixations() {
        assert!(density_from_fixations(&FixationRecord::new([4, 4], vec![]), 1.0).is_err());
    }

    #[test]
    fn quantization_conventions() {
        assert_eq!(quantize(&[0.3, 0.3]), [255, 255]);
        assert_eq!(quantize(&[0.0, 0.0]), [255, 255]);
        assert_eq!(quantize(&[0.0, 0.5, 1.0]), [0, 128, 255]);
        let values = [0.0, 0.1, 0.37, 0.8, 2.0];
        for (q, v) in quantize(&values).iter().zip(values) {
            assert!((f64::from(*q) / 255.0 * 2.0 - v).abs() <= 2.0 / 255.0);
        }
    }

    #[test]
    fn fixation_loader_rejects_out_of_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fix.csv");
        fs::write(&path, "frame,row,col\n1,2,3\n2,9,0\n").unwrap();
        let msg = load_fixations(&path, 2, [5, 5]).unwrap_err().to_string();
        assert!(msg.contains("(9, 0)"), "{msg}");
        fs::write(&path, "1,2,3\n3,0,0\n").unwrap();
        assert!(load_fixations(&path, 2, [5, 5]).is_err());
        fs::write(&path, "1,2,3\n2,4,4\n").unwrap();
        let recs = load_fixations(&path, 2, [5, 5]).unwrap();
        assert_eq!(recs[1].points, [(4, 4)]);
    }

    #[test]
    fn load_video_counts_and_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let frames = dir.path().join("v").join(FRAMES_DIR);
        fs::create_dir_all(&frames).unwrap();
        for i in 1..=3 {
            RgbImage::from_pixel(4, 2, Rgb([i as u8, 0, 0]))
                .save(frames.join(frame_file_name(i)))
                .unwrap();
        }
        let v = load_video(&dir.path().join("v")).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.native_size, [2, 4]);
        assert_eq!(v.frames[2].get_pixel(0, 0).0[0], 3);
        fs::remove_file(frames.join(frame_file_name(2))).unwrap();
        let msg = load_video(&dir.path().join("v")).unwrap_err().to_string();
        assert!(msg.contains("non-contiguous"), "{msg}");
    }

    #[test]
    fn synth_is_loadable_and_centred() {
        let dir = tempfile::tempdir().unwrap();
        let params = SynthParams {
            videos: 1,
            frames: 70,
            ..SynthParams::default()
        };
        let dirs = synth_dataset(dir.path(), &params, &mut rng::seeded(9)).unwrap();
        let video = load_video(&dirs[0]).unwrap();
        assert_eq!(video.len(), 70);
        let maps = load_density_maps(&dirs[0]).unwrap().unwrap();
        let mut r = rng::seeded(9);
        let paths = {
            // regenerate the trajectory with the same draws
            let _ = (0..3).map(|_| (r.random_range(0.1..0.6), r.random_range(0.1..0.6), r.random_range(0.0..std::f64::consts::TAU))).collect::<Vec<(f64, f64, f64)>>();
            let _ = (0..32 * 64).map(|_| r.random_range(-10.0..10.0)).collect::<Vec<f64>>();
            trajectories(&params, &mut r)
        };
        for (f, map) in maps.iter().enumerate() {
            let (cy, cx) = paths[0][f];
            let (cy, cx) = (cy.round() as usize, cx.round() as usize);
            assert_eq!(map.data()[cy * 64 + cx], map.max_value(), "frame {f}");
        }
        prepare_video(&dirs[0], [32, 64]).unwrap();
    }
}
