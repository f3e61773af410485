//! Frames, key-frame selection, and the two pre-processing strategies:
//! whole-frame bilinear resize and random square crops.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// An 8-bit RGB frame, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl FrameImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Empty("frame with zero extent"));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::DimensionMismatch {
                expected: height * width * 3,
                actual: pixels.len(),
            });
        }
        Ok(FrameImage {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Mean over all channels of all pixels, in `[0, 255]`.
    pub fn mean_intensity(&self) -> f64 {
        self.pixels.iter().map(|&v| f64::from(v)).sum::<f64>() / self.pixels.len() as f64
    }

    /// Copies the `size`×`size` region whose top-left corner is `(top, left)`.
    pub fn region(&self, top: usize, left: usize, size: usize) -> FrameImage {
        let mut pixels = Vec::with_capacity(size * size * 3);
        for r in top..top + size {
            let start = (r * self.width + left) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + size * 3]);
        }
        FrameImage {
            height: size,
            width: size,
            pixels,
        }
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let img = RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("pixel buffer matches dimensions");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .expect("png encoding into memory");
        out.into_inner()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_png()).map_err(|e| Error::io(path, e))
    }
}

/// Whether `path` names a frame image this crate can load.
pub fn is_frame_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png") | Some("rgb")
    )
}

/// Sidecar holding `height width` for a raw `.rgb` frame.
pub fn raw_dims_path(path: &Path) -> PathBuf {
    path.with_extension("dims")
}

/// Loads a PNG, or a raw 8-bit RGB file with a `.dims` sidecar.
pub fn load_frame(path: &Path) -> Result<FrameImage> {
    let is_raw = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("rgb"));
    if is_raw {
        let dims_path = raw_dims_path(path);
        let dims = fs::read_to_string(&dims_path).map_err(|e| Error::io(&dims_path, e))?;
        let parsed: Vec<usize> = dims
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("{}: expected `height width`", dims_path.display())))?;
        let [height, width] = parsed[..] else {
            return Err(Error::Format(format!(
                "{}: expected `height width`",
                dims_path.display()
            )));
        };
        let pixels = fs::read(path).map_err(|e| Error::io(path, e))?;
        return FrameImage::new(height, width, pixels);
    }
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb8();
    FrameImage::new(rgb.height() as usize, rgb.width() as usize, rgb.into_raw())
}

/// Frames picked by uniform temporal sampling.
#[derive(Debug, Clone)]
pub struct KeyFrameSet {
    pub frames: Vec<FrameImage>,
    /// Non-decreasing; repeats only when the video has fewer frames than requested.
    pub source_indices: Vec<usize>,
}

/// Uniform key-frame indices: `floor(k·(n−1)/(m−1))` for `k = 0..m`, or the
/// middle frame when `m == 1`.
pub fn key_frame_indices(n: usize, m: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Empty("video has no frames"));
    }
    if m == 0 {
        return Err(Error::Empty("zero key frames requested"));
    }
    if m == 1 {
        return Ok(vec![(n - 1) / 2]);
    }
    Ok((0..m).map(|k| k * (n - 1) / (m - 1)).collect())
}

pub fn select_key_frames(video: &[FrameImage], m: usize) -> Result<KeyFrameSet> {
    let source_indices = key_frame_indices(video.len(), m)?;
    Ok(KeyFrameSet {
        frames: source_indices.iter().map(|&i| video[i].clone()).collect(),
        source_indices,
    })
}

/// Source sample positions and weights along one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    let max = (src - 1) as f64;
    (0..dst)
        .map(|d| {
            let x = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = x.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, x - i0 as f64)
        })
        .collect()
}

/// Bilinear resize with half-pixel centers and edge clamping. The aspect
/// ratio is not preserved.
pub fn resize_bilinear(frame: &FrameImage, out_h: usize, out_w: usize) -> Result<FrameImage> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Empty("zero-sized resize target"));
    }
    let rows = axis_taps(frame.height, out_h);
    let cols = axis_taps(frame.width, out_w);
    let mut pixels = Vec::with_capacity(out_h * out_w * 3);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            let (p00, p01) = (frame.pixel(r0, c0), frame.pixel(r0, c1));
            let (p10, p11) = (frame.pixel(r1, c0), frame.pixel(r1, c1));
            for ch in 0..3 {
                let top = f64::from(p00[ch]) * (1.0 - fx) + f64::from(p01[ch]) * fx;
                let bottom = f64::from(p10[ch]) * (1.0 - fx) + f64::from(p11[ch]) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    FrameImage::new(out_h, out_w, pixels)
}

/// Draws `k` square patches with independent uniform offsets (overlap
/// allowed). Offsets come from a stream keyed by `(seed, video_id,
/// frame_index)`.
pub fn random_crops(
    frame: &FrameImage,
    k: usize,
    size: usize,
    seed: u64,
    video_id: &str,
    frame_index: usize,
) -> Result<Vec<FrameImage>> {
    if k == 0 {
        return Err(Error::Empty("zero crops requested"));
    }
    if size == 0 {
        return Err(Error::Empty("zero crop size"));
    }
    if frame.height < size || frame.width < size {
        return Err(Error::FrameTooSmall {
            height: frame.height,
            width: frame.width,
            size,
        });
    }
    let mut rng = StreamKey::new("crop", seed)
        .str(video_id)
        .u64(frame_index as u64)
        .rng();
    Ok((0..k)
        .map(|_| {
            let top = rng.random_range(0..=frame.height - size);
            let left = rng.random_range(0..=frame.width - size);
            frame.region(top, left, size)
        })
        .collect())
}
