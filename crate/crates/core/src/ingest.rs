//! Dataset discovery, decoding and grayscale normalization.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

/// File extensions accepted by [`scan_dataset`] (compared case-insensitively).
pub const ACCEPTED_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("dataset root {path:?} is missing or unreadable: {reason}")]
    BadRoot { path: PathBuf, reason: String },
    #[error("cannot decode {path:?}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("image {width}x{height} is smaller than 2x2")]
    TooSmall { width: u32, height: u32 },
    #[error("invalid downsample target {target_w}x{target_h} for a {width}x{height} image")]
    BadTarget {
        width: usize,
        height: usize,
        target_w: usize,
        target_h: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub bytes: u64,
}

/// Deterministically ordered listing of the images in one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub root: PathBuf,
    /// Paths that could not be read while walking the tree.
    pub skipped: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn count(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn absolute_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

fn has_accepted_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| {
            let e = e.to_ascii_lowercase();
            ACCEPTED_EXTENSIONS.contains(&e.as_str())
        })
        .unwrap_or(false)
}

fn relative_key(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Recursively lists every accepted image under `root`, sorted by relative path.
///
/// Unreadable subdirectories are recorded in `skipped` rather than failing the scan.
pub fn scan_dataset(root: impl AsRef<Path>, dataset_id: &str) -> Result<DatasetManifest, IngestError> {
    let root = root.as_ref();
    let meta = std::fs::metadata(root).map_err(|e| IngestError::BadRoot {
        path: root.to_path_buf(),
        reason: e.to_string(),
    })?;
    if !meta.is_dir() {
        return Err(IngestError::BadRoot {
            path: root.to_path_buf(),
            reason: "not a directory".into(),
        });
    }
    std::fs::read_dir(root).map_err(|e| IngestError::BadRoot {
        path: root.to_path_buf(),
        reason: e.to_string(),
    })?;

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for item in WalkDir::new(root).follow_links(true) {
        let item = match item {
            Ok(item) => item,
            Err(err) => {
                let p = err
                    .path()
                    .map(|p| relative_key(root, p))
                    .unwrap_or_else(|| err.to_string());
                log::warn!("event=scan_skip dataset={dataset_id} path={p}");
                skipped.push(p);
                continue;
            }
        };
        if !item.file_type().is_file() || !has_accepted_extension(item.path()) {
            continue;
        }
        let bytes = match item.metadata() {
            Ok(m) => m.len(),
            Err(_) => {
                skipped.push(relative_key(root, item.path()));
                continue;
            }
        };
        entries.push(ManifestEntry {
            path: relative_key(root, item.path()),
            bytes,
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    skipped.sort();

    Ok(DatasetManifest {
        dataset_id: dataset_id.to_string(),
        root: root.to_path_buf(),
        skipped,
        entries,
    })
}

/// 8-bit single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    /// Builds an image from row-major data; rejects rasters below 2x2.
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, IngestError> {
        assert_eq!(data.len(), width * height, "data length must equal width*height");
        if width < 2 || height < 2 {
            return Err(IngestError::TooSmall {
                width: width as u32,
                height: height as u32,
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self, IngestError> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn transpose(&self) -> GrayImage {
        GrayImage::from_fn(self.height, self.width, |x, y| self.get(y, x)).expect("transpose keeps size")
    }
}

/// BT.601 luma with round-half-up, in integer arithmetic.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let y = (299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000;
    y.min(255) as u8
}

/// Converts a decoded image to 8-bit gray. 16-bit channels are reduced by `v >> 8`.
pub fn to_gray(img: &DynamicImage) -> Result<GrayImage, IngestError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w < 2 || h < 2 {
        return Err(IngestError::TooSmall {
            width: w as u32,
            height: h as u32,
        });
    }
    let data: Vec<u8> = match img {
        DynamicImage::ImageLuma8(buf) => buf.as_raw().clone(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0]).collect(),
        DynamicImage::ImageLuma16(buf) => buf.as_raw().iter().map(|&v| (v >> 8) as u8).collect(),
        DynamicImage::ImageLumaA16(buf) => buf.pixels().map(|p| (p.0[0] >> 8) as u8).collect(),
        DynamicImage::ImageRgb8(buf) => buf.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect(),
        DynamicImage::ImageRgba8(buf) => buf.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect(),
        DynamicImage::ImageRgb16(buf) => buf
            .pixels()
            .map(|p| luma((p.0[0] >> 8) as u8, (p.0[1] >> 8) as u8, (p.0[2] >> 8) as u8))
            .collect(),
        DynamicImage::ImageRgba16(buf) => buf
            .pixels()
            .map(|p| luma((p.0[0] >> 8) as u8, (p.0[1] >> 8) as u8, (p.0[2] >> 8) as u8))
            .collect(),
        other => other.to_rgb8().pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect(),
    };
    GrayImage::new(w, h, data)
}

/// Decodes an image file and converts it to 8-bit grayscale.
pub fn load_grayscale(path: impl AsRef<Path>) -> Result<GrayImage, IngestError> {
    let path = path.as_ref();
    let decode_err = |reason: String| IngestError::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let img = ImageReader::open(path)
        .map_err(|e| decode_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    to_gray(&img)
}

/// Box (area) downsampling; each output pixel is the rounded mean of its source rectangle.
///
/// Output pixel `ox` covers source columns `floor(ox*w/tw) .. floor((ox+1)*w/tw)`, likewise
/// for rows, so the rectangles tile the source exactly. Targets of 1 are allowed here even
/// though the result is then not a valid [`GrayImage`]; use [`downsample_raw`] for that case.
pub fn downsample(image: &GrayImage, target_w: usize, target_h: usize) -> Result<GrayImage, IngestError> {
    let data = downsample_raw(image, target_w, target_h)?;
    GrayImage::new(target_w, target_h, data).map_err(|_| IngestError::BadTarget {
        width: image.width,
        height: image.height,
        target_w,
        target_h,
    })
}

/// Like [`downsample`] but returns raw row-major data, so 1-pixel targets are representable.
pub fn downsample_raw(image: &GrayImage, target_w: usize, target_h: usize) -> Result<Vec<u8>, IngestError> {
    let (w, h) = (image.width, image.height);
    if target_w == 0 || target_h == 0 || target_w > w || target_h > h {
        return Err(IngestError::BadTarget {
            width: w,
            height: h,
            target_w,
            target_h,
        });
    }
    if target_w == w && target_h == h {
        return Ok(image.data.clone());
    }
    let span = |o: usize, src: usize, dst: usize| (o * src / dst, (o + 1) * src / dst);
    let mut out = Vec::with_capacity(target_w * target_h);
    for oy in 0..target_h {
        let (y0, y1) = span(oy, h, target_h);
        for ox in 0..target_w {
            let (x0, x1) = span(ox, w, target_w);
            let mut sum = 0u64;
            for y in y0..y1 {
                let row = &image.data[y * w..(y + 1) * w];
                sum += row[x0..x1].iter().map(|&v| v as u64).sum::<u64>();
            }
            let count = ((y1 - y0) * (x1 - x0)) as u64;
            out.push(((sum + count / 2) / count) as u8);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Luma, Rgb};

    fn touch(path: &Path, bytes: &[u8]) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn empty_directory_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = scan_dataset(dir.path(), "empty").unwrap();
        assert_eq!(m.count(), 0);
        assert!(m.skipped.is_empty());
    }

    #[test]
    fn scan_filters_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("b.png"), b"bb");
        touch(&dir.path().join("a.png"), b"a");
        touch(&dir.path().join("c.txt"), b"c");
        let m = scan_dataset(dir.path(), "d").unwrap();
        let paths: Vec<_> = m.entries.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, ["a.png", "b.png"]);
        assert_eq!(m.count(), 2);
        assert_eq!(m.entries[1].bytes, 2);
    }

    #[test]
    fn scan_nested_uses_relative_lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("x/1.jpg"), b"1");
        touch(&dir.path().join("2.png"), b"2");
        touch(&dir.path().join("y/Z.BMP"), b"3");
        let m = scan_dataset(dir.path(), "d").unwrap();
        let paths: Vec<_> = m.entries.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, ["2.png", "x/1.jpg", "y/Z.BMP"]);
    }

    #[test]
    fn scan_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..20 {
            touch(&dir.path().join(format!("s{}/{i}.png", i % 3)), b"x");
        }
        let a = scan_dataset(dir.path(), "d").unwrap().to_json();
        let b = scan_dataset(dir.path(), "d").unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn scan_missing_root_fails() {
        let dir = tempfile::tempdir().unwrap();
        let err = scan_dataset(dir.path().join("nope"), "d").unwrap_err();
        assert!(matches!(err, IngestError::BadRoot { .. }));
    }

    #[test]
    fn luma_values() {
        assert_eq!(luma(255, 255, 255), 255);
        assert_eq!(luma(255, 0, 0), 76);
        assert_eq!(luma(0, 0, 0), 0);
    }

    #[test]
    fn load_rgb_white_and_red() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let mut img = ImageBuffer::from_pixel(2, 2, Rgb([255u8, 255, 255]));
        img.put_pixel(1, 1, Rgb([255, 0, 0]));
        img.save(&p).unwrap();
        let g = load_grayscale(&p).unwrap();
        assert_eq!(g.data(), &[255, 255, 255, 76]);
    }

    #[test]
    fn load_gray_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let img = ImageBuffer::from_raw(3, 2, vec![0u8, 128, 255, 255, 128, 0]).map(|b: ImageBuffer<Luma<u8>, _>| b).unwrap();
        img.save(&p).unwrap();
        let g = load_grayscale(&p).unwrap();
        assert_eq!(g.data(), &[0, 128, 255, 255, 128, 0]);
    }

    #[test]
    fn load_16bit_shifts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g16.png");
        let img: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(2, 2, vec![0u16, 0x1234, 0xff00, 0xffff]).unwrap();
        img.save(&p).unwrap();
        let g = load_grayscale(&p).unwrap();
        assert_eq!(g.data(), &[0, 0x12, 0xff, 0xff]);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.png");
        std::fs::write(&bad, b"definitely not a png").unwrap();
        assert!(matches!(load_grayscale(&bad), Err(IngestError::Decode { .. })));

        let tiny = dir.path().join("tiny.png");
        ImageBuffer::from_pixel(1, 5, Luma([3u8])).save(&tiny).unwrap();
        assert!(matches!(load_grayscale(&tiny), Err(IngestError::TooSmall { .. })));
    }

    #[test]
    fn downsample_examples() {
        let c = GrayImage::new(4, 4, vec![100; 16]).unwrap();
        assert_eq!(downsample(&c, 2, 2).unwrap().data(), &[100; 4]);

        let stripes = GrayImage::new(2, 2, vec![0, 255, 0, 255]).unwrap();
        assert_eq!(downsample_raw(&stripes, 1, 1).unwrap(), vec![128]);
        assert_eq!(downsample(&stripes, 2, 2).unwrap(), stripes);
    }

    #[test]
    fn downsample_rejects_bad_targets() {
        let c = GrayImage::new(4, 4, vec![1; 16]).unwrap();
        assert!(matches!(downsample(&c, 5, 2), Err(IngestError::BadTarget { .. })));
        assert!(matches!(downsample_raw(&c, 0, 2), Err(IngestError::BadTarget { .. })));
        assert!(matches!(downsample(&c, 1, 1), Err(IngestError::BadTarget { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn downsample_stays_within_source_range(
                w in 2usize..20, h in 2usize..20,
                seed in proptest::collection::vec(any::<u8>(), 400),
                tw in 1usize..20, th in 1usize..20,
            ) {
                let tw = tw.min(w);
                let th = th.min(h);
                let img = GrayImage::new(w, h, seed[..w * h].to_vec()).unwrap();
                let lo = *img.data().iter().min().unwrap();
                let hi = *img.data().iter().max().unwrap();
                let out = downsample_raw(&img, tw, th).unwrap();
                prop_assert_eq!(out.len(), tw * th);
                prop_assert!(out.iter().all(|&v| v >= lo && v <= hi));
            }
        }
    }
}
