//! Categorical label rasters, RGB rasters and the sampling rule used to read
//! a class id at a subpixel location.
//!
//! Pixel centers sit at integer coordinates: pixel `(i, j)` covers
//! `[i - 0.5, i + 0.5) x [j - 0.5, j + 0.5)`. Every module that projects into
//! an image (renderer, detector, projection) follows this convention.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

/// Semantic class id as stored in label rasters and PLY files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ClassId(pub u8);

impl ClassId {
    pub const UNLABELED: ClassId = ClassId(0);
    pub const GROUND: ClassId = ClassId(1);
    pub const TRUNK: ClassId = ClassId(2);
    pub const CANOPY: ClassId = ClassId(3);
    pub const UNDERSTOREY: ClassId = ClassId(4);
    pub const GCP_MARKER: ClassId = ClassId(5);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaletteEntry {
    pub class: ClassId,
    pub name: &'static str,
    pub display_rgb: [u8; 3],
    pub gray: u8,
}

/// Mapping between class ids, names, display colors and the grayscale
/// bytes used for label rasters on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelPalette {
    entries: Vec<PaletteEntry>,
}

impl Default for LabelPalette {
    fn default() -> Self {
        Self::forest()
    }
}

impl LabelPalette {
    /// The six forest classes. Grayscale bytes are spaced by 51 so that the
    /// label PGMs are viewable as-is.
    pub fn forest() -> Self {
        let entries = vec![
            PaletteEntry { class: ClassId::UNLABELED, name: "unlabeled", display_rgb: [0, 0, 0], gray: 0 },
            PaletteEntry { class: ClassId::GROUND, name: "ground", display_rgb: [0, 0, 255], gray: 51 },
            PaletteEntry { class: ClassId::TRUNK, name: "trunk", display_rgb: [0, 255, 255], gray: 102 },
            PaletteEntry { class: ClassId::CANOPY, name: "canopy", display_rgb: [0, 200, 0], gray: 153 },
            PaletteEntry { class: ClassId::UNDERSTOREY, name: "understorey", display_rgb: [255, 220, 0], gray: 204 },
            PaletteEntry { class: ClassId::GCP_MARKER, name: "gcp", display_rgb: [255, 0, 0], gray: 255 },
        ];
        Self { entries }
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn entry(&self, class: ClassId) -> Option<&PaletteEntry> {
        self.entries.iter().find(|e| e.class == class)
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.entry(class).is_some()
    }

    pub fn name(&self, class: ClassId) -> &'static str {
        self.entry(class).map(|e| e.name).unwrap_or("unknown")
    }

    pub fn class_for_gray(&self, gray: u8) -> Option<ClassId> {
        self.entries.iter().find(|e| e.gray == gray).map(|e| e.class)
    }

    pub fn gray_for_class(&self, class: ClassId) -> Option<u8> {
        self.entry(class).map(|e| e.gray)
    }

    /// Palette table as CSV: `class_id,name,gray,display_rgb`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class_id,name,gray,display_rgb\n");
        for e in &self.entries {
            let [r, g, b] = e.display_rgb;
            out.push_str(&format!("{},{},{},#{r:02x}{g:02x}{b:02x}\n", e.class, e.name, e.gray));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("label byte {byte} at pixel {index} is not a palette grayscale value")]
    UnknownGray { byte: u8, index: usize },
    #[error("class id {class} at pixel {index} is not in the palette")]
    UnknownClass { class: ClassId, index: usize },
    #[error("raster has {got} bytes, expected {expected} for {width}x{height}")]
    SizeMismatch { width: usize, height: usize, expected: usize, got: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: malformed netpbm file: {reason}")]
    Netpbm { path: String, reason: String },
}

/// Row-major raster of class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    width: usize,
    height: usize,
    data: Vec<ClassId>,
}

impl LabelImage {
    pub fn filled(width: usize, height: usize, class: ClassId) -> Self {
        Self { width, height, data: vec![class; width * height] }
    }

    pub fn from_classes(width: usize, height: usize, data: Vec<ClassId>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::SizeMismatch { width, height, expected: width * height, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[ClassId] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> ClassId {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, class: ClassId) {
        self.data[y * self.width + x] = class;
    }
}

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height * 3] }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if data.len() != width * height * 3 {
            return Err(ImageError::SizeMismatch { width, height, expected: width * height * 3, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Luma (BT.601 weights) as `f32` in `[0, 255]`.
    pub fn to_gray(&self) -> Vec<f32> {
        self.data.chunks_exact(3).map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32).collect()
    }
}

/// Nearest pixel index for a subpixel coordinate, clamped to `[0, len)`.
pub(crate) fn nearest_index(coord: f64, len: usize) -> usize {
    let i = (coord + 0.5).floor();
    if i.is_nan() || i <= 0.0 {
        0
    } else if i >= (len - 1) as f64 {
        len - 1
    } else {
        i as usize
    }
}

/// Class at a subpixel location: nearest pixel center, border-clamped.
pub fn label_at(img: &LabelImage, u: f64, v: f64) -> ClassId {
    img.get(nearest_index(u, img.width), nearest_index(v, img.height))
}

/// Color at a subpixel location with the same sampling rule as [`label_at`].
pub fn rgb_at(img: &RgbImage, u: f64, v: f64) -> [u8; 3] {
    img.get(nearest_index(u, img.width), nearest_index(v, img.height))
}

pub fn decode_label_raster(
    width: usize,
    height: usize,
    bytes: &[u8],
    palette: &LabelPalette,
) -> Result<LabelImage, ImageError> {
    if bytes.len() != width * height {
        return Err(ImageError::SizeMismatch { width, height, expected: width * height, got: bytes.len() });
    }
    let mut lut = [None; 256];
    for e in palette.entries() {
        lut[e.gray as usize] = Some(e.class);
    }
    let data = bytes
        .iter()
        .enumerate()
        .map(|(index, &byte)| lut[byte as usize].ok_or(ImageError::UnknownGray { byte, index }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LabelImage { width, height, data })
}

pub fn encode_label_raster(img: &LabelImage, palette: &LabelPalette) -> Result<Vec<u8>, ImageError> {
    let mut lut = [None; 256];
    for e in palette.entries() {
        lut[e.class.index()] = Some(e.gray);
    }
    img.data
        .iter()
        .enumerate()
        .map(|(index, &class)| lut[class.index()].ok_or(ImageError::UnknownClass { class, index }))
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImageError + '_ {
    move |source| ImageError::Io { path: path.display().to_string(), source }
}

/// Binary netpbm (P5 / P6, maxval 255).
struct Netpbm {
    magic: [u8; 2],
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

fn read_netpbm(path: &Path) -> Result<Netpbm, ImageError> {
    let bad = |reason: &str| ImageError::Netpbm { path: path.display().to_string(), reason: reason.to_string() };
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut magic = [0u8; 2];
    reader.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != b"P5" && &magic != b"P6" {
        return Err(bad("expected P5 or P6 magic"));
    }
    // width, height, maxval; '#' comments allowed between tokens
    let mut fields = Vec::with_capacity(3);
    let mut token = Vec::new();
    while fields.len() < 3 {
        let mut byte = [0u8; 1];
        reader.read_exact(&mut byte).map_err(|_| bad("truncated header"))?;
        let c = byte[0];
        if c == b'#' {
            let mut sink = Vec::new();
            reader.read_until(b'\n', &mut sink).map_err(io_err(path))?;
        } else if c.is_ascii_whitespace() {
            if !token.is_empty() {
                let s = std::str::from_utf8(&token).map_err(|_| bad("non-ascii header"))?;
                fields.push(s.parse::<usize>().map_err(|_| bad("bad header number"))?);
                token.clear();
            }
        } else {
            token.push(c);
        }
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let channels = if &magic == b"P6" { 3 } else { 1 };
    let mut pixels = vec![0u8; width * height * channels];
    reader.read_exact(&mut pixels).map_err(|_| bad("truncated pixel data"))?;
    Ok(Netpbm { magic, width, height, pixels })
}

fn write_netpbm(path: &Path, magic: &str, width: usize, height: usize, pixels: &[u8]) -> Result<(), ImageError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    write!(w, "{magic}\n{width} {height}\n255\n").map_err(io_err(path))?;
    w.write_all(pixels).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_label_pgm(path: &Path, img: &LabelImage, palette: &LabelPalette) -> Result<(), ImageError> {
    let bytes = encode_label_raster(img, palette)?;
    write_netpbm(path, "P5", img.width, img.height, &bytes)
}

pub fn read_label_pgm(path: &Path, palette: &LabelPalette) -> Result<LabelImage, ImageError> {
    let pbm = read_netpbm(path)?;
    if &pbm.magic != b"P5" {
        return Err(ImageError::Netpbm { path: path.display().to_string(), reason: "label raster must be P5".into() });
    }
    decode_label_raster(pbm.width, pbm.height, &pbm.pixels, palette)
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<(), ImageError> {
    write_netpbm(path, "P6", img.width, img.height, &img.data)
}

pub fn read_ppm(path: &Path) -> Result<RgbImage, ImageError> {
    let pbm = read_netpbm(path)?;
    if &pbm.magic != b"P6" {
        return Err(ImageError::Netpbm { path: path.display().to_string(), reason: "rgb image must be P6".into() });
    }
    RgbImage::from_raw(pbm.width, pbm.height, pbm.pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_raster(rng: &mut ChaCha8Rng, w: usize, h: usize) -> LabelImage {
        let data = (0..w * h).map(|_| ClassId(rng.random_range(0..6))).collect();
        LabelImage::from_classes(w, h, data).unwrap()
    }

    // Nearest pixel center by exhaustive distance comparison.
    fn brute_nearest(img: &LabelImage, u: f64, v: f64) -> ClassId {
        let mut best = (f64::INFINITY, ClassId(0));
        for y in 0..img.height() {
            for x in 0..img.width() {
                let d = (u - x as f64).powi(2) + (v - y as f64).powi(2);
                if d < best.0 {
                    best = (d, img.get(x, y));
                }
            }
        }
        best.1
    }

    #[test]
    fn integer_pixel_returns_that_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_raster(&mut rng, 7, 5);
        for y in 0..5 {
            for x in 0..7 {
                assert_eq!(label_at(&img, x as f64, y as f64), img.get(x, y));
            }
        }
    }

    #[test]
    fn out_of_bounds_clamps_to_border() {
        let mut img = LabelImage::filled(6, 8, ClassId::CANOPY);
        for y in 0..8 {
            img.set(0, y, ClassId::GROUND);
        }
        assert_eq!(label_at(&img, -3.2, 5.0), ClassId::GROUND);
        assert_eq!(label_at(&img, f64::NAN, 2.0), ClassId::GROUND);
        assert_eq!(label_at(&img, 100.0, 100.0), img.get(5, 7));
    }

    #[test]
    fn subpixel_sampling_matches_nearest_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_raster(&mut rng, 13, 9);
        for _ in 0..10_000 {
            let u = rng.random_range(-4.0..17.0);
            let v = rng.random_range(-4.0..13.0);
            assert_eq!(label_at(&img, u, v), brute_nearest(&img, u, v), "at ({u}, {v})");
        }
    }

    #[test]
    fn translation_consistency_on_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_raster(&mut rng, 20, 10);
        // shifted[x] = img[x - 1]
        let mut shifted = LabelImage::filled(20, 10, ClassId(0));
        for y in 0..10 {
            for x in 1..20 {
                shifted.set(x, y, img.get(x - 1, y));
            }
        }
        for _ in 0..2000 {
            let u = rng.random_range(0.0..18.0);
            let v = rng.random_range(0.0..9.0);
            assert_eq!(label_at(&shifted, u + 1.0, v), label_at(&img, u, v));
        }
    }

    #[test]
    fn all_ground_round_trips() {
        let palette = LabelPalette::forest();
        let img = LabelImage::filled(10, 4, ClassId::GROUND);
        let bytes = encode_label_raster(&img, &palette).unwrap();
        assert!(bytes.iter().all(|&b| b == 51));
        assert_eq!(decode_label_raster(10, 4, &bytes, &palette).unwrap(), img);
    }

    #[test]
    fn unknown_gray_reports_first_offending_pixel() {
        let palette = LabelPalette::forest();
        let bytes = [51, 51, 7, 9, 51, 51];
        match decode_label_raster(3, 2, &bytes, &palette) {
            Err(ImageError::UnknownGray { byte: 7, index: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn palette_is_unique() {
        let p = LabelPalette::forest();
        let mut ids: Vec<_> = p.entries().iter().map(|e| e.class).collect();
        let mut grays: Vec<_> = p.entries().iter().map(|e| e.gray).collect();
        ids.dedup();
        grays.sort();
        grays.dedup();
        assert_eq!(ids.len(), 6);
        assert_eq!(grays, vec![0, 51, 102, 153, 204, 255]);
        assert!(p.to_csv().starts_with("class_id,name,gray,display_rgb\n"));
    }

    #[test]
    fn pnm_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels = random_raster(&mut rng, 11, 7);
        let palette = LabelPalette::forest();
        let p = dir.path().join("l.pgm");
        write_label_pgm(&p, &labels, &palette).unwrap();
        assert_eq!(read_label_pgm(&p, &palette).unwrap(), labels);

        let rgb = RgbImage::from_raw(4, 3, (0..36).collect()).unwrap();
        let p = dir.path().join("c.ppm");
        write_ppm(&p, &rgb).unwrap();
        assert_eq!(read_ppm(&p).unwrap(), rgb);
        assert!(read_label_pgm(&p, &palette).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn encode_decode_are_inverse(w in 1usize..16, h in 1usize..16, seed in any::<u64>()) {
            let palette = LabelPalette::forest();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_raster(&mut rng, w, h);
            let bytes = encode_label_raster(&img, &palette).unwrap();
            let back = decode_label_raster(w, h, &bytes, &palette).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(encode_label_raster(&back, &palette).unwrap(), bytes);
        }
    }
}
