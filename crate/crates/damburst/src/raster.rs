//! Raster containers, image decoding, luminance conversion, integral images
//! and label-map serialization.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::watershed::LabelField;

/// Decoded image held as interleaved 8-bit samples, row major.
///
/// `channels` is 1 (grayscale) or 3 (RGB); alpha is dropped at load time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension);
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if samples.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "expected {} samples, got {}",
                width * height * channels,
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    /// Samples of the pixel at (x, y); length equals `channels`.
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let start = (y * self.width + x) * self.channels;
        &self.samples[start..start + self.channels]
    }

    /// Per-channel values of the pixel at (x, y) as f64, padded with the last
    /// channel so the result always has three entries.
    pub fn pixel_f64(&self, x: usize, y: usize) -> [f64; 3] {
        let p = self.pixel(x, y);
        match self.channels {
            1 => [p[0] as f64, p[0] as f64, p[0] as f64],
            _ => [p[0] as f64, p[1] as f64, p[2] as f64],
        }
    }
}

/// Dense f64 field over the image grid. Values are finite by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension);
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "non-finite value in scalar field".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Axis-aligned rectangle with inclusive integer bounds. Coordinates may lie
/// outside the image; consumers clamp to the image domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x0: i64,
    pub x1: i64,
    pub y0: i64,
    pub y1: i64,
}

impl Rect {
    pub fn new(x0: i64, x1: i64, y0: i64, y1: i64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    /// Intersection with the w x h image domain, or None when empty.
    fn clamped(&self, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
        let x0 = self.x0.max(0);
        let y0 = self.y0.max(0);
        let x1 = self.x1.min(width as i64 - 1);
        let y1 = self.y1.min(height as i64 - 1);
        if x0 > x1 || y0 > y1 {
            return None;
        }
        Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
    }
}

/// Summed-area table over a scalar field. The table has one extra row and
/// column of zeros so any box sum is four lookups.
#[derive(Clone, Debug)]
pub struct IntegralField {
    width: usize,
    height: usize,
    table: Vec<f64>,
}

impl IntegralField {
    /// Source image width (not table width).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    fn at(&self, tx: usize, ty: usize) -> f64 {
        self.table[ty * (self.width + 1) + tx]
    }

    /// Sum over the rect clamped to the image, or None when the intersection
    /// is empty.
    pub fn box_sum(&self, rect: Rect) -> Option<f64> {
        let (x0, x1, y0, y1) = rect.clamped(self.width, self.height)?;
        Some(self.at(x1 + 1, y1 + 1) - self.at(x0, y1 + 1) - self.at(x1 + 1, y0) + self.at(x0, y0))
    }

    /// Mean over the rect clamped to the image, or None when the intersection
    /// is empty.
    pub fn box_mean_clamped(&self, rect: Rect) -> Option<f64> {
        let (x0, x1, y0, y1) = rect.clamped(self.width, self.height)?;
        let sum =
            self.at(x1 + 1, y1 + 1) - self.at(x0, y1 + 1) - self.at(x1 + 1, y0) + self.at(x0, y0);
        let count = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
        Some(sum / count)
    }
}

/// Builds the summed-area table of `field` in one pass.
pub fn integral(field: &ScalarField) -> IntegralField {
    let (w, h) = (field.width, field.height);
    let mut table = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0.0;
        for x in 0..w {
            row_sum += field.values[y * w + x];
            table[(y + 1) * (w + 1) + (x + 1)] = table[y * (w + 1) + (x + 1)] + row_sum;
        }
    }
    IntegralField {
        width: w,
        height: h,
        table,
    }
}

/// Mean of the field over `rect` intersected with the image.
///
/// Errors when the intersection is empty.
pub fn box_mean(integral: &IntegralField, rect: Rect) -> Result<f64> {
    integral
        .box_mean_clamped(rect)
        .ok_or(Error::RectOutsideImage)
}

/// Decodes a PNG or PNM file into a raster.
///
/// 16-bit inputs are reduced to 8-bit; alpha channels are dropped. Grayscale
/// sources keep a single channel, everything else becomes RGB.
pub fn load_image(path: &Path) -> Result<Raster> {
    let unreadable = |e: &dyn std::fmt::Display| Error::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| unreadable(&e))?
        .with_guessed_format()
        .map_err(|e| unreadable(&e))?;
    match reader.format() {
        Some(image::ImageFormat::Png | image::ImageFormat::Pnm) => {}
        Some(other) => return Err(Error::UnsupportedFormat(Some(format!("{other:?}")))),
        None => return Err(Error::UnsupportedFormat(None)),
    }
    let decoded = reader.decode().map_err(|e| unreadable(&e))?;
    if decoded.width() == 0 || decoded.height() == 0 {
        return Err(Error::ZeroDimension);
    }
    use image::ColorType::*;
    let grayscale = matches!(decoded.color(), L8 | L16 | La8 | La16);
    if grayscale {
        let img = decoded.into_luma8();
        Raster::new(
            img.width() as usize,
            img.height() as usize,
            1,
            img.into_raw(),
        )
    } else {
        let img = decoded.into_rgb8();
        Raster::new(
            img.width() as usize,
            img.height() as usize,
            3,
            img.into_raw(),
        )
    }
}

/// Rec. 601 luminance: 0.299 R + 0.587 G + 0.114 B. Single-channel input
/// passes through unchanged.
pub fn to_luminance(raster: &Raster) -> ScalarField {
    let n = raster.width * raster.height;
    let mut values = Vec::with_capacity(n);
    match raster.channels {
        1 => values.extend(raster.samples.iter().map(|&v| v as f64)),
        _ => {
            for px in raster.samples.chunks_exact(3) {
                values.push(0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64);
            }
        }
    }
    ScalarField {
        width: raster.width,
        height: raster.height,
        values,
    }
}

const LABEL_MAP_MAGIC: &[u8; 4] = b"DBLM";

/// Writes a label map in the raw interchange format: a 16-byte header
/// (magic "DBLM", width, height, reserved word, all little endian u32)
/// followed by one little endian u32 per pixel in row-major order.
pub fn write_label_map(labels: &LabelField, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(LABEL_MAP_MAGIC)?;
    out.write_all(&(labels.width() as u32).to_le_bytes())?;
    out.write_all(&(labels.height() as u32).to_le_bytes())?;
    out.write_all(&0u32.to_le_bytes())?;
    for &label in labels.labels() {
        out.write_all(&label.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a label map written by [`write_label_map`]. Lossless round trip.
pub fn read_label_map(path: &Path) -> Result<LabelField> {
    let mut input = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::BadLabelMap("truncated header".into()))?;
    if &header[0..4] != LABEL_MAP_MAGIC {
        return Err(Error::BadLabelMap("bad magic".into()));
    }
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    if width == 0 || height == 0 {
        return Err(Error::BadLabelMap("zero dimension".into()));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::BadLabelMap("dimension overflow".into()))?;
    let mut payload = vec![0u8; n * 4];
    input
        .read_exact(&mut payload)
        .map_err(|_| Error::BadLabelMap("truncated payload".into()))?;
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::BadLabelMap("trailing bytes".into()));
    }
    let labels = payload
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    LabelField::new(width, height, labels).map_err(|e| Error::BadLabelMap(e.to_string()))
}

/// Deterministic color for a label: label 0 (dam) is black, others hash to a
/// stable RGB triple. Distinct labels get distinct colors with overwhelming
/// probability; the mapping never changes between runs.
pub fn label_color(label: u32) -> [u8; 3] {
    if label == 0 {
        return [0, 0, 0];
    }
    let h = crate::eval::splitmix64(0xda_b0_05_7e ^ label as u64);
    let hue = (h & 0xffff) as f64 / 65536.0 * 360.0;
    let sat = 0.55 + ((h >> 16) & 0xff) as f64 / 255.0 * 0.35;
    let val = 0.65 + ((h >> 24) & 0xff) as f64 / 255.0 * 0.30;
    hsv_to_rgb(hue, sat, val)
}

fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [u8; 3] {
    let c = val * sat;
    let hp = hue / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

/// Writes a label map as a colorized RGB PNG for quick inspection. Dam pixels
/// are black; each region keeps one stable color.
pub fn write_label_png(labels: &LabelField, path: &Path) -> Result<()> {
    let mut rgb = Vec::with_capacity(labels.width() * labels.height() * 3);
    for &label in labels.labels() {
        rgb.extend_from_slice(&label_color(label));
    }
    image::save_buffer_with_format(
        path,
        &rgb,
        labels.width() as u32,
        labels.height() as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Encode(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::CounterRng;
    use approx::assert_relative_eq;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().expect("tempdir")
    }

    #[test]
    fn raster_rejects_bad_shapes() {
        assert!(matches!(
            Raster::new(0, 4, 1, vec![]),
            Err(Error::ZeroDimension)
        ));
        assert!(matches!(
            Raster::new(2, 2, 2, vec![0; 8]),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            Raster::new(2, 2, 1, vec![0; 3]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn load_pgm_known_pixels() {
        let dir = tmpdir();
        let path = dir.path().join("tiny.pgm");
        std::fs::write(&path, b"P5\n2 2\n255\n\x00\xff\x00\xff").unwrap();
        let r = load_image(&path).unwrap();
        assert_eq!((r.width(), r.height(), r.channels()), (2, 2, 1));
        assert_eq!(r.samples(), &[0, 255, 0, 255]);
    }

    #[test]
    fn load_rgb_png_round_trip() {
        let dir = tmpdir();
        let path = dir.path().join("rgb.png");
        let mut samples = Vec::new();
        for i in 0..100u32 {
            samples.extend_from_slice(&[(i % 251) as u8, (3 * i % 241) as u8, (7 * i % 239) as u8]);
        }
        image::save_buffer_with_format(
            &path,
            &samples,
            10,
            10,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .unwrap();
        let r = load_image(&path).unwrap();
        assert_eq!((r.width(), r.height(), r.channels()), (10, 10, 3));
        assert_eq!(r.samples(), &samples[..]);
    }

    #[test]
    fn load_truncated_png_reports_unreadable() {
        let dir = tmpdir();
        let whole = dir.path().join("whole.png");
        image::save_buffer_with_format(
            &whole,
            &[10u8, 20, 30, 40],
            2,
            2,
            image::ExtendedColorType::L8,
            image::ImageFormat::Png,
        )
        .unwrap();
        let bytes = std::fs::read(&whole).unwrap();
        let cut = dir.path().join("cut.png");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_image(&cut).unwrap_err();
        assert!(err.to_string().contains("unreadable"), "got: {err}");
    }

    #[test]
    fn load_unknown_format_rejected() {
        let dir = tmpdir();
        let path = dir.path().join("noise.bin");
        std::fs::write(&path, [0x13u8, 0x37, 0x55, 0xaa, 0x00, 0x01]).unwrap();
        assert!(matches!(
            load_image(&path),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn luminance_rgb_weights() {
        let r = Raster::new(1, 1, 3, vec![120, 117, 116]).unwrap();
        let f = to_luminance(&r);
        // 0.299*120 + 0.587*117 + 0.114*116
        assert_relative_eq!(f.get(0, 0), 117.783, max_relative = 1e-12);
    }

    #[test]
    fn luminance_grayscale_passthrough() {
        let r = Raster::new(3, 1, 1, vec![0, 128, 255]).unwrap();
        let f = to_luminance(&r);
        assert_eq!(f.values(), &[0.0, 128.0, 255.0]);
    }

    #[test]
    fn luminance_gray_triples_fixed_point() {
        // equal channels collapse to the common value
        let r = Raster::new(1, 1, 3, vec![77, 77, 77]).unwrap();
        assert_relative_eq!(to_luminance(&r).get(0, 0), 77.0, max_relative = 1e-12);
    }

    #[test]
    fn integral_constant_box_sum() {
        let f = ScalarField::from_fn(8, 8, |_, _| 3.0).unwrap();
        let it = integral(&f);
        let r = Rect::new(1, 5, 2, 6);
        assert_relative_eq!(it.box_sum(r).unwrap(), 75.0, max_relative = 1e-12);
        assert_relative_eq!(it.box_mean_clamped(r).unwrap(), 3.0, max_relative = 1e-12);
    }

    #[test]
    fn integral_matches_naive_sums() {
        let rng = CounterRng::new(41);
        let (w, h) = (16, 13);
        let f = ScalarField::from_fn(w, h, |x, y| {
            (rng.uniform((y * w + x) as u64) * 255.0).floor()
        })
        .unwrap();
        let it = integral(&f);
        for i in 0..200u64 {
            let x0 = (rng.uniform(1000 + 4 * i) * w as f64) as i64;
            let y0 = (rng.uniform(1001 + 4 * i) * h as f64) as i64;
            let x1 = x0 + (rng.uniform(1002 + 4 * i) * (w as f64 - x0 as f64)) as i64;
            let y1 = y0 + (rng.uniform(1003 + 4 * i) * (h as f64 - y0 as f64)) as i64;
            let rect = Rect::new(x0, x1, y0, y1);
            let mut naive = 0.0;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    naive += f.get(x as usize, y as usize);
                }
            }
            assert_relative_eq!(it.box_sum(rect).unwrap(), naive, max_relative = 1e-12);
        }
    }

    #[test]
    fn box_mean_clamps_to_image() {
        let f = ScalarField::from_fn(4, 4, |_, _| 7.0).unwrap();
        let it = integral(&f);
        // half the rect hangs off the left edge; mean is unchanged for a
        // constant field
        assert_relative_eq!(
            box_mean(&it, Rect::new(-3, 1, 0, 3)).unwrap(),
            7.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            box_mean(&it, Rect::new(0, 3, 0, 3)).unwrap(),
            7.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn box_mean_ramp_partial_overlap() {
        let f = ScalarField::from_fn(5, 1, |x, _| x as f64).unwrap();
        let it = integral(&f);
        // rect covers columns -2..=1, clamped to 0..=1: mean of {0, 1}
        assert_relative_eq!(
            box_mean(&it, Rect::new(-2, 1, 0, 0)).unwrap(),
            0.5,
            max_relative = 1e-12
        );
    }

    #[test]
    fn box_mean_outside_errors() {
        let f = ScalarField::from_fn(4, 4, |_, _| 1.0).unwrap();
        let it = integral(&f);
        assert!(matches!(
            box_mean(&it, Rect::new(-5, -1, 0, 3)),
            Err(Error::RectOutsideImage)
        ));
        assert!(matches!(
            box_mean(&it, Rect::new(0, 3, 4, 9)),
            Err(Error::RectOutsideImage)
        ));
    }

    #[test]
    fn single_pixel_integral() {
        let f = ScalarField::new(1, 1, vec![42.0]).unwrap();
        let it = integral(&f);
        assert_relative_eq!(
            it.box_mean_clamped(Rect::new(0, 0, 0, 0)).unwrap(),
            42.0,
            max_relative = 1e-12
        );
        assert!(it.box_sum(Rect::new(1, 3, 0, 0)).is_none());
    }

    #[test]
    fn label_map_exact_bytes() {
        let dir = tmpdir();
        let path = dir.path().join("l.dblm");
        let l = LabelField::new(2, 2, vec![1, 1, 2, 2]).unwrap();
        write_label_map(&l, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut expect = Vec::new();
        expect.extend_from_slice(b"DBLM");
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&0u32.to_le_bytes());
        for v in [1u32, 1, 2, 2] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes, expect);

        // byte-identical on rewrite
        let again = dir.path().join("l2.dblm");
        write_label_map(&l, &again).unwrap();
        assert_eq!(std::fs::read(&again).unwrap(), bytes);
    }

    #[test]
    fn label_map_round_trip_fuzzed() {
        let dir = tmpdir();
        let rng = CounterRng::new(97);
        for case in 0..20u64 {
            let w = 1 + (rng.uniform(case * 3) * 12.0) as usize;
            let h = 1 + (rng.uniform(case * 3 + 1) * 12.0) as usize;
            let labels: Vec<u32> = (0..w * h)
                .map(|i| (rng.uniform(case * 1000 + 10 + i as u64) * 6.0) as u32)
                .collect();
            let l = LabelField::new(w, h, labels).unwrap();
            let path = dir.path().join(format!("f{case}.dblm"));
            write_label_map(&l, &path).unwrap();
            let back = read_label_map(&path).unwrap();
            assert_eq!(back, l);
        }
    }

    #[test]
    fn label_map_rejects_corruption() {
        let dir = tmpdir();
        let path = dir.path().join("l.dblm");
        let l = LabelField::new(3, 2, vec![1, 2, 3, 1, 2, 3]).unwrap();
        write_label_map(&l, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let bad_magic = dir.path().join("bad_magic.dblm");
        let mut b = bytes.clone();
        b[0] = b'X';
        std::fs::write(&bad_magic, &b).unwrap();
        assert!(matches!(
            read_label_map(&bad_magic),
            Err(Error::BadLabelMap(_))
        ));

        let short = dir.path().join("short.dblm");
        std::fs::write(&short, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_label_map(&short), Err(Error::BadLabelMap(_))));

        let long = dir.path().join("long.dblm");
        let mut b = bytes.clone();
        b.push(0);
        std::fs::write(&long, &b).unwrap();
        assert!(matches!(read_label_map(&long), Err(Error::BadLabelMap(_))));
    }

    #[test]
    fn label_png_is_partition_faithful() {
        let dir = tmpdir();
        let labels = vec![0, 1, 1, 2, 2, 1, 3, 0, 3];
        let l = LabelField::new(3, 3, labels.clone()).unwrap();
        let path = dir.path().join("l.png");
        write_label_png(&l, &path).unwrap();
        let img = image::open(&path).unwrap().into_rgb8();
        // same label iff same color, and dams are black
        let mut label_to_color = std::collections::HashMap::new();
        let mut color_to_label = std::collections::HashMap::new();
        for (i, &label) in labels.iter().enumerate() {
            let px = img.get_pixel((i % 3) as u32, (i / 3) as u32).0;
            if label == 0 {
                assert_eq!(px, [0, 0, 0]);
            }
            assert_eq!(*label_to_color.entry(label).or_insert(px), px);
            assert_eq!(*color_to_label.entry(px).or_insert(label), label);
        }
    }
}
