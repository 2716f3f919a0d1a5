//! Edge detection: non-maximum suppression over a gradient field, percentile
//! threshold selection, and hysteresis linking.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gradient::{haar_gradient, BoxWidth, GradientField};
use crate::raster::ScalarField;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fractions of ridge candidates retained by the two hysteresis thresholds.
///
/// `t_high` keeps the strongest fraction as seeds, `t_low` the fraction
/// eligible for linking, so `t_high <= t_low` numerically.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CannyParams {
    t_low: f64,
    t_high: f64,
}

impl CannyParams {
    pub fn new(t_low: f64, t_high: f64) -> Result<Self> {
        if !(t_low.is_finite() && t_high.is_finite()) || t_high <= 0.0 || t_low > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "retention fractions must lie in (0, 1], got t_low={t_low}, t_high={t_high}"
            )));
        }
        if t_high > t_low {
            return Err(Error::InvalidParameter(format!(
                "t_high must not exceed t_low (both are retained fractions), \
                 got t_low={t_low}, t_high={t_high}"
            )));
        }
        Ok(Self { t_low, t_high })
    }

    pub fn t_low(&self) -> f64 {
        self.t_low
    }

    pub fn t_high(&self) -> f64 {
        self.t_high
    }
}

/// Ridge candidates left by non-maximum suppression. A zero entry means the
/// pixel was suppressed or flat; survivors keep their gradient magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct NmsCandidates {
    width: usize,
    height: usize,
    magnitudes: Vec<f64>,
}

impl NmsCandidates {
    pub fn new(width: usize, height: usize, magnitudes: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension);
        }
        if magnitudes.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "expected {} magnitudes, got {}",
                width * height,
                magnitudes.len()
            )));
        }
        if magnitudes.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidParameter(
                "candidate magnitudes must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            magnitudes,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn magnitude_at(&self, x: usize, y: usize) -> f64 {
        self.magnitudes[y * self.width + x]
    }

    pub fn is_candidate(&self, x: usize, y: usize) -> bool {
        self.magnitude_at(x, y) > 0.0
    }

    /// Number of surviving candidates.
    pub fn count(&self) -> usize {
        self.magnitudes.iter().filter(|&&m| m > 0.0).count()
    }

    /// Candidates in row-major order as (x, y, magnitude).
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.magnitudes
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(move |(i, &m)| (i % self.width, i / self.width, m))
    }
}

/// Binary edge mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl EdgeMap {
    pub fn new(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension);
        }
        if mask.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "expected {} mask entries, got {}",
                width * height,
                mask.len()
            )));
        }
        Ok(Self {
            width,
            height,
            mask,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            mask: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_edge(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&e| e).count()
    }

    /// True when any pixel in the 8-neighborhood of (x, y), or the pixel
    /// itself, is an edge.
    pub fn touches_edge(&self, x: usize, y: usize) -> bool {
        let (w, h) = (self.width as i64, self.height as i64);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && nx < w && ny >= 0 && ny < h && self.mask[(ny * w + nx) as usize] {
                    return true;
                }
            }
        }
        false
    }

    /// Writes the mask as a 1 bit-per-pixel grayscale PNG; edges are white.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let mut encoder = png::Encoder::new(
            BufWriter::new(File::create(path)?),
            self.width as u32,
            self.height as u32,
        );
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::One);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Encode(e.to_string()))?;
        let row_bytes = self.width.div_ceil(8);
        let mut packed = vec![0u8; row_bytes * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.mask[y * self.width + x] {
                    packed[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        writer
            .write_image_data(&packed)
            .map_err(|e| Error::Encode(e.to_string()))?;
        Ok(())
    }
}

/// Offsets of the two neighbors along the gradient direction, after
/// quantizing the orientation into four sectors with boundaries at
/// 22.5, 67.5, 112.5 and 157.5 degrees.
fn direction_neighbors(gx: f64, gy: f64) -> ((i64, i64), (i64, i64)) {
    let mut deg = gy.atan2(gx).to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    if deg >= 180.0 {
        deg -= 180.0;
    }
    if !(22.5..157.5).contains(&deg) {
        ((1, 0), (-1, 0))
    } else if deg < 67.5 {
        ((1, 1), (-1, -1))
    } else if deg < 112.5 {
        ((0, 1), (0, -1))
    } else {
        ((1, -1), (-1, 1))
    }
}

fn nms_row(g: &GradientField, y: usize, out_row: &mut [f64]) {
    let (w, h) = (g.width() as i64, g.height() as i64);
    let yy = y as i64;
    for (x, out) in out_row.iter_mut().enumerate() {
        let m = g.magnitude_at(x, y);
        if m <= 0.0 {
            *out = 0.0;
            continue;
        }
        let ((dx0, dy0), (dx1, dy1)) = direction_neighbors(g.gx_at(x, y), g.gy_at(x, y));
        // neighbors outside the image count as zero magnitude
        let fetch = |dx: i64, dy: i64| {
            let (nx, ny) = (x as i64 + dx, yy + dy);
            if nx >= 0 && nx < w && ny >= 0 && ny < h {
                g.magnitude_at(nx as usize, ny as usize)
            } else {
                0.0
            }
        };
        // ties survive so ridge plateaus are kept whole
        *out = if m >= fetch(dx0, dy0) && m >= fetch(dx1, dy1) {
            m
        } else {
            0.0
        };
    }
}

/// Non-maximum suppression along the quantized gradient direction.
///
/// A pixel survives when its magnitude is positive and not exceeded by either
/// directional neighbor. Runs row-parallel under the `parallel` feature with
/// output identical to [`nms_seq`].
pub fn nms(g: &GradientField) -> NmsCandidates {
    #[cfg(feature = "parallel")]
    {
        let (w, h) = (g.width(), g.height());
        let mut out = vec![0.0; w * h];
        out.par_chunks_mut(w)
            .enumerate()
            .for_each(|(y, row)| nms_row(g, y, row));
        NmsCandidates {
            width: w,
            height: h,
            magnitudes: out,
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        nms_seq(g)
    }
}

/// Single-threaded non-maximum suppression; the reference for the parallel
/// path.
pub fn nms_seq(g: &GradientField) -> NmsCandidates {
    let (w, h) = (g.width(), g.height());
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        nms_row(g, y, &mut out[y * w..(y + 1) * w]);
    }
    NmsCandidates {
        width: w,
        height: h,
        magnitudes: out,
    }
}

/// Converts retention fractions into magnitude thresholds (g_low, g_high).
///
/// For n candidates and fraction t the threshold is the k-th largest
/// candidate magnitude with k = ceil(t * n), so at least k survive (more on
/// ties). Returns None when there are no candidates.
pub fn percentile_thresholds(cands: &NmsCandidates, params: &CannyParams) -> Option<(f64, f64)> {
    let mut mags: Vec<f64> = cands
        .magnitudes
        .iter()
        .copied()
        .filter(|&m| m > 0.0)
        .collect();
    if mags.is_empty() {
        return None;
    }
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let n = mags.len();
    // the epsilon absorbs float noise in t * n so exact products do not
    // round up to one extra rank
    let rank = |t: f64| ((t * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let g_high = mags[rank(params.t_high) - 1];
    let g_low = mags[rank(params.t_low) - 1];
    Some((g_low, g_high))
}

/// Hysteresis linking: keeps every candidate at or above `g_high`, plus any
/// candidate at or above `g_low` reachable from one through 8-connected
/// steps over such candidates.
pub fn hysteresis(cands: &NmsCandidates, g_low: f64, g_high: f64) -> EdgeMap {
    let (w, h) = (cands.width, cands.height);
    let mut mask = vec![false; w * h];
    let mut stack = Vec::new();
    for (i, &m) in cands.magnitudes.iter().enumerate() {
        if m > 0.0 && m >= g_high {
            mask[i] = true;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = (ny * w as i64 + nx) as usize;
                if !mask[j] && cands.magnitudes[j] > 0.0 && cands.magnitudes[j] >= g_low {
                    mask[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    EdgeMap {
        width: w,
        height: h,
        mask,
    }
}

/// Full edge pipeline: Haar gradient, suppression, percentile thresholds,
/// hysteresis. A flat image yields an empty map.
pub fn canny(field: &ScalarField, width: BoxWidth, params: &CannyParams) -> EdgeMap {
    let g = haar_gradient(field, width);
    let cands = nms(&g);
    match percentile_thresholds(&cands, params) {
        Some((g_low, g_high)) => hysteresis(&cands, g_low, g_high),
        None => EdgeMap::empty(field.width(), field.height()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::CounterRng;
    use crate::gradient::haar_gradient_seq;

    fn grad(w: usize, h: usize, gx: Vec<f64>, gy: Vec<f64>) -> GradientField {
        GradientField::from_components(w, h, gx, gy).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(CannyParams::new(0.30, 0.21).is_ok());
        assert!(CannyParams::new(0.30, 0.30).is_ok());
        // strong fraction larger than weak fraction is inconsistent
        assert!(CannyParams::new(0.21, 0.30).is_err());
        assert!(CannyParams::new(1.2, 0.1).is_err());
        assert!(CannyParams::new(0.5, 0.0).is_err());
        assert!(CannyParams::new(f64::NAN, 0.1).is_err());
    }

    #[test]
    fn nms_flat_field_has_no_candidates() {
        let g = grad(6, 4, vec![0.0; 24], vec![0.0; 24]);
        assert_eq!(nms(&g).count(), 0);
    }

    #[test]
    fn nms_horizontal_ridge() {
        // single row, gradient along x: only the local peak survives
        let g = grad(5, 1, vec![1.0, 3.0, 2.0, 1.0, 0.5], vec![0.0; 5]);
        let c = nms(&g);
        let kept: Vec<usize> = (0..5).filter(|&x| c.is_candidate(x, 0)).collect();
        assert_eq!(kept, vec![1]);
        assert_eq!(c.magnitude_at(1, 0), 3.0);
    }

    #[test]
    fn nms_plateau_ties_are_retained() {
        let g = grad(5, 1, vec![1.0, 3.0, 3.0, 1.0, 0.5], vec![0.0; 5]);
        let c = nms(&g);
        let kept: Vec<usize> = (0..5).filter(|&x| c.is_candidate(x, 0)).collect();
        assert_eq!(kept, vec![1, 2]);
    }

    #[test]
    fn nms_vertical_sector() {
        // gradient along y: comparison runs down the column
        let g = grad(1, 4, vec![0.0; 4], vec![1.0, 4.0, 2.0, 1.0]);
        let c = nms(&g);
        let kept: Vec<usize> = (0..4).filter(|&y| c.is_candidate(0, y)).collect();
        assert_eq!(kept, vec![1]);
    }

    #[test]
    fn nms_diagonal_sector() {
        // 45 degree gradient at the center; diagonal neighbors dominate it
        let n = 9;
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        gx[4] = 2.0;
        gy[4] = 2.0;
        gx[0] = 3.0;
        gy[0] = 3.0;
        let c = nms(&grad(3, 3, gx.clone(), gy.clone()));
        assert!(!c.is_candidate(1, 1), "suppressed by the (-1,-1) neighbor");
        assert!(c.is_candidate(0, 0));

        // anti-diagonal: the (1,-1)/(-1,1) pair is consulted instead
        let mut gx2 = vec![0.0; n];
        let mut gy2 = vec![0.0; n];
        gx2[4] = 2.0;
        gy2[4] = -2.0;
        gx2[0] = 3.0;
        gy2[0] = -3.0;
        let c2 = nms(&grad(3, 3, gx2, gy2));
        assert!(
            c2.is_candidate(1, 1),
            "corner neighbor is off-direction now"
        );
    }

    #[test]
    fn nms_out_of_bounds_neighbors_count_as_zero() {
        let g = grad(1, 1, vec![5.0], vec![0.0]);
        let c = nms(&g);
        assert!(c.is_candidate(0, 0));
    }

    #[test]
    fn nms_isolated_peak_single_survivor() {
        // bump in a flat field; only pixels near the bump carry gradient
        let f = ScalarField::from_fn(21, 21, |x, y| {
            let (dx, dy) = (x as f64 - 10.0, y as f64 - 10.0);
            200.0 * (-(dx * dx + dy * dy) / 8.0).exp()
        })
        .unwrap();
        let g = haar_gradient_seq(&f, BoxWidth::new(5).unwrap());
        let c = nms(&g);
        assert!(c.count() > 0);
        for (x, y, m) in c.iter() {
            assert!(m > 0.0);
            assert_eq!(m, g.magnitude_at(x, y));
        }
    }

    #[test]
    fn percentile_small_known_ranks() {
        let mags = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let c = NmsCandidates::new(10, 1, mags).unwrap();
        let (g_low, g_high) =
            percentile_thresholds(&c, &CannyParams::new(0.5, 0.2).unwrap()).unwrap();
        assert_eq!(g_high, 9.0);
        assert_eq!(g_low, 6.0);
        // full retention keeps everything down to the minimum
        let (g_low, g_high) =
            percentile_thresholds(&c, &CannyParams::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!((g_low, g_high), (1.0, 1.0));
        // tiny fraction keeps exactly the maximum
        let (_, g_high) =
            percentile_thresholds(&c, &CannyParams::new(0.5, 0.001).unwrap()).unwrap();
        assert_eq!(g_high, 10.0);
    }

    #[test]
    fn percentile_exact_product_does_not_overshoot() {
        // 0.07 * 100 lands a hair above 7.0 in floating point; the rank must
        // still be 7
        let mags: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let c = NmsCandidates::new(100, 1, mags).unwrap();
        let (_, g_high) = percentile_thresholds(&c, &CannyParams::new(0.5, 0.07).unwrap()).unwrap();
        assert_eq!(g_high, 94.0);
        let kept = c.magnitudes().iter().filter(|&&m| m >= g_high).count();
        assert_eq!(kept, 7);
    }

    #[test]
    fn percentile_counts_on_distinct_magnitudes() {
        let rng = CounterRng::new(3);
        let mut mags: Vec<f64> = (0..1000u64).map(|i| 1.0 + rng.uniform(i)).collect();
        // distinct by construction with overwhelming odds; enforce anyway
        mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        mags.dedup();
        assert_eq!(mags.len(), 1000);
        let c = NmsCandidates::new(1000, 1, mags.clone()).unwrap();
        let p = CannyParams::new(0.30, 0.21).unwrap();
        let (g_low, g_high) = percentile_thresholds(&c, &p).unwrap();
        assert_eq!(mags.iter().filter(|&&m| m >= g_high).count(), 210);
        assert_eq!(mags.iter().filter(|&&m| m >= g_low).count(), 300);
    }

    #[test]
    fn percentile_empty_is_none() {
        let c = NmsCandidates::new(4, 1, vec![0.0; 4]).unwrap();
        assert!(percentile_thresholds(&c, &CannyParams::new(0.3, 0.2).unwrap()).is_none());
    }

    #[test]
    fn hysteresis_links_through_weak_chain() {
        // strong seed at (0,2); weak diagonal chain to (3,1); stranded weak
        // pixel at (4,4)
        let w = 5;
        let mut mags = vec![0.0; 25];
        mags[2 * w] = 10.0;
        mags[2 * w + 1] = 4.0;
        mags[w + 2] = 4.0;
        mags[w + 3] = 4.0;
        mags[4 * w + 4] = 4.0;
        let c = NmsCandidates::new(5, 5, mags).unwrap();
        let e = hysteresis(&c, 3.0, 9.0);
        assert!(e.is_edge(0, 2));
        assert!(e.is_edge(1, 2));
        assert!(e.is_edge(2, 1));
        assert!(e.is_edge(3, 1));
        assert!(!e.is_edge(4, 4), "no 8-connected path from any seed");
        assert_eq!(e.count(), 4);
    }

    #[test]
    fn hysteresis_thresholds_are_inclusive() {
        let c = NmsCandidates::new(3, 1, vec![9.0, 3.0, 2.9]).unwrap();
        let e = hysteresis(&c, 3.0, 9.0);
        assert!(e.is_edge(0, 0), "equal to g_high is strong");
        assert!(e.is_edge(1, 0), "equal to g_low links");
        assert!(!e.is_edge(2, 0), "below g_low never links");
    }

    #[test]
    fn canny_flat_image_is_empty() {
        let f = ScalarField::from_fn(32, 32, |_, _| 50.0).unwrap();
        let e = canny(
            &f,
            BoxWidth::new(5).unwrap(),
            &CannyParams::new(0.3, 0.2).unwrap(),
        );
        assert_eq!(e.count(), 0);
    }

    fn bumpy_scene() -> ScalarField {
        let rng = CounterRng::new(77);
        ScalarField::from_fn(64, 48, |x, y| {
            let base = if x < 32 { 60.0 } else { 190.0 };
            base + (rng.uniform((y * 64 + x) as u64) * 8.0).floor()
        })
        .unwrap()
    }

    #[test]
    fn canny_edges_subset_of_candidates_and_connected_to_strong() {
        let f = bumpy_scene();
        let bw = BoxWidth::new(5).unwrap();
        let p = CannyParams::new(0.30, 0.21).unwrap();
        let g = haar_gradient_seq(&f, bw);
        let cands = nms_seq(&g);
        let (g_low, g_high) = percentile_thresholds(&cands, &p).unwrap();
        let e = hysteresis(&cands, g_low, g_high);
        assert!(e.count() > 0);
        for y in 0..e.height() {
            for x in 0..e.width() {
                if e.is_edge(x, y) {
                    assert!(cands.is_candidate(x, y));
                    assert!(cands.magnitude_at(x, y) >= g_low);
                }
            }
        }
        assert_eq!(e, canny(&f, bw, &p), "composition matches the staged run");
    }

    #[test]
    fn canny_grows_with_larger_strong_fraction() {
        let f = bumpy_scene();
        let bw = BoxWidth::new(5).unwrap();
        let small = canny(&f, bw, &CannyParams::new(0.30, 0.10).unwrap());
        let large = canny(&f, bw, &CannyParams::new(0.30, 0.30).unwrap());
        for i in 0..small.mask().len() {
            assert!(
                !small.mask()[i] || large.mask()[i],
                "more seeds can only add edges"
            );
        }
        assert!(large.count() >= small.count());
    }

    #[test]
    fn edge_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.png");
        // width 11 exercises row padding in the 1-bit packing
        let mut mask = vec![false; 11 * 3];
        for i in [0usize, 3, 10, 12, 21, 32] {
            mask[i] = true;
        }
        let e = EdgeMap::new(11, 3, mask.clone()).unwrap();
        e.write_png(&path).unwrap();
        let img = image::open(&path).unwrap().into_luma8();
        assert_eq!((img.width(), img.height()), (11, 3));
        for y in 0..3u32 {
            for x in 0..11u32 {
                let expect = if mask[(y * 11 + x) as usize] { 255 } else { 0 };
                assert_eq!(img.get_pixel(x, y).0[0], expect, "at ({x},{y})");
            }
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn nms_parallel_matches_sequential() {
        let f = bumpy_scene();
        let g = haar_gradient_seq(&f, BoxWidth::new(7).unwrap());
        assert_eq!(nms(&g), nms_seq(&g));
    }
}
