//! Evaluation kit: deterministic synthetic scenes with ground truth, a
//! counter-based random source, segmentation-vs-truth comparison, and an
//! independent graph rebuild used to cross-check incremental merges.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};

use crate::canny::EdgeMap;
use crate::error::{Error, Result};
use crate::gradient::GradientField;
use crate::rag::{DamSeed, RegionGraph, RegionSeed};
use crate::raster::Raster;
use crate::watershed::{LabelField, DAM};

/// One round of the splitmix64 mixer; a cheap stateless hash of a counter.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Counter-based random source: every draw is a pure function of (seed,
/// index), so streams are reproducible from any position and never carry
/// state between callers.
#[derive(Clone, Copy, Debug)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed: splitmix64(seed),
        }
    }

    pub fn raw(&self, index: u64) -> u64 {
        splitmix64(self.seed ^ splitmix64(index))
    }

    /// Uniform draw in [0, 1) with 53 significant bits.
    pub fn uniform(&self, index: u64) -> f64 {
        (self.raw(index) >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in [0, n); n must be positive.
    pub fn below(&self, index: u64, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.uniform(index) * n as f64) as u64).min(n - 1)
    }

    /// Standard normal draw via the Box-Muller transform; indices 2i and
    /// 2i + 1 of the uniform stream feed draw i.
    pub fn normal(&self, index: u64) -> f64 {
        let u1 = self.uniform(2 * index).max(f64::MIN_POSITIVE);
        let u2 = self.uniform(2 * index + 1);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Generated image with the labeling it was built from.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub raster: Raster,
    pub ground_truth: LabelField,
}

impl SyntheticScene {
    /// Writes `{stem}.png` and `{stem}_truth.dblm` under `dir` and returns
    /// both paths.
    pub fn write_to(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        let image_path = dir.join(format!("{stem}.png"));
        let color = match self.raster.channels() {
            1 => image::ExtendedColorType::L8,
            _ => image::ExtendedColorType::Rgb8,
        };
        image::save_buffer_with_format(
            &image_path,
            self.raster.samples(),
            self.raster.width() as u32,
            self.raster.height() as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Encode(e.to_string()))?;
        let truth_path = dir.join(format!("{stem}_truth.dblm"));
        crate::raster::write_label_map(&self.ground_truth, &truth_path)?;
        Ok((image_path, truth_path))
    }
}

const STEP_NOISE_SEED: u64 = 0x5eed;

/// Vertical bands of constant intensity with optional Gaussian noise.
///
/// Band k covers the columns x with `x * bands / width == k`, so widths are
/// as even as integer division allows. Ground-truth label of band k is k + 1.
/// The noise stream is fixed, so equal arguments give equal scenes.
pub fn gen_step_scene(
    width: usize,
    height: usize,
    heights: &[u8],
    noise_sigma: f64,
) -> Result<SyntheticScene> {
    if heights.is_empty() {
        return Err(Error::InvalidParameter(
            "step scene needs at least one band".into(),
        ));
    }
    if width < heights.len() {
        return Err(Error::InvalidParameter(format!(
            "width {width} cannot hold {} bands",
            heights.len()
        )));
    }
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "bad noise sigma {noise_sigma}"
        )));
    }
    let rng = CounterRng::new(STEP_NOISE_SEED);
    let n = heights.len();
    let mut samples = Vec::with_capacity(width * height);
    let mut labels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let band = (x * n / width).min(n - 1);
            let mut v = heights[band] as f64;
            if noise_sigma > 0.0 {
                v += noise_sigma * rng.normal((y * width + x) as u64);
            }
            samples.push(v.round().clamp(0.0, 255.0) as u8);
            labels.push(band as u32 + 1);
        }
    }
    Ok(SyntheticScene {
        raster: Raster::new(width, height, 1, samples)?,
        ground_truth: LabelField::new(width, height, labels)?,
    })
}

pub const TEXTURE_BASE: u8 = 128;
pub const TEXTURE_FLAT: u8 = 200;

/// Left half: checkerboard with `period` x `period` cells alternating
/// between base + amplitude/2 and base - amplitude/2. Right half: flat.
/// Ground truth is two regions split at the midline.
pub fn gen_texture_scene(
    width: usize,
    height: usize,
    period: usize,
    amplitude: u8,
) -> Result<SyntheticScene> {
    if period == 0 {
        return Err(Error::InvalidParameter(
            "texture period must be positive".into(),
        ));
    }
    if width < 2 {
        return Err(Error::InvalidParameter(
            "texture scene needs both halves".into(),
        ));
    }
    let half = width / 2;
    let hi = TEXTURE_BASE + amplitude / 2;
    let lo = TEXTURE_BASE - amplitude / 2;
    let mut samples = Vec::with_capacity(width * height);
    let mut labels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            if x < half {
                let even = (x / period + y / period).is_multiple_of(2);
                samples.push(if even { hi } else { lo });
                labels.push(1);
            } else {
                samples.push(TEXTURE_FLAT);
                labels.push(2);
            }
        }
    }
    Ok(SyntheticScene {
        raster: Raster::new(width, height, 1, samples)?,
        ground_truth: LabelField::new(width, height, labels)?,
    })
}

/// Photo-like RGB test card: smooth background ramps, overlapping shapes, a
/// textured strip and mild noise. Fully determined by (width, height, seed);
/// no ground truth comes with it.
pub fn gen_mixed_scene(width: usize, height: usize, seed: u64) -> Result<Raster> {
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimension);
    }
    let rng = CounterRng::new(seed);
    let (wf, hf) = (width as f64, height as f64);
    let mut samples = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            let mut px = [
                30.0 + 150.0 * yf / hf,
                80.0 + 100.0 * xf / wf,
                120.0 + 80.0 * (xf + yf) / (wf + hf),
            ];
            let disk = |cx: f64, cy: f64, r: f64| {
                let (dx, dy) = (xf - cx * wf, yf - cy * hf);
                (dx * dx + dy * dy).sqrt() < r * hf
            };
            if disk(0.30, 0.38, 0.20) {
                px = [205.0, 85.0, 60.0];
            }
            if xf >= 0.55 * wf && xf < 0.82 * wf && yf >= 0.48 * hf && yf < 0.84 * hf {
                px = [70.0, 160.0, 95.0];
            }
            if disk(0.74, 0.22, 0.13) {
                px = [230.0, 210.0, 90.0];
            }
            if yf >= 0.88 * hf {
                let even = (x / 3 + y / 3) % 2 == 0;
                let delta = if even { 24.0 } else { -24.0 };
                px = [128.0 + delta, 120.0 + delta, 110.0 + delta];
            }
            let i = (y * width + x) as u64;
            for (c, v) in px.into_iter().enumerate() {
                let noise = (rng.uniform(i * 3 + c as u64) - 0.5) * 6.0;
                samples.push((v + noise).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Raster::new(width, height, 3, samples)
}

/// Outcome of comparing a segmentation to ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthComparison {
    /// Extra fragments: for each truth region covered by n > 1 predicted
    /// regions (by majority assignment), n - 1 is added.
    pub over_seg_count: u64,
    /// Predicted region ids spreading at least a tenth of their area into
    /// each of two or more truth regions. Ascending.
    pub under_seg_flags: Vec<u32>,
    /// Mean 8-connected hop distance from truth boundary pixels to the
    /// nearest predicted boundary pixel. 0 when the truth has no boundary;
    /// infinite when only the prediction lacks one.
    pub boundary_distance_mean: f64,
    pub boundary_distance_max: f64,
}

const UNDER_SEG_SHARE: f64 = 0.10;

fn boundary_mask(l: &LabelField) -> Vec<bool> {
    let (w, h) = (l.width(), l.height());
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let own = l.label(x, y);
            if own == DAM {
                mask[y * w + x] = true;
                continue;
            }
            let differs = (x > 0 && l.label(x - 1, y) != own)
                || (x + 1 < w && l.label(x + 1, y) != own)
                || (y > 0 && l.label(x, y - 1) != own)
                || (y + 1 < h && l.label(x, y + 1) != own);
            mask[y * w + x] = differs;
        }
    }
    mask
}

/// Compares a predicted labeling against ground truth of the same size.
/// Dam pixels (label 0) on either side are excluded from overlap counting.
pub fn compare_to_ground_truth(
    pred: &LabelField,
    truth: &LabelField,
) -> Result<GroundTruthComparison> {
    let (w, h) = (pred.width(), pred.height());
    if truth.width() != w || truth.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {w}x{h}, truth is {}x{}",
            truth.width(),
            truth.height()
        )));
    }

    // overlap histogram per predicted region
    let mut overlap: BTreeMap<u32, BTreeMap<u32, u64>> = BTreeMap::new();
    for i in 0..w * h {
        let (p, t) = (pred.labels()[i], truth.labels()[i]);
        if p != DAM && t != DAM {
            *overlap.entry(p).or_default().entry(t).or_default() += 1;
        }
    }

    let mut assigned: BTreeMap<u32, u64> = BTreeMap::new();
    let mut under = Vec::new();
    for (&p, hist) in &overlap {
        let total: u64 = hist.values().sum();
        // majority truth region; count ties fall to the lower id
        let (major, _) = hist
            .iter()
            .map(|(&id, &count)| (id, count))
            .max_by_key(|&(id, count)| (count, std::cmp::Reverse(id)))
            .unwrap();
        *assigned.entry(major).or_default() += 1;
        let spread = hist
            .values()
            .filter(|&&c| c as f64 >= UNDER_SEG_SHARE * total as f64)
            .count();
        if spread >= 2 {
            under.push(p);
        }
    }
    let over_seg_count = assigned.values().map(|&n| n.saturating_sub(1)).sum();

    // directed boundary distance, truth to prediction
    let pred_boundary = boundary_mask(pred);
    let truth_boundary = boundary_mask(truth);
    let truth_count = truth_boundary.iter().filter(|&&b| b).count();
    let (mean, max) = if truth_count == 0 {
        (0.0, 0.0)
    } else if pred_boundary.iter().all(|&b| !b) {
        (f64::INFINITY, f64::INFINITY)
    } else {
        let mut dist = vec![u32::MAX; w * h];
        let mut queue = VecDeque::new();
        for i in 0..w * h {
            if pred_boundary[i] {
                dist[i] = 0;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = (ny * w as i64 + nx) as usize;
                    if dist[j] == u32::MAX {
                        dist[j] = dist[i] + 1;
                        queue.push_back(j);
                    }
                }
            }
        }
        let mut sum = 0.0;
        let mut max = 0.0f64;
        for i in 0..w * h {
            if truth_boundary[i] {
                sum += dist[i] as f64;
                max = max.max(dist[i] as f64);
            }
        }
        (sum / truth_count as f64, max)
    };

    Ok(GroundTruthComparison {
        over_seg_count,
        under_seg_flags: under,
        boundary_distance_mean: mean,
        boundary_distance_max: max,
    })
}

/// Rebuilds a region graph from scratch with plain per-pixel accumulation
/// into maps. Shares no bookkeeping with [`RegionGraph::build`] beyond the
/// final assembly, so it serves as an oracle for the incremental path.
pub fn rebuild_oracle(
    labels: &LabelField,
    gradient: &GradientField,
    raster: &Raster,
    edges: &EdgeMap,
) -> Result<RegionGraph> {
    let (w, h) = (labels.width(), labels.height());
    if gradient.width() != w
        || gradient.height() != h
        || raster.width() != w
        || raster.height() != h
        || edges.width() != w
        || edges.height() != h
    {
        return Err(Error::DimensionMismatch(
            "labels, gradient, raster and edges must share dimensions".into(),
        ));
    }
    let channels = raster.channels();
    let mut regions: BTreeMap<u32, (u64, f64, [f64; 3])> = BTreeMap::new();
    let mut dams: BTreeMap<(u32, u32), (u64, u64)> = BTreeMap::new();

    for y in 0..h {
        for x in 0..w {
            let label = labels.label(x, y);
            if label != DAM {
                let slot = regions.entry(label).or_insert((0, 0.0, [0.0; 3]));
                slot.0 += 1;
                slot.1 += gradient.magnitude_at(x, y);
                for (c, &v) in raster.pixel(x, y).iter().enumerate() {
                    slot.2[c] += v as f64;
                }
                continue;
            }
            let mut incident: Vec<u32> = Vec::new();
            let mut backed = false;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    if edges.is_edge(nx as usize, ny as usize) {
                        backed = true;
                    }
                    let v = labels.label(nx as usize, ny as usize);
                    if v != DAM && !incident.contains(&v) {
                        incident.push(v);
                    }
                }
            }
            incident.sort_unstable();
            for i in 0..incident.len() {
                for j in i + 1..incident.len() {
                    let slot = dams.entry((incident[i], incident[j])).or_insert((0, 0));
                    slot.0 += 1;
                    slot.1 += backed as u64;
                }
            }
        }
    }

    let region_seeds: Vec<RegionSeed> = regions
        .into_iter()
        .map(
            |(id, (pixel_count, gradient_sum, channel_sums))| RegionSeed {
                id,
                pixel_count,
                gradient_sum,
                channel_sums,
            },
        )
        .collect();
    let dam_seeds: Vec<DamSeed> = dams
        .into_iter()
        .map(|((a, b), (length, strengthened))| DamSeed {
            a,
            b,
            length,
            strengthened,
        })
        .collect();
    RegionGraph::from_parts(channels, region_seeds, dam_seeds)
}

/// Folds a freshly built graph through a root map: regions with the same
/// root pool their sums, dams between same-root regions disappear, and the
/// rest are re-keyed by root pair and added together. The result is what an
/// incremental merge sequence with those roots must equal.
pub fn collapse_by_roots(graph: &RegionGraph, root_of: &dyn Fn(u32) -> u32) -> Result<RegionGraph> {
    let mut regions: BTreeMap<u32, RegionSeed> = BTreeMap::new();
    for r in graph.regions().filter(|r| r.alive) {
        let root = root_of(r.id);
        let seed = regions.entry(root).or_insert(RegionSeed {
            id: root,
            pixel_count: 0,
            gradient_sum: 0.0,
            channel_sums: [0.0; 3],
        });
        seed.pixel_count += r.pixel_count;
        seed.gradient_sum += r.gradient_sum;
        for c in 0..3 {
            seed.channel_sums[c] += r.channel_sums[c];
        }
    }
    let mut dams: BTreeMap<(u32, u32), DamSeed> = BTreeMap::new();
    for d in graph.dams() {
        let (ra, rb) = (root_of(d.regions.0), root_of(d.regions.1));
        if ra == rb {
            continue;
        }
        let k = if ra < rb { (ra, rb) } else { (rb, ra) };
        let seed = dams.entry(k).or_insert(DamSeed {
            a: k.0,
            b: k.1,
            length: 0,
            strengthened: 0,
        });
        seed.length += d.length;
        seed.strengthened += d.strengthened;
    }
    RegionGraph::from_parts(
        graph.channels(),
        regions.into_values().collect(),
        dams.into_values().collect(),
    )
}

fn close(a: f64, b: f64, rel_tol: f64) -> bool {
    (a - b).abs() <= rel_tol * a.abs().max(b.abs()).max(1.0)
}

/// Structural equality of two graphs over their alive parts: exact counts
/// and dam tallies, sums within `rel_tol`. Returns a description of the
/// first mismatch.
pub fn compare_graphs(
    a: &RegionGraph,
    b: &RegionGraph,
    rel_tol: f64,
) -> std::result::Result<(), String> {
    if a.channels() != b.channels() {
        return Err(format!(
            "channels differ: {} vs {}",
            a.channels(),
            b.channels()
        ));
    }
    let ids_a = a.alive_ids();
    let ids_b = b.alive_ids();
    if ids_a != ids_b {
        return Err(format!("alive region ids differ: {ids_a:?} vs {ids_b:?}"));
    }
    for &id in &ids_a {
        let (ra, rb) = (a.region(id), b.region(id));
        if ra.pixel_count != rb.pixel_count {
            return Err(format!(
                "region {id} pixel count {} vs {}",
                ra.pixel_count, rb.pixel_count
            ));
        }
        if !close(ra.gradient_sum, rb.gradient_sum, rel_tol) {
            return Err(format!(
                "region {id} gradient sum {} vs {}",
                ra.gradient_sum, rb.gradient_sum
            ));
        }
        for c in 0..a.channels() {
            if !close(ra.channel_sums[c], rb.channel_sums[c], rel_tol) {
                return Err(format!(
                    "region {id} channel {c} sum {} vs {}",
                    ra.channel_sums[c], rb.channel_sums[c]
                ));
            }
        }
    }
    let dams_a: Vec<_> = a
        .dams()
        .map(|d| (d.regions, d.length, d.strengthened))
        .collect();
    let dams_b: Vec<_> = b
        .dams()
        .map(|d| (d.regions, d.length, d.strengthened))
        .collect();
    if dams_a != dams_b {
        for (da, db) in dams_a.iter().zip(&dams_b) {
            if da != db {
                return Err(format!("dam mismatch: {da:?} vs {db:?}"));
            }
        }
        return Err(format!(
            "dam sets differ in size: {} vs {}",
            dams_a.len(),
            dams_b.len()
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canny::EdgeMap;
    use crate::watershed::watershed;

    #[test]
    fn rng_is_reproducible_and_uniform_in_range() {
        let a = CounterRng::new(7);
        let b = CounterRng::new(7);
        for i in 0..100 {
            assert_eq!(a.raw(i), b.raw(i));
            let u = a.uniform(i);
            assert!((0.0..1.0).contains(&u));
            assert!(a.below(i, 10) < 10);
        }
        let c = CounterRng::new(8);
        assert_ne!(a.raw(0), c.raw(0));
    }

    #[test]
    fn rng_normal_moments() {
        let rng = CounterRng::new(99);
        let n = 20_000u64;
        let (mut sum, mut sq) = (0.0, 0.0);
        for i in 0..n {
            let v = rng.normal(i);
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn step_scene_exact_bands_without_noise() {
        let s = gen_step_scene(8, 3, &[10, 200], 0.0).unwrap();
        for y in 0..3 {
            for x in 0..8 {
                let expect = if x < 4 { 10 } else { 200 };
                assert_eq!(s.raster.pixel(x, y)[0], expect);
                assert_eq!(s.ground_truth.label(x, y), if x < 4 { 1 } else { 2 });
            }
        }
        // uneven split: 3 bands over width 8 give twice 3 columns then 2
        let s = gen_step_scene(8, 1, &[1, 2, 3], 0.0).unwrap();
        let bands: Vec<u8> = (0..8).map(|x| s.raster.pixel(x, 0)[0]).collect();
        assert_eq!(bands, vec![1, 1, 1, 2, 2, 2, 3, 3]);
    }

    #[test]
    fn step_scene_deterministic_and_noise_centered() {
        let a = gen_step_scene(64, 32, &[60, 180], 2.0).unwrap();
        let b = gen_step_scene(64, 32, &[60, 180], 2.0).unwrap();
        assert_eq!(a.raster, b.raster);
        for (band, expect) in [(0usize, 60.0), (1, 180.0)] {
            let mut sum = 0.0;
            let mut count = 0.0;
            for y in 0..32 {
                for x in band * 32..(band + 1) * 32 {
                    sum += a.raster.pixel(x, y)[0] as f64;
                    count += 1.0;
                }
            }
            assert!((sum / count - expect).abs() < 0.5, "band {band} drifted");
        }
    }

    #[test]
    fn step_scene_validation() {
        assert!(gen_step_scene(4, 4, &[], 0.0).is_err());
        assert!(gen_step_scene(2, 4, &[1, 2, 3], 0.0).is_err());
        assert!(gen_step_scene(4, 4, &[1], -1.0).is_err());
    }

    #[test]
    fn texture_scene_exact_values() {
        let s = gen_texture_scene(128, 64, 2, 100).unwrap();
        // first cell is high: 128 + 50
        assert_eq!(s.raster.pixel(0, 0)[0], 178);
        assert_eq!(s.raster.pixel(1, 1)[0], 178);
        assert_eq!(s.raster.pixel(2, 0)[0], 78);
        assert_eq!(s.raster.pixel(0, 2)[0], 78);
        assert_eq!(s.raster.pixel(2, 2)[0], 178);
        for x in 64..128 {
            assert_eq!(s.raster.pixel(x, 5)[0], TEXTURE_FLAT);
        }
        assert_eq!(s.ground_truth.label(63, 0), 1);
        assert_eq!(s.ground_truth.label(64, 0), 2);
        let again = gen_texture_scene(128, 64, 2, 100).unwrap();
        assert_eq!(s.raster, again.raster);
    }

    #[test]
    fn mixed_scene_is_deterministic_and_contrasty() {
        let a = gen_mixed_scene(96, 64, 5).unwrap();
        let b = gen_mixed_scene(96, 64, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.channels(), 3);
        let c = gen_mixed_scene(96, 64, 6).unwrap();
        assert_ne!(a, c, "seed must matter");
        let min = *a.samples().iter().min().unwrap();
        let max = *a.samples().iter().max().unwrap();
        assert!(max - min > 120, "scene should span a wide intensity range");
    }

    #[test]
    fn compare_identical_maps_is_clean() {
        let s = gen_step_scene(16, 8, &[10, 200], 0.0).unwrap();
        let c = compare_to_ground_truth(&s.ground_truth, &s.ground_truth).unwrap();
        assert_eq!(c.over_seg_count, 0);
        assert!(c.under_seg_flags.is_empty());
        assert_eq!(c.boundary_distance_mean, 0.0);
        assert_eq!(c.boundary_distance_max, 0.0);
    }

    #[test]
    fn compare_detects_split_region() {
        let truth = gen_step_scene(8, 4, &[10, 200], 0.0).unwrap().ground_truth;
        // left band split horizontally into regions 1 and 3
        let pred = LabelField::new(
            8,
            4,
            (0..32)
                .map(|i| {
                    let (x, y) = (i % 8, i / 8);
                    if x >= 4 {
                        2
                    } else if y < 2 {
                        1
                    } else {
                        3
                    }
                })
                .collect(),
        )
        .unwrap();
        let c = compare_to_ground_truth(&pred, &truth).unwrap();
        assert_eq!(c.over_seg_count, 1);
        assert!(c.under_seg_flags.is_empty());
        // the extra split surfaces as over-segmentation, not boundary drift:
        // every truth boundary pixel still lies on a predicted boundary
        assert_eq!(c.boundary_distance_max, 0.0);
    }

    #[test]
    fn compare_detects_merged_regions() {
        let truth = gen_step_scene(8, 4, &[10, 200], 0.0).unwrap().ground_truth;
        let pred = LabelField::new(8, 4, vec![1; 32]).unwrap();
        let c = compare_to_ground_truth(&pred, &truth).unwrap();
        assert_eq!(c.over_seg_count, 0);
        assert_eq!(c.under_seg_flags, vec![1]);
        assert!(
            c.boundary_distance_mean.is_infinite(),
            "a missing prediction boundary is infinitely far from the truth"
        );
    }

    #[test]
    fn under_seg_threshold_is_one_tenth() {
        let truth = gen_step_scene(20, 1, &[10, 200], 0.0).unwrap().ground_truth;
        // 1 of 11 pixels in the second band: 9.1%, under the line
        let narrow =
            LabelField::new(20, 1, (0..20).map(|x| if x < 11 { 1 } else { 2 }).collect()).unwrap();
        let c = compare_to_ground_truth(&narrow, &truth).unwrap();
        assert!(c.under_seg_flags.is_empty());
        // 2 of 12 pixels: 16.7%, flagged
        let wide =
            LabelField::new(20, 1, (0..20).map(|x| if x < 12 { 1 } else { 2 }).collect()).unwrap();
        let c = compare_to_ground_truth(&wide, &truth).unwrap();
        assert_eq!(c.under_seg_flags, vec![1]);
    }

    #[test]
    fn compare_rejects_size_mismatch() {
        let a = LabelField::new(4, 4, vec![1; 16]).unwrap();
        let b = LabelField::new(4, 5, vec![1; 20]).unwrap();
        assert!(compare_to_ground_truth(&a, &b).is_err());
    }

    fn fuzz_inputs(seed: u64) -> (LabelField, GradientField, Raster, EdgeMap) {
        let rng = CounterRng::new(seed);
        let (w, h) = (20usize, 14usize);
        let mag: Vec<f64> = (0..w * h)
            .map(|i| (rng.uniform(i as u64) * 8.0).floor())
            .collect();
        let g = GradientField::from_components(w, h, mag, vec![0.0; w * h]).unwrap();
        let labels = watershed(&g);
        let samples: Vec<u8> = (0..w * h).map(|i| rng.raw(7000 + i as u64) as u8).collect();
        let raster = Raster::new(w, h, 1, samples).unwrap();
        let mask: Vec<bool> = (0..w * h)
            .map(|i| rng.uniform(9000 + i as u64) < 0.2)
            .collect();
        let edges = EdgeMap::new(w, h, mask).unwrap();
        (labels, g, raster, edges)
    }

    #[test]
    fn rebuild_matches_incremental_build() {
        for seed in 0..15u64 {
            let (labels, g, raster, edges) = fuzz_inputs(100 + seed);
            let built = RegionGraph::build(&labels, &g, &raster, &edges).unwrap();
            let oracle = rebuild_oracle(&labels, &g, &raster, &edges).unwrap();
            compare_graphs(&built, &oracle, 1e-9).unwrap_or_else(|m| panic!("seed {seed}: {m}"));
        }
    }

    #[test]
    fn collapse_matches_merge_sequences() {
        for seed in 0..15u64 {
            let (labels, g, raster, edges) = fuzz_inputs(200 + seed);
            let mut graph = RegionGraph::build(&labels, &g, &raster, &edges).unwrap();
            let rng = CounterRng::new(300 + seed);
            // the test keeps its own root bookkeeping, separate from the
            // graph's merge pointers
            let max_id = labels.max_label();
            let mut roots: Vec<u32> = (0..=max_id).collect();
            for step in 0..30u64 {
                let alive = graph.alive_ids();
                let with_neighbors: Vec<u32> = alive
                    .iter()
                    .copied()
                    .filter(|&id| !graph.neighbors(id).is_empty())
                    .collect();
                if with_neighbors.is_empty() {
                    break;
                }
                let a = with_neighbors
                    [rng.below(seed * 1000 + step * 2, with_neighbors.len() as u64) as usize];
                let ns = graph.neighbors(a).to_vec();
                let b = ns[rng.below(seed * 1000 + step * 2 + 1, ns.len() as u64) as usize];
                let (survivor, absorbed) = (a.min(b), a.max(b));
                graph.merge(survivor, absorbed).unwrap();
                for r in roots.iter_mut() {
                    if *r == absorbed {
                        *r = survivor;
                    }
                }
            }
            for id in 1..=max_id {
                assert_eq!(
                    graph.root_of(id),
                    roots[id as usize],
                    "seed {seed} root of {id}"
                );
            }
            let naive = rebuild_oracle(&labels, &g, &raster, &edges).unwrap();
            let collapsed = collapse_by_roots(&naive, &|id| roots[id as usize]).unwrap();
            compare_graphs(&graph, &collapsed, 1e-9).unwrap_or_else(|m| panic!("seed {seed}: {m}"));
        }
    }

    #[test]
    fn scene_write_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = gen_step_scene(12, 6, &[20, 90, 220], 0.0).unwrap();
        let (img, truth) = s.write_to(dir.path(), "bands").unwrap();
        let r = crate::raster::load_image(&img).unwrap();
        assert_eq!(r, s.raster);
        let t = crate::raster::read_label_map(&truth).unwrap();
        assert_eq!(t, s.ground_truth);
    }
}
