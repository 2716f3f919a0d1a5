//! Watershed initialization by immersion: the gradient magnitude is
//! quantized to 256 levels and flooded level by level, leaving explicit
//! one-pixel dams between catchment basins.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::gradient::GradientField;

/// Label of dam pixels in a [`LabelField`]. Basin labels start at 1.
pub const DAM: u32 = 0;

/// Per-pixel region labels, row major. 0 marks dam pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelField {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelField {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension);
        }
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "expected {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn is_dam(&self, x: usize, y: usize) -> bool {
        self.label(x, y) == DAM
    }

    /// Largest label present; equals the region count when labels are dense.
    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Number of distinct nonzero labels.
    pub fn region_count(&self) -> usize {
        let mut seen = vec![false; self.max_label() as usize + 1];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        seen.iter().skip(1).filter(|&&s| s).count()
    }

    pub fn dam_pixel_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == DAM).count()
    }
}

/// Quantizes gradient magnitudes to 256 flood levels by scaling the maximum
/// to 255 and truncating. A flat field maps entirely to level 0.
pub fn quantize(g: &GradientField) -> Vec<u8> {
    let max = g.magnitude().iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0; g.magnitude().len()];
    }
    g.magnitude()
        .iter()
        .map(|&m| ((m / max * 255.0).floor()).min(255.0) as u8)
        .collect()
}

const INIT: u32 = u32::MAX;
const MASK: u32 = u32::MAX - 1;
const FICTITIOUS: u32 = u32::MAX;

#[inline]
fn is_basin(label: u32) -> bool {
    label != DAM && label != MASK && label != INIT
}

/// Immersion watershed over the quantized gradient magnitude.
///
/// Pixels are flooded in 256 ascending levels; each regional minimum seeds a
/// basin and pixels reached simultaneously by two basins become dam pixels
/// (label 0). Basins are 4-connected and every run over the same field
/// produces the same labels: buckets are filled in row-major order, the
/// flood queue is FIFO and neighbors are visited in a fixed order.
pub fn watershed(g: &GradientField) -> LabelField {
    let (w, h) = (g.width(), g.height());
    let n = w * h;
    let levels = quantize(g);

    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); 256];
    for (i, &lv) in levels.iter().enumerate() {
        buckets[lv as usize].push(i as u32);
    }

    let mut labels = vec![INIT; n];
    let mut dist = vec![0u32; n];
    let mut queue: VecDeque<u32> = VecDeque::new();
    let mut next_label = 0u32;

    // up, left, right, down
    let neighbors = |i: usize, out: &mut [usize; 4]| -> usize {
        let (x, y) = (i % w, i / w);
        let mut k = 0;
        if y > 0 {
            out[k] = i - w;
            k += 1;
        }
        if x > 0 {
            out[k] = i - 1;
            k += 1;
        }
        if x + 1 < w {
            out[k] = i + 1;
            k += 1;
        }
        if y + 1 < h {
            out[k] = i + w;
            k += 1;
        }
        k
    };
    let mut nb = [0usize; 4];

    for bucket in &buckets {
        if bucket.is_empty() {
            continue;
        }
        // mask the whole level first so the border scan sees it complete
        for &pi in bucket {
            labels[pi as usize] = MASK;
        }
        for &pi in bucket {
            let p = pi as usize;
            let k = neighbors(p, &mut nb);
            if nb[..k]
                .iter()
                .any(|&q| labels[q] == DAM || is_basin(labels[q]))
            {
                dist[p] = 1;
                queue.push_back(pi);
            }
        }

        // breadth-first wave from the existing basins across this level
        let mut curdist = 1u32;
        queue.push_back(FICTITIOUS);
        loop {
            let mut pi = queue.pop_front().unwrap();
            if pi == FICTITIOUS {
                if queue.is_empty() {
                    break;
                }
                queue.push_back(FICTITIOUS);
                curdist += 1;
                pi = queue.pop_front().unwrap();
            }
            let p = pi as usize;
            let mut label = labels[p];
            // once two distinct basins have claimed p it stays a dam, no
            // matter what later neighbors in the scan say
            let mut contested = false;
            let k = neighbors(p, &mut nb);
            for &q in &nb[..k] {
                let lq = labels[q];
                if dist[q] < curdist && (is_basin(lq) || lq == DAM) {
                    if is_basin(lq) {
                        if label == MASK || (label == DAM && !contested) {
                            label = lq;
                        } else if is_basin(label) && label != lq {
                            label = DAM;
                            contested = true;
                        }
                    } else if label == MASK {
                        label = DAM;
                    }
                } else if lq == MASK && dist[q] == 0 {
                    dist[q] = curdist + 1;
                    queue.push_back(q as u32);
                }
            }
            labels[p] = label;
        }

        // untouched pixels of this level are new regional minima
        for &pi in bucket {
            let p = pi as usize;
            dist[p] = 0;
            if labels[p] == MASK {
                next_label += 1;
                labels[p] = next_label;
                let mut plateau = VecDeque::from([p]);
                while let Some(r) = plateau.pop_front() {
                    let k = neighbors(r, &mut nb);
                    for &s in &nb[..k] {
                        if labels[s] == MASK {
                            labels[s] = next_label;
                            plateau.push_back(s);
                        }
                    }
                }
            }
        }
    }

    LabelField {
        width: w,
        height: h,
        labels,
    }
}
