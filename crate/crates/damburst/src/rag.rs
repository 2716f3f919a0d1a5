//! Region adjacency graph over a watershed labeling: per-region sums, dams
//! with edge-strengthened pixel counts, and the merge operation that keeps
//! both consistent.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::canny::EdgeMap;
use crate::error::{Error, Result};
use crate::gradient::GradientField;
use crate::raster::Raster;
use crate::watershed::{LabelField, DAM};

/// Aggregates for one region. Sums are kept rather than means so merges are
/// exact single additions.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub id: u32,
    pub pixel_count: u64,
    pub gradient_sum: f64,
    pub channel_sums: [f64; 3],
    pub alive: bool,
}

impl Region {
    /// Mean gradient magnitude over the region interior; the merge order key.
    pub fn mean_gradient(&self) -> f64 {
        if self.pixel_count == 0 {
            0.0
        } else {
            self.gradient_sum / self.pixel_count as f64
        }
    }

    /// Mean intensity per channel; entries past `channels` stay zero.
    pub fn channel_means(&self, channels: usize) -> [f64; 3] {
        let mut means = [0.0; 3];
        if self.pixel_count > 0 {
            for (mean, &sum) in means.iter_mut().zip(&self.channel_sums).take(channels) {
                *mean = sum / self.pixel_count as f64;
            }
        }
        means
    }
}

/// Shared dam between two regions; `regions` is ordered (low, high).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dam {
    pub regions: (u32, u32),
    pub length: u64,
    pub strengthened: u64,
}

impl Dam {
    /// Fraction of dam pixels backed by a detected edge, in [0, 1].
    pub fn strength(&self) -> f64 {
        self.strengthened as f64 / self.length as f64
    }
}

/// Seed for assembling a graph without scanning pixels.
#[derive(Clone, Copy, Debug)]
pub struct RegionSeed {
    pub id: u32,
    pub pixel_count: u64,
    pub gradient_sum: f64,
    pub channel_sums: [f64; 3],
}

#[derive(Clone, Copy, Debug)]
pub struct DamSeed {
    pub a: u32,
    pub b: u32,
    pub length: u64,
    pub strengthened: u64,
}

fn key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Euclidean distance between two equal-length mean vectors.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Region adjacency graph. Region ids are 1-based; index `id - 1` into the
/// region table. Dams are keyed by ordered id pairs; adjacency lists stay
/// sorted ascending so scans are deterministic.
#[derive(Clone, Debug)]
pub struct RegionGraph {
    channels: usize,
    regions: Vec<Region>,
    dams: BTreeMap<(u32, u32), Dam>,
    adjacency: Vec<Vec<u32>>,
    merged_into: Vec<u32>,
    dam_pixel_count: u64,
}

impl RegionGraph {
    /// Builds the graph from a watershed labeling in one pixel scan.
    ///
    /// Every dam pixel adds one unit of length to the dam of each pair of
    /// distinct regions in its 8-neighborhood, so a triple point feeds all
    /// three pairwise dams. The pixel counts as strengthened for those dams
    /// when it is an edge pixel or has one in its 8-neighborhood.
    pub fn build(
        labels: &LabelField,
        gradient: &GradientField,
        raster: &Raster,
        edges: &EdgeMap,
    ) -> Result<Self> {
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
        let max_label = labels.max_label() as usize;
        let mut regions: Vec<Region> = (0..max_label)
            .map(|i| Region {
                id: i as u32 + 1,
                pixel_count: 0,
                gradient_sum: 0.0,
                channel_sums: [0.0; 3],
                alive: false,
            })
            .collect();
        let mut dams: BTreeMap<(u32, u32), Dam> = BTreeMap::new();
        let mut dam_pixel_count = 0u64;

        for y in 0..h {
            for x in 0..w {
                let label = labels.label(x, y);
                if label != DAM {
                    let r = &mut regions[label as usize - 1];
                    r.pixel_count += 1;
                    r.gradient_sum += gradient.magnitude_at(x, y);
                    let px = raster.pixel(x, y);
                    for (sum, &v) in r.channel_sums.iter_mut().zip(px) {
                        *sum += v as f64;
                    }
                    continue;
                }
                dam_pixel_count += 1;
                let mut incident = [0u32; 8];
                let mut k = 0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let v = labels.label(nx as usize, ny as usize);
                        if v != DAM && !incident[..k].contains(&v) {
                            incident[k] = v;
                            k += 1;
                        }
                    }
                }
                if k < 2 {
                    continue;
                }
                incident[..k].sort_unstable();
                let strengthened = edges.touches_edge(x, y) as u64;
                for i in 0..k {
                    for j in i + 1..k {
                        let d = dams.entry((incident[i], incident[j])).or_insert(Dam {
                            regions: (incident[i], incident[j]),
                            length: 0,
                            strengthened: 0,
                        });
                        d.length += 1;
                        d.strengthened += strengthened;
                    }
                }
            }
        }

        for r in &mut regions {
            r.alive = r.pixel_count > 0;
        }
        let mut graph = Self {
            channels,
            regions,
            dams,
            adjacency: vec![Vec::new(); max_label],
            merged_into: vec![0; max_label],
            dam_pixel_count,
        };
        graph.rebuild_adjacency();
        Ok(graph)
    }

    /// Assembles a graph directly from seeds; no pixel data involved.
    /// Ids must be distinct and positive but need not be contiguous.
    pub fn from_parts(
        channels: usize,
        regions: Vec<RegionSeed>,
        dams: Vec<DamSeed>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        let max_id = regions.iter().map(|r| r.id).max().unwrap_or(0) as usize;
        let mut table: Vec<Region> = (0..max_id)
            .map(|i| Region {
                id: i as u32 + 1,
                pixel_count: 0,
                gradient_sum: 0.0,
                channel_sums: [0.0; 3],
                alive: false,
            })
            .collect();
        for seed in &regions {
            if seed.id == 0 {
                return Err(Error::InvalidParameter(
                    "region id 0 is reserved for dams".into(),
                ));
            }
            if seed.pixel_count == 0 {
                return Err(Error::InvalidParameter(format!(
                    "region {} has zero pixels",
                    seed.id
                )));
            }
            let slot = &mut table[seed.id as usize - 1];
            if slot.alive {
                return Err(Error::InvalidParameter(format!(
                    "duplicate region id {}",
                    seed.id
                )));
            }
            slot.pixel_count = seed.pixel_count;
            slot.gradient_sum = seed.gradient_sum;
            slot.channel_sums = seed.channel_sums;
            slot.alive = true;
        }
        let mut dam_map = BTreeMap::new();
        for seed in &dams {
            if seed.a == seed.b {
                return Err(Error::InvalidParameter(format!(
                    "dam {0}-{0} is degenerate",
                    seed.a
                )));
            }
            for id in [seed.a, seed.b] {
                if id == 0 || id as usize > max_id || !table[id as usize - 1].alive {
                    return Err(Error::UnknownRegion(id));
                }
            }
            if seed.length == 0 || seed.strengthened > seed.length {
                return Err(Error::InvalidParameter(format!(
                    "dam {}-{} needs length > 0 and strengthened <= length, got {}/{}",
                    seed.a, seed.b, seed.strengthened, seed.length
                )));
            }
            let k = key(seed.a, seed.b);
            if dam_map
                .insert(
                    k,
                    Dam {
                        regions: k,
                        length: seed.length,
                        strengthened: seed.strengthened,
                    },
                )
                .is_some()
            {
                return Err(Error::InvalidParameter(format!(
                    "duplicate dam {}-{}",
                    seed.a, seed.b
                )));
            }
        }
        let mut graph = Self {
            channels,
            regions: table,
            dams: dam_map,
            adjacency: vec![Vec::new(); max_id],
            merged_into: vec![0; max_id],
            dam_pixel_count: 0,
        };
        graph.rebuild_adjacency();
        Ok(graph)
    }

    fn rebuild_adjacency(&mut self) {
        for list in &mut self.adjacency {
            list.clear();
        }
        for &(a, b) in self.dams.keys() {
            self.adjacency[a as usize - 1].push(b);
            self.adjacency[b as usize - 1].push(a);
        }
        for list in &mut self.adjacency {
            list.sort_unstable();
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn region(&self, id: u32) -> &Region {
        &self.regions[id as usize - 1]
    }

    pub fn try_region(&self, id: u32) -> Option<&Region> {
        self.regions.get(id as usize - 1)
    }

    pub fn regions(&self) -> impl Iterator<Item = &Region> {
        self.regions.iter()
    }

    /// Ids of alive regions, ascending.
    pub fn alive_ids(&self) -> Vec<u32> {
        self.regions
            .iter()
            .filter(|r| r.alive)
            .map(|r| r.id)
            .collect()
    }

    pub fn alive_count(&self) -> usize {
        self.regions.iter().filter(|r| r.alive).count()
    }

    pub fn dam_between(&self, a: u32, b: u32) -> Option<&Dam> {
        self.dams.get(&key(a, b))
    }

    /// All dams, ordered by id pair.
    pub fn dams(&self) -> impl Iterator<Item = &Dam> {
        self.dams.values()
    }

    pub fn dam_count(&self) -> usize {
        self.dams.len()
    }

    /// Neighbor ids of `id`, sorted ascending.
    pub fn neighbors(&self, id: u32) -> &[u32] {
        &self.adjacency[id as usize - 1]
    }

    /// Total dam pixels in the source labeling (0 for assembled graphs).
    pub fn dam_pixel_count(&self) -> u64 {
        self.dam_pixel_count
    }

    /// Sum of alive region pixel counts.
    pub fn interior_pixel_count(&self) -> u64 {
        self.regions
            .iter()
            .filter(|r| r.alive)
            .map(|r| r.pixel_count)
            .sum()
    }

    /// Mean strength of the dams of `id` that are strictly stronger than
    /// `t_c`; 0 when none are. The result is therefore either 0 or a value
    /// in (t_c, 1].
    pub fn strength_index(&self, id: u32, t_c: f64) -> f64 {
        let mut sum = 0.0;
        let mut count = 0u64;
        for &n in self.neighbors(id) {
            let s = self.dams[&key(id, n)].strength();
            if s > t_c {
                sum += s;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Euclidean distance between the mean channel intensities of two
    /// regions, over the raster's channels.
    pub fn color_distance(&self, a: u32, b: u32) -> f64 {
        let ma = self.region(a).channel_means(self.channels);
        let mb = self.region(b).channel_means(self.channels);
        euclidean_distance(&ma[..self.channels], &mb[..self.channels])
    }

    /// Merges `absorbed` into `survivor`: sums add, the shared dam vanishes,
    /// dams toward common neighbors concatenate (lengths and strengthened
    /// counts add), and adjacency is rewired. Both regions must be alive and
    /// adjacent.
    pub fn merge(&mut self, survivor: u32, absorbed: u32) -> Result<()> {
        if survivor == absorbed {
            return Err(Error::InvalidParameter(format!(
                "cannot merge region {survivor} with itself"
            )));
        }
        for id in [survivor, absorbed] {
            if id == 0 || id as usize > self.regions.len() {
                return Err(Error::UnknownRegion(id));
            }
            if !self.regions[id as usize - 1].alive {
                return Err(Error::DeadRegion(id));
            }
        }
        if self.dams.remove(&key(survivor, absorbed)).is_none() {
            return Err(Error::NotAdjacent(survivor, absorbed));
        }

        let (count, gsum, csums) = {
            let r = &self.regions[absorbed as usize - 1];
            (r.pixel_count, r.gradient_sum, r.channel_sums)
        };
        let s = &mut self.regions[survivor as usize - 1];
        s.pixel_count += count;
        s.gradient_sum += gsum;
        for (sum, &v) in s.channel_sums.iter_mut().zip(&csums) {
            *sum += v;
        }
        self.regions[absorbed as usize - 1].alive = false;
        self.merged_into[absorbed as usize - 1] = survivor;

        let moved = std::mem::take(&mut self.adjacency[absorbed as usize - 1]);
        for &n in &moved {
            if n == survivor {
                continue;
            }
            let old = self
                .dams
                .remove(&key(absorbed, n))
                .expect("dam mirrors adjacency");
            let merged = self.dams.entry(key(survivor, n)).or_insert(Dam {
                regions: key(survivor, n),
                length: 0,
                strengthened: 0,
            });
            merged.length += old.length;
            merged.strengthened += old.strengthened;

            let list = &mut self.adjacency[n as usize - 1];
            if let Ok(pos) = list.binary_search(&absorbed) {
                list.remove(pos);
            }
            if let Err(pos) = list.binary_search(&survivor) {
                list.insert(pos, survivor);
            }
            let list = &mut self.adjacency[survivor as usize - 1];
            if let Err(pos) = list.binary_search(&n) {
                list.insert(pos, n);
            }
        }
        let list = &mut self.adjacency[survivor as usize - 1];
        if let Ok(pos) = list.binary_search(&absorbed) {
            list.remove(pos);
        }
        Ok(())
    }

    /// Follows merge pointers to the current representative of `id`.
    pub fn root_of(&self, id: u32) -> u32 {
        let mut cur = id;
        loop {
            let next = self.merged_into[cur as usize - 1];
            if next == 0 {
                return cur;
            }
            cur = next;
        }
    }

    /// Stable snapshot for serialization: alive regions by id, dams by pair.
    pub fn dump(&self) -> GraphDump {
        GraphDump {
            channels: self.channels,
            regions: self
                .regions
                .iter()
                .filter(|r| r.alive)
                .map(|r| RegionDump {
                    id: r.id,
                    pixel_count: r.pixel_count,
                    mean_gradient: r.mean_gradient(),
                    channel_means: r.channel_means(self.channels),
                })
                .collect(),
            dams: self
                .dams
                .values()
                .map(|d| DamDump {
                    a: d.regions.0,
                    b: d.regions.1,
                    length: d.length,
                    strengthened: d.strengthened,
                    strength: d.strength(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct GraphDump {
    pub channels: usize,
    pub regions: Vec<RegionDump>,
    pub dams: Vec<DamDump>,
}

#[derive(Debug, Serialize)]
pub struct RegionDump {
    pub id: u32,
    pub pixel_count: u64,
    pub mean_gradient: f64,
    pub channel_means: [f64; 3],
}

#[derive(Debug, Serialize)]
pub struct DamDump {
    pub a: u32,
    pub b: u32,
    pub length: u64,
    pub strengthened: u64,
    pub strength: f64,
}
