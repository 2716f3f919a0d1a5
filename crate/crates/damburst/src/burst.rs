//! The merge loop: pools absorb weaker neighbors across dams that edge
//! evidence failed to defend, with an adaptive color-distance budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rag::{euclidean_distance, RegionGraph};
use crate::raster::Raster;
use crate::watershed::{LabelField, DAM};

/// Merge-loop parameters. `t_c` is the dam-strength cutoff in (0, 0.5);
/// `t_rsi` decides when a region counts as weakly confined and defaults to
/// `t_c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DamBurstParams {
    t_c: f64,
    t_rsi: f64,
}

impl DamBurstParams {
    pub const DEFAULT_T_C: f64 = 0.3;

    pub fn new(t_c: f64, t_rsi: f64) -> Result<Self> {
        if !t_c.is_finite() || t_c <= 0.0 || t_c >= 0.5 {
            return Err(Error::InvalidParameter(format!(
                "t_c must lie strictly between 0 and 0.5, got {t_c}"
            )));
        }
        if !t_rsi.is_finite() || !(0.0..=1.0).contains(&t_rsi) {
            return Err(Error::InvalidParameter(format!(
                "t_rsi must lie in [0, 1], got {t_rsi}"
            )));
        }
        Ok(Self { t_c, t_rsi })
    }

    /// `t_rsi` equal to `t_c`, the usual choice.
    pub fn with_default_rsi(t_c: f64) -> Result<Self> {
        Self::new(t_c, t_c)
    }

    pub fn t_c(&self) -> f64 {
        self.t_c
    }

    pub fn t_rsi(&self) -> f64 {
        self.t_rsi
    }
}

/// One merge as it happened, with enough context to re-derive and re-check
/// the decision later.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    /// 1-based outer pass in which the merge fired.
    pub pass: u32,
    /// Region whose scan initiated the merge.
    pub scanner: u32,
    /// Neighbor it chose.
    pub partner: u32,
    /// Lower id of the two; keeps the combined sums.
    pub survivor: u32,
    pub absorbed: u32,
    pub color_distance: f64,
    /// Strength of the burst dam at burst time.
    pub dam_strength: f64,
    /// Strength index of the scanner at scan time.
    pub scanner_strength_index: f64,
    pub t_ind_before: f64,
    pub t_ind_after: f64,
}

/// Aggregate outcome of a merge run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// Passes executed, including the final pass that merged nothing.
    pub outer_iterations: u32,
    pub total_merges: u64,
    pub region_count_initial: u64,
    pub region_count_final: u64,
    pub t_ind_final: f64,
    /// Value of the distance budget after each merge, in merge order.
    pub t_ind_trace: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BurstOutcome {
    pub stats: RunStats,
    pub merge_log: Vec<MergeRecord>,
}

/// Runs the merge loop to a fixed point.
///
/// Each pass visits alive regions ordered by ascending mean gradient (ties
/// by id, order frozen at pass start). A scanner considers neighbors whose
/// mean gradient does not exceed its own, across dams no stronger than
/// `t_c`. A weakly confined scanner (strength index at most `t_rsi`) may
/// take the closest such neighbor outright; a strongly confined one only if
/// that color distance fits the budget `t_ind`. The budget starts at zero
/// and after every merge rises to the running mean of this pass's merge
/// distances whenever that mean exceeds it. Merged sums take effect
/// immediately; passes repeat until one completes without a merge.
pub fn dam_burst(graph: &mut RegionGraph, params: &DamBurstParams) -> BurstOutcome {
    let initial = graph.alive_count() as u64;
    let mut t_ind = 0.0f64;
    let mut log: Vec<MergeRecord> = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    let mut pass = 0u32;

    loop {
        pass += 1;
        let mut order: Vec<u32> = graph.alive_ids();
        order.sort_by(|&a, &b| {
            let (ma, mb) = (
                graph.region(a).mean_gradient(),
                graph.region(b).mean_gradient(),
            );
            ma.partial_cmp(&mb).unwrap().then(a.cmp(&b))
        });

        let mut sigma = 0.0f64;
        let mut count = 0u64;
        let mut merged_any = false;

        for a in order {
            if !graph.region(a).alive {
                continue;
            }
            let rsi = graph.strength_index(a, params.t_c);
            let weak = rsi <= params.t_rsi;
            let mo_a = graph.region(a).mean_gradient();

            let mut best: Option<(f64, u32)> = None;
            for &b in graph.neighbors(a) {
                if graph.region(b).mean_gradient() > mo_a {
                    continue;
                }
                if graph
                    .dam_between(a, b)
                    .expect("adjacency mirrors dams")
                    .strength()
                    > params.t_c
                {
                    continue;
                }
                let ind = graph.color_distance(a, b);
                if !weak && ind > t_ind {
                    continue;
                }
                if best.is_none_or(|(best_ind, _)| ind < best_ind) {
                    best = Some((ind, b));
                }
            }

            if let Some((ind, b)) = best {
                let dam_strength = graph.dam_between(a, b).unwrap().strength();
                let (survivor, absorbed) = (a.min(b), a.max(b));
                let t_before = t_ind;
                graph
                    .merge(survivor, absorbed)
                    .expect("candidate was validated");
                count += 1;
                sigma += ind;
                t_ind = t_ind.max(sigma / count as f64);
                trace.push(t_ind);
                merged_any = true;
                log.push(MergeRecord {
                    pass,
                    scanner: a,
                    partner: b,
                    survivor,
                    absorbed,
                    color_distance: ind,
                    dam_strength,
                    scanner_strength_index: rsi,
                    t_ind_before: t_before,
                    t_ind_after: t_ind,
                });
            }
        }

        if !merged_any {
            break;
        }
    }

    BurstOutcome {
        stats: RunStats {
            outer_iterations: pass,
            total_merges: log.len() as u64,
            region_count_initial: initial,
            region_count_final: graph.alive_count() as u64,
            t_ind_final: t_ind,
            t_ind_trace: trace,
        },
        merge_log: log,
    }
}

/// Validates a merge log against a freshly built copy of the same graph.
///
/// Every record is re-derived: the regions must be alive and adjacent, the
/// ordering and strength gates must hold, the recorded candidate must be
/// exactly the one a scan would choose under the replayed budget, and the
/// budget arithmetic must match. The merge is then applied so later records
/// see the right state. Numeric fields are compared to 1e-9 relative.
pub fn replay_merge_log(
    graph: &mut RegionGraph,
    params: &DamBurstParams,
    log: &[MergeRecord],
) -> Result<()> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
    let fail = |index: usize, reason: String| Error::ReplayMismatch { index, reason };

    let mut t_ind = 0.0f64;
    let mut sigma = 0.0f64;
    let mut count = 0u64;
    let mut cur_pass = 0u32;

    for (i, rec) in log.iter().enumerate() {
        if rec.pass == cur_pass + 1 {
            cur_pass = rec.pass;
            sigma = 0.0;
            count = 0;
        } else if rec.pass != cur_pass {
            return Err(fail(
                i,
                format!("pass jumped from {cur_pass} to {}", rec.pass),
            ));
        }

        let (a, b) = (rec.scanner, rec.partner);
        for id in [a, b] {
            match graph.try_region(id) {
                Some(r) if r.alive => {}
                Some(_) => return Err(fail(i, format!("region {id} is not alive"))),
                None => return Err(fail(i, format!("region {id} does not exist"))),
            }
        }
        let dam = graph
            .dam_between(a, b)
            .ok_or_else(|| fail(i, format!("regions {a} and {b} are not adjacent")))?;
        let strength = dam.strength();
        if strength > params.t_c {
            return Err(fail(i, format!("dam strength {strength} exceeds t_c")));
        }
        if !close(strength, rec.dam_strength) {
            return Err(fail(
                i,
                format!("dam strength {strength} != recorded {}", rec.dam_strength),
            ));
        }
        let mo_a = graph.region(a).mean_gradient();
        if graph.region(b).mean_gradient() > mo_a {
            return Err(fail(i, "partner outranks scanner in mean gradient".into()));
        }
        let rsi = graph.strength_index(a, params.t_c);
        if !close(rsi, rec.scanner_strength_index) {
            return Err(fail(
                i,
                format!(
                    "strength index {rsi} != recorded {}",
                    rec.scanner_strength_index
                ),
            ));
        }
        let weak = rsi <= params.t_rsi;
        let ind = graph.color_distance(a, b);
        if !close(ind, rec.color_distance) {
            return Err(fail(
                i,
                format!("color distance {ind} != recorded {}", rec.color_distance),
            ));
        }
        if !weak && ind > t_ind {
            return Err(fail(
                i,
                format!("distance {ind} over budget {t_ind} for a confined region"),
            ));
        }

        // the recorded partner must be what a scan would pick: smallest
        // qualifying distance, earliest id on ties
        for &n in graph.neighbors(a) {
            if graph.region(n).mean_gradient() > mo_a {
                continue;
            }
            if graph.dam_between(a, n).unwrap().strength() > params.t_c {
                continue;
            }
            let d = graph.color_distance(a, n);
            if !weak && d > t_ind {
                continue;
            }
            if d < ind || (d == ind && n < b) {
                return Err(fail(
                    i,
                    format!("neighbor {n} at distance {d} beats recorded partner {b}"),
                ));
            }
        }

        if rec.survivor != a.min(b) || rec.absorbed != a.max(b) {
            return Err(fail(i, "survivor must be the lower id".into()));
        }
        if !close(t_ind, rec.t_ind_before) {
            return Err(fail(
                i,
                format!(
                    "budget {t_ind} != recorded before-value {}",
                    rec.t_ind_before
                ),
            ));
        }

        graph.merge(rec.survivor, rec.absorbed)?;
        count += 1;
        sigma += ind;
        t_ind = t_ind.max(sigma / count as f64);
        if !close(t_ind, rec.t_ind_after) {
            return Err(fail(
                i,
                format!("budget {t_ind} != recorded after-value {}", rec.t_ind_after),
            ));
        }
    }
    Ok(())
}

/// Projects the merge result back onto pixels.
///
/// Interior labels follow their merge root and are renumbered densely from
/// 1 in ascending root order. Dam pixels then join the 8-adjacent region
/// whose mean intensity is closest to the pixel (ties to the lower label),
/// sweeping repeatedly so thick dam bands resolve from the outside in. The
/// result contains no zeros.
pub fn finalize_labels(
    graph: &RegionGraph,
    labels: &LabelField,
    raster: &Raster,
) -> Result<LabelField> {
    let (w, h) = (labels.width(), labels.height());
    if raster.width() != w || raster.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "labels are {w}x{h}, raster is {}x{}",
            raster.width(),
            raster.height()
        )));
    }
    let channels = raster.channels();

    let max_label = labels.max_label();
    let mut root_of = vec![0u32; max_label as usize + 1];
    for id in 1..=max_label {
        match graph.try_region(id) {
            Some(_) => root_of[id as usize] = graph.root_of(id),
            None => return Err(Error::UnknownRegion(id)),
        }
    }
    let mut roots: Vec<u32> = root_of[1..].to_vec();
    roots.sort_unstable();
    roots.dedup();
    for &r in &roots {
        if !graph.region(r).alive {
            return Err(Error::DeadRegion(r));
        }
    }
    let mut dense_of = vec![0u32; max_label as usize + 1];
    let mut means: Vec<[f64; 3]> = Vec::with_capacity(roots.len());
    for (i, &r) in roots.iter().enumerate() {
        dense_of[r as usize] = i as u32 + 1;
        means.push(graph.region(r).channel_means(channels));
    }

    let mut out = vec![0u32; w * h];
    let mut pending: Vec<usize> = Vec::new();
    for (i, &label) in labels.labels().iter().enumerate() {
        if label == DAM {
            pending.push(i);
        } else {
            out[i] = dense_of[root_of[label as usize] as usize];
        }
    }

    while !pending.is_empty() {
        let mut assigned: Vec<(usize, u32)> = Vec::new();
        let mut rest: Vec<usize> = Vec::new();
        for &p in &pending {
            let (x, y) = ((p % w) as i64, (p / w) as i64);
            let mut candidates: Vec<u32> = Vec::new();
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let v = out[(ny * w as i64 + nx) as usize];
                    if v != 0 && !candidates.contains(&v) {
                        candidates.push(v);
                    }
                }
            }
            if candidates.is_empty() {
                rest.push(p);
                continue;
            }
            candidates.sort_unstable();
            let px = raster.pixel_f64(p % w, p / w);
            let mut best = candidates[0];
            let mut best_dist = euclidean_distance(
                &px[..channels],
                &means[candidates[0] as usize - 1][..channels],
            );
            for &c in &candidates[1..] {
                let d = euclidean_distance(&px[..channels], &means[c as usize - 1][..channels]);
                if d < best_dist {
                    best = c;
                    best_dist = d;
                }
            }
            assigned.push((p, best));
        }
        if assigned.is_empty() {
            return Err(Error::InvalidParameter(
                "label field contains no region pixels to absorb dams into".into(),
            ));
        }
        for (p, label) in assigned {
            out[p] = label;
        }
        pending = rest;
    }

    LabelField::new(w, h, out)
}
