//! End-to-end pipeline: decode, gradient, edge detection, watershed, graph
//! construction, merging, finalization and artifact output, plus a
//! parameter-sweep driver.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::burst::{dam_burst, finalize_labels, BurstOutcome, DamBurstParams};
use crate::canny::{hysteresis, nms, percentile_thresholds, CannyParams, EdgeMap};
use crate::error::{Error, Result};
use crate::gradient::{haar_gradient, BoxWidth, GradientField};
use crate::rag::{GraphDump, RegionGraph};
use crate::raster::{load_image, to_luminance, write_label_map, write_label_png, Raster};
use crate::watershed::{watershed, LabelField};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Tuned edge-retention fractions (t_high, t_low) per box width.
pub const THRESHOLD_TABLE: [(u32, f64, f64); 6] = [
    (5, 0.210, 0.300),
    (7, 0.250, 0.370),
    (9, 0.290, 0.450),
    (11, 0.300, 0.470),
    (13, 0.307, 0.490),
    (15, 0.315, 0.500),
];

/// Default Canny fractions for a box width, from [`THRESHOLD_TABLE`].
pub fn recommended_canny(width: BoxWidth) -> CannyParams {
    let (_, t_high, t_low) = THRESHOLD_TABLE
        .iter()
        .find(|(w, _, _)| *w == width.get())
        .copied()
        .expect("every valid box width is in the table");
    CannyParams::new(t_low, t_high).expect("table entries are valid pairs")
}

/// Intermediate artifacts that can be written alongside the labeling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DumpStage {
    Gradient,
    Edges,
    Watershed,
    Rag,
    MergeLog,
}

impl std::str::FromStr for DumpStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(Self::Gradient),
            "edges" => Ok(Self::Edges),
            "watershed" => Ok(Self::Watershed),
            "rag" => Ok(Self::Rag),
            "merge-log" => Ok(Self::MergeLog),
            other => Err(Error::InvalidParameter(format!(
                "unknown dump stage {other:?}; expected gradient, edges, watershed, rag or merge-log"
            ))),
        }
    }
}

/// Everything a run needs. Threshold fields left as None fall back to the
/// tuned table (t_low, t_high) or to t_c (t_rsi).
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub box_width: BoxWidth,
    pub t_low: Option<f64>,
    pub t_high: Option<f64>,
    pub t_c: f64,
    pub t_rsi: Option<f64>,
    pub dumps: Vec<DumpStage>,
}

impl PipelineConfig {
    pub fn new(input: PathBuf, out_dir: PathBuf, box_width: BoxWidth) -> Self {
        Self {
            input,
            out_dir,
            box_width,
            t_low: None,
            t_high: None,
            t_c: DamBurstParams::DEFAULT_T_C,
            t_rsi: None,
            dumps: Vec::new(),
        }
    }

    fn canny_params(&self) -> Result<CannyParams> {
        let table = recommended_canny(self.box_width);
        CannyParams::new(
            self.t_low.unwrap_or_else(|| table.t_low()),
            self.t_high.unwrap_or_else(|| table.t_high()),
        )
    }

    fn burst_params(&self) -> Result<DamBurstParams> {
        DamBurstParams::new(self.t_c, self.t_rsi.unwrap_or(self.t_c))
    }
}

/// Parameters after every fallback has been applied.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub input: String,
    pub box_width: u32,
    pub t_low: f64,
    pub t_high: f64,
    pub t_c: f64,
    pub t_rsi: f64,
}

/// Run summary written to stats.json.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineStats {
    pub parameters: ResolvedParams,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub nms_candidates: u64,
    pub edge_pixels: u64,
    pub dam_pixels: u64,
    pub initial_regions: u64,
    pub final_regions: u64,
    /// final_regions / initial_regions: the fraction of watershed regions
    /// that survive merging.
    pub reduction_ratio: f64,
    pub outer_iterations: u32,
    pub total_merges: u64,
    pub t_ind_final: f64,
}

/// A pipeline failure tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl StageError {
    fn new(stage: &'static str) -> impl FnOnce(Error) -> Self {
        move |error| Self { stage, error }
    }

    /// Machine-readable error record for the CLI.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": { "stage": self.stage, "message": self.error.to_string() }
        })
    }
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

/// In-memory result of the compute stages.
pub struct CoreOutput {
    pub gradient: GradientField,
    pub nms_candidates: u64,
    pub edges: EdgeMap,
    pub watershed_labels: LabelField,
    pub graph: RegionGraph,
    pub outcome: BurstOutcome,
    pub final_labels: LabelField,
    /// Graph snapshot taken before merging, when requested.
    pub initial_graph: Option<GraphDump>,
}

/// Runs every compute stage on a decoded raster.
pub fn run_core(
    raster: &Raster,
    box_width: BoxWidth,
    canny: &CannyParams,
    burst: &DamBurstParams,
    keep_initial_graph: bool,
) -> std::result::Result<CoreOutput, StageError> {
    let luminance = to_luminance(raster);
    let gradient = haar_gradient(&luminance, box_width);
    let candidates = nms(&gradient);
    let nms_count = candidates.count() as u64;
    let edges = match percentile_thresholds(&candidates, canny) {
        Some((g_low, g_high)) => hysteresis(&candidates, g_low, g_high),
        None => EdgeMap::empty(raster.width(), raster.height()),
    };
    let labels = watershed(&gradient);
    let mut graph =
        RegionGraph::build(&labels, &gradient, raster, &edges).map_err(StageError::new("graph"))?;
    let initial_graph = keep_initial_graph.then(|| graph.dump());
    let outcome = dam_burst(&mut graph, burst);
    let final_labels =
        finalize_labels(&graph, &labels, raster).map_err(StageError::new("finalize"))?;
    Ok(CoreOutput {
        gradient,
        nms_candidates: nms_count,
        edges,
        watershed_labels: labels,
        graph,
        outcome,
        final_labels,
        initial_graph,
    })
}

fn write_f64_plane(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn write_json_pretty(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Full run: decode the input, compute, and write artifacts into
/// `cfg.out_dir` (created if missing): labels.dblm, labels.png, stats.json
/// and any requested dumps.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<PipelineStats, StageError> {
    let canny_params = cfg.canny_params().map_err(StageError::new("params"))?;
    let burst_params = cfg.burst_params().map_err(StageError::new("params"))?;
    let raster = load_image(&cfg.input).map_err(StageError::new("load"))?;
    let core = run_core(
        &raster,
        cfg.box_width,
        &canny_params,
        &burst_params,
        cfg.dumps.contains(&DumpStage::Rag),
    )?;

    let stats = PipelineStats {
        parameters: ResolvedParams {
            input: cfg.input.display().to_string(),
            box_width: cfg.box_width.get(),
            t_low: canny_params.t_low(),
            t_high: canny_params.t_high(),
            t_c: burst_params.t_c(),
            t_rsi: burst_params.t_rsi(),
        },
        width: raster.width(),
        height: raster.height(),
        channels: raster.channels(),
        nms_candidates: core.nms_candidates,
        edge_pixels: core.edges.count() as u64,
        dam_pixels: core.graph.dam_pixel_count(),
        initial_regions: core.outcome.stats.region_count_initial,
        final_regions: core.outcome.stats.region_count_final,
        reduction_ratio: if core.outcome.stats.region_count_initial == 0 {
            1.0
        } else {
            core.outcome.stats.region_count_final as f64
                / core.outcome.stats.region_count_initial as f64
        },
        outer_iterations: core.outcome.stats.outer_iterations,
        total_merges: core.outcome.stats.total_merges,
        t_ind_final: core.outcome.stats.t_ind_final,
    };

    let write = (|| -> Result<()> {
        fs::create_dir_all(&cfg.out_dir)?;
        write_label_map(&core.final_labels, &cfg.out_dir.join("labels.dblm"))?;
        write_label_png(&core.final_labels, &cfg.out_dir.join("labels.png"))?;
        write_json_pretty(
            &cfg.out_dir.join("stats.json"),
            &serde_json::to_value(&stats)?,
        )?;
        for stage in &cfg.dumps {
            match stage {
                DumpStage::Gradient => {
                    write_f64_plane(&cfg.out_dir.join("gradient_gx.f64"), core.gradient.gx())?;
                    write_f64_plane(&cfg.out_dir.join("gradient_gy.f64"), core.gradient.gy())?;
                    write_f64_plane(
                        &cfg.out_dir.join("gradient_magnitude.f64"),
                        core.gradient.magnitude(),
                    )?;
                }
                DumpStage::Edges => {
                    core.edges.write_png(&cfg.out_dir.join("edges.png"))?;
                }
                DumpStage::Watershed => {
                    write_label_map(&core.watershed_labels, &cfg.out_dir.join("watershed.dblm"))?;
                    write_label_png(&core.watershed_labels, &cfg.out_dir.join("watershed.png"))?;
                }
                DumpStage::Rag => {
                    let dump = core.initial_graph.as_ref().expect("kept when requested");
                    write_json_pretty(&cfg.out_dir.join("rag.json"), &serde_json::to_value(dump)?)?;
                }
                DumpStage::MergeLog => {
                    let mut out =
                        BufWriter::new(File::create(cfg.out_dir.join("merge_log.jsonl"))?);
                    for rec in &core.outcome.merge_log {
                        serde_json::to_writer(&mut out, rec)?;
                        out.write_all(b"\n")?;
                    }
                    out.flush()?;
                }
            }
        }
        Ok(())
    })();
    write.map_err(StageError::new("write"))?;

    Ok(stats)
}

/// Parameter grid for a sweep. Empty lists fall back to defaults: t_c to
/// 0.3, t_low / t_high to the tuned table, t_rsi to t_c. An empty
/// `box_width` list makes the whole grid empty.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub box_width: Vec<u32>,
    #[serde(default)]
    pub t_c: Vec<f64>,
    #[serde(default)]
    pub t_low: Vec<f64>,
    #[serde(default)]
    pub t_high: Vec<f64>,
    #[serde(default)]
    pub t_rsi: Vec<f64>,
}

pub fn load_sweep_grid(path: &Path) -> Result<SweepGrid> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// One sweep cell. Failed cells keep their parameters and carry the error
/// in `status`; the stats columns stay empty.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRecord {
    pub box_width: u32,
    pub t_low: f64,
    pub t_high: f64,
    pub t_c: f64,
    pub t_rsi: f64,
    pub status: String,
    pub nms_candidates: Option<u64>,
    pub edge_pixels: Option<u64>,
    pub initial_regions: Option<u64>,
    pub final_regions: Option<u64>,
    pub reduction_ratio: Option<f64>,
    pub outer_iterations: Option<u32>,
    pub total_merges: Option<u64>,
    pub t_ind_final: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
struct SweepCell {
    box_width: u32,
    t_c: f64,
    t_low: Option<f64>,
    t_high: Option<f64>,
    t_rsi: Option<f64>,
}

fn expand_grid(grid: &SweepGrid) -> Vec<SweepCell> {
    let t_cs: Vec<f64> = if grid.t_c.is_empty() {
        vec![DamBurstParams::DEFAULT_T_C]
    } else {
        grid.t_c.clone()
    };
    let opts = |v: &Vec<f64>| -> Vec<Option<f64>> {
        if v.is_empty() {
            vec![None]
        } else {
            v.iter().copied().map(Some).collect()
        }
    };
    let t_lows = opts(&grid.t_low);
    let t_highs = opts(&grid.t_high);
    let t_rsis = opts(&grid.t_rsi);
    let mut cells = Vec::new();
    for &box_width in &grid.box_width {
        for &t_c in &t_cs {
            for &t_low in &t_lows {
                for &t_high in &t_highs {
                    for &t_rsi in &t_rsis {
                        cells.push(SweepCell {
                            box_width,
                            t_c,
                            t_low,
                            t_high,
                            t_rsi,
                        });
                    }
                }
            }
        }
    }
    cells
}

fn run_cell(raster: &Raster, cell: &SweepCell) -> SweepRecord {
    let attempt = || -> std::result::Result<(CannyParams, DamBurstParams), StageError> {
        let width = BoxWidth::new(cell.box_width).map_err(StageError::new("params"))?;
        let table = recommended_canny(width);
        let canny = CannyParams::new(
            cell.t_low.unwrap_or_else(|| table.t_low()),
            cell.t_high.unwrap_or_else(|| table.t_high()),
        )
        .map_err(StageError::new("params"))?;
        let burst = DamBurstParams::new(cell.t_c, cell.t_rsi.unwrap_or(cell.t_c))
            .map_err(StageError::new("params"))?;
        Ok((canny, burst))
    };

    let table_or = |v: Option<f64>, pick: fn(&CannyParams) -> f64| {
        v.unwrap_or_else(|| {
            BoxWidth::new(cell.box_width)
                .map(|w| pick(&recommended_canny(w)))
                .unwrap_or(f64::NAN)
        })
    };
    let mut record = SweepRecord {
        box_width: cell.box_width,
        t_low: table_or(cell.t_low, CannyParams::t_low),
        t_high: table_or(cell.t_high, CannyParams::t_high),
        t_c: cell.t_c,
        t_rsi: cell.t_rsi.unwrap_or(cell.t_c),
        status: "ok".into(),
        nms_candidates: None,
        edge_pixels: None,
        initial_regions: None,
        final_regions: None,
        reduction_ratio: None,
        outer_iterations: None,
        total_merges: None,
        t_ind_final: None,
    };

    let run = attempt().and_then(|(canny, burst)| {
        let width = BoxWidth::new(cell.box_width).expect("validated above");
        run_core(raster, width, &canny, &burst, false)
    });
    match run {
        Ok(core) => {
            record.nms_candidates = Some(core.nms_candidates);
            record.edge_pixels = Some(core.edges.count() as u64);
            record.initial_regions = Some(core.outcome.stats.region_count_initial);
            record.final_regions = Some(core.outcome.stats.region_count_final);
            record.reduction_ratio = Some(if core.outcome.stats.region_count_initial == 0 {
                1.0
            } else {
                core.outcome.stats.region_count_final as f64
                    / core.outcome.stats.region_count_initial as f64
            });
            record.outer_iterations = Some(core.outcome.stats.outer_iterations);
            record.total_merges = Some(core.outcome.stats.total_merges);
            record.t_ind_final = Some(core.outcome.stats.t_ind_final);
        }
        Err(e) => record.status = e.to_string(),
    }
    record
}

/// Runs every cell of the grid against one decoded raster. Cells are
/// independent and run in parallel under the `parallel` feature; the record
/// order always follows the grid expansion (box_width outermost, then t_c,
/// t_low, t_high, t_rsi).
pub fn sweep(raster: &Raster, grid: &SweepGrid) -> Vec<SweepRecord> {
    let cells = expand_grid(grid);
    #[cfg(feature = "parallel")]
    {
        cells.par_iter().map(|c| run_cell(raster, c)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        cells.iter().map(|c| run_cell(raster, c)).collect()
    }
}

pub fn write_sweep_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}
