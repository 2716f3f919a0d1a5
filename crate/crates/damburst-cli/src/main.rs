//! Command-line front end: segment one image, or sweep a parameter grid.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use damburst::gradient::BoxWidth;
use damburst::pipeline::{
    load_sweep_grid, run_pipeline, sweep, write_sweep_csv, DumpStage, PipelineConfig, StageError,
};
use damburst::raster::load_image;

/// Watershed segmentation with edge-constrained region merging.
#[derive(Parser, Debug)]
#[command(name = "damburst", version, about)]
struct Args {
    /// Input image (PNG or PNM).
    #[arg(long)]
    input: PathBuf,

    /// Output directory, created if missing.
    #[arg(long)]
    out_dir: PathBuf,

    /// Gradient box width: 5, 7, 9, 11, 13 or 15.
    #[arg(long, default_value_t = 5)]
    box_width: u32,

    /// Weak-edge retention fraction; defaults to the tuned value for the
    /// box width.
    #[arg(long)]
    t_low: Option<f64>,

    /// Strong-edge retention fraction; defaults to the tuned value for the
    /// box width.
    #[arg(long)]
    t_high: Option<f64>,

    /// Dam strength threshold, in (0, 0.5).
    #[arg(long, default_value_t = 0.3)]
    t_c: f64,

    /// Region strength index threshold, in [0, 1]; defaults to t_c.
    #[arg(long)]
    t_rsi: Option<f64>,

    /// Comma-separated intermediate dumps: gradient, edges, watershed,
    /// rag, merge-log.
    #[arg(long, value_delimiter = ',')]
    dump: Vec<String>,

    /// Sweep grid JSON; runs every cell and writes sweep.csv instead of a
    /// single segmentation.
    #[arg(long)]
    sweep: Option<PathBuf>,
}

fn fail(err: StageError) -> ExitCode {
    eprintln!("{}", err.to_json());
    ExitCode::FAILURE
}

fn run(args: &Args) -> Result<ExitCode, StageError> {
    let stage = |s: &'static str| move |error| StageError { stage: s, error };
    let box_width = BoxWidth::new(args.box_width).map_err(stage("params"))?;

    if let Some(grid_path) = &args.sweep {
        let grid = load_sweep_grid(grid_path).map_err(stage("sweep-grid"))?;
        let raster = load_image(&args.input).map_err(stage("load"))?;
        let records = sweep(&raster, &grid);
        std::fs::create_dir_all(&args.out_dir).map_err(|e| stage("write")(e.into()))?;
        let csv_path = args.out_dir.join("sweep.csv");
        write_sweep_csv(&records, &csv_path).map_err(stage("write"))?;
        let failed = records.iter().filter(|r| r.status != "ok").count();
        println!(
            "swept {} cells ({} failed), wrote {}",
            records.len(),
            failed,
            csv_path.display()
        );
        return Ok(ExitCode::SUCCESS);
    }

    let mut cfg = PipelineConfig::new(args.input.clone(), args.out_dir.clone(), box_width);
    cfg.t_low = args.t_low;
    cfg.t_high = args.t_high;
    cfg.t_c = args.t_c;
    cfg.t_rsi = args.t_rsi;
    cfg.dumps = args
        .dump
        .iter()
        .map(|s| s.trim().parse::<DumpStage>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(stage("params"))?;

    let stats = run_pipeline(&cfg)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&stats).expect("stats serialize")
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => code,
        Err(err) => fail(err),
    }
}
