//! Single-level region-merging segmentation.
//!
//! The pipeline runs a box-difference gradient over the luminance plane,
//! keeps a percentile-thresholded Canny edge map as a strengthening mask,
//! floods the gradient into watershed basins, and then merges basins across
//! weak dams under a self-calibrating intensity budget. The result is a
//! dense label map plus a replayable merge log.

pub mod burst;
pub mod canny;
pub mod error;
pub mod eval;
pub mod gradient;
pub mod pipeline;
pub mod rag;
pub mod raster;
pub mod watershed;

pub use burst::{
    dam_burst, finalize_labels, replay_merge_log, BurstOutcome, DamBurstParams, MergeRecord,
    RunStats,
};
pub use canny::{canny, CannyParams, EdgeMap, NmsCandidates};
pub use error::{Error, Result};
pub use gradient::{haar_gradient, sobel_gradient, BoxWidth, GradientField};
pub use pipeline::{
    recommended_canny, run_pipeline, sweep, PipelineConfig, PipelineStats, StageError, SweepGrid,
};
pub use rag::RegionGraph;
pub use raster::{
    load_image, read_label_map, to_luminance, write_label_map, write_label_png, Raster, ScalarField,
};
pub use watershed::{watershed, LabelField, DAM};
