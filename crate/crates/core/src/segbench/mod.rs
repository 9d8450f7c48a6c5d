//! Synthetic two-circles benchmark: images with a dark and a bright disk of
//! equal size, where the target is the dark one and training sees no pixel
//! labels, only per-image size and centroid bounds.

mod data;
mod experiment;
mod model;

pub use data::{
    decode_pgm, encode_pgm16, encode_pgm8, generate_dataset, generate_sample, load_dataset, read_pgm, synthesize, Circle,
    Dataset, Manifest, ManifestEntry, Sample, Split, SynthConfig, MAX_PLACEMENT_ATTEMPTS,
};
pub use experiment::{
    run_experiment, run_seed, stability_std, ExperimentResult, ExperimentSetting, MethodConfig, PreparedSplit, RunResult,
    RunSummary, SegProblem, CENTROID_SLACK, SIZE_SLACK, STABILITY_WINDOW,
};
pub use model::{pixel_features, predict_from_features, predict_mask, ModelConfig, PixelModel, N_CLASSES, N_FEATURES};

use crate::error::{Error, Result};

/// `2|S ∩ Y| / (|S| + |Y|)`, with 1 when both masks are empty.
pub fn dice(pred: &[bool], gt: &[bool]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape {
            op: "dice",
            detail: format!("{} vs {} pixels", pred.len(), gt.len()),
        });
    }
    let (mut inter, mut s, mut y) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        inter += (p && g) as usize;
        s += p as usize;
        y += g as usize;
    }
    if s + y == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (s + y) as f64)
}
