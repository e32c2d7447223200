//! Dataset preparation, training loops and panorama evaluation.

mod config;
mod data;
mod evaluate;
mod loops;

pub use config::TrainConfig;
pub use data::{build_dataset, project_fixations, split_by_source, synthetic_odi, synthetic_odis, synthetic_samples, Odi, Sample};
pub use evaluate::{
    erp_ground_truth, evaluate, evaluate_with, predict_panorama, BypassPredictor, EvalItem, EvalReport, GeneratorPredictor,
    ImageScores, Scores, ViewPredictor, ViewportGrid,
};
pub use loops::{adversarial_finetune, content_value, pretrain, stage_content, LogRow, StepKind, TrainLog};
