//! Objectives, augmentation, optimization, pseudo-labeling and evaluation.

mod augment;
mod config;
mod eval;
mod loss;
mod metrics;
mod optim;
mod pseudo;
mod trainer;

pub use augment::{apply_2d, apply_3d, augment, augmented_input, Aug2d, Aug3d, Mode};
pub use config::{DataConfig, TrainConfig, TrainSection, UdaSection};
pub use eval::{evaluate, predict, score, Report, SamplePrediction, StreamScore};
pub use loss::{
    branch_seg_loss, branch_xm_loss, seg_loss, total_loss, xm_loss, xm_loss_from_logits, LossTerms, LossWeights,
    StepOutputs, Supervision,
};
pub use metrics::{argmax, ConfusionMatrix};
pub use optim::{AdamW, OneCycle};
pub use pseudo::{filter_by_class, generate_pseudo_labels, PseudoLabelSet, PseudoLabels, PseudoSource};
pub use trainer::{train, write_report_record, TrainOutcome};

