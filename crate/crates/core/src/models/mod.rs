//! Black-box classifier and progressive-growing adversarial autoencoder.

mod aae;
mod blackbox;
mod checkpoint;
mod mbd;
mod metrics;
mod report;
mod schedule;

pub use aae::{sample_prior, train_pgaae, Aae, AaeConfig, AAE_KIND, DIVERSITY_SAMPLES};
pub use blackbox::{one_vs_rest_bce, train_classifier, BlackBox, ClassifierConfig, CLASSIFIER_KIND};
pub use metrics::{argmax, balanced_accuracy, diversity_score, per_class_rmse, RmseReport};
pub use report::{EpochRecord, ReportLine, StageRecord, TrainReport};
pub use mbd::minibatch_discrimination;
pub use schedule::{GrowthSchedule, StageSpec, BASE_DISCRIMINATOR_WIDTH};
