//! Evaluation metrics: accuracy, balanced accuracy, AP / mAP / support-weighted
//! mAP, ROC-AUC and PR curves, k-fold splits and label-efficiency subsets.

mod classification;
mod ranking;
mod splits;

pub use classification::{
    accuracy, argmax, balanced_accuracy, map_report, per_class_recall, single_label_report, Aggregates, ClassMetric,
    MetricReport, PredictionRecord, Truth,
};
pub use ranking::{average_precision, pr_curve, roc_auc, roc_curve, PrPoint, RocPoint};
pub use splits::{kfold_splits, label_efficiency_subsets, mean_ci95, Fold, Subset};
