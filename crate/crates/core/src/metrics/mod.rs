//! Evaluation quantities: confusion counts, exact rates, ROC curve and AUC.

mod confusion;
mod report;
mod roc;

pub use confusion::{accuracy, confusion_at_threshold, sensitivity, specificity, ConfusionMatrix, Rate};
pub use report::{evaluate, EvalReport, AUC_AGREEMENT_TOLERANCE};
pub use roc::{align_scores, auc_pair_oracle, auc_trapezoid, roc_curve, RocCurve, RocPoint};
