//! Classical survival statistics: Kaplan–Meier, log-rank, Cox regression,
//! time-dependent ROC, restricted mean survival, bootstrap comparison,
//! risk stratification, calibration, decision curves and nomograms.

mod bootstrap;
mod clinical;
mod cox;
mod km;
mod logrank;
mod nomogram;
mod rmst;
mod roc;

pub use bootstrap::{bootstrap_auc_compare, BootstrapCompare, DEFAULT_RESAMPLES};
pub use clinical::{calibration_curve, dca_curve, median_stratify, CalibrationCurve, CalibrationPoint, DcaRow, RiskGroup};
pub use cox::{coxph_fit, multivariable_pipeline, partial_likelihood, promotes, CoxFit, PipelineResult, UnivariableRow, MAX_NEWTON_ITERS};
pub use km::{km_fit, KmCurve};
pub use logrank::{logrank_test, LogRank};
pub use nomogram::{nomogram_build, nomogram_score, NomogramModel, NomogramScore, NomogramVariable};
pub use rmst::{rmst, rmst_compare, Rmst, RmstComparison};
pub use roc::timeroc_auc;

use crate::error::{bail, Result};

/// Shared checks on a (times, events) pair.
pub(crate) fn check_survival(times: &[f64], events: &[bool]) -> Result<()> {
    if times.len() != events.len() {
        bail!(Shape, "{} times but {} event flags", times.len(), events.len());
    }
    if let Some(t) = times.iter().find(|t| !t.is_finite() || **t < 0.0) {
        bail!(Data, "survival times must be finite and non-negative, got {t}");
    }
    Ok(())
}
