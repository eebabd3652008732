//! Loss tolerance selection: the best aggregate CVaR among baseline runs.

use crate::error::{Error, Result};
use crate::harness::eval::AggregateReport;

/// Minimum over `cvars`; an empty slice is a domain error.
pub fn select_zeta_from(cvars: &[f64]) -> Result<f64> {
    cvars
        .iter()
        .copied()
        .min_by(|a, b| a.total_cmp(b))
        .ok_or_else(|| Error::Domain("select_zeta needs at least one baseline report".into()))
}

pub fn select_zeta(reports: &[AggregateReport]) -> Result<f64> {
    select_zeta_from(&reports.iter().map(|r| r.cvar.mean).collect::<Vec<_>>())
}
