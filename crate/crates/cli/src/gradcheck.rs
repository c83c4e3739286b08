//! Finite-difference gradient report.

use std::fmt::Write as _;

use maxca_core::gradcheck::{check, negative_control, run_suite, CheckReport};

use crate::error::{CliError, CliResult};
use crate::settings::Settings;

pub fn grad_check(settings: &Settings) -> CliResult<Vec<CheckReport>> {
    let seeds = [settings.seed, settings.seed + 1, settings.seed + 2];
    let mut reports = run_suite(&seeds)?;
    if settings.negative_control {
        reports.push(check(&negative_control(), &seeds)?);
    }
    Ok(reports)
}

pub fn format_table(reports: &[CheckReport]) -> String {
    let mut s = format!(
        "{:<28} {:>12} {:>10} {:>8}  result\n",
        "op", "rel_err", "tolerance", "coords"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<28} {:>12.3e} {:>10.0e} {:>8}  {}",
            r.name,
            r.rel_err,
            r.tolerance,
            r.coordinates,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    s
}

/// Numeric failure naming every op that failed.
pub fn verdict(reports: &[CheckReport]) -> CliResult<()> {
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}
