//! Slow reference implementations for checking the fast path.
//!
//! Nothing here shares assembly code with the engine: the dense sandwich
//! builds every matrix explicitly, the pseudo-likelihood is maximized by a
//! generic optimizer and pathway mixtures are checked by simulation. They
//! ship in the library so `csmart validate` can run them anywhere.

use std::fmt;

use nalgebra::DMatrix;
use serde::Serialize;

pub mod dense;
pub mod instances;
pub mod mixture;
pub mod pml;
pub mod suite;

pub use suite::run_suite;

/// One engine-versus-oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub label: String,
    pub engine: f64,
    pub oracle: f64,
    pub abs_discrepancy: f64,
    pub rel_discrepancy: f64,
    /// Bound on `abs_discrepancy`.
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

impl OracleReport {
    pub fn new(label: impl Into<String>, engine: f64, oracle: f64, tolerance: f64) -> Self {
        let abs = (engine - oracle).abs();
        OracleReport {
            label: label.into(),
            engine,
            oracle,
            abs_discrepancy: abs,
            rel_discrepancy: abs / oracle.abs().max(f64::MIN_POSITIVE),
            tolerance,
            pass: abs <= tolerance,
            detail: String::new(),
        }
    }

    /// Worst entry of `engine − oracle`, scaled by `max(1, max|oracle|)`.
    pub fn matrices(label: impl Into<String>, engine: &DMatrix<f64>, oracle: &DMatrix<f64>, tolerance: f64) -> Self {
        let scale = oracle.amax().max(1.0);
        let (mut worst, mut at) = (0.0, (0, 0));
        for j in 0..oracle.ncols() {
            for i in 0..oracle.nrows() {
                let d = (engine[(i, j)] - oracle[(i, j)]).abs();
                if !(d <= worst) {
                    worst = d;
                    at = (i, j);
                }
            }
        }
        let mut r = OracleReport::new(label, engine[at], oracle[at], tolerance);
        r.abs_discrepancy = worst / scale;
        r.pass = r.abs_discrepancy <= tolerance;
        r.detail = format!("worst entry ({}, {})", at.0, at.1);
        r
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    /// Worst of several reports under one label.
    pub fn worst(label: impl Into<String>, reports: impl IntoIterator<Item = OracleReport>) -> Option<Self> {
        let mut count = 0;
        let mut worst: Option<OracleReport> = None;
        for r in reports {
            count += 1;
            let ratio = |r: &OracleReport| r.abs_discrepancy / r.tolerance;
            if worst.as_ref().is_none_or(|w| !(ratio(&r) <= ratio(w))) {
                worst = Some(r);
            }
        }
        worst.map(|mut w| {
            w.label = label.into();
            w.detail = format!("worst of {count}; {}", w.detail);
            w
        })
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: engine {:.10e} oracle {:.10e} discrepancy {:.3e} (tol {:.1e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.label,
            self.engine,
            self.oracle,
            self.abs_discrepancy,
            self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, "; {}", self.detail)?;
        }
        Ok(())
    }
}
