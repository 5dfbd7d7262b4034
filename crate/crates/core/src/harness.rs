//! Replicated simulation experiments over a design grid.
//!
//! Each replication generates a trial, fits it once per distinct
//! `(weights, covariance)` pair and evaluates every variance variant on that
//! fit. Replications run through [`crate::parallel::map_indexed`] and are
//! folded in replication order, so summaries are bit-identical at any worker
//! count.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gee::{fit, CovarianceFlags, FitConfig};
use crate::inference::{interval, Contrast};
use crate::parallel::{map_indexed, Workers};
use crate::sandwich::{sandwich, FsaConfig, Preset};
use crate::simgen::{generate_trial, spec_from_design, DesignPoint, GenerativeSpec, SimulationDesign};
use crate::weights::WeightMode;

/// Share of failed replications above which a point is flagged.
pub const FAILURE_FLAG_RATE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variant {
    pub label: String,
    pub fsa: FsaConfig,
    pub weights: WeightMode,
    pub covariance: CovarianceFlags,
}

impl Variant {
    pub fn preset(preset: Preset, weights: WeightMode, covariance: CovarianceFlags) -> Self {
        Variant {
            label: preset.label().to_string(),
            fsa: preset.config(),
            weights,
            covariance,
        }
    }

    /// All four presets on one fit.
    pub fn presets(weights: WeightMode, covariance: CovarianceFlags) -> Vec<Self> {
        Preset::ALL
            .into_iter()
            .map(|p| Variant::preset(p, weights, covariance))
            .collect()
    }

    fn fit_key(&self) -> (WeightMode, CovarianceFlags) {
        (self.weights, self.covariance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub level: f64,
    pub workers: Workers,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            level: 0.95,
            workers: Workers::default(),
        }
    }
}

/// One variant's result in one replication.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Success(Replicate),
    FitFailed(String),
    VarianceFailed { estimate: f64, error: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replicate {
    pub estimate: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Replicate {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Share of intervals excluding zero and `sqrt(mean variance)`.
pub fn nozero_and_bootse(reps: &[Replicate]) -> Result<(f64, f64)> {
    if reps.is_empty() {
        return Err(Error::InvalidParameter("no successful replications".into()));
    }
    let b = reps.len() as f64;
    let nozero = reps.iter().filter(|r| !r.covers(0.0)).count() as f64 / b;
    let bootse = (reps.iter().map(|r| r.variance).sum::<f64>() / b).sqrt();
    Ok((nozero, bootse))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub label: String,
    /// Replications whose fit succeeded.
    pub fits: usize,
    /// Replications whose fit and variance both succeeded.
    pub successes: usize,
    pub failures: usize,
    pub avg_estimate: f64,
    pub bias: f64,
    pub sd_estimate: f64,
    pub rmse: f64,
    pub avg_se: f64,
    /// Over successes only.
    pub coverage: f64,
    /// Over all replications, failures counted as misses.
    pub coverage_all: f64,
    pub mcse: f64,
    /// Set when fewer than two replications support `mcse`.
    pub mcse_unreliable: bool,
    pub nozero: f64,
    pub bootse: f64,
    /// First failure message, if any.
    pub first_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointResult {
    pub point: DesignPoint,
    pub replications: usize,
    pub truth: f64,
    pub variants: Vec<VariantSummary>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub variant_labels: Vec<String>,
    pub points: Vec<PointResult>,
}

impl ExperimentResult {
    pub fn any_flagged(&self) -> bool {
        self.points.iter().any(|p| p.flagged)
    }
}

/// Outcomes for every variant in one replication of `spec`.
pub fn replicate(
    spec: &GenerativeSpec,
    rep: u64,
    variants: &[Variant],
    contrast: &Contrast,
    level: f64,
) -> Vec<Outcome> {
    let ds = match generate_trial(spec, rep) {
        Ok(ds) => ds,
        Err(e) => return vec![Outcome::FitFailed(e.to_string()); variants.len()],
    };
    let mut fits: Vec<((WeightMode, CovarianceFlags), Result<crate::gee::FitResult>)> = Vec::new();
    variants
        .iter()
        .map(|v| {
            let key = v.fit_key();
            let slot = match fits.iter().position(|(k, _)| *k == key) {
                Some(k) => k,
                None => {
                    let cfg = FitConfig {
                        covariance: v.covariance,
                        weights: v.weights,
                        ..FitConfig::default()
                    };
                    fits.push((key, fit(&ds, &cfg)));
                    fits.len() - 1
                }
            };
            let f = match &fits[slot].1 {
                Ok(f) => f,
                Err(e) => return Outcome::FitFailed(e.to_string()),
            };
            let estimate = contrast.coefficients.dot(&f.model.theta());
            let evaluated = sandwich(f, v.fsa).and_then(|s| {
                let variance = s.variance_of(&contrast.coefficients).max(0.0);
                let ci = interval(estimate, variance, f.n(), f.model.p, f.model.q, v.fsa.reference, level)?;
                Ok(Replicate {
                    estimate,
                    variance,
                    ci_low: ci.low,
                    ci_high: ci.high,
                })
            });
            match evaluated {
                Ok(r) => Outcome::Success(r),
                Err(e) => Outcome::VarianceFailed {
                    estimate,
                    error: e.to_string(),
                },
            }
        })
        .collect()
}

fn summarize(label: &str, outcomes: &[&Outcome], truth: f64) -> VariantSummary {
    let total = outcomes.len();
    let mut estimates = Vec::with_capacity(total);
    let mut reps = Vec::with_capacity(total);
    let mut first_failure = None;
    for o in outcomes {
        match o {
            Outcome::Success(r) => {
                estimates.push(r.estimate);
                reps.push(*r);
            }
            Outcome::VarianceFailed { estimate, error } => {
                estimates.push(*estimate);
                first_failure.get_or_insert_with(|| error.clone());
            }
            Outcome::FitFailed(e) => {
                first_failure.get_or_insert_with(|| e.clone());
            }
        }
    }
    let mean = |v: &mut dyn Iterator<Item = f64>, k: usize| if k == 0 { f64::NAN } else { v.sum::<f64>() / k as f64 };
    let fits = estimates.len();
    let avg = mean(&mut estimates.iter().copied(), fits);
    let sd = mean(&mut estimates.iter().map(|e| (e - avg).powi(2)), fits).sqrt();
    let bias = avg - truth;
    let rmse = mean(&mut estimates.iter().map(|e| (e - truth).powi(2)), fits).sqrt();
    let successes = reps.len();
    let covered = reps.iter().filter(|r| r.covers(truth)).count();
    let coverage = if successes == 0 { f64::NAN } else { covered as f64 / successes as f64 };
    let coverage_all = if total == 0 { f64::NAN } else { covered as f64 / total as f64 };
    let (mcse, mcse_unreliable) = if successes < 2 {
        (0.5, true)
    } else {
        ((coverage * (1.0 - coverage) / successes as f64).sqrt(), false)
    };
    let (nozero, bootse) = nozero_and_bootse(&reps).unwrap_or((f64::NAN, f64::NAN));
    VariantSummary {
        label: label.to_string(),
        fits,
        successes,
        failures: total - successes,
        avg_estimate: avg,
        bias,
        sd_estimate: sd,
        rmse,
        avg_se: bootse,
        coverage,
        coverage_all,
        mcse,
        mcse_unreliable,
        nozero,
        bootse,
        first_failure,
    }
}

/// `replications` replications of one generative spec. `truth` is the
/// contrast's true value.
pub fn run_point(
    point: DesignPoint,
    spec: &GenerativeSpec,
    replications: usize,
    variants: &[Variant],
    contrast: &Contrast,
    truth: f64,
    options: &RunOptions,
) -> Result<PointResult> {
    spec.validate()?;
    let outcomes = map_indexed(replications, options.workers, |rep| {
        replicate(spec, rep as u64, variants, contrast, options.level)
    });
    let summaries: Vec<VariantSummary> = variants
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let column: Vec<&Outcome> = outcomes.iter().map(|o| &o[k]).collect();
            summarize(&v.label, &column, truth)
        })
        .collect();
    let flagged = summaries
        .iter()
        .any(|s| s.failures as f64 > FAILURE_FLAG_RATE * replications as f64);
    Ok(PointResult {
        point,
        replications,
        truth,
        variants: summaries,
        flagged,
    })
}

/// True value of a factorial-coded contrast.
pub fn contrast_truth(contrast: &Contrast, beta: &[f64; 4]) -> Result<f64> {
    if contrast.coefficients.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "contrast {} has {} coefficients; the factorial design needs 4",
            contrast.label,
            contrast.coefficients.len()
        )));
    }
    Ok(contrast.coefficients.rows(0, 4).dot(&DVector::from_row_slice(beta)))
}

/// Every point of `design` under every variant.
pub fn run_experiment(
    design: &SimulationDesign,
    variants: &[Variant],
    contrast: &Contrast,
    options: &RunOptions,
) -> Result<ExperimentResult> {
    design.validate()?;
    let truth = contrast_truth(contrast, &design.generator.beta)?;
    let mut points = Vec::new();
    for (k, pt) in design.points().into_iter().enumerate() {
        let spec = spec_from_design(&pt, &design.generator, design.point_seed(k))?;
        let res = run_point(pt, &spec, design.replications, variants, contrast, truth, options)?;
        log::info!(
            "point {}/{}: n={} m={} delta={} icc={} done{}",
            k + 1,
            design.points().len(),
            pt.n,
            pt.m,
            pt.delta,
            pt.icc,
            if res.flagged { " (flagged)" } else { "" }
        );
        points.push(res);
    }
    Ok(ExperimentResult {
        variant_labels: variants.iter().map(|v| v.label.clone()).collect(),
        points,
    })
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn design_cells(p: &PointResult) -> Vec<String> {
    let pt = &p.point;
    let members = match pt.m {
        crate::simgen::ClusterSizes::Fixed(m) => (pt.n * m) as f64,
        crate::simgen::ClusterSizes::Range([lo, hi]) => pt.n as f64 * (lo + hi) as f64 / 2.0,
    };
    vec![
        f6(pt.icc),
        f6(pt.delta),
        f6(pt.response_rate),
        f6(pt.cor_xy),
        pt.m.to_string(),
        pt.n.to_string(),
        members.to_string(),
        p.replications.to_string(),
    ]
}

const DESIGN_HEADER: [&str; 8] = ["icc", "delta", "kappa", "cor_xy", "m", "n", "N", "replications"];

fn wide_rows(result: &ExperimentResult) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = DESIGN_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend(["avg", "bias", "sd", "rmse"].map(String::from));
    for l in &result.variant_labels {
        header.push(format!("{l}_se"));
        header.push(format!("{l}_coverage"));
    }
    let rows = result
        .points
        .iter()
        .map(|p| {
            let mut row = design_cells(p);
            let lead = p.variants.first();
            for v in [
                lead.map(|s| s.avg_estimate),
                lead.map(|s| s.bias),
                lead.map(|s| s.sd_estimate),
                lead.map(|s| s.rmse),
            ] {
                row.push(f6(v.unwrap_or(f64::NAN)));
            }
            for s in &p.variants {
                row.push(f6(s.avg_se));
                row.push(f6(s.coverage));
            }
            row
        })
        .collect();
    (header, rows)
}

fn detail_rows(result: &ExperimentResult) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = DESIGN_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend(
        [
            "variant",
            "avg",
            "bias",
            "sd",
            "rmse",
            "se",
            "coverage",
            "mcse",
            "mcse_unreliable",
            "coverage_all",
            "successes",
            "failures",
            "flagged",
            "nozero",
            "bootse",
        ]
        .map(String::from),
    );
    let mut rows = Vec::new();
    for p in &result.points {
        for s in &p.variants {
            let mut row = design_cells(p);
            row.push(s.label.clone());
            for v in [s.avg_estimate, s.bias, s.sd_estimate, s.rmse, s.avg_se, s.coverage, s.mcse] {
                row.push(f6(v));
            }
            row.push(s.mcse_unreliable.to_string());
            row.push(f6(s.coverage_all));
            row.push(s.successes.to_string());
            row.push(s.failures.to_string());
            row.push(p.flagged.to_string());
            row.push(f6(s.nozero));
            row.push(f6(s.bootse));
            rows.push(row);
        }
    }
    (header, rows)
}

fn write_csv_rows<W: Write>(out: W, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Design columns, `avg, bias, sd, rmse` of the first variant, then
/// `<variant>_se, <variant>_coverage` for each variant.
pub fn write_table_csv<W: Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let (h, r) = wide_rows(result);
    write_csv_rows(out, &h, &r)
}

/// One row per point and variant with every summary.
pub fn write_detail_csv<W: Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let (h, r) = detail_rows(result);
    write_csv_rows(out, &h, &r)
}

/// The wide table with padded columns.
pub fn render_text(result: &ExperimentResult) -> String {
    let (header, rows) = wide_rows(result);
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for line in std::iter::once(&header).chain(&rows) {
        let cells: Vec<String> = line.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
        let _ = writeln!(s, "{}", cells.join("  ").trim_end());
    }
    for p in result.points.iter().filter(|p| p.flagged) {
        let _ = writeln!(
            s,
            "flagged: n={} m={} delta={} icc={}: more than {:.0}% of replications failed",
            p.point.n,
            p.point.m,
            p.point.delta,
            p.point.icc,
            FAILURE_FLAG_RATE * 100.0
        );
    }
    s
}

/// Writes `path` (wide CSV) plus `.detail.csv` and `.txt` siblings. Returns
/// the paths written.
pub fn emit_table(result: &ExperimentResult, path: &Path) -> Result<Vec<PathBuf>> {
    let detail = path.with_extension("detail.csv");
    let text = path.with_extension("txt");
    write_table_csv(result, std::fs::File::create(path)?)?;
    write_detail_csv(result, std::fs::File::create(&detail)?)?;
    std::fs::write(&text, render_text(result))?;
    Ok(vec![path.to_path_buf(), detail, text])
}
