//! Every oracle comparison at test scale.

use nalgebra::DMatrix;

use super::dense::{cell_mean_fsa4, dense_sandwich};
use super::instances::{random_instance, single_regimen_instance};
use super::mixture::{mixture_moment_mc, PathwayMoments};
use super::pml::{constrained_pml, profile_sigma2};
use super::OracleReport;
use crate::covariance::{cs_inverse_apply, IccMode, Structure, VarianceMode};
use crate::error::{Error, Result};
use crate::gee::{fit, CausalDesign, CovarianceFlags, FitConfig, FitResult};
use crate::sandwich::{fsa3_scale, sandwich, sandwich_plain, FsaConfig, Reference};
use crate::simgen::regimen_moments_from_pathways;
use crate::trial_data::{EmbeddedAI, Sign, TrialDataset};
use crate::weights::WeightMode;

pub const DENSE_TOL: f64 = 1e-10;
pub const IDENTITY_TOL: f64 = 1e-8;
pub const PML_TOL: f64 = 1e-5;

/// Variance compositions checked against the dense oracle.
pub fn dense_variants() -> Vec<(&'static str, WeightMode, FsaConfig)> {
    let fsa = |dof_scale, bias_correct| FsaConfig {
        dof_scale,
        bias_correct,
        reference: Reference::T,
    };
    vec![
        ("plain", WeightMode::Known, fsa(false, false)),
        ("FSA3", WeightMode::Known, fsa(true, false)),
        ("FSA4", WeightMode::Known, fsa(false, true)),
        ("FSA3+FSA4", WeightMode::Known, fsa(true, true)),
        ("estimated weights", WeightMode::Estimated, fsa(false, false)),
        ("estimated weights+FSA3", WeightMode::Estimated, fsa(true, false)),
        ("estimated weights+FSA4", WeightMode::Estimated, fsa(false, true)),
        ("estimated weights+FSA3+FSA4", WeightMode::Estimated, fsa(true, true)),
    ]
}

fn covariance_for(seed: u64) -> CovarianceFlags {
    match seed % 4 {
        0 => CovarianceFlags::default(),
        1 => CovarianceFlags {
            structure: Structure::Independence,
            ..CovarianceFlags::default()
        },
        2 => CovarianceFlags {
            variance_mode: VarianceMode::Homogeneous,
            icc_mode: IccMode::Shared,
            ..CovarianceFlags::default()
        },
        _ => CovarianceFlags {
            icc_mode: IccMode::Shared,
            ..CovarianceFlags::default()
        },
    }
}

/// Engine sandwich against the dense oracle for one fit. Both failing on
/// the same instance counts as agreement.
pub fn dense_check(label: &str, ds: &TrialDataset, f: &FitResult, fsa: FsaConfig) -> OracleReport {
    match (sandwich(f, fsa), dense_sandwich(ds, f, fsa)) {
        (Ok(e), Ok(o)) => OracleReport::matrices(label, &e.sigma_hat, &o, DENSE_TOL),
        (Err(a), Err(b)) => OracleReport::new(label, 0.0, 0.0, DENSE_TOL).with_detail(format!("both failed: {a} / {b}")),
        (Ok(_), Err(b)) => OracleReport::new(label, 0.0, f64::NAN, DENSE_TOL).with_detail(format!("oracle failed: {b}")),
        (Err(a), Ok(_)) => OracleReport::new(label, f64::NAN, 0.0, DENSE_TOL).with_detail(format!("engine failed: {a}")),
    }
}

/// Dense-oracle agreement over instances with `n ≤ 8`, `m ≤ 4`, one report
/// per variance composition.
pub fn dense_reports(instances: u64) -> Vec<OracleReport> {
    let mut out = Vec::new();
    for (label, weights, fsa) in dense_variants() {
        let reports = (0..instances).filter_map(|seed| {
            let n = 6 + (seed % 3) as usize;
            let ds = random_instance(seed, n, (1, 4), (seed % 2) as usize);
            let cfg = FitConfig {
                covariance: covariance_for(seed),
                weights,
                tolerance: 1e-12,
                ..FitConfig::default()
            };
            let f = fit(&ds, &cfg).ok()?;
            Some(dense_check(label, &ds, &f, fsa))
        });
        if let Some(r) = OracleReport::worst(format!("dense sandwich: {label}"), reports) {
            out.push(r);
        }
    }
    out
}

fn equal_m_instance(seed: u64) -> TrialDataset {
    let n = 6 + (seed % 7) as usize;
    let m = 2 + (seed % 5) as usize;
    random_instance(1000 + seed, n, (m, m), 0)
}

fn exchangeable_and_independent(ds: &TrialDataset, design: CausalDesign) -> Result<(FitResult, FitResult)> {
    let exch = FitConfig {
        design,
        tolerance: 1e-12,
        ..FitConfig::default()
    };
    let ind = FitConfig {
        covariance: CovarianceFlags {
            structure: Structure::Independence,
            ..CovarianceFlags::default()
        },
        ..exch.clone()
    };
    Ok((fit(ds, &exch)?, fit(ds, &ind)?))
}

/// No-covariate identities on randomized equal-size instances.
pub fn identity_reports(instances: u64) -> Vec<OracleReport> {
    let mut beta = Vec::new();
    let mut plain = Vec::new();
    let mut fsa4 = Vec::new();
    let mut closed = Vec::new();
    let bias = FsaConfig {
        bias_correct: true,
        ..FsaConfig::minimal()
    };
    for seed in 0..instances {
        let ds = equal_m_instance(seed);
        if let Ok((e, i)) = exchangeable_and_independent(&ds, CausalDesign::Factorial) {
            let diff = e.model.beta.iter().zip(&i.model.beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            beta.push(OracleReport::new("", diff, 0.0, IDENTITY_TOL));
            if let (Ok(a), Ok(b)) = (sandwich_plain(&e), sandwich_plain(&i)) {
                plain.push(OracleReport::matrices("", &a.sigma_hat, &b.sigma_hat, IDENTITY_TOL));
            }
            if let (Ok(a), Ok(b)) = (sandwich(&e, bias), sandwich(&i, bias)) {
                fsa4.push(OracleReport::matrices("", &a.sigma_hat, &b.sigma_hat, IDENTITY_TOL));
            }
        }
        if let Ok((e, _)) = exchangeable_and_independent(&ds, CausalDesign::CellMeans) {
            if let (Ok(a), Ok(b)) = (sandwich(&e, bias), cell_mean_fsa4(&ds, &e)) {
                closed.push(OracleReport::matrices("", &a.sigma_hat, &b, IDENTITY_TOL));
            }
        }
    }
    [
        ("beta identical under independence and exchangeable working covariance", beta),
        ("plain sandwich invariant to rho", plain),
        ("FSA4 sandwich invariant to rho", fsa4),
        ("FSA4 cell means: per-cluster factor omega/(omega - W_i)", closed),
    ]
    .into_iter()
    .filter_map(|(label, r)| OracleReport::worst(label, r))
    .collect()
}

/// Single-regimen fits against the numerical pseudo-likelihood maximizer.
/// Odd seeds have anticorrelated members so `ρ̂` sits on its boundary.
pub fn pml_reports(instances: u64) -> Vec<OracleReport> {
    let mut coords = Vec::new();
    let mut boundary = Vec::new();
    let mut profile = Vec::new();
    let ai = EmbeddedAI::new(Sign::Plus, Sign::Plus);
    for seed in 0..instances {
        let rho = if seed % 2 == 0 { 0.3 } else { -0.3 };
        let p = (seed / 2 % 2) as usize;
        let ds = single_regimen_instance(seed, 6 + seed as usize % 10, 4, p, rho);
        let cfg = FitConfig {
            design: CausalDesign::intercept_only(),
            tolerance: 1e-13,
            ..FitConfig::default()
        };
        let Ok(f) = fit(&ds, &cfg) else {
            coords.push(OracleReport::new("", f64::NAN, 0.0, PML_TOL).with_detail(format!("seed {seed}: fit failed")));
            continue;
        };
        let weights: Vec<f64> = ds.clusters.iter().map(|c| f.weight_engine.weight(c, ai)).collect();
        let o = match constrained_pml(&ds, &weights) {
            Ok(o) => o,
            Err(e) => {
                coords.push(OracleReport::new("", f64::NAN, 0.0, PML_TOL).with_detail(format!("seed {seed}: oracle inconclusive: {e}")));
                continue;
            }
        };
        let engine = [f.model.beta[0], f.covariance.sigma2(ai), f.covariance.rho(ai)];
        let oracle = [o.mu, o.sigma2, o.rho];
        for (j, name) in ["mu", "sigma2", "rho"].iter().enumerate() {
            coords.push(OracleReport::new("", engine[j], oracle[j], PML_TOL).with_detail(format!("seed {seed} {name}")));
        }
        for (j, (a, b)) in f.model.eta.iter().zip(&o.eta).enumerate() {
            coords.push(OracleReport::new("", *a, *b, PML_TOL).with_detail(format!("seed {seed} eta{j}")));
        }
        if rho < 0.0 {
            boundary.push(OracleReport::new("", f.covariance.rho(ai), o.rho, PML_TOL).with_detail(format!("seed {seed}")));
        }
        // σ² profile at the engine's (μ, η, ρ).
        let (mu, rho_hat) = (f.model.beta[0], f.covariance.rho(ai));
        let mut num = 0.0;
        let mut den = 0.0;
        for (c, w) in ds.clusters.iter().zip(&weights) {
            let shift: f64 = c.x.iter().zip(&f.model.centering).zip(&f.model.eta).map(|((x, b), e)| (x - b) * e).sum();
            let r: Vec<f64> = c.y.iter().map(|y| y - mu - shift).collect();
            let Ok(rr) = cs_inverse_apply(r.len(), 1.0, rho_hat, &r) else { continue };
            num += w * r.iter().zip(&rr).map(|(a, b)| a * b).sum::<f64>();
            den += w * r.len() as f64;
        }
        if let Ok(s) = profile_sigma2(&ds, &weights, mu, &f.model.eta, rho_hat) {
            profile.push(OracleReport::new("", num / den, s, 1e-6 * s.max(1.0)).with_detail(format!("seed {seed}")));
        }
    }
    [
        ("pseudo-MLE equivalence (mu, eta, sigma2, rho)", coords),
        ("pseudo-MLE at the rho = 0 boundary", boundary),
        ("sigma2 closed form vs 1-D likelihood argmax", profile),
    ]
    .into_iter()
    .filter_map(|(label, r)| OracleReport::worst(label, r))
    .collect()
}

/// Pathway mixture identities against simulation, within four standard
/// errors.
pub fn mixture_reports(draws: usize) -> Result<Vec<OracleReport>> {
    let cases = [
        ("symmetric split", 0.5, (2.0, 1.0, 0.2), (0.0, 1.0, 0.2)),
        ("no split", 0.3, (4.0, 2.0, 0.1), (4.0, 5.0, 0.2)),
        ("unequal", 0.7, (1.0, 3.0, 0.05), (-2.0, 1.5, 0.4)),
    ];
    let mut out = Vec::new();
    for (k, (name, p, a, b)) in cases.into_iter().enumerate() {
        let (mu, s2, rho) = regimen_moments_from_pathways(p, a.0, b.0, a.1, b.1, a.2, b.2);
        let pm = |t: (f64, f64, f64)| PathwayMoments {
            mean: t.0,
            variance: t.1,
            icc: t.2,
        };
        let mc = mixture_moment_mc(p, pm(a), pm(b), 4, draws, 77 + k as u64)?;
        for (j, (what, value)) in [("mean", mu), ("variance", s2), ("icc", rho)].into_iter().enumerate() {
            out.push(OracleReport::new(
                format!("pathway mixture {what} ({name}, MC)"),
                value,
                mc.estimate[j],
                4.0 * mc.se[j],
            ));
        }
    }
    let (mu, s2, rho) = regimen_moments_from_pathways(1.0, 2.0, 9.0, 3.0, 1.0, 0.4, 0.2);
    let exact = OracleReport::matrices(
        "pathway mixture at p = 1 equals pathway 1",
        &DMatrix::from_row_slice(1, 3, &[mu, s2, rho]),
        &DMatrix::from_row_slice(1, 3, &[2.0, 3.0, 0.4]),
        1e-15,
    );
    out.push(exact);
    Ok(out)
}

/// FSA3 scaling is exactly `n / (n − p − q)`.
pub fn fsa3_reports() -> Vec<OracleReport> {
    let reports = (0..6u64).filter_map(|seed| {
        let ds = random_instance(500 + seed, 8, (1, 4), (seed % 2) as usize);
        let f = fit(&ds, &FitConfig::default()).ok()?;
        let plain = sandwich_plain(&f).ok()?;
        let k = f.dim();
        let scaled = fsa3_scale(plain.clone(), f.n(), f.model.p, f.model.q).ok()?;
        let want = plain.sigma_hat * (f.n() as f64 / (f.n() - k) as f64);
        Some(OracleReport::matrices("", &scaled.sigma_hat, &want, 1e-15))
    });
    OracleReport::worst("FSA3 factor n/(n - p - q)", reports).into_iter().collect()
}

/// Every oracle at test scale.
pub fn run_suite() -> Result<Vec<OracleReport>> {
    let mut out = dense_reports(24);
    out.extend(identity_reports(50));
    out.extend(pml_reports(20));
    out.extend(mixture_reports(20_000)?);
    out.extend(fsa3_reports());
    if out.is_empty() {
        return Err(Error::InvalidParameter("oracle suite produced no reports".into()));
    }
    Ok(out)
}
