//! Sandwich variance from explicit dense matrices.
//!
//! Every cluster copy gets its full `m × m` working covariance, inverted by
//! LU. The leverage correction is applied in stacked residual space,
//! `Ũ = D̃ᵀG(I − H)⁻¹r̃` with `H = D̃(nB̂)⁻¹D̃ᵀG`, rather than in parameter
//! space as the engine does. Weights and their derivatives are recomputed
//! from the raw assignments.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gee::FitResult;
use crate::sandwich::FsaConfig;
use crate::trial_data::{ClusterRecord, EmbeddedAI, Sign, TrialDataset};
use crate::weights::WeightMode;

fn dense_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    a.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("dense oracle: {what} is singular")))
}

fn cs_matrix(m: usize, sigma2: f64, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| if i == j { sigma2 } else { sigma2 * rho })
}

fn indicator(s: Sign) -> f64 {
    if s == Sign::Plus {
        1.0
    } else {
        0.0
    }
}

/// Weight model rebuilt from treatment proportions.
struct Weights {
    estimated: bool,
    gamma: [f64; 2],
    p: [f64; 2],
}

impl Weights {
    fn new(ds: &TrialDataset, mode: WeightMode) -> Self {
        let n = ds.n() as f64;
        let p1 = ds.clusters.iter().map(|c| indicator(c.a1)).sum::<f64>() / n;
        let nr: Vec<&ClusterRecord> = ds.clusters.iter().filter(|c| !c.r).collect();
        let p2 = nr.iter().filter_map(|c| c.a2).map(indicator).sum::<f64>() / nr.len().max(1) as f64;
        let logit = |p: f64| (p / (1.0 - p)).ln();
        Weights {
            estimated: mode == WeightMode::Estimated,
            gamma: [logit(p1), logit(p2)],
            p: [p1, p2],
        }
    }

    fn weight(&self, c: &ClusterRecord) -> f64 {
        if !self.estimated {
            return if c.r { 2.0 } else { 4.0 };
        }
        let inv1 = 1.0 + (-c.a1.value() * self.gamma[0]).exp();
        match c.a2 {
            Some(a2) if !c.r => inv1 * (1.0 + (-a2.value() * self.gamma[1]).exp()),
            _ => inv1,
        }
    }

    /// `∂W/∂γ` by differentiating `(1 + e^{−a1γ1})(1 + e^{−a2γ2})` directly.
    fn derivative(&self, c: &ClusterRecord) -> [f64; 2] {
        let a1 = c.a1.value();
        let e1 = (-a1 * self.gamma[0]).exp();
        match c.a2 {
            Some(a2) if !c.r => {
                let a2 = a2.value();
                let e2 = (-a2 * self.gamma[1]).exp();
                [-a1 * e1 * (1.0 + e2), -(1.0 + e1) * a2 * e2]
            }
            _ => [-a1 * e1, 0.0],
        }
    }

    fn score(&self, c: &ClusterRecord) -> [f64; 2] {
        let s1 = indicator(c.a1) - self.p[0];
        let s2 = match c.a2 {
            Some(a2) if !c.r => indicator(a2) - self.p[1],
            _ => 0.0,
        };
        [s1, s2]
    }
}

struct Copy {
    w: f64,
    dw: [f64; 2],
    d: DMatrix<f64>,
    v_inv: DMatrix<f64>,
    r: DVector<f64>,
}

/// `Σ̂` for `fit` under `fsa`, rebuilt from `ds` and the fitted parameters.
pub fn dense_sandwich(ds: &TrialDataset, fit: &FitResult, fsa: FsaConfig) -> Result<DMatrix<f64>> {
    let n = ds.n();
    let p = ds.p;
    let design = &fit.config.design;
    let q = design.q();
    let k = p + q;
    let nf = n as f64;
    let theta = fit.model.theta();
    let xbar: Vec<f64> = (0..p).map(|j| ds.clusters.iter().map(|c| c.x[j]).sum::<f64>() / nf).collect();
    let weights = Weights::new(ds, fit.weight_engine.mode);

    let mut per_cluster: Vec<Vec<Copy>> = Vec::with_capacity(n);
    for c in &ds.clusters {
        let m = c.y.len();
        let mut copies = Vec::new();
        for ai in EmbeddedAI::ALL {
            let consistent = c.a1 == ai.a1 && (c.r || c.a2 == Some(ai.a2));
            if !consistent {
                continue;
            }
            let mut row = design.row(ai);
            row.extend(c.x.iter().zip(&xbar).map(|(x, b)| x - b));
            let d = DMatrix::from_fn(m, k, |_, j| row[j]);
            let v = cs_matrix(m, fit.covariance.sigma2(ai), fit.covariance.rho(ai));
            let v_inv = dense_inverse(&v, "working covariance")?;
            let r = DVector::from_column_slice(&c.y) - &d * &theta;
            copies.push(Copy {
                w: weights.weight(c),
                dw: weights.derivative(c),
                d,
                v_inv,
                r,
            });
        }
        per_cluster.push(copies);
    }

    let mut normal = DMatrix::zeros(k, k);
    for cp in per_cluster.iter().flatten() {
        normal += cp.d.transpose() * &cp.v_inv * &cp.d * cp.w;
    }
    let normal_inv = dense_inverse(&normal, "normal matrix")?;
    let bread_inv = &normal_inv * nf;

    let mut meat = DMatrix::zeros(k, k);
    for (copies, c) in per_cluster.iter().zip(&ds.clusters) {
        let u = if fsa.bias_correct {
            let rows: usize = copies.iter().map(|cp| cp.r.len()).sum();
            let mut d_s = DMatrix::zeros(rows, k);
            let mut g = DMatrix::zeros(rows, rows);
            let mut r_s = DVector::zeros(rows);
            let mut at = 0;
            for cp in copies {
                let m = cp.r.len();
                d_s.view_mut((at, 0), (m, k)).copy_from(&cp.d);
                g.view_mut((at, at), (m, m)).copy_from(&(&cp.v_inv * cp.w));
                r_s.rows_mut(at, m).copy_from(&cp.r);
                at += m;
            }
            let h = &d_s * &normal_inv * d_s.transpose() * &g;
            let lev = dense_inverse(&(DMatrix::identity(rows, rows) - h), &format!("leverage of {}", c.cluster_id))?;
            d_s.transpose() * &g * lev * r_s
        } else {
            let mut u = DVector::zeros(k);
            for cp in copies {
                u += cp.d.transpose() * &cp.v_inv * &cp.r * cp.w;
            }
            u
        };
        meat += &u * u.transpose();
    }
    meat /= nf;

    if weights.estimated {
        let mut cmat = DMatrix::zeros(k, 2);
        let mut fmat = DMatrix::zeros(2, 2);
        for (copies, c) in per_cluster.iter().zip(&ds.clusters) {
            for cp in copies {
                let du = cp.d.transpose() * &cp.v_inv * &cp.r;
                for j in 0..2 {
                    for a in 0..k {
                        cmat[(a, j)] += du[a] * cp.dw[j];
                    }
                }
            }
            let s = weights.score(c);
            for a in 0..2 {
                for b in 0..2 {
                    fmat[(a, b)] += s[a] * s[b];
                }
            }
        }
        cmat /= nf;
        fmat /= nf;
        meat -= &cmat * dense_inverse(&fmat, "weight-score information")? * cmat.transpose();
    }

    let mut sigma = &bread_inv * meat * &bread_inv / nf;
    if weights.estimated {
        for j in 0..k {
            sigma[(j, j)] = sigma[(j, j)].max(0.0);
        }
    }
    if fsa.dof_scale {
        if n <= k {
            return Err(Error::NonPositiveDf { n, params: k });
        }
        sigma *= nf / (n - k) as f64;
    }
    Ok(sigma)
}

/// Bias-corrected sandwich for a no-covariate cell-means fit with equal
/// cluster sizes, from the per-cluster factor `ω_a / (ω_a − W_i)` with
/// `ω_a = Σ_j I_ja W_j`. Known weights only.
pub fn cell_mean_fsa4(ds: &TrialDataset, fit: &FitResult) -> Result<DMatrix<f64>> {
    if fit.weight_engine.mode != WeightMode::Known {
        return Err(Error::InvalidParameter("closed form ignores weight estimation".into()));
    }
    if ds.p != 0 {
        return Err(Error::InvalidParameter("closed form needs a fit without covariates".into()));
    }
    let m = ds.clusters.first().map_or(0, |c| c.y.len());
    if ds.clusters.iter().any(|c| c.y.len() != m) {
        return Err(Error::InvalidParameter("closed form needs equal cluster sizes".into()));
    }
    let n = ds.n() as f64;
    let weights = Weights::new(ds, fit.weight_engine.mode);
    let consistent = |c: &ClusterRecord, ai: EmbeddedAI| c.a1 == ai.a1 && (c.r || c.a2 == Some(ai.a2));
    let mut omega = [0.0; 4];
    for (a, ai) in EmbeddedAI::ALL.into_iter().enumerate() {
        omega[a] = ds.clusters.iter().filter(|c| consistent(c, ai)).map(|c| weights.weight(c)).sum();
    }
    let mean: Vec<f64> = EmbeddedAI::ALL
        .into_iter()
        .enumerate()
        .map(|(a, ai)| {
            ds.clusters
                .iter()
                .filter(|c| consistent(c, ai))
                .map(|c| weights.weight(c) * c.y.iter().sum::<f64>())
                .sum::<f64>()
                / (omega[a] * m as f64)
        })
        .collect();
    // Working-covariance scalars cancel, so work with unit weights per member.
    let mut meat = DMatrix::zeros(4, 4);
    for c in &ds.clusters {
        let w = weights.weight(c);
        let u = DVector::from_fn(4, |a, _| {
            let ai = EmbeddedAI::ALL[a];
            if !consistent(c, ai) {
                return 0.0;
            }
            let resid: f64 = c.y.iter().map(|y| y - mean[a]).sum();
            omega[a] / (omega[a] - w) * w * resid
        });
        meat += &u * u.transpose();
    }
    let bread = DMatrix::from_fn(4, 4, |a, b| if a == b { omega[a] * m as f64 / n } else { 0.0 });
    let bi = dense_inverse(&bread, "cell-mean bread")?;
    Ok(&bi * (meat / n) * &bi / n)
}
