//! Weighted-and-replicated GEE for the marginal mean of each embedded
//! regimen, alternating a weighted least-squares solve for `(β, η)` with
//! moment updates of the compound-symmetry working covariance.
//!
//! Every cluster contributes one copy of its data per consistent regimen,
//! weighted by its inverse-probability weight. Design rows are constant
//! within a cluster, so each copy's contribution to the normal equations is a
//! rank-one update.

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{cs_row_weight, IccMode, Structure, VarianceMode, WorkingCovariance, RHO_MAX};
use crate::error::{Error, Result};
use crate::linalg::spd_solve;
use crate::trial_data::{validate_design, EmbeddedAI, TrialDataset};
use crate::weights::{fit_weights, WeightEngine, WeightMode};

/// Coding of the causal part of the mean model: regimen `ai` has mean
/// `row(ai)ᵀ β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CausalDesign {
    /// `(1, a1, a2, a1·a2)`.
    Factorial,
    /// One mean per regimen, unit rows in [`EmbeddedAI::ALL`] order.
    CellMeans,
    /// Arbitrary rows, one per regimen in [`EmbeddedAI::ALL`] order.
    Custom { rows: [Vec<f64>; 4], names: Vec<String> },
}

impl CausalDesign {
    /// A single shared mean; identifiable when only one regimen has data.
    pub fn intercept_only() -> Self {
        CausalDesign::Custom {
            rows: [vec![1.0], vec![1.0], vec![1.0], vec![1.0]],
            names: vec!["mu".into()],
        }
    }

    /// Rows for the parameterization `β' = A β`; fitted means are unchanged.
    pub fn reparameterized(&self, a: &DMatrix<f64>) -> Result<Self> {
        let q = self.q();
        let inv_t = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("singular reparameterization".into()))?
            .transpose();
        let rows = EmbeddedAI::ALL.map(|ai| {
            let d = DVector::from_vec(self.row(ai));
            (&inv_t * d).iter().copied().collect::<Vec<_>>()
        });
        Ok(CausalDesign::Custom {
            rows,
            names: (0..q).map(|k| format!("b{k}'")).collect(),
        })
    }

    pub fn q(&self) -> usize {
        match self {
            CausalDesign::Factorial | CausalDesign::CellMeans => 4,
            CausalDesign::Custom { names, .. } => names.len(),
        }
    }

    pub fn row(&self, ai: EmbeddedAI) -> Vec<f64> {
        match self {
            CausalDesign::Factorial => {
                let (a1, a2) = (ai.a1.value(), ai.a2.value());
                vec![1.0, a1, a2, a1 * a2]
            }
            CausalDesign::CellMeans => {
                let mut r = vec![0.0; 4];
                r[ai.index()] = 1.0;
                r
            }
            CausalDesign::Custom { rows, .. } => rows[ai.index()].clone(),
        }
    }

    pub fn names(&self) -> Vec<String> {
        match self {
            CausalDesign::Factorial => ["intercept", "a1", "a2", "a1:a2"].map(String::from).to_vec(),
            CausalDesign::CellMeans => EmbeddedAI::ALL.iter().map(|ai| format!("mu{ai}")).collect(),
            CausalDesign::Custom { names, .. } => names.clone(),
        }
    }

    fn check(&self) -> Result<()> {
        if let CausalDesign::Custom { rows, names } = self {
            if names.is_empty() || rows.iter().any(|r| r.len() != names.len()) {
                return Err(Error::InvalidParameter(
                    "custom design rows must all have one entry per name".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Design row `(row(ai), x_centered)`.
pub fn build_design_row(design: &CausalDesign, ai: EmbeddedAI, x_centered: &[f64]) -> Vec<f64> {
    let mut r = design.row(ai);
    r.extend_from_slice(x_centered);
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanModel {
    pub design: CausalDesign,
    pub q: usize,
    pub p: usize,
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    /// Covariate means subtracted before fitting.
    pub centering: Vec<f64>,
    pub covariate_names: Vec<String>,
}

impl MeanModel {
    /// `(β, η)` stacked.
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_iterator(self.q + self.p, self.beta.iter().chain(&self.eta).copied())
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = self.design.names();
        names.extend(self.covariate_names.iter().cloned());
        names
    }

    /// Marginal mean of regimen `ai` (covariates at their mean).
    pub fn regimen_mean(&self, ai: EmbeddedAI) -> f64 {
        self.design.row(ai).iter().zip(&self.beta).map(|(d, b)| d * b).sum()
    }

    /// `μ(ai, x)` for raw (uncentered) covariates.
    pub fn mean(&self, ai: EmbeddedAI, x: &[f64]) -> f64 {
        self.regimen_mean(ai)
            + x.iter()
                .zip(&self.centering)
                .zip(&self.eta)
                .map(|((x, c), e)| (x - c) * e)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CovarianceFlags {
    pub structure: Structure,
    pub variance_mode: VarianceMode,
    pub icc_mode: IccMode,
}

impl Default for CovarianceFlags {
    fn default() -> Self {
        CovarianceFlags {
            structure: Structure::Exchangeable,
            variance_mode: VarianceMode::PerRegimen,
            icc_mode: IccMode::PerRegimen,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub covariance: CovarianceFlags,
    pub weights: WeightMode,
    pub design: CausalDesign,
    /// Stop when the ∞-norm change in `(β, η)` is at most this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            covariance: CovarianceFlags::default(),
            weights: WeightMode::Known,
            design: CausalDesign::Factorial,
            tolerance: 1e-8,
            max_iterations: 500,
        }
    }
}

/// One replicated copy of a cluster under a consistent regimen.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimenTerm {
    pub ai: EmbeddedAI,
    pub weight: f64,
    /// Design row shared by every member.
    pub row: DVector<f64>,
    pub sigma2: f64,
    pub rho: f64,
    pub residual: Vec<f64>,
    /// `∂W/∂γ` under estimated weights.
    pub weight_derivative: Option<[f64; 2]>,
}

impl RegimenTerm {
    /// `W DᵀV⁻¹r` for this copy.
    pub fn score(&self) -> DVector<f64> {
        let m = self.residual.len();
        let s = cs_row_weight(m, self.sigma2, self.rho);
        &self.row * (self.weight * s * self.residual.iter().sum::<f64>())
    }

    /// `W DᵀV⁻¹D` for this copy.
    pub fn information(&self) -> DMatrix<f64> {
        let m = self.residual.len();
        let s = cs_row_weight(m, self.sigma2, self.rho);
        &self.row * self.row.transpose() * (self.weight * m as f64 * s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFit {
    pub cluster_id: String,
    pub terms: Vec<RegimenTerm>,
    /// Logistic score `S_γ` under estimated weights.
    pub gamma_score: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: MeanModel,
    /// Covariance used in the final solve.
    pub covariance: WorkingCovariance,
    pub weight_engine: WeightEngine,
    /// Number of covariance updates performed.
    pub iterations: usize,
    pub converged: bool,
    /// Last ∞-norm change in `(β, η)`.
    pub final_change: f64,
    /// `B̂ = P_n Σ I W DᵀV⁻¹D`.
    pub bread: DMatrix<f64>,
    pub clusters: Vec<ClusterFit>,
    pub config: FitConfig,
    pub notes: Vec<String>,
}

impl FitResult {
    pub fn n(&self) -> usize {
        self.clusters.len()
    }

    pub fn dim(&self) -> usize {
        self.model.q + self.model.p
    }

    /// `n B̂`, the full normal matrix.
    pub fn normal_matrix(&self) -> DMatrix<f64> {
        &self.bread * self.n() as f64
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.model.parameter_names()
    }
}

/// Regimen, weight, design row and `∂W/∂γ` for one consistent regimen.
type PreparedTerm = (EmbeddedAI, f64, DVector<f64>, Option<[f64; 2]>);

struct Prepared {
    id: String,
    y: Vec<f64>,
    terms: Vec<PreparedTerm>,
    gamma_score: Option<[f64; 2]>,
}

fn covariate_means(ds: &TrialDataset) -> Vec<f64> {
    let n = ds.n().max(1) as f64;
    (0..ds.p)
        .map(|j| ds.clusters.iter().map(|c| c.x[j]).sum::<f64>() / n)
        .collect()
}

fn prepare(
    ds: &TrialDataset,
    engine: &WeightEngine,
    design: &CausalDesign,
    centering: &[f64],
) -> Result<Vec<Prepared>> {
    let estimated = engine.mode == WeightMode::Estimated;
    ds.clusters
        .iter()
        .map(|c| {
            let xc: Vec<f64> = c.x.iter().zip(centering).map(|(x, m)| x - m).collect();
            let terms = c
                .consistent_regimens()
                .map(|ai| {
                    let row = DVector::from_vec(build_design_row(design, ai, &xc));
                    let dw = if estimated {
                        Some(engine.weight_gamma_derivative(c, ai)?)
                    } else {
                        None
                    };
                    Ok((ai, engine.weight(c, ai), row, dw))
                })
                .collect::<Result<Vec<_>>>()?;
            let gamma_score = if estimated { Some(engine.score_vector(c)?) } else { None };
            Ok(Prepared {
                id: c.cluster_id.clone(),
                y: c.y.clone(),
                terms,
                gamma_score,
            })
        })
        .collect()
}

fn normal_equations(
    prepared: &[Prepared],
    cov: &WorkingCovariance,
    dim: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    for c in prepared {
        let m = c.y.len();
        let ysum: f64 = c.y.iter().sum();
        for (ai, w, row, _) in &c.terms {
            let s = cs_row_weight(m, cov.sigma2(*ai), cov.rho(*ai));
            a.ger(w * m as f64 * s, row, row, 1.0);
            b.axpy(w * s * ysum, row, 1.0);
        }
    }
    (a, b)
}

fn residuals(y: &[f64], row: &DVector<f64>, theta: &DVector<f64>) -> Vec<f64> {
    let mu = row.dot(theta);
    y.iter().map(|v| v - mu).collect()
}

/// Weighted least-squares solution of the estimating equation at fixed
/// working covariance.
pub fn solve_wls(
    ds: &TrialDataset,
    engine: &WeightEngine,
    covariance: &WorkingCovariance,
    design: &CausalDesign,
) -> Result<(Vec<f64>, Vec<f64>)> {
    design.check()?;
    let centering = covariate_means(ds);
    let prepared = prepare(ds, engine, design, &centering)?;
    let q = design.q();
    let dim = q + ds.p;
    let (a, b) = normal_equations(&prepared, covariance, dim);
    let mut names = design.names();
    names.extend(ds.covariate_names.iter().cloned());
    let theta = spd_solve(&a, &b, &names)?;
    Ok((theta.rows(0, q).iter().copied().collect(), theta.rows(q, ds.p).iter().copied().collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceUpdate {
    pub covariance: WorkingCovariance,
    pub notes: Vec<String>,
}

/// Moment estimates of `(σ², ρ)` from weighted residuals.
///
/// `pieces` yields `(regimen, weight, residual vector)` for every consistent
/// cluster copy. Regimens with no data keep their value from `template`.
pub fn update_covariance<'a>(
    pieces: impl IntoIterator<Item = (EmbeddedAI, f64, &'a [f64])>,
    template: &WorkingCovariance,
) -> CovarianceUpdate {
    let mut sum_r2 = [0.0f64; 4];
    let mut sum_m = [0.0f64; 4];
    let mut sum_cross = [0.0f64; 4];
    let mut sum_pairs = [0.0f64; 4];
    for (ai, w, r) in pieces {
        let k = ai.index();
        let m = r.len() as f64;
        let ss: f64 = r.iter().map(|v| v * v).sum();
        let s: f64 = r.iter().sum();
        sum_r2[k] += w * ss;
        sum_m[k] += w * m;
        sum_cross[k] += w * (s * s - ss);
        sum_pairs[k] += w * m * (m - 1.0);
    }

    let mut out = template.clone();
    let mut notes = Vec::new();
    let present: Vec<usize> = (0..4).filter(|&k| sum_m[k] > 0.0).collect();
    for k in 0..4 {
        if sum_m[k] == 0.0 {
            notes.push(format!("regimen {} has no data; covariance held fixed", EmbeddedAI::ALL[k]));
        }
    }

    match template.variance_mode {
        VarianceMode::PerRegimen => {
            for &k in &present {
                out.sigma2[k] = sum_r2[k] / sum_m[k];
            }
        }
        VarianceMode::Homogeneous => {
            let tot_m: f64 = present.iter().map(|&k| sum_m[k]).sum();
            if tot_m > 0.0 {
                let pooled = present.iter().map(|&k| sum_r2[k]).sum::<f64>() / tot_m;
                out.sigma2 = [pooled; 4];
            }
        }
    }
    let largest = out.sigma2.iter().copied().fold(0.0, f64::max);
    let floor = (1e-12 * largest).max(1e-150);
    for v in &mut out.sigma2 {
        if !(*v >= floor) {
            *v = floor;
        }
    }

    let clamp = |v: f64| v.clamp(0.0, RHO_MAX);
    match template.structure {
        Structure::Independence => out.rho = [0.0; 4],
        Structure::Exchangeable => match template.icc_mode {
            IccMode::PerRegimen => {
                for &k in &present {
                    if sum_pairs[k] > 0.0 {
                        out.rho[k] = clamp(sum_cross[k] / (out.sigma2[k] * sum_pairs[k]));
                    } else {
                        out.rho[k] = 0.0;
                        notes.push(format!(
                            "regimen {} has only single-member clusters; rho set to 0",
                            EmbeddedAI::ALL[k]
                        ));
                    }
                }
            }
            IccMode::Shared => {
                let pairs: f64 = present.iter().map(|&k| sum_pairs[k]).sum();
                if pairs > 0.0 {
                    let cross: f64 = present.iter().map(|&k| sum_cross[k] / out.sigma2[k]).sum();
                    out.rho = [clamp(cross / pairs); 4];
                } else {
                    out.rho = [0.0; 4];
                    notes.push("only single-member clusters; rho set to 0".into());
                }
            }
        },
    }
    CovarianceUpdate { covariance: out, notes }
}

/// Alternates [`solve_wls`] and [`update_covariance`] from `σ² = 1, ρ = 0`
/// until `(β, η)` stops moving.
pub fn fit(ds: &TrialDataset, config: &FitConfig) -> Result<FitResult> {
    config.design.check()?;
    let report = validate_design(ds);
    if ds.n() == 0 || !report.records_valid() {
        let msgs: Vec<String> = report.errors().map(|e| e.message.clone()).collect();
        return Err(Error::InvalidData(msgs.join("; ")));
    }
    let engine = match config.weights {
        WeightMode::Known => WeightEngine::known(),
        WeightMode::Estimated => fit_weights(ds)?,
    };
    let centering = covariate_means(ds);
    let prepared = prepare(ds, &engine, &config.design, &centering)?;
    let q = config.design.q();
    let dim = q + ds.p;
    let mut names = config.design.names();
    names.extend(ds.covariate_names.iter().cloned());

    let flags = config.covariance;
    let mut cov = WorkingCovariance::initial(flags.structure, flags.variance_mode, flags.icc_mode);
    let (a, b) = normal_equations(&prepared, &cov, dim);
    let mut theta = spd_solve(&a, &b, &names)?;
    let mut notes = Vec::new();
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    let mut normal = a;

    while iterations < config.max_iterations {
        iterations += 1;
        let res: Vec<Vec<Vec<f64>>> = prepared
            .iter()
            .map(|c| c.terms.iter().map(|(_, _, row, _)| residuals(&c.y, row, &theta)).collect())
            .collect();
        let pieces = prepared.iter().zip(&res).flat_map(|(c, rs)| {
            c.terms.iter().zip(rs).map(|((ai, w, _, _), r)| (*ai, *w, r.as_slice()))
        });
        let update = update_covariance(pieces, &cov);
        cov = update.covariance;
        notes = update.notes;

        let (a, b) = normal_equations(&prepared, &cov, dim);
        let next = spd_solve(&a, &b, &names)?;
        change = (&next - &theta).amax();
        theta = next;
        normal = a;
        let scale = theta.amax();
        debug!("iteration {iterations}: change {change:.3e}");
        if change <= config.tolerance.max(1e-13 * scale) {
            break;
        }
    }
    if !(change <= config.tolerance.max(1e-13 * theta.amax())) {
        return Err(Error::Convergence {
            iterations,
            change,
            last_estimate: theta.iter().copied().collect(),
        });
    }

    let clusters = prepared
        .into_iter()
        .map(|c| {
            let terms = c
                .terms
                .into_iter()
                .map(|(ai, w, row, dw)| RegimenTerm {
                    ai,
                    weight: w,
                    residual: residuals(&c.y, &row, &theta),
                    row,
                    sigma2: cov.sigma2(ai),
                    rho: cov.rho(ai),
                    weight_derivative: dw,
                })
                .collect();
            ClusterFit {
                cluster_id: c.id,
                terms,
                gamma_score: c.gamma_score,
            }
        })
        .collect();

    let n = ds.n() as f64;
    Ok(FitResult {
        model: MeanModel {
            design: config.design.clone(),
            q,
            p: ds.p,
            beta: theta.rows(0, q).iter().copied().collect(),
            eta: theta.rows(q, ds.p).iter().copied().collect(),
            centering,
            covariate_names: ds.covariate_names.clone(),
        },
        covariance: cov,
        weight_engine: engine,
        iterations,
        converged: true,
        final_change: change,
        bread: normal / n,
        clusters,
        config: config.clone(),
        notes,
    })
}
