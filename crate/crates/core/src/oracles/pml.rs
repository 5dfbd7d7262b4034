//! Weighted Gaussian pseudo-likelihood maximized by a generic optimizer.
//!
//! For data consistent with a single regimen the estimating equations are
//! the score of
//!
//! `ℓ(μ, η, σ², ρ) = Σ_i W_i [−½ log|V_i| − ½ r_iᵀ V_i⁻¹ r_i]`,
//! `r_i = y_i − μ − ηᵀ(x_i − x̄)`, `V_i = σ² CS_m(ρ)`,
//!
//! constrained to `ρ ≥ 0`. The maximizer here knows nothing of those
//! equations: Nelder–Mead over `(μ, η, log σ², s)` with `ρ = s²/(1 + s²)`,
//! restarted until the objective stops improving.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::goldensectionsearch::GoldenSectionSearch;
use argmin::solver::neldermead::NelderMead;

use crate::covariance::{cs_inverse_apply, cs_log_det};
use crate::error::{Error, Result};
use crate::trial_data::TrialDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct PmlEstimate {
    pub mu: f64,
    pub eta: Vec<f64>,
    pub sigma2: f64,
    pub rho: f64,
    pub loglik: f64,
}

#[derive(Clone)]
struct Problem<'a> {
    ds: &'a TrialDataset,
    weights: &'a [f64],
    xbar: Vec<f64>,
}

impl Problem<'_> {
    fn residuals(&self, mu: f64, eta: &[f64], i: usize) -> Vec<f64> {
        let c = &self.ds.clusters[i];
        let shift: f64 = c.x.iter().zip(&self.xbar).zip(eta).map(|((x, b), e)| (x - b) * e).sum();
        c.y.iter().map(|y| y - mu - shift).collect()
    }

    fn loglik(&self, mu: f64, eta: &[f64], sigma2: f64, rho: f64) -> f64 {
        let mut total = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            let r = self.residuals(mu, eta, i);
            let m = r.len();
            let (Ok(logdet), Ok(vr)) = (cs_log_det(m, sigma2, rho), cs_inverse_apply(m, sigma2, rho, &r)) else {
                return f64::NEG_INFINITY;
            };
            let quad: f64 = r.iter().zip(&vr).map(|(a, b)| a * b).sum();
            total += w * (-0.5 * logdet - 0.5 * quad);
        }
        total
    }

    fn unpack(&self, v: &[f64]) -> (f64, Vec<f64>, f64, f64) {
        let p = self.ds.p;
        let s = v[p + 2];
        (v[0], v[1..=p].to_vec(), v[p + 1].exp(), s * s / (1.0 + s * s))
    }
}

impl CostFunction for Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, v: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let (mu, eta, sigma2, rho) = self.unpack(v);
        let ll = self.loglik(mu, &eta, sigma2, rho);
        Ok(if ll.is_finite() { -ll } else { f64::MAX })
    }
}

fn checked<'a>(ds: &'a TrialDataset, weights: &'a [f64]) -> Result<Problem<'a>> {
    if ds.n() == 0 || weights.len() != ds.n() {
        return Err(Error::InvalidParameter("need one weight per cluster".into()));
    }
    let n = ds.n() as f64;
    let xbar = (0..ds.p).map(|j| ds.clusters.iter().map(|c| c.x[j]).sum::<f64>() / n).collect();
    Ok(Problem { ds, weights, xbar })
}

fn nelder_mead(problem: &Problem, start: &[f64], steps: &[f64]) -> Result<(Vec<f64>, f64)> {
    let mut simplex = vec![start.to_vec()];
    for (j, h) in steps.iter().enumerate() {
        let mut v = start.to_vec();
        v[j] += h;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-16)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let res = Executor::new(problem.clone(), solver)
        .configure(|s| s.max_iters(20_000))
        .run()
        .map_err(|e| Error::InvalidParameter(format!("optimizer failed: {e}")))?;
    let state = res.state();
    let best = state
        .get_best_param()
        .cloned()
        .ok_or_else(|| Error::InvalidParameter("optimizer returned no point".into()))?;
    Ok((best, state.get_best_cost()))
}

/// Constrained maximizer of the weighted pseudo-likelihood. `weights` holds
/// one weight per cluster.
pub fn constrained_pml(ds: &TrialDataset, weights: &[f64]) -> Result<PmlEstimate> {
    let problem = checked(ds, weights)?;
    let p = ds.p;
    let ys: Vec<f64> = ds.clusters.iter().flat_map(|c| c.y.iter().copied()).collect();
    let ybar = ys.iter().sum::<f64>() / ys.len() as f64;
    let var = (ys.iter().map(|y| (y - ybar).powi(2)).sum::<f64>() / ys.len() as f64).max(1e-8);
    let scale = var.sqrt();
    let mut steps = vec![scale];
    steps.extend(std::iter::repeat_n(scale, p));
    steps.extend([0.5, 0.4]);

    let mut best: Option<(Vec<f64>, f64)> = None;
    for s0 in [0.05, 0.5, 1.5] {
        let mut start = vec![ybar];
        start.extend(std::iter::repeat_n(0.0, p));
        start.extend([var.ln(), s0]);
        let mut current = nelder_mead(&problem, &start, &steps)?;
        // Restart from the incumbent until a fresh simplex finds nothing better.
        for _ in 0..50 {
            let small: Vec<f64> = steps.iter().map(|h| h * 0.05).collect();
            let next = nelder_mead(&problem, &current.0, &small)?;
            let gain = current.1 - next.1;
            if next.1 < current.1 {
                current = next;
            }
            if !(gain > 1e-14 * current.1.abs().max(1.0)) {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| current.1 < b.1) {
            best = Some(current);
        }
    }
    let (v, cost) = best.ok_or_else(|| Error::InvalidParameter("no start converged".into()))?;
    let (mu, eta, sigma2, rho) = problem.unpack(&v);
    Ok(PmlEstimate {
        mu,
        eta,
        sigma2,
        rho,
        loglik: -cost,
    })
}

struct SigmaProfile<'a> {
    problem: Problem<'a>,
    mu: f64,
    eta: Vec<f64>,
    rho: f64,
}

impl CostFunction for SigmaProfile<'_> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, t: &f64) -> std::result::Result<f64, argmin::core::Error> {
        Ok(-self.problem.loglik(self.mu, &self.eta, t.exp(), self.rho))
    }
}

/// `argmax_σ² ℓ` at fixed `(μ, η, ρ)` by golden-section search on `log σ²`.
pub fn profile_sigma2(ds: &TrialDataset, weights: &[f64], mu: f64, eta: &[f64], rho: f64) -> Result<f64> {
    let problem = checked(ds, weights)?;
    let ss: f64 = (0..ds.n())
        .flat_map(|i| problem.residuals(mu, eta, i))
        .map(|r| r * r)
        .sum::<f64>()
        .max(1e-300);
    let centre = (ss / ds.total_members() as f64).ln();
    let solver = GoldenSectionSearch::new(centre - 20.0, centre + 20.0)
        .and_then(|s| s.with_tolerance(1e-13))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let profile = SigmaProfile {
        problem,
        mu,
        eta: eta.to_vec(),
        rho,
    };
    let res = Executor::new(profile, solver)
        .configure(|s| s.param(centre).max_iters(500))
        .run()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let t = *res
        .state()
        .get_best_param()
        .ok_or_else(|| Error::InvalidParameter("golden-section search returned no point".into()))?;
    Ok(t.exp())
}

/// Weighted pseudo-log-likelihood at a point.
pub fn weighted_loglik(
    ds: &TrialDataset,
    weights: &[f64],
    mu: f64,
    eta: &[f64],
    sigma2: f64,
    rho: f64,
) -> Result<f64> {
    Ok(checked(ds, weights)?.loglik(mu, eta, sigma2, rho))
}
