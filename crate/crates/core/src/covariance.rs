//! Compound-symmetry algebra in closed form.
//!
//! For `V = σ² CS_m(ρ)` the inverse, determinant and a sampling factor all
//! reduce to O(m) expressions in the eigenvalues `σ²(1 − ρ)` (multiplicity
//! m − 1) and `σ²(1 + (m − 1)ρ)` (eigenvector `1_m`).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial_data::EmbeddedAI;

/// Upper clamp applied to estimated correlations; `ρ = 1` is singular.
pub const RHO_MAX: f64 = 1.0 - 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    Independence,
    Exchangeable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    Homogeneous,
    PerRegimen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IccMode {
    Shared,
    PerRegimen,
}

/// Working covariance `σ²_{a1,a2} CS(ρ_{a1,a2})` per regimen, indexed in
/// [`EmbeddedAI::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingCovariance {
    pub structure: Structure,
    pub variance_mode: VarianceMode,
    pub icc_mode: IccMode,
    pub sigma2: [f64; 4],
    pub rho: [f64; 4],
}

impl WorkingCovariance {
    /// Starting point `σ² = 1, ρ = 0` for every regimen.
    pub fn initial(structure: Structure, variance_mode: VarianceMode, icc_mode: IccMode) -> Self {
        WorkingCovariance {
            structure,
            variance_mode,
            icc_mode,
            sigma2: [1.0; 4],
            rho: [0.0; 4],
        }
    }

    pub fn sigma2(&self, ai: EmbeddedAI) -> f64 {
        self.sigma2[ai.index()]
    }

    pub fn rho(&self, ai: EmbeddedAI) -> f64 {
        self.rho[ai.index()]
    }
}

fn check_domain(m: usize, sigma2: f64, rho: f64) -> Result<()> {
    if m == 0 {
        return Err(Error::Singular("empty cluster".into()));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Singular(format!("sigma2 = {sigma2} is not positive")));
    }
    let lower = if m > 1 { -1.0 / (m as f64 - 1.0) } else { f64::NEG_INFINITY };
    if !(rho < 1.0 && rho > lower) {
        return Err(Error::Singular(format!(
            "rho = {rho} outside ({lower}, 1) for cluster size {m}"
        )));
    }
    Ok(())
}

/// `(σ² CS_m(ρ))⁻¹ v` without forming the matrix.
pub fn cs_inverse_apply(m: usize, sigma2: f64, rho: f64, v: &[f64]) -> Result<Vec<f64>> {
    check_domain(m, sigma2, rho)?;
    if v.len() != m {
        return Err(Error::InvalidParameter(format!(
            "vector of length {} for cluster size {m}",
            v.len()
        )));
    }
    let total: f64 = v.iter().sum();
    let shift = rho / ((1.0 - rho) * (1.0 + (m as f64 - 1.0) * rho)) * total;
    Ok(v.iter()
        .map(|&x| (x / (1.0 - rho) - shift) / sigma2)
        .collect())
}

/// `log det(σ² CS_m(ρ))`.
pub fn cs_log_det(m: usize, sigma2: f64, rho: f64) -> Result<f64> {
    check_domain(m, sigma2, rho)?;
    let mf = m as f64;
    Ok(mf * sigma2.ln() + (mf - 1.0) * (-rho).ln_1p() + ((mf - 1.0) * rho).ln_1p())
}

/// `1ᵀ V⁻¹ 1 / m = 1 / (σ²(1 + (m − 1)ρ))`, the weight a constant design row
/// receives per unit of summed residual.
///
/// With identical design rows across members, `DᵀV⁻¹D = m·s·ddᵀ` and
/// `DᵀV⁻¹r = s·Σr·d` where `s` is this value.
pub fn cs_row_weight(m: usize, sigma2: f64, rho: f64) -> f64 {
    1.0 / (sigma2 * (1.0 + (m as f64 - 1.0) * rho))
}

/// Draws from `N(mean·1_m, σ² CS_m(ρ))` as
/// `mean + σ(√ρ z₀ + √(1 − ρ) z_j)`.
pub fn cs_cholesky_sample<R: Rng + ?Sized>(
    m: usize,
    sigma2: f64,
    rho: f64,
    mean: f64,
    rng: &mut R,
) -> Vec<f64> {
    debug_assert!((0.0..1.0).contains(&rho) && sigma2 >= 0.0);
    let sigma = sigma2.sqrt();
    let z0: f64 = rng.sample(StandardNormal);
    let shared = rho.sqrt() * z0;
    let own = (1.0 - rho).sqrt();
    (0..m)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            mean + sigma * (shared + own * z)
        })
        .collect()
}
