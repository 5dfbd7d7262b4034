//! Sandwich covariance of `(β̂, η̂)` and its finite-sample adjustments.
//!
//! All matrices follow the empirical-mean convention: `B̂ = P_n Σ I W DᵀV⁻¹D`,
//! `M̂ = P_n U Uᵀ` and `Σ̂ = (1/n) B̂⁻¹ M̂ B̂⁻¹`.
//!
//! * FSA1 (nonnegative ρ̂) happens during fitting.
//! * FSA2 picks the t reference; see [`crate::inference`].
//! * FSA3 scales `Σ̂` by `n / (n − p − q)`.
//! * FSA4 replaces each cluster score by `(I − L_i)⁻¹ U_i` with
//!   `L_i = (Σ I W DᵀV⁻¹D)_i (n B̂)⁻¹`, which includes the cross-regimen
//!   terms a responder contributes to both regimens of its arm.
//!
//! Under estimated weights `Ĉ F̂⁻¹ Ĉᵀ` is subtracted from whichever meat is in
//! use, so FSA4 composes as `M̃ − Ĉ F̂⁻¹ Ĉᵀ`.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gee::FitResult;
use crate::linalg::{lu_inverse, spd_inverse, symmetrize, MAX_CONDITION};
use crate::weights::WeightMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    Normal,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FsaConfig {
    /// FSA3.
    pub dof_scale: bool,
    /// FSA4.
    pub bias_correct: bool,
    /// FSA2 when `T`.
    pub reference: Reference,
}

impl FsaConfig {
    pub fn minimal() -> Self {
        Preset::Minimal.config()
    }

    pub fn full() -> Self {
        Preset::Full.config()
    }
}

impl Default for FsaConfig {
    fn default() -> Self {
        FsaConfig::minimal()
    }
}

impl fmt::Display for FsaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = vec!["1"];
        if self.reference == Reference::T {
            parts.push("2");
        }
        if self.dof_scale {
            parts.push("3");
        }
        if self.bias_correct {
            parts.push("4");
        }
        write!(f, "FSA {}", parts.join("+"))
    }
}

/// Named adjustment sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// FSA1 with a normal reference.
    Minimal,
    /// FSA1+2+3.
    OnTheShelf,
    /// FSA1+2+4.
    Proposed,
    /// FSA1+2+3+4.
    Full,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Minimal, Preset::OnTheShelf, Preset::Proposed, Preset::Full];

    pub fn label(self) -> &'static str {
        match self {
            Preset::Minimal => "minimal",
            Preset::OnTheShelf => "on-the-shelf",
            Preset::Proposed => "proposed",
            Preset::Full => "full",
        }
    }

    pub fn config(self) -> FsaConfig {
        let (dof_scale, bias_correct, reference) = match self {
            Preset::Minimal => (false, false, Reference::Normal),
            Preset::OnTheShelf => (true, false, Reference::T),
            Preset::Proposed => (false, true, Reference::T),
            Preset::Full => (true, true, Reference::T),
        };
        FsaConfig {
            dof_scale,
            bias_correct,
            reference,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown FSA preset '{s}'")))
    }
}

/// `Ĉ = P_n ∂U/∂γ` and `F̂ = P_n S Sᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightCorrection {
    pub c: DMatrix<f64>,
    pub f: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichResult {
    pub sigma_hat: DMatrix<f64>,
    pub fsa: FsaConfig,
    pub weight_mode: WeightMode,
    /// Meat actually used, after any weight correction.
    pub meat: DMatrix<f64>,
    pub bread_inverse: DMatrix<f64>,
    pub weight_correction: Option<WeightCorrection>,
    /// Composition and diagnostic messages.
    pub notes: Vec<String>,
}

impl SandwichResult {
    pub fn standard_errors(&self) -> Vec<f64> {
        self.sigma_hat.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// `cᵀ Σ̂ c`.
    pub fn variance_of(&self, c: &DVector<f64>) -> f64 {
        (c.transpose() * &self.sigma_hat * c)[(0, 0)]
    }
}

/// `U_i = Σ_ai I W DᵀV⁻¹ r` at the fitted values.
pub fn cluster_score(fit: &FitResult, i: usize) -> DVector<f64> {
    let mut u = DVector::zeros(fit.dim());
    for t in &fit.clusters[i].terms {
        u += t.score();
    }
    u
}

fn bread_inverse(fit: &FitResult) -> Result<DMatrix<f64>> {
    spd_inverse(&fit.bread, &fit.parameter_names())
}

fn meat_plain(fit: &FitResult) -> DMatrix<f64> {
    let k = fit.dim();
    let mut m = DMatrix::zeros(k, k);
    for i in 0..fit.n() {
        let u = cluster_score(fit, i);
        m.ger(1.0, &u, &u, 1.0);
    }
    m / fit.n() as f64
}

fn meat_bias_corrected(fit: &FitResult, bread_inv: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = fit.dim();
    let n = fit.n() as f64;
    let normal_inv = bread_inv / n;
    let mut m = DMatrix::zeros(k, k);
    for (i, c) in fit.clusters.iter().enumerate() {
        let mut info = DMatrix::zeros(k, k);
        for t in &c.terms {
            info += t.information();
        }
        let adj = DMatrix::identity(k, k) - info * &normal_inv;
        let (inv, cond) = lu_inverse(&adj).ok_or_else(|| Error::SingularLeverage {
            cluster_id: c.cluster_id.clone(),
            condition: f64::INFINITY,
        })?;
        if !(cond <= MAX_CONDITION) {
            return Err(Error::SingularLeverage {
                cluster_id: c.cluster_id.clone(),
                condition: cond,
            });
        }
        let u = inv * cluster_score(fit, i);
        m.ger(1.0, &u, &u, 1.0);
    }
    Ok(m / n)
}

/// Ingredients of the estimated-weights correction.
pub fn weight_correction(fit: &FitResult) -> Result<WeightCorrection> {
    if fit.weight_engine.mode != WeightMode::Estimated {
        return Err(Error::NotApplicable);
    }
    let k = fit.dim();
    let n = fit.n() as f64;
    let mut c = DMatrix::zeros(k, 2);
    let mut f = DMatrix::zeros(2, 2);
    for cl in &fit.clusters {
        for t in &cl.terms {
            let dw = t.weight_derivative.ok_or(Error::NotApplicable)?;
            // U depends on γ only through W.
            let unit = t.score() / t.weight;
            for j in 0..2 {
                c.column_mut(j).axpy(dw[j], &unit, 1.0);
            }
        }
        let s = cl.gamma_score.ok_or(Error::NotApplicable)?;
        let s = DVector::from_row_slice(&s);
        f.ger(1.0, &s, &s, 1.0);
    }
    Ok(WeightCorrection { c: c / n, f: f / n })
}

fn subtract_correction(meat: &DMatrix<f64>, wc: &WeightCorrection) -> Result<DMatrix<f64>> {
    let f_inv = spd_inverse(&wc.f, &["gamma1".into(), "gamma2".into()]).map_err(|e| {
        Error::Singular(format!("weight-score information F is singular ({e}); are there non-responders in both second-stage options?"))
    })?;
    Ok(meat - &wc.c * f_inv * wc.c.transpose())
}

fn assemble(
    fit: &FitResult,
    meat: DMatrix<f64>,
    bread_inv: DMatrix<f64>,
    fsa: FsaConfig,
    weight_correction: Option<WeightCorrection>,
    mut notes: Vec<String>,
) -> SandwichResult {
    let n = fit.n() as f64;
    let mut sigma = symmetrize(&(&bread_inv * &meat * &bread_inv / n));
    if weight_correction.is_some() {
        for j in 0..sigma.nrows() {
            if sigma[(j, j)] < 0.0 {
                let name = &fit.parameter_names()[j];
                warn!("negative variance for {name} after weight correction clamped to 0");
                notes.push(format!("variance of {name} clamped at 0"));
                sigma[(j, j)] = 0.0;
            }
        }
    }
    if fit.n() == 1 {
        notes.push("n = 1: the meat is zero at the root; variance is degenerate".into());
    }
    SandwichResult {
        sigma_hat: sigma,
        fsa,
        weight_mode: fit.weight_engine.mode,
        meat,
        bread_inverse: bread_inv,
        weight_correction,
        notes,
    }
}

/// `Σ̂ = (1/n) B̂⁻¹ M̂ B̂⁻¹`, ignoring any weight estimation.
pub fn sandwich_plain(fit: &FitResult) -> Result<SandwichResult> {
    let bi = bread_inverse(fit)?;
    let meat = meat_plain(fit);
    let fsa = FsaConfig::minimal();
    Ok(assemble(fit, meat, bi, fsa, None, Vec::new()))
}

/// `Σ̂ = (1/n) B̂⁻¹ (M̂ − Ĉ F̂⁻¹ Ĉᵀ) B̂⁻¹` for a fit with estimated weights.
pub fn sandwich_estimated_weights(fit: &FitResult) -> Result<SandwichResult> {
    let wc = weight_correction(fit)?;
    let bi = bread_inverse(fit)?;
    let meat = subtract_correction(&meat_plain(fit), &wc)?;
    Ok(assemble(fit, meat, bi, FsaConfig::minimal(), Some(wc), Vec::new()))
}

/// FSA4. With estimated weights the correction is subtracted from `M̃`.
pub fn fsa4_bias_corrected(fit: &FitResult) -> Result<SandwichResult> {
    let bi = bread_inverse(fit)?;
    let mut meat = meat_bias_corrected(fit, &bi)?;
    let fsa = FsaConfig {
        bias_correct: true,
        ..FsaConfig::minimal()
    };
    let mut notes = Vec::new();
    let wc = if fit.weight_engine.mode == WeightMode::Estimated {
        let wc = weight_correction(fit)?;
        meat = subtract_correction(&meat, &wc)?;
        notes.push("weight correction subtracted from the bias-corrected meat".into());
        Some(wc)
    } else {
        None
    };
    Ok(assemble(fit, meat, bi, fsa, wc, notes))
}

/// FSA3: multiply by `n / (n − p − q)`.
pub fn fsa3_scale(sigma: SandwichResult, n: usize, p: usize, q: usize) -> Result<SandwichResult> {
    if n <= p + q {
        return Err(Error::NonPositiveDf { n, params: p + q });
    }
    let factor = n as f64 / (n - p - q) as f64;
    let mut out = sigma;
    out.sigma_hat *= factor;
    out.fsa.dof_scale = true;
    Ok(out)
}

/// Variance under any combination of adjustments. The reference distribution
/// is recorded but does not change `Σ̂`.
pub fn sandwich(fit: &FitResult, fsa: FsaConfig) -> Result<SandwichResult> {
    let estimated = fit.weight_engine.mode == WeightMode::Estimated;
    let mut out = match (fsa.bias_correct, estimated) {
        (true, _) => fsa4_bias_corrected(fit)?,
        (false, true) => sandwich_estimated_weights(fit)?,
        (false, false) => sandwich_plain(fit)?,
    };
    out.fsa.reference = fsa.reference;
    if fsa.dof_scale {
        out = fsa3_scale(out, fit.n(), fit.model.p, fit.model.q)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::Structure;
    use crate::gee::{fit, CausalDesign, FitConfig};
    use crate::trial_data::{ClusterRecord, Sign, TrialDataset};
    use proptest::prelude::*;
    use Sign::{Minus, Plus};

    const PATHS: [(Sign, bool, Option<Sign>); 6] = [
        (Plus, true, None),
        (Plus, false, Some(Plus)),
        (Plus, false, Some(Minus)),
        (Minus, true, None),
        (Minus, false, Some(Plus)),
        (Minus, false, Some(Minus)),
    ];

    fn dataset(n: usize, m: usize, p: usize, seed: u64) -> TrialDataset {
        // Small deterministic pseudo-random generator keeps tests independent
        // of the simulator.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let clusters = (0..n)
            .map(|k| {
                let (a1, r, a2) = PATHS[k % 6];
                let x: Vec<f64> = (0..p).map(|_| next()).collect();
                let shared = next() * 2.0;
                let y = (0..m).map(|_| 10.0 + shared + next() * 3.0 + x.iter().sum::<f64>()).collect();
                ClusterRecord { cluster_id: format!("c{k}"), x, a1, r, a2, y }
            })
            .collect();
        TrialDataset::new(clusters, p)
    }

    #[test]
    fn presets() {
        assert_eq!(Preset::Minimal.config().to_string(), "FSA 1");
        assert_eq!(Preset::OnTheShelf.config().to_string(), "FSA 1+2+3");
        assert_eq!(Preset::Proposed.config().to_string(), "FSA 1+2+4");
        assert_eq!(Preset::Full.config().to_string(), "FSA 1+2+3+4");
        assert_eq!("proposed".parse::<Preset>().unwrap(), Preset::Proposed);
        assert!("complete".parse::<Preset>().is_err());
    }

    #[test]
    fn scores_sum_to_zero() {
        let ds = dataset(18, 3, 1, 3);
        let f = fit(&ds, &FitConfig::default()).unwrap();
        let mut total = DVector::zeros(f.dim());
        for i in 0..f.n() {
            total += cluster_score(&f, i);
        }
        assert!(total.amax() < 1e-8);
        assert_eq!(f.clusters[0].terms.len(), 2);
        assert_eq!(f.clusters[1].terms.len(), 1);
    }

    #[test]
    fn fsa3_factor() {
        let ds = dataset(10, 3, 0, 1);
        let f = fit(&ds, &FitConfig::default()).unwrap();
        let plain = sandwich_plain(&f).unwrap();
        let scaled = fsa3_scale(plain.clone(), 10, 0, 4).unwrap();
        let ratio = &scaled.sigma_hat - &plain.sigma_hat * (5.0 / 3.0);
        assert!(ratio.amax() < 1e-12 * plain.sigma_hat.amax());
        assert!(matches!(fsa3_scale(plain, 5, 2, 4), Err(Error::NonPositiveDf { .. })));
    }

    #[test]
    fn duplicating_clusters_halves_variance() {
        let ds = dataset(12, 3, 1, 5);
        let mut doubled = ds.clone();
        for c in ds.clusters.iter() {
            let mut c = c.clone();
            c.cluster_id.push('b');
            doubled.clusters.push(c);
        }
        let s1 = sandwich_plain(&fit(&ds, &FitConfig::default()).unwrap()).unwrap();
        let s2 = sandwich_plain(&fit(&doubled, &FitConfig::default()).unwrap()).unwrap();
        let diff = &s1.sigma_hat * 0.5 - &s2.sigma_hat;
        assert!(diff.amax() < 1e-9 * s1.sigma_hat.amax(), "{diff}");
    }

    #[test]
    fn bias_correction_vanishes_with_replication() {
        let base = dataset(12, 3, 1, 9);
        let mut big = base.clone();
        big.clusters.clear();
        for r in 0..128 {
            for c in &base.clusters {
                let mut c = c.clone();
                c.cluster_id = format!("{}-{r}", c.cluster_id);
                big.clusters.push(c);
            }
        }
        let f = fit(&big, &FitConfig::default()).unwrap();
        let plain = sandwich_plain(&f).unwrap();
        let bc = fsa4_bias_corrected(&f).unwrap();
        for j in 0..f.dim() {
            let (a, b) = (plain.sigma_hat[(j, j)], bc.sigma_hat[(j, j)]);
            assert!(b >= a && (b - a) / a < 0.01, "{j}: {a} vs {b}");
        }
    }

    #[test]
    fn single_cluster_regimen_has_singular_leverage() {
        let mut ds = dataset(12, 3, 0, 2);
        // Leave c5 as the only cluster consistent with (−1, −1).
        ds.clusters.retain(|c| !["c3", "c9", "c11"].contains(&c.cluster_id.as_str()));
        let f = fit(&ds, &FitConfig::default()).unwrap();
        match fsa4_bias_corrected(&f) {
            Err(Error::SingularLeverage { cluster_id, .. }) => assert_eq!(cluster_id, "c5"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dropping_cross_regimen_products_changes_meat() {
        let ds = dataset(12, 3, 0, 4);
        let cfg = FitConfig {
            design: CausalDesign::CellMeans,
            ..FitConfig::default()
        };
        let f = fit(&ds, &cfg).unwrap();
        let full = meat_plain(&f);
        let k = f.dim();
        let mut without = DMatrix::zeros(k, k);
        for c in &f.clusters {
            for t in &c.terms {
                let u = t.score();
                without.ger(1.0, &u, &u, 1.0);
            }
        }
        without /= f.n() as f64;
        // (1,1)-(1,−1) entry only arises from responder cross products.
        assert_eq!(without[(0, 1)], 0.0);
        assert!(full[(0, 1)].abs() > 1e-6);
    }

    #[test]
    fn estimated_weight_correction_shrinks_diagonal() {
        let ds = dataset(24, 3, 1, 8);
        let cfg = FitConfig {
            weights: WeightMode::Estimated,
            ..FitConfig::default()
        };
        let f = fit(&ds, &cfg).unwrap();
        let plain = sandwich_plain(&f).unwrap();
        let corrected = sandwich_estimated_weights(&f).unwrap();
        for j in 0..f.dim() {
            assert!(corrected.sigma_hat[(j, j)] <= plain.sigma_hat[(j, j)] + 1e-15);
        }
        assert!(matches!(
            sandwich_estimated_weights(&fit(&ds, &FitConfig::default()).unwrap()),
            Err(Error::NotApplicable)
        ));
    }

    #[test]
    fn zero_derivative_means_no_correction() {
        let ds = dataset(24, 3, 0, 8);
        let cfg = FitConfig {
            weights: WeightMode::Estimated,
            ..FitConfig::default()
        };
        let mut f = fit(&ds, &cfg).unwrap();
        for c in &mut f.clusters {
            for t in &mut c.terms {
                t.weight_derivative = Some([0.0, 0.0]);
            }
        }
        let a = sandwich_plain(&f).unwrap();
        let b = sandwich_estimated_weights(&f).unwrap();
        assert!((&a.sigma_hat - &b.sigma_hat).amax() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn results_are_symmetric(seed in 0u64..10_000, p in 0usize..3, est in any::<bool>()) {
            let ds = dataset(18, 3, p, seed);
            let mut cfg = FitConfig::default();
            if est {
                cfg.weights = WeightMode::Estimated;
            }
            let f = fit(&ds, &cfg).unwrap();
            for preset in Preset::ALL {
                let s = sandwich(&f, preset.config()).unwrap();
                prop_assert!((&s.sigma_hat - s.sigma_hat.transpose()).amax() <= 1e-12 * s.sigma_hat.amax().max(1e-300));
                prop_assert!(s.sigma_hat.diagonal().iter().all(|v| *v >= 0.0));
            }
        }

        #[test]
        fn rho_invariance_without_covariates(seed in 0u64..10_000) {
            let ds = dataset(12, 4, 0, seed);
            let exch = fit(&ds, &FitConfig::default()).unwrap();
            let mut cfg = FitConfig::default();
            cfg.covariance.structure = Structure::Independence;
            let ind = fit(&ds, &cfg).unwrap();
            for (a, b) in [
                (sandwich_plain(&exch).unwrap(), sandwich_plain(&ind).unwrap()),
                (fsa4_bias_corrected(&exch).unwrap(), fsa4_bias_corrected(&ind).unwrap()),
            ] {
                let scale = b.sigma_hat.amax();
                prop_assert!((&a.sigma_hat - &b.sigma_hat).amax() <= 1e-8 * scale);
            }
        }
    }
}
