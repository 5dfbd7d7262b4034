//! Contrasts between embedded regimens, confidence intervals and p-values.

use nalgebra::DVector;
use serde::Serialize;

use crate::distributions::{normal_quantile, normal_two_sided, student_t_quantile, student_t_two_sided};
use crate::error::{Error, Result};
use crate::gee::{CausalDesign, FitResult};
use crate::sandwich::{FsaConfig, Reference, SandwichResult};
use crate::trial_data::{EmbeddedAI, Sign};

/// Linear function `cᵀ(β, η)` of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Contrast {
    pub label: String,
    pub coefficients: DVector<f64>,
}

impl Contrast {
    /// `μ(ai) − μ(aj)` under `design`; covariate coefficients are zero
    /// because covariates are centered.
    pub fn pairwise(design: &CausalDesign, p: usize, ai: EmbeddedAI, aj: EmbeddedAI) -> Self {
        let (ri, rj) = (design.row(ai), design.row(aj));
        let mut c: Vec<f64> = ri.iter().zip(&rj).map(|(a, b)| a - b).collect();
        c.resize(c.len() + p, 0.0);
        Contrast {
            label: format!("D[{ai} vs {aj}]"),
            coefficients: DVector::from_vec(c),
        }
    }

    /// Selects parameter `k`.
    pub fn unit(k: usize, dim: usize, label: impl Into<String>) -> Self {
        let mut c = DVector::zeros(dim);
        c[k] = 1.0;
        Contrast {
            label: label.into(),
            coefficients: c,
        }
    }

    pub fn negated(&self) -> Self {
        Contrast {
            label: format!("-{}", self.label),
            coefficients: -&self.coefficients,
        }
    }
}

/// Pairwise contrast under the factorial coding `(1, a1, a2, a1·a2)`.
pub fn pairwise_contrast(ai: EmbeddedAI, aj: EmbeddedAI, p: usize) -> Contrast {
    Contrast::pairwise(&CausalDesign::Factorial, p, ai, aj)
}

const fn ai(a1: Sign, a2: Sign) -> EmbeddedAI {
    EmbeddedAI::new(a1, a2)
}

/// The six pairwise effects in reporting order.
pub const EFFECT_PAIRS: [(EmbeddedAI, EmbeddedAI); 6] = {
    use Sign::{Minus, Plus};
    [
        (ai(Plus, Plus), ai(Minus, Minus)),
        (ai(Plus, Minus), ai(Minus, Plus)),
        (ai(Plus, Plus), ai(Plus, Minus)),
        (ai(Plus, Plus), ai(Minus, Plus)),
        (ai(Plus, Minus), ai(Minus, Minus)),
        (ai(Minus, Plus), ai(Minus, Minus)),
    ]
};

pub fn effect_contrasts(design: &CausalDesign, p: usize) -> Vec<Contrast> {
    EFFECT_PAIRS
        .iter()
        .map(|&(a, b)| Contrast::pairwise(design, p, a, b))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
    pub p_value: f64,
    /// Quantile multiplying the standard error.
    pub critical: f64,
}

/// Degrees of freedom `n − p − q`, required positive.
pub fn residual_df(n: usize, p: usize, q: usize) -> Result<f64> {
    if n <= p + q {
        return Err(Error::NonPositiveDf { n, params: p + q });
    }
    Ok((n - p - q) as f64)
}

/// Two-sided critical value for `level` under `reference`.
pub fn critical_value(reference: Reference, df: Option<f64>, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("confidence level {level} outside (0, 1)")));
    }
    let prob = 0.5 + level / 2.0;
    match reference {
        Reference::Normal => normal_quantile(prob),
        Reference::T => {
            let df = df.ok_or_else(|| Error::InvalidParameter("t reference needs degrees of freedom".into()))?;
            student_t_quantile(prob, df)
        }
    }
}

/// Confidence interval and two-sided p-value for `H0: value = 0`.
pub fn interval(
    estimate: f64,
    variance: f64,
    n: usize,
    p: usize,
    q: usize,
    reference: Reference,
    level: f64,
) -> Result<Interval> {
    let df = match reference {
        Reference::T => Some(residual_df(n, p, q)?),
        Reference::Normal => None,
    };
    interval_with_df(estimate, variance, reference, df, level)
}

fn interval_with_df(
    estimate: f64,
    variance: f64,
    reference: Reference,
    df: Option<f64>,
    level: f64,
) -> Result<Interval> {
    if !(variance >= 0.0) {
        return Err(Error::InvalidParameter(format!("variance {variance} is negative")));
    }
    let critical = critical_value(reference, df, level)?;
    let se = variance.sqrt();
    let half = critical * se;
    let p_value = if se == 0.0 {
        if estimate == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        let z = estimate / se;
        match (reference, df) {
            (Reference::T, Some(df)) => student_t_two_sided(z, df),
            _ => normal_two_sided(z),
        }
    };
    Ok(Interval {
        low: estimate - half,
        high: estimate + half,
        p_value: p_value.clamp(0.0, 1.0),
        critical,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowKind {
    Coefficient,
    Effect,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub kind: RowKind,
    pub label: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceReport {
    pub fsa: FsaConfig,
    pub df: Option<f64>,
    pub level: f64,
    pub rows: Vec<ReportRow>,
}

/// Coefficient rows for every parameter, then one row per contrast.
pub fn report(
    fit: &FitResult,
    sandwich: &SandwichResult,
    contrasts: &[Contrast],
    fsa: FsaConfig,
    level: f64,
) -> Result<InferenceReport> {
    let theta = fit.model.theta();
    let dim = theta.len();
    let df = match fsa.reference {
        Reference::T => Some(residual_df(fit.n(), fit.model.p, fit.model.q)?),
        Reference::Normal => None,
    };
    let names = fit.parameter_names();
    let mut rows = Vec::with_capacity(dim + contrasts.len());
    let units = names.iter().enumerate().map(|(k, name)| (RowKind::Coefficient, Contrast::unit(k, dim, name.clone())));
    let effects = contrasts.iter().map(|c| (RowKind::Effect, c.clone()));
    for (kind, c) in units.chain(effects) {
        if c.coefficients.len() != dim {
            return Err(Error::InvalidParameter(format!(
                "contrast {} has {} coefficients for {dim} parameters",
                c.label,
                c.coefficients.len()
            )));
        }
        let est = c.coefficients.dot(&theta);
        let var = sandwich.variance_of(&c.coefficients).max(0.0);
        let ci = interval_with_df(est, var, fsa.reference, df, level)?;
        rows.push(ReportRow {
            kind,
            label: c.label,
            estimate: est,
            se: var.sqrt(),
            ci_low: ci.low,
            ci_high: ci.high,
            p_value: ci.p_value,
        });
    }
    Ok(InferenceReport { fsa, df, level, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Sign::{Minus, Plus};

    #[test]
    fn contrast_examples() {
        let c = pairwise_contrast(ai(Plus, Plus), ai(Minus, Minus), 1);
        assert_eq!(c.coefficients.as_slice(), &[0.0, 2.0, 2.0, 0.0, 0.0]);
        let c = pairwise_contrast(ai(Plus, Plus), ai(Plus, Minus), 0);
        assert_eq!(c.coefficients.as_slice(), &[0.0, 0.0, 2.0, 2.0]);
        let c = pairwise_contrast(ai(Minus, Plus), ai(Minus, Plus), 2);
        assert!(c.coefficients.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn antisymmetry_and_cycle() {
        for a in EmbeddedAI::ALL {
            for b in EmbeddedAI::ALL {
                let ab = pairwise_contrast(a, b, 1);
                let ba = pairwise_contrast(b, a, 1);
                assert_eq!(ab.coefficients, ba.negated().coefficients);
            }
        }
        let e = effect_contrasts(&CausalDesign::Factorial, 0);
        // D[(1,1),(1,−1)] + D[(1,−1),(−1,−1)] = D[(1,1),(−1,−1)]
        assert_eq!(&e[2].coefficients + &e[4].coefficients, e[0].coefficients);
    }

    #[test]
    fn normal_interval() {
        let ci = interval(0.0, 1.0, 10, 0, 4, Reference::Normal, 0.95).unwrap();
        assert!((ci.low + 1.95996).abs() < 1e-4 && (ci.high - 1.95996).abs() < 1e-4);
        assert_eq!(ci.p_value, 1.0);
    }

    #[test]
    fn t_interval_df6() {
        let ci = interval(0.0, 1.0, 10, 0, 4, Reference::T, 0.95).unwrap();
        assert!((ci.high - 2.4469).abs() < 1e-3);
        assert!(matches!(
            interval(0.0, 1.0, 4, 0, 4, Reference::T, 0.95),
            Err(Error::NonPositiveDf { .. })
        ));
    }

    #[test]
    fn zero_variance_p_values() {
        assert_eq!(interval(0.0, 0.0, 10, 0, 4, Reference::T, 0.95).unwrap().p_value, 1.0);
        assert_eq!(interval(1.0, 0.0, 10, 0, 4, Reference::Normal, 0.95).unwrap().p_value, 0.0);
    }

    proptest! {
        #[test]
        fn interval_brackets_estimate(est in -100.0f64..100.0, var in 0.0f64..50.0, n in 6usize..200) {
            for r in [Reference::Normal, Reference::T] {
                let ci = interval(est, var, n, 1, 4, r, 0.95).unwrap();
                prop_assert!(ci.low <= est && est <= ci.high);
                prop_assert!((0.0..=1.0).contains(&ci.p_value));
            }
        }

        #[test]
        fn t_is_wider_than_normal(var in 0.01f64..50.0, n in 6usize..10_000) {
            let z = interval(0.0, var, n, 1, 4, Reference::Normal, 0.95).unwrap();
            let t = interval(0.0, var, n, 1, 4, Reference::T, 0.95).unwrap();
            prop_assert!(t.high > z.high);
        }
    }
}
