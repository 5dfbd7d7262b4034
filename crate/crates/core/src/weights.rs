//! Inverse-probability-of-treatment weights.
//!
//! Known weights use the design's fair coins: 2 for responders, 4 for
//! non-responders. Estimated weights replace the coin probabilities by
//! intercept-only logistic fits, `p̂1(1) = logistic(γ₁)` over all clusters
//! and `p̂2(1) = logistic(γ₂)` over non-responders pooled across arms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial_data::{ClusterRecord, EmbeddedAI, Sign, TrialDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    Known,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEngine {
    pub mode: WeightMode,
    /// `Pr(A1 = a1)` indexed `[a1 = 1, a1 = −1]`.
    pub p1: [f64; 2],
    /// `Pr(A2 = a2 | R = 0)` indexed `[a2 = 1, a2 = −1]`.
    pub p2: [f64; 2],
    /// Logit parameters; empty in known mode.
    pub gamma: Vec<f64>,
    pub score_dim: usize,
}

fn slot(s: Sign) -> usize {
    match s {
        Sign::Plus => 0,
        Sign::Minus => 1,
    }
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

impl WeightEngine {
    pub fn known() -> Self {
        WeightEngine {
            mode: WeightMode::Known,
            p1: [0.5; 2],
            p2: [0.5; 2],
            gamma: Vec::new(),
            score_dim: 0,
        }
    }

    /// Estimated-mode engine at logit parameters `(γ₁, γ₂)`.
    pub fn from_gamma(gamma: [f64; 2]) -> Self {
        let (q1, q2) = (logistic(gamma[0]), logistic(gamma[1]));
        WeightEngine {
            mode: WeightMode::Estimated,
            p1: [q1, 1.0 - q1],
            p2: [q2, 1.0 - q2],
            gamma: gamma.to_vec(),
            score_dim: 2,
        }
    }

    pub fn p1(&self, a1: Sign) -> f64 {
        self.p1[slot(a1)]
    }

    pub fn p2(&self, a2: Sign) -> f64 {
        self.p2[slot(a2)]
    }

    /// Weight of `record` toward regimen `ai`. Only meaningful when the
    /// record is consistent with `ai`; callers multiply by the indicator.
    pub fn weight(&self, record: &ClusterRecord, ai: EmbeddedAI) -> f64 {
        match self.mode {
            WeightMode::Known => {
                if record.r {
                    2.0
                } else {
                    4.0
                }
            }
            WeightMode::Estimated => {
                let w1 = 1.0 / self.p1(ai.a1);
                if record.r {
                    w1
                } else {
                    w1 / self.p2(ai.a2)
                }
            }
        }
    }

    /// Per-cluster logistic score at the fitted `γ`.
    pub fn score_vector(&self, record: &ClusterRecord) -> Result<[f64; 2]> {
        if self.mode != WeightMode::Estimated {
            return Err(Error::NotApplicable);
        }
        let s1 = indicator(record.a1 == Sign::Plus) - self.p1[0];
        let s2 = if record.r {
            0.0
        } else {
            indicator(record.a2 == Some(Sign::Plus)) - self.p2[0]
        };
        Ok([s1, s2])
    }

    /// `∂W/∂γ` for a record consistent with `ai`.
    ///
    /// `1/p̂1(a1) = 1 + exp(−a1 γ₁)`, so `∂W/∂γ₁ = −W a1 (1 − p̂1(a1))`; the
    /// `γ₂` term is analogous and present only for non-responders.
    pub fn weight_gamma_derivative(&self, record: &ClusterRecord, ai: EmbeddedAI) -> Result<[f64; 2]> {
        if self.mode != WeightMode::Estimated {
            return Err(Error::NotApplicable);
        }
        let w = self.weight(record, ai);
        let d1 = -w * ai.a1.value() * (1.0 - self.p1(ai.a1));
        let d2 = if record.r {
            0.0
        } else {
            -w * ai.a2.value() * (1.0 - self.p2(ai.a2))
        };
        Ok([d1, d2])
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Empirical-proportion weights (the intercept-only logistic MLE).
pub fn fit_weights(ds: &TrialDataset) -> Result<WeightEngine> {
    let n = ds.n();
    let n1 = ds.clusters.iter().filter(|c| c.a1 == Sign::Plus).count();
    if n1 == 0 || n1 == n {
        return Err(Error::DegenerateWeights(format!(
            "{n1} of {n} clusters have a1 = 1; both first-stage arms must be present"
        )));
    }
    let nr: Vec<&ClusterRecord> = ds.clusters.iter().filter(|c| !c.r).collect();
    let n21 = nr.iter().filter(|c| c.a2 == Some(Sign::Plus)).count();
    if nr.is_empty() || n21 == 0 || n21 == nr.len() {
        return Err(Error::DegenerateWeights(format!(
            "{n21} of {} non-responders have a2 = 1; both second-stage options must be present",
            nr.len()
        )));
    }
    let q1 = n1 as f64 / n as f64;
    let q2 = n21 as f64 / nr.len() as f64;
    let mut engine = WeightEngine::from_gamma([logit(q1), logit(q2)]);
    // Keep the exact proportions rather than logistic(logit(q)).
    engine.p1 = [q1, 1.0 - q1];
    engine.p2 = [q2, 1.0 - q2];
    Ok(engine)
}

fn logit(q: f64) -> f64 {
    (q / (1.0 - q)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial_data::consistency_indicator;
    use proptest::prelude::*;
    use Sign::{Minus, Plus};

    fn rec(a1: Sign, r: bool, a2: Option<Sign>) -> ClusterRecord {
        ClusterRecord {
            cluster_id: "c".into(),
            x: vec![],
            a1,
            r,
            a2,
            y: vec![0.0],
        }
    }

    #[test]
    fn known_weights() {
        let w = WeightEngine::known();
        assert_eq!(w.weight(&rec(Plus, true, None), EmbeddedAI::new(Plus, Minus)), 2.0);
        assert_eq!(w.weight(&rec(Plus, false, Some(Plus)), EmbeddedAI::new(Plus, Plus)), 4.0);
        assert!(matches!(w.score_vector(&rec(Plus, true, None)), Err(Error::NotApplicable)));
    }

    #[test]
    fn estimated_responder_weight() {
        let mut clusters: Vec<ClusterRecord> = (0..6).map(|_| rec(Plus, true, None)).collect();
        clusters.push(rec(Minus, false, Some(Plus)));
        clusters.push(rec(Minus, false, Some(Minus)));
        clusters.push(rec(Minus, true, None));
        clusters.push(rec(Minus, true, None));
        let ds = TrialDataset::new(clusters, 0);
        let w = fit_weights(&ds).unwrap();
        assert!((w.weight(&ds.clusters[0], EmbeddedAI::new(Plus, Plus)) - 1.0 / 0.6).abs() < 1e-15);
    }

    #[test]
    fn proportions() {
        let ds = TrialDataset::new(
            vec![
                rec(Plus, false, Some(Plus)),
                rec(Plus, false, Some(Plus)),
                rec(Minus, false, Some(Plus)),
                rec(Minus, false, Some(Minus)),
            ],
            0,
        );
        let w = fit_weights(&ds).unwrap();
        assert_eq!(w.p1[0], 0.5);
        assert_eq!(w.p2[0], 0.75);
        assert!((w.gamma[1] - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_arm_is_degenerate() {
        let ds = TrialDataset::new(vec![rec(Plus, false, Some(Plus)), rec(Plus, false, Some(Minus))], 0);
        assert!(matches!(fit_weights(&ds), Err(Error::DegenerateWeights(_))));
    }

    #[test]
    fn score_examples() {
        let w = WeightEngine::from_gamma([0.0, 0.0]);
        assert_eq!(w.score_vector(&rec(Plus, true, None)).unwrap(), [0.5, 0.0]);
        assert_eq!(w.score_vector(&rec(Minus, false, Some(Minus))).unwrap(), [-0.5, -0.5]);
        let d = w.weight_gamma_derivative(&rec(Plus, true, None), EmbeddedAI::new(Plus, Plus)).unwrap();
        assert_eq!(d, [-1.0, 0.0]);
    }

    fn arb_dataset() -> impl Strategy<Value = TrialDataset> {
        prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 4..40)
            .prop_map(|flags| {
                let s = |b: bool| if b { Plus } else { Minus };
                let mut clusters: Vec<ClusterRecord> = flags
                    .into_iter()
                    .map(|(a1, r, a2)| rec(s(a1), r, if r { None } else { Some(s(a2)) }))
                    .collect();
                // Guarantee both arms and both second-stage options.
                clusters.push(rec(Plus, false, Some(Plus)));
                clusters.push(rec(Minus, false, Some(Minus)));
                TrialDataset::new(clusters, 0)
            })
    }

    proptest! {
        #[test]
        fn scores_sum_to_zero(ds in arb_dataset()) {
            let w = fit_weights(&ds).unwrap();
            let mut total = [0.0; 2];
            for c in &ds.clusters {
                let s = w.score_vector(c).unwrap();
                total[0] += s[0];
                total[1] += s[1];
            }
            prop_assert!(total[0].abs() < 1e-10 && total[1].abs() < 1e-10);
        }

        #[test]
        fn weights_normalize_within_stage(ds in arb_dataset()) {
            let w = fit_weights(&ds).unwrap();
            let n = ds.n() as f64;
            let nr = ds.clusters.iter().filter(|c| !c.r).count() as f64;
            for s in [Plus, Minus] {
                let t1: f64 = ds.clusters.iter().filter(|c| c.a1 == s).map(|_| 1.0 / w.p1(s)).sum();
                prop_assert!((t1 - n).abs() < 1e-10 * n);
                let t2: f64 = ds.clusters.iter()
                    .filter(|c| !c.r && c.a2 == Some(s))
                    .map(|_| 1.0 / w.p2(s))
                    .sum();
                prop_assert!((t2 - nr).abs() < 1e-10 * n);
            }
        }

        #[test]
        fn known_weights_total_four_per_cluster(ds in arb_dataset()) {
            let w = WeightEngine::known();
            let total: f64 = ds.clusters.iter()
                .flat_map(|c| EmbeddedAI::ALL.iter().filter(|&&ai| consistency_indicator(c, ai)).map(|&ai| w.weight(c, ai)).collect::<Vec<_>>())
                .sum();
            prop_assert_eq!(total, 4.0 * ds.n() as f64);
        }

        #[test]
        fn derivative_matches_finite_differences(
            g1 in -2.0f64..2.0, g2 in -2.0f64..2.0,
            a1 in any::<bool>(), r in any::<bool>(), a2 in any::<bool>(),
        ) {
            let s = |b: bool| if b { Plus } else { Minus };
            let record = rec(s(a1), r, if r { None } else { Some(s(a2)) });
            let ai = EmbeddedAI::new(s(a1), s(a2));
            let w = WeightEngine::from_gamma([g1, g2]);
            let d = w.weight_gamma_derivative(&record, ai).unwrap();
            let h = 1e-5;
            for k in 0..2 {
                let mut up = [g1, g2];
                let mut dn = [g1, g2];
                up[k] += h;
                dn[k] -= h;
                let fd = (WeightEngine::from_gamma(up).weight(&record, ai)
                    - WeightEngine::from_gamma(dn).weight(&record, ai)) / (2.0 * h);
                prop_assert!((fd - d[k]).abs() <= 1e-6 * d[k].abs().max(1.0), "k={k}: {fd} vs {}", d[k]);
            }
        }
    }
}
