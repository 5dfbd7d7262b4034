//! Synthetic clustered SMART data with targeted marginal moments.
//!
//! For each regimen the outcome given `X` has mean `μ(a1, a2, X)`, variance
//! `σ²_marg` and intracluster correlation `ρ_marg`, marginal over response.
//! Responders and non-responders split around that mean by `ω`:
//!
//! * responder mean `ξ_R = μ + (1 − κ) ω`;
//! * non-responder mean `ξ_NR = μ − κ ω`.
//!
//! Responders to `a1` are the same clusters under `(a1, 1)` and `(a1, −1)`, so
//! their distribution cannot depend on `a2`. That pins
//! `ω_{a1,a2} = ω_{a1} − a2 (β₂ + β₃ a1) / (1 − κ)` around a per-arm base
//! `ω_{a1}`, and gives responders the smaller of the two regimens' residual
//! variance and covariance. Non-responders absorb the rest, which keeps every
//! branch a valid compound-symmetry covariance whenever
//! `ρ σ² ≥ κ(1 − κ) ω²` holds for every regimen.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::cs_cholesky_sample;
use crate::error::{Error, Result};
use crate::trial_data::{ClusterRecord, EmbeddedAI, Sign, TrialDataset};

/// Either a fixed size or a uniform draw from an inclusive range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClusterSizes {
    Fixed(usize),
    Range([usize; 2]),
}

impl ClusterSizes {
    fn bounds(self) -> (usize, usize) {
        match self {
            ClusterSizes::Fixed(m) => (m, m),
            ClusterSizes::Range([lo, hi]) => (lo, hi),
        }
    }
}

impl std::fmt::Display for ClusterSizes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClusterSizes::Fixed(m) => write!(f, "{m}"),
            ClusterSizes::Range([lo, hi]) => write!(f, "{lo}-{hi}"),
        }
    }
}

/// How response probability depends on the first covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResponseModel {
    /// `κ(a1, X) = κ̃(a1)`.
    #[default]
    Constant,
    /// `κ(a1, X) = logistic(α_{a1} + slope·X₁)` with `α_{a1}` chosen so that
    /// `E κ(a1, X) = κ̃(a1)`.
    Logistic { slope: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeSpec {
    pub n: usize,
    pub cluster_sizes: ClusterSizes,
    /// `(β₀, β₁, β₂, β₃)` of `β₀ + β₁a1 + β₂a2 + β₃a1a2`.
    pub beta_true: [f64; 4],
    /// One coefficient per standard-normal covariate.
    pub eta_true: Vec<f64>,
    /// Marginal standard deviation of Y, covariate contribution included.
    pub sd_y: f64,
    /// ICC of the covariate-adjusted outcome.
    pub icc: f64,
    /// `κ̃(a1)` indexed `[a1 = 1, a1 = −1]`.
    pub response_rate: [f64; 2],
    /// Base responder/non-responder mean split `ω_{a1}`, indexed like
    /// `response_rate`.
    #[serde(default)]
    pub response_effect: [f64; 2],
    #[serde(default)]
    pub response_model: ResponseModel,
    pub seed: u64,
}

fn arm(a1: Sign) -> usize {
    match a1 {
        Sign::Plus => 0,
        Sign::Minus => 1,
    }
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// `E logistic(α + λZ)` for `Z ~ N(0, 1)` by trapezoidal quadrature.
fn mean_logistic(alpha: f64, slope: f64) -> f64 {
    const K: usize = 4000;
    let h = 16.0 / K as f64;
    let mut acc = 0.0;
    for k in 0..=K {
        let z = -8.0 + h * k as f64;
        let w = if k == 0 || k == K { 0.5 } else { 1.0 };
        acc += w * (-0.5 * z * z).exp() * logistic(alpha + slope * z);
    }
    acc * h / (2.0 * std::f64::consts::PI).sqrt()
}

fn solve_intercept(target: f64, slope: f64) -> f64 {
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_logistic(mid, slope) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Conditional outcome law for one cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMoments {
    pub xi: f64,
    pub tau2: f64,
    pub rho_c: f64,
}

impl GenerativeSpec {
    pub fn p(&self) -> usize {
        self.eta_true.len()
    }

    /// Residual variance after the covariates: `sd_y² − Σ η²`.
    pub fn sigma2_marg(&self) -> f64 {
        self.sd_y * self.sd_y - self.eta_true.iter().map(|e| e * e).sum::<f64>()
    }

    pub fn mean(&self, ai: EmbeddedAI, x: &[f64]) -> f64 {
        let (a1, a2) = (ai.a1.value(), ai.a2.value());
        let b = &self.beta_true;
        b[0] + b[1] * a1 + b[2] * a2 + b[3] * a1 * a2
            + self.eta_true.iter().zip(x).map(|(e, x)| e * x).sum::<f64>()
    }

    fn intercepts(&self) -> [f64; 2] {
        match self.response_model {
            ResponseModel::Constant => [0.0; 2],
            ResponseModel::Logistic { slope } => [
                solve_intercept(self.response_rate[0], slope),
                solve_intercept(self.response_rate[1], slope),
            ],
        }
    }

    fn kappa_with(&self, intercepts: &[f64; 2], a1: Sign, x: &[f64]) -> f64 {
        match self.response_model {
            ResponseModel::Constant => self.response_rate[arm(a1)],
            ResponseModel::Logistic { slope } => logistic(intercepts[arm(a1)] + slope * x[0]),
        }
    }

    /// Response probability `κ(a1, x)`.
    pub fn kappa(&self, a1: Sign, x: &[f64]) -> f64 {
        self.kappa_with(&self.intercepts(), a1, x)
    }

    /// Checks every construction constraint, naming the first violation.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Infeasible(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        let (lo, hi) = self.cluster_sizes.bounds();
        if lo == 0 || lo > hi {
            return bad(format!("cluster sizes {} must satisfy 1 <= lo <= hi", self.cluster_sizes));
        }
        if !(self.sd_y > 0.0 && self.sd_y.is_finite()) {
            return bad(format!("sd_y = {} must be positive", self.sd_y));
        }
        if !(0.0..1.0).contains(&self.icc) {
            return bad(format!("icc = {} outside [0, 1)", self.icc));
        }
        for (k, r) in self.response_rate.iter().enumerate() {
            if !(*r > 0.0 && *r < 1.0) {
                return bad(format!("response rate {r} for arm {} outside (0, 1)", ["1", "-1"][k]));
            }
        }
        if !(self.sigma2_marg() > 0.0) {
            return bad(format!(
                "covariates explain all outcome variance: sd_y^2 - |eta|^2 = {}",
                self.sigma2_marg()
            ));
        }
        let probes: Vec<Vec<f64>> = match self.response_model {
            ResponseModel::Constant => vec![vec![0.0; self.p()]],
            ResponseModel::Logistic { .. } => {
                if self.p() == 0 {
                    return bad("logistic response model needs at least one covariate".into());
                }
                (-40..=40)
                    .map(|k| {
                        let mut x = vec![0.0; self.p()];
                        x[0] = k as f64 * 0.1;
                        x
                    })
                    .collect()
            }
        };
        let intercepts = self.intercepts();
        for x in &probes {
            for ai in EmbeddedAI::ALL {
                self.moments_with(&intercepts, ai, x, false)?;
            }
        }
        Ok(())
    }

    fn moments_with(
        &self,
        intercepts: &[f64; 2],
        ai: EmbeddedAI,
        x: &[f64],
        responder: bool,
    ) -> Result<ConditionalMoments> {
        let kappa = self.kappa_with(intercepts, ai.a1, x);
        let sigma2 = self.sigma2_marg();
        let cov = self.icc * sigma2;
        let (a1, b) = (ai.a1.value(), &self.beta_true);
        let base = self.response_effect[arm(ai.a1)];
        let omega = |a2: f64| base - a2 * (b[2] + b[3] * a1) / (1.0 - kappa);
        let spread = |a2: f64| kappa * (1.0 - kappa) * omega(a2).powi(2);
        let t = |a2: f64| sigma2 - spread(a2);
        let k = |a2: f64| cov - spread(a2);
        for a2 in [1.0, -1.0] {
            if k(a2) < 0.0 {
                return Err(Error::Infeasible(format!(
                    "regimen ({},{}): between-branch variance {:.6} exceeds icc*sigma2 = {:.6} at kappa = {kappa:.4}",
                    ai.a1,
                    if a2 > 0.0 { 1 } else { -1 },
                    spread(a2),
                    cov
                )));
            }
        }
        let tau_r = t(1.0).min(t(-1.0));
        let c_r = k(1.0).min(k(-1.0));
        let a2 = ai.a2.value();
        let mu = self.mean(ai, x);
        Ok(if responder {
            ConditionalMoments {
                xi: mu + (1.0 - kappa) * omega(a2),
                tau2: tau_r,
                rho_c: c_r / tau_r,
            }
        } else {
            let tau2 = (t(a2) - kappa * tau_r) / (1.0 - kappa);
            let c = (k(a2) - kappa * c_r) / (1.0 - kappa);
            ConditionalMoments {
                xi: mu - kappa * omega(a2),
                tau2,
                rho_c: c / tau2,
            }
        })
    }
}

/// Outcome law given covariates, regimen and response status.
pub fn conditional_moments(
    spec: &GenerativeSpec,
    ai: EmbeddedAI,
    x: &[f64],
    responder: bool,
) -> Result<ConditionalMoments> {
    spec.moments_with(&spec.intercepts(), ai, x, responder)
}

/// Mean, variance and ICC of a two-branch mixture with branch probability
/// `p` for branch 1.
///
/// Within-cluster covariance picks up the between-branch term
/// `p(1 − p)(μ₁ − μ₂)²` because both members share the branch.
pub fn regimen_moments_from_pathways(
    p: f64,
    mu1: f64,
    mu2: f64,
    s1: f64,
    s2: f64,
    rho1: f64,
    rho2: f64,
) -> (f64, f64, f64) {
    let mu = p * mu1 + (1.0 - p) * mu2;
    let between = p * (1.0 - p) * (mu1 - mu2).powi(2);
    let sigma2 = p * s1 + (1.0 - p) * s2 + between;
    let rho = (p * s1 * rho1 + (1.0 - p) * s2 * rho2 + between) / sigma2;
    (mu, sigma2, rho)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replication `rep` of a run seeded with `seed`.
pub fn replication_seed(seed: u64, rep: u64) -> u64 {
    splitmix64(seed ^ splitmix64(rep))
}

/// Independent stream for one cluster of one replication.
pub fn cluster_rng(seed: u64, rep: u64, cluster: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(seed, rep));
    rng.set_stream(cluster as u64);
    rng
}

fn draw_cluster<R: Rng>(spec: &GenerativeSpec, intercepts: &[f64; 2], id: String, rng: &mut R) -> Result<ClusterRecord> {
    let x: Vec<f64> = (0..spec.p()).map(|_| rng.sample(StandardNormal)).collect();
    let a1 = if rng.random::<bool>() { Sign::Plus } else { Sign::Minus };
    let r = rng.random::<f64>() < spec.kappa_with(intercepts, a1, &x);
    let a2 = if r {
        None
    } else if rng.random::<bool>() {
        Some(Sign::Plus)
    } else {
        Some(Sign::Minus)
    };
    let (lo, hi) = spec.cluster_sizes.bounds();
    let m = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    // Responder moments are the same for either second-stage option.
    let ai = EmbeddedAI::new(a1, a2.unwrap_or(Sign::Plus));
    let cm = spec.moments_with(intercepts, ai, &x, r)?;
    let y = cs_cholesky_sample(m, cm.tau2, cm.rho_c, cm.xi, rng);
    Ok(ClusterRecord {
        cluster_id: id,
        x,
        a1,
        r,
        a2,
        y,
    })
}

/// Replication `rep` of the trial described by `spec`. Cluster `i` draws
/// from its own stream, so the result does not depend on evaluation order.
pub fn generate_trial(spec: &GenerativeSpec, rep: u64) -> Result<TrialDataset> {
    spec.validate()?;
    let intercepts = spec.intercepts();
    let clusters = (0..spec.n)
        .map(|i| {
            let mut rng = cluster_rng(spec.seed, rep, i);
            draw_cluster(spec, &intercepts, format!("c{}", i + 1), &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialDataset::new(clusters, spec.p()))
}

/// Settings shared by every point of a design grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorDefaults {
    #[serde(default = "default_beta")]
    pub beta: [f64; 4],
    /// Base response split `ω` as a multiple of `sd_y`.
    #[serde(default)]
    pub response_effect_sd: f64,
    #[serde(default)]
    pub response_model: ResponseModel,
}

impl Default for GeneratorDefaults {
    fn default() -> Self {
        GeneratorDefaults {
            beta: default_beta(),
            response_effect_sd: 0.0,
            response_model: ResponseModel::Constant,
        }
    }
}

fn default_beta() -> [f64; 4] {
    [30.0, 1.0, 0.75, 0.5]
}

/// One cell of a simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub n: usize,
    pub m: ClusterSizes,
    /// Standardized effect `3.5 / sd(Y)`.
    pub delta: f64,
    pub icc: f64,
    pub response_rate: f64,
    pub cor_xy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDesign {
    #[serde(default)]
    pub name: String,
    pub n: Vec<usize>,
    pub m: Vec<ClusterSizes>,
    pub delta: Vec<f64>,
    pub icc: Vec<f64>,
    pub response_rate: Vec<f64>,
    pub cor_xy: Vec<f64>,
    pub replications: usize,
    pub base_seed: u64,
    #[serde(default, flatten)]
    pub generator: GeneratorDefaults,
}

impl SimulationDesign {
    /// Grid points, varying `n` fastest, then `m`, `cor_xy`, response rate,
    /// `delta` and `icc`.
    pub fn points(&self) -> Vec<DesignPoint> {
        let mut out = Vec::new();
        for &icc in &self.icc {
            for &delta in &self.delta {
                for &response_rate in &self.response_rate {
                    for &cor_xy in &self.cor_xy {
                        for &m in &self.m {
                            for &n in &self.n {
                                out.push(DesignPoint { n, m, delta, icc, response_rate, cor_xy });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Seed for grid point `index`.
    pub fn point_seed(&self, index: usize) -> u64 {
        splitmix64(self.base_seed.wrapping_add(splitmix64(index as u64)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be at least 1".into()));
        }
        if self.points().is_empty() {
            return Err(Error::InvalidParameter("design grid is empty".into()));
        }
        for (k, pt) in self.points().iter().enumerate() {
            spec_from_design(pt, &self.generator, self.point_seed(k))?.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Generative spec for one grid point: `sd_y = 3.5/δ`, a single
/// standard-normal covariate with `η = cor·sd_y`, so that
/// `σ²_marg = sd_y²(1 − cor²)`.
pub fn spec_from_design(point: &DesignPoint, defaults: &GeneratorDefaults, seed: u64) -> Result<GenerativeSpec> {
    if !(point.delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta = {} must be positive", point.delta)));
    }
    if !(point.cor_xy * point.cor_xy < 1.0) {
        return Err(Error::InvalidParameter(format!("cor(X,Y) = {} must be in (-1, 1)", point.cor_xy)));
    }
    let sd_y = 3.5 / point.delta;
    Ok(GenerativeSpec {
        n: point.n,
        cluster_sizes: point.m,
        beta_true: defaults.beta,
        eta_true: vec![point.cor_xy * sd_y],
        sd_y,
        icc: point.icc,
        response_rate: [point.response_rate; 2],
        response_effect: [defaults.response_effect_sd * sd_y; 2],
        response_model: defaults.response_model,
        seed,
    })
}
