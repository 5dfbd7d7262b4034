//! Observed data for a prototypical two-stage clustered SMART.
//!
//! Each cluster is randomized to a first-stage option `a1`, has its response
//! status `r` assessed, and (if it did not respond) is re-randomized to a
//! second-stage option `a2`. A cluster's record is consistent with one or
//! two of the four embedded regimens; responders feed both regimens that
//! share their first-stage option.

mod csv_io;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use csv_io::{load_csv, read_csv, write_csv, write_csv_to};

/// A randomized option coded as +1 / −1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "1")]
    Plus,
    #[serde(rename = "-1")]
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn from_int(v: i64) -> Option<Sign> {
        match v {
            1 => Some(Sign::Plus),
            -1 => Some(Sign::Minus),
            _ => None,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sign::Plus => f.write_str("1"),
            Sign::Minus => f.write_str("-1"),
        }
    }
}

/// One of the four embedded regimens `(a1, a2)`: start with `a1`, and give
/// non-responders `a2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbeddedAI {
    pub a1: Sign,
    pub a2: Sign,
}

impl EmbeddedAI {
    /// Fixed enumeration order used for every per-regimen array.
    pub const ALL: [EmbeddedAI; 4] = [
        EmbeddedAI::new(Sign::Plus, Sign::Plus),
        EmbeddedAI::new(Sign::Plus, Sign::Minus),
        EmbeddedAI::new(Sign::Minus, Sign::Plus),
        EmbeddedAI::new(Sign::Minus, Sign::Minus),
    ];

    pub const fn new(a1: Sign, a2: Sign) -> Self {
        EmbeddedAI { a1, a2 }
    }

    /// Position in [`EmbeddedAI::ALL`].
    pub fn index(self) -> usize {
        match (self.a1, self.a2) {
            (Sign::Plus, Sign::Plus) => 0,
            (Sign::Plus, Sign::Minus) => 1,
            (Sign::Minus, Sign::Plus) => 2,
            (Sign::Minus, Sign::Minus) => 3,
        }
    }

    pub fn from_values(a1: i64, a2: i64) -> Option<Self> {
        Some(EmbeddedAI::new(Sign::from_int(a1)?, Sign::from_int(a2)?))
    }
}

impl fmt::Display for EmbeddedAI {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.a1, self.a2)
    }
}

/// Observed data for one cluster.
///
/// Fields are public so that malformed records can be represented and then
/// reported by [`validate_design`]; [`load_csv`] never produces one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub cluster_id: String,
    /// Cluster-level baseline covariates.
    pub x: Vec<f64>,
    pub a1: Sign,
    /// Responded to the first-stage option.
    pub r: bool,
    /// Second-stage option; absent for responders.
    pub a2: Option<Sign>,
    /// Member outcomes.
    pub y: Vec<f64>,
}

impl ClusterRecord {
    pub fn responder(id: impl Into<String>, a1: Sign, x: Vec<f64>, y: Vec<f64>) -> Self {
        ClusterRecord {
            cluster_id: id.into(),
            x,
            a1,
            r: true,
            a2: None,
            y,
        }
    }

    pub fn non_responder(
        id: impl Into<String>,
        a1: Sign,
        a2: Sign,
        x: Vec<f64>,
        y: Vec<f64>,
    ) -> Self {
        ClusterRecord {
            cluster_id: id.into(),
            x,
            a1,
            r: false,
            a2: Some(a2),
            y,
        }
    }

    pub fn size(&self) -> usize {
        self.y.len()
    }

    /// Whether this cluster's observed sequence is consistent with `ai`.
    pub fn consistent_with(&self, ai: EmbeddedAI) -> bool {
        consistency_indicator(self, ai)
    }

    /// Iterator over the regimens this cluster's data are used for.
    pub fn consistent_regimens(&self) -> impl Iterator<Item = EmbeddedAI> + '_ {
        EmbeddedAI::ALL
            .into_iter()
            .filter(move |&ai| consistency_indicator(self, ai))
    }

    /// Checks the record-level invariants.
    pub fn check(&self, p: usize) -> std::result::Result<(), String> {
        if self.r && self.a2.is_some() {
            return Err("responder has a second-stage option".into());
        }
        if !self.r && self.a2.is_none() {
            return Err("non-responder is missing its second-stage option".into());
        }
        if self.y.is_empty() {
            return Err("cluster has no members".into());
        }
        if self.x.len() != p {
            return Err(format!("expected {p} covariates, found {}", self.x.len()));
        }
        if self.y.iter().chain(&self.x).any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        Ok(())
    }
}

/// Indicator that `record` is consistent with regimen `ai`: the first-stage
/// option matches, and either the cluster responded or its second-stage
/// option matches.
pub fn consistency_indicator(record: &ClusterRecord, ai: EmbeddedAI) -> bool {
    record.a1 == ai.a1 && (record.r || record.a2 == Some(ai.a2))
}

/// Treatment pathway 1..=6 in the order
/// `(1,R)`, `(1,NR,1)`, `(1,NR,−1)`, `(−1,R)`, `(−1,NR,1)`, `(−1,NR,−1)`.
///
/// A non-responder with a missing `a2` is reported as if `a2 = −1`; callers
/// that care should run [`validate_design`] first.
pub fn pathway_of(record: &ClusterRecord) -> usize {
    let base = match record.a1 {
        Sign::Plus => 0,
        Sign::Minus => 3,
    };
    let offset = if record.r {
        1
    } else {
        match record.a2 {
            Some(Sign::Plus) => 2,
            _ => 3,
        }
    };
    base + offset
}

/// Pathways consistent with each regimen, in [`EmbeddedAI::ALL`] order.
pub const REGIMEN_PATHWAYS: [[usize; 2]; 4] = [[1, 2], [1, 3], [4, 5], [4, 6]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    pub clusters: Vec<ClusterRecord>,
    /// Number of cluster-level covariates.
    pub p: usize,
    pub covariate_names: Vec<String>,
}

impl TrialDataset {
    /// Builds a dataset with covariates named `x1..xp`.
    pub fn new(clusters: Vec<ClusterRecord>, p: usize) -> Self {
        let covariate_names = (1..=p).map(|k| format!("x{k}")).collect();
        TrialDataset {
            clusters,
            p,
            covariate_names,
        }
    }

    pub fn n(&self) -> usize {
        self.clusters.len()
    }

    /// Total number of members.
    pub fn total_members(&self) -> usize {
        self.clusters.iter().map(ClusterRecord::size).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Severity {
    /// Data are usable but some cell is thin.
    Warning,
    /// Estimation must not proceed.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignIssue {
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    pub total_members: usize,
    /// Cluster counts per pathway 1..=6 (index 0 is pathway 1).
    pub pathway_counts: [usize; 6],
    /// Consistent-cluster counts per regimen in [`EmbeddedAI::ALL`] order.
    pub regimen_counts: [usize; 4],
    pub issues: Vec<DesignIssue>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.issues.iter().all(|i| i.severity != Severity::Error)
    }

    /// No record-level violations (regardless of design-level cell coverage).
    pub fn records_valid(&self) -> bool {
        !self
            .issues
            .iter()
            .any(|i| i.severity == Severity::Error && i.message.starts_with("cluster "))
    }

    pub fn errors(&self) -> impl Iterator<Item = &DesignIssue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "design check: {} ({} clusters, {} members)",
            if self.passed() { "pass" } else { "FAIL" },
            self.n,
            self.total_members
        )?;
        for (k, c) in self.pathway_counts.iter().enumerate() {
            writeln!(f, "  pathway {}: {c}", k + 1)?;
        }
        for (ai, c) in EmbeddedAI::ALL.iter().zip(self.regimen_counts) {
            writeln!(f, "  regimen {ai}: {c}")?;
        }
        for issue in &self.issues {
            let tag = match issue.severity {
                Severity::Warning => "warning",
                Severity::Error => "error",
            };
            writeln!(f, "  {tag}: {}", issue.message)?;
        }
        Ok(())
    }
}

/// Per-pathway and per-regimen counts plus every structural problem found.
pub fn validate_design(ds: &TrialDataset) -> ValidationReport {
    let mut issues = Vec::new();
    let mut pathway_counts = [0usize; 6];
    let mut regimen_counts = [0usize; 4];

    if ds.clusters.is_empty() {
        issues.push(DesignIssue {
            severity: Severity::Error,
            message: "dataset has no clusters".into(),
        });
    }
    if ds.covariate_names.len() != ds.p {
        issues.push(DesignIssue {
            severity: Severity::Error,
            message: format!(
                "{} covariate names for {} covariates",
                ds.covariate_names.len(),
                ds.p
            ),
        });
    }

    for rec in &ds.clusters {
        if let Err(msg) = rec.check(ds.p) {
            issues.push(DesignIssue {
                severity: Severity::Error,
                message: format!("cluster {}: {msg}", rec.cluster_id),
            });
            continue;
        }
        pathway_counts[pathway_of(rec) - 1] += 1;
        for ai in rec.consistent_regimens() {
            regimen_counts[ai.index()] += 1;
        }
    }

    for (k, &c) in pathway_counts.iter().enumerate() {
        if c == 0 {
            issues.push(DesignIssue {
                severity: Severity::Warning,
                message: format!("pathway {} is empty", k + 1),
            });
        }
    }
    for (ai, &c) in EmbeddedAI::ALL.iter().zip(&regimen_counts) {
        if c == 0 {
            issues.push(DesignIssue {
                severity: Severity::Error,
                message: format!("regimen {ai} has no consistent clusters"),
            });
        }
    }
    for (a1, nr) in [
        (Sign::Plus, pathway_counts[1] + pathway_counts[2]),
        (Sign::Minus, pathway_counts[4] + pathway_counts[5]),
    ] {
        if nr == 0 {
            issues.push(DesignIssue {
                severity: Severity::Error,
                message: format!(
                    "no non-responders under a1={a1}: regimens ({a1},±1) are indistinguishable in the second stage"
                ),
            });
        }
    }

    ValidationReport {
        n: ds.n(),
        total_members: ds.total_members(),
        pathway_counts,
        regimen_counts,
        issues,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(a1: Sign) -> ClusterRecord {
        ClusterRecord::responder("r", a1, vec![], vec![1.0])
    }

    fn nr(a1: Sign, a2: Sign) -> ClusterRecord {
        ClusterRecord::non_responder("nr", a1, a2, vec![], vec![1.0])
    }

    use Sign::{Minus, Plus};

    #[test]
    fn responders_feed_both_regimens_of_their_arm() {
        let rec = r(Plus);
        assert!(consistency_indicator(&rec, EmbeddedAI::new(Plus, Plus)));
        assert!(consistency_indicator(&rec, EmbeddedAI::new(Plus, Minus)));
        assert!(!consistency_indicator(&rec, EmbeddedAI::new(Minus, Plus)));
        assert!(!consistency_indicator(&rec, EmbeddedAI::new(Minus, Minus)));
    }

    #[test]
    fn non_responders_feed_one_regimen() {
        let rec = nr(Plus, Plus);
        assert!(consistency_indicator(&rec, EmbeddedAI::new(Plus, Plus)));
        assert!(!consistency_indicator(&rec, EmbeddedAI::new(Plus, Minus)));
        assert!(!consistency_indicator(&nr(Minus, Plus), EmbeddedAI::new(Plus, Plus)));
    }

    #[test]
    fn pathway_enumeration() {
        assert_eq!(pathway_of(&r(Plus)), 1);
        assert_eq!(pathway_of(&nr(Plus, Plus)), 2);
        assert_eq!(pathway_of(&nr(Plus, Minus)), 3);
        assert_eq!(pathway_of(&r(Minus)), 4);
        assert_eq!(pathway_of(&nr(Minus, Plus)), 5);
        assert_eq!(pathway_of(&nr(Minus, Minus)), 6);
    }

    #[test]
    fn indicator_agrees_with_pathway_table() {
        let records = [
            r(Plus),
            nr(Plus, Plus),
            nr(Plus, Minus),
            r(Minus),
            nr(Minus, Plus),
            nr(Minus, Minus),
        ];
        for rec in &records {
            let total: usize = EmbeddedAI::ALL
                .iter()
                .filter(|&&ai| consistency_indicator(rec, ai))
                .count();
            assert_eq!(total, if rec.r { 2 } else { 1 });
            for ai in EmbeddedAI::ALL {
                let in_table = REGIMEN_PATHWAYS[ai.index()].contains(&pathway_of(rec));
                assert_eq!(consistency_indicator(rec, ai), in_table);
            }
        }
    }

    #[test]
    fn regimen_order_is_fixed() {
        let vals: Vec<(f64, f64)> = EmbeddedAI::ALL
            .iter()
            .map(|ai| (ai.a1.value(), ai.a2.value()))
            .collect();
        assert_eq!(vals, vec![(1., 1.), (1., -1.), (-1., 1.), (-1., -1.)]);
        for (k, ai) in EmbeddedAI::ALL.iter().enumerate() {
            assert_eq!(ai.index(), k);
        }
    }

    fn full_design() -> TrialDataset {
        TrialDataset::new(
            vec![
                r(Plus),
                nr(Plus, Plus),
                nr(Plus, Minus),
                r(Minus),
                nr(Minus, Plus),
                nr(Minus, Minus),
            ],
            0,
        )
    }

    #[test]
    fn full_design_passes() {
        let report = validate_design(&full_design());
        assert!(report.passed(), "{report}");
        assert_eq!(report.pathway_counts, [1; 6]);
        assert_eq!(report.regimen_counts, [2; 4]);
        assert!(report.issues.is_empty());
    }

    #[test]
    fn arm_without_non_responders_fails() {
        let mut ds = full_design();
        ds.clusters.truncate(4);
        let report = validate_design(&ds);
        assert!(!report.passed());
        assert!(report.records_valid());
        assert!(report
            .errors()
            .any(|e| e.message.contains("no non-responders under a1=-1")));
    }

    #[test]
    fn responder_with_a2_fails() {
        let mut ds = full_design();
        ds.clusters[0].a2 = Some(Plus);
        let report = validate_design(&ds);
        assert!(!report.passed());
        assert!(!report.records_valid());
    }

    #[test]
    fn empty_and_non_finite_clusters_fail() {
        let mut ds = full_design();
        ds.clusters[0].y.clear();
        ds.clusters[3].y[0] = f64::NAN;
        let report = validate_design(&ds);
        assert!(!report.records_valid());
        assert_eq!(report.errors().count(), 2);
    }

    #[test]
    fn thin_pathway_is_only_a_warning() {
        let mut ds = full_design();
        ds.clusters.remove(1);
        let report = validate_design(&ds);
        assert!(report.passed());
        assert_eq!(report.issues.len(), 1);
        assert_eq!(report.issues[0].severity, Severity::Warning);
    }
}
