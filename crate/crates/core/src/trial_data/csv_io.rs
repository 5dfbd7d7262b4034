//! Member-level CSV format: one row per cluster member with columns
//! `cluster_id, member_id, a1, r, a2, y, x1..xp`.
//!
//! Cluster-level fields (`a1`, `r`, `a2`, covariates) are repeated on every
//! member row and must agree. `a2` is the literal `NA` for responders.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{ClusterRecord, Sign, TrialDataset};
use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 6] = ["cluster_id", "member_id", "a1", "r", "a2", "y"];

pub fn load_csv(path: impl AsRef<Path>) -> Result<TrialDataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_csv(file, path)
}

/// Parses CSV from any reader; `source` is only used in error messages.
pub fn read_csv<R: Read>(reader: R, source: &Path) -> Result<TrialDataset> {
    let perr = |row: usize, message: String| Error::Parse {
        path: source.to_path_buf(),
        row,
        message,
    };

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers()?.clone();
    for (k, expected) in FIXED_COLUMNS.iter().enumerate() {
        match header.get(k) {
            Some(name) if name == *expected => {}
            Some(name) => {
                return Err(perr(
                    1,
                    format!("unknown column '{name}' at position {}, expected '{expected}'", k + 1),
                ))
            }
            None => return Err(perr(1, format!("missing column '{expected}'"))),
        }
    }
    let p = header.len() - FIXED_COLUMNS.len();
    for k in 0..p {
        let name = &header[FIXED_COLUMNS.len() + k];
        if name != format!("x{}", k + 1) {
            return Err(perr(
                1,
                format!("unknown column '{name}', expected covariate 'x{}'", k + 1),
            ));
        }
    }

    let mut clusters: Vec<ClusterRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for (k, record) in rdr.records().enumerate() {
        let row = k + 2;
        let record = record.map_err(|e| perr(row, e.to_string()))?;
        if record.len() != header.len() {
            return Err(perr(
                row,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(perr(row, "empty cluster_id".into()));
        }
        if record[1].is_empty() {
            return Err(perr(row, "empty member_id".into()));
        }
        let a1 = parse_sign(&record[2]).ok_or_else(|| perr(row, format!("bad a1 '{}'", &record[2])))?;
        let r = match &record[3] {
            "1" => true,
            "0" => false,
            other => return Err(perr(row, format!("bad r '{other}'"))),
        };
        let a2 = match &record[4] {
            "NA" => None,
            s => Some(parse_sign(s).ok_or_else(|| perr(row, format!("bad a2 '{s}'")))?),
        };
        match (r, a2) {
            (true, Some(_)) => return Err(perr(row, "responder must have a2 = NA".into())),
            (false, None) => return Err(perr(row, "non-responder has a2 = NA".into())),
            _ => {}
        }
        let y = parse_finite(&record[5]).ok_or_else(|| perr(row, format!("bad y '{}'", &record[5])))?;
        let x = (0..p)
            .map(|j| {
                let s = &record[FIXED_COLUMNS.len() + j];
                parse_finite(s).ok_or_else(|| perr(row, format!("bad x{} '{s}'", j + 1)))
            })
            .collect::<Result<Vec<_>>>()?;

        match index.get(&id) {
            Some(&c) => {
                let existing = &mut clusters[c];
                if existing.a1 != a1 || existing.r != r || existing.a2 != a2 || existing.x != x {
                    return Err(perr(
                        row,
                        format!("cluster-level fields disagree with earlier rows of cluster '{id}'"),
                    ));
                }
                existing.y.push(y);
            }
            None => {
                index.insert(id.clone(), clusters.len());
                clusters.push(ClusterRecord {
                    cluster_id: id,
                    x,
                    a1,
                    r,
                    a2,
                    y: vec![y],
                });
            }
        }
    }

    if clusters.is_empty() {
        return Err(perr(2, "no data rows".into()));
    }
    Ok(TrialDataset::new(clusters, p))
}

pub fn write_csv(ds: &TrialDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_csv_to(ds, file)
}

/// Writes values with Rust's shortest round-trip float formatting, so that
/// reading the file back reproduces every value bit for bit.
pub fn write_csv_to<W: Write>(ds: &TrialDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((1..=ds.p).map(|k| format!("x{k}")));
    w.write_record(&header)?;

    for c in &ds.clusters {
        if let Err(msg) = c.check(ds.p) {
            return Err(Error::InvalidData(format!("cluster {}: {msg}", c.cluster_id)));
        }
        let a2 = c.a2.map_or_else(|| "NA".to_string(), |s| s.to_string());
        let r = if c.r { "1" } else { "0" };
        for (j, y) in c.y.iter().enumerate() {
            let mut row = vec![
                c.cluster_id.clone(),
                (j + 1).to_string(),
                c.a1.to_string(),
                r.to_string(),
                a2.clone(),
                y.to_string(),
            ];
            row.extend(c.x.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_sign(s: &str) -> Option<Sign> {
    match s {
        "1" | "+1" => Some(Sign::Plus),
        "-1" => Some(Sign::Minus),
        _ => None,
    }
}

fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<TrialDataset> {
        read_csv(text.as_bytes(), Path::new("<test>"))
    }

    #[test]
    fn two_cluster_file() {
        let ds = parse(
            "cluster_id,member_id,a1,r,a2,y,x1\n\
             s1,1,1,1,NA,3.5,0.2\n\
             s1,2,1,1,NA,4.0,0.2\n\
             s2,1,-1,0,-1,7,1.5\n",
        )
        .unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.p, 1);
        assert_eq!(ds.clusters[0].y, vec![3.5, 4.0]);
        assert_eq!(ds.clusters[0].a2, None);
        assert_eq!(ds.clusters[1].a2, Some(Sign::Minus));
        assert_eq!(ds.covariate_names, vec!["x1".to_string()]);
    }

    #[test]
    fn na_for_non_responder_is_rejected() {
        let err = parse("cluster_id,member_id,a1,r,a2,y\nc,1,1,0,NA,2\n").unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_a2_column_is_rejected() {
        let err = parse("cluster_id,member_id,a1,r,y\nc,1,1,1,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, .. }), "{err}");
    }

    #[test]
    fn unknown_column_is_rejected() {
        let err = parse("cluster_id,member_id,a1,r,a2,y,age\nc,1,1,1,NA,2,3\n").unwrap_err();
        assert!(err.to_string().contains("unknown column 'age'"), "{err}");
    }

    #[test]
    fn inconsistent_cluster_rows_are_rejected() {
        let err = parse(
            "cluster_id,member_id,a1,r,a2,y\nc,1,1,1,NA,2\nc,2,-1,1,NA,2\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }), "{err}");
    }

    #[test]
    fn ragged_row_is_rejected() {
        let err = parse("cluster_id,member_id,a1,r,a2,y,x1\nc,1,1,1,NA,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err}");
    }

    fn arb_record(p: usize) -> impl Strategy<Value = ClusterRecord> {
        (
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
            prop::collection::vec(-1e6f64..1e6, p),
            prop::collection::vec(prop::num::f64::NORMAL, 1..5),
        )
            .prop_map(|(a1, r, a2, x, y)| {
                let s = |b: bool| if b { Sign::Plus } else { Sign::Minus };
                ClusterRecord {
                    cluster_id: String::new(),
                    x,
                    a1: s(a1),
                    r,
                    a2: if r { None } else { Some(s(a2)) },
                    y,
                }
            })
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(
            mut recs in (0usize..3).prop_flat_map(|p| prop::collection::vec(arb_record(p), 1..8))
        ) {
            let p = recs[0].x.len();
            for (k, r) in recs.iter_mut().enumerate() {
                r.cluster_id = format!("c{k}");
            }
            let ds = TrialDataset::new(recs, p);
            let mut buf = Vec::new();
            write_csv_to(&ds, &mut buf).unwrap();
            let back = read_csv(buf.as_slice(), Path::new("<mem>")).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
