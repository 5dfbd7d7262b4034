//! Analysis report tables: one block per adjustment set.

use std::fmt::Write as _;
use std::io::Write;

use csmart::inference::{InferenceReport, RowKind};

pub struct Block {
    pub label: String,
    pub report: InferenceReport,
}

const HEADER: [&str; 10] = ["fsa", "kind", "term", "estimate", "se", "ci_low", "ci_high", "p_value", "df", "level"];

fn kind(k: RowKind) -> &'static str {
    match k {
        RowKind::Coefficient => "coefficient",
        RowKind::Effect => "effect",
    }
}

fn df_cell(df: Option<f64>) -> String {
    df.map_or_else(|| "inf".to_string(), |d| format!("{d}"))
}

pub fn write_csv<W: Write>(blocks: &[Block], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for b in blocks {
        for r in &b.report.rows {
            w.write_record([
                b.label.clone(),
                kind(r.kind).to_string(),
                r.label.clone(),
                format!("{:.6}", r.estimate),
                format!("{:.6}", r.se),
                format!("{:.6}", r.ci_low),
                format!("{:.6}", r.ci_high),
                format!("{:.6}", r.p_value),
                df_cell(b.report.df),
                format!("{}", b.report.level),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn render_text(blocks: &[Block]) -> String {
    let mut s = String::new();
    for (k, b) in blocks.iter().enumerate() {
        if k > 0 {
            s.push('\n');
        }
        let reference = match b.report.df {
            Some(df) => format!("t({df})"),
            None => "normal".to_string(),
        };
        let _ = writeln!(s, "{} ({}, {} reference, level {})", b.label, b.report.fsa, reference, b.report.level);
        let header = ["term", "EST", "SE", "CI low", "CI high", "p"].map(String::from).to_vec();
        let mut lines = vec![header];
        let mut last = None;
        for r in &b.report.rows {
            if last.is_some_and(|l| l != r.kind) {
                lines.push(Vec::new());
            }
            last = Some(r.kind);
            lines.push(vec![
                r.label.clone(),
                format!("{:.4}", r.estimate),
                format!("{:.4}", r.se),
                format!("{:.4}", r.ci_low),
                format!("{:.4}", r.ci_high),
                format!("{:.4}", r.p_value),
            ]);
        }
        let widths: Vec<usize> = (0..6)
            .map(|c| lines.iter().filter_map(|l| l.get(c)).map(String::len).max().unwrap_or(0))
            .collect();
        for line in &lines {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            let _ = writeln!(s, "  {}", cells.join("  ").trim_end());
        }
    }
    s
}
