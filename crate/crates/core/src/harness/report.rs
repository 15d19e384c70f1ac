//! CSV output.

use std::io::{self, Write};

use super::sweep::CellSummary;
use super::{AuditEntry, ResultRow};

pub const RESULT_HEADER: &str =
    "method,epsilon,snr_db,p,seed,macro_f1,mean_participants,abstained_rounds,channel_uses_per_query";

pub const SUMMARY_HEADER: &str = "method,epsilon,snr_db,p,seeds,macro_f1_mean,macro_f1_std,mean_participants,abstained_rounds_mean,channel_uses_per_query";

pub const AUDIT_HEADER: &str = "method,epsilon,snr_db,p,seed,sample,label,prediction,participants";

/// Shortest round-trip decimal, with `inf` for infinities. Magnitudes
/// outside [1e-4, 1e16) use exponent notation.
pub fn format_real(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else if x != 0.0 && !(1e-4..1e16).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn cell_prefix(row: &ResultRow) -> String {
    format!(
        "{},{},{},{},{}",
        row.method,
        format_real(row.epsilon),
        format_real(row.snr_db),
        format_real(row.participation_p),
        row.seed
    )
}

pub fn write_results<W: Write>(rows: &[ResultRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{RESULT_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            cell_prefix(r),
            format_real(r.macro_f1),
            format_real(r.mean_participants),
            r.abstained_rounds,
            r.channel_uses_per_query
        )?;
    }
    Ok(())
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut buf = Vec::new();
    write_results(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii")
}

pub fn write_summary<W: Write>(summary: &[CellSummary], mut out: W) -> io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for s in summary {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.method,
            format_real(s.epsilon),
            format_real(s.snr_db),
            format_real(s.participation_p),
            s.seeds,
            format_real(s.macro_f1_mean),
            format_real(s.macro_f1_std),
            format_real(s.mean_participants),
            format_real(s.abstained_rounds_mean),
            format_real(s.channel_uses_per_query)
        )?;
    }
    Ok(())
}

/// One line per (row, sample); an empty `prediction` marks an abstention.
pub fn write_audit<W: Write>(rows: &[ResultRow], audits: &[Vec<AuditEntry>], mut out: W) -> io::Result<()> {
    writeln!(out, "{AUDIT_HEADER}")?;
    for (row, audit) in rows.iter().zip(audits) {
        let prefix = cell_prefix(row);
        for e in audit {
            let pred = e.prediction.map(|p| p.to_string()).unwrap_or_default();
            writeln!(out, "{prefix},{},{},{pred},{}", e.sample, e.label, e.participants)?;
        }
    }
    Ok(())
}
