//! Report rendering: aligned text tables, CSV lines, and trace exports.
//! All numeric formatting is fixed-precision so identical inputs produce
//! byte-identical output.

use crate::session::SessionTrace;

/// Render an aligned text table with a header row.
pub fn text_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let render_row = |cells: &[String], widths: &[usize], out: &mut String| {
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            out.push_str(cell);
            if i + 1 < cells.len() {
                for _ in cell.len()..widths[i] {
                    out.push(' ');
                }
            }
        }
        out.push('\n');
    };
    let header_cells: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    render_row(&header_cells, &widths, &mut out);
    let rule: usize = widths.iter().sum::<usize>() + 2 * (cols - 1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for row in rows {
        render_row(row, &widths, &mut out);
    }
    out
}

/// Join fields into one CSV line, quoting any field containing a comma.
pub fn csv_line(fields: &[String]) -> String {
    let mut out = String::new();
    for (i, field) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        if field.contains(',') || field.contains('"') {
            out.push('"');
            out.push_str(&field.replace('"', "\"\""));
            out.push('"');
        } else {
            out.push_str(field);
        }
    }
    out.push('\n');
    out
}

/// Fixed-precision millisecond rendering.
pub fn fmt_ms(ms: f64) -> String {
    format!("{ms:.3}")
}

/// Session trace as CSV with the stage names used by the timing benchmarks.
pub fn trace_to_csv(trace: &SessionTrace) -> String {
    let mut out = String::from("stage,device,ms\n");
    for entry in &trace.entries {
        let device = entry.device.map(|d| d.to_string()).unwrap_or_default();
        out.push_str(&csv_line(&[entry.stage.clone(), device, fmt_ms(entry.ms)]));
    }
    out.push_str(&csv_line(&["RTT".into(), String::new(), fmt_ms(trace.rtt_ms)]));
    out.push_str(&csv_line(&[
        "frames_sent".into(),
        String::new(),
        trace.frames_sent.to_string(),
    ]));
    out.push_str(&csv_line(&[
        "boundary_bytes".into(),
        String::new(),
        trace.boundary_bytes.to_string(),
    ]));
    if let Some(sim) = trace.simulated_transfer_ms {
        out.push_str(&csv_line(&["simulated_transfer".into(), String::new(), fmt_ms(sim)]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::TraceEntry;

    #[test]
    fn table_alignment() {
        let t = text_table(
            &["protocol", "n"],
            &[
                vec!["UDP".into(), "104".into()],
                vec!["ESP-NOW".into(), "603".into()],
            ],
        );
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "protocol  n");
        assert_eq!(lines[2], "UDP       104");
        assert_eq!(lines[3], "ESP-NOW   603");
    }

    #[test]
    fn csv_quotes_commas() {
        assert_eq!(csv_line(&["a,b".into(), "c".into()]), "\"a,b\",c\n");
    }

    #[test]
    fn trace_csv_has_stage_rows() {
        let trace = SessionTrace {
            entries: vec![TraceEntry {
                stage: "Protocol setup".into(),
                device: None,
                ms: 1.25,
            }],
            rtt_ms: 10.0,
            boundary_bytes: 5488,
            frames_sent: 22,
            ..Default::default()
        };
        let csv = trace_to_csv(&trace);
        assert!(csv.contains("Protocol setup,,1.250"));
        assert!(csv.contains("RTT,,10.000"));
        assert!(csv.contains("frames_sent,,22"));
    }
}
