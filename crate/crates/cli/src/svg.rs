//! Confusion-matrix heatmap as standalone SVG.

use std::fmt::Write as _;

use ghostlite::metrics::ConfusionMatrix;

const CELL: usize = 56;
const MARGIN: usize = 96;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// K×K grid of `rect.cell` elements shaded by row-normalized frequency
/// (recall per true class), each labelled with its raw count.
pub fn confusion_heatmap(cm: &ConfusionMatrix) -> String {
    let k = cm.num_classes();
    let side = MARGIN + k * CELL + 16;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side}" viewBox="0 0 {side} {side}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{side}" height="{side}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="14" text-anchor="middle">predicted</text>"#, MARGIN + k * CELL / 2);
    let _ = writeln!(
        out,
        r#"<text x="14" y="{y}" text-anchor="middle" transform="rotate(-90 14 {y})">true</text>"#,
        y = MARGIN + k * CELL / 2
    );
    for (i, name) in cm.classes.iter().enumerate() {
        let name = escape(name);
        let c = MARGIN + i * CELL + CELL / 2;
        let _ = writeln!(out, r#"<text class="col-label" x="{c}" y="{}" text-anchor="middle">{name}</text>"#, MARGIN - 8);
        let _ = writeln!(out, r#"<text class="row-label" x="{}" y="{}" text-anchor="end">{name}</text>"#, MARGIN - 8, c + 4);
    }
    for t in 0..k {
        let row_total = cm.row_sum(t);
        for p in 0..k {
            let count = cm.counts[t][p];
            let frac = if row_total == 0 { 0.0 } else { count as f64 / row_total as f64 };
            // white to dark blue
            let shade = |lo: f64, hi: f64| (lo + (hi - lo) * frac).round() as u8;
            let fill = format!("#{:02x}{:02x}{:02x}", shade(255.0, 8.0), shade(255.0, 48.0), shade(255.0, 107.0));
            let ink = if frac > 0.5 { "white" } else { "black" };
            let (x, y) = (MARGIN + p * CELL, MARGIN + t * CELL);
            let _ = writeln!(
                out,
                r##"<rect class="cell" data-true="{t}" data-pred="{p}" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#cccccc"/>"##
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{count}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Counts with a header row of predicted classes and one row per true class.
pub fn confusion_csv(cm: &ConfusionMatrix) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["true\\pred".to_string()];
    header.extend(cm.classes.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in cm.classes.iter().zip(&cm.counts) {
        let mut record = vec![name.clone()];
        record.extend(row.iter().map(u64::to_string));
        w.write_record(&record)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
