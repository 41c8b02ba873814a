//! Matrix CSV files, SVG heatmaps and the summary document.
//!
//! CSV layout: `# key = value` metadata lines, then a header row
//! (`neutralizer,<targets...>`), a `_support` row with target support, and
//! one row per neutralizer. Cells are signed fractions printed with the
//! shortest round-trip representation; absent cells are empty.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::neutralize::NeutralizationMatrix;

const SUPPORT_ROW: &str = "_support";
const CORNER: &str = "neutralizer";

fn csv_field(s: &str) -> Result<&str> {
    if s.contains([',', '\n', '\r', '"']) {
        return Err(Error::Format(format!(
            "label {s:?} cannot be written unquoted"
        )));
    }
    Ok(s)
}

pub fn write_matrix_csv<W: Write>(m: &NeutralizationMatrix, mut out: W) -> Result<()> {
    for (k, v) in &m.metadata {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Format(format!(
                "metadata entry {k:?} is not single-line"
            )));
        }
        writeln!(out, "# {k} = {v}")?;
    }
    writeln!(out, "# baseline = {}", m.baseline)?;
    let mut header = String::from(CORNER);
    for c in &m.col_labels {
        header.push(',');
        header.push_str(csv_field(c)?);
    }
    writeln!(out, "{header}")?;
    let support: Vec<String> = m.col_support.iter().map(u64::to_string).collect();
    writeln!(out, "{SUPPORT_ROW},{}", support.join(","))?;
    for (label, row) in m.row_labels.iter().zip(&m.cells) {
        let mut line = csv_field(label)?.to_owned();
        for cell in row {
            line.push(',');
            if let Some(v) = cell {
                write!(line, "{v}").expect("writing to a String cannot fail");
            }
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// `# key = value` pairs from leading comment lines.
pub fn parse_metadata_line(line: &str) -> Option<(String, String)> {
    let body = line.strip_prefix('#')?.trim();
    let (k, v) = body.split_once('=')?;
    Some((k.trim().to_owned(), v.trim().to_owned()))
}

pub fn read_matrix_csv<R: BufRead>(reader: R) -> Result<NeutralizationMatrix> {
    let mut metadata = Vec::new();
    let mut baseline = false;
    let mut col_labels: Option<Vec<String>> = None;
    let mut col_support: Option<Vec<u64>> = None;
    let mut row_labels = Vec::new();
    let mut cells = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let bad = |msg: String| Error::Format(format!("matrix CSV line {}: {msg}", i + 1));
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('#') {
            let (k, v) =
                parse_metadata_line(&line).ok_or_else(|| bad("malformed metadata".into()))?;
            if k == "baseline" {
                baseline = v
                    .parse()
                    .map_err(|_| bad(format!("bad baseline flag {v:?}")))?;
            } else {
                metadata.push((k, v));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match (&col_labels, &col_support) {
            (None, _) => {
                if fields[0] != CORNER {
                    return Err(bad(format!("expected header starting with {CORNER:?}")));
                }
                col_labels = Some(fields[1..].iter().map(|s| s.to_string()).collect());
            }
            (Some(cols), None) => {
                if fields[0] != SUPPORT_ROW || fields.len() != cols.len() + 1 {
                    return Err(bad("expected support row".into()));
                }
                col_support = Some(
                    fields[1..]
                        .iter()
                        .map(|s| s.parse().map_err(|_| bad(format!("bad support {s:?}"))))
                        .collect::<Result<_>>()?,
                );
            }
            (Some(cols), Some(_)) => {
                if fields.len() != cols.len() + 1 {
                    return Err(bad(format!(
                        "expected {} fields, found {}",
                        cols.len() + 1,
                        fields.len()
                    )));
                }
                row_labels.push(fields[0].to_owned());
                cells.push(
                    fields[1..]
                        .iter()
                        .map(|s| {
                            if s.is_empty() {
                                Ok(None)
                            } else {
                                s.parse::<f64>()
                                    .map(Some)
                                    .map_err(|_| bad(format!("bad cell {s:?}")))
                            }
                        })
                        .collect::<Result<Vec<_>>>()?,
                );
            }
        }
    }
    let col_labels =
        col_labels.ok_or_else(|| Error::Format("matrix CSV has no header row".into()))?;
    let col_support =
        col_support.ok_or_else(|| Error::Format("matrix CSV has no support row".into()))?;
    Ok(NeutralizationMatrix {
        row_labels,
        col_labels,
        cells,
        col_support,
        metadata,
        baseline,
    })
}

/// Cell annotation: signed integer percent.
pub fn percent_label(v: f64) -> String {
    let p = (v * 100.0).round() as i64;
    if p == 0 {
        "0".to_owned()
    } else {
        format!("{p:+}")
    }
}

/// Diverging color anchored at 0 and clipped at ±100%.
pub fn cell_color(v: f64) -> String {
    let t = v.clamp(-1.0, 1.0);
    let (r, g, b) = if t < 0.0 {
        (178.0, 24.0, 43.0)
    } else {
        (33.0, 102.0, 172.0)
    };
    let a = t.abs();
    let mix = |c: f64| (255.0 + (c - 255.0) * a).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(r), mix(g), mix(b))
}

const ABSENT_FILL: &str = "#bdbdbd";

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Self-contained SVG heatmap. Absent cells are grey with a dash.
pub fn render_heatmap_svg(m: &NeutralizationMatrix, title: &str) -> String {
    let cell = 28.0;
    let left = 110.0;
    let top = 100.0;
    let width = left + cell * m.col_labels.len() as f64 + 20.0;
    let height = top + cell * m.row_labels.len() as f64 + 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" font-size="14">{}</text>"#,
        left,
        escape_xml(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="4" y="{}" font-size="10">neutralizer \ target</text>"#,
        top - 6.0
    );
    for (j, label) in m.col_labels.iter().enumerate() {
        let x = left + cell * (j as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" font-size="10" transform="rotate(-60 {x} {})">{}</text>"#,
            top - 4.0,
            top - 4.0,
            escape_xml(label)
        );
    }
    for (i, (label, row)) in m.row_labels.iter().zip(&m.cells).enumerate() {
        let y = top + cell * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#,
            left - 4.0,
            y + cell * 0.65,
            escape_xml(label)
        );
        for (j, value) in row.iter().enumerate() {
            let x = left + cell * j as f64;
            let (fill, text) = match value {
                Some(v) => (cell_color(*v), percent_label(*v)),
                None => (ABSENT_FILL.to_owned(), "–".to_owned()),
            };
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="#ffffff"/><text x="{}" y="{}" font-size="8" text-anchor="middle">{text}</text>"##,
                x + cell / 2.0,
                y + cell * 0.62
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{}" font-size="10">relative change in accuracy (%), colour clipped at ±100%, grey = absent</text>"#,
        height - 12.0
    );
    s.push_str("</svg>\n");
    s
}

/// One figure in the summary document.
#[derive(Debug, Clone)]
pub struct ReportFigure {
    /// Section the figure belongs to (experiment kind).
    pub section: String,
    /// Panel caption, e.g. the treebank.
    pub caption: String,
    pub csv_path: String,
    pub matrix: NeutralizationMatrix,
}

/// Static HTML summary: one section per experiment kind, figures laid out
/// side by side as panels, each with its provenance.
pub fn render_report(figures: &[ReportFigure]) -> String {
    let mut html = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Cross-neutralization report</title>\n\
         <style>body{font-family:sans-serif;margin:2em}.row{display:flex;flex-wrap:wrap;gap:2em}\
         .panel{border:1px solid #ddd;padding:1em}dl{font-size:11px}dt{font-weight:bold}</style></head><body>\n\
         <h1>Cross-neutralization report</h1>\n",
    );
    if figures.is_empty() {
        html.push_str("<p>No runs found.</p>\n</body></html>\n");
        return html;
    }
    let mut sections: Vec<&str> = Vec::new();
    for f in figures {
        if !sections.contains(&f.section.as_str()) {
            sections.push(&f.section);
        }
    }
    for section in sections {
        let _ = writeln!(
            html,
            "<h2>{}</h2>\n<div class=\"row\">",
            escape_xml(section)
        );
        for f in figures.iter().filter(|f| f.section == section) {
            let _ = writeln!(
                html,
                "<div class=\"panel\"><h3>{}</h3>",
                escape_xml(&f.caption)
            );
            html.push_str(&render_heatmap_svg(&f.matrix, &f.caption));
            let _ = writeln!(
                html,
                "<dl><dt>source</dt><dd>{}</dd>",
                escape_xml(&f.csv_path)
            );
            for (k, v) in &f.matrix.metadata {
                let _ = writeln!(html, "<dt>{}</dt><dd>{}</dd>", escape_xml(k), escape_xml(v));
            }
            html.push_str("</dl></div>\n");
        }
        html.push_str("</div>\n");
    }
    html.push_str("</body></html>\n");
    html
}
