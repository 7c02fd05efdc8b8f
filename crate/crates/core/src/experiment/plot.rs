//! Minimal self-contained SVG bar charts for the metric reports.

use crate::error::Result;
use std::fmt::Write as _;
use std::path::Path;

/// Write a labeled bar chart as a standalone SVG file. Output bytes are a
/// pure function of the inputs.
pub fn write_bar_chart_svg(
    path: &Path,
    title: &str,
    labels: &[&str],
    values: &[f64],
) -> Result<()> {
    assert_eq!(labels.len(), values.len(), "one label per value");
    let n = values.len().max(1);
    let bar_w = 60.0;
    let gap = 20.0;
    let chart_h = 220.0;
    let width = 60.0 + n as f64 * (bar_w + gap);
    let height = chart_h + 90.0;
    let vmax = values.iter().copied().fold(f64::MIN, f64::max).max(1e-12);
    let vmin = values.iter().copied().fold(f64::MAX, f64::min).min(0.0);
    let span = (vmax - vmin).max(1e-12);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.0}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>"#,
        width / 2.0
    );
    let base_y = 40.0 + chart_h;
    let _ = writeln!(
        s,
        r#"<line x1="40" y1="{base_y:.1}" x2="{:.1}" y2="{base_y:.1}" stroke="black"/>"#,
        width - 10.0
    );
    for (i, (&v, label)) in values.iter().zip(labels).enumerate() {
        let h = (v - vmin) / span * chart_h;
        let x = 50.0 + i as f64 * (bar_w + gap);
        let y = base_y - h;
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{bar_w:.1}" height="{h:.1}" fill="#4878a8"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{v:.3}</text>"#,
            x + bar_w / 2.0,
            y - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{label}</text>"#,
            x + bar_w / 2.0,
            base_y + 16.0
        );
    }
    s.push_str("</svg>\n");
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_bytes_are_deterministic_and_well_formed() {
        let tmp = tempfile::tempdir().unwrap();
        let p1 = tmp.path().join("a.svg");
        let p2 = tmp.path().join("b.svg");
        let labels = ["one", "two", "three"];
        let values = [1.0, 2.5, 0.5];
        write_bar_chart_svg(&p1, "Test", &labels, &values).unwrap();
        write_bar_chart_svg(&p2, "Test", &labels, &values).unwrap();
        let a = std::fs::read(&p1).unwrap();
        let b = std::fs::read(&p2).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.trim_end().ends_with("</svg>"));
        assert_eq!(text.matches("<rect").count(), 3);
    }
}
