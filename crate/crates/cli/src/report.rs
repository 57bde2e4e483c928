//! Static bar-chart rendering (SVG) and matching CSV tables.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Bar geometry: `(x, y, width, height)` per bar, heights proportional to
/// value with the largest value spanning the plot area.
pub fn bar_layout(values: &[f64]) -> Vec<(f64, f64, f64, f64)> {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let max = values.iter().cloned().fold(0.0, f64::max);
    let slot = plot_w / values.len().max(1) as f64;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let h = if max > 0.0 { plot_h * v.max(0.0) / max } else { 0.0 };
            (MARGIN_LEFT + slot * (i as f64 + 0.1), MARGIN_TOP + plot_h - h, slot * 0.8, h)
        })
        .collect()
}

/// Deterministic SVG bar chart. An empty series renders a "no data" note.
pub fn bar_chart_svg(title: &str, bars: &[(String, f64)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let base = HEIGHT - MARGIN_BOTTOM;
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT}" y1="{base}" x2="{:.2}" y2="{base}" stroke="black"/>"#,
        WIDTH - MARGIN_RIGHT
    );
    if bars.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="14" text-anchor="middle">no data</text>"#,
            WIDTH / 2.0,
            HEIGHT / 2.0
        );
    }
    let values: Vec<f64> = bars.iter().map(|b| b.1).collect();
    for ((label, value), (x, y, w, h)) in bars.iter().zip(bar_layout(&values)) {
        let _ = writeln!(
            s,
            r##"<rect class="bar" x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="#4a7ab5"><title>{}: {value:.6}</title></rect>"##,
            escape(label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            x + w / 2.0,
            base + 16.0,
            escape(label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="middle">{value:.3}</text>"#,
            x + w / 2.0,
            y - 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// `label,value` rows with a header.
pub fn bars_csv(header: (&str, &str), bars: &[(String, f64)]) -> String {
    let mut s = format!("{},{}\n", header.0, header.1);
    for (label, v) in bars {
        let label = if label.contains([',', '"', '\n']) { format!("\"{}\"", label.replace('"', "\"\"")) } else { label.clone() };
        let _ = writeln!(s, "{label},{v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_chart_says_no_data() {
        let svg = bar_chart_svg("R", &[]);
        assert!(svg.contains("no data"));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn heights_proportional() {
        let l = bar_layout(&[1.0, 3.0]);
        assert!((l[1].3 / l[0].3 - 3.0).abs() < 1e-12);
        let svg = bar_chart_svg("R", &[("a".into(), 1.0), ("b".into(), 3.0)]);
        assert_eq!(svg.matches(r#"class="bar""#).count(), 2);
        assert_eq!(svg, bar_chart_svg("R", &[("a".into(), 1.0), ("b".into(), 3.0)]));
    }

    #[test]
    fn csv_quotes() {
        assert_eq!(bars_csv(("c", "v"), &[("a,b".into(), 0.5)]), "c,v\n\"a,b\",0.5\n");
    }
}
