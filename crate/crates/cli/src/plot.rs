//! Minimal static SVG line charts: vertically stacked panels sharing the time axis.

use std::fmt::Write as _;

const WIDTH: f64 = 900.0;
const PANEL_HEIGHT: f64 = 170.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 40.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series<'a> {
    pub label: &'a str,
    pub values: Vec<f64>,
}

pub struct Panel<'a> {
    pub title: &'a str,
    pub series: Vec<Series<'a>>,
    /// Horizontal reference line (e.g. a safety threshold).
    pub threshold: Option<f64>,
}

fn range(panel: &Panel) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in panel.series.iter().flat_map(|s| s.values.iter()).chain(panel.threshold.iter()) {
        if v.is_finite() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1e-3) * 0.1;
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub fn render(title: &str, time: &[f64], panels: &[Panel]) -> String {
    let height = MARGIN_TOP + panels.len() as f64 * (PANEL_HEIGHT + MARGIN_BOTTOM);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    );
    let t0 = time.first().copied().unwrap_or(0.0);
    let t1 = time.last().copied().unwrap_or(1.0).max(t0 + 1e-9);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    for (i, panel) in panels.iter().enumerate() {
        let top = MARGIN_TOP + i as f64 * (PANEL_HEIGHT + MARGIN_BOTTOM);
        let (lo, hi) = range(panel);
        let px = |t: f64| MARGIN_LEFT + (t - t0) / (t1 - t0) * plot_w;
        let py = |v: f64| top + PANEL_HEIGHT - (v - lo) / (hi - lo) * PANEL_HEIGHT;
        let _ = writeln!(
            svg,
            "<rect x=\"{MARGIN_LEFT}\" y=\"{top}\" width=\"{plot_w}\" height=\"{PANEL_HEIGHT}\" fill=\"none\" stroke=\"#444\"/>"
        );
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\">{}</text>", MARGIN_LEFT + 6.0, top + 14.0, escape(panel.title));
        for (v, anchor) in [(hi, top + 10.0), (lo, top + PANEL_HEIGHT)] {
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{anchor}\" text-anchor=\"end\">{}</text>",
                MARGIN_LEFT - 6.0,
                format_tick(v)
            );
        }
        let axis_y = top + PANEL_HEIGHT + 16.0;
        for (t, anchor) in [(t0, "start"), (t1, "end")] {
            let _ = writeln!(svg, "<text x=\"{}\" y=\"{axis_y}\" text-anchor=\"{anchor}\">{} s</text>", px(t), format_tick(t));
        }
        if let Some(th) = panel.threshold {
            let y = py(th);
            let _ = writeln!(
                svg,
                "<line x1=\"{MARGIN_LEFT}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#888\" stroke-dasharray=\"6,4\"/>",
                MARGIN_LEFT + plot_w
            );
        }
        for (k, series) in panel.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let mut path = String::new();
            let mut pen_down = false;
            for (t, v) in time.iter().zip(&series.values) {
                if !v.is_finite() {
                    pen_down = false;
                    continue;
                }
                let _ = write!(path, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, px(*t), py(*v));
                pen_down = true;
            }
            if !path.is_empty() {
                let _ = writeln!(svg, "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.3\"/>", path.trim_end());
            }
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" fill=\"{color}\">{}</text>",
                MARGIN_LEFT + plot_w - 6.0,
                top + 14.0 + 14.0 * k as f64,
                escape(series.label)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_all_panels_and_skips_non_finite_values() {
        let time = [0.0, 0.5, 1.0];
        let panels = [
            Panel { title: "a", series: vec![Series { label: "x", values: vec![0.0, 1.0, 2.0] }], threshold: Some(0.5) },
            Panel {
                title: "b",
                series: vec![Series { label: "y", values: vec![f64::INFINITY, f64::INFINITY, f64::INFINITY] }],
                threshold: None,
            },
        ];
        let svg = render("t", &time, &panels);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<path").count(), 1);
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
