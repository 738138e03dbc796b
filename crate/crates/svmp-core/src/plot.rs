//! Static SVG emission for convergence curves: log10 x-axis, linear
//! y-axis, one polyline per curve with a legend. Output is a pure function
//! of the input, byte for byte.

use std::io::Write;

use crate::error::{Error, Result};

const WIDTH: f64 = 880.0;
const HEIGHT: f64 = 520.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 200.0;
const MARGIN_TOP: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 52.0;

const COLORS: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// One labeled series; x values must be positive (log axis), y values past
/// the first non-finite one are treated as a divergence tail. `diverged`
/// forces the divergence marker for runs that were halted at a still-finite
/// bound value.
#[derive(Clone, Debug)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub diverged: bool,
}

impl Curve {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points, diverged: false }
    }

    pub fn flagged(label: impl Into<String>, points: Vec<(f64, f64)>, diverged: bool) -> Self {
        Self { label: label.into(), points, diverged }
    }
}

/// Convergence-curve plot: x is the ratings-accessed counter, y the bound.
pub fn emit_svg_plot(curves: &[Curve], sink: impl Write) -> Result<()> {
    emit_svg_plot_labeled(curves, "ratings accessed", "ELBO (nats)", sink)
}

pub fn emit_svg_plot_labeled(
    curves: &[Curve],
    x_label: &str,
    y_label: &str,
    mut sink: impl Write,
) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::Plot("no curves to draw".to_string()));
    }

    // Visible prefix of each curve: up to the first non-finite y.
    struct Prepared<'a> {
        label: &'a str,
        visible: &'a [(f64, f64)],
        marked: bool,
    }
    let mut prepared = Vec::with_capacity(curves.len());
    for curve in curves {
        if curve.points.is_empty() {
            return Err(Error::Plot(format!("curve `{}` has no points", curve.label)));
        }
        for &(x, _) in &curve.points {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::Plot(format!(
                    "curve `{}` has non-positive x value {x}",
                    curve.label
                )));
            }
        }
        let finite_len = curve
            .points
            .iter()
            .position(|&(_, y)| !y.is_finite())
            .unwrap_or(curve.points.len());
        if finite_len == 0 {
            return Err(Error::Plot(format!("curve `{}` has no finite points", curve.label)));
        }
        prepared.push(Prepared {
            label: &curve.label,
            visible: &curve.points[..finite_len],
            marked: curve.diverged || finite_len < curve.points.len(),
        });
    }

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for p in &prepared {
        for &(x, y) in p.visible {
            let lx = x.log10();
            x_min = x_min.min(lx);
            x_max = x_max.max(lx);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if x_max - x_min < 1e-9 {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if y_max - y_min < 1e-9 {
        y_min -= 1.0;
        y_max += 1.0;
    }
    let y_pad = 0.05 * (y_max - y_min);
    y_min -= y_pad;
    y_max += y_pad;

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x.log10() - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (y_max - y) / (y_max - y_min) * plot_h;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg version=\"1.1\" xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // Axes.
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    out.push_str(&format!(
        "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\" stroke=\"black\"/>\n"
    ));
    out.push_str(&format!(
        "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{y1:.2}\" stroke=\"black\"/>\n"
    ));

    // Decade ticks on the log x-axis.
    let first_decade = x_min.ceil() as i64;
    let last_decade = x_max.floor() as i64;
    for d in first_decade..=last_decade {
        let x = MARGIN_LEFT + (d as f64 - x_min) / (x_max - x_min) * plot_w;
        out.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{y0:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#cccccc\"/>\n",
            y1
        ));
        out.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">1e{d}</text>\n",
            y0 + 18.0
        ));
    }

    // Evenly spaced y ticks.
    let y_ticks = 6;
    for i in 0..=y_ticks {
        let value = y_min + (y_max - y_min) * i as f64 / y_ticks as f64;
        let y = sy(value);
        out.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{x0:.2}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
            x0 - 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">{value:.4e}</text>\n",
            x0 - 8.0,
            y + 4.0
        ));
    }

    // Axis labels.
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{} (log scale)</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 {:.2})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    ));

    // Curves and legend.
    for (i, p) in prepared.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = p
            .visible
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        if p.marked {
            let &(x, y) = p.visible.last().expect("non-empty visible prefix");
            let (cx, cy) = (sx(x), sy(y));
            out.push_str(&format!(
                "<path d=\"M {:.2} {:.2} L {:.2} {:.2} M {:.2} {:.2} L {:.2} {:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                cx - 5.0,
                cy - 5.0,
                cx + 5.0,
                cy + 5.0,
                cx - 5.0,
                cy + 5.0,
                cx + 5.0,
                cy - 5.0
            ));
        }

        let ly = MARGIN_TOP + 16.0 + 20.0 * i as f64;
        out.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"14\" height=\"14\" fill=\"{color}\"/>\n",
            x1 + 12.0,
            ly - 11.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{ly:.2}\" font-family=\"sans-serif\" font-size=\"12\">{}{}</text>\n",
            x1 + 32.0,
            escape(p.label),
            if p.marked { " (diverged)" } else { "" }
        ));
    }

    out.push_str("</svg>\n");
    sink.write_all(out.as_bytes())?;
    Ok(())
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn render(curves: &[Curve]) -> String {
        let mut buf = Vec::new();
        emit_svg_plot(curves, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn two_point_curve_has_exactly_one_polyline() {
        let svg = render(&[Curve::new("run", vec![(10.0, -5.0), (100.0, -4.0)])]);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains(">run<"));
    }

    #[test]
    fn nan_tail_truncates_and_marks() {
        let svg = render(&[Curve::new(
            "diverging",
            vec![(10.0, -5.0), (100.0, -6.0), (1000.0, f64::NAN), (10000.0, f64::NAN)],
        )]);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("(diverged)"));
        // Cross marker drawn as a path.
        assert!(svg.contains("<path d=\"M "));
        // Only the two finite points make it into the polyline.
        let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(points.split(' ').count(), 2);
    }

    #[test]
    fn divergence_flag_marks_finite_curves() {
        let mut buf = Vec::new();
        emit_svg_plot(
            &[Curve::flagged("halted", vec![(10.0, -5.0), (100.0, -900.0)], true)],
            &mut buf,
        )
        .unwrap();
        let svg = String::from_utf8(buf).unwrap();
        assert!(svg.contains("(diverged)"));
        assert!(svg.contains("<path d=\"M "));
        // Both points stay visible; only the marker is added.
        let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(points.split(' ').count(), 2);
    }

    #[test]
    fn output_is_deterministic() {
        let curves = vec![
            Curve::new("a", vec![(1.0, 0.0), (10.0, 1.0), (100.0, 0.5)]),
            Curve::new("b", vec![(2.0, -1.0), (20.0, -0.5)]),
        ];
        assert_eq!(render(&curves), render(&curves));
    }

    #[test]
    fn rejects_empty_and_non_positive_input() {
        let mut buf = Vec::new();
        assert!(matches!(emit_svg_plot(&[], &mut buf), Err(Error::Plot(_))));
        assert!(matches!(
            emit_svg_plot(&[Curve::new("empty", vec![])], &mut buf),
            Err(Error::Plot(_))
        ));
        assert!(matches!(
            emit_svg_plot(&[Curve::new("zero-x", vec![(0.0, 1.0)])], &mut buf),
            Err(Error::Plot(_))
        ));
        assert!(matches!(
            emit_svg_plot(&[Curve::new("neg-x", vec![(-1.0, 1.0)])], &mut buf),
            Err(Error::Plot(_))
        ));
        assert!(matches!(
            emit_svg_plot(&[Curve::new("all-nan", vec![(1.0, f64::NAN)])], &mut buf),
            Err(Error::Plot(_))
        ));
    }

    #[test]
    fn escapes_labels() {
        let svg = render(&[Curve::new("a<b&c", vec![(1.0, 0.0), (2.0, 1.0)])]);
        assert!(svg.contains("a&lt;b&amp;c"));
    }
}
