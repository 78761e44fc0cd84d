//! Static SVG line charts: one mean polyline and one shaded band per curve.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::aggregate::AggregatedCurve;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossAxis {
    Mse,
    SoftmaxXent,
}

impl LossAxis {
    pub fn label(self) -> &'static str {
        match self {
            LossAxis::Mse => "Mean Squared Error (MSE)",
            LossAxis::SoftmaxXent => "Softmax Cross Entropy",
        }
    }
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = [
    "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Picks a tick step of 1, 2 or 5 times a power of ten giving about `target` ticks.
fn nice_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let m = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    };
    format!("{v:.decimals$}")
}

pub fn render_svg(curves: &[(String, AggregatedCurve)], axis: LossAxis, title: &str) -> String {
    let x_max = curves
        .iter()
        .filter_map(|(_, c)| c.iterations.last().copied())
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let y_top = curves
        .iter()
        .flat_map(|(_, c)| c.hi.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let y_max = if y_top > 0.0 { y_top * 1.05 } else { 1.0 };
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + x / x_max * plot_w;
    let py = |y: f64| TOP + plot_h - y.clamp(0.0, y_max) / y_max * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );

    let x_step = nice_step(x_max, 5.0);
    let mut x = 0.0;
    while x <= x_max + 1e-9 {
        let _ = writeln!(
            s,
            r##"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="#dddddd"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle">{4}</text>"##,
            px(x),
            TOP,
            TOP + plot_h,
            TOP + plot_h + 16.0,
            fmt_tick(x, x_step)
        );
        x += x_step;
    }
    let y_step = nice_step(y_max, 5.0);
    let mut y = 0.0;
    while y <= y_max + 1e-12 {
        let _ = writeln!(
            s,
            r##"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="#dddddd"/><text x="{3:.2}" y="{4:.2}" text-anchor="end">{5}</text>"##,
            LEFT,
            py(y),
            LEFT + plot_w,
            LEFT - 6.0,
            py(y) + 4.0,
            fmt_tick(y, y_step)
        );
        y += y_step;
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iterations</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{0:.2}" text-anchor="middle" transform="rotate(-90 20 {0:.2})">{1}</text>"#,
        TOP + plot_h / 2.0,
        axis.label()
    );

    for (k, (label, c)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut band = String::new();
        for (i, &it) in c.iterations.iter().enumerate() {
            let _ = write!(band, "{:.2},{:.2} ", px(it as f64), py(c.hi[i]));
        }
        for (i, &it) in c.iterations.iter().enumerate().rev() {
            let _ = write!(band, "{:.2},{:.2} ", px(it as f64), py(c.lo[i]));
        }
        let _ = writeln!(
            s,
            r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.trim_end()
        );
        let mut line = String::new();
        for (i, &it) in c.iterations.iter().enumerate() {
            let _ = write!(line, "{:.2},{:.2} ", px(it as f64), py(c.mean[i]));
        }
        let _ = writeln!(
            s,
            r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.trim_end()
        );
        let ly = TOP + 18.0 + 18.0 * k as f64;
        let lx = LEFT + plot_w - 160.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_svg(
    curves: &[(String, AggregatedCurve)],
    axis: LossAxis,
    title: &str,
    path: &Path,
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, render_svg(curves, axis, title)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(scale: f64) -> AggregatedCurve {
        AggregatedCurve {
            iterations: (1..=50).collect(),
            mean: (1..=50).map(|i| scale / i as f64).collect(),
            lo: (1..=50).map(|i| 0.8 * scale / i as f64).collect(),
            hi: (1..=50).map(|i| 1.2 * scale / i as f64).collect(),
            n_seeds: 3,
        }
    }

    #[test]
    fn two_curves_give_two_lines_and_two_bands() {
        let svg = render_svg(
            &[("chrono".into(), curve(0.2)), ("const".into(), curve(0.3))],
            LossAxis::Mse,
            "adding-50",
        );
        assert_eq!(svg.matches("<polyline class=\"mean\"").count(), 2);
        assert_eq!(svg.matches("<polygon class=\"band\"").count(), 2);
        assert!(svg.contains("Mean Squared Error (MSE)"));
        assert!(svg.contains(">iterations<"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn rendering_is_deterministic_and_escapes_labels() {
        let curves = [("a<b".to_string(), curve(2.3))];
        let a = render_svg(&curves, LossAxis::SoftmaxXent, "copy & paste");
        assert_eq!(
            a,
            render_svg(&curves, LossAxis::SoftmaxXent, "copy & paste")
        );
        assert!(a.contains("a&lt;b") && a.contains("copy &amp; paste"));
        assert!(a.contains("Softmax Cross Entropy"));
    }

    #[test]
    fn empty_input_still_renders_axes() {
        let svg = render_svg(&[], LossAxis::Mse, "empty");
        assert_eq!(svg.matches("<polyline").count(), 0);
        assert!(svg.contains("<svg"));
    }

    #[test]
    fn tick_steps() {
        assert_eq!(nice_step(5000.0, 5.0), 1000.0);
        assert_eq!(nice_step(2.4, 5.0), 0.5);
        assert_eq!(fmt_tick(0.5, 0.5), "0.5");
        assert_eq!(fmt_tick(2000.0, 1000.0), "2000");
    }
}
