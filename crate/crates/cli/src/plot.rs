//! Minimal deterministic SVG line plots.
//!
//! Hand-rolled so that identical inputs produce byte-identical files; only
//! what the reports need: polylines, vertical/horizontal markers, axes with
//! round ticks, and a legend.

use std::fmt::Write;

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Marker {
    pub at: f64,
    pub label: String,
    pub dashed: bool,
}

pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub vlines: Vec<Marker>,
    pub hlines: Vec<Marker>,
    pub width: f64,
    pub height: f64,
}

impl LinePlot {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            x_label: String::new(),
            y_label: String::new(),
            series: Vec::new(),
            vlines: Vec::new(),
            hlines: Vec::new(),
            width: 860.0,
            height: 300.0,
        }
    }

    pub fn line(mut self, label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series {
            label: label.into(),
            points,
        });
        self
    }

    pub fn vline(mut self, at: f64, label: impl Into<String>, dashed: bool) -> Self {
        self.vlines.push(Marker {
            at,
            label: label.into(),
            dashed,
        });
        self
    }

    pub fn hline(mut self, at: f64, label: impl Into<String>) -> Self {
        self.hlines.push(Marker {
            at,
            label: label.into(),
            dashed: true,
        });
        self
    }

    pub fn labels(mut self, x: impl Into<String>, y: impl Into<String>) -> Self {
        self.x_label = x.into();
        self.y_label = y.into();
        self
    }

    fn ranges(&self) -> ((f64, f64), (f64, f64)) {
        let mut xmin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for s in &self.series {
            for &(x, y) in &s.points {
                xmin = xmin.min(x);
                xmax = xmax.max(x);
                ymin = ymin.min(y);
                ymax = ymax.max(y);
            }
        }
        for m in &self.vlines {
            xmin = xmin.min(m.at);
            xmax = xmax.max(m.at);
        }
        for m in &self.hlines {
            ymin = ymin.min(m.at);
            ymax = ymax.max(m.at);
        }
        if !xmin.is_finite() {
            (xmin, xmax) = (0.0, 1.0);
        }
        if !ymin.is_finite() {
            (ymin, ymax) = (0.0, 1.0);
        }
        if (xmax - xmin).abs() < 1e-12 {
            xmax = xmin + 1.0;
        }
        if (ymax - ymin).abs() < 1e-12 {
            ymax = ymin + 1.0;
        }
        let pad = (ymax - ymin) * 0.06;
        ((xmin, xmax), (ymin - pad, ymax + pad))
    }

    /// Render the plot body translated to `(0, y_off)`.
    fn render_into(&self, out: &mut String, y_off: f64) {
        let ml = 62.0;
        let mr = 150.0;
        let mt = 34.0;
        let mb = 42.0;
        let pw = self.width - ml - mr;
        let ph = self.height - mt - mb;
        let ((xmin, xmax), (ymin, ymax)) = self.ranges();
        let fx = |x: f64| ml + (x - xmin) / (xmax - xmin) * pw;
        let fy = |y: f64| mt + ph - (y - ymin) / (ymax - ymin) * ph;

        let _ = write!(out, r#"<g transform="translate(0,{y_off:.1})">"#);
        let _ = write!(
            out,
            r#"<rect x="{ml}" y="{mt}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#999"/>"#
        );
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="20" font-size="14" text-anchor="middle" font-family="sans-serif">{}</text>"#,
            ml + pw / 2.0,
            escape(&self.title)
        );

        for (value, screen, vertical) in tick_values(xmin, xmax)
            .into_iter()
            .map(|v| (v, fx(v), true))
            .chain(tick_values(ymin, ymax).into_iter().map(|v| (v, fy(v), false)))
        {
            if vertical {
                let _ = write!(
                    out,
                    r#"<line x1="{screen:.1}" y1="{:.1}" x2="{screen:.1}" y2="{:.1}" stroke="#ccc" stroke-width="0.5"/><text x="{screen:.1}" y="{:.1}" font-size="10" text-anchor="middle" font-family="sans-serif">{}</text>"#,
                    mt,
                    mt + ph,
                    mt + ph + 14.0,
                    fmt_tick(value)
                );
            } else {
                let _ = write!(
                    out,
                    r#"<line x1="{ml}" y1="{screen:.1}" x2="{:.1}" y2="{screen:.1}" stroke="#ccc" stroke-width="0.5"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end" font-family="sans-serif">{}</text>"#,
                    ml + pw,
                    ml - 5.0,
                    screen + 3.0,
                    fmt_tick(value)
                );
            }
        }
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" font-family="sans-serif">{}</text>"#,
            ml + pw / 2.0,
            self.height - 8.0,
            escape(&self.x_label)
        );
        let _ = write!(
            out,
            r#"<text x="14" y="{:.1}" font-size="11" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 14 {:.1})">{}</text>"#,
            mt + ph / 2.0,
            mt + ph / 2.0,
            escape(&self.y_label)
        );

        for (si, s) in self.series.iter().enumerate() {
            let color = COLORS[si % COLORS.len()];
            let mut path = String::new();
            for (i, &(x, y)) in s.points.iter().enumerate() {
                let _ = write!(
                    path,
                    "{}{:.2},{:.2} ",
                    if i == 0 { "M" } else { "L" },
                    fx(x),
                    fy(y)
                );
            }
            let _ = write!(
                out,
                r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.1"/>"#,
                path.trim_end()
            );
            let ly = mt + 14.0 * si as f64 + 8.0;
            let _ = write!(
                out,
                r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="10" font-family="sans-serif">{}</text>"#,
                ml + pw + 8.0,
                ml + pw + 28.0,
                ml + pw + 32.0,
                ly + 3.0,
                escape(&s.label)
            );
        }
        for m in &self.vlines {
            let x = fx(m.at);
            let dash = if m.dashed { r#" stroke-dasharray="5,4""# } else { "" };
            let _ = write!(
                out,
                r#"<line x1="{x:.1}" y1="{mt}" x2="{x:.1}" y2="{:.1}" stroke="#222" stroke-width="1"{dash}/><text x="{:.1}" y="{:.1}" font-size="9" font-family="sans-serif">{}</text>"#,
                mt + ph,
                x + 2.0,
                mt + 10.0,
                escape(&m.label)
            );
        }
        for m in &self.hlines {
            let y = fy(m.at);
            let _ = write!(
                out,
                r#"<line x1="{ml}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#555" stroke-width="1" stroke-dasharray="3,3"/><text x="{:.1}" y="{:.1}" font-size="9" font-family="sans-serif">{}</text>"#,
                ml + pw,
                ml + 4.0,
                y - 3.0,
                escape(&m.label)
            );
        }
        out.push_str("</g>");
    }
}

/// Stack plots vertically into one SVG document.
pub fn render_document(plots: &[LinePlot]) -> String {
    let width = plots.iter().map(|p| p.width).fold(0.0, f64::max).max(100.0);
    let height: f64 = plots.iter().map(|p| p.height).sum::<f64>().max(100.0);
    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    out.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    let mut y = 0.0;
    for p in plots {
        p.render_into(&mut out, y);
        y += p.height;
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if v.abs() >= 1000.0 || (v.fract() == 0.0 && v.abs() < 100000.0) {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

fn tick_values(min: f64, max: f64) -> Vec<f64> {
    let span = max - min;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(mag * 10.0);
    let mut v = (min / step).ceil() * step;
    let mut out = Vec::new();
    while v <= max + 1e-12 {
        out.push(v);
        v += step;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_deterministically() {
        let plot = LinePlot::new("demo")
            .line("a", vec![(0.0, 1.0), (1.0, 2.0), (2.0, 0.5)])
            .vline(1.0, "break", true)
            .hline(1.5, "rho");
        let a = render_document(&[plot]);
        let plot2 = LinePlot::new("demo")
            .line("a", vec![(0.0, 1.0), (1.0, 2.0), (2.0, 0.5)])
            .vline(1.0, "break", true)
            .hline(1.5, "rho");
        let b = render_document(&[plot2]);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.contains("polyline") || a.contains("<path"));
    }

    #[test]
    fn ticks_are_round() {
        let t = tick_values(0.0, 1500.0);
        assert!(t.contains(&500.0));
        assert!(t.len() >= 3 && t.len() <= 8);
    }
}
