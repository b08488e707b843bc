//! Grouped per-class bar charts as plain SVG.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChartError {
    #[error("chart needs at least one series")]
    NoSeries,
    #[error("chart needs at least one class")]
    NoClasses,
    #[error("{what} has {got} entries, expected {expected}")]
    Inconsistent {
        what: String,
        got: usize,
        expected: usize,
    },
    #[error("series `{series}`, class `{class}`: value {value} outside [0, {max}]")]
    OutOfRange {
        series: String,
        class: String,
        value: f64,
        max: f64,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartSeries {
    pub label: String,
    /// One value per class; `None` draws no bar.
    pub values: Vec<Option<f64>>,
    pub errors: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartSpec {
    pub title: String,
    pub classes: Vec<String>,
    /// Ground-truth count per class; bars are laid out by descending count.
    pub counts: Vec<usize>,
    pub series: Vec<ChartSeries>,
    /// Axis runs 0..100 instead of 0..1; values are in axis units.
    pub percent: bool,
    /// Free text stored in the SVG `<desc>` element (e.g. the run config).
    pub description: Option<String>,
}

impl ChartSpec {
    fn axis_max(&self) -> f64 {
        if self.percent {
            100.0
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<(), ChartError> {
        if self.series.is_empty() {
            return Err(ChartError::NoSeries);
        }
        let n = self.classes.len();
        if n == 0 {
            return Err(ChartError::NoClasses);
        }
        let check = |what: String, got: usize| {
            if got == n {
                Ok(())
            } else {
                Err(ChartError::Inconsistent { what, got, expected: n })
            }
        };
        check("counts".into(), self.counts.len())?;
        let max = self.axis_max();
        for s in &self.series {
            check(format!("series `{}`", s.label), s.values.len())?;
            if let Some(e) = &s.errors {
                check(format!("error bars of `{}`", s.label), e.len())?;
            }
            for (c, v) in self.classes.iter().zip(&s.values) {
                if let Some(v) = *v {
                    if !(0.0..=max).contains(&v) {
                        return Err(ChartError::OutOfRange {
                            series: s.label.clone(),
                            class: c.clone(),
                            value: v,
                            max,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Class indices by descending count, original order on ties.
    pub fn class_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.classes.len()).collect();
        order.sort_by(|&a, &b| self.counts[b].cmp(&self.counts[a]));
        order
    }
}

const PALETTE: [&str; 8] = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c",
];

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Renders the chart to an SVG document. Output depends only on the spec.
pub fn render_svg(spec: &ChartSpec) -> Result<String, ChartError> {
    spec.validate()?;
    let order = spec.class_order();
    let n_series = spec.series.len() as f64;
    let bar_w = 14.0;
    let group_w = bar_w * n_series + 16.0;
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 90.0);
    let plot_h = 300.0;
    let plot_w = group_w * order.len() as f64;
    let legend_h = 18.0 * n_series;
    let width = left + plot_w + right;
    let height = top + plot_h + bottom + legend_h;
    let max = spec.axis_max();
    let y_of = |v: f64| top + plot_h * (1.0 - v / max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(&spec.title));
    if let Some(d) = &spec.description {
        let _ = writeln!(s, "<desc>{}</desc>", escape(d));
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        left + plot_w / 2.0,
        escape(&spec.title)
    );

    let _ = writeln!(s, r#"<g class="axis">"#);
    for k in 0..=5 {
        let v = max * f64::from(k) / 5.0;
        let y = y_of(v);
        let label = if spec.percent { format!("{v:.0}") } else { format!("{v:.1}") };
        let _ = writeln!(
            s,
            r##"<line x1="{left:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            left + plot_w
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
            left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left:.2}" y1="{top:.2}" x2="{left:.2}" y2="{:.2}" stroke="black"/>"#,
        top + plot_h
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/>"#,
        left + plot_w,
        y = top + plot_h
    );
    let _ = writeln!(s, "</g>");

    for (slot, &c) in order.iter().enumerate() {
        let gx = left + group_w * slot as f64 + 8.0;
        let class = escape(&spec.classes[c]);
        let _ = writeln!(s, r#"<g class="group" data-class="{class}">"#);
        for (si, series) in spec.series.iter().enumerate() {
            let Some(v) = series.values[c] else { continue };
            let x = gx + bar_w * si as f64;
            let y = y_of(v);
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-series="{}" x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{:.2}" fill="{}"/>"#,
                escape(&series.label),
                top + plot_h - y,
                PALETTE[si % PALETTE.len()]
            );
            if let Some(e) = series.errors.as_ref().map(|e| e[c]) {
                let cx = x + bar_w / 2.0;
                let _ = writeln!(
                    s,
                    r#"<line class="error-bar" x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                    y_of((v - e).max(0.0)),
                    y_of((v + e).min(max))
                );
            }
        }
        let lx = gx + bar_w * n_series / 2.0;
        let ly = top + plot_h + 14.0;
        let _ = writeln!(
            s,
            r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="end" transform="rotate(-45 {lx:.2} {ly:.2})">{class}</text>"#
        );
        let _ = writeln!(s, "</g>");
    }

    let _ = writeln!(s, r#"<g class="legend">"#);
    for (si, series) in spec.series.iter().enumerate() {
        let y = top + plot_h + bottom + 18.0 * si as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{left:.2}" y="{:.2}" width="12" height="12" fill="{}"/>"#,
            y - 10.0,
            PALETTE[si % PALETTE.len()]
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{y:.2}">{}</text>"#,
            left + 18.0,
            escape(&series.label)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_chart(spec: &ChartSpec, path: &Path) -> Result<(), ChartError> {
    let svg = render_svg(spec)?;
    std::fs::write(path, svg).map_err(|source| ChartError::Io {
        path: path.display().to_string(),
        source,
    })
}
