//! Static SVG line charts of result files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::config::Method;
use crate::error::{SimError, SimResult};
use crate::results::ResultRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn color(m: Method) -> &'static str {
    match m {
        Method::UpperBound => "#1f77b4",
        Method::Hcl => "#d62728",
        Method::Naive => "#2ca02c",
        Method::Random => "#7f7f7f",
    }
}

/// Numeric result columns that can be plotted.
pub const METRICS: [&str; 9] = [
    "mean_sum_rate",
    "mean_crlb_theta",
    "sqrt_crlb_theta",
    "mean_crlb_dist",
    "sqrt_crlb_dist",
    "violation_rate_theta",
    "violation_rate_dist",
    "mean_power_w",
    "train_seconds",
];

fn metric_value(r: &ResultRow, metric: &str) -> Option<f64> {
    Some(match metric {
        "mean_sum_rate" => r.mean_sum_rate,
        "mean_crlb_theta" => r.mean_crlb_theta,
        "sqrt_crlb_theta" => r.sqrt_crlb_theta,
        "mean_crlb_dist" => r.mean_crlb_dist,
        "sqrt_crlb_dist" => r.sqrt_crlb_dist,
        "violation_rate_theta" => r.violation_rate_theta,
        "violation_rate_dist" => r.violation_rate_dist,
        "mean_power_w" => r.mean_power_w,
        "train_seconds" => r.train_seconds,
        _ => return None,
    })
}

/// Seed-averaged series per method, sorted by axis value.
pub type Series = BTreeMap<Method, Vec<(f64, f64)>>;

pub fn series(rows: &[ResultRow], axis: &str, metric: &str, methods: &[Method]) -> SimResult<Series> {
    if methods.is_empty() {
        return Err(SimError::Schema("no methods selected for plotting".into()));
    }
    if !METRICS.contains(&metric) {
        return Err(SimError::Schema(format!("unknown metric column {metric:?}")));
    }
    let mut acc: BTreeMap<Method, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.axis_name == axis) {
        let Some(m) = r.method() else { continue };
        if !methods.contains(&m) {
            continue;
        }
        let v = metric_value(r, metric).expect("metric checked");
        // Keyed by bit pattern so identical axis values group together.
        let key = r.axis_value.to_bits();
        let e = acc.entry(m).or_default().entry(key).or_insert((r.axis_value, 0.0, 0));
        e.1 += v;
        e.2 += 1;
    }
    if acc.is_empty() {
        return Err(SimError::Schema(format!("no rows for axis {axis:?} and the selected methods")));
    }
    Ok(acc
        .into_iter()
        .map(|(m, pts)| {
            let mut v: Vec<(f64, f64)> = pts.into_values().map(|(x, s, n)| (x, s / n as f64)).collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            (m, v)
        })
        .collect())
}

struct Scale {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Scale {
    fn new(values: impl Iterator<Item = f64> + Clone, log: bool) -> SimResult<Self> {
        let t = |v: f64| if log { v.log10() } else { v };
        if log && values.clone().any(|v| v <= 0.0) {
            return Err(SimError::Schema("log scale needs positive values".into()));
        }
        let lo = values.clone().map(t).fold(f64::INFINITY, f64::min);
        let hi = values.map(t).fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if log {
            (lo.floor(), hi.ceil().max(lo.floor() + 1.0))
        } else if hi - lo < 1e-12 * hi.abs().max(1.0) {
            (lo - 0.5 * lo.abs().max(1.0), hi + 0.5 * hi.abs().max(1.0))
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        };
        Ok(Self { lo, hi, log })
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let step = ((self.hi - self.lo) / 8.0).ceil().max(1.0);
            let mut out = Vec::new();
            let mut e = self.lo;
            while e <= self.hi + 1e-9 {
                out.push(10f64.powf(e));
                e += step;
            }
            out
        } else {
            (0..=4).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0).collect()
        }
    }
}

fn label(v: f64, log: bool) -> String {
    if log {
        return format!("1e{}", v.log10().round() as i64);
    }
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".to_string() } else { s.to_string() }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of `metric` against `axis`, one polyline per method.
pub fn plot_svg(rows: &[ResultRow], axis: &str, metric: &str, log_y: bool, methods: &[Method]) -> SimResult<String> {
    let s = series(rows, axis, metric, methods)?;
    let xs = s.values().flatten().map(|p| p.0);
    let ys = s.values().flatten().map(|p| p.1);
    let x_log = xs.clone().all(|x| x > 0.0)
        && xs.clone().fold(f64::NEG_INFINITY, f64::max) / xs.clone().fold(f64::INFINITY, f64::min) >= 100.0;
    let sx = Scale::new(xs, x_log)?;
    let sy = Scale::new(ys, log_y)?;
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + pw * sx.unit(x);
    let py = |y: f64| TOP + ph * (1.0 - sy.unit(y));

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in sy.ticks() {
        let y = py(t);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            label(t, sy.log)
        );
    }
    for t in sx.ticks() {
        let x = px(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#dddddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 16.0,
            label(t, sx.log)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(axis)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(metric)
    );
    for (i, (m, pts)) in s.iter().enumerate() {
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline data-method="{m}" fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            color(*m),
            path.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
                px(x),
                py(y),
                color(*m)
            );
        }
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{m}</text>"#,
            lx + 20.0,
            color(*m),
            lx + 26.0,
            ly + 4.0
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// `points` attribute of each polyline, in document order.
pub fn polylines(svg: &str) -> Vec<(String, Vec<(f64, f64)>)> {
    svg.lines()
        .filter(|l| l.starts_with("<polyline"))
        .map(|l| {
            let attr = |name: &str| {
                let key = format!("{name}=\"");
                let start = l.find(&key).expect("attribute present") + key.len();
                let end = start + l[start..].find('"').expect("closing quote");
                l[start..end].to_string()
            };
            let pts = attr("points")
                .split_whitespace()
                .map(|p| {
                    let (x, y) = p.split_once(',').expect("x,y pair");
                    (x.parse().expect("x"), y.parse().expect("y"))
                })
                .collect();
            (attr("data-method"), pts)
        })
        .collect()
}
