//! Minimal SVG output: stacked line panels for per-step curves and bar
//! panels for ablation tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gns_core::{GnsError, Result};

#[derive(clap::Args)]
pub struct Args {
    /// Curves (`step,...`), training log or ablation table (`axis,value,...`) CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output `.svg`, or `.csv` for the plotted series.
    #[arg(long)]
    out: PathBuf,
}

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// A named series of `(x, y)` points or labelled bars.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Figure {
    Lines { x_label: String, series: Vec<Series> },
    Bars { axis: String, labels: Vec<String>, series: Vec<Series> },
}

fn parse_err(path: &Path, line: usize, msg: &str) -> GnsError {
    GnsError::Data(format!("{}:{}: {msg}", path.display(), line + 1))
}

/// Reads a CSV into a figure. Numeric columns after the first become series;
/// rows sharing an x value are averaged.
pub fn read_figure(path: &Path, text: &str) -> Result<Figure> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| parse_err(path, 0, "empty file"))?.split(',').collect();
    let rows: Vec<Vec<&str>> = lines.filter(|l| !l.trim().is_empty()).map(|l| l.split(',').collect()).collect();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != header.len() {
            return Err(parse_err(path, i + 1, &format!("expected {} fields, found {}", header.len(), r.len())));
        }
    }
    if header.first() == Some(&"axis") {
        let labels: Vec<String> = rows.iter().map(|r| r[1].to_string()).collect();
        let mut series = Vec::new();
        for (c, name) in header.iter().enumerate().skip(2) {
            let points = rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    r[c].parse::<f64>()
                        .map(|v| (i as f64, v))
                        .map_err(|_| parse_err(path, i + 1, &format!("non-numeric {name}")))
                })
                .collect::<Result<Vec<_>>>()?;
            series.push(Series {
                name: name.to_string(),
                points,
            });
        }
        let axis = rows.first().map_or(String::new(), |r| r[0].to_string());
        return Ok(Figure::Bars { axis, labels, series });
    }
    let mut series = Vec::new();
    for (c, name) in header.iter().enumerate().skip(1) {
        let mut acc: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
        let mut numeric = true;
        for (i, r) in rows.iter().enumerate() {
            let x: f64 = r[0]
                .parse()
                .map_err(|_| parse_err(path, i + 1, "first column must be numeric"))?;
            if r[c].is_empty() {
                continue;
            }
            match r[c].parse::<f64>() {
                Ok(y) => {
                    let e = acc.entry(x.to_bits()).or_insert((x, 0.0, 0));
                    e.1 += y;
                    e.2 += 1;
                }
                Err(_) => {
                    numeric = false;
                    break;
                }
            }
        }
        if numeric && !acc.is_empty() {
            let mut points: Vec<(f64, f64)> = acc.values().map(|(x, s, n)| (*x, s / *n as f64)).collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            series.push(Series {
                name: name.to_string(),
                points,
            });
        }
    }
    Ok(Figure::Lines {
        x_label: header[0].to_string(),
        series,
    })
}

pub fn figure_csv(fig: &Figure) -> String {
    let mut out = String::new();
    match fig {
        Figure::Bars { axis, labels, series } => {
            out.push_str("axis,value");
            for s in series {
                let _ = write!(out, ",{}", s.name);
            }
            out.push('\n');
            for (i, l) in labels.iter().enumerate() {
                let _ = write!(out, "{axis},{l}");
                for s in series {
                    let _ = write!(out, ",{:e}", s.points[i].1);
                }
                out.push('\n');
            }
        }
        Figure::Lines { x_label, series } => {
            let _ = writeln!(out, "series,{x_label},value");
            for s in series {
                for (x, y) in &s.points {
                    let _ = writeln!(out, "{},{x},{y:e}", s.name);
                }
            }
        }
    }
    out
}

/// Lower and upper plotting bounds, on a log10 scale when every value is positive.
fn range(values: impl Iterator<Item = f64> + Clone, log: bool) -> (f64, f64) {
    let t = |v: f64| if log { v.log10() } else { v };
    let lo = values.clone().map(t).fold(f64::INFINITY, f64::min);
    let hi = values.map(t).fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn panel_frame(out: &mut String, top: f64, title: &str, lo: f64, hi: f64, log: bool) {
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - 20.0, top + 30.0, top + PANEL_HEIGHT - 30.0);
    let _ = writeln!(
        out,
        r#"<text x="{x0}" y="{}" font-size="13">{title}{}</text>"#,
        top + 18.0,
        if log { " (log10)" } else { "" }
    );
    let _ = writeln!(out, r#"<polyline points="{x0},{y0} {x0},{y1} {x1},{y1}" fill="none" stroke="black"/>"#);
    for (v, y) in [(hi, y0), (lo, y1)] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{v:.3}</text>"#,
            x0 - 4.0,
            y + 4.0
        );
    }
}

pub fn render_svg(fig: &Figure) -> String {
    let panels = match fig {
        Figure::Lines { series, .. } | Figure::Bars { series, .. } => series.len().max(1),
    };
    let height = PANEL_HEIGHT * panels as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    match fig {
        Figure::Lines { x_label, series } => {
            for (p, s) in series.iter().enumerate() {
                let top = p as f64 * PANEL_HEIGHT;
                let log = s.points.iter().all(|(_, y)| *y > 0.0);
                let (ylo, yhi) = range(s.points.iter().map(|p| p.1), log);
                let (xlo, xhi) = range(s.points.iter().map(|p| p.0), false);
                panel_frame(&mut out, top, &s.name, ylo, yhi, log);
                let (x0, x1, y0, y1) = (MARGIN, WIDTH - 20.0, top + 30.0, top + PANEL_HEIGHT - 30.0);
                let mut pts = String::new();
                for &(x, y) in &s.points {
                    let y = if log { y.log10() } else { y };
                    let px = x0 + (x - xlo) / (xhi - xlo) * (x1 - x0);
                    let py = y1 - (y - ylo) / (yhi - ylo) * (y1 - y0);
                    let _ = write!(pts, "{px:.2},{py:.2} ");
                }
                let _ = writeln!(
                    out,
                    r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                    pts.trim_end(),
                    COLORS[p % COLORS.len()]
                );
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{x_label} {xlo} .. {xhi}</text>"#,
                    (x0 + x1) / 2.0,
                    y1 + 20.0
                );
            }
        }
        Figure::Bars { axis, labels, series } => {
            for (p, s) in series.iter().enumerate() {
                let top = p as f64 * PANEL_HEIGHT;
                let log = s.points.iter().all(|(_, y)| *y > 0.0);
                let (mut ylo, yhi) = range(s.points.iter().map(|p| p.1), log);
                if !log {
                    ylo = ylo.min(0.0);
                } else {
                    ylo -= 0.1 * (yhi - ylo).max(0.1);
                }
                panel_frame(&mut out, top, &format!("{} by {axis}", s.name), ylo, yhi, log);
                let (x0, x1, y0, y1) = (MARGIN, WIDTH - 20.0, top + 30.0, top + PANEL_HEIGHT - 30.0);
                let slot = (x1 - x0) / labels.len().max(1) as f64;
                for (i, &(_, y)) in s.points.iter().enumerate() {
                    let y = if log { y.log10() } else { y };
                    let py = y1 - (y - ylo) / (yhi - ylo) * (y1 - y0);
                    let bx = x0 + slot * (i as f64 + 0.2);
                    let _ = writeln!(
                        out,
                        r#"<rect x="{bx:.2}" y="{py:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                        slot * 0.6,
                        (y1 - py).max(0.0),
                        COLORS[p % COLORS.len()]
                    );
                    let _ = writeln!(
                        out,
                        r#"<text x="{:.2}" y="{}" font-size="10" text-anchor="middle">{}</text>"#,
                        bx + slot * 0.3,
                        y1 + 14.0,
                        labels[i]
                    );
                }
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

pub fn run(args: Args) -> Result<()> {
    let text = std::fs::read_to_string(&args.input).map_err(|e| GnsError::io(&args.input, e))?;
    let fig = read_figure(&args.input, &text)?;
    let body = match args.out.extension().and_then(|e| e.to_str()) {
        Some("svg") => render_svg(&fig),
        Some("csv") => figure_csv(&fig),
        _ => return Err(GnsError::Config(format!("{}: output must end in .svg or .csv", args.out.display()))),
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| GnsError::io(parent, e))?;
    }
    std::fs::write(&args.out, body).map_err(|e| GnsError::io(&args.out, e))
}
