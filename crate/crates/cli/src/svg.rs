//! Plain SVG line charts, byte-identical for identical input.

use std::fmt::Write as _;
use std::fs;

use crate::commands::write_bytes;
use crate::{CliError, ReportArgs};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 450.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Read `x, y1, y2, ...`; a column is plotted only if every row parses.
pub fn read_series(text: &str, columns: &[String]) -> Result<(String, Vec<Series>), CliError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> =
        r.headers().map_err(|e| CliError::Data(e.to_string()))?.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return Err(CliError::Data("need an x column and at least one y column".into()));
    }
    let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); header.len()];
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        for (k, col) in cols.iter_mut().enumerate() {
            col.push(rec.get(k).and_then(|v| v.trim().parse::<f64>().ok()).filter(|v| v.is_finite()));
        }
    }
    if cols[0].iter().any(Option::is_none) {
        return Err(CliError::Data(format!("x column `{}` is not numeric", header[0])));
    }
    let wanted: Vec<usize> = if columns.is_empty() {
        (1..header.len()).filter(|&k| cols[k].iter().all(Option::is_some)).collect()
    } else {
        columns
            .iter()
            .map(|c| {
                let k =
                    header.iter().position(|h| h == c).ok_or_else(|| CliError::Usage(format!("no column `{c}`")))?;
                if k == 0 || cols[k].iter().any(Option::is_none) {
                    return Err(CliError::Data(format!("column `{c}` is not a numeric y series")));
                }
                Ok(k)
            })
            .collect::<Result<_, _>>()?
    };
    if wanted.is_empty() {
        return Err(CliError::Data("no numeric y columns".into()));
    }
    let xs: Vec<f64> = cols[0].iter().map(|v| v.unwrap()).collect();
    let series = wanted
        .into_iter()
        .map(|k| Series {
            name: header[k].clone(),
            points: xs.iter().zip(&cols[k]).map(|(&x, y)| (x, y.unwrap())).collect(),
        })
        .collect();
    Ok((header[0].clone(), series))
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render(title: &str, x_label: &str, series: &[Series]) -> String {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ =
        writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {t}V{b}H{r}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (x, y) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(x),
            HEIGHT - MARGIN + 18.0,
            tick(x)
        );
        let _ =
            writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, MARGIN - 6.0, py(y) + 4.0, tick(y));
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        for (j, &(x, y)) in ser.points.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2}", if j == 0 { "M" } else { "L" }, px(x), py(y));
        }
        let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}" text-anchor="end">{}</text>"#,
            WIDTH - MARGIN - 4.0,
            ly + 12.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    let t = format!("{v:.3}");
    let t = t.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" {
        "0".into()
    } else {
        t.to_string()
    }
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.input).map_err(|e| CliError::Data(format!("{}: {e}", a.input.display())))?;
    let (x_label, series) = read_series(&text, &a.columns)?;
    let title =
        a.title.unwrap_or_else(|| a.input.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()));
    write_bytes(&a.out, render(&title, &x_label, &series).as_bytes())?;
    println!("{} series -> {}", series.len(), a.out.display());
    Ok(())
}
