//! Self-contained SVG histograms: one translucent histogram per group, a
//! dashed line at each group mean and an optional shaded band.

use std::fmt::Write;
use std::path::Path;

use gan_audit::analysis::{auto_range, histogram};

use crate::error::{CliError, CliResult};

/// Group colours, assigned in order of first appearance in the input.
pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 400.0;
pub const LEFT: f64 = 60.0;
pub const RIGHT: f64 = 20.0;
pub const TOP: f64 = 40.0;
pub const BOTTOM: f64 = 50.0;

/// Band `[center - half_width, center + half_width]` in value units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub center: f64,
    pub half_width: f64,
}

/// Values of `column` grouped by `group_column`, groups in first-seen order.
pub fn read_groups(path: &Path, column: &str, group_column: &str) -> CliResult<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e).in_field("plot.input"))?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::input("plot.input", format!("{}: {e}", path.display())))?
        .clone();
    let find = |name: &str, field: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::input(field, format!("{}: no column {name:?}", path.display()))
        })
    };
    let vi = find(column, "plot.column")?;
    let gi = find(group_column, "plot.group_column")?;
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::input("plot.input", format!("{}: {e}", path.display())))?;
        let line = row + 2;
        let (Some(g), Some(v)) = (rec.get(gi), rec.get(vi)) else {
            return Err(CliError::input("plot.input", format!("line {line}: missing field")));
        };
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::input("plot.input", format!("line {line}: {v:?} is not a number")))?;
        match groups.iter_mut().find(|(name, _)| name == g) {
            Some((_, vs)) => vs.push(v),
            None => groups.push((g.to_string(), vec![v])),
        }
    }
    if groups.is_empty() {
        return Err(CliError::input("plot.input", format!("{}: no rows", path.display())));
    }
    Ok(groups)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn histogram_svg(
    groups: &[(String, Vec<f64>)],
    bins: usize,
    band: Option<Band>,
    title: &str,
    x_label: &str,
) -> CliResult<String> {
    if bins == 0 {
        return Err(CliError::config("plot.bins", "must be at least 1"));
    }
    let mut all: Vec<f64> = groups.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    if let Some(b) = band {
        if !(b.center.is_finite() && b.half_width.is_finite() && b.half_width >= 0.0) {
            return Err(CliError::config("plot.epsilon", "band must be finite with non-negative width"));
        }
        all.push(b.center - b.half_width);
        all.push(b.center + b.half_width);
    }
    let (lo, hi) = auto_range(&all).ok_or_else(|| CliError::input("plot.input", "no finite values"))?;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |v: f64| LEFT + (v - lo) / (hi - lo) * plot_w;

    let hists = groups
        .iter()
        .map(|(_, v)| histogram(v, bins, (lo, hi)))
        .collect::<Result<Vec<_>, _>>()?;
    let peak = hists
        .iter()
        .flat_map(|h| h.counts.iter().copied())
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let sy = |c: f64| TOP + plot_h - c / peak * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" data-x-min="{lo}" data-x-max="{hi}" data-plot-left="{LEFT}" data-plot-width="{plot_w}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        esc(title)
    );
    if let Some(b) = band {
        let x0 = sx(b.center - b.half_width);
        let x1 = sx(b.center + b.half_width);
        let _ = writeln!(
            s,
            r##"<rect class="eps-band" x="{x0}" y="{TOP}" width="{}" height="{plot_h}" fill="#999999" fill-opacity="0.25"/>"##,
            x1 - x0
        );
    }
    for (gi, h) in hists.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        for (i, &c) in h.counts.iter().enumerate().filter(|(_, &c)| c > 0) {
            let (x0, x1) = (sx(h.edges[i]), sx(h.edges[i + 1]));
            let y = sy(c as f64);
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-group="{gi}" x="{x0:.3}" y="{y:.3}" width="{:.3}" height="{:.3}" fill="{color}" fill-opacity="0.5" stroke="{color}" stroke-width="0.5"/>"#,
                (x1 - x0).max(1.0),
                TOP + plot_h - y
            );
        }
    }
    for (gi, (_, values)) in groups.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            continue;
        }
        let mean = finite.iter().sum::<f64>() / finite.len() as f64;
        let x = sx(mean);
        let _ = writeln!(
            s,
            r#"<line class="mean" data-group="{gi}" data-mean="{mean}" x1="{x:.3}" y1="{TOP}" x2="{x:.3}" y2="{}" stroke="{color}" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
            TOP + plot_h
        );
    }
    // axes and ticks
    let base = TOP + plot_h;
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        LEFT + plot_w
    );
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{base}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let x = sx(v);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.3}" y1="{base}" x2="{x:.3}" y2="{}" stroke="black"/><text x="{x:.3}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            base + 5.0,
            base + 18.0,
            tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11" dx="-4">{}</text><text x="{LEFT}" y="{base}" text-anchor="end" font-family="sans-serif" font-size="11" dx="-4">0</text>"#,
        TOP + 4.0,
        peak
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0,
        esc(x_label)
    );
    for (gi, (name, values)) in groups.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        let y = TOP + 8.0 + 16.0 * gi as f64;
        let x = LEFT + plot_w - 150.0;
        let _ = writeln!(
            s,
            r#"<g class="legend" data-group="{gi}"><rect x="{x}" y="{}" width="10" height="10" fill="{color}" fill-opacity="0.5" stroke="{color}"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{} (n={})</text></g>"#,
            y - 9.0,
            x + 14.0,
            y,
            esc(name),
            values.len()
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(svg: &str, needle: &str) -> usize {
        svg.matches(needle).count()
    }

    #[test]
    fn single_value_gives_one_bar_and_one_mean() {
        let svg = histogram_svg(&[("a".into(), vec![3.0])], 10, None, "t", "x").unwrap();
        assert_eq!(count(&svg, r#"class="bar""#), 1);
        assert_eq!(count(&svg, r#"class="mean""#), 1);
        assert_eq!(count(&svg, "eps-band"), 0);
    }

    #[test]
    fn colours_follow_group_order() {
        let groups = vec![("z".to_string(), vec![1.0, 2.0]), ("a".to_string(), vec![1.5])];
        let svg = histogram_svg(&groups, 4, None, "t", "x").unwrap();
        let first = svg.find(PALETTE[0]).unwrap();
        let second = svg.find(PALETTE[1]).unwrap();
        assert!(first < second);
        assert!(svg.contains(r#"class="mean" data-group="1""#));
    }

    #[test]
    fn band_is_drawn_through_the_axis_map() {
        let groups = vec![("a".to_string(), vec![0.0, 10.0])];
        let svg = histogram_svg(&groups, 5, Some(Band { center: 5.0, half_width: 1.0 }), "t", "x").unwrap();
        let w: f64 = svg
            .split(r#"class="eps-band""#)
            .nth(1)
            .and_then(|r| r.split("width=\"").nth(1))
            .and_then(|r| r.split('"').next())
            .unwrap()
            .parse()
            .unwrap();
        let plot_w = WIDTH - LEFT - RIGHT;
        assert!((w - 2.0 * plot_w / 10.0).abs() < 1e-9);
    }

    #[test]
    fn text_is_escaped() {
        let svg = histogram_svg(&[("<b>".into(), vec![1.0])], 1, None, "a & b", "x").unwrap();
        assert!(svg.contains("&lt;b&gt;") && svg.contains("a &amp; b"));
    }
}
