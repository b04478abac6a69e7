use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::grid::CellResult;
use crate::distances::RepresentationTag;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub svg: PathBuf,
}

/// Results table as CSV. Wall time is left out so identical runs produce
/// identical bytes; it is kept in the JSON report.
pub fn results_csv(results: &[CellResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["representation", "scale", "metric", "accuracy", "chance_level", "n_calls", "status"])?;
    for r in results {
        w.write_record([
            r.representation.to_string(),
            r.scale.to_string(),
            r.metric.to_string(),
            r.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default(),
            format!("{:.6}", r.chance_level),
            r.n_calls.to_string(),
            r.status.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

const COLOURS: [&str; 8] = [
    "#4477aa", "#66ccee", "#228833", "#ccbb44", "#ee6677", "#aa3377", "#bbbbbb", "#000000",
];

/// Grouped bar chart: one cluster per representation, one bar per
/// scale/metric pair, and a dashed line at chance level.
pub fn results_svg(results: &[CellResult]) -> Result<String> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let mut reps: Vec<RepresentationTag> = Vec::new();
    let mut series: Vec<String> = Vec::new();
    for r in results {
        if !reps.contains(&r.representation) {
            reps.push(r.representation);
        }
        let name = format!("{} {}", r.scale, r.metric);
        if !series.contains(&name) {
            series.push(name);
        }
    }
    let (bar, gap, left, top, plot_h) = (18.0, 24.0, 60.0, 20.0, 240.0);
    let cluster = bar * series.len() as f64;
    let plot_w = reps.len() as f64 * (cluster + gap) + gap;
    let legend_h = 18.0 * series.len() as f64;
    let (width, height) = (left + plot_w + 20.0, top + plot_h + 70.0 + legend_h);
    let y = |acc: f64| top + plot_h * (1.0 - acc.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for pct in (0..=100).step_by(20) {
        let yy = y(pct as f64 / 100.0);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{yy}" x2="{}" y2="{yy}" stroke="#dddddd"/><text x="{}" y="{}" text-anchor="end">{pct}%</text>"##,
            left + plot_w,
            left - 6.0,
            yy + 4.0
        );
    }
    for (ri, rep) in reps.iter().enumerate() {
        let x0 = left + gap + ri as f64 * (cluster + gap);
        for r in results.iter().filter(|r| r.representation == *rep) {
            let si = series.iter().position(|n| *n == format!("{} {}", r.scale, r.metric)).unwrap();
            let acc = r.accuracy.unwrap_or(0.0);
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"><title>{rep} {} {}: {}</title></rect>"#,
                x0 + si as f64 * bar,
                y(acc),
                bar - 2.0,
                top + plot_h - y(acc),
                COLOURS[si % COLOURS.len()],
                r.scale,
                r.metric,
                r.accuracy.map_or_else(|| r.status.clone(), |a| format!("{:.1}%", 100.0 * a)),
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{rep}</text>"#,
            x0 + cluster / 2.0,
            top + plot_h + 16.0
        );
    }
    let chance = results.iter().map(|r| r.chance_level).fold(0.0, f64::max);
    let _ = writeln!(
        s,
        r##"<line x1="{left}" y1="{cy}" x2="{}" y2="{cy}" stroke="#cc0000" stroke-dasharray="6,4"/><text x="{}" y="{}" fill="#cc0000" text-anchor="end">chance {:.1}%</text>"##,
        left + plot_w,
        left + plot_w,
        y(chance) - 4.0,
        100.0 * chance,
        cy = y(chance),
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/><text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">accuracy</text>"#,
        top + plot_h,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    for (si, name) in series.iter().enumerate() {
        let ly = top + plot_h + 36.0 + 18.0 * si as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{ly}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{name}</text>"#,
            COLOURS[si % COLOURS.len()],
            left + 18.0,
            ly + 10.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes `<stem>.csv`, `<stem>.json` and `<stem>.svg` into `dir`.
pub fn emit_report(results: &[CellResult], dir: impl AsRef<Path>, stem: &str) -> Result<ReportFiles> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        csv: dir.join(format!("{stem}.csv")),
        json: dir.join(format!("{stem}.json")),
        svg: dir.join(format!("{stem}.svg")),
    };
    let write = |path: &PathBuf, text: String| std::fs::write(path, text).map_err(|e| Error::io(path, e));
    write(&files.csv, results_csv(results)?)?;
    write(&files.json, serde_json::to_string_pretty(results)?)?;
    write(&files.svg, results_svg(results)?)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distances::{Metric, Scale};

    fn cell(rep: &str, scale: Scale, metric: Metric, acc: f64) -> CellResult {
        CellResult {
            representation: rep.parse().unwrap(),
            scale,
            metric,
            accuracy: Some(acc),
            chance_level: 0.08,
            n_calls: 100,
            status: "ok".into(),
            wall_time_s: 1.5,
        }
    }

    #[test]
    fn empty_results_are_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_report(&[], dir.path(), "r"), Err(Error::EmptyResults)));
    }

    #[test]
    fn one_cell_chart() {
        let svg = results_svg(&[cell("raw/stft", Scale::Log, Metric::Manhattan, 0.5)]).unwrap();
        assert_eq!(svg.matches("<rect x=").count(), 2);
        assert!(svg.contains("chance 8.0%"));
        // Chance line at 8% of a 240 px axis starting at y = 20.
        assert!(svg.contains(r#"y1="240.8""#));
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let cells: Vec<_> = ["raw/stft", "lpc_residual/stft"]
            .iter()
            .flat_map(|r| {
                [Metric::Euclidean, Metric::Manhattan]
                    .into_iter()
                    .map(move |m| cell(r, Scale::Mag, m, 0.4))
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&cells, dir.path(), "results").unwrap();
        let text = std::fs::read_to_string(&files.csv).unwrap();
        assert_eq!(text.lines().count(), cells.len() + 1);
        assert!(!text.contains("1.5"));
        let json: Vec<CellResult> = serde_json::from_str(&std::fs::read_to_string(&files.json).unwrap()).unwrap();
        assert_eq!(json, cells);
        assert!(files.svg.exists());
    }
}
