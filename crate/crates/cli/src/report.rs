//! SVG curves and a comparison table from metrics CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::experiment::METRICS_COLUMNS;

/// Per-epoch curves of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCurves {
    pub tag: String,
    pub epoch: Vec<f64>,
    pub acc_all: Vec<f64>,
    pub acc_old: Vec<f64>,
    pub acc_new: Vec<f64>,
    pub known_count: Vec<f64>,
}

pub fn read_metrics(path: &Path) -> Result<RunCurves> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.iter().ne(METRICS_COLUMNS) {
        bail!("{}: unexpected columns", path.display());
    }
    let col = |name: &str| METRICS_COLUMNS.iter().position(|c| *c == name).unwrap();
    let tag = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("metrics_"))
        .unwrap_or("run")
        .to_string();
    let mut c = RunCurves {
        tag,
        epoch: vec![],
        acc_all: vec![],
        acc_old: vec![],
        acc_new: vec![],
        known_count: vec![],
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{} row {}", path.display(), i + 1))?;
        let get = |name: &str| -> Result<f64> {
            let v: f64 = rec[col(name)]
                .parse()
                .with_context(|| format!("{} row {}: {name}", path.display(), i + 1))?;
            Ok(v)
        };
        c.epoch.push(get("epoch")?);
        c.acc_all.push(get("acc_all")?);
        c.acc_old.push(get("acc_old")?);
        c.acc_new.push(get("acc_new")?);
        c.known_count.push(get("known_count")?);
    }
    if c.epoch.is_empty() {
        bail!("{}: no epochs", path.display());
    }
    Ok(c)
}

/// Metrics CSVs in `dir` or its immediate subdirectories. Runs listed in a
/// `summary.csv` keep the sweep order; the rest follow sorted by path.
pub fn find_metrics(dir: &Path) -> Vec<PathBuf> {
    fn scan(dir: &Path, depth: usize, out: &mut Vec<PathBuf>) {
        let Ok(entries) = fs::read_dir(dir) else {
            return;
        };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() && depth > 0 {
                scan(&p, depth - 1, out);
            } else if p
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("metrics_") && n.ends_with(".csv"))
            {
                out.push(p);
            }
        }
    }
    let mut out = Vec::new();
    if dir.is_file() {
        out.push(dir.to_path_buf());
    } else {
        scan(dir, 1, &mut out);
    }
    out.sort();
    let order = summary_order(&dir.join("summary.csv"));
    let rank = |p: &PathBuf| {
        p.file_stem()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("metrics_"))
            .and_then(|tag| order.iter().position(|t| t == tag))
            .unwrap_or(usize::MAX)
    };
    out.sort_by_key(rank);
    out
}

fn summary_order(path: &Path) -> Vec<String> {
    let Ok(mut rdr) = csv::Reader::from_path(path) else {
        return Vec::new();
    };
    rdr.records()
        .flatten()
        .filter_map(|r| r.get(0).map(str::to_string))
        .collect()
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

struct Series<'a> {
    label: String,
    color: &'static str,
    dashed: bool,
    x: &'a [f64],
    y: &'a [f64],
}

fn line_chart(
    title: &str,
    y_label: &str,
    series: &[Series],
    y_range: Option<(f64, f64)>,
) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (60.0, 200.0, 36.0, 44.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let xmax = series
        .iter()
        .flat_map(|s| s.x.iter().copied())
        .fold(1.0_f64, f64::max);
    let (ymin, ymax) = y_range.unwrap_or_else(|| {
        let m = series
            .iter()
            .flat_map(|s| s.y.iter().copied())
            .fold(1.0_f64, f64::max);
        (0.0, m * 1.05)
    });
    let sx = |x: f64| left + pw * x / xmax;
    let sy = |y: f64| top + ph * (1.0 - (y - ymin) / (ymax - ymin));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    for i in 0..=5 {
        let v = ymin + (ymax - ymin) * i as f64 / 5.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            "<line x1=\"{left}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>",
            left + pw
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            y + 4.0,
            if ymax <= 1.5 {
                format!("{v:.1}")
            } else {
                format!("{v:.0}")
            }
        );
    }
    for i in 0..=5 {
        let v = xmax * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.0}</text>"#,
            sx(v),
            top + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#,
        left + pw / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let pts: Vec<String> = ser
            .x
            .iter()
            .zip(ser.y)
            .map(|(&x, &y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let dash = if ser.dashed {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.8"{dash} points="{}"/>"#,
            ser.color,
            pts.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/>"#,
            lx + 24.0,
            ser.color
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 30.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn accuracy_svg(runs: &[RunCurves]) -> String {
    let mut series = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        series.push(Series {
            label: format!("{} old", r.tag),
            color,
            dashed: false,
            x: &r.epoch,
            y: &r.acc_old,
        });
        series.push(Series {
            label: format!("{} new", r.tag),
            color,
            dashed: true,
            x: &r.epoch,
            y: &r.acc_new,
        });
    }
    line_chart("Old / New accuracy", "accuracy", &series, Some((0.0, 1.0)))
}

pub fn known_count_svg(runs: &[RunCurves]) -> String {
    let series: Vec<Series> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| Series {
            label: r.tag.clone(),
            color: PALETTE[i % PALETTE.len()],
            dashed: false,
            x: &r.epoch,
            y: &r.known_count,
        })
        .collect();
    line_chart(
        "High-confidence known predictions",
        "known_count",
        &series,
        None,
    )
}

/// Final All/Old/New per run in percent; every run after the first gets a
/// Δ row relative to the first.
pub fn comparison_table(runs: &[RunCurves]) -> String {
    let width = runs.iter().map(|r| r.tag.len()).max().unwrap_or(3).max(3) + 2;
    let finals = |r: &RunCurves| {
        let n = r.epoch.len() - 1;
        [
            r.acc_all[n] * 100.0,
            r.acc_old[n] * 100.0,
            r.acc_new[n] * 100.0,
        ]
    };
    let mut s = format!("{:<width$}{:>8}{:>8}{:>8}\n", "run", "All", "Old", "New");
    let base = runs.first().map(finals);
    for (i, r) in runs.iter().enumerate() {
        let f = finals(r);
        let _ = writeln!(
            s,
            "{:<width$}{:>8.2}{:>8.2}{:>8.2}",
            r.tag, f[0], f[1], f[2]
        );
        if let (Some(b), true) = (base, i > 0) {
            let _ = writeln!(
                s,
                "{:<width$}{:>+8.2}{:>+8.2}{:>+8.2}",
                "  Δ",
                f[0] - b[0],
                f[1] - b[1],
                f[2] - b[2]
            );
        }
    }
    s
}

/// Files written by [`emit_report`].
#[derive(Debug)]
pub struct ReportOutcome {
    pub runs: usize,
    pub skipped: usize,
    pub files: Vec<PathBuf>,
}

/// Reads every metrics CSV under `run_dirs` and writes `accuracy.svg`,
/// `known_count.svg` and `comparison.txt` into `out`. Unreadable inputs are
/// skipped with a warning; it fails only when nothing usable remains.
pub fn emit_report(run_dirs: &[PathBuf], out: &Path) -> Result<ReportOutcome> {
    let mut runs = Vec::new();
    let mut skipped = 0;
    for dir in run_dirs {
        let found = find_metrics(dir);
        if found.is_empty() {
            log::warn!("{}: no metrics CSV found", dir.display());
            skipped += 1;
        }
        for path in found {
            match read_metrics(&path) {
                Ok(c) => runs.push(c),
                Err(e) => {
                    log::warn!("skipping {}: {e:#}", path.display());
                    skipped += 1;
                }
            }
        }
    }
    if runs.is_empty() {
        bail!("no usable metrics CSVs");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let files = vec![
        (out.join("accuracy.svg"), accuracy_svg(&runs)),
        (out.join("known_count.svg"), known_count_svg(&runs)),
        (out.join("comparison.txt"), comparison_table(&runs)),
    ];
    for (p, body) in &files {
        fs::write(p, body).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(ReportOutcome {
        runs: runs.len(),
        skipped,
        files: files.into_iter().map(|(p, _)| p).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curves(tag: &str, old: f64, new: f64) -> RunCurves {
        RunCurves {
            tag: tag.into(),
            epoch: vec![1.0, 2.0],
            acc_all: vec![0.5, (old + new) / 2.0],
            acc_old: vec![0.5, old],
            acc_new: vec![0.5, new],
            known_count: vec![3.0, 7.0],
        }
    }

    #[test]
    fn delta_rows_follow_each_non_baseline_run() {
        let t = comparison_table(&[curves("base", 0.6, 0.4), curves("lego", 0.65, 0.39)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("  Δ"));
        assert!(
            lines[3].contains("+5.00") && lines[3].contains("-1.00"),
            "{t}"
        );
        let single = comparison_table(&[curves("only", 0.6, 0.4)]);
        assert!(!single.contains('Δ'));
    }

    #[test]
    fn two_runs_give_four_accuracy_series() {
        let svg = accuracy_svg(&[curves("a", 0.6, 0.4), curves("b", 0.6, 0.4)]);
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn summary_order_wins_over_path_order() {
        let tmp = tempfile::tempdir().unwrap();
        for tag in ["abl-ler_seed0", "abl-none_seed0", "zz_seed0"] {
            let d = tmp.path().join(tag);
            fs::create_dir_all(&d).unwrap();
            fs::write(d.join(format!("metrics_{tag}.csv")), "").unwrap();
        }
        fs::write(
            tmp.path().join("summary.csv"),
            "tag,method\nabl-none_seed0,gcd\nabl-ler_seed0,gcd\n",
        )
        .unwrap();
        let names: Vec<String> = find_metrics(tmp.path())
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            names,
            [
                "metrics_abl-none_seed0.csv",
                "metrics_abl-ler_seed0.csv",
                "metrics_zz_seed0.csv"
            ]
        );
    }
}
