//! Tables and charts summarizing training runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::ExperimentRecord;
use crate::optim::TrainHistory;

/// Learning curves: one `run,epoch,loss,dev_f1` row per epoch of every run.
pub fn write_curves_csv<W: Write>(runs: &[(String, TrainHistory)], out: W) -> Result<()> {
    if runs.iter().all(|(_, h)| h.is_empty()) {
        return Err(Error::EmptyInput("no training history to report".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "epoch", "loss", "dev_f1"])?;
    for (label, history) in runs {
        for e in &history.epochs {
            let f1 = e.dev_f1.map(|f| f.to_string()).unwrap_or_default();
            w.write_record([label.as_str(), &e.epoch.to_string(), &e.loss.to_string(), &f1])?;
        }
    }
    w.flush()?;
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line chart of dev F1 per epoch, or of the loss when no run has dev scores.
pub fn curves_svg(runs: &[(String, TrainHistory)]) -> Result<String> {
    let use_f1 = runs.iter().any(|(_, h)| h.epochs.iter().any(|e| e.dev_f1.is_some()));
    let series: Vec<(&str, Vec<(f64, f64)>)> = runs
        .iter()
        .map(|(label, h)| {
            let points = h
                .epochs
                .iter()
                .filter_map(|e| {
                    let y = if use_f1 { e.dev_f1? } else { e.loss };
                    Some((e.epoch as f64, y))
                })
                .collect();
            (label.as_str(), points)
        })
        .filter(|(_, p): &(&str, Vec<_>)| !p.is_empty())
        .collect();
    if series.is_empty() {
        return Err(Error::EmptyInput("no training history to plot".into()));
    }
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if use_f1 {
        (y0, y1) = (0.0, 1.0);
    }
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let (w, h, pad) = (640.0, 400.0, 48.0);
    let sx = |x: f64| pad + (x - x0) / span(x0, x1) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / span(y0, y1) * (h - 2.0 * pad);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    let ylabel = if use_f1 { "dev F1" } else { "loss" };
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">epoch</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(svg, r#"<text x="14" y="{}" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">{ylabel}</text>"#, h / 2.0, h / 2.0);
    for (tick, v) in [(y0, y0), (y1, y1)] {
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" font-size="10" text-anchor="end">{v:.3}</text>"#, pad - 4.0, sy(tick) + 3.0);
    }
    for (i, (label, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            w - pad - 150.0,
            pad + 14.0 * (i as f64 + 1.0),
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Mean F1 per grid cell, over the repeats that succeeded.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub cell: String,
    pub axes: BTreeMap<String, String>,
    pub mean_f1: Option<f64>,
    pub runs: usize,
    pub failures: usize,
}

/// Groups records by cell, keeping first-appearance order.
pub fn summarize_cells(records: &[ExperimentRecord]) -> Vec<CellSummary> {
    let mut out: Vec<(CellSummary, f64)> = Vec::new();
    for r in records {
        let pos = match out.iter().position(|(c, _)| c.cell == r.cell) {
            Some(p) => p,
            None => {
                let summary = CellSummary {
                    cell: r.cell.clone(),
                    axes: r.axes.clone(),
                    mean_f1: None,
                    runs: 0,
                    failures: 0,
                };
                out.push((summary, 0.0));
                out.len() - 1
            }
        };
        let (c, sum) = &mut out[pos];
        c.runs += 1;
        match r.f1 {
            Some(f) => *sum += f,
            None => c.failures += 1,
        }
    }
    out.into_iter()
        .map(|(mut c, sum)| {
            let ok = c.runs - c.failures;
            c.mean_f1 = (ok > 0).then(|| sum / ok as f64);
            c
        })
        .collect()
}

/// One row per cell: the axis columns, then `f1` (blank when every repeat
/// failed).
pub fn write_grid_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no grid records to report".into()));
    }
    let axes: Vec<String> = records[0].axes.keys().cloned().collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = axes.clone();
    header.push("f1".into());
    w.write_record(&header)?;
    for c in summarize_cells(records) {
        let mut row: Vec<String> = axes.iter().map(|a| c.axes.get(a).cloned().unwrap_or_default()).collect();
        row.push(c.mean_f1.map(|f| f.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaterfallRow {
    pub label: String,
    pub previous: f64,
    pub f1: f64,
    pub delta: f64,
}

/// The change of each stage's F1 relative to the stage before it.
pub fn waterfall(stages: &[(String, f64)]) -> Result<Vec<WaterfallRow>> {
    if stages.len() < 2 {
        return Err(Error::EmptyInput("a waterfall needs at least two stages".into()));
    }
    Ok(stages
        .windows(2)
        .map(|w| WaterfallRow {
            label: w[1].0.clone(),
            previous: w[0].1,
            f1: w[1].1,
            delta: w[1].1 - w[0].1,
        })
        .collect())
}

/// `label,previous_f1,f1,delta` rows; the delta is signed with two decimals.
pub fn write_waterfall_csv<W: Write>(stages: &[(String, f64)], out: W) -> Result<()> {
    let rows = waterfall(stages)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "previous_f1", "f1", "delta"])?;
    for r in rows {
        w.write_record([r.label, r.previous.to_string(), r.f1.to_string(), format!("{:+.2}", r.delta)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TrialConfig;
    use crate::network::NetworkConfig;
    use crate::optim::{EpochRecord, TrainConfig};
    use crate::transfer::InitStrategy;

    fn history(n: usize) -> TrainHistory {
        TrainHistory {
            epochs: (1..=n).map(|e| EpochRecord { epoch: e, loss: 1.0 / e as f64, dev_f1: Some(e as f64 / 10.0) }).collect(),
        }
    }

    fn record(cell: &str, lr: &str, f1: Option<f64>) -> ExperimentRecord {
        ExperimentRecord {
            label: format!("{cell} {f1:?}"),
            cell: cell.into(),
            axes: [("optimizer".to_string(), cell.to_string()), ("sgd_lr".to_string(), lr.to_string())].into(),
            repeat: 0,
            seed: 0,
            config: TrialConfig {
                network: NetworkConfig::default(),
                train: TrainConfig::default(),
                init_strategy: InitStrategy::All,
                pretrain: None,
            },
            f1,
            error: None,
            history: history(1),
            wall_time_secs: 0.0,
        }
    }

    #[test]
    fn waterfall_delta() {
        let rows = waterfall(&[("baseline".into(), 69.30), ("final".into(), 78.87)]).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].delta - 9.57).abs() < 1e-9);
        let mut out = Vec::new();
        write_waterfall_csv(&[("baseline".into(), 69.30), ("final".into(), 78.87)], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "label,previous_f1,f1,delta\nfinal,69.3,78.87,+9.57\n");
        assert!(waterfall(&[("only".into(), 1.0)]).is_err());
    }

    #[test]
    fn curves_rows_sum_epochs() {
        let runs = vec![("a".to_string(), history(3)), ("b".to_string(), history(5))];
        let mut out = Vec::new();
        write_curves_csv(&runs, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 8);
        assert!(text.starts_with("run,epoch,loss,dev_f1\n"));
        let svg = curves_svg(&runs).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(write_curves_csv(&[("x".into(), TrainHistory::default())], Vec::new()).is_err());
    }

    #[test]
    fn grid_columns_are_axes_plus_f1() {
        let records = vec![record("sgd", "0.04", Some(0.5)), record("sgd", "0.04", Some(0.7)), record("nadam", "0.04", None)];
        let mut out = Vec::new();
        write_grid_csv(&records, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("optimizer,sgd_lr,f1"));
        assert_eq!(lines.next(), Some("sgd,0.04,0.6"));
        assert_eq!(lines.next(), Some("nadam,0.04,"));
        assert!(write_grid_csv(&[], Vec::new()).is_err());
    }
}
