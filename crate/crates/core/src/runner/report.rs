//! Report rendering.
//!
//! `report.csv` has one row per aggregate, columns:
//!
//! | column | meaning |
//! |---|---|
//! | `task` | diagnosis, identification, extraction or rephrasing |
//! | `class` | description class |
//! | `decoder` | extraction decoder, empty otherwise |
//! | `sampler` | few-shot strategy (`random` or `oracle`) |
//! | `shots` | in-context examples per prompt |
//! | `metric` | metric name |
//! | `dimension` | bias dimension for per-dimension rows, empty otherwise |
//! | `mean`, `std` | across cells, in `[0, 1]` |
//! | `n_cells` | variants × resamples aggregated |
//!
//! `report.md` renders the same numbers ×100 with one decimal as
//! `mean ± std` (mean only for single-cell rows), one table per class and
//! decoder with metrics as rows and shot counts as columns. Identification
//! adds a table per class with one row per dimension.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use super::{AggregateRow, RunRecord, RunnerError};
use crate::corpus::Dimension;
use crate::decoding::Decoder;
use crate::metrics::Aggregate;
use crate::templating::{Task, TemplateClass};

pub struct Report {
    pub csv: String,
    pub markdown: String,
}

fn metric_order(task: Task) -> &'static [&'static str] {
    match task {
        Task::Diagnosis => &["accuracy", "f1"],
        Task::Identification => &["exact_match"],
        Task::Extraction | Task::Rephrasing => &["token_f1", "bleu4", "meteor"],
    }
}

fn cell_text(a: &Aggregate) -> String {
    if a.n_cells == 1 {
        format!("{:.1}", a.mean * 100.0)
    } else {
        format!("{:.1} ± {:.1}", a.mean * 100.0, a.std * 100.0)
    }
}

fn render_csv(record: &RunRecord) -> Result<String, RunnerError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| RunnerError::Io(e.to_string());
    w.write_record(["task", "class", "decoder", "sampler", "shots", "metric", "dimension", "mean", "std", "n_cells"])
        .map_err(err)?;
    for row in &record.aggregates {
        w.write_record([
            record.task.as_str().to_string(),
            row.class.as_str().to_string(),
            row.decoder.map(|d| d.as_str().to_string()).unwrap_or_default(),
            record.strategy.as_str().to_string(),
            row.shots.to_string(),
            row.metric.clone(),
            row.dimension.map(|d| d.name().to_string()).unwrap_or_default(),
            row.aggregate.mean.to_string(),
            row.aggregate.std.to_string(),
            row.aggregate.n_cells.to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| RunnerError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| RunnerError::Io(e.to_string()))
}

fn table(out: &mut String, label: &str, shots: &[usize], rows: &[(String, Vec<Option<&Aggregate>>)]) {
    let _ = write!(out, "| {label} |");
    for n in shots {
        let _ = write!(out, " n={n} |");
    }
    out.push_str("\n|---|");
    for _ in shots {
        out.push_str("---|");
    }
    out.push('\n');
    for (name, cells) in rows {
        let _ = write!(out, "| {name} |");
        for c in cells {
            let _ = write!(out, " {} |", c.map(cell_text).unwrap_or_else(|| "–".into()));
        }
        out.push('\n');
    }
    out.push('\n');
}

fn render_markdown(record: &RunRecord) -> String {
    type Key<'a> = (TemplateClass, Option<Decoder>, usize, &'a str, Option<Dimension>);
    let index: BTreeMap<Key, &AggregateRow> = record
        .aggregates
        .iter()
        .map(|r| ((r.class, r.decoder, r.shots, r.metric.as_str(), r.dimension), r))
        .collect();
    let shots: Vec<usize> = record.aggregates.iter().map(|r| r.shots).collect::<BTreeSet<_>>().into_iter().collect();
    let sections: BTreeSet<(TemplateClass, Option<Decoder>)> =
        record.aggregates.iter().map(|r| (r.class, r.decoder)).collect();

    let mut out = String::new();
    let _ = writeln!(out, "# {} ({} sampling)\n", record.task, record.strategy);
    let _ = writeln!(out, "Config hash: `{}`\n", record.config_hash);
    let _ = writeln!(out, "Scores ×100, mean ± std across description variants and example sets.\n");
    for (class, decoder) in sections {
        match decoder {
            Some(d) => {
                let _ = writeln!(out, "## {class}, {d} decoder\n");
            }
            None => {
                let _ = writeln!(out, "## {class}\n");
            }
        }
        let rows: Vec<(String, Vec<Option<&Aggregate>>)> = metric_order(record.task)
            .iter()
            .map(|m| {
                let cells = shots.iter().map(|&n| index.get(&(class, decoder, n, *m, None)).map(|r| &r.aggregate)).collect();
                (m.to_string(), cells)
            })
            .collect();
        table(&mut out, "metric", &shots, &rows);
        if record.task == Task::Identification {
            let _ = writeln!(out, "### {class}: exact match by dimension\n");
            let rows: Vec<(String, Vec<Option<&Aggregate>>)> = Dimension::ALL
                .iter()
                .map(|&dim| {
                    let cells = shots
                        .iter()
                        .map(|&n| index.get(&(class, decoder, n, "exact_match", Some(dim))).map(|r| &r.aggregate))
                        .collect();
                    (dim.name().to_string(), cells)
                })
                .collect();
            table(&mut out, "dimension", &shots, &rows);
        }
    }
    out
}

/// Render the CSV and Markdown reports of a record.
pub fn emit_report(record: &RunRecord) -> Result<Report, RunnerError> {
    if record.aggregates.is_empty() {
        return Err(RunnerError::EmptyAggregate);
    }
    Ok(Report { csv: render_csv(record)?, markdown: render_markdown(record) })
}

pub fn write_report(record: &RunRecord, out_dir: &Path) -> Result<Report, RunnerError> {
    let report = emit_report(record)?;
    let io = |e: std::io::Error| RunnerError::Io(format!("{}: {e}", out_dir.display()));
    std::fs::write(out_dir.join("report.csv"), &report.csv).map_err(io)?;
    std::fs::write(out_dir.join("report.md"), &report.markdown).map_err(io)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::StdKind;
    use crate::sampling::Strategy;

    fn record(aggregates: Vec<AggregateRow>) -> RunRecord {
        RunRecord {
            config_hash: "h".into(),
            task: Task::Identification,
            strategy: Strategy::Random,
            tokenizer: "t".into(),
            std: StdKind::Population,
            examples: vec![],
            cells: vec![],
            aggregates,
        }
    }

    fn row(shots: usize, dimension: Option<Dimension>, mean: f64, std: f64, n_cells: usize) -> AggregateRow {
        AggregateRow {
            class: TemplateClass::Statement,
            decoder: None,
            shots,
            metric: "exact_match".into(),
            dimension,
            aggregate: Aggregate { mean, std, n_cells },
        }
    }

    #[test]
    fn empty_record_is_an_error() {
        assert!(matches!(emit_report(&record(vec![])), Err(RunnerError::EmptyAggregate)));
    }

    #[test]
    fn identification_has_eleven_dimension_rows() {
        let r = emit_report(&record(vec![
            row(0, None, 0.25, 0.0, 1),
            row(5, None, 0.5, 0.125, 48),
            row(0, Some(Dimension::Gender), 1.0, 0.0, 1),
        ]))
        .unwrap();
        let md = &r.markdown;
        assert!(md.contains("| exact_match | 25.0 | 50.0 ± 12.5 |"));
        for d in Dimension::ALL {
            assert!(md.contains(&format!("| {} |", d.name())), "{d}");
        }
        assert!(md.contains("| gender | 100.0 | – |"));
        let lines: Vec<&str> = r.csv.lines().collect();
        assert_eq!(lines[0], "task,class,decoder,sampler,shots,metric,dimension,mean,std,n_cells");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "identification,statement,,random,5,exact_match,,0.5,0.125,48");
    }
}
