use std::fs;
use std::path::Path;

use super::run::RunReport;
use super::Paradigm;
use crate::error::Result;
use crate::metrics::Metrics;
use crate::model::Modality;

/// A fraction as a percentage with two decimals, rounding halves up.
///
/// The scaled value is nudged by a relative 1e-9 before flooring so that
/// decimal ties such as 0.91515 round up despite binary representation.
pub fn format_percent(x: f64) -> String {
    let scaled = x * 10_000.0;
    let rounded = (scaled + 0.5 + scaled.abs().max(1.0) * 1e-9).floor();
    format!("{:.2}", rounded / 100.0)
}

fn cell(m: &Metrics) -> String {
    format!("{} / {}", format_percent(m.accuracy), format_percent(m.f1))
}

fn render(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let width: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells.iter().zip(&width).map(|(s, w)| format!("{s:<w$}")).collect();
        format!("| {} |\n", parts.join(" | "))
    };
    let mut out = line(header);
    let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTables {
    /// Modality by paradigm, with and without augmentation.
    pub paradigms: String,
    /// Aggregator by deployment strategy, federated runs only.
    pub strategies: String,
    pub csv: String,
}

impl ReportTables {
    pub fn text(&self) -> String {
        let mut out = String::from("Accuracy / F1 (%)\n\n");
        out.push_str(&self.paradigms);
        if !self.strategies.is_empty() {
            out.push('\n');
            out.push_str(&self.strategies);
        }
        out
    }
}

/// Format reports as the two comparison tables plus CSV. When several reports
/// share a cell, the first one wins.
pub fn emit_report(reports: &[RunReport]) -> ReportTables {
    let mut columns: Vec<(Paradigm, bool)> = Vec::new();
    for p in Paradigm::ALL {
        for aug in [false, true] {
            if reports.iter().any(|r| r.paradigm == p && r.augment == aug) {
                columns.push((p, aug));
            }
        }
    }
    let modalities: Vec<Modality> = Modality::ALL.into_iter().filter(|m| reports.iter().any(|r| r.modality == *m)).collect();
    let mut header = vec!["Modality".to_string()];
    header.extend(columns.iter().map(|(p, aug)| format!("{}{}", p.name(), if *aug { "+Aug" } else { "" })));
    let rows: Vec<Vec<String>> = modalities
        .iter()
        .map(|m| {
            let mut row = vec![m.name().to_string()];
            for (p, aug) in &columns {
                let hit = reports.iter().find(|r| r.modality == *m && r.paradigm == *p && r.augment == *aug);
                row.push(hit.map_or("-".to_string(), |r| cell(&r.mean)));
            }
            row
        })
        .collect();
    let paradigms = if rows.is_empty() { String::new() } else { render(&header, &rows) };

    let fl: Vec<&RunReport> = reports.iter().filter(|r| r.aggregator.is_some()).collect();
    let mut aggs: Vec<&str> = Vec::new();
    let mut strats: Vec<&str> = Vec::new();
    for r in &fl {
        let a = r.aggregator.as_deref().unwrap_or_default();
        let s = r.strategy.as_deref().unwrap_or_default();
        if !aggs.contains(&a) {
            aggs.push(a);
        }
        if !strats.contains(&s) {
            strats.push(s);
        }
    }
    let order = ["sFL", "pFL", "aFL"];
    strats.sort_by_key(|s| order.iter().position(|o| o == s).unwrap_or(order.len()));
    let strategies = if fl.is_empty() {
        String::new()
    } else {
        let mut header = vec!["Aggregator".to_string()];
        header.extend(strats.iter().map(|s| s.to_string()));
        let rows: Vec<Vec<String>> = aggs
            .iter()
            .map(|a| {
                let mut row = vec![a.to_string()];
                for s in &strats {
                    let hit = fl.iter().find(|r| r.aggregator.as_deref() == Some(a) && r.strategy.as_deref() == Some(s));
                    row.push(hit.map_or("-".to_string(), |r| cell(&r.mean)));
                }
                row
            })
            .collect();
        render(&header, &rows)
    };

    let mut csv = String::from("paradigm,modality,augment,aggregator,strategy,accuracy,f1,ensemble_accuracy,ensemble_f1,config_hash\n");
    for r in reports {
        let (ea, ef) = r.mean_ensemble.map_or((String::new(), String::new()), |e| (format_percent(e.accuracy), format_percent(e.f1)));
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.paradigm.name(),
            r.modality.name(),
            r.augment,
            r.aggregator.as_deref().unwrap_or(""),
            r.strategy.as_deref().unwrap_or(""),
            format_percent(r.mean.accuracy),
            format_percent(r.mean.f1),
            ea,
            ef,
            r.config_hash
        ));
    }
    ReportTables { paradigms, strategies, csv }
}

/// Write `report.txt`, `report.csv`, and `report.json` under `dir`.
pub fn write_reports(dir: &Path, reports: &[RunReport]) -> Result<ReportTables> {
    fs::create_dir_all(dir)?;
    let tables = emit_report(reports);
    fs::write(dir.join("report.txt"), tables.text())?;
    fs::write(dir.join("report.csv"), &tables.csv)?;
    fs::write(dir.join("report.json"), serde_json::to_vec_pretty(reports)?)?;
    Ok(tables)
}

/// Read a report JSON file holding one report or a list of them.
pub fn read_reports(path: &Path) -> Result<Vec<RunReport>> {
    let bytes = fs::read(path)?;
    match serde_json::from_slice::<Vec<RunReport>>(&bytes) {
        Ok(list) => Ok(list),
        Err(_) => Ok(vec![serde_json::from_slice::<RunReport>(&bytes)?]),
    }
}
