//! Result persistence and reporting: the append-only results.csv store, the
//! dataset x size score grid with significance stars, and curves.csv.

use super::{build_curves, mann_whitney_u, select_top_k, CurvePoint, ScoredRun};
use crate::data::KLabel;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io;
use std::path::Path;

/// Flat per-run row of results.csv.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub dataset: String,
    pub k: String,
    pub mode: String,
    pub embedding: String,
    pub layout: String,
    pub input_dropout: f64,
    pub recurrent_dropout: f64,
    pub config_seed: u64,
    pub plan_seed: u64,
    pub status: String,
    pub dev_macro_f1: Option<f64>,
    pub test_macro_f1: Option<f64>,
    pub epochs_trained: usize,
    pub best_epoch: usize,
    pub wall_clock_secs: f64,
    pub checkpoint: String,
}

impl ResultRow {
    pub fn completed(&self) -> bool {
        self.status == "completed" && self.dev_macro_f1.is_some() && self.test_macro_f1.is_some()
    }
}

impl From<&crate::trainer::RunRecord> for ResultRow {
    fn from(r: &crate::trainer::RunRecord) -> ResultRow {
        ResultRow {
            run_id: r.run_id.clone(),
            dataset: r.dataset.clone(),
            k: r.k.clone(),
            mode: r.plan.mode.to_string(),
            embedding: r.config.embedding_id.clone(),
            layout: layout_string(&r.config.layer_sizes),
            input_dropout: r.config.input_dropout,
            recurrent_dropout: r.config.recurrent_dropout,
            config_seed: r.config.seed,
            plan_seed: r.plan.seed,
            status: match r.status {
                crate::trainer::RunStatus::Completed => "completed".to_string(),
                crate::trainer::RunStatus::Failed => {
                    format!("failed: {}", r.failure.as_deref().unwrap_or("unknown"))
                }
            },
            dev_macro_f1: r.dev_score,
            test_macro_f1: r.test_score,
            epochs_trained: r.epochs_trained,
            best_epoch: r.best_epoch,
            wall_clock_secs: r.wall_clock_secs,
            checkpoint: r.checkpoint_path.clone().unwrap_or_default(),
        }
    }
}

pub fn layout_string(layer_sizes: &[usize]) -> String {
    layer_sizes
        .iter()
        .map(|h| h.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

/// Appends rows, writing the header only when the file is new. Existing rows
/// are never rewritten.
pub fn append_results(path: &Path, rows: &[ResultRow]) -> io::Result<()> {
    let exists = path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(!exists)
        .from_writer(file);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()
}

pub fn read_results(path: &Path) -> io::Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in reader.deserialize::<ResultRow>() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Run ids already present; used to resume an interrupted search.
pub fn completed_run_ids(path: &Path) -> io::Result<HashSet<String>> {
    if !path.exists() {
        return Ok(HashSet::new());
    }
    Ok(read_results(path)?.into_iter().map(|r| r.run_id).collect())
}

fn scored(rows: &[&ResultRow]) -> Vec<ScoredRun> {
    rows.iter()
        .filter(|r| r.completed())
        .map(|r| ScoredRun {
            run_id: r.run_id.clone(),
            dev: r.dev_macro_f1.unwrap(),
            test: r.test_macro_f1.unwrap(),
        })
        .collect()
}

pub struct ReportOutput {
    pub report: String,
    pub curves: Vec<CurvePoint>,
}

const K_ORDER: [KLabel; 4] = [KLabel::K21, KLabel::K12, KLabel::K6, KLabel::K1];
const MODES: [&str; 3] = ["stl", "mtl", "union"];

fn mode_label(mode: &str) -> &'static str {
    match mode {
        "stl" => "STL",
        "mtl" => "MTL",
        _ => "BL",
    }
}

/// Builds the score grid (mean test macro-F1 of the `top_k` best-dev runs per
/// cell, in percent) with Mann-Whitney significance stars on MTL vs STL, and
/// the normalized delta curves for datasets with full coverage.
pub fn build_report(rows: &[ResultRow], top_k: usize) -> ReportOutput {
    let datasets: BTreeSet<String> = rows.iter().map(|r| r.dataset.clone()).collect();
    let cell_rows = |dataset: &str, k: KLabel, mode: &str| -> Vec<&ResultRow> {
        rows.iter()
            .filter(|r| r.dataset == dataset && r.k == k.to_string() && r.mode == mode)
            .collect()
    };

    let mut report = String::new();
    report.push_str(&format!(
        "Macro-F1 (percent), mean over the {top_k} best-dev configurations per cell.\n"
    ));
    report.push_str("Stars on MTL: ** p < 0.01, * p < 0.05 vs STL (Mann-Whitney U).\n\n");
    report.push_str(&format!(
        "{:<12}{:<6}{:>10}{:>10}{:>10}{:>10}\n",
        "dataset", "mode", "21K", "12K", "6K", "1K"
    ));

    let mut curves = Vec::new();
    for dataset in &datasets {
        let mut means: BTreeMap<(KLabel, &str), f64> = BTreeMap::new();
        let mut selections: BTreeMap<(KLabel, &str), Vec<ScoredRun>> = BTreeMap::new();
        for &k in &K_ORDER {
            for mode in MODES {
                let runs = scored(&cell_rows(dataset, k, mode));
                if let Ok(top) = select_top_k(&runs, top_k) {
                    means.insert((k, mode), top.mean_test);
                    selections.insert((k, mode), top.selected);
                }
            }
        }

        for mode in MODES {
            report.push_str(&format!("{:<12}{:<6}", dataset, mode_label(mode)));
            for &k in &K_ORDER {
                match means.get(&(k, mode)) {
                    None => report.push_str(&format!("{:>10}", "--")),
                    Some(mean) => {
                        let mut cell = format!("{:.2}", mean * 100.0);
                        if mode == "mtl" {
                            if let (Some(m), Some(s)) =
                                (selections.get(&(k, "mtl")), selections.get(&(k, "stl")))
                            {
                                let mtl_tests: Vec<f64> = m.iter().map(|r| r.test).collect();
                                let stl_tests: Vec<f64> = s.iter().map(|r| r.test).collect();
                                let p = mann_whitney_u(&mtl_tests, &stl_tests).p_two_sided;
                                if p < 0.01 {
                                    cell.push_str("**");
                                } else if p < 0.05 {
                                    cell.push('*');
                                }
                            }
                        }
                        report.push_str(&format!("{cell:>10}"));
                    }
                }
            }
            report.push('\n');
        }
        report.push('\n');

        let stl: BTreeMap<KLabel, f64> = KLabel::ALL
            .iter()
            .filter_map(|&k| means.get(&(k, "stl")).map(|&v| (k, v)))
            .collect();
        let mtl: BTreeMap<KLabel, f64> = KLabel::ALL
            .iter()
            .filter_map(|&k| means.get(&(k, "mtl")).map(|&v| (k, v)))
            .collect();
        if let Ok(points) = build_curves(dataset, &stl, &mtl) {
            curves.extend(points);
        }
    }

    ReportOutput { report, curves }
}

pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("dataset,k,stl_norm,mtl_norm,delta\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            p.dataset, p.k, p.stl_norm, p.mtl_norm, p.delta
        ));
    }
    out
}
