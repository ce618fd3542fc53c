use std::fmt::Write;

use super::experiments::{ExperimentReport, GuidanceReport, ModelRow};
use crate::stage::Stage;

/// Published real-robot figures: success %, time s, E_upper, E_root.
const PUBLISHED_COMPARISON: [(&str, f64, f64, f64, f64); 3] = [
    ("ACT", 20.0, 27.5, 0.44, 0.05),
    ("ACT-history-5", 10.0, 22.2, 0.52, 0.06),
    ("StageACT", 55.0, 20.7, 0.34, 0.04),
];

const PUBLISHED_FUNNEL: [(&str, [(usize, usize); 5]); 3] = [
    ("ACT", [(20, 20), (7, 20), (6, 7), (4, 6), (4, 4)]),
    ("ACT-history-5", [(8, 10), (5, 8), (1, 5), (1, 1), (1, 1)]),
    ("StageACT", [(19, 20), (17, 19), (12, 17), (11, 12), (11, 11)]),
];

const PUBLISHED_ABLATION: [(&str, f64); 3] = [
    (super::ABLATION_ORACLE, 60.0),
    (super::ABLATION_CONSTANT, 0.0),
    (super::ABLATION_RANDOM, 0.0),
];

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

fn published<T: Copy>(table: &[(&str, T)], label: &str) -> Option<T> {
    table.iter().find(|(l, _)| *l == label).map(|(_, v)| *v)
}

/// Success/time/tracking table, desk-scale values next to published ones.
pub fn comparison_table(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>7} {:>8} {:>8} {:>8}  | published: {:>4} {:>6} {:>5} {:>5}",
        "Model", "SR(%)", "Time(s)", "E_upper", "E_root", "SR", "Time", "Eu", "Er"
    );
    for r in &report.rows {
        let pubrow = PUBLISHED_COMPARISON.iter().find(|p| p.0 == r.label);
        let tail = pubrow.map_or_else(String::new, |p| format!("{:>4.0} {:>6.1} {:>5.2} {:>5.2}", p.1, p.2, p.3, p.4));
        let _ = writeln!(
            s,
            "{:<16} {:>7.1} {:>8} {:>8} {:>8}  |            {}",
            r.label,
            r.success_rate,
            opt(r.mean_time_s, 2),
            opt(r.e_upper, 4),
            opt(r.e_root, 4),
            tail
        );
    }
    s
}

fn funnel_cells(r: &ModelRow) -> String {
    r.funnel
        .iter()
        .map(|f| format!("{:>9}", format!("{}/{}", f.successes, f.attempts)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Per-stage pass fractions.
pub fn funnel_text(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let head: Vec<String> = Stage::ALL.iter().map(|st| format!("{:>9}", st.to_string())).collect();
    let _ = writeln!(s, "{:<16} {}", "Model", head.join(" "));
    for r in &report.rows {
        let _ = writeln!(s, "{:<16} {}", r.label, funnel_cells(r));
        if let Some(p) = published(&PUBLISHED_FUNNEL, &r.label) {
            let cells: Vec<String> = p.iter().map(|(a, b)| format!("{:>9}", format!("{a}/{b}"))).collect();
            let _ = writeln!(s, "{:<16} {}", "  published", cells.join(" "));
        }
    }
    s
}

/// Stage-input ablation rows.
pub fn ablation_table(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<20} {:>10} {:>10}", "Stage input", "SR(%)", "published");
    for r in &report.rows {
        let p = published(&PUBLISHED_ABLATION, &r.label).map_or("-".to_string(), |v| format!("{v:.0}"));
        let _ = writeln!(s, "{:<20} {:>10.1} {:>10}", r.label, r.success_rate, p);
    }
    s
}

pub fn guidance_table(report: &GuidanceReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {}", report.scenario.name());
    let _ = writeln!(s, "{:<20} {:>6} {:>10} {:>8} {:>10}", "Condition", "n", "successes", "SR(%)", "triggered");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{:<20} {:>6} {:>10} {:>8.1} {:>10}",
            r.label, r.n, r.successes, r.success_rate, r.triggered
        );
    }
    s
}
