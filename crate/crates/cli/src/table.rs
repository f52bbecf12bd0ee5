//! Aggregates completed runs into a results table, one row per
//! (scenario, label) averaged over seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dsn_core::Result;

use crate::runner::{RunResult, RESULT_FILE};

/// Mean and range of one metric over seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Spread> {
        if values.is_empty() {
            return None;
        }
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        Some(Spread {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min,
            max,
            count: values.len(),
        })
    }

    /// A single value verbatim; otherwise `mean ± half-range [min, max]`.
    pub fn render(&self, digits: usize) -> String {
        if self.count == 1 {
            return self.mean.to_string();
        }
        let half = (self.max - self.min) / 2.0;
        format!(
            "{:.d$} ± {:.d$} [{:.d$}, {:.d$}]",
            self.mean,
            half,
            self.min,
            self.max,
            d = digits
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub scenario: String,
    pub label: String,
    pub seeds: Vec<u64>,
    pub accuracy: Spread,
    pub angle: Option<Spread>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultsTable {
    pub runs: Vec<RunResult>,
}

/// Orders labels the way comparison tables read: lower bound first, upper
/// bound last.
fn label_rank(label: &str) -> usize {
    const ORDER: [&str; 6] = ["source_only", "mmd_only", "dann_only", "correg_only", "dsn", "target_only"];
    ORDER
        .iter()
        .position(|p| label.starts_with(p))
        .unwrap_or(ORDER.len())
}

impl ResultsTable {
    /// Reads every `*/result.csv` directly under `dir`.
    pub fn collect(dir: &Path) -> Result<Self> {
        let mut runs = Vec::new();
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path().join(RESULT_FILE);
            if path.is_file() {
                runs.push(RunResult::from_csv(&fs::read_to_string(&path)?)?);
            }
        }
        Ok(ResultsTable { runs })
    }

    pub fn rows(&self) -> Vec<TableRow> {
        let mut groups: BTreeMap<(String, usize, String), Vec<&RunResult>> = BTreeMap::new();
        for r in &self.runs {
            let key = (r.scenario.clone(), label_rank(&r.label), r.label.clone());
            groups.entry(key).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|((scenario, _, label), mut runs)| {
                runs.sort_by_key(|r| r.seed);
                let acc: Vec<f64> = runs.iter().map(|r| r.target_accuracy).collect();
                let angles: Vec<f64> = runs.iter().filter_map(|r| r.angle_error).collect();
                TableRow {
                    scenario,
                    label,
                    seeds: runs.iter().map(|r| r.seed).collect(),
                    accuracy: Spread::of(&acc).expect("groups are non-empty"),
                    angle: Spread::of(&angles),
                }
            })
            .collect()
    }

    pub fn render_text(&self) -> String {
        let rows = self.rows();
        let cells: Vec<[String; 5]> = rows
            .iter()
            .map(|r| {
                [
                    r.scenario.clone(),
                    r.label.clone(),
                    r.seeds.len().to_string(),
                    r.accuracy.render(4),
                    r.angle.map(|a| a.render(2)).unwrap_or_default(),
                ]
            })
            .collect();
        let header = ["scenario", "method", "seeds", "target accuracy", "mean angle error (deg)"];
        let mut widths = header.map(|h| h.chars().count());
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cols: &[String]| {
            let padded: Vec<String> = cols
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            padded.join("  ").trim_end().to_string()
        };
        let mut out = line(&header.map(String::from));
        out.push('\n');
        for row in &cells {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out =
            String::from("scenario,method,seeds,tgt_acc_mean,tgt_acc_min,tgt_acc_max,angle_mean,angle_min,angle_max\n");
        for r in self.rows() {
            let a = r.accuracy;
            let angle = r
                .angle
                .map(|s| format!("{},{},{}", s.mean, s.min, s.max))
                .unwrap_or_else(|| ",,".into());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{angle}",
                r.scenario,
                r.label,
                r.seeds.len(),
                a.mean,
                a.min,
                a.max
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(label: &str, seed: u64, acc: f64, angle: Option<f64>) -> RunResult {
        RunResult {
            scenario: if angle.is_some() { "pose_glyph" } else { "glyph16" }.into(),
            label: label.into(),
            seed,
            steps: 10,
            source_accuracy: 1.0,
            target_accuracy: acc,
            angle_error: angle,
        }
    }

    #[test]
    fn single_run_is_reported_verbatim() {
        let t = ResultsTable { runs: vec![run("source_only", 0, 0.6875, None)] };
        let rows = t.rows();
        assert_eq!(rows[0].accuracy.render(4), "0.6875");
        assert!(t.render_text().contains("0.6875"));
    }

    #[test]
    fn seeds_are_averaged_with_their_range() {
        let t = ResultsTable {
            runs: vec![run("dsn+dann", 0, 0.5, None), run("dsn+dann", 1, 0.7, None), run("dsn+dann", 2, 0.6, None)],
        };
        let a = t.rows()[0].accuracy;
        assert!((a.mean - 0.6).abs() < 1e-12);
        assert_eq!((a.min, a.max, a.count), (0.5, 0.7, 3));
        assert_eq!(a.render(2), "0.60 ± 0.10 [0.50, 0.70]");
    }

    #[test]
    fn angle_column_only_for_pose_rows() {
        let t = ResultsTable {
            runs: vec![run("source_only", 0, 0.5, None), run("source_only", 0, 0.4, Some(31.5))],
        };
        let text = t.render_text();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].starts_with("glyph16") && lines[1].ends_with("0.5"));
        assert!(lines[2].starts_with("pose_glyph") && lines[2].ends_with("31.5"));
        let csv = t.render_csv();
        assert!(csv.lines().nth(1).unwrap().ends_with(",,,"));
    }

    #[test]
    fn rows_follow_table_order() {
        let t = ResultsTable {
            runs: vec![
                run("target_only", 0, 0.9, None),
                run("dsn+dann", 0, 0.8, None),
                run("source_only", 0, 0.6, None),
            ],
        };
        let labels: Vec<String> = t.rows().into_iter().map(|r| r.label).collect();
        assert_eq!(labels, ["source_only", "dsn+dann", "target_only"]);
    }
}
