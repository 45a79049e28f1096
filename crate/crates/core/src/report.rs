//! Result tables: one row per posterior, measured against a reference
//! posterior (entropic transport distance) or a reference partition
//! (expected ground-metric distance). Emitted as CSV plus an aligned
//! plain-text rendering that collapses large shard blocks into a range row.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ot::Metric;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReportValue {
    /// Entropic transport to the reference posterior: the bare transport
    /// cost and the regularized objective.
    Wasserstein { transport_cost: f64, objective: f64 },
    /// Expected ground-metric distance to the reference partition.
    Expected(f64),
}

#[derive(Clone, Debug)]
pub struct ReportRow {
    pub label: String,
    /// Shard index when this row is a shard posterior; range-collapsing in
    /// the text rendering applies only to such rows.
    pub shard: Option<usize>,
    pub value: ReportValue,
}

/// How many shard rows the text rendering keeps before collapsing the
/// non-reference ones into a single `[min, max]` row.
const COLLAPSE_ABOVE: usize = 4;

#[derive(Clone, Debug)]
pub struct Report {
    pub reference: String,
    pub metric: Metric,
    /// Regularization used for transport distances; absent in expected mode.
    pub epsilon: Option<f64>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn new(
        reference: String,
        metric: Metric,
        epsilon: Option<f64>,
        rows: Vec<ReportRow>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("report has no rows".into()));
        }
        let expected_mode = matches!(rows[0].value, ReportValue::Expected(_));
        for row in &rows {
            let (main, mixed) = match row.value {
                ReportValue::Wasserstein { transport_cost, .. } => (transport_cost, expected_mode),
                ReportValue::Expected(v) => (v, !expected_mode),
            };
            if mixed {
                return Err(Error::InvalidArgument(
                    "report rows mix distance modes".into(),
                ));
            }
            if !main.is_finite() || main < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "row `{}` has distance {main}",
                    row.label
                )));
            }
        }
        Ok(Report {
            reference,
            metric,
            epsilon,
            rows,
        })
    }

    fn value_columns(&self) -> Vec<&'static str> {
        match self.rows[0].value {
            ReportValue::Wasserstein { .. } => vec!["transport_cost", "objective"],
            ReportValue::Expected(_) => match self.metric {
                Metric::Voi => vec!["expected_voi"],
                Metric::Binder => vec!["expected_binder"],
            },
        }
    }

    fn row_values(row: &ReportRow) -> Vec<f64> {
        match row.value {
            ReportValue::Wasserstein {
                transport_cost,
                objective,
            } => vec![transport_cost, objective],
            ReportValue::Expected(v) => vec![v],
        }
    }

    /// Machine-readable table: every row, no collapsing, floats written
    /// with the shortest round-trip representation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for column in self.value_columns() {
            out.push(',');
            out.push_str(column);
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.label);
            for value in Self::row_values(row) {
                out.push(',');
                out.push_str(&value.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Human-readable table. Shard rows other than the reference collapse
    /// into one `[min, max]` row when there are more than four of them.
    pub fn render_text(&self) -> String {
        let columns = self.value_columns();
        let mut lines: Vec<(String, Vec<String>)> = Vec::new();

        let collapsible: Vec<&ReportRow> = self
            .rows
            .iter()
            .filter(|r| r.shard.is_some() && r.label != self.reference)
            .collect();
        let collapse = collapsible.len() > COLLAPSE_ABOVE;
        let mut collapsed_emitted = false;

        for row in &self.rows {
            let in_block = collapse && row.shard.is_some() && row.label != self.reference;
            if in_block {
                if collapsed_emitted {
                    continue;
                }
                collapsed_emitted = true;
                let lo = collapsible.iter().map(|r| r.shard.unwrap()).min().unwrap();
                let hi = collapsible.iter().map(|r| r.shard.unwrap()).max().unwrap();
                let label = format!("shard_{lo}..shard_{hi}");
                let cells = (0..columns.len())
                    .map(|c| {
                        let values: Vec<f64> = collapsible
                            .iter()
                            .map(|r| Self::row_values(r)[c])
                            .collect();
                        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
                        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        format!("[{min:.6}, {max:.6}]")
                    })
                    .collect();
                lines.push((label, cells));
            } else {
                let cells = Self::row_values(row)
                    .into_iter()
                    .map(|v| format!("{v:.6}"))
                    .collect();
                lines.push((row.label.clone(), cells));
            }
        }

        let mut widths: Vec<usize> = columns.iter().map(|c| c.len()).collect();
        let mut label_width = "posterior".len();
        for (label, cells) in &lines {
            label_width = label_width.max(label.len());
            for (i, cell) in cells.iter().enumerate() {
                widths[i] = widths[i].max(cell.len());
            }
        }

        let mut out = match self.epsilon {
            Some(e) => format!(
                "reference: {} (metric={}, epsilon={})\n\n",
                self.reference, self.metric, e
            ),
            None => format!("reference: {} (metric={})\n\n", self.reference, self.metric),
        };
        out.push_str(&format!("{:<label_width$}", "posterior"));
        for (column, width) in columns.iter().zip(&widths) {
            out.push_str(&format!("  {column:>width$}"));
        }
        out.push('\n');
        for (label, cells) in &lines {
            out.push_str(&format!("{label:<label_width$}"));
            for (cell, width) in cells.iter().zip(&widths) {
                out.push_str(&format!("  {cell:>width$}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, csv_path: &Path, txt_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        std::fs::write(txt_path, self.render_text()).map_err(|e| Error::io(txt_path, e))
    }

    /// The first row value for `label`, for programmatic consumers.
    pub fn distance(&self, label: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.label == label).map(|r| match r.value {
            ReportValue::Wasserstein { transport_cost, .. } => transport_cost,
            ReportValue::Expected(v) => v,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wrow(label: &str, shard: Option<usize>, cost: f64) -> ReportRow {
        ReportRow {
            label: label.into(),
            shard,
            value: ReportValue::Wasserstein {
                transport_cost: cost,
                objective: cost - 0.01,
            },
        }
    }

    #[test]
    fn csv_lists_every_row() {
        let report = Report::new(
            "full".into(),
            Metric::Voi,
            Some(0.05),
            vec![wrow("shard_0", Some(0), 0.5), wrow("barycenter_uniform", None, 0.25)],
        )
        .unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("label,transport_cost,objective\n"));
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("barycenter_uniform,0.25,0.24"));
        assert_eq!(report.distance("shard_0"), Some(0.5));
    }

    #[test]
    fn text_collapses_large_shard_blocks() {
        let mut rows = vec![wrow("shard_0", Some(0), 0.0)];
        for k in 1..10 {
            rows.push(wrow(&format!("shard_{k}"), Some(k), 0.8 + k as f64 * 0.1));
        }
        rows.push(wrow("barycenter_structured", None, 0.003));
        let report = Report::new("shard_0".into(), Metric::Voi, Some(0.05), rows).unwrap();
        let text = report.render_text();
        assert!(text.contains("shard_1..shard_9"), "{text}");
        assert!(text.contains("[0.900000, 1.700000]"), "{text}");
        assert!(!text.contains("shard_5 "), "{text}");
        assert!(text.lines().any(|l| l.starts_with("shard_0 ")), "{text}");
    }

    #[test]
    fn small_runs_stay_expanded() {
        let rows = vec![
            wrow("shard_0", Some(0), 0.3),
            wrow("shard_1", Some(1), 0.36),
            wrow("mixture_uniform", None, 0.31),
        ];
        let report = Report::new("full".into(), Metric::Voi, Some(0.05), rows).unwrap();
        let text = report.render_text();
        assert!(text.contains("shard_0"));
        assert!(text.contains("shard_1"));
        assert!(!text.contains(".."));
    }

    #[test]
    fn expected_mode_and_validation() {
        let rows = vec![ReportRow {
            label: "full".into(),
            shard: None,
            value: ReportValue::Expected(2.3),
        }];
        let report = Report::new("truth".into(), Metric::Voi, None, rows).unwrap();
        assert!(report.to_csv().starts_with("label,expected_voi\n"));

        let mixed = Report::new(
            "x".into(),
            Metric::Voi,
            None,
            vec![
                ReportRow {
                    label: "a".into(),
                    shard: None,
                    value: ReportValue::Expected(1.0),
                },
                wrow("b", None, 0.1),
            ],
        );
        assert!(mixed.is_err());

        let negative = Report::new(
            "x".into(),
            Metric::Voi,
            None,
            vec![ReportRow {
                label: "a".into(),
                shard: None,
                value: ReportValue::Expected(-0.5),
            }],
        );
        assert!(negative.is_err());
    }
}
